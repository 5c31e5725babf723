//! Slot-filling error rates over tag-delimited transcripts.
//!
//! Slots are marked with single-character openers and closers from a tag
//! table. Label sequences are scored with a Levenshtein alignment, the way
//! word error rate scores words.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SenseError};
use crate::textio::read_text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagTable {
    openers: HashMap<char, (char, String)>,
}

impl TagTable {
    /// Entries are `(opener, closer, label)`. Several openers may share a
    /// closer; an opener may not double as any closer.
    pub fn new(entries: impl IntoIterator<Item = (char, char, String)>) -> Result<Self> {
        let mut openers = HashMap::new();
        for (open, close, label) in entries {
            if label.is_empty() {
                return Err(SenseError::Config(format!("tag '{open}' has an empty label")));
            }
            if open == close {
                return Err(SenseError::Config(format!("tag '{open}' uses the same opener and closer")));
            }
            if openers.insert(open, (close, label)).is_some() {
                return Err(SenseError::Config(format!("opener '{open}' listed twice")));
            }
        }
        if openers.is_empty() {
            return Err(SenseError::Config("tag table is empty".into()));
        }
        if let Some((&o, _)) = openers.iter().find(|(o, _)| openers.values().any(|(c, _)| c == *o)) {
            return Err(SenseError::Config(format!("'{o}' is both an opener and a closer")));
        }
        Ok(Self { openers })
    }

    /// Lines `opener<TAB>closer<TAB>label`; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let single = |s: &str| -> Result<char> {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(SenseError::parse(
                        format!("tag table line {}", n + 1),
                        format!("expected a single character, got '{s}'"),
                    )),
                }
            };
            if fields.len() != 3 {
                return Err(SenseError::parse(
                    format!("tag table line {}", n + 1),
                    "expected opener<TAB>closer<TAB>label",
                ));
            }
            entries.push((single(fields[0])?, single(fields[1])?, fields[2].trim().to_string()));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    fn is_closer(&self, c: char) -> bool {
        self.openers.values().any(|(close, _)| *close == c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPair {
    pub label: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaggedTranscript {
    /// Slots in surface order.
    pub pairs: Vec<SlotPair>,
    /// Text outside every slot, tag characters removed.
    pub untagged: String,
}

impl TaggedTranscript {
    pub fn labels(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.label.clone()).collect()
    }
}

/// Values are whitespace-trimmed. Errors carry the character offset of the
/// offending tag.
pub fn parse_tagged(text: &str, table: &TagTable) -> Result<TaggedTranscript> {
    let mut out = TaggedTranscript::default();
    // (offset, expected closer, label, value so far)
    let mut open: Option<(usize, char, &str, String)> = None;
    for (offset, c) in text.chars().enumerate() {
        if let Some((close, label)) = table.openers.get(&c) {
            if let Some((at, ..)) = &open {
                return Err(SenseError::parse(
                    format!("character {offset}"),
                    format!("nested tag '{c}' inside slot opened at character {at}"),
                ));
            }
            open = Some((offset, *close, label, String::new()));
        } else if table.is_closer(c) {
            match open.take() {
                Some((_, close, label, value)) if close == c => out.pairs.push(SlotPair {
                    label: label.to_string(),
                    value: value.trim().to_string(),
                }),
                Some((at, close, ..)) => {
                    return Err(SenseError::parse(
                        format!("character {offset}"),
                        format!("closer '{c}' does not match slot opened at character {at} (expects '{close}')"),
                    ))
                }
                None => {
                    return Err(SenseError::parse(
                        format!("character {offset}"),
                        format!("closer '{c}' without an open slot"),
                    ))
                }
            }
        } else if let Some((.., value)) = open.as_mut() {
            value.push(c);
        } else {
            out.untagged.push(c);
        }
    }
    if let Some((at, close, ..)) = open {
        return Err(SenseError::parse(
            format!("character {at}"),
            format!("slot never closed (expects '{close}')"),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_count: usize,
}

impl ErrorBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `100 * (S + I + D) / N`; can exceed 100.
    pub fn rate(&self) -> f64 {
        100.0 * self.errors() as f64 / self.reference_count as f64
    }

    fn add(&mut self, other: ErrorBreakdown) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.reference_count += other.reference_count;
    }
}

/// Unit-cost Levenshtein alignment of one pair. On ties the backtrace takes a
/// match first, then deletion, insertion, substitution.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }

    let mut out = ErrorBreakdown { reference_count: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i][j];
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[i - 1][j - 1] == here {
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i - 1][j] + 1 == here {
            out.deletions += 1;
            i -= 1;
        } else if j > 0 && d[i][j - 1] + 1 == here {
            out.insertions += 1;
            j -= 1;
        } else {
            out.substitutions += 1;
            i -= 1;
            j -= 1;
        }
    }
    out
}

fn corpus_rate<T: PartialEq>(refs: &[Vec<T>], hyps: &[Vec<T>]) -> Result<ErrorBreakdown> {
    if refs.len() != hyps.len() {
        return Err(SenseError::Input(format!(
            "{} reference transcripts but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = ErrorBreakdown::default();
    for (r, h) in refs.iter().zip(hyps) {
        total.add(align(r, h));
    }
    if total.reference_count == 0 {
        return Err(SenseError::Input("reference corpus contains no labels".into()));
    }
    Ok(total)
}

/// Label-only error rate (concept or entity error rate, depending on the
/// tag table).
pub fn label_error_rate(refs: &[Vec<String>], hyps: &[Vec<String>]) -> Result<ErrorBreakdown> {
    corpus_rate(refs, hyps)
}

/// Error rate over exact `(label, value)` pairs.
pub fn concept_value_error_rate(refs: &[Vec<SlotPair>], hyps: &[Vec<SlotPair>]) -> Result<ErrorBreakdown> {
    corpus_rate(refs, hyps)
}

/// Parse one transcript per line.
pub fn parse_transcripts(text: &str, table: &TagTable, what: &str) -> Result<Vec<TaggedTranscript>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            parse_tagged(line.trim_end_matches('\r'), table).map_err(|e| match e {
                SenseError::Parse { context, message } => {
                    SenseError::parse(format!("{what} line {}, {context}", n + 1), message)
                }
                other => other,
            })
        })
        .collect()
}

pub const SCORE_HEADER: &str = "metric,S,I,D,N,rate";

pub fn scores_to_csv(rows: &[(&str, ErrorBreakdown)]) -> String {
    let mut out = format!("{SCORE_HEADER}\n");
    for (name, b) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{:.4}",
            b.substitutions,
            b.insertions,
            b.deletions,
            b.reference_count,
            b.rate()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> TagTable {
        TagTable::parse("<\t>\tcity\n[\t>\tdate\n{\t}\tname\n").unwrap()
    }

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_examples() {
        let t = table();
        let p = parse_tagged("va à <Paris>", &t).unwrap();
        assert_eq!(p.pairs, vec![SlotPair { label: "city".into(), value: "Paris".into() }]);
        assert_eq!(p.untagged, "va à ");

        assert!(parse_tagged("nothing here", &t).unwrap().pairs.is_empty());

        let p = parse_tagged("[ lundi > à < Lyon >", &t).unwrap();
        assert_eq!(p.labels(), labels(&["date", "city"]));
        assert_eq!(p.pairs[0].value, "lundi");
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let t = table();
        let msg = |s: &str| parse_tagged(s, &t).unwrap_err().to_string();
        assert!(msg("a <b <c> d").contains("character 5"));
        assert!(msg("a b> c").contains("character 3"));
        assert!(msg("xy <open").contains("character 3"));
        assert!(msg("{a>").contains("character 2"));
    }

    #[test]
    fn tag_table_validation() {
        assert!(TagTable::parse("").is_err());
        assert!(TagTable::parse("<\t>\tcity\n<\t)\tother\n").is_err());
        assert!(TagTable::parse("<\t>\tcity\n>\t)\tother\n").is_err());
        assert!(TagTable::parse("<>\t>\tcity\n").is_err());
        assert!(TagTable::parse("<\t>\n").is_err());
    }

    #[test]
    fn rate_examples() {
        let r = label_error_rate(&[labels(&["A", "B"])], &[labels(&["A", "B"])]).unwrap();
        assert_eq!(r.rate(), 0.0);
        let r = label_error_rate(&[labels(&["A", "B"])], &[labels(&["A", "C"])]).unwrap();
        assert_eq!((r.substitutions, r.rate()), (1, 50.0));
        let r = label_error_rate(&[labels(&["A"])], &[labels(&["A", "B"])]).unwrap();
        assert_eq!((r.insertions, r.rate()), (1, 100.0));

        let pair = |l: &str, v: &str| SlotPair { label: l.into(), value: v.into() };
        let r = concept_value_error_rate(&[vec![pair("city", "Paris")]], &[vec![pair("city", "Lyon")]]).unwrap();
        assert_eq!((r.substitutions, r.rate()), (1, 100.0));
    }

    #[test]
    fn backtrace_prefers_deletion_then_insertion() {
        // [A,B] vs [B,A]: cost 2 either as S+S or D+I; the backtrace picks D+I.
        let b = align(&["A", "B"], &["B", "A"]);
        assert_eq!((b.substitutions, b.insertions, b.deletions), (0, 1, 1));
    }

    #[test]
    fn rate_errors() {
        assert!(label_error_rate(&[labels(&["A"])], &[]).is_err());
        assert!(label_error_rate(&[vec![]], &[labels(&["A"])]).is_err());
    }

    #[test]
    fn doubled_hypothesis_exceeds_hundred() {
        let r = labels(&["A", "B", "C"]);
        let h: Vec<String> = r.iter().chain(&r).cloned().collect();
        let b = label_error_rate(&[r], &[h]).unwrap();
        assert_eq!(b.rate(), 100.0);
        let b = label_error_rate(&[labels(&["A"])], &[labels(&["A", "A", "A"])]).unwrap();
        assert!(b.rate() > 100.0);
    }

    #[test]
    fn csv_layout() {
        let b = ErrorBreakdown { substitutions: 1, insertions: 0, deletions: 2, reference_count: 4 };
        assert_eq!(scores_to_csv(&[("COER", b)]), "metric,S,I,D,N,rate\nCOER,1,0,2,4,75.0000\n");
    }
}
