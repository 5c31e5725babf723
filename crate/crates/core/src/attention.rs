//! Frame-level attention analysis: normalized-position profiles, first-k
//! attention mass and per-word attention-logit sums.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::corpus::{check_spans, AlignSpan};
use crate::error::{Result, SenseError};
use crate::model::AttentionRecord;

pub const DEFAULT_GRID: usize = 100;

/// Relative position `i / (T - 1)`; `0.0` when `T = 1`.
pub fn relpos(i: usize, len: usize) -> Result<f64> {
    if i >= len {
        return Err(SenseError::Domain(format!("frame index {i} out of range for T = {len}")));
    }
    if len == 1 {
        return Ok(0.0);
    }
    Ok(i as f64 / (len - 1) as f64)
}

/// Linearly interpolate `values` (placed at their relative positions) onto
/// `grid` evenly spaced points in `[0, 1]`.
pub fn resample_profile(values: &[f64], grid: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(SenseError::Domain("cannot resample an empty sequence".into()));
    }
    if grid < 2 {
        return Err(SenseError::Domain(format!("grid size must be at least 2, got {grid}")));
    }
    let len = values.len();
    if len == 1 {
        return Ok(vec![values[0]; grid]);
    }
    let last = len - 1;
    Ok((0..grid)
        .map(|g| {
            if g == grid - 1 {
                return values[last];
            }
            let x = g as f64 * last as f64 / (grid - 1) as f64;
            let i = (x.floor() as usize).min(last);
            if i == last {
                return values[last];
            }
            let frac = x - i as f64;
            values[i] + frac * (values[i + 1] - values[i])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueSource {
    #[default]
    Logits,
    Weights,
}

impl ValueSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueSource::Logits => "logits",
            ValueSource::Weights => "weights",
        }
    }

    fn select(self, record: &AttentionRecord) -> &[f64] {
        match self {
            ValueSource::Logits => &record.logits,
            ValueSource::Weights => &record.weights,
        }
    }
}

impl FromStr for ValueSource {
    type Err = SenseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(ValueSource::Logits),
            "weights" => Ok(ValueSource::Weights),
            _ => Err(SenseError::Config(format!("unknown source '{s}' (logits|weights)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionProfile {
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
    pub n_utterances: usize,
}

impl PositionProfile {
    pub fn grid_size(&self) -> usize {
        self.positions.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,value,n_utterances\n");
        for (p, v) in self.positions.iter().zip(&self.values) {
            let _ = writeln!(out, "{p:.6},{v:.9},{}", self.n_utterances);
        }
        out
    }

    /// Self-contained SVG line chart of the profile.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, pad) = (640.0, 360.0, 48.0);
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let px = |p: f64| pad + p * (w - 2.0 * pad);
        let py = |v: f64| h - pad - (v - lo) / span * (h - 2.0 * pad);
        let points: Vec<String> = self
            .positions
            .iter()
            .zip(&self.values)
            .map(|(&p, &v)| format!("{:.2},{:.2}", px(p), py(v)))
            .collect();
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
            y = h - pad,
            x2 = w - pad
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            w / 2.0,
            escape_xml(title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">normalized position</text>"#,
            w / 2.0,
            h - 12.0
        );
        for (v, y) in [(lo, h - pad), (hi, pad)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3}</text>"#,
                pad - 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Pointwise mean of every record's resampled values.
pub fn average_profile(
    records: &[AttentionRecord],
    source: ValueSource,
    grid: usize,
) -> Result<PositionProfile> {
    if records.is_empty() {
        return Err(SenseError::Domain("average profile of no records".into()));
    }
    let mut acc = vec![0.0; grid.max(2)];
    for r in records {
        let resampled = resample_profile(source.select(r), grid)?;
        for (a, v) in acc.iter_mut().zip(resampled) {
            *a += v;
        }
    }
    let n = records.len() as f64;
    Ok(PositionProfile {
        positions: (0..grid).map(|g| g as f64 / (grid - 1) as f64).collect(),
        values: acc.into_iter().map(|a| a / n).collect(),
        n_utterances: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstKMass {
    /// Attention weight carried by the first `min(k, T)` frames.
    pub mass_fraction: f64,
    /// `min(k, T) / T`.
    pub frame_fraction: f64,
}

pub fn first_k_mass(record: &AttentionRecord, k: usize) -> Result<FirstKMass> {
    if k == 0 {
        return Err(SenseError::Domain("k must be at least 1".into()));
    }
    if record.weights.is_empty() {
        return Err(SenseError::Domain(format!("{}: empty attention record", record.utt_id)));
    }
    let n = k.min(record.weights.len());
    Ok(FirstKMass {
        mass_fraction: record.weights[..n].iter().sum(),
        frame_fraction: n as f64 / record.weights.len() as f64,
    })
}

/// Mean of [`first_k_mass`] over records.
pub fn mean_first_k_mass(records: &[AttentionRecord], k: usize) -> Result<FirstKMass> {
    if records.is_empty() {
        return Err(SenseError::Domain("first-k mass of no records".into()));
    }
    let (mut mass, mut frames) = (0.0, 0.0);
    for r in records {
        let m = first_k_mass(r, k)?;
        mass += m.mass_fraction;
        frames += m.frame_fraction;
    }
    let n = records.len() as f64;
    Ok(FirstKMass {
        mass_fraction: mass / n,
        frame_fraction: frames / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAttentionStat {
    pub word: String,
    pub utt_id: String,
    pub logit_sum: f64,
    pub span_len: usize,
}

/// Sum of pre-softmax logits over each word's span. Frames outside every
/// span belong to no word.
pub fn word_logit_sums(record: &AttentionRecord, spans: &[AlignSpan]) -> Result<Vec<WordAttentionStat>> {
    check_spans(spans, record.logits.len())
        .map_err(|e| SenseError::Domain(format!("{}: {e}", record.utt_id)))?;
    Ok(spans
        .iter()
        .map(|s| WordAttentionStat {
            word: s.surface.clone(),
            utt_id: record.utt_id.clone(),
            logit_sum: record.logits[s.start..s.end].iter().sum(),
            span_len: s.len(),
        })
        .collect())
}

pub fn stats_to_csv(stats: &[WordAttentionStat]) -> String {
    let mut out = String::from("word,utt_id,logit_sum,span_len\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{:.9},{}", s.word, s.utt_id, s.logit_sum, s.span_len);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopWord {
    pub word: String,
    pub max_logit_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequentWord {
    pub word: String,
    pub count: usize,
    pub mean_logit_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordReports {
    /// Words by their largest single-utterance logit sum.
    pub top: Vec<TopWord>,
    /// Most frequent words with their mean logit sum.
    pub frequent: Vec<FrequentWord>,
}

impl WordReports {
    pub fn top_csv(&self) -> String {
        let mut out = String::from("rank,word,max_logit_sum\n");
        for (i, w) in self.top.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.9}", i + 1, w.word, w.max_logit_sum);
        }
        out
    }

    pub fn frequent_csv(&self) -> String {
        let mut out = String::from("rank,word,count,mean_logit_sum\n");
        for (i, w) in self.frequent.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{:.9}", i + 1, w.word, w.count, w.mean_logit_sum);
        }
        out
    }
}

/// Ties: descending value, then ascending word.
pub fn word_reports(stats: &[WordAttentionStat], top_n: usize, freq_n: usize) -> Result<WordReports> {
    if stats.is_empty() {
        return Err(SenseError::Domain("word reports need at least one statistic".into()));
    }
    // word -> (max, sum, count)
    let mut per_word: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for s in stats {
        let e = per_word
            .entry(s.word.as_str())
            .or_insert((f64::NEG_INFINITY, 0.0, 0));
        e.0 = e.0.max(s.logit_sum);
        e.1 += s.logit_sum;
        e.2 += 1;
    }

    let mut top: Vec<TopWord> = per_word
        .iter()
        .map(|(w, &(max, _, _))| TopWord { word: w.to_string(), max_logit_sum: max })
        .collect();
    top.sort_by(|a, b| b.max_logit_sum.total_cmp(&a.max_logit_sum).then_with(|| a.word.cmp(&b.word)));
    top.truncate(top_n);

    let mut frequent: Vec<FrequentWord> = per_word
        .iter()
        .map(|(w, &(_, sum, count))| FrequentWord {
            word: w.to_string(),
            count,
            mean_logit_sum: sum / count as f64,
        })
        .collect();
    frequent.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.word.cmp(&b.word)));
    frequent.truncate(freq_n);

    Ok(WordReports { top, frequent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;

    fn record(logits: Vec<f64>) -> AttentionRecord {
        AttentionRecord {
            utt_id: "u".into(),
            weights: softmax(&logits),
            logits,
        }
    }

    fn span(w: usize, start: usize, end: usize, s: &str) -> AlignSpan {
        AlignSpan { word_index: w, start, end, surface: s.into() }
    }

    #[test]
    fn relpos_examples() {
        assert_eq!(relpos(0, 10).unwrap(), 0.0);
        assert_eq!(relpos(9, 10).unwrap(), 1.0);
        assert_eq!(relpos(4, 9).unwrap(), 0.5);
        assert_eq!(relpos(0, 1).unwrap(), 0.0);
        assert!(relpos(10, 10).is_err());
    }

    #[test]
    fn resample_examples() {
        assert_eq!(resample_profile(&[2.5; 7], 5).unwrap(), vec![2.5; 5]);
        assert_eq!(resample_profile(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(resample_profile(&[0.0, 2.0, 4.0, 6.0], 2).unwrap(), vec![0.0, 6.0]);
        assert_eq!(resample_profile(&[3.0], 4).unwrap(), vec![3.0; 4]);
        assert!(resample_profile(&[], 4).is_err());
        assert!(resample_profile(&[1.0], 1).is_err());
    }

    #[test]
    fn average_of_constant_records() {
        let recs = vec![record(vec![0.0; 4]), record(vec![1.0; 9])];
        let p = average_profile(&recs, ValueSource::Logits, 11).unwrap();
        assert!(p.values.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(p.n_utterances, 2);
        assert_eq!(p.positions[0], 0.0);
        assert_eq!(p.positions[10], 1.0);
        assert!(average_profile(&[], ValueSource::Logits, 11).is_err());
    }

    #[test]
    fn first_k_examples() {
        let uniform = AttentionRecord { utt_id: "u".into(), logits: vec![0.0; 100], weights: vec![0.01; 100] };
        let m = first_k_mass(&uniform, 5).unwrap();
        assert!((m.mass_fraction - 0.05).abs() < 1e-15);
        assert_eq!(m.frame_fraction, 0.05);

        let mut point = vec![0.0; 50];
        point[0] = 1.0;
        let r = AttentionRecord { utt_id: "p".into(), logits: vec![0.0; 50], weights: point };
        let m = first_k_mass(&r, 5).unwrap();
        assert_eq!((m.mass_fraction, m.frame_fraction), (1.0, 0.1));

        let r = AttentionRecord {
            utt_id: "h".into(),
            logits: vec![0.0; 6],
            weights: vec![0.5, 0.2, 0.1, 0.1, 0.05, 0.05],
        };
        let m = first_k_mass(&r, 2).unwrap();
        assert!((m.mass_fraction - 0.7).abs() < 1e-15);
        assert!((m.frame_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(first_k_mass(&r, 10).unwrap().frame_fraction, 1.0);
        assert!(first_k_mass(&r, 0).is_err());
    }

    #[test]
    fn word_sum_examples() {
        let r = record(vec![0.0; 6]);
        let stats = word_logit_sums(&r, &[span(0, 1, 3, "ab"), span(1, 4, 5, "cd")]).unwrap();
        assert!(stats.iter().all(|s| s.logit_sum == 0.0));

        let r = record(vec![1.0, 2.0, 3.0]);
        let stats = word_logit_sums(&r, &[span(0, 0, 3, "all")]).unwrap();
        assert_eq!(stats[0].logit_sum, 6.0);
        assert_eq!(stats[0].span_len, 3);

        assert!(word_logit_sums(&r, &[span(0, 1, 4, "x")]).is_err());
    }

    #[test]
    fn singleton_reports() {
        let stats = vec![WordAttentionStat { word: "solo".into(), utt_id: "u".into(), logit_sum: 1.5, span_len: 2 }];
        let rep = word_reports(&stats, 10, 10).unwrap();
        assert_eq!(rep.top[0].word, "solo");
        assert_eq!(rep.frequent[0].word, "solo");
        assert!(word_reports(&[], 1, 1).is_err());
    }

    #[test]
    fn rare_spike_heads_top_but_not_frequent() {
        let mut stats = Vec::new();
        for i in 0..5 {
            for w in ["aa", "bb"] {
                stats.push(WordAttentionStat { word: w.into(), utt_id: format!("u{i}"), logit_sum: 1.0, span_len: 3 });
            }
        }
        stats.push(WordAttentionStat { word: "zz".into(), utt_id: "u9".into(), logit_sum: 50.0, span_len: 3 });
        let rep = word_reports(&stats, 3, 2).unwrap();
        assert_eq!(rep.top[0].word, "zz");
        assert!(rep.frequent.iter().all(|w| w.word != "zz"));
        assert_eq!(rep.top[1].word, "aa");
    }

    #[test]
    fn svg_is_self_contained() {
        let p = average_profile(&[record(vec![0.0, 1.0, 0.5])], ValueSource::Weights, 5).unwrap();
        let svg = p.to_svg("a <b>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(!svg.contains("href"));
    }
}
