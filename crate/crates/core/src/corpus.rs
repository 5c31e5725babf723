//! Synthetic multilingual, multimodal paired corpus.
//!
//! A "meaning" is a sequence of concept ids. Each meaning is rendered in every
//! language as a frame sequence (the speech surrogate) and as a surface string
//! (the transcript). The teacher embedding of a meaning depends only on its
//! concept sequence, so translations share one anchor vector.
//!
//! All randomness comes from keyed [`SplitMix64`] streams: meaning `i` is drawn
//! from its own stream, so a corpus with more sentences per language is a
//! strict superset of a smaller one generated with the same seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Result, SenseError};
use crate::rng::SplitMix64;
use crate::textio::{fmt_reals, parse_field, parse_reals, read_text, write_atomic};

pub const MIN_WORDS: usize = 3;
pub const MAX_WORDS: usize = 8;
pub const LEADING_SILENCE: usize = 2;
pub const TRAILING_SILENCE: usize = 2;
pub const GAP_SILENCE: usize = 1;
pub const CONTENT_NOISE: f64 = 0.05;
pub const SILENCE_NOISE: f64 = 0.01;
pub const DEFAULT_ACCENT_SCALE: f64 = 0.1;

const MANIFEST_MAGIC: &str = "SENSE-MANIFEST";
const FORMAT_VERSION: u32 = 1;
const DUP_MARKER: &str = "~dup";

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub num_langs: usize,
    pub num_concepts: usize,
    pub sentences_per_lang: usize,
    pub d_in: usize,
    pub d_e: usize,
    pub seed: u64,
    /// Strength of the per-language acoustic transform; see [`AcousticWorld`].
    pub accent_scale: f64,
}

impl CorpusSpec {
    pub fn new(
        num_langs: usize,
        num_concepts: usize,
        sentences_per_lang: usize,
        d_in: usize,
        d_e: usize,
        seed: u64,
    ) -> Self {
        Self {
            num_langs,
            num_concepts,
            sentences_per_lang,
            d_in,
            d_e,
            seed,
            accent_scale: DEFAULT_ACCENT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(SenseError::Config(msg.to_string()))
            }
        };
        check(
            self.num_langs >= 2,
            "num_langs must be at least 2 (cross-lingual pairs need two languages)",
        )?;
        check(self.num_concepts >= 8, "num_concepts must be at least 8")?;
        check(self.sentences_per_lang >= 1, "sentences_per_lang must be at least 1")?;
        check(self.d_in >= 4, "d_in must be at least 4")?;
        check(self.d_e >= 8, "d_e must be at least 8")?;
        check(
            self.accent_scale.is_finite() && self.accent_scale >= 0.0,
            "accent_scale must be finite and non-negative",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub utt_id: String,
    pub lang: usize,
    pub concepts: Vec<usize>,
    pub surface_text: String,
}

impl Sentence {
    pub fn validate(&self, num_concepts: usize) -> Result<()> {
        if !(MIN_WORDS..=MAX_WORDS).contains(&self.concepts.len()) {
            return Err(SenseError::Domain(format!(
                "{}: {} concepts, expected {MIN_WORDS}..={MAX_WORDS}",
                self.utt_id,
                self.concepts.len()
            )));
        }
        if let Some(&c) = self.concepts.iter().find(|&&c| c >= num_concepts) {
            return Err(SenseError::Domain(format!(
                "{}: concept id {c} out of range (M = {num_concepts})",
                self.utt_id
            )));
        }
        Ok(())
    }
}

/// One word's frame span, `start..end` (end exclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignSpan {
    pub word_index: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl AlignSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub utt_id: String,
    /// `T x d_in`
    pub frames: Array2<f64>,
    pub alignment: Vec<AlignSpan>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Spans are non-empty, ordered, disjoint and inside `[0, T)`.
    pub fn check_alignment(&self) -> Result<()> {
        check_spans(&self.alignment, self.len())
    }
}

pub(crate) fn check_spans(spans: &[AlignSpan], len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.is_empty() || span.end > len || (i > 0 && span.start < prev_end) {
            return Err(SenseError::Domain(format!(
                "alignment span {} [{}, {}) invalid for T = {len}",
                span.word_index, span.start, span.end
            )));
        }
        prev_end = span.end;
    }
    Ok(())
}

/// Unit-norm anchor vector in the frozen teacher space.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEmbedding(Vec<f64>);

impl TeacherEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Per-concept teacher base vector `g_k`.
pub fn teacher_base(concept: usize, d_e: usize, seed: u64) -> Vec<f64> {
    SplitMix64::keyed(seed, &format!("teacher/{concept}")).normals(d_e)
}

/// `normalize(sum_j (1 + 0.05 j) g_{c_j})`. Language never enters.
pub fn teacher_embed(concepts: &[usize], d_e: usize, seed: u64) -> Result<TeacherEmbedding> {
    if concepts.is_empty() {
        return Err(SenseError::Domain(
            "teacher embedding of an empty concept sequence".into(),
        ));
    }
    let mut acc = vec![0.0; d_e];
    for (j, &c) in concepts.iter().enumerate() {
        let weight = 1.0 + 0.05 * j as f64;
        for (a, g) in acc.iter_mut().zip(teacher_base(c, d_e, seed)) {
            *a += weight * g;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SenseError::Domain("degenerate teacher embedding".into()));
    }
    acc.iter_mut().for_each(|x| *x /= norm);
    Ok(TeacherEmbedding(acc))
}

/// Concept sequence of meaning `index`.
pub fn draw_meaning(index: usize, num_concepts: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::keyed(seed, &format!("meaning/{index}"));
    let len = MIN_WORDS + rng.below((MAX_WORDS - MIN_WORDS + 1) as u64) as usize;
    (0..len)
        .map(|_| rng.below(num_concepts as u64) as usize)
        .collect()
}

/// 4-letter lowercase surface form of `concept` in `lang`.
pub fn surface_word(lang: usize, concept: usize, seed: u64) -> String {
    let mut rng = SplitMix64::keyed(seed, &format!("word/{lang}/{concept}"));
    (0..4)
        .map(|_| (b'a' + rng.below(26) as u8) as char)
        .collect()
}

pub fn utt_id_for(meaning: usize, lang: usize) -> String {
    format!("m{meaning:05}-l{lang}")
}

/// Meaning index encoded in an utterance id (duplicate suffixes ignored).
pub fn meaning_of(utt_id: &str) -> Option<usize> {
    let rest = utt_id.strip_prefix('m')?;
    let end = rest.find('-')?;
    rest[..end].parse().ok()
}

/// Words per concept: `3 + (concept mod 4)` content frames.
pub fn word_frames(concept: usize) -> usize {
    3 + concept % 4
}

/// Acoustic parameters shared by every utterance of a corpus.
///
/// Language `l` renders concept `k` as `A_l q_k`, where `q_k` is a shared
/// per-concept base vector and `A_l = I + s N_l / sqrt(d_in)` with `N_l` a
/// seeded standard-normal matrix and `s` the accent scale.
#[derive(Debug, Clone)]
pub struct AcousticWorld {
    d_in: usize,
    seed: u64,
    accent_scale: f64,
    accents: BTreeMap<usize, Array2<f64>>,
    prototypes: BTreeMap<(usize, usize), Vec<f64>>,
}

impl AcousticWorld {
    pub fn new(d_in: usize, seed: u64, accent_scale: f64) -> Self {
        Self {
            d_in,
            seed,
            accent_scale,
            accents: BTreeMap::new(),
            prototypes: BTreeMap::new(),
        }
    }

    pub fn accent(&mut self, lang: usize) -> &Array2<f64> {
        let (d, seed, scale) = (self.d_in, self.seed, self.accent_scale);
        self.accents.entry(lang).or_insert_with(|| {
            let mut rng = SplitMix64::keyed(seed, &format!("accent/{lang}"));
            let noise = rng.normals(d * d);
            let mut a = Array2::from_shape_vec((d, d), noise).expect("square accent matrix");
            a.mapv_inplace(|x| x * scale / (d as f64).sqrt());
            for i in 0..d {
                a[[i, i]] += 1.0;
            }
            a
        })
    }

    /// `p_{lang, concept} = A_lang q_concept`.
    pub fn prototype(&mut self, lang: usize, concept: usize) -> Vec<f64> {
        if let Some(p) = self.prototypes.get(&(lang, concept)) {
            return p.clone();
        }
        let base = SplitMix64::keyed(self.seed, &format!("acoustic/{concept}")).normals(self.d_in);
        let a = self.accent(lang);
        let p: Vec<f64> = a
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&base).map(|(x, y)| x * y).sum())
            .collect();
        self.prototypes.insert((lang, concept), p.clone());
        p
    }

    /// Frame layout: 2 silence, then per word `word_frames(c)` content frames
    /// separated by 1 silence frame, then 2 silence.
    pub fn render_frames(&mut self, sentence: &Sentence) -> FrameSequence {
        let words: Vec<&str> = sentence.surface_text.split(' ').collect();
        let content: usize = sentence.concepts.iter().map(|&c| word_frames(c)).sum();
        let gaps = sentence.concepts.len().saturating_sub(1) * GAP_SILENCE;
        let total = LEADING_SILENCE + content + gaps + TRAILING_SILENCE;

        let mut noise = SplitMix64::keyed(self.seed, &format!("noise/{}", sentence.utt_id));
        let mut frames = Array2::<f64>::zeros((total, self.d_in));
        let mut alignment = Vec::with_capacity(sentence.concepts.len());
        let mut t = 0;
        let silence = |frames: &mut Array2<f64>, t: &mut usize, n: usize, rng: &mut SplitMix64| {
            for _ in 0..n {
                for x in frames.row_mut(*t) {
                    *x = SILENCE_NOISE * rng.normal();
                }
                *t += 1;
            }
        };
        silence(&mut frames, &mut t, LEADING_SILENCE, &mut noise);
        for (w, &concept) in sentence.concepts.iter().enumerate() {
            if w > 0 {
                silence(&mut frames, &mut t, GAP_SILENCE, &mut noise);
            }
            let proto = self.prototype(sentence.lang, concept);
            let start = t;
            for _ in 0..word_frames(concept) {
                for (x, p) in frames.row_mut(t).iter_mut().zip(&proto) {
                    *x = p + CONTENT_NOISE * noise.normal();
                }
                t += 1;
            }
            alignment.push(AlignSpan {
                word_index: w,
                start,
                end: t,
                surface: words.get(w).copied().unwrap_or_default().to_string(),
            });
        }
        silence(&mut frames, &mut t, TRAILING_SILENCE, &mut noise);
        debug_assert_eq!(t, total);

        FrameSequence {
            utt_id: sentence.utt_id.clone(),
            frames,
            alignment,
        }
    }
}

/// Render with a default-accent world keyed by `seed`.
pub fn render_frames(sentence: &Sentence, d_in: usize, seed: u64) -> FrameSequence {
    AcousticWorld::new(d_in, seed, DEFAULT_ACCENT_SCALE).render_frames(sentence)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub lang: usize,
    pub concepts: Vec<usize>,
    pub surface_text: String,
    /// Relative to the manifest directory.
    pub frames_file: String,
    pub align_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub num_langs: usize,
    pub num_concepts: usize,
    pub d_in: usize,
    pub d_e: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against. Not serialized.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MANIFEST_MAGIC} {FORMAT_VERSION} {} {} {} {} {}\n",
            self.num_langs, self.num_concepts, self.d_in, self.d_e, self.seed
        );
        for e in &self.entries {
            let concepts: Vec<String> = e.concepts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.utt_id,
                e.lang,
                concepts.join(" "),
                e.surface_text,
                e.frames_file,
                e.align_file
            );
        }
        out
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let ctx = "manifest";
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SenseError::parse(ctx, "empty file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 7 || toks[0] != MANIFEST_MAGIC || toks[1] != "1" {
            return Err(SenseError::parse(ctx, format!("bad header '{header}'")));
        }
        let mut m = Manifest {
            num_langs: parse_field(toks[2], "language count", ctx)?,
            num_concepts: parse_field(toks[3], "concept count", ctx)?,
            d_in: parse_field(toks[4], "d_in", ctx)?,
            d_e: parse_field(toks[5], "d_e", ctx)?,
            seed: parse_field(toks[6], "seed", ctx)?,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        };
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let lctx = format!("manifest line {}", n + 2);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(SenseError::parse(lctx, "expected 6 tab-separated fields"));
            }
            let concepts = f[2]
                .split_whitespace()
                .map(|c| parse_field(c, "concept id", &lctx))
                .collect::<Result<Vec<usize>>>()?;
            m.entries.push(ManifestEntry {
                utt_id: f[0].to_string(),
                lang: parse_field(f[1], "language", &lctx)?,
                concepts,
                surface_text: f[3].to_string(),
                frames_file: f[4].to_string(),
                align_file: f[5].to_string(),
            });
        }
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(SenseError::Input(format!("duplicate utt_id {}", e.utt_id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn frames_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.frames_file)
    }

    pub fn align_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.align_file)
    }

    pub fn load_frames(&self, entry: &ManifestEntry) -> Result<FrameSequence> {
        let frames_path = self.frames_path(entry);
        let frames = match fs::read_to_string(&frames_path) {
            Ok(text) => parse_frames(&text, &entry.utt_id)?,
            Err(e) => {
                return Err(SenseError::Io {
                    path: frames_path,
                    source: std::io::Error::new(
                        e.kind(),
                        format!("frames of {}: {e}", entry.utt_id),
                    ),
                })
            }
        };
        let align_path = self.align_path(entry);
        let alignment = parse_alignment(&read_text(&align_path)?, &entry.utt_id)?;
        let seq = FrameSequence {
            utt_id: entry.utt_id.clone(),
            frames,
            alignment,
        };
        if seq.dim() != self.d_in {
            return Err(SenseError::Shape(format!(
                "{}: frame dim {} != manifest d_in {}",
                entry.utt_id,
                seq.dim(),
                self.d_in
            )));
        }
        seq.check_alignment()?;
        Ok(seq)
    }

    pub fn teacher(&self, entry: &ManifestEntry) -> Result<TeacherEmbedding> {
        teacher_embed(&entry.concepts, self.d_e, self.seed)
    }

    fn with_entries(&self, entries: Vec<ManifestEntry>) -> Manifest {
        Manifest {
            entries,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Manifest {
        Manifest {
            num_langs: self.num_langs,
            num_concepts: self.num_concepts,
            d_in: self.d_in,
            d_e: self.d_e,
            seed: self.seed,
            entries: Vec::new(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Entries of one language, in manifest order.
    pub fn filter_lang(&self, lang: usize) -> Manifest {
        self.with_entries(
            self.entries
                .iter()
                .filter(|e| e.lang == lang)
                .cloned()
                .collect(),
        )
    }

    /// Split into entries whose meaning index is `< n` and the rest.
    pub fn split_meanings(&self, n: usize) -> (Manifest, Manifest) {
        let (head, tail): (Vec<_>, Vec<_>) = self
            .entries
            .iter()
            .cloned()
            .partition(|e| meaning_of(&e.utt_id).is_some_and(|m| m < n));
        (self.with_entries(head), self.with_entries(tail))
    }
}

pub fn frames_to_text(frames: &Array2<f64>) -> String {
    let mut out = format!("{} {}\n", frames.nrows(), frames.ncols());
    for row in frames.rows() {
        out.push_str(&fmt_reals(row.as_slice().expect("standard layout")));
        out.push('\n');
    }
    out
}

pub fn parse_frames(text: &str, utt_id: &str) -> Result<Array2<f64>> {
    let ctx = format!("frames of {utt_id}");
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SenseError::parse(&ctx, "empty file"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(SenseError::parse(&ctx, format!("bad header '{header}'")));
    }
    let t: usize = parse_field(dims[0], "T", &ctx)?;
    let d: usize = parse_field(dims[1], "d_in", &ctx)?;
    if t == 0 {
        return Err(SenseError::parse(&ctx, "T must be at least 1"));
    }
    let mut data = Vec::with_capacity(t * d);
    for _ in 0..t {
        let line = lines
            .next()
            .ok_or_else(|| SenseError::parse(&ctx, "truncated"))?;
        let row = parse_reals(line, &ctx)?;
        if row.len() != d {
            return Err(SenseError::parse(&ctx, format!("row has {} values, expected {d}", row.len())));
        }
        data.extend(row);
    }
    Ok(Array2::from_shape_vec((t, d), data).expect("checked shape"))
}

pub fn alignment_to_text(spans: &[AlignSpan]) -> String {
    let mut out = String::new();
    for s in spans {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.word_index, s.start, s.end, s.surface);
    }
    out
}

pub fn parse_alignment(text: &str, utt_id: &str) -> Result<Vec<AlignSpan>> {
    let ctx = format!("alignment of {utt_id}");
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(SenseError::parse(&ctx, format!("bad line '{line}'")));
            }
            Ok(AlignSpan {
                word_index: parse_field(f[0], "word index", &ctx)?,
                start: parse_field(f[1], "start", &ctx)?,
                end: parse_field(f[2], "end", &ctx)?,
                surface: f[3].to_string(),
            })
        })
        .collect()
}

/// Sentence for meaning `meaning` in language `lang`.
pub fn make_sentence(spec: &CorpusSpec, meaning: usize, lang: usize) -> Sentence {
    let concepts = draw_meaning(meaning, spec.num_concepts, spec.seed);
    let surface_text = concepts
        .iter()
        .map(|&c| surface_word(lang, c, spec.seed))
        .collect::<Vec<_>>()
        .join(" ");
    Sentence {
        utt_id: utt_id_for(meaning, lang),
        lang,
        concepts,
        surface_text,
    }
}

/// Generate `L * K` utterances (every meaning in every language) under
/// `out_dir`, writing `manifest.tsv`, `frames/*.frames` and `align/*.align`.
/// Entries are ordered by meaning, then language.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| SenseError::io(out_dir, e))?;

    let mut world = AcousticWorld::new(spec.d_in, spec.seed, spec.accent_scale);
    let mut entries = Vec::with_capacity(spec.num_langs * spec.sentences_per_lang);
    for meaning in 0..spec.sentences_per_lang {
        for lang in 0..spec.num_langs {
            let sentence = make_sentence(spec, meaning, lang);
            let seq = world.render_frames(&sentence);
            let frames_file = format!("frames/{}.frames", sentence.utt_id);
            let align_file = format!("align/{}.align", sentence.utt_id);
            write_atomic(&out_dir.join(&frames_file), frames_to_text(&seq.frames).as_bytes())?;
            write_atomic(&out_dir.join(&align_file), alignment_to_text(&seq.alignment).as_bytes())?;
            entries.push(ManifestEntry {
                utt_id: sentence.utt_id,
                lang,
                concepts: sentence.concepts,
                surface_text: sentence.surface_text,
                frames_file,
                align_file,
            });
        }
    }
    let manifest = Manifest {
        num_langs: spec.num_langs,
        num_concepts: spec.num_concepts,
        d_in: spec.d_in,
        d_e: spec.d_e,
        seed: spec.seed,
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Up- or down-sample every language to exactly `target_per_lang` entries.
///
/// Languages above target keep their first entries in utt_id order; languages
/// below target cycle through their entries in utt_id order, appending copies
/// whose utt_ids carry a `~dupN` suffix. Output is ordered by language, then
/// position.
pub fn balance_languages(manifest: &Manifest, target_per_lang: usize) -> Result<Manifest> {
    if target_per_lang == 0 {
        return Err(SenseError::Config("target_per_lang must be at least 1".into()));
    }
    let mut buckets: BTreeMap<usize, Vec<&ManifestEntry>> =
        (0..manifest.num_langs).map(|l| (l, Vec::new())).collect();
    for e in &manifest.entries {
        buckets.entry(e.lang).or_default().push(e);
    }
    let mut entries = Vec::with_capacity(buckets.len() * target_per_lang);
    for (lang, mut bucket) in buckets {
        if bucket.is_empty() {
            return Err(SenseError::Input(format!("language {lang} has no entries to balance")));
        }
        bucket.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        for pos in 0..target_per_lang {
            let src = bucket[pos % bucket.len()];
            let round = pos / bucket.len();
            let mut e = src.clone();
            if round > 0 {
                e.utt_id = format!("{}{DUP_MARKER}{round}", src.utt_id);
            }
            entries.push(e);
        }
    }
    Ok(manifest.with_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(concepts: Vec<usize>, lang: usize) -> Sentence {
        let surface_text = concepts
            .iter()
            .map(|&c| surface_word(lang, c, 7))
            .collect::<Vec<_>>()
            .join(" ");
        Sentence {
            utt_id: "m00000-l0".into(),
            lang,
            concepts,
            surface_text,
        }
    }

    #[test]
    fn two_word_layout() {
        let seq = render_frames(&sentence(vec![0, 4, 1], 0), 4, 7);
        // n = 3, 3, 4 -> 2 + 3 + 1 + 3 + 1 + 4 + 2
        assert_eq!(seq.len(), 16);

        let s = Sentence {
            concepts: vec![0, 4],
            ..sentence(vec![0, 4], 0)
        };
        let seq = render_frames(&s, 4, 7);
        assert_eq!(seq.len(), 11);
        let spans: Vec<_> = seq.alignment.iter().map(|s| (s.word_index, s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 2, 5), (1, 6, 9)]);
        seq.check_alignment().unwrap();
    }

    #[test]
    fn render_is_deterministic_and_silence_is_small() {
        let s = sentence(vec![1, 2, 3], 1);
        let a = render_frames(&s, 8, 11);
        let b = render_frames(&s, 8, 11);
        assert_eq!(a, b);
        for &t in &[0usize, 1, a.len() - 1] {
            let norm: f64 = a.frames.row(t).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm > 0.0 && norm < 0.1, "silence frame {t} norm {norm}");
        }
    }

    #[test]
    fn teacher_is_unit_norm_and_order_sensitive() {
        let t = teacher_embed(&[3, 5], 16, 9).unwrap();
        let norm: f64 = t.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let r = teacher_embed(&[5, 3], 16, 9).unwrap();
        let cos: f64 = t.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum();
        assert!(cos < 1.0);
        assert!(teacher_embed(&[], 16, 9).is_err());
    }

    #[test]
    fn teacher_matches_direct_formula() {
        // Direct evaluation from the base vectors.
        let d_e = 12;
        let g3 = teacher_base(3, d_e, 9);
        let g5 = teacher_base(5, d_e, 9);
        let raw: Vec<f64> = (0..d_e).map(|i| 1.0 * g5[i] + 1.05 * g3[i]).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let t = teacher_embed(&[5, 3], d_e, 9).unwrap();
        for (a, b) in t.as_slice().iter().zip(&raw) {
            assert!((a - b / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn corpus_parameters_are_validated() {
        let ok = CorpusSpec::new(2, 8, 1, 4, 8, 0);
        ok.validate().unwrap();
        for bad in [
            CorpusSpec { num_langs: 1, ..ok.clone() },
            CorpusSpec { num_concepts: 7, ..ok.clone() },
            CorpusSpec { sentences_per_lang: 0, ..ok.clone() },
            CorpusSpec { d_in: 3, ..ok.clone() },
            CorpusSpec { d_e: 7, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(SenseError::Config(_))));
        }
    }

    #[test]
    fn meanings_have_valid_lengths() {
        for i in 0..200 {
            let m = draw_meaning(i, 10, 3);
            assert!((MIN_WORDS..=MAX_WORDS).contains(&m.len()));
            assert!(m.iter().all(|&c| c < 10));
        }
    }

    #[test]
    fn meaning_id_round_trip() {
        assert_eq!(meaning_of(&utt_id_for(42, 3)), Some(42));
        assert_eq!(meaning_of("m00042-l3~dup2"), Some(42));
        assert_eq!(meaning_of("x"), None);
    }

    #[test]
    fn sentence_validation() {
        let mut s = sentence(vec![1, 2], 0);
        assert!(s.validate(8).is_err());
        s.concepts = vec![1, 2, 9];
        assert!(s.validate(8).is_err());
        s.concepts = vec![1, 2, 7];
        s.validate(8).unwrap();
    }

    fn toy_manifest(counts: &[usize]) -> Manifest {
        let mut entries = Vec::new();
        for (lang, &n) in counts.iter().enumerate() {
            for m in (0..n).rev() {
                entries.push(ManifestEntry {
                    utt_id: utt_id_for(m, lang),
                    lang,
                    concepts: vec![1, 2, 3],
                    surface_text: "a b c".into(),
                    frames_file: "f".into(),
                    align_file: "a".into(),
                });
            }
        }
        Manifest {
            num_langs: counts.len(),
            num_concepts: 8,
            d_in: 4,
            d_e: 8,
            seed: 0,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn balance_upsamples_by_cycling() {
        let m = toy_manifest(&[5, 10]);
        let b = balance_languages(&m, 10).unwrap();
        let lang0: Vec<_> = b.entries.iter().filter(|e| e.lang == 0).collect();
        assert_eq!(lang0.len(), 10);
        for i in 0..5 {
            let id = utt_id_for(i, 0);
            let n = lang0.iter().filter(|e| meaning_of(&e.utt_id) == Some(i)).count();
            assert_eq!(n, 2, "{id}");
        }
        assert_eq!(lang0[5].utt_id, "m00000-l0~dup1");
    }

    #[test]
    fn balance_truncates_in_id_order() {
        let m = toy_manifest(&[20, 10]);
        let b = balance_languages(&m, 10).unwrap();
        let ids: Vec<_> = b.entries.iter().filter(|e| e.lang == 0).map(|e| e.utt_id.clone()).collect();
        let expected: Vec<_> = (0..10).map(|i| utt_id_for(i, 0)).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn balance_identity_modulo_order() {
        let m = toy_manifest(&[3, 3]);
        let b = balance_languages(&m, 3).unwrap();
        let mut a: Vec<_> = m.entries.iter().map(|e| e.utt_id.clone()).collect();
        let mut c: Vec<_> = b.entries.iter().map(|e| e.utt_id.clone()).collect();
        a.sort();
        c.sort();
        assert_eq!(a, c);
    }

    #[test]
    fn balance_empty_language_is_named() {
        let m = toy_manifest(&[3, 0]);
        let err = balance_languages(&m, 3).unwrap_err();
        assert!(err.to_string().contains("language 1"), "{err}");
        assert!(balance_languages(&m, 0).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = toy_manifest(&[2, 1]);
        let back = Manifest::parse(&m.to_text(), PathBuf::new()).unwrap();
        assert_eq!(back, m);
        assert!(Manifest::parse("SENSE-MANIFEST 2 1 1 1 1 1\n", "").is_err());
    }

    #[test]
    fn spans_must_be_disjoint() {
        let span = |s, e| AlignSpan { word_index: 0, start: s, end: e, surface: "x".into() };
        check_spans(&[span(0, 2), span(2, 4)], 4).unwrap();
        assert!(check_spans(&[span(0, 3), span(2, 4)], 4).is_err());
        assert!(check_spans(&[span(0, 5)], 4).is_err());
        assert!(check_spans(&[span(2, 2)], 4).is_err());
    }
}
