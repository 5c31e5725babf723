//! Translation retrieval: embed a query and a search database, optionally
//! mean-center them, rank by exact cosine and score Recall@k.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{meaning_of, Manifest};
use crate::error::{Result, SenseError};
use crate::model::{forward, ModelParams};
use crate::textio::{fmt_reals, parse_field, parse_reals, read_text, write_atomic};

const STORE_MAGIC: &str = "SENSE-EMB";
const CENTER_TAG: &str = "#center";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

impl FromStr for Modality {
    type Err = SenseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            _ => Err(SenseError::Config(format!("unknown modality '{s}' (speech|text)"))),
        }
    }
}

/// Which population the subtracted mean is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Each store subtracts its own mean.
    #[default]
    PerDb,
    /// Both stores subtract the mean of their pooled entries.
    Joint,
    None,
}

impl Centering {
    pub fn as_str(self) -> &'static str {
        match self {
            Centering::PerDb => "per-db",
            Centering::Joint => "joint",
            Centering::None => "none",
        }
    }
}

impl FromStr for Centering {
    type Err = SenseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-db" => Ok(Centering::PerDb),
            "joint" => Ok(Centering::Joint),
            "none" => Ok(Centering::None),
            _ => Err(SenseError::Config(format!(
                "unknown centering '{s}' (per-db|joint|none)"
            ))),
        }
    }
}

/// Ordered `id -> vector` collection.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    centered: bool,
    center: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            centered: false,
            center: vec![0.0; dim],
        }
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store = Self::new(dim);
        for (id, v) in entries {
            store.push(id, &v)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(SenseError::Shape(format!(
                "{id}: vector dim {} != store dim {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(SenseError::Input(format!("{id}: non-finite embedding")));
        }
        if self.index.contains_key(&id) {
            return Err(SenseError::Input(format!("duplicate store id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn center_vector(&self) -> &[f64] {
        &self.center
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks(self.dim.max(1)))
            .map(|(id, v)| (id.as_str(), v))
    }

    /// Entry mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (_, v) in self.iter() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Subtract the store's own mean.
    pub fn mean_center(&self) -> Result<EmbeddingStore> {
        if self.is_empty() {
            return Err(SenseError::Input("cannot center an empty store".into()));
        }
        self.center_by(&self.mean())
    }

    /// Subtract `center` from every entry.
    pub fn center_by(&self, center: &[f64]) -> Result<EmbeddingStore> {
        if self.centered {
            return Err(SenseError::State("store is already centered".into()));
        }
        if center.len() != self.dim {
            return Err(SenseError::Shape("center vector dim mismatch".into()));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.dim.max(1)) {
            for (x, c) in row.iter_mut().zip(center) {
                *x -= c;
            }
        }
        out.centered = true;
        out.center = center.to_vec();
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{STORE_MAGIC} 1 {} {} {}\n",
            self.dim,
            self.len(),
            u8::from(self.centered)
        );
        for (id, v) in self.iter() {
            let _ = writeln!(out, "{id}\t{}", fmt_reals(v));
        }
        if self.centered {
            let _ = writeln!(out, "{CENTER_TAG}\t{}", fmt_reals(&self.center));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ctx = "embedding store";
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SenseError::parse(ctx, "empty file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 5 || toks[0] != STORE_MAGIC || toks[1] != "1" {
            return Err(SenseError::parse(ctx, format!("bad header '{header}'")));
        }
        let dim: usize = parse_field(toks[2], "dim", ctx)?;
        let count: usize = parse_field(toks[3], "count", ctx)?;
        let centered = match toks[4] {
            "0" => false,
            "1" => true,
            other => return Err(SenseError::parse(ctx, format!("bad centered flag '{other}'"))),
        };
        let mut store = Self::new(dim);
        let mut center = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| SenseError::parse(ctx, format!("bad line '{line}'")))?;
            let values = parse_reals(rest, ctx)?;
            if id == CENTER_TAG {
                if values.len() != dim {
                    return Err(SenseError::parse(ctx, "center vector has wrong dim"));
                }
                center = Some(values);
            } else {
                store.push(id, &values)?;
            }
        }
        if store.len() != count {
            return Err(SenseError::parse(
                ctx,
                format!("header says {count} entries, found {}", store.len()),
            ));
        }
        match (centered, center) {
            (true, Some(c)) => {
                store.centered = true;
                store.center = c;
            }
            (false, None) => {}
            (true, None) => return Err(SenseError::parse(ctx, "centered store lacks #center line")),
            (false, Some(_)) => return Err(SenseError::parse(ctx, "#center line in uncentered store")),
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Query id -> gold search id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldMap {
    pub pairs: Vec<(String, String)>,
}

impl GoldMap {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pair every query with the search entry sharing its meaning id.
    pub fn by_meaning(query: &Manifest, search: &Manifest) -> GoldMap {
        let by_meaning: HashMap<usize, &str> = search
            .entries
            .iter()
            .filter_map(|e| meaning_of(&e.utt_id).map(|m| (m, e.utt_id.as_str())))
            .collect();
        let pairs = query
            .entries
            .iter()
            .filter_map(|e| {
                let m = meaning_of(&e.utt_id)?;
                by_meaning.get(&m).map(|s| (e.utt_id.clone(), s.to_string()))
            })
            .collect();
        GoldMap { pairs }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, s) in &self.pairs {
            let _ = writeln!(out, "{q}\t{s}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split_once('\t')
                    .map(|(q, s)| (q.to_string(), s.trim_end().to_string()))
                    .ok_or_else(|| SenseError::parse("gold map", format!("bad line '{line}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GoldMap { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    fn validate(&self, query: &EmbeddingStore, search: &EmbeddingStore) -> Result<()> {
        for (q, s) in &self.pairs {
            if query.position(q).is_none() {
                return Err(SenseError::Input(format!("gold query id {q} not in query store")));
            }
            if search.position(s).is_none() {
                return Err(SenseError::Input(format!("gold search id {s} not in search store")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Exact cosine ranking of a whole store against one query.
struct Ranker<'a> {
    store: &'a EmbeddingStore,
    norms: Vec<f64>,
}

impl<'a> Ranker<'a> {
    fn new(store: &'a EmbeddingStore) -> Self {
        let norms = store.iter().map(|(_, v)| dot(v, v).sqrt()).collect();
        Self { store, norms }
    }

    fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.store.dim() {
            return Err(SenseError::Shape(format!(
                "query dim {} != store dim {}",
                query.len(),
                self.store.dim()
            )));
        }
        let qn = dot(query, query).sqrt();
        if qn == 0.0 || !qn.is_finite() {
            return Err(SenseError::Domain("query vector has zero norm".into()));
        }
        Ok(self
            .store
            .iter()
            .zip(&self.norms)
            .map(|((_, v), &n)| {
                if n == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (dot(query, v) / (qn * n)).clamp(-1.0, 1.0)
                }
            })
            .collect())
    }

    /// Descending score, ties by ascending id.
    fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(SenseError::Config("k must be at least 1".into()));
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.store.id(a).cmp(self.store.id(b)))
        };
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| Hit {
                id: self.store.id(i).to_string(),
                score: scores[i],
            })
            .collect())
    }
}

/// Exact top-`k` by cosine similarity. Zero-norm entries score `-inf`.
pub fn top_k(query: &[f64], store: &EmbeddingStore, k: usize) -> Result<Vec<Hit>> {
    Ranker::new(store).top_k(query, k)
}

/// Apply a centering policy to a query/search pair.
pub fn center_pair(
    query: &EmbeddingStore,
    search: &EmbeddingStore,
    centering: Centering,
) -> Result<(EmbeddingStore, EmbeddingStore)> {
    match centering {
        Centering::None => Ok((query.clone(), search.clone())),
        Centering::PerDb => Ok((query.mean_center()?, search.mean_center()?)),
        Centering::Joint => {
            if query.dim() != search.dim() {
                return Err(SenseError::Shape("query and search dims differ".into()));
            }
            let n = (query.len() + search.len()) as f64;
            if n == 0.0 {
                return Err(SenseError::Input("cannot center empty stores".into()));
            }
            let (qm, sm) = (query.mean(), search.mean());
            let pooled: Vec<f64> = qm
                .iter()
                .zip(&sm)
                .map(|(a, b)| (a * query.len() as f64 + b * search.len() as f64) / n)
                .collect();
            Ok((query.center_by(&pooled)?, search.center_by(&pooled)?))
        }
    }
}

/// `100 * |{q : gold(q) in top_k(q)}| / |gold|`.
pub fn recall_at_k(
    query: &EmbeddingStore,
    search: &EmbeddingStore,
    gold: &GoldMap,
    k: usize,
    centering: Centering,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(SenseError::Input("gold map is empty".into()));
    }
    if k == 0 {
        return Err(SenseError::Config("k must be at least 1".into()));
    }
    gold.validate(query, search)?;
    let (q, s) = center_pair(query, search, centering)?;
    let ranker = Ranker::new(&s);
    let mut hits = 0usize;
    for (qid, sid) in &gold.pairs {
        let qv = q.get(qid).expect("validated");
        if ranker.top_k(qv, k)?.iter().any(|h| &h.id == sid) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / gold.len() as f64)
}

/// Student embeddings for speech, teacher embeddings for text; store order
/// follows the manifest.
pub fn embed_manifest(
    params: &ModelParams,
    manifest: &Manifest,
    modality: Modality,
) -> Result<EmbeddingStore> {
    match modality {
        Modality::Speech => {
            let mut store = EmbeddingStore::new(params.dims.d_e);
            for entry in &manifest.entries {
                let v = forward(params, &manifest.load_frames(entry)?)?.embedding;
                store.push(entry.utt_id.clone(), &v)?;
            }
            Ok(store)
        }
        Modality::Text => embed_text(manifest),
    }
}

/// Teacher embeddings of every manifest entry.
pub fn embed_text(manifest: &Manifest) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(manifest.d_e);
    for entry in &manifest.entries {
        store.push(entry.utt_id.clone(), manifest.teacher(entry)?.as_slice())?;
    }
    Ok(store)
}

/// One side of a retrieval scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSide {
    pub label: String,
    pub manifest: Manifest,
    pub modality: Modality,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub query: ScenarioSide,
    pub search: ScenarioSide,
    pub gold: GoldMap,
}

impl Scenario {
    /// Language `query_lang` in `query_mod` against `search_lang` in
    /// `search_mod`, gold pairs sharing a meaning id.
    pub fn cross_lingual(
        manifest: &Manifest,
        query_lang: usize,
        query_mod: Modality,
        search_lang: usize,
        search_mod: Modality,
    ) -> Scenario {
        let q = manifest.filter_lang(query_lang);
        let s = manifest.filter_lang(search_lang);
        let gold = GoldMap::by_meaning(&q, &s);
        Scenario {
            query: ScenarioSide { label: query_lang.to_string(), manifest: q, modality: query_mod },
            search: ScenarioSide { label: search_lang.to_string(), manifest: s, modality: search_mod },
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub query_lang: String,
    pub query_mod: String,
    pub search_lang: String,
    pub search_mod: String,
    pub n_query: usize,
    pub n_search: usize,
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalReport {
    pub rows: Vec<ReportRow>,
}

impl RetrievalReport {
    pub const HEADER: &'static str =
        "query_lang,query_mod,search_lang,search_mod,n_query,n_search,k,recall";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.2}",
                r.query_lang, r.query_mod, r.search_lang, r.search_mod, r.n_query, r.n_search, r.k, r.recall
            );
        }
        out
    }
}

/// Evaluate every scenario; one report row each.
pub fn retrieval_matrix(
    scenarios: &[Scenario],
    params: &ModelParams,
    k: usize,
    centering: Centering,
) -> Result<RetrievalReport> {
    let mut cache: HashMap<(&'static str, Vec<String>), EmbeddingStore> = HashMap::new();
    let mut embed = |side: &ScenarioSide| -> Result<EmbeddingStore> {
        let ids = side.manifest.entries.iter().map(|e| e.utt_id.clone()).collect();
        let key = (side.modality.as_str(), ids);
        if let Some(s) = cache.get(&key) {
            return Ok(s.clone());
        }
        let store = embed_manifest(params, &side.manifest, side.modality)?;
        cache.insert(key, store.clone());
        Ok(store)
    };
    let mut report = RetrievalReport::default();
    for sc in scenarios {
        let q = embed(&sc.query)?;
        let s = embed(&sc.search)?;
        let recall = recall_at_k(&q, &s, &sc.gold, k, centering)?;
        report.rows.push(ReportRow {
            query_lang: sc.query.label.clone(),
            query_mod: sc.query.modality.as_str().into(),
            search_lang: sc.search.label.clone(),
            search_mod: sc.search.modality.as_str().into(),
            n_query: q.len(),
            n_search: s.len(),
            k,
            recall,
        });
    }
    Ok(report)
}
