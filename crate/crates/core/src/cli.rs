//! The `sense` command line.
//!
//! Each subcommand resolves its settings from built-in defaults, then an
//! optional `--config` key=value file, then explicit flags (flags win). The
//! resolved settings are echoed to `run.meta` in the output directory, and
//! feeding that file back through `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::attention::{
    average_profile, first_k_mass, mean_first_k_mass, stats_to_csv, word_logit_sums, word_reports,
    ValueSource,
};
use crate::corpus::{balance_languages, gen_corpus, CorpusSpec, Manifest};
use crate::error::{Result, SenseError};
use crate::metrics::{
    concept_value_error_rate, label_error_rate, parse_transcripts, scores_to_csv, TagTable,
};
use crate::model::{forward, ModelDims, ModelParams};
use crate::retrieval::{
    embed_manifest, embed_text, recall_at_k, retrieval_matrix, Centering, EmbeddingStore, GoldMap, Modality,
    ReportRow, RetrievalReport, Scenario,
};
use crate::rng::derive_seed;
use crate::textio::{read_text, write_atomic};
use crate::training::{load_examples, parse_key_values, train, TrainConfig, TrainOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_META: &str = "run.meta";

#[derive(Debug, Parser)]
#[command(name = "sense", version, about = "Teacher-student speech embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multilingual corpus.
    GenCorpus(GenCorpusArgs),
    /// Train a student encoder against the corpus teacher embeddings.
    Train(TrainArgs),
    /// Embed a manifest into a store file.
    Embed(EmbedArgs),
    /// Recall@k between stores, or over every language/modality pair.
    Retrieve(RetrieveArgs),
    /// Attention profiles, first-k mass and per-word logit sums.
    Attn(AttnArgs),
    /// Concept, entity and concept/value error rates.
    SluScore(SluArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GenCorpusArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    languages: Option<usize>,
    #[arg(long)]
    concepts: Option<usize>,
    /// Training meanings per language.
    #[arg(long)]
    sentences: Option<usize>,
    /// Extra meanings per language written to heldout.tsv.
    #[arg(long)]
    heldout: Option<usize>,
    #[arg(long)]
    dim_in: Option<usize>,
    #[arg(long)]
    dim_embed: Option<usize>,
    /// Strength of the per-language acoustic transform.
    #[arg(long)]
    accent: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Held-out manifest scored after every epoch.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    dim_hidden: Option<usize>,
    /// Attention dimension; 0 means the hidden dimension.
    #[arg(long)]
    dim_attn: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_pool: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Resample every language to this many utterances; 0 keeps the corpus as is.
    #[arg(long)]
    balance: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EmbedArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// speech|text
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct RetrieveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Query store (store mode).
    #[arg(long)]
    query: Option<PathBuf>,
    /// Search store (store mode).
    #[arg(long)]
    search: Option<PathBuf>,
    /// Gold map; defaults to ids shared by both stores.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Model (matrix mode).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Manifest (matrix mode).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// per-db|joint|none
    #[arg(long)]
    center: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct AttnArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// logits|weights
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    first_k: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    freq_n: Option<usize>,
    /// Also write profile.svg.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SluArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[arg(long)]
    tags: Option<PathBuf>,
    /// concept|entity
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Resolved key=value settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl Settings {
    /// `schema` lists every accepted key with its default (`None`: no default).
    fn resolve(
        command: &'static str,
        schema: &[(&str, Option<&str>)],
        config: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = schema
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        if let Some(path) = config {
            for (key, value) in parse_key_values(&read_text(path)?)? {
                let key = key.replace('-', "_");
                match key.as_str() {
                    "version" => continue,
                    "command" if value == command => continue,
                    "command" => {
                        return Err(SenseError::Config(format!(
                            "{}: written by '{value}', not '{command}'",
                            path.display()
                        )))
                    }
                    _ => {}
                }
                if !schema.iter().any(|(k, _)| *k == key) {
                    return Err(SenseError::Config(format!(
                        "{}: unknown key '{key}' for {command}",
                        path.display()
                    )));
                }
                values.insert(key, value);
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        Ok(Self { command, values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| SenseError::Config(format!("{}: missing required setting '{key}'", self.command)))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.trim()
            .parse()
            .map_err(|_| SenseError::Config(format!("invalid value '{raw}' for {key}")))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    pub fn to_meta(&self) -> String {
        let mut out = format!("# sense run metadata\ncommand={}\nversion={VERSION}\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn write_meta(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(RUN_META), self.to_meta().as_bytes())
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Retrieve(a) => cmd_retrieve(&a),
        Command::Attn(a) => cmd_attn(&a),
        Command::SluScore(a) => cmd_slu_score(&a),
    }
}

fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<String> {
    let accent = crate::corpus::DEFAULT_ACCENT_SCALE.to_string();
    let s = Settings::resolve(
        "gen-corpus",
        &[
            ("languages", Some("4")),
            ("concepts", Some("64")),
            ("sentences", Some("400")),
            ("heldout", Some("0")),
            ("dim_in", Some("16")),
            ("dim_embed", Some("32")),
            ("accent", Some(accent.as_str())),
            ("seed", Some("0")),
            ("out", None),
        ],
        a.config.as_deref(),
        vec![
            ("languages", opt(&a.languages)),
            ("concepts", opt(&a.concepts)),
            ("sentences", opt(&a.sentences)),
            ("heldout", opt(&a.heldout)),
            ("dim_in", opt(&a.dim_in)),
            ("dim_embed", opt(&a.dim_embed)),
            ("accent", opt(&a.accent)),
            ("seed", opt(&a.seed)),
            ("out", opt_path(&a.out)),
        ],
    )?;
    let sentences: usize = s.parse("sentences")?;
    let heldout: usize = s.parse("heldout")?;
    let mut spec = CorpusSpec::new(
        s.parse("languages")?,
        s.parse("concepts")?,
        sentences + heldout,
        s.parse("dim_in")?,
        s.parse("dim_embed")?,
        derive_seed(s.parse("seed")?, "corpus"),
    );
    spec.accent_scale = s.parse("accent")?;
    spec.validate()?;
    let out = s.path("out")?;

    let manifest = gen_corpus(&spec, &out)?;
    let mut summary = format!("wrote {} utterances to {}\n", manifest.len(), out.display());
    if heldout > 0 {
        let (train_part, held_part) = manifest.split_meanings(sentences);
        train_part.write(&out.join("train.tsv"))?;
        held_part.write(&out.join("heldout.tsv"))?;
        let _ = writeln!(
            summary,
            "train.tsv: {} utterances, heldout.tsv: {} utterances",
            train_part.len(),
            held_part.len()
        );
    }
    s.write_meta(&out)?;
    Ok(summary)
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    let d = TrainConfig::default();
    let defaults: Vec<String> = vec![
        d.epochs.to_string(),
        d.batch_size.to_string(),
        d.lr_encoder.to_string(),
        d.lr_pool.to_string(),
        d.beta1.to_string(),
        d.beta2.to_string(),
        d.eps.to_string(),
        d.checkpoint_every.to_string(),
    ];
    let s = Settings::resolve(
        "train",
        &[
            ("manifest", None),
            ("heldout", None),
            ("dim_hidden", Some("32")),
            ("dim_attn", Some("0")),
            ("epochs", Some(&defaults[0])),
            ("batch_size", Some(&defaults[1])),
            ("lr_encoder", Some(&defaults[2])),
            ("lr_pool", Some(&defaults[3])),
            ("beta1", Some(&defaults[4])),
            ("beta2", Some(&defaults[5])),
            ("eps", Some(&defaults[6])),
            ("checkpoint_every", Some(&defaults[7])),
            ("balance", Some("0")),
            ("seed", Some("0")),
            ("out", None),
        ],
        a.config.as_deref(),
        vec![
            ("manifest", opt_path(&a.manifest)),
            ("heldout", opt_path(&a.heldout)),
            ("dim_hidden", opt(&a.dim_hidden)),
            ("dim_attn", opt(&a.dim_attn)),
            ("epochs", opt(&a.epochs)),
            ("batch_size", opt(&a.batch_size)),
            ("lr_encoder", opt(&a.lr_encoder)),
            ("lr_pool", opt(&a.lr_pool)),
            ("beta1", opt(&a.beta1)),
            ("beta2", opt(&a.beta2)),
            ("eps", opt(&a.eps)),
            ("checkpoint_every", opt(&a.checkpoint_every)),
            ("balance", opt(&a.balance)),
            ("seed", opt(&a.seed)),
            ("out", opt_path(&a.out)),
        ],
    )?;

    let seed: u64 = s.parse("seed")?;
    let mut config = TrainConfig::default();
    for key in [
        "epochs",
        "batch_size",
        "lr_encoder",
        "lr_pool",
        "beta1",
        "beta2",
        "eps",
        "checkpoint_every",
    ] {
        config.set(key, s.require(key)?)?;
    }
    config.seed = derive_seed(seed, "training");
    config.validate()?;

    let mut manifest = Manifest::load(&s.path("manifest")?)?;
    let balance: usize = s.parse("balance")?;
    if balance > 0 {
        manifest = balance_languages(&manifest, balance)?;
    }
    let heldout = match s.get("heldout") {
        Some(p) => Some(load_examples(&Manifest::load(Path::new(p))?)?),
        None => None,
    };

    let d_h: usize = s.parse("dim_hidden")?;
    let d_a = match s.parse::<usize>("dim_attn")? {
        0 => d_h,
        n => n,
    };
    let dims = ModelDims::new(manifest.d_in, d_h, manifest.d_e).with_attention_dim(d_a);
    let params = ModelParams::init(dims, derive_seed(seed, "model"))?;

    let out = s.path("out")?;
    std::fs::create_dir_all(&out).map_err(|e| SenseError::io(&out, e))?;
    let (_, report) = train(
        &config,
        &manifest,
        params,
        TrainOptions { heldout: heldout.as_deref(), out_dir: Some(&out) },
    )?;
    s.write_meta(&out)?;

    let last = report.last().expect("at least one epoch");
    let mut summary = format!(
        "trained {} epochs on {} utterances; final mean loss {:.6}\n",
        report.epochs.len(),
        manifest.len(),
        last.mean_loss
    );
    if let Some(c) = last.heldout_mean_cosine {
        let _ = writeln!(summary, "held-out mean cosine {c:.6}");
    }
    Ok(summary)
}

fn cmd_embed(a: &EmbedArgs) -> Result<String> {
    let s = Settings::resolve(
        "embed",
        &[("model", None), ("manifest", None), ("modality", Some("speech")), ("out", None)],
        a.config.as_deref(),
        vec![
            ("model", opt_path(&a.model)),
            ("manifest", opt_path(&a.manifest)),
            ("modality", a.modality.clone()),
            ("out", opt_path(&a.out)),
        ],
    )?;
    let modality: Modality = s.require("modality")?.parse()?;
    let manifest = Manifest::load(&s.path("manifest")?)?;
    let store = match modality {
        Modality::Text => embed_text(&manifest)?,
        Modality::Speech => embed_manifest(&ModelParams::load(&s.path("model")?)?, &manifest, modality)?,
    };
    let out = s.path("out")?;
    let path = out.join("embeddings.emb");
    store.save(&path)?;
    s.write_meta(&out)?;
    Ok(format!("wrote {} {} embeddings to {}\n", store.len(), modality.as_str(), path.display()))
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<String> {
    let s = Settings::resolve(
        "retrieve",
        &[
            ("query", None),
            ("search", None),
            ("gold", None),
            ("model", None),
            ("manifest", None),
            ("center", Some(Centering::default().as_str())),
            ("k", Some("1")),
            ("out", None),
        ],
        a.config.as_deref(),
        vec![
            ("query", opt_path(&a.query)),
            ("search", opt_path(&a.search)),
            ("gold", opt_path(&a.gold)),
            ("model", opt_path(&a.model)),
            ("manifest", opt_path(&a.manifest)),
            ("center", a.center.clone()),
            ("k", opt(&a.k)),
            ("out", opt_path(&a.out)),
        ],
    )?;
    let centering: Centering = s.require("center")?.parse()?;
    let k: usize = s.parse("k")?;
    let out = s.path("out")?;

    let report = match (s.get("query"), s.get("search"), s.get("manifest")) {
        (Some(q), Some(sp), None) => {
            let (qp, sp) = (Path::new(q), Path::new(sp));
            let query = EmbeddingStore::load(qp)?;
            let search = EmbeddingStore::load(sp)?;
            let gold = match s.get("gold") {
                Some(g) => GoldMap::load(Path::new(g))?,
                None => shared_ids(&query, &search)?,
            };
            let recall = recall_at_k(&query, &search, &gold, k, centering)?;
            let label = |p: &Path| p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
            RetrievalReport {
                rows: vec![ReportRow {
                    query_lang: label(qp),
                    query_mod: "store".into(),
                    search_lang: label(sp),
                    search_mod: "store".into(),
                    n_query: query.len(),
                    n_search: search.len(),
                    k,
                    recall,
                }],
            }
        }
        (None, None, Some(m)) => {
            let manifest = Manifest::load(Path::new(m))?;
            let params = ModelParams::load(&s.path("model")?)?;
            retrieval_matrix(&all_scenarios(&manifest), &params, k, centering)?
        }
        _ => {
            return Err(SenseError::Config(
                "retrieve needs either --query and --search, or --model and --manifest".into(),
            ))
        }
    };
    let path = out.join("retrieval.csv");
    write_atomic(&path, report.to_csv().as_bytes())?;
    s.write_meta(&out)?;
    Ok(report.to_csv())
}

fn shared_ids(query: &EmbeddingStore, search: &EmbeddingStore) -> Result<GoldMap> {
    let pairs: Vec<(String, String)> = query
        .ids()
        .iter()
        .filter(|id| search.position(id).is_some())
        .map(|id| (id.clone(), id.clone()))
        .collect();
    if pairs.is_empty() {
        return Err(SenseError::Input("query and search stores share no ids; pass --gold".into()));
    }
    Ok(GoldMap::new(pairs))
}

/// Every ordered language pair in every modality pair, except a language
/// searched against itself in the same modality.
pub fn all_scenarios(manifest: &Manifest) -> Vec<Scenario> {
    let mods = [Modality::Speech, Modality::Text];
    let mut out = Vec::new();
    for qm in mods {
        for sm in mods {
            for ql in 0..manifest.num_langs {
                for sl in 0..manifest.num_langs {
                    if ql == sl && qm == sm {
                        continue;
                    }
                    let sc = Scenario::cross_lingual(manifest, ql, qm, sl, sm);
                    if !sc.gold.is_empty() {
                        out.push(sc);
                    }
                }
            }
        }
    }
    out
}

fn cmd_attn(a: &AttnArgs) -> Result<String> {
    let s = Settings::resolve(
        "attn",
        &[
            ("model", None),
            ("manifest", None),
            ("source", Some(ValueSource::default().as_str())),
            ("grid", Some("100")),
            ("first_k", Some("5")),
            ("top_n", Some("10")),
            ("freq_n", Some("10")),
            ("svg", Some("false")),
            ("out", None),
        ],
        a.config.as_deref(),
        vec![
            ("model", opt_path(&a.model)),
            ("manifest", opt_path(&a.manifest)),
            ("source", a.source.clone()),
            ("grid", opt(&a.grid)),
            ("first_k", opt(&a.first_k)),
            ("top_n", opt(&a.top_n)),
            ("freq_n", opt(&a.freq_n)),
            ("svg", a.svg.then(|| "true".to_string())),
            ("out", opt_path(&a.out)),
        ],
    )?;
    let source: ValueSource = s.require("source")?.parse()?;
    let grid: usize = s.parse("grid")?;
    let first_k: usize = s.parse("first_k")?;
    let svg: bool = s.parse("svg")?;
    let params = ModelParams::load(&s.path("model")?)?;
    let manifest = Manifest::load(&s.path("manifest")?)?;
    if manifest.is_empty() {
        return Err(SenseError::Input("manifest has no utterances".into()));
    }

    let mut records = Vec::with_capacity(manifest.len());
    let mut stats = Vec::new();
    for entry in &manifest.entries {
        let seq = manifest.load_frames(entry)?;
        let record = forward(&params, &seq)?.attention;
        stats.extend(word_logit_sums(&record, &seq.alignment)?);
        records.push(record);
    }

    let profile = average_profile(&records, source, grid)?;
    let mut first = String::from("utt_id,k,mass_fraction,frame_fraction\n");
    for r in &records {
        let m = first_k_mass(r, first_k)?;
        let _ = writeln!(first, "{},{first_k},{:.9},{:.9}", r.utt_id, m.mass_fraction, m.frame_fraction);
    }
    let mean = mean_first_k_mass(&records, first_k)?;
    let _ = writeln!(first, "mean,{first_k},{:.9},{:.9}", mean.mass_fraction, mean.frame_fraction);
    let reports = word_reports(&stats, s.parse("top_n")?, s.parse("freq_n")?)?;

    let out = s.path("out")?;
    write_atomic(&out.join("profile.csv"), profile.to_csv().as_bytes())?;
    write_atomic(&out.join("first_k.csv"), first.as_bytes())?;
    write_atomic(&out.join("word_stats.csv"), stats_to_csv(&stats).as_bytes())?;
    write_atomic(&out.join("top_words.csv"), reports.top_csv().as_bytes())?;
    write_atomic(&out.join("frequent_words.csv"), reports.frequent_csv().as_bytes())?;
    if svg {
        let title = format!("mean attention {} by normalized position", source.as_str());
        write_atomic(&out.join("profile.svg"), profile.to_svg(&title).as_bytes())?;
    }
    s.write_meta(&out)?;
    Ok(format!(
        "{} utterances; first {first_k} frames carry {:.2}% of attention over {:.2}% of frames\n",
        records.len(),
        100.0 * mean.mass_fraction,
        100.0 * mean.frame_fraction
    ))
}

fn cmd_slu_score(a: &SluArgs) -> Result<String> {
    let s = Settings::resolve(
        "slu-score",
        &[("ref", None), ("hyp", None), ("tags", None), ("kind", Some("concept")), ("out", None)],
        a.config.as_deref(),
        vec![
            ("ref", opt_path(&a.reference)),
            ("hyp", opt_path(&a.hyp)),
            ("tags", opt_path(&a.tags)),
            ("kind", a.kind.clone()),
            ("out", opt_path(&a.out)),
        ],
    )?;
    let table = TagTable::load(&s.path("tags")?)?;
    let refs = parse_transcripts(&read_text(&s.path("ref")?)?, &table, "reference")?;
    let hyps = parse_transcripts(&read_text(&s.path("hyp")?)?, &table, "hypothesis")?;
    let ref_labels: Vec<_> = refs.iter().map(|t| t.labels()).collect();
    let hyp_labels: Vec<_> = hyps.iter().map(|t| t.labels()).collect();
    let rows = match s.require("kind")? {
        "concept" => {
            let ref_pairs: Vec<_> = refs.into_iter().map(|t| t.pairs).collect();
            let hyp_pairs: Vec<_> = hyps.into_iter().map(|t| t.pairs).collect();
            vec![
                ("COER", label_error_rate(&ref_labels, &hyp_labels)?),
                ("CVER", concept_value_error_rate(&ref_pairs, &hyp_pairs)?),
            ]
        }
        "entity" => vec![("NEER", label_error_rate(&ref_labels, &hyp_labels)?)],
        other => return Err(SenseError::Config(format!("unknown kind '{other}' (concept|entity)"))),
    };
    let csv = scores_to_csv(&rows);
    let out = s.path("out")?;
    write_atomic(&out.join("scores.csv"), csv.as_bytes())?;
    s.write_meta(&out)?;
    Ok(csv)
}
