//! Cosine-distance alignment of student embeddings to frozen teacher
//! embeddings, optimized with Adam using separate learning rates for the
//! per-frame encoder and for the pooling/projection head.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{FrameSequence, Manifest};
use crate::error::{Result, SenseError};
use crate::model::{backward, forward, ModelParams, ParamGrads, ParamGroup};
use crate::rng::SplitMix64;
use crate::textio::write_atomic;

pub const TRAIN_CONFIG_KEYS: [&str; 9] = [
    "epochs",
    "batch_size",
    "lr_encoder",
    "lr_pool",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "checkpoint_every",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_pool: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lr_encoder: 1e-3,
            lr_pool: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SenseError::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lr_encoder >= 0.0 && self.lr_pool >= 0.0)
            || !self.lr_encoder.is_finite()
            || !self.lr_pool.is_finite()
        {
            return fail("learning rates must be finite and non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("beta1 and beta2 must lie in (0, 1)");
        }
        if self.eps <= 0.0 || !self.eps.is_finite() {
            return fail("eps must be positive");
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || SenseError::Config(format!("invalid value '{value}' for {key}"));
        let v = value.trim();
        match key {
            "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
            "lr_encoder" => self.lr_encoder = v.parse().map_err(|_| bad())?,
            "lr_pool" => self.lr_pool = v.parse().map_err(|_| bad())?,
            "beta1" => self.beta1 = v.parse().map_err(|_| bad())?,
            "beta2" => self.beta2 = v.parse().map_err(|_| bad())?,
            "eps" => self.eps = v.parse().map_err(|_| bad())?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "checkpoint_every" => self.checkpoint_every = v.parse().map_err(|_| bad())?,
            _ => return Err(SenseError::Config(format!("unknown training key '{key}'"))),
        }
        Ok(())
    }

    /// Parse a `key=value` file; every key must be one of [`TRAIN_CONFIG_KEYS`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "epochs={}\nbatch_size={}\nlr_encoder={}\nlr_pool={}\nbeta1={}\nbeta2={}\neps={}\nseed={}\ncheckpoint_every={}\n",
            self.epochs,
            self.batch_size,
            self.lr_encoder,
            self.lr_pool,
            self.beta1,
            self.beta2,
            self.eps,
            self.seed,
            self.checkpoint_every
        )
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Pooling => self.lr_pool,
        }
    }
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped; later
/// keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            SenseError::Config(format!("line {}: expected key=value, got '{line}'", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(SenseError::Shape(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(SenseError::Domain("cosine of a zero-norm vector".into()));
    }
    Ok((nu, nv))
}

/// `(u . v) / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cos(s, t)`, in `[0, 2]`.
pub fn cosine_loss(s: &[f64], t: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(s, t)?)
}

/// `dL/ds = -(t / (|s||t|) - (s.t) s / (|s|^3 |t|))`.
pub fn loss_grad(s: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    let (ns, nt) = check_pair(s, t)?;
    let st = dot(s, t);
    let a = 1.0 / (ns * nt);
    let b = st / (ns * ns * ns * nt);
    Ok(s.iter().zip(t).map(|(si, ti)| -(ti * a - si * b)).collect())
}

/// A training or evaluation example: frames plus the frozen teacher target.
#[derive(Debug, Clone)]
pub struct Example {
    pub seq: FrameSequence,
    pub teacher: Vec<f64>,
}

pub fn load_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(Example {
                seq: manifest.load_frames(e)?,
                teacher: manifest.teacher(e)?.into_vec(),
            })
        })
        .collect()
}

/// Mean cosine between student and teacher over `examples`.
pub fn mean_cosine(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(SenseError::Input("mean cosine over an empty set".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let fwd = forward(params, &ex.seq)?;
        total += cosine_similarity(&fwd.embedding, &ex.teacher)?;
    }
    Ok(total / examples.len() as f64)
}

/// Adam with bias correction; one learning rate per [`ParamGroup`].
#[derive(Debug, Clone)]
pub struct Adam {
    first: ParamGrads,
    second: ParamGrads,
    step: i32,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first: ParamGrads::zeros(params.dims),
            second: ParamGrads::zeros(params.dims),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.first.0.tensors_mut())
            .zip(self.second.0.tensors_mut())
            .zip(grads.tensors());
        for ((((_, group, p), (_, _, m)), (_, _, v)), (_, _, g)) in tensors {
            let lr = cfg.lr(group);
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_mean_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_params_path: Option<PathBuf>,
}

impl TrainReport {
    /// CSV `epoch,mean_loss,heldout_mean_cosine`; the cosine column is empty
    /// when no held-out set was given.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,heldout_mean_cosine\n");
        for e in &self.epochs {
            let cos = e.heldout_mean_cosine.map(|c| format!("{c:.9}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.9},{}", e.epoch, e.mean_loss, cos);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub heldout: Option<&'a [Example]>,
    /// Where checkpoints and the final model are written, if anywhere.
    pub out_dir: Option<&'a Path>,
}

/// Train on `manifest`, loading frames from disk.
pub fn train(
    config: &TrainConfig,
    manifest: &Manifest,
    params: ModelParams,
    options: TrainOptions<'_>,
) -> Result<(ModelParams, TrainReport)> {
    if manifest.is_empty() {
        return Err(SenseError::Config("training manifest is empty".into()));
    }
    let examples = load_examples(manifest)?;
    train_examples(config, &examples, params, options)
}

/// Train on preloaded examples. Every epoch the canonical order of
/// `examples` is permuted by the seeded generator and sliced into
/// `batch_size` batches.
pub fn train_examples(
    config: &TrainConfig,
    examples: &[Example],
    mut params: ModelParams,
    options: TrainOptions<'_>,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(SenseError::Config("training set is empty".into()));
    }
    if let Some(ex) = examples.iter().find(|ex| ex.teacher.len() != params.dims.d_e) {
        return Err(SenseError::Shape(format!(
            "{}: teacher dim {} != model d_e {}",
            ex.seq.utt_id,
            ex.teacher.len(),
            params.dims.d_e
        )));
    }

    let mut rng = SplitMix64::keyed(config.seed, "train/batches");
    let mut adam = Adam::new(&params);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=config.epochs {
        // Permute from canonical order every epoch, then slice.
        order.sort_unstable();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let mut grads = ParamGrads::zeros(params.dims);
            let mut batch_loss = 0.0;
            for ex in batch.iter() {
                let fwd = forward(&params, &ex.seq)?;
                let loss = cosine_loss(&fwd.embedding, &ex.teacher);
                let (loss, g_s) = match loss {
                    Ok(l) if l.is_finite() => (l, loss_grad(&fwd.embedding, &ex.teacher)?),
                    _ => {
                        return Err(SenseError::NonFinite {
                            epoch,
                            batch: b,
                            utt_id: ex.seq.utt_id.clone(),
                        })
                    }
                };
                batch_loss += loss;
                let g = backward(&params, &ex.seq, &fwd, &g_s)?;
                if !g.is_finite() {
                    return Err(SenseError::NonFinite {
                        epoch,
                        batch: b,
                        utt_id: ex.seq.utt_id.clone(),
                    });
                }
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(SenseError::NonFinite {
                    epoch,
                    batch: b,
                    utt_id: batch[0].seq.utt_id.clone(),
                });
            }
            epoch_loss += batch_loss;
            adam.step(&mut params, &grads, config);
        }

        let heldout_mean_cosine = match options.heldout {
            Some(h) if !h.is_empty() => Some(mean_cosine(&params, h)?),
            _ => None,
        };
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / examples.len() as f64,
            heldout_mean_cosine,
        });

        if let Some(dir) = options.out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                params.save(&dir.join(format!("checkpoint-{epoch:04}.model")))?;
            }
        }
    }

    if let Some(dir) = options.out_dir {
        let path = dir.join("model.sense");
        params.save(&path)?;
        write_atomic(&dir.join("train_report.csv"), report.to_csv().as_bytes())?;
        report.final_params_path = Some(path);
    }
    Ok((params, report))
}
