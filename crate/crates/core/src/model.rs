//! Student encoder: per-frame ReLU network, attentive pooling, linear
//! projection and tanh, with hand-derived gradients.
//!
//! ```text
//! h_t = relu(W2 relu(W1 x_t + b1) + b2)
//! e_t = v . tanh(Wa h_t + ba)
//! a   = softmax(e)
//! c   = sum_t a_t h_t
//! s   = tanh(P c + bp)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::corpus::FrameSequence;
use crate::error::{Result, SenseError};
use crate::rng::SplitMix64;
use crate::textio::{fmt_reals, parse_field, parse_reals, read_text, write_atomic};

const MODEL_MAGIC: &str = "SENSE-MODEL 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_in: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_e: usize,
}

impl ModelDims {
    /// Attention inner dimension defaults to `d_h`.
    pub fn new(d_in: usize, d_h: usize, d_e: usize) -> Self {
        Self { d_in, d_h, d_a: d_h, d_e }
    }

    pub fn with_attention_dim(self, d_a: usize) -> Self {
        Self { d_a, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_h == 0 || self.d_a == 0 || self.d_e == 0 {
            return Err(SenseError::Config(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Per-frame encoder: `W1, b1, W2, b2`.
    Encoder,
    /// Attentive pooling and projection: `Wa, ba, v, P, bp`.
    Pooling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wa: Array2<f64>,
    pub ba: Array1<f64>,
    pub v: Array1<f64>,
    pub p: Array2<f64>,
    pub bp: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 9] = ["W1", "b1", "W2", "b2", "Wa", "ba", "v", "P", "bp"];

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { d_in, d_h, d_a, d_e } = dims;
        Self {
            dims,
            w1: Array2::zeros((d_h, d_in)),
            b1: Array1::zeros(d_h),
            w2: Array2::zeros((d_h, d_h)),
            b2: Array1::zeros(d_h),
            wa: Array2::zeros((d_a, d_h)),
            ba: Array1::zeros(d_a),
            v: Array1::zeros(d_a),
            p: Array2::zeros((d_e, d_h)),
            bp: Array1::zeros(d_e),
        }
    }

    /// Glorot-uniform weights, zero biases; `v` uses `sqrt(6 / (d_a + 1))`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut params = Self::zeros(dims);
        let glorot = |name: &str, rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = SplitMix64::keyed(seed, &format!("init/{name}"));
            Array2::from_shape_fn((rows, cols), |_| rng.uniform(-bound, bound))
        };
        params.w1 = glorot("W1", dims.d_h, dims.d_in);
        params.w2 = glorot("W2", dims.d_h, dims.d_h);
        params.wa = glorot("Wa", dims.d_a, dims.d_h);
        params.p = glorot("P", dims.d_e, dims.d_h);
        params.v = glorot("v", dims.d_a, 1).into_shape_with_order(dims.d_a).expect("column");
        Ok(params)
    }

    /// `(name, group, values)` for every tensor, in file order.
    pub fn tensors(&self) -> [(&'static str, ParamGroup, &[f64]); 9] {
        use ParamGroup::*;
        let s = contiguous;
        [
            ("W1", Encoder, s(self.w1.as_slice())),
            ("b1", Encoder, s(self.b1.as_slice())),
            ("W2", Encoder, s(self.w2.as_slice())),
            ("b2", Encoder, s(self.b2.as_slice())),
            ("Wa", Pooling, s(self.wa.as_slice())),
            ("ba", Pooling, s(self.ba.as_slice())),
            ("v", Pooling, s(self.v.as_slice())),
            ("P", Pooling, s(self.p.as_slice())),
            ("bp", Pooling, s(self.bp.as_slice())),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, ParamGroup, &mut [f64]); 9] {
        use ParamGroup::*;
        let s = contiguous_mut;
        [
            ("W1", Encoder, s(self.w1.as_slice_mut())),
            ("b1", Encoder, s(self.b1.as_slice_mut())),
            ("W2", Encoder, s(self.w2.as_slice_mut())),
            ("b2", Encoder, s(self.b2.as_slice_mut())),
            ("Wa", Pooling, s(self.wa.as_slice_mut())),
            ("ba", Pooling, s(self.ba.as_slice_mut())),
            ("v", Pooling, s(self.v.as_slice_mut())),
            ("P", Pooling, s(self.p.as_slice_mut())),
            ("bp", Pooling, s(self.bp.as_slice_mut())),
        ]
    }

    fn shape_of(&self, name: &str) -> Vec<usize> {
        match name {
            "W1" => self.w1.shape().to_vec(),
            "W2" => self.w2.shape().to_vec(),
            "Wa" => self.wa.shape().to_vec(),
            "P" => self.p.shape().to_vec(),
            "b1" => self.b1.shape().to_vec(),
            "b2" => self.b2.shape().to_vec(),
            "ba" => self.ba.shape().to_vec(),
            "v" => self.v.shape().to_vec(),
            "bp" => self.bp.shape().to_vec(),
            _ => unreachable!("unknown tensor {name}"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn to_text(&self) -> String {
        let d = self.dims;
        let mut out = format!("{MODEL_MAGIC}\ndims {} {} {} {}\n", d.d_in, d.d_h, d.d_a, d.d_e);
        for (name, _, values) in self.tensors() {
            let shape = self.shape_of(name);
            let shape_txt: Vec<String> = shape.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "[{name} {}]", shape_txt.join(" "));
            let cols = *shape.last().expect("non-empty shape");
            for row in values.chunks(cols) {
                out.push_str(&fmt_reals(row));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ctx = "model file";
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(SenseError::parse(ctx, "missing SENSE-MODEL 1 header"));
        }
        let dims_line = lines
            .next()
            .ok_or_else(|| SenseError::parse(ctx, "missing dims line"))?;
        let toks: Vec<&str> = dims_line.split_whitespace().collect();
        if toks.len() != 5 || toks[0] != "dims" {
            return Err(SenseError::parse(ctx, format!("bad dims line '{dims_line}'")));
        }
        let dims = ModelDims {
            d_in: parse_field(toks[1], "d_in", ctx)?,
            d_h: parse_field(toks[2], "d_h", ctx)?,
            d_a: parse_field(toks[3], "d_a", ctx)?,
            d_e: parse_field(toks[4], "d_e", ctx)?,
        };
        dims.validate()?;
        let mut params = Self::zeros(dims);
        let mut seen = [false; 9];
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let inner = line
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .ok_or_else(|| SenseError::parse(ctx, format!("expected section, got '{line}'")))?;
            let mut toks = inner.split_whitespace();
            let name = toks.next().unwrap_or_default();
            let idx = PARAM_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| SenseError::parse(ctx, format!("unknown tensor '{name}'")))?;
            let shape = toks
                .map(|t| parse_field::<usize>(t, "dimension", ctx))
                .collect::<Result<Vec<_>>>()?;
            if shape != params.shape_of(name) {
                return Err(SenseError::Shape(format!(
                    "tensor {name} has shape {shape:?}, expected {:?}",
                    params.shape_of(name)
                )));
            }
            let rows = if shape.len() == 2 { shape[0] } else { 1 };
            let mut values = Vec::new();
            for _ in 0..rows {
                let row = lines
                    .next()
                    .ok_or_else(|| SenseError::parse(ctx, format!("tensor {name} truncated")))?;
                values.extend(parse_reals(row, ctx)?);
            }
            let (_, _, dst) = &mut params.tensors_mut()[idx];
            if values.len() != dst.len() {
                return Err(SenseError::Shape(format!("tensor {name} has wrong value count")));
            }
            dst.copy_from_slice(&values);
            seen[idx] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(SenseError::parse(ctx, format!("missing tensor {}", PARAM_NAMES[i])));
        }
        if !params.is_finite() {
            return Err(SenseError::parse(ctx, "non-finite parameter value"));
        }
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn contiguous(a: Option<&[f64]>) -> &[f64] {
    a.expect("standard layout")
}

fn contiguous_mut(a: Option<&mut [f64]>) -> &mut [f64] {
    a.expect("standard layout")
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub ModelParams);

impl ParamGrads {
    pub fn zeros(dims: ModelDims) -> Self {
        ParamGrads(ModelParams::zeros(dims))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for ((_, _, dst), (_, _, src)) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.0.tensors().iter().all(|(_, _, t)| t.iter().all(|&x| x == 0.0))
    }
}

impl std::ops::Deref for ParamGrads {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

/// Pre-softmax logits and post-softmax weights, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub utt_id: String,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / sum).collect()
}

/// Everything a forward pass computes, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Utterance embedding `s`.
    pub embedding: Vec<f64>,
    /// Frame states `H`, `T x d_h`.
    pub hidden: Array2<f64>,
    pub attention: AttentionRecord,
    /// Pooled vector `c`.
    pub pooled: Vec<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    /// `tanh(Wa h_t + ba)`, `T x d_a`.
    att_act: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_frames(params: &ModelParams, frames: ArrayView2<f64>, utt_id: &str) -> Result<()> {
    if frames.nrows() == 0 {
        return Err(SenseError::Shape(format!("{utt_id}: empty frame sequence")));
    }
    if frames.ncols() != params.dims.d_in {
        return Err(SenseError::Shape(format!(
            "{utt_id}: frame dim {} != model d_in {}",
            frames.ncols(),
            params.dims.d_in
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, seq: &FrameSequence) -> Result<ForwardPass> {
    forward_frames(params, seq.frames.view(), &seq.utt_id)
}

pub fn forward_frames(params: &ModelParams, x: ArrayView2<f64>, utt_id: &str) -> Result<ForwardPass> {
    check_frames(params, x, utt_id)?;

    let pre1 = x.dot(&params.w1.t()) + &params.b1;
    let act1 = pre1.mapv(relu);
    let pre2 = act1.dot(&params.w2.t()) + &params.b2;
    let hidden = pre2.mapv(relu);

    let att_act = (hidden.dot(&params.wa.t()) + &params.ba).mapv(f64::tanh);
    let logits = att_act.dot(&params.v).to_vec();
    let weights = softmax(&logits);

    let pooled = hidden.t().dot(&Array1::from(weights.clone()));
    let embedding = (params.p.dot(&pooled) + &params.bp).mapv(f64::tanh).to_vec();

    Ok(ForwardPass {
        embedding,
        hidden,
        attention: AttentionRecord {
            utt_id: utt_id.to_string(),
            logits,
            weights,
        },
        pooled: pooled.to_vec(),
        pre1,
        act1,
        pre2,
        att_act,
    })
}

/// Gradients of `grad_s . s` with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    seq: &FrameSequence,
    fwd: &ForwardPass,
    grad_s: &[f64],
) -> Result<ParamGrads> {
    backward_frames(params, seq.frames.view(), fwd, grad_s)
}

pub fn backward_frames(
    params: &ModelParams,
    x: ArrayView2<f64>,
    fwd: &ForwardPass,
    grad_s: &[f64],
) -> Result<ParamGrads> {
    let dims = params.dims;
    let t_len = x.nrows();
    check_frames(params, x, &fwd.attention.utt_id)?;
    if grad_s.len() != dims.d_e
        || fwd.embedding.len() != dims.d_e
        || fwd.hidden.dim() != (t_len, dims.d_h)
        || fwd.att_act.dim() != (t_len, dims.d_a)
        || fwd.attention.len() != t_len
        || fwd.pooled.len() != dims.d_h
    {
        return Err(SenseError::Shape(format!(
            "{}: cached forward values do not match parameters or frames",
            fwd.attention.utt_id
        )));
    }

    let mut g = ParamGrads::zeros(dims);
    let grads = &mut g.0;

    // s = tanh(z)
    let gz: Array1<f64> = grad_s
        .iter()
        .zip(&fwd.embedding)
        .map(|(gs, s)| gs * (1.0 - s * s))
        .collect();
    let pooled = Array1::from(fwd.pooled.clone());
    grads.p = outer(&gz, &pooled);
    grads.bp = gz.clone();
    let gc = params.p.t().dot(&gz);

    // c = sum_t a_t h_t
    let weights = Array1::from(fwd.attention.weights.clone());
    let mut g_hidden = outer(&weights, &gc);
    let g_weights = fwd.hidden.dot(&gc);

    // a = softmax(e): de_t = a_t (da_t - sum_u a_u da_u)
    let mean_g = weights.dot(&g_weights);
    let g_logits: Array1<f64> = weights
        .iter()
        .zip(&g_weights)
        .map(|(a, ga)| a * (ga - mean_g))
        .collect();

    // e_t = v . u_t, u_t = tanh(Wa h_t + ba)
    grads.v = fwd.att_act.t().dot(&g_logits);
    let mut g_att_pre = outer(&g_logits, &params.v);
    g_att_pre.zip_mut_with(&fwd.att_act, |g, u| *g *= 1.0 - u * u);
    grads.wa = g_att_pre.t().dot(&fwd.hidden);
    grads.ba = g_att_pre.sum_axis(Axis(0));
    g_hidden += &g_att_pre.dot(&params.wa);

    // h = relu(W2 a1 + b2)
    let mut g_pre2 = g_hidden;
    g_pre2.zip_mut_with(&fwd.pre2, |g, z| *g *= relu_grad(*z));
    grads.w2 = g_pre2.t().dot(&fwd.act1);
    grads.b2 = g_pre2.sum_axis(Axis(0));

    // a1 = relu(W1 x + b1)
    let mut g_pre1 = g_pre2.dot(&params.w2);
    g_pre1.zip_mut_with(&fwd.pre1, |g, z| *g *= relu_grad(*z));
    grads.w1 = g_pre1.t().dot(&x);
    grads.b1 = g_pre1.sum_axis(Axis(0));

    Ok(g)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
