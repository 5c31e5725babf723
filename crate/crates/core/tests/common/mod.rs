//! Helpers shared by integration test targets.

use ndarray::Array2;
use sense_core::corpus::FrameSequence;
use sense_core::model::{backward, forward, ModelDims, ModelParams};
use sense_core::rng::SplitMix64;
use sense_core::training::{cosine_loss, loss_grad};

pub const FD_EPS: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Random model (non-zero biases), frames and teacher.
pub fn gradient_instance(seed: u64, t: usize) -> (ModelParams, FrameSequence, Vec<f64>) {
    let dims = ModelDims::new(3, 4, 2).with_attention_dim(3);
    let mut params = ModelParams::init(dims, seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    for (_, _, tensor) in params.tensors_mut() {
        for x in tensor.iter_mut() {
            *x += 0.3 * rng.normal();
        }
    }
    let frames = Array2::from_shape_fn((t, 3), |_| rng.normal());
    let teacher = rng.normals(2);
    let seq = FrameSequence { utt_id: format!("r{seed}"), frames, alignment: vec![] };
    (params, seq, teacher)
}

fn loss_of(params: &ModelParams, seq: &FrameSequence, teacher: &[f64]) -> f64 {
    cosine_loss(&forward(params, seq).unwrap().embedding, teacher).unwrap()
}

pub struct GradientMismatch {
    pub seed: u64,
    pub t: usize,
    pub name: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare every analytic partial against central differences. Returns the
/// number of partials checked, the worst relative error and any mismatches
/// above `tol`.
pub fn check_gradients(seeds: std::ops::Range<u64>, tol: f64) -> (usize, f64, Vec<GradientMismatch>) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut bad = Vec::new();
    for seed in seeds {
        let t = [1, 2, 5, 9][seed as usize % 4];
        let (params, seq, teacher) = gradient_instance(seed, t);
        let fwd = forward(&params, &seq).unwrap();
        let g_s = loss_grad(&fwd.embedding, &teacher).unwrap();
        let grads = backward(&params, &seq, &fwd, &g_s).unwrap();
        for (k, (name, _, analytic)) in grads.tensors().iter().enumerate() {
            for i in 0..analytic.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[k].2[i] += FD_EPS;
                let mut minus = params.clone();
                minus.tensors_mut()[k].2[i] -= FD_EPS;
                let numeric = (loss_of(&plus, &seq, &teacher) - loss_of(&minus, &seq, &teacher)) / (2.0 * FD_EPS);
                let err = relative_error(analytic[i], numeric);
                if err >= tol {
                    bad.push(GradientMismatch { seed, t, name, index: i, analytic: analytic[i], numeric });
                }
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    (checked, worst, bad)
}
