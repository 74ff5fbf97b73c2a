//! Finite-difference verification of the hand-written backward pass.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Autoencoder, LayerGrads, TrainPass};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub samples_per_tensor: usize,
    /// Relative error is `|a - n| / max(|a|, |n|, abs_floor)`.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            samples_per_tensor: 200,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest relative errors first.
    pub worst: Vec<GradMismatch>,
}

/// Central difference of the batch loss along one parameter coordinate.
pub fn finite_difference(
    model: &Autoencoder,
    x: ArrayView2<f64>,
    tensor: usize,
    index: usize,
    step: f64,
) -> f64 {
    let mut m = model.clone();
    let orig = m.param_slices_mut()[tensor][index];
    m.param_slices_mut()[tensor][index] = orig + step;
    let up = m.batch_loss(x);
    m.param_slices_mut()[tensor][index] = orig - step;
    let down = m.batch_loss(x);
    (up - down) / (2.0 * step)
}

/// Compare supplied analytic gradients against finite differences.
pub fn check_gradients(
    model: &Autoencoder,
    x: ArrayView2<f64>,
    grads: &[LayerGrads],
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let names = model.param_names();
    let analytic: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut all = Vec::new();
    for (t, g) in analytic.iter().enumerate() {
        let coords: Vec<usize> = if g.len() <= opts.samples_per_tensor {
            (0..g.len()).collect()
        } else {
            let mut c = sample(&mut rng, g.len(), opts.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let numeric = finite_difference(model, x, t, i, opts.step);
            let a = g[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            all.push(GradMismatch {
                param: names[t].clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
            });
        }
    }
    all.sort_by(|p, q| q.rel_error.total_cmp(&p.rel_error));
    let max_rel_error = all.first().map_or(0.0, |m| m.rel_error);
    let checked = all.len();
    all.truncate(10);
    GradCheckReport {
        passed: max_rel_error < opts.tolerance,
        checked,
        max_rel_error,
        worst: all,
    }
}

/// Analytic gradients (batch-statistics normalization, dropout off) checked
/// against central differences.
pub fn gradient_check(
    model: &Autoencoder,
    x: ArrayView2<f64>,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let grads = analytic_gradients(model, x);
    check_gradients(model, x, &grads, opts)
}

pub fn analytic_gradients(model: &Autoencoder, x: ArrayView2<f64>) -> Vec<LayerGrads> {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = TrainPass {
        dropout: false,
        update_stats: false,
    };
    m.loss_and_grads(x, pass, &mut rng).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reducer::ReducerConfig;
    use ndarray::Array2;
    use rand::Rng;

    fn tiny(slope: f64) -> (Autoencoder, Array2<f64>) {
        let cfg = ReducerConfig {
            latent_dim: 2,
            hidden: [8, 4],
            leaky_slope: slope,
            seed: 7,
            ..Default::default()
        };
        let mut model = Autoencoder::new(8, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // non-trivial γ, β and biases so every path carries gradient
        for layer in &mut model.layers {
            layer.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            if let Some(bn) = &mut layer.norm {
                bn.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
                bn.beta.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            }
        }
        let x = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0));
        (model, x)
    }

    #[test]
    fn tiny_model_passes() {
        let (model, x) = tiny(0.01);
        let report = gradient_check(&model, x.view(), &GradCheckOptions::default());
        assert!(report.passed, "{report:#?}");
        // 8x8+8x4+4x2+2x4+4x8+8x8 weights, 8+4+2+4+8+8 biases, 2x(8+4+2+4+8) γ/β
        assert_eq!(report.checked, 208 + 34 + 52);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (model, x) = tiny(0.01);
        let mut grads = analytic_gradients(&model, x.view());
        grads[1].weight[[2, 1]] += 1e-2;
        let report = check_gradients(&model, x.view(), &grads, &GradCheckOptions::default());
        assert!(!report.passed);
        assert_eq!(report.worst[0].param, "layer1.weight");
        assert_eq!(report.worst[0].index, 2 * 4 + 1);
    }

    #[test]
    fn relu_limit_on_linear_region() {
        let (mut model, x) = tiny(0.0);
        // batch of 4: |x̂| <= sqrt(3) and γ < 1.5, so β = 3 keeps every
        // normalized pre-activation positive
        for layer in &mut model.layers {
            if let Some(bn) = &mut layer.norm {
                bn.beta.fill(3.0);
            }
        }
        // the larger loss raises round-off on zero-gradient coordinates to
        // ~3e-10, so allow 1e-9 absolute there
        let opts = GradCheckOptions {
            abs_floor: 1e-5,
            ..Default::default()
        };
        let report = gradient_check(&model, x.view(), &opts);
        assert!(report.passed, "{report:#?}");
    }
}
