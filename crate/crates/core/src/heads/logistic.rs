//! Single sigmoid neuron trained on binary cross-entropy with Adam.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auto_pos_weight, sigmoid, HeadError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_epochs: usize,
    pub learning_rate: f64,
}

impl LogisticModel {
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
            trained_epochs: 0,
            learning_rate: LogisticConfig::default().learning_rate,
        }
    }

    pub fn logit(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.weights.len() {
            return Err(HeadError::Width {
                expected: self.weights.len(),
                got: f.len(),
            });
        }
        Ok(self.bias + self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>())
    }

    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(f)?))
    }
}

/// Mean BCE over the selected rows and its gradient `(∂w, ∂b)`.
pub fn bce_loss_and_grad(
    model: &LogisticModel,
    x: ArrayView2<f64>,
    y: &[f64],
    rows: &[usize],
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for &i in rows {
        let row = x.row(i);
        let s = model.bias + row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>();
        loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - y[i] * s;
        let r = sigmoid(s) - y[i];
        for (g, a) in gw.iter_mut().zip(row.iter()) {
            *g += r * a;
        }
        gb += r;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

pub fn train_logistic(x: ArrayView2<f64>, y: &[f64], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let (n, w) = x.dim();
    if n < 2 || w == 0 {
        return Err(HeadError::TooFewRows(n));
    }
    if y.len() != n {
        return Err(HeadError::Width {
            expected: n,
            got: y.len(),
        });
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(HeadError::Config("batch_size and learning_rate must be positive".into()));
    }
    if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(HeadError::NonBinary(row));
    }
    if let Some((row, _)) = x
        .outer_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(HeadError::NonFinite(row));
    }
    auto_pos_weight(&y.iter().map(|&v| v == 1.0).collect::<Vec<_>>())?;

    let mut model = LogisticModel {
        learning_rate: cfg.learning_rate,
        ..LogisticModel::zeros(w)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut mw, mut vw) = (vec![0.0; w], vec![0.0; w]);
    let (mut mb, mut vb) = (0.0, 0.0);
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, gw, gb) = bce_loss_and_grad(&model, x, y, batch);
            if !loss.is_finite() {
                return Err(HeadError::NonFiniteLoss(epoch));
            }
            epoch_loss += loss * batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - BETA1.powi(step);
            let bc2 = 1.0 - BETA2.powi(step);
            for j in 0..w {
                mw[j] = BETA1 * mw[j] + (1.0 - BETA1) * gw[j];
                vw[j] = BETA2 * vw[j] + (1.0 - BETA2) * gw[j] * gw[j];
                model.weights[j] -= cfg.learning_rate * (mw[j] / bc1) / ((vw[j] / bc2).sqrt() + ADAM_EPS);
            }
            mb = BETA1 * mb + (1.0 - BETA1) * gb;
            vb = BETA2 * vb + (1.0 - BETA2) * gb * gb;
            model.bias -= cfg.learning_rate * (mb / bc1) / ((vb / bc2).sqrt() + ADAM_EPS);
        }
        if !epoch_loss.is_finite() {
            return Err(HeadError::NonFiniteLoss(epoch));
        }
        model.trained_epochs = epoch + 1;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn separable_1d_reaches_full_accuracy() {
        // positives strictly above 0.2, negatives strictly below: any w > 0
        // with bias -0.2w separates them
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 40.0 - 0.5).collect();
        let y: Vec<f64> = xs.iter().map(|&v| (v > 0.2) as u8 as f64).collect();
        let x = Array2::from_shape_vec((40, 1), xs).unwrap();
        let cfg = LogisticConfig {
            learning_rate: 0.05,
            epochs: 2000,
            batch_size: 40,
            seed: 0,
        };
        let m = train_logistic(x.view(), &y, &cfg).unwrap();
        for (r, t) in x.outer_iter().zip(&y) {
            let p = m.predict(r.as_slice().unwrap()).unwrap();
            assert_eq!(super::super::classify(p, 0.5), *t == 1.0, "x={} p={p}", r[0]);
        }
        assert_eq!(m.trained_epochs, 2000);
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::zeros((4, 2));
        assert!(matches!(
            train_logistic(x.view(), &[1.0; 4], &LogisticConfig::default()),
            Err(HeadError::SingleClass)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((12, 5), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let mut m = LogisticModel::zeros(5);
        m.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        m.bias = 0.3;
        let rows: Vec<usize> = (0..12).collect();
        let (_, gw, gb) = bce_loss_and_grad(&m, x.view(), &y, &rows);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        for j in 0..5 {
            let mut up = m.clone();
            up.weights[j] += h;
            let mut down = m.clone();
            down.weights[j] -= h;
            let fd = (bce_loss_and_grad(&up, x.view(), &y, &rows).0
                - bce_loss_and_grad(&down, x.view(), &y, &rows).0)
                / (2.0 * h);
            assert!(rel(gw[j], fd) < 1e-5, "w{j}: {} vs {fd}", gw[j]);
        }
        let mut up = m.clone();
        up.bias += h;
        let mut down = m.clone();
        down.bias -= h;
        let fd = (bce_loss_and_grad(&up, x.view(), &y, &rows).0
            - bce_loss_and_grad(&down, x.view(), &y, &rows).0)
            / (2.0 * h);
        assert!(rel(gb, fd) < 1e-5);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((50, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x.column(0).iter().map(|&v| (v > 0.0) as u8 as f64).collect();
        let cfg = LogisticConfig {
            epochs: 5,
            batch_size: 8,
            ..Default::default()
        };
        let a = train_logistic(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, train_logistic(x.view(), &y, &cfg).unwrap());
    }

    #[test]
    fn width_checked() {
        assert!(matches!(
            LogisticModel::zeros(3).predict(&[0.0; 2]),
            Err(HeadError::Width { expected: 3, got: 2 })
        ));
    }
}
