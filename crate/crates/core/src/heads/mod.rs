//! Prediction heads over augmented line features.

pub mod gbdt;
pub mod logistic;

use serde::{Deserialize, Serialize};

pub use gbdt::{
    predict_gbdt, train_gbdt, training_loss, GbdtConfig, GbdtModel, GbdtTask, Growth, Node,
    PosWeight, Tree,
};
pub use logistic::{bce_loss_and_grad, train_logistic, LogisticConfig, LogisticModel};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("row {0}: label is not 0 or 1")]
    NonBinary(usize),
    #[error("row {0}: non-finite value")]
    NonFinite(usize),
    #[error("expected width {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error("need at least 2 rows and 1 feature, got {0} rows")]
    TooFewRows(usize),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid head config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, HeadError>;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `#negatives / #positives`.
pub fn auto_pos_weight(y: &[bool]) -> Result<f64> {
    let pos = y.iter().filter(|&&p| p).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HeadError::SingleClass);
    }
    Ok(neg as f64 / pos as f64)
}

pub fn classify(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// A trained head of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Gbdt(GbdtModel),
    Logistic(LogisticModel),
}

impl Head {
    /// Probability for classifiers, value for regressors.
    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        match self {
            Head::Gbdt(m) => predict_gbdt(m, f),
            Head::Logistic(m) => m.predict(f),
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, Head::Gbdt(m) if m.config.task == GbdtTask::Regression)
    }

    pub fn feature_width(&self) -> usize {
        match self {
            Head::Gbdt(m) => m.feature_width,
            Head::Logistic(m) => m.weights.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pos_weight_examples() {
        let make = |neg: usize, pos: usize| {
            let mut v = vec![false; neg];
            v.extend(vec![true; pos]);
            v
        };
        assert_eq!(auto_pos_weight(&make(90, 10)).unwrap(), 9.0);
        assert_eq!(auto_pos_weight(&make(50, 50)).unwrap(), 1.0);
        assert_eq!(auto_pos_weight(&make(999, 1)).unwrap(), 999.0);
        assert_eq!(auto_pos_weight(&make(95, 5)).unwrap(), 19.0);
        assert!(matches!(auto_pos_weight(&make(5, 0)), Err(HeadError::SingleClass)));
        assert!(matches!(auto_pos_weight(&make(0, 5)), Err(HeadError::SingleClass)));
    }

    #[test]
    fn classify_threshold() {
        assert!(classify(0.5, DEFAULT_THRESHOLD));
        assert!(!classify(0.49, DEFAULT_THRESHOLD));
        assert!(classify(1.0, DEFAULT_THRESHOLD));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
