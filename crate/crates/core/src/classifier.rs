//! Per-validator logistic scorer and the adaptive acceptance/rejection
//! thresholds derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::AttributeVector;

const DIM: usize = AttributeVector::DIM;

/// Logistic weights together with the standardization constants they were
/// fitted under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: [f64; DIM],
    pub bias: f64,
    pub mean: [f64; DIM],
    pub scale: [f64; DIM],
}

impl Default for WeightVector {
    fn default() -> Self {
        Self {
            weights: [0.0; DIM],
            bias: 0.0,
            mean: [0.0; DIM],
            scale: [1.0; DIM],
        }
    }
}

impl WeightVector {
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.mean)
            .chain(&self.scale)
            .chain(std::iter::once(&self.bias))
            .all(|x| x.is_finite())
            && self.scale.iter().all(|&s| s > 0.0)
    }

    pub fn standardize(&self, a: &AttributeVector) -> [f64; DIM] {
        let raw = a.to_array();
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.scale[i])
    }

    /// The linear score `aᵀy + bias` on standardized attributes.
    pub fn logit(&self, a: &AttributeVector) -> f64 {
        let x = self.standardize(a);
        self.bias + x.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self { mu1: 1.0, mu2: 0.5 }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.mu2 && self.mu2 < self.mu1 && self.mu1.is_finite()) {
            return Err(Error::config("thresholds need 0 <= mu2 < mu1"));
        }
        Ok(())
    }
}

/// Acceptance (`accept`) and rejection (`reject`) thresholds for one
/// validator and transaction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub accept: f64,
    pub reject: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub attributes: AttributeVector,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// L2 coefficient on the weights (the bias is not penalized).
    pub reg: f64,
    pub iterations: usize,
    pub step: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { reg: 1e-4, iterations: 500, step: 0.5 }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn score(a: &AttributeVector, y: &WeightVector) -> f64 {
    sigmoid(y.logit(a))
}

pub fn thresholds(a: &AttributeVector, y: &WeightVector, params: &ThresholdParams) -> Thresholds {
    // Snapping the shift to a 2^-53 grid keeps `accept - reject` exactly
    // equal to `mu1 - mu2` for the default parameters.
    const GRID: f64 = (1u64 << 53) as f64;
    let half = (score(a, y) / 2.0 * GRID).round() / GRID;
    Thresholds {
        accept: params.mu1 - half,
        reject: params.mu2 - half,
    }
}

/// Per-feature mean and standard deviation of `examples`; constant features
/// get unit scale.
pub fn standardization(examples: &[TrainingExample]) -> ([f64; DIM], [f64; DIM]) {
    let n = examples.len() as f64;
    let mut mean = [0.0; DIM];
    for ex in examples {
        for (m, x) in mean.iter_mut().zip(ex.attributes.to_array()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; DIM];
    for ex in examples {
        for ((v, x), m) in var.iter_mut().zip(ex.attributes.to_array()).zip(&mean) {
            *v += (x - m).powi(2);
        }
    }
    let scale = var.map(|v| {
        let sd = (v / n).sqrt();
        if sd > 1e-12 {
            sd
        } else {
            1.0
        }
    });
    (mean, scale)
}

/// Standardized design matrix and labels for the gradient routines.
#[derive(Clone, Debug)]
pub struct Design {
    pub rows: Vec<[f64; DIM]>,
    pub labels: Vec<f64>,
}

impl Design {
    pub fn new(examples: &[TrainingExample], mean: &[f64; DIM], scale: &[f64; DIM]) -> Self {
        let rows = examples
            .iter()
            .map(|ex| {
                let raw = ex.attributes.to_array();
                std::array::from_fn(|i| (raw[i] - mean[i]) / scale[i])
            })
            .collect();
        let labels = examples.iter().map(|ex| if ex.label { 1.0 } else { 0.0 }).collect();
        Self { rows, labels }
    }

    fn logit(params: &[f64; DIM + 1], row: &[f64; DIM]) -> f64 {
        params[DIM] + row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>()
    }

    /// Mean binary cross-entropy plus `reg/2 * |w|²`. `params` holds the five
    /// weights followed by the bias.
    pub fn objective(&self, params: &[f64; DIM + 1], reg: f64) -> f64 {
        let n = self.rows.len() as f64;
        let bce: f64 = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(row, &v)| {
                let z = Self::logit(params, row);
                v * softplus(-z) + (1.0 - v) * softplus(z)
            })
            .sum();
        let l2: f64 = params[..DIM].iter().map(|w| w * w).sum();
        bce / n + 0.5 * reg * l2
    }

    pub fn gradient(&self, params: &[f64; DIM + 1], reg: f64) -> [f64; DIM + 1] {
        let n = self.rows.len() as f64;
        let mut grad = [0.0; DIM + 1];
        for (row, &v) in self.rows.iter().zip(&self.labels) {
            let err = sigmoid(Self::logit(params, row)) - v;
            for (g, x) in grad.iter_mut().zip(row) {
                *g += err * x;
            }
            grad[DIM] += err;
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g /= n;
            if i < DIM {
                *g += reg * params[i];
            }
        }
        grad
    }
}

/// Fits the logistic weights by full-batch gradient descent.
///
/// Returns `None` when `examples` is empty or holds a single class; callers
/// keep their previous weights in that case.
pub fn train(examples: &[TrainingExample], opts: &TrainOptions) -> Option<WeightVector> {
    let positives = examples.iter().filter(|e| e.label).count();
    if positives == 0 || positives == examples.len() {
        return None;
    }
    let (mean, scale) = standardization(examples);
    let design = Design::new(examples, &mean, &scale);
    let mut params = [0.0; DIM + 1];
    for _ in 0..opts.iterations {
        let grad = design.gradient(&params, opts.reg);
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= opts.step * g;
        }
    }
    let mut weights = [0.0; DIM];
    weights.copy_from_slice(&params[..DIM]);
    Some(WeightVector { weights, bias: params[DIM], mean, scale })
}

/// Fraction of `examples` whose label matches `score >= 0.5`.
pub fn accuracy(y: &WeightVector, examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|ex| (score(&ex.attributes, y) >= 0.5) == ex.label)
        .count();
    hits as f64 / examples.len() as f64
}

/// Retrains on the validator's decided-transaction window when `epoch`
/// (1-based) is a multiple of `cadence`.
pub fn retrain_epoch_hook(
    window: &[TrainingExample],
    epoch: u64,
    cadence: u64,
    opts: &TrainOptions,
) -> Option<WeightVector> {
    if cadence == 0 || epoch == 0 || !epoch.is_multiple_of(cadence) {
        return None;
    }
    train(window, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(a: [f64; 5]) -> AttributeVector {
        AttributeVector {
            inverse_value: a[0],
            fee: a[1],
            elapsed_rounds: a[2] as u32,
            inverse_witness_size: a[3],
            sender_reliability: a[4],
        }
    }

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(700.0), 1.0);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0) < 1e-300);
        let mut last = 0.0;
        for i in -50..=50 {
            let s = sigmoid(i as f64 * 0.7);
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn zero_logit_gives_central_thresholds() {
        let y = WeightVector::default();
        let a = attrs([1.0, 0.5, 3.0, 0.5, 0.7]);
        assert_eq!(score(&a, &y), 0.5);
        let t = thresholds(&a, &y, &ThresholdParams::default());
        assert_eq!(t.accept, 0.75);
        assert_eq!(t.reject, 0.25);
    }

    #[test]
    fn confident_valid_score_relaxes_thresholds() {
        let y = WeightVector { bias: 60.0, ..Default::default() };
        let a = attrs([1.0, 0.5, 3.0, 0.5, 0.7]);
        let t = thresholds(&a, &y, &ThresholdParams::default());
        assert!((t.accept - 0.5).abs() < 1e-12);
        assert!(t.reject.abs() < 1e-12);
    }

    #[test]
    fn band_width_is_constant() {
        let params = ThresholdParams::default();
        for b in [-30.0, -2.0, -0.1, 0.0, 0.3, 5.0, 40.0] {
            let y = WeightVector { bias: b, weights: [0.3, -1.0, 0.01, 2.0, 0.5], ..Default::default() };
            let t = thresholds(&attrs([2.0, 0.3, 7.0, 0.25, 0.6]), &y, &params);
            assert_eq!(t.accept - t.reject, 0.5);
        }
    }

    #[test]
    fn single_class_training_is_a_no_op() {
        let ex = TrainingExample { attributes: attrs([1.0, 0.5, 3.0, 0.5, 0.7]), label: true };
        assert!(train(&[ex, ex], &TrainOptions::default()).is_none());
        assert!(train(&[], &TrainOptions::default()).is_none());
    }

    #[test]
    fn retrain_cadence() {
        let window = vec![
            TrainingExample { attributes: attrs([1.0, 0.6, 10.0, 1.0, 0.7]), label: true },
            TrainingExample { attributes: attrs([8.0, 0.2, 4.0, 0.5, 0.4]), label: false },
        ];
        let opts = TrainOptions::default();
        assert!(retrain_epoch_hook(&window, 19, 20, &opts).is_none());
        assert!(retrain_epoch_hook(&window, 20, 20, &opts).is_some());
        assert!(retrain_epoch_hook(&[], 20, 20, &opts).is_none());
        assert!(retrain_epoch_hook(&window, 3, 1, &opts).is_some());
    }

    #[test]
    fn constant_feature_gets_unit_scale() {
        let examples = vec![
            TrainingExample { attributes: attrs([1.0, 0.6, 10.0, 1.0, 0.7]), label: true },
            TrainingExample { attributes: attrs([8.0, 0.2, 4.0, 1.0, 0.4]), label: false },
        ];
        let (_, scale) = standardization(&examples);
        assert_eq!(scale[3], 1.0);
        let y = train(&examples, &TrainOptions::default()).unwrap();
        assert!(y.is_finite());
        assert_eq!(accuracy(&y, &examples), 1.0);
    }

    #[test]
    fn threshold_params_validation() {
        assert!(ThresholdParams::default().validate().is_ok());
        assert!(ThresholdParams { mu1: 0.5, mu2: 0.5 }.validate().is_err());
        assert!(ThresholdParams { mu1: 1.0, mu2: -0.1 }.validate().is_err());
    }
}
