//! Self-adaptive weighted squared-error loss.
//!
//! One multiplier `lambda_p` per spatiotemporal evaluation point, shared by
//! every sample. The loss weights point `p` by `g(lambda_p) = lambda_p^2`; the
//! network minimizes it while the multipliers climb its gradient, so points
//! with persistently large residuals gain weight. After each epoch the masks
//! are rescaled so that they sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Default multiplier learning rate.
pub const ETA_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeights {
    lambdas: Vec<f64>,
    pub eta: f64,
}

/// Mask function `g(lambda) = lambda^2`.
#[inline]
pub fn mask(lambda: f64) -> f64 {
    lambda * lambda
}

#[inline]
pub fn mask_derivative(lambda: f64) -> f64 {
    2.0 * lambda
}

impl AdaptiveWeights {
    /// `lambda = 1/sqrt(j)`, so every mask equals `1/j` and the masks sum to one.
    pub fn uniform(points: usize, eta: f64) -> Self {
        AdaptiveWeights {
            lambdas: vec![1.0 / (points as f64).sqrt(); points],
            eta,
        }
    }

    pub fn from_lambdas(lambdas: Vec<f64>, eta: f64) -> Result<Self> {
        if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::config("self-adaptive weights must be positive"));
        }
        Ok(AdaptiveWeights { lambdas, eta })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn mask_sum(&self) -> f64 {
        self.lambdas.iter().map(|&l| mask(l)).sum()
    }

    fn check(&self, pred: &Tensor, target: &Tensor) -> Result<usize> {
        check_pair(pred, target)?;
        if pred.cols() != self.lambdas.len() {
            return Err(Error::dim(format!(
                "{} self-adaptive weights for {} points",
                self.lambdas.len(),
                pred.cols()
            )));
        }
        Ok(pred.rows())
    }

    /// Gradient ascent step on the multipliers from this batch's residuals:
    /// `lambda_p += eta * g'(lambda_p) * mean_s r_{s,p}^2`.
    pub fn update(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        let grad = self.lambda_gradient(pred, target)?;
        self.ascend(&grad);
        Ok(())
    }

    /// `lambda += eta * grad`, with a gradient from [`Self::lambda_gradient`].
    pub fn ascend(&mut self, grad: &[f64]) {
        for (l, g) in self.lambdas.iter_mut().zip(grad) {
            *l += self.eta * g;
        }
    }

    /// `d loss / d lambda_p = g'(lambda_p) * (1/N) sum_s r_{s,p}^2`.
    pub fn lambda_gradient(&self, pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
        let batch = self.check(pred, target)?;
        let j = self.lambdas.len();
        let mut sq = vec![0.0; j];
        for s in 0..batch {
            for ((acc, a), b) in sq.iter_mut().zip(pred.row(s)).zip(target.row(s)) {
                *acc += (a - b) * (a - b);
            }
        }
        let inv = 1.0 / batch as f64;
        Ok(sq
            .iter()
            .zip(&self.lambdas)
            .map(|(s, &l)| mask_derivative(l) * s * inv)
            .collect())
    }

    /// Rescales so that `sum_p g(lambda_p) = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.mask_sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "cannot normalize self-adaptive weights with mask sum {total}"
            )));
        }
        let norm = total.sqrt();
        for l in &mut self.lambdas {
            *l /= norm;
        }
        Ok(())
    }
}

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::dim(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// `(1/N) sum_s sum_p g(lambda_p) (pred - target)^2`.
pub fn adaptive_loss(pred: &Tensor, target: &Tensor, weights: &AdaptiveWeights) -> Result<f64> {
    Ok(adaptive_loss_grad(pred, target, weights)?.0)
}

/// Loss and its gradient with respect to the prediction.
pub fn adaptive_loss_grad(
    pred: &Tensor,
    target: &Tensor,
    weights: &AdaptiveWeights,
) -> Result<(f64, Tensor)> {
    let batch = weights.check(pred, target)?;
    let masks: Vec<f64> = weights.lambdas.iter().map(|&l| mask(l)).collect();
    let inv = 1.0 / batch as f64;
    let mut d = vec![0.0; pred.len()];
    let mut loss = 0.0;
    for s in 0..batch {
        let row = &mut d[s * masks.len()..(s + 1) * masks.len()];
        for (p, ((a, b), g)) in pred.row(s).iter().zip(target.row(s)).zip(&masks).enumerate() {
            let r = a - b;
            loss += g * r * r;
            row[p] = 2.0 * g * r * inv;
        }
    }
    Ok((loss * inv, Tensor::new(pred.shape().to_vec(), d)?))
}

/// Mean over every entry of `(pred - target)^2`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mse(pred, target)?;
    let scale = 2.0 / pred.len().max(1) as f64;
    let d = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| scale * (a - b))
        .collect();
    Ok((loss, Tensor::new(pred.shape().to_vec(), d)?))
}

/// Loss used for gradient steps.
#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    Mse,
    Adaptive(&'a AdaptiveWeights),
}

impl LossKind<'_> {
    pub fn value(&self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        match self {
            LossKind::Mse => mse(pred, target),
            LossKind::Adaptive(w) => adaptive_loss(pred, target, w),
        }
    }

    pub fn value_and_grad(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            LossKind::Mse => mse_grad(pred, target),
            LossKind::Adaptive(w) => adaptive_loss_grad(pred, target, w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn zero_residual_zero_loss() {
        let t = rows(&[vec![1.0, -2.0]]);
        let w = AdaptiveWeights::uniform(2, ETA_LAMBDA);
        assert_eq!(adaptive_loss(&t, &t, &w).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_loss() {
        let w = AdaptiveWeights::from_lambdas(vec![1.0, 1.0], ETA_LAMBDA).unwrap();
        let pred = rows(&[vec![1.0, 2.0]]);
        let target = rows(&[vec![0.0, 0.0]]);
        assert_eq!(adaptive_loss(&pred, &target, &w).unwrap(), 5.0);
    }

    #[test]
    fn uniform_masks_give_mse() {
        let w = AdaptiveWeights::uniform(3, ETA_LAMBDA);
        let pred = rows(&[vec![1.0, 2.0, 0.5], vec![0.0, -1.0, 3.0]]);
        let target = rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]);
        let a = adaptive_loss(&pred, &target, &w).unwrap();
        let m = mse(&pred, &target).unwrap();
        assert!((a - m).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        let w = AdaptiveWeights::uniform(3, ETA_LAMBDA);
        let pred = rows(&[vec![1.0, 2.0]]);
        assert!(adaptive_loss(&pred, &pred, &w).is_err());
        assert!(adaptive_loss(&pred, &rows(&[vec![1.0]]), &w).is_err());
    }

    #[test]
    fn ascent_step_hand_computed() {
        // lambda = 1, r^2 = 0.5, eta = 0.1: 1 + 0.1 * 2 * 1 * 0.5
        let mut w = AdaptiveWeights::from_lambdas(vec![1.0], 0.1).unwrap();
        let pred = rows(&[vec![0.5f64.sqrt()]]);
        w.update(&pred, &rows(&[vec![0.0]])).unwrap();
        assert!((w.lambdas()[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn ascent_is_selective() {
        let mut w = AdaptiveWeights::from_lambdas(vec![0.5, 0.5], 0.1).unwrap();
        w.update(&rows(&[vec![1.0, 2.0]]), &rows(&[vec![0.0, 2.0]])).unwrap();
        assert!(w.lambdas()[0] > 0.5);
        assert_eq!(w.lambdas()[1], 0.5);
    }

    #[test]
    fn normalization_values() {
        let mut w = AdaptiveWeights::from_lambdas(vec![1.0, 1.0], 0.1).unwrap();
        w.normalize().unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!(w.lambdas().iter().all(|l| (l - r).abs() < 1e-15));
        let mut w = AdaptiveWeights::from_lambdas(vec![3.0, 4.0], 0.1).unwrap();
        w.normalize().unwrap();
        assert!((w.lambdas()[0] - 0.6).abs() < 1e-15);
        assert!((w.lambdas()[1] - 0.8).abs() < 1e-15);
        let before = w.lambdas().to_vec();
        w.normalize().unwrap();
        for (a, b) in before.iter().zip(w.lambdas()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_normalization() {
        let mut w = AdaptiveWeights {
            lambdas: vec![0.0, 0.0],
            eta: 0.1,
        };
        assert!(matches!(w.normalize(), Err(Error::Degenerate(_))));
        assert!(AdaptiveWeights::from_lambdas(vec![1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let w = AdaptiveWeights::from_lambdas(vec![0.3, 0.7, 0.2], 0.1).unwrap();
        let pred = rows(&[vec![0.1, 0.4, -0.3], vec![0.5, -0.2, 0.9]]);
        let target = rows(&[vec![0.0, 0.5, 0.1], vec![0.2, 0.2, 0.2]]);
        let (_, d) = adaptive_loss_grad(&pred, &target, &w).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut up = pred.clone();
            up.data_mut()[i] += h;
            let mut dn = pred.clone();
            dn.data_mut()[i] -= h;
            let fd = (adaptive_loss(&up, &target, &w).unwrap()
                - adaptive_loss(&dn, &target, &w).unwrap())
                / (2.0 * h);
            assert!((fd - d.data()[i]).abs() < 1e-9);
        }
    }
}
