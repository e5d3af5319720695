//! Gradient evaluation and the finite-difference gradient check.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// A scalar loss of the flat parameter vector.
pub trait Objective {
    fn value(&self, params: &[f64]) -> Result<f64>;

    /// Loss and its gradient with respect to every parameter entry.
    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Objective assembled from two closures.
pub struct FnObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok((self.value)(params))
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(((self.value)(params), (self.gradient)(params)))
    }
}

/// Loss and gradient, with frozen entries zeroed. Fails on a non-finite loss.
pub fn compute_gradients(
    objective: &dyn Objective,
    params: &ParameterSet,
    batch_id: usize,
) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad) = objective.value_and_gradient(params.values())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            value: loss,
            context: format!("batch {batch_id}"),
        });
    }
    if grad.len() != params.len() {
        return Err(Error::dim(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    for (g, &t) in grad.iter_mut().zip(params.trainable()) {
        if !t {
            *g = 0.0;
        }
    }
    Ok((loss, grad))
}

/// Lower bound on the denominator of the relative error, so entries whose
/// true gradient is at rounding level are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub name: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |e| e.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error > self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entries checked, worst relative error {:.3e} (tolerance {:.1e})",
            self.entries.len(),
            self.worst_rel_error(),
            self.tolerance
        )?;
        for e in self.failures() {
            write!(
                f,
                "\n  {}[{}]: analytic {:.9e}, numeric {:.9e}, rel {:.3e}",
                e.name, e.offset, e.analytic, e.numeric, e.rel_error
            )?;
        }
        Ok(())
    }
}

/// Central-difference check on a random subset of `n_check` trainable entries
/// (all of them when fewer exist).
pub fn finite_difference_check(
    objective: &dyn Objective,
    params: &ParameterSet,
    n_check: usize,
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let candidates: Vec<usize> = (0..params.len())
        .filter(|&i| params.trainable()[i])
        .collect();
    if candidates.is_empty() {
        return Err(Error::config("no trainable parameters to check"));
    }
    let n = n_check.min(candidates.len());
    let mut picked: Vec<usize> = sample(rng, candidates.len(), n)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    finite_difference_check_at(objective, params, &picked, tolerance)
}

/// Central-difference check at the given flat indices.
pub fn finite_difference_check_at(
    objective: &dyn Objective,
    params: &ParameterSet,
    indices: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = compute_gradients(objective, params, 0)?;
    let mut theta = params.values().to_vec();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = theta[i];
        // five-point stencil: truncation O(h^4) lets h stay large enough
        // that rounding in the loss does not swamp small gradients
        let h = 1e-3 * orig.abs().max(1.0);
        let mut at = |step: f64| -> Result<f64> {
            theta[i] = orig + step;
            objective.value(&theta)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        theta[i] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let a = analytic[i];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        let (name, offset) = params.locate(i).unwrap_or(("?", i));
        entries.push(GradCheckEntry {
            index: i,
            name: name.to_string(),
            offset,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}
