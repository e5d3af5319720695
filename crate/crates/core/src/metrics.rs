//! Error metrics computed per sample and aggregated over a test set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::TrajectorySet;

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::dim(format!(
            "metric inputs have lengths {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

/// `(1/n) sum |y - y_hat|`.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `sqrt((1/n) sum (y - y_hat)^2)`.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let ss: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// `sum (y - y_hat)^2 / sum (y - mean(y))^2`.
pub fn rse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let den: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if !(den > 0.0) {
        return Err(Error::Degenerate(
            "relative squared error of a constant reference".into(),
        ));
    }
    let num: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub rse: f64,
}

impl SampleMetrics {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(SampleMetrics {
            mae: mae(y, y_hat)?,
            rmse: rmse(y, y_hat)?,
            rse: rse(y, y_hat)?,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.std)
    }
}

/// Anything that maps a set of initial conditions to full trajectories in
/// physical units, laid out like [`TrajectorySet::u`].
pub trait Predictor {
    fn predict(&self, set: &TrajectorySet) -> Result<Vec<f64>>;
}

/// Per-sample metrics of one trained model on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub resolution: String,
    pub seed: u64,
    pub n_high: usize,
    pub n_low: usize,
    pub samples: Vec<SampleMetrics>,
}

pub const CSV_HEADER: &str = "model,resolution,seed,N_H,N_L,mae,rmse,rse";

impl MetricReport {
    pub fn mae(&self) -> Summary {
        Summary::of(&self.samples.iter().map(|s| s.mae).collect::<Vec<_>>())
    }

    pub fn rmse(&self) -> Summary {
        Summary::of(&self.samples.iter().map(|s| s.rmse).collect::<Vec<_>>())
    }

    pub fn rse(&self) -> Summary {
        Summary::of(&self.samples.iter().map(|s| s.rse).collect::<Vec<_>>())
    }

    /// One CSV row with the per-sample means.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{:e},{:e}",
            self.model,
            self.resolution,
            self.seed,
            self.n_high,
            self.n_low,
            self.mae().mean,
            self.rmse().mean,
            self.rse().mean
        )
    }
}

/// Metrics of `prediction` against `truth` for every sample, skipping the
/// initial frame (it is the model input).
pub fn score_predictions(truth: &TrajectorySet, prediction: &[f64]) -> Result<Vec<SampleMetrics>> {
    if prediction.len() != truth.u.len() {
        return Err(Error::dim(format!(
            "prediction has {} values, test set has {}",
            prediction.len(),
            truth.u.len()
        )));
    }
    let frame = truth.frame_len();
    let skip = truth.n_x();
    (0..truth.len())
        .map(|s| {
            let y = &truth.sample(s)[skip..];
            let y_hat = &prediction[s * frame + skip..(s + 1) * frame];
            SampleMetrics::compute(y, y_hat).map_err(|e| match e {
                Error::Degenerate(m) => Error::Degenerate(format!("test sample {s}: {m}")),
                other => other,
            })
        })
        .collect()
}

pub fn evaluate_model(model: &impl Predictor, test: &TrajectorySet) -> Result<Vec<SampleMetrics>> {
    score_predictions(test, &model.predict(test)?)
}
