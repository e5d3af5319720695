//! Random initial conditions.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{EquationKind, Grid};

/// Sampling options that are not fixed by the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcConfig {
    /// Burgers: number of superposed sine waves.
    pub waves: usize,
    /// Burgers: largest wavenumber index.
    pub n_max: u32,
}

impl Default for IcConfig {
    fn default() -> Self {
        IcConfig { waves: 2, n_max: 2 }
    }
}

impl IcConfig {
    pub fn default_for(_kind: EquationKind) -> Self {
        Self::default()
    }

    pub fn validate(&self, kind: EquationKind) -> Result<()> {
        if kind == EquationKind::Burgers && (self.waves == 0 || self.n_max == 0) {
            return Err(Error::config("burgers needs waves >= 1 and n_max >= 1"));
        }
        Ok(())
    }
}

/// Coefficients of one initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IcParams {
    /// `sum_i 2 k_i^2 sech^2(k_i s_i(x))`.
    Kdv { k: [f64; 2], d: [f64; 2] },
    /// `sum_i 3 (c_i - 1) sech^2(sqrt(1 - 1/c_i) s_i(x) / 2)`.
    Bbm { c: [f64; 2], d: [f64; 2] },
    /// `sum_i a_i sin(k_i 2 pi x / P) + b_i cos(j_i 2 pi x / P)`.
    CahnHilliard {
        a: [f64; 2],
        b: [f64; 2],
        k: [u32; 2],
        j: [u32; 2],
    },
    /// `sum_i A_i sin(2 pi n_i x / P + phi_i)`.
    Burgers {
        amplitude: Vec<f64>,
        phase: Vec<f64>,
        n: Vec<u32>,
    },
}

/// Signed distance `(x + P/2 - P d) mod P - P/2` to a peak placed at `P d`.
pub fn wrapped_offset(x: f64, period: f64, d: f64) -> f64 {
    (x + 0.5 * period - period * d).rem_euclid(period) - 0.5 * period
}

fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

fn open_unit(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.gen_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

impl IcParams {
    /// Draws coefficients uniformly from their ranges.
    pub fn sample(kind: EquationKind, cfg: &IcConfig, rng: &mut impl Rng) -> Self {
        match kind {
            EquationKind::Kdv => IcParams::Kdv {
                k: [open_unit(rng, 0.5, 1.0), open_unit(rng, 0.5, 1.0)],
                d: [open_unit(rng, 0.0, 1.0), open_unit(rng, 0.0, 1.0)],
            },
            EquationKind::Bbm => IcParams::Bbm {
                c: [open_unit(rng, 1.0, 3.0), open_unit(rng, 1.0, 3.0)],
                d: [open_unit(rng, 0.0, 1.0), open_unit(rng, 0.0, 1.0)],
            },
            EquationKind::CahnHilliard => IcParams::CahnHilliard {
                a: [open_unit(rng, 0.0, 0.2), open_unit(rng, 0.0, 0.2)],
                b: [open_unit(rng, 0.0, 0.2), open_unit(rng, 0.0, 0.2)],
                k: [rng.gen_range(1..=6), rng.gen_range(1..=6)],
                j: [rng.gen_range(1..=6), rng.gen_range(1..=6)],
            },
            EquationKind::Burgers => {
                let mut amplitude = Vec::with_capacity(cfg.waves);
                let mut phase = Vec::with_capacity(cfg.waves);
                let mut n = Vec::with_capacity(cfg.waves);
                for _ in 0..cfg.waves {
                    amplitude.push(open_unit(rng, 0.0, 1.0));
                    phase.push(open_unit(rng, 0.0, 2.0 * PI));
                    n.push(rng.gen_range(1..=cfg.n_max));
                }
                IcParams::Burgers {
                    amplitude,
                    phase,
                    n,
                }
            }
        }
    }

    pub fn kind(&self) -> EquationKind {
        match self {
            IcParams::Kdv { .. } => EquationKind::Kdv,
            IcParams::Bbm { .. } => EquationKind::Bbm,
            IcParams::CahnHilliard { .. } => EquationKind::CahnHilliard,
            IcParams::Burgers { .. } => EquationKind::Burgers,
        }
    }

    pub fn value(&self, x: f64, period: f64) -> f64 {
        match self {
            IcParams::Kdv { k, d } => (0..2)
                .map(|i| 2.0 * k[i] * k[i] * sech2(k[i] * wrapped_offset(x, period, d[i])))
                .sum(),
            IcParams::Bbm { c, d } => (0..2)
                .map(|i| {
                    let width = 0.5 * (1.0 - 1.0 / c[i]).sqrt();
                    3.0 * (c[i] - 1.0) * sech2(width * wrapped_offset(x, period, d[i]))
                })
                .sum(),
            IcParams::CahnHilliard { a, b, k, j } => {
                let w = 2.0 * PI / period;
                (0..2)
                    .map(|i| {
                        a[i] * (k[i] as f64 * w * x).sin() + b[i] * (j[i] as f64 * w * x).cos()
                    })
                    .sum()
            }
            IcParams::Burgers {
                amplitude,
                phase,
                n,
            } => amplitude
                .iter()
                .zip(phase)
                .zip(n)
                .map(|((a, p), &n)| a * (2.0 * PI * n as f64 / period * x + p).sin())
                .sum(),
        }
    }

    /// The initial condition at the grid nodes.
    pub fn evaluate(&self, grid: &Grid) -> Vec<f64> {
        grid.nodes()
            .into_iter()
            .map(|x| self.value(x, grid.period))
            .collect()
    }
}
