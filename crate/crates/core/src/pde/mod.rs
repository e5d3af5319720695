//! Reference trajectories for 1-D periodic PDEs: conservative central
//! differences in space, the implicit midpoint rule in time, and Newton's
//! method with a cyclic banded direct solver for every step.

pub mod banded;
pub mod equation;
pub mod ic;
pub mod integrator;
pub mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use equation::{Equation, EquationKind};
pub use ic::{IcConfig, IcParams};
pub use integrator::{
    generate_trajectory, implicit_midpoint_step, IntegratorConfig, Discretized, SemiDiscrete,
};
pub use trajectory::{downsample_time, generate_set, Resolution, TrajectorySet};

/// Uniform periodic grid `x_j = origin + j * period / n_x`, `j = 0..n_x`
/// (the right endpoint is the image of the origin and is excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: f64,
    pub period: f64,
    pub n_x: usize,
}

impl Grid {
    pub fn new(origin: f64, period: f64, n_x: usize) -> Result<Self> {
        let g = Grid {
            origin,
            period,
            n_x,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() || !self.origin.is_finite() {
            return Err(Error::config(format!(
                "grid period must be positive, got {}",
                self.period
            )));
        }
        // the widest stencil (third derivative) reaches two neighbours each way
        if self.n_x < 5 {
            return Err(Error::config(format!(
                "grid needs at least 5 points, got {}",
                self.n_x
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.period / self.n_x as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_x).map(|j| self.origin + j as f64 * dx).collect()
    }
}

/// Equation, grid, time horizon and sampling resolutions of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub equation: Equation,
    pub grid: Grid,
    /// Final time `T`.
    pub t_final: f64,
    /// High-resolution output step.
    pub dt_high: f64,
    /// `dt_low / dt_high`.
    pub low_factor: usize,
    pub ic: IcConfig,
}

impl Problem {
    /// Default setup for each equation: 100 spatial points, and the time
    /// horizon and output steps of the reference datasets.
    pub fn preset(kind: EquationKind) -> Self {
        let equation = Equation::default_for(kind);
        let ic = IcConfig::default_for(kind);
        let (origin, period, t_final, dt_high) = match kind {
            EquationKind::Kdv => (0.0, 10.0, 5.0, 0.025),
            EquationKind::Bbm => (0.0, 20.0, 15.0, 0.075),
            EquationKind::CahnHilliard => (0.0, 1.0, 3.0, 0.02),
            EquationKind::Burgers => (-1.0, 2.0, 2.0, 0.01),
        };
        Problem {
            equation,
            grid: Grid {
                origin,
                period,
                n_x: 100,
            },
            t_final,
            dt_high,
            low_factor: 5,
            ic,
        }
    }

    pub fn dt_low(&self) -> f64 {
        self.dt_high * self.low_factor as f64
    }

    /// Number of high-resolution output steps `T / dt_high`.
    pub fn steps_high(&self) -> Result<usize> {
        integer_ratio(self.t_final, self.dt_high, "t_final / dt_high")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.dt_high > 0.0) || !(self.t_final >= 0.0) {
            return Err(Error::config("time step must be positive and t_final >= 0"));
        }
        if self.low_factor == 0 {
            return Err(Error::config("low_factor must be at least 1"));
        }
        let steps = self.steps_high()?;
        if steps % self.low_factor != 0 {
            return Err(Error::config(format!(
                "{steps} high-resolution steps are not divisible by low_factor {}",
                self.low_factor
            )));
        }
        self.ic.validate(self.equation.kind())
    }
}

/// `a / b` when it is an integer up to rounding, else a config error.
pub fn integer_ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    let n = r.round();
    if !(n >= 0.0) || (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::config(format!("{what} = {r} is not an integer")));
    }
    Ok(n as usize)
}
