//! Implicit midpoint rule with Newton iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::banded::CyclicBanded;
use crate::pde::{integer_ratio, Equation, Grid};

/// A system `M du/dt = f(u)` with banded Jacobian.
pub trait SemiDiscrete {
    fn dim(&self) -> usize;
    fn rhs(&self, u: &[f64]) -> Vec<f64>;
    fn jacobian(&self, u: &[f64]) -> CyclicBanded;
    /// The mass operator `M`; `None` means the identity.
    fn mass(&self) -> Option<&CyclicBanded>;
}

/// An equation discretized on a grid.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub equation: Equation,
    pub grid: Grid,
    mass: Option<CyclicBanded>,
}

impl Discretized {
    pub fn new(equation: Equation, grid: Grid) -> Self {
        let mass = equation
            .has_mass_operator()
            .then(|| equation.mass_operator(&grid));
        Discretized {
            equation,
            grid,
            mass,
        }
    }
}

impl SemiDiscrete for Discretized {
    fn dim(&self) -> usize {
        self.grid.n_x
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        self.equation.flux_rhs(u, &self.grid)
    }

    fn jacobian(&self, u: &[f64]) -> CyclicBanded {
        self.equation.flux_jacobian(u, &self.grid)
    }

    fn mass(&self) -> Option<&CyclicBanded> {
        self.mass.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Internal steps per output step.
    pub substeps: usize,
    /// Newton stops when the step residual infinity-norm is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            substeps: 4,
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 || self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::config(
                "integrator needs substeps >= 1, max_iterations >= 1 and tolerance > 0",
            ));
        }
        Ok(())
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Residual `M (u1 - u0) - dt f((u0 + u1) / 2)`.
fn residual(sys: &impl SemiDiscrete, u0: &[f64], u1: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let mid: Vec<f64> = u0.iter().zip(u1).map(|(a, b)| 0.5 * (a + b)).collect();
    let diff: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
    let lhs = match sys.mass() {
        Some(m) => m.matvec(&diff),
        None => diff,
    };
    let f = sys.rhs(&mid);
    let r = lhs.iter().zip(&f).map(|(l, f)| l - dt * f).collect();
    (r, mid)
}

/// One implicit midpoint step `M (u1 - u0) = dt f((u0 + u1) / 2)`, solved by
/// Newton's method starting from `u0`. On failure the error carries `step`
/// and the last residual norm; the sample id is filled in by the caller.
pub fn implicit_midpoint_step(
    sys: &impl SemiDiscrete,
    u0: &[f64],
    dt: f64,
    cfg: &IntegratorConfig,
    step: usize,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let mut u1 = u0.to_vec();
    let (mut r, mut mid) = residual(sys, u0, &u1, dt);
    let mut norm = inf_norm(&r);
    let identity;
    let mass = match sys.mass() {
        Some(m) => m,
        None => {
            identity = CyclicBanded::identity(n);
            &identity
        }
    };
    let mut iter = 0;
    while !(norm <= cfg.tolerance) {
        if iter == cfg.max_iterations || !norm.is_finite() {
            return Err(Error::Integration {
                sample: 0,
                step,
                residual: norm,
            });
        }
        let jac = mass.add_scaled(-0.5 * dt, &sys.jacobian(&mid));
        let lu = jac.factorize().map_err(|_| Error::Integration {
            sample: 0,
            step,
            residual: norm,
        })?;
        let delta = lu.solve(&r);
        for (u, d) in u1.iter_mut().zip(&delta) {
            *u -= d;
        }
        (r, mid) = residual(sys, u0, &u1, dt);
        norm = inf_norm(&r);
        iter += 1;
    }
    Ok(u1)
}

/// Rows `u(t_i)` for `t_i = i * dt_out`, `i = 0..=t_final / dt_out`, each
/// output step split into `cfg.substeps` internal steps.
pub fn generate_trajectory(
    sys: &impl SemiDiscrete,
    u0: &[f64],
    t_final: f64,
    dt_out: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if u0.len() != sys.dim() {
        return Err(Error::dim(format!(
            "initial state has {} entries, grid has {}",
            u0.len(),
            sys.dim()
        )));
    }
    let steps = integer_ratio(t_final, dt_out, "t_final / dt_out")?;
    let dt = dt_out / cfg.substeps as f64;
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(u0.to_vec());
    let mut u = u0.to_vec();
    for i in 0..steps {
        for s in 0..cfg.substeps {
            u = implicit_midpoint_step(sys, &u, dt, cfg, i * cfg.substeps + s)?;
        }
        rows.push(u.clone());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `du/dt = -a u` componentwise. With `stale` the Jacobian is reported
    /// as zero, which turns Newton into a slowly converging fixed point.
    struct Decay {
        a: f64,
        n: usize,
        stale: bool,
    }

    impl SemiDiscrete for Decay {
        fn dim(&self) -> usize {
            self.n
        }
        fn rhs(&self, u: &[f64]) -> Vec<f64> {
            u.iter().map(|v| -self.a * v).collect()
        }
        fn jacobian(&self, _: &[f64]) -> CyclicBanded {
            let a = if self.stale { 0.0 } else { -self.a };
            CyclicBanded::diagonal(&vec![a; self.n])
        }
        fn mass(&self) -> Option<&CyclicBanded> {
            None
        }
    }

    #[test]
    fn linear_decay_closed_form() {
        let sys = Decay { a: 1.0, n: 1, stale: false };
        let u1 = implicit_midpoint_step(&sys, &[1.0], 0.1, &IntegratorConfig::default(), 0)
            .unwrap();
        assert!((u1[0] - 0.95 / 1.05).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_is_fixed_point() {
        let sys = Decay { a: 0.0, n: 3, stale: false };
        let u0 = [0.3, -1.2, 7.0];
        let u1 = implicit_midpoint_step(&sys, &u0, 0.5, &IntegratorConfig::default(), 0)
            .unwrap();
        assert_eq!(u1, u0);
    }

    #[test]
    fn zero_horizon_gives_initial_row() {
        let sys = Decay { a: 1.0, n: 2, stale: false };
        let rows =
            generate_trajectory(&sys, &[1.0, 2.0], 0.0, 0.1, &IntegratorConfig::default())
                .unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn newton_failure_reports_step() {
        let sys = Decay {
            a: 1.0,
            n: 1,
            stale: true,
        };
        let cfg = IntegratorConfig {
            substeps: 1,
            tolerance: 1e-10,
            max_iterations: 2,
        };
        let err = generate_trajectory(&sys, &[1.0], 0.3, 0.1, &cfg).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 0, .. }), "{err}");
    }
}
