use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pde::banded::CyclicBanded;
use crate::pde::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationKind {
    Kdv,
    Bbm,
    CahnHilliard,
    Burgers,
}

impl EquationKind {
    pub const ALL: [EquationKind; 4] = [
        EquationKind::Kdv,
        EquationKind::Bbm,
        EquationKind::CahnHilliard,
        EquationKind::Burgers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EquationKind::Kdv => "kdv",
            EquationKind::Bbm => "bbm",
            EquationKind::CahnHilliard => "cahn_hilliard",
            EquationKind::Burgers => "burgers",
        }
    }

    /// Stable one-byte tag used in dataset headers.
    pub fn tag(self) -> u8 {
        match self {
            EquationKind::Kdv => 0,
            EquationKind::Bbm => 1,
            EquationKind::CahnHilliard => 2,
            EquationKind::Burgers => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for EquationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EquationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown equation `{s}`")))
    }
}

/// A PDE on a periodic 1-D domain with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Equation {
    /// `u_t + gamma u_xxx + eta u u_x = 0`.
    Kdv { gamma: f64, eta: f64 },
    /// `u_t - u_xxt + (u + u^2/2)_x = 0`.
    Bbm,
    /// `u_t = (nu u + alpha u^3 + mu u_xx)_xx`.
    CahnHilliard { nu: f64, alpha: f64, mu: f64 },
    /// `u_t + (u^2/2)_x = (nu/pi) u_xx`.
    Burgers { nu: f64 },
}

impl Equation {
    pub fn default_for(kind: EquationKind) -> Self {
        match kind {
            EquationKind::Kdv => Equation::Kdv {
                gamma: 1.0,
                eta: 6.0,
            },
            EquationKind::Bbm => Equation::Bbm,
            EquationKind::CahnHilliard => Equation::CahnHilliard {
                nu: -0.01,
                alpha: 0.01,
                mu: -1e-5,
            },
            EquationKind::Burgers => Equation::Burgers { nu: 0.001 },
        }
    }

    pub fn kind(&self) -> EquationKind {
        match self {
            Equation::Kdv { .. } => EquationKind::Kdv,
            Equation::Bbm => EquationKind::Bbm,
            Equation::CahnHilliard { .. } => EquationKind::CahnHilliard,
            Equation::Burgers { .. } => EquationKind::Burgers,
        }
    }

    /// Whether the time derivative carries the mass operator `I - D2`.
    pub fn has_mass_operator(&self) -> bool {
        matches!(self, Equation::Bbm)
    }

    /// Right-hand side `g(u)`: the time derivative for every equation except
    /// BBM, where `(I - D2) u_t = g(u)`. Every term is a difference of fluxes,
    /// so `sum(g) = 0` on a periodic grid.
    pub fn flux_rhs(&self, u: &[f64], grid: &Grid) -> Vec<f64> {
        let dx = grid.dx();
        match *self {
            Equation::Kdv { gamma, eta } => {
                let half_sq: Vec<f64> = u.iter().map(|v| 0.5 * v * v).collect();
                let d3 = d3(u, dx);
                let adv = d1(&half_sq, dx);
                d3.iter()
                    .zip(&adv)
                    .map(|(a, b)| -gamma * a - eta * b)
                    .collect()
            }
            Equation::Bbm => {
                let flux: Vec<f64> = u.iter().map(|v| v + 0.5 * v * v).collect();
                d1(&flux, dx).into_iter().map(|v| -v).collect()
            }
            Equation::CahnHilliard { nu, alpha, mu } => {
                let uxx = d2(u, dx);
                let chem: Vec<f64> = u
                    .iter()
                    .zip(&uxx)
                    .map(|(v, w)| nu * v + alpha * v * v * v + mu * w)
                    .collect();
                d2(&chem, dx)
            }
            Equation::Burgers { nu } => {
                let half_sq: Vec<f64> = u.iter().map(|v| 0.5 * v * v).collect();
                let adv = d1(&half_sq, dx);
                let diff = d2(u, dx);
                adv.iter()
                    .zip(&diff)
                    .map(|(a, d)| -a + nu / PI * d)
                    .collect()
            }
        }
    }

    /// Jacobian of [`Equation::flux_rhs`] as a cyclic banded matrix.
    pub fn flux_jacobian(&self, u: &[f64], grid: &Grid) -> CyclicBanded {
        let n = grid.n_x;
        let dx = grid.dx();
        let ops = Operators::new(n, dx);
        match *self {
            Equation::Kdv { gamma, eta } => ops
                .d3
                .clone()
                .scale(-gamma)
                .add_scaled(-eta, &ops.d1.mul_diag(u)),
            Equation::Bbm => {
                let d: Vec<f64> = u.iter().map(|v| 1.0 + v).collect();
                ops.d1.mul_diag(&d).scale(-1.0)
            }
            Equation::CahnHilliard { nu, alpha, mu } => {
                let d: Vec<f64> = u.iter().map(|v| nu + 3.0 * alpha * v * v).collect();
                let inner = CyclicBanded::diagonal(&d).add_scaled(mu, &ops.d2);
                ops.d2.matmul(&inner)
            }
            Equation::Burgers { nu } => ops
                .d1
                .mul_diag(u)
                .scale(-1.0)
                .add_scaled(nu / PI, &ops.d2),
        }
    }

    /// Mass operator `I - D2` for BBM, identity otherwise.
    pub fn mass_operator(&self, grid: &Grid) -> CyclicBanded {
        if self.has_mass_operator() {
            let ops = Operators::new(grid.n_x, grid.dx());
            CyclicBanded::identity(grid.n_x).add_scaled(-1.0, &ops.d2)
        } else {
            CyclicBanded::identity(grid.n_x)
        }
    }
}

/// Periodic central-difference operators as matrices.
pub struct Operators {
    pub d1: CyclicBanded,
    pub d2: CyclicBanded,
    pub d3: CyclicBanded,
}

impl Operators {
    pub fn new(n: usize, dx: f64) -> Self {
        let d1 = CyclicBanded::stencil(n, &[-0.5 / dx, 0.0, 0.5 / dx]);
        let s = 1.0 / (dx * dx);
        let d2 = CyclicBanded::stencil(n, &[s, -2.0 * s, s]);
        let d3 = d1.matmul(&d2);
        Operators { d1, d2, d3 }
    }
}

#[inline]
fn wrap(j: isize, n: usize) -> usize {
    j.rem_euclid(n as isize) as usize
}

/// `(u_{j+1} - u_{j-1}) / (2 dx)`.
pub fn d1(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|j| {
            let j = j as isize;
            (u[wrap(j + 1, n)] - u[wrap(j - 1, n)]) / (2.0 * dx)
        })
        .collect()
}

/// `(u_{j+1} - 2 u_j + u_{j-1}) / dx^2`.
pub fn d2(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|j| {
            let i = j as isize;
            (u[wrap(i + 1, n)] - 2.0 * u[j] + u[wrap(i - 1, n)]) / (dx * dx)
        })
        .collect()
}

/// `D1 D2 u = (u_{j+2} - 2 u_{j+1} + 2 u_{j-1} - u_{j-2}) / (2 dx^3)`.
pub fn d3(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|j| {
            let j = j as isize;
            (u[wrap(j + 2, n)] - 2.0 * u[wrap(j + 1, n)] + 2.0 * u[wrap(j - 1, n)]
                - u[wrap(j - 2, n)])
                / (2.0 * dx * dx * dx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid(n: usize, p: f64) -> Grid {
        Grid::new(0.0, p, n).unwrap()
    }

    #[test]
    fn constant_state_has_zero_rhs() {
        let g = grid(50, 10.0);
        for kind in EquationKind::ALL {
            let eq = Equation::default_for(kind);
            let rhs = eq.flux_rhs(&vec![0.7; 50], &g);
            assert!(rhs.iter().all(|v| v.abs() < 1e-9), "{kind}");
        }
    }

    #[test]
    fn rhs_sums_to_zero() {
        let g = grid(64, 10.0);
        let mut rng = crate::rng::seeded(9);
        for kind in EquationKind::ALL {
            let eq = Equation::default_for(kind);
            let u: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let total: f64 = eq.flux_rhs(&u, &g).iter().sum::<f64>() * g.dx();
            assert!(total.abs() < 1e-13 * 1e3, "{kind}: {total}");
        }
    }

    #[test]
    fn stencil_functions_match_matrices() {
        let n = 17;
        let dx = 0.3;
        let ops = Operators::new(n, dx);
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        for (f, m) in [(d1 as fn(&[f64], f64) -> Vec<f64>, &ops.d1), (d2, &ops.d2), (d3, &ops.d3)] {
            for (a, b) in f(&u, dx).iter().zip(m.matvec(&u)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let g = grid(12, 3.0);
        let mut rng = crate::rng::seeded(4);
        for kind in EquationKind::ALL {
            let eq = Equation::default_for(kind);
            let u: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jac = eq.flux_jacobian(&u, &g).to_dense();
            for k in 0..12 {
                let h = 1e-6;
                let mut up = u.clone();
                up[k] += h;
                let mut dn = u.clone();
                dn[k] -= h;
                let fu = eq.flux_rhs(&up, &g);
                let fd = eq.flux_rhs(&dn, &g);
                for j in 0..12 {
                    let num = (fu[j] - fd[j]) / (2.0 * h);
                    let scale = 1.0 + jac[j][k].abs();
                    assert!((num - jac[j][k]).abs() < 1e-5 * scale, "{kind} ({j},{k})");
                }
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in EquationKind::ALL {
            assert_eq!(kind.name().parse::<EquationKind>().unwrap(), kind);
            assert_eq!(EquationKind::from_tag(kind.tag()), Some(kind));
        }
        assert!("heat".parse::<EquationKind>().is_err());
    }
}
