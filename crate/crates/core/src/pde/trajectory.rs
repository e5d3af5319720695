//! Sets of trajectories and their generation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{
    generate_trajectory, Discretized, EquationKind, IcParams, IntegratorConfig, Problem,
};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    High,
    Low,
}

impl Resolution {
    pub fn name(self) -> &'static str {
        match self {
            Resolution::High => "high",
            Resolution::Low => "low",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Resolution::High => 0,
            Resolution::Low => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Resolution::High),
            1 => Some(Resolution::Low),
            _ => None,
        }
    }
}

/// `n` trajectories on a shared `(t, x)` grid, stored as `u[s][i][j]`
/// (sample, time, space) in one row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub equation: EquationKind,
    pub resolution: Resolution,
    pub dt: f64,
    pub dx: f64,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub u: Vec<f64>,
}

impl TrajectorySet {
    pub fn n_t(&self) -> usize {
        self.ts.len()
    }

    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    pub fn frame_len(&self) -> usize {
        self.n_t() * self.n_x()
    }

    pub fn len(&self) -> usize {
        if self.frame_len() == 0 {
            0
        } else {
            self.u.len() / self.frame_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `[n_t x n_x]` block of one sample.
    pub fn sample(&self, s: usize) -> &[f64] {
        let f = self.frame_len();
        &self.u[s * f..(s + 1) * f]
    }

    /// The initial state of one sample.
    pub fn initial(&self, s: usize) -> &[f64] {
        &self.sample(s)[..self.n_x()]
    }

    /// Samples `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TrajectorySet {
        let mut u = Vec::with_capacity(indices.len() * self.frame_len());
        for &s in indices {
            u.extend_from_slice(self.sample(s));
        }
        TrajectorySet {
            u,
            ..self.header_clone()
        }
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> TrajectorySet {
        TrajectorySet {
            u: self.u[..n * self.frame_len()].to_vec(),
            ..self.header_clone()
        }
    }

    fn header_clone(&self) -> TrajectorySet {
        TrajectorySet {
            equation: self.equation,
            resolution: self.resolution,
            dt: self.dt,
            dx: self.dx,
            xs: self.xs.clone(),
            ts: self.ts.clone(),
            u: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len() == 0 || self.u.len() % self.frame_len() != 0 {
            return Err(Error::dim(format!(
                "{} values do not form whole {} x {} trajectories",
                self.u.len(),
                self.n_t(),
                self.n_x()
            )));
        }
        Ok(())
    }
}

/// Keeps time rows `0, factor, 2 factor, ...` of every sample.
pub fn downsample_time(set: &TrajectorySet, factor: usize) -> Result<TrajectorySet> {
    let n_t = set.n_t();
    if factor == 0 || n_t == 0 || (n_t - 1) % factor != 0 {
        return Err(Error::config(format!(
            "{} time intervals are not divisible by factor {factor}",
            n_t.saturating_sub(1)
        )));
    }
    let n_x = set.n_x();
    let keep: Vec<usize> = (0..n_t).step_by(factor).collect();
    let mut u = Vec::with_capacity(set.len() * keep.len() * n_x);
    for s in 0..set.len() {
        let block = set.sample(s);
        for &i in &keep {
            u.extend_from_slice(&block[i * n_x..(i + 1) * n_x]);
        }
    }
    Ok(TrajectorySet {
        equation: set.equation,
        resolution: if factor == 1 {
            set.resolution
        } else {
            Resolution::Low
        },
        dt: set.dt * factor as f64,
        dx: set.dx,
        xs: set.xs.clone(),
        ts: keep.iter().map(|&i| set.ts[i]).collect(),
        u,
    })
}

/// Thread count from `OPERON_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("OPERON_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a pool capped by `OPERON_THREADS`.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Generates `count` high-resolution trajectories. Sample `i` draws its
/// initial condition from the stream `(seed, stream, i)`, so the result does
/// not depend on the thread count and the first `k` samples of a larger set
/// equal a set of size `k`.
pub fn generate_set(
    problem: &Problem,
    integrator: &IntegratorConfig,
    seed: u64,
    stream: Stream,
    count: usize,
) -> Result<TrajectorySet> {
    problem.validate()?;
    integrator.validate()?;
    let kind = problem.equation.kind();
    let sys = Discretized::new(problem.equation, problem.grid);
    let steps = problem.steps_high()?;
    let rows: Vec<Vec<Vec<f64>>> = with_thread_pool(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, stream, i as u64);
                let ic = IcParams::sample(kind, &problem.ic, &mut rng);
                let u0 = ic.evaluate(&problem.grid);
                let traj =
                    generate_trajectory(&sys, &u0, problem.t_final, problem.dt_high, integrator)
                        .map_err(|e| match e {
                            Error::Integration { step, residual, .. } => Error::Integration {
                                sample: i,
                                step,
                                residual,
                            },
                            other => other,
                        })?;
                log::debug!("{kind} sample {i} done");
                Ok(traj)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let n_x = problem.grid.n_x;
    let mut u = Vec::with_capacity(count * (steps + 1) * n_x);
    for traj in rows {
        for row in traj {
            u.extend_from_slice(&row);
        }
    }
    Ok(TrajectorySet {
        equation: kind,
        resolution: Resolution::High,
        dt: problem.dt_high,
        dx: problem.grid.dx(),
        xs: problem.grid.nodes(),
        ts: (0..=steps).map(|i| i as f64 * problem.dt_high).collect(),
        u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, n_t: usize, n_x: usize) -> TrajectorySet {
        TrajectorySet {
            equation: EquationKind::Kdv,
            resolution: Resolution::High,
            dt: 0.1,
            dx: 0.5,
            xs: (0..n_x).map(|j| j as f64 * 0.5).collect(),
            ts: (0..n_t).map(|i| i as f64 * 0.1).collect(),
            u: (0..n * n_t * n_x).map(|v| v as f64).collect(),
        }
    }

    #[test]
    fn downsample_counts_and_subset() {
        let set = toy(2, 201, 3);
        let low = downsample_time(&set, 5).unwrap();
        assert_eq!(low.n_t(), 41);
        assert_eq!(low.len(), 2);
        for s in 0..2 {
            for k in 0..41 {
                assert_eq!(
                    &low.sample(s)[k * 3..(k + 1) * 3],
                    &set.sample(s)[5 * k * 3..(5 * k + 1) * 3]
                );
            }
        }
        assert_eq!(downsample_time(&set, 1).unwrap(), set);
        assert!(downsample_time(&toy(1, 10, 3), 4).is_err());
    }

    #[test]
    fn select_and_head() {
        let set = toy(3, 2, 2);
        assert_eq!(set.select(&[2, 0]).sample(0), set.sample(2));
        assert_eq!(set.head(2).len(), 2);
        assert_eq!(set.initial(1), &[4.0, 5.0]);
    }
}
