//! Multi-resolution operator surrogates for 1-D periodic PDEs.
//!
//! * [`pde`] generates reference trajectories (KdV, BBM, Cahn-Hilliard,
//!   viscous Burgers) with central differences and the implicit midpoint rule.
//! * [`nn`], [`deeponet`] and [`donlstm`] implement the networks.
//! * [`adaptive`] and [`trainer`] implement the self-adaptive loss and the
//!   staged training procedure.
//! * [`data`], [`metrics`] and [`experiment`] cover scaling, file formats,
//!   evaluation and the command-line workflows.

pub mod adaptive;
pub mod data;
pub mod deeponet;
pub mod donlstm;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pde;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
