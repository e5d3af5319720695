//! Minimal f64 neural-network substrate: dense and LSTM layers with
//! hand-derived adjoints over a flat parameter vector, plus Adam.

pub mod activation;
pub mod adam;
pub mod dense;
pub mod grad;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use activation::Activation;
pub use adam::AdamState;
pub use dense::{DenseLayer, DenseStack, StackCache};
pub use grad::{
    compute_gradients, finite_difference_check, finite_difference_check_at, FnObjective,
    GradCheckEntry, GradCheckReport, Objective,
};
pub use lstm::{LstmCache, LstmLayer};
pub use params::{ParamEntry, ParamRange, ParameterSet};
pub use tensor::{gemm, Tensor};
