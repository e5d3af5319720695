//! Scaling, splitting and the binary trajectory file format.

pub mod io;
pub mod scaler;
pub mod split;

pub use io::{read_dataset, write_dataset};
pub use scaler::{FitDomain, Scaler, ScalerKind};
pub use split::{split_dataset, Split, SplitSpec};
