pub mod czd;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod maximal;
pub mod norms;
pub mod operators;
pub mod space;

pub use error::{Error, Result};

pub use czd::{cz_decompose, CzDecomposition, CzOptions};
pub use fixtures::{make_space, FixtureSpec};
pub use harness::{ExperimentConfig, RunReport, SuiteName};
pub use kernels::{Diagonal, KernelMatrix, KernelSpec};
pub use norms::OrliczFn;
pub use operators::FunctionVec;
pub use space::{Ball, SamplePlan, Space};
