//! Sparse Kernel Flows with description-length model selection.
//!
//! * [`kernels`]: base kernel catalogue, weighted dictionary kernel, Gram assembly.
//! * [`rkhs`]: representer-theorem interpolation, RKHS norms, posterior variance.
//! * [`kf_loss`]: the Kernel Flows relative error ρ and its analytic gradient.
//! * [`mdl`]: exhaustive support search scored by `mean ρ + (p/2)·ln N`, and BIC.
//! * [`sparse`]: proximal-gradient L1 surrogate with MDL rescoring.
//! * [`harness`]: datasets, synthetic generators, experiments and reports.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`Exec`].

pub mod error;
pub mod exec;
pub mod harness;
pub mod kernels;
pub mod kf_loss;
pub mod linalg;
pub mod mdl;
pub mod rkhs;
pub mod sparse;

pub use error::{Error, Result};
pub use exec::Exec;
pub use harness::{Dataset, Provenance};
pub use kernels::{BaseKernel, Family, GramMatrix, KernelDictionary, Nugget};
pub use kf_loss::{BatchPair, KfConfig, RhoValue};
pub use mdl::{OptConfig, SelectionReport, SupportSet};
pub use rkhs::FittedModel;
pub use sparse::SparseFitResult;
