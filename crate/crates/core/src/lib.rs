//! Imputation toolkit for sparsely and irregularly observed functional data.
//!
//! The crate covers the full pipeline from raw sparse curves to fitted
//! scalar-on-function regression models:
//!
//! * [`func_data`] — grids, sparse curves, grid alignment, binning, splines
//! * [`sim`] — Matérn Gaussian-process simulation, MCAR sparsification,
//!   scalar/binary response generation
//! * [`fpca`] — sparse functional PCA and PACE conditional-expectation
//!   imputation
//! * [`forest`] — regression trees, random forests, forest kernel weights,
//!   local linear forest prediction
//! * [`impute`] — chained-equation imputation engines (MICE, MissForest,
//!   MLLF) with binning and PACE initialization variants
//! * [`sofr`] — penalized scalar-on-function regression (linear, logistic,
//!   continuously additive)
//! * [`io`] — CSV readers/writers for the file formats used by the CLI

pub mod error;
pub mod fpca;
pub mod forest;
pub mod func_data;
pub mod impute;
pub mod io;
pub(crate) mod linalg;
pub mod sim;
pub mod sofr;
pub mod spline;

pub use error::{Error, Result};
pub use fpca::{CovSurface, EigenSystem, MeanEstimate, PaceOptions};
pub use forest::{Forest, ForestParams, WeightVector};
pub use func_data::{
    BinSpec, Grid, IncompleteMatrix, SparseCurve, SparseFunctionalDataset,
};
pub use impute::{
    ImputationResult, ImputationTask, InitKind, MethodSpec, ResponseColumn,
};
pub use sim::{
    GeneratedDataset, MaternNu, MaternParams, NoiseSpec, ResponseKind,
    ResponseSpec, SparsitySpec,
};
pub use sofr::{CamModel, FunctionalLinearModel};
pub use spline::SplineBasis;
