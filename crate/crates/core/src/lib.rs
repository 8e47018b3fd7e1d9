//! Bootstrap inference for two-level nested Gaussian linear mixed-effects
//! models: REML fitting, five bootstrap procedures (cases, parametric,
//! residual, random-effects block, wild), bootstrap summaries and confidence
//! intervals, deterministic parallel execution, and lineup-diagnostic data.

pub mod error;
pub mod fit;
pub mod formula;
mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
pub use fit::{eblups, fit_reml, profiled_deviance, FittedModel, VarianceComponents};
pub use formula::parse_formula;
pub use model::{build_design, simulate_response, ClusterBlock, GroupedData, ModelSpec, Parameters, Term};
pub use table::DataTable;
