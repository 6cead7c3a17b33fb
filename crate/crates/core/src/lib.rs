//! Counterfactual imputation for panel data.
pub mod bench;
pub mod elastic_net;
pub mod ensemble;
pub mod error;
pub mod imputers;
pub mod matrix_completion;
pub mod panel;
pub mod registry;

pub use bench::{
    emit_report, generate_synthetic_panel, pseudo_treatment_eval, BenchmarkConfig,
    BenchmarkReport, ReportFormat, SyntheticSpec,
};
pub use ensemble::{EnsembleWeights, StackedEnsemble, Validation};
pub use error::{Error, Result};
pub use imputers::{estimate_effect, ImputationResult, Imputer, Method, Penalty};
pub use panel::{CsvLayout, MaskedPanel, OutcomeTransform, Panel};
pub use registry::{EstimatorConfig, MethodRegistry};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;
