//! Name-keyed registry of imputation strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{StackedEnsemble, Validation};
use crate::error::{Error, Result};
use crate::imputers::{HorizontalRegression, Imputer, Method, VerticalRegression};
use crate::matrix_completion::MatrixCompletion;

/// Settings shared by the standard strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Seed for the random CV folds of HZ and MC.
    pub seed: u64,
    /// Reuse main-problem penalties inside ensemble folds.
    pub fast_mode: bool,
    /// Held-out periods for the horizontal ensemble; `None` uses the default.
    pub hc_periods: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            seed: crate::DEFAULT_SEED,
            fast_mode: false,
            hc_periods: None,
        }
    }
}

/// Strategies by name. Names are the canonical method names (`VR`, `HZ`,
/// `MC`, `ENS_VC`, `ENS_HC`) unless registered otherwise.
#[derive(Clone, Default)]
pub struct MethodRegistry {
    entries: BTreeMap<String, Arc<dyn Imputer>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The five standard strategies wired to one configuration.
    pub fn standard(cfg: &EstimatorConfig) -> Self {
        let vr: Arc<dyn Imputer> = Arc::new(VerticalRegression::default());
        let hz: Arc<dyn Imputer> = Arc::new(HorizontalRegression::new(cfg.seed));
        let mc: Arc<dyn Imputer> = Arc::new(MatrixCompletion::new(cfg.seed));
        let components = [vr.clone(), hz.clone(), mc.clone()];
        let mut reg = Self::new();
        reg.register(vr);
        reg.register(hz);
        reg.register(mc);
        reg.register(Arc::new(StackedEnsemble::new(
            components.clone(),
            Validation::Vertical,
            cfg.fast_mode,
        )));
        reg.register(Arc::new(StackedEnsemble::new(
            components,
            Validation::Horizontal {
                periods: cfg.hc_periods,
            },
            cfg.fast_mode,
        )));
        reg
    }

    /// Registers under the strategy's own name, replacing any previous entry.
    pub fn register(&mut self, imputer: Arc<dyn Imputer>) {
        self.entries.insert(imputer.name().to_string(), imputer);
    }

    pub fn register_as(&mut self, name: impl Into<String>, imputer: Arc<dyn Imputer>) {
        self.entries.insert(name.into(), imputer);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Imputer>> {
        self.entries.get(name)
    }

    pub fn method(&self, method: Method) -> Result<&Arc<dyn Imputer>> {
        self.get(method.name())
            .ok_or_else(|| Error::UnknownMethod(method.name().to_string()))
    }

    /// Looks a strategy up by any accepted spelling of its name.
    pub fn resolve(&self, name: &str) -> Result<&Arc<dyn Imputer>> {
        if let Some(imp) = self.get(name) {
            return Ok(imp);
        }
        let method: Method = name.parse()?;
        self.method(method)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}
