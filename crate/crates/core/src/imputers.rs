//! Common imputer interface plus the vertical and horizontal regression
//! imputers.
//!
//! The vertical regression explains the target unit's history with the other
//! units' contemporaneous outcomes (periods are samples); the horizontal
//! regression explains the target period's outcomes with each unit's own
//! earlier outcomes (units are samples). Both are the same elastic-net fit on
//! transposed data.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elastic_net::{fit_at, select_penalties_cv, PenaltyGrid};
use crate::ensemble::EnsembleWeights;
use crate::error::{Error, Result};
use crate::panel::{MaskedPanel, Panel};

/// Imputation methods known to the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "VR")]
    Vr,
    #[serde(rename = "HZ")]
    Hz,
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "ENS_VC")]
    EnsVc,
    #[serde(rename = "ENS_HC")]
    EnsHc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Vr, Method::Hz, Method::Mc, Method::EnsVc, Method::EnsHc];
    pub const BASE: [Method; 3] = [Method::Vr, Method::Hz, Method::Mc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vr => "VR",
            Method::Hz => "HZ",
            Method::Mc => "MC",
            Method::EnsVc => "ENS_VC",
            Method::EnsHc => "ENS_HC",
        }
    }

    /// Column label used in the text table.
    pub fn label(self) -> &'static str {
        match self {
            Method::Vr => "VR",
            Method::Hz => "HZ",
            Method::Mc => "MC",
            Method::EnsVc => "Ens-VC",
            Method::EnsHc => "Ens-HC",
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Method::EnsVc | Method::EnsHc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "VR" | "VT" => Ok(Method::Vr),
            "HZ" | "HR" => Ok(Method::Hz),
            "MC" => Ok(Method::Mc),
            "ENS_VC" | "VC" => Ok(Method::EnsVc),
            "ENS_HC" | "HC" => Ok(Method::EnsHc),
            _ => Err(Error::UnknownMethod(s.to_string())),
        }
    }
}

/// Penalty used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    ElasticNet { lambda: f64, mixing: f64 },
    Nuclear { lambda: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Coefficients {
        intercept: f64,
        coefficients: Vec<f64>,
    },
    LowRank {
        rank: usize,
        unit_effect: f64,
        time_effect: f64,
        low_rank_value: f64,
    },
    Weights {
        weights: EnsembleWeights,
        /// Stacking rows that survived (held-out units or periods).
        folds_used: usize,
        /// Imputations of the target by VR, HZ and MC that were combined.
        components: [f64; 3],
    },
}

/// One method's imputation of the target cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub value: f64,
    pub method: Method,
    /// Non-zero coefficients (VR, HZ) or rank (MC); absent for ensembles.
    pub complexity: Option<f64>,
    pub diagnostics: Diagnostics,
    pub penalty: Penalty,
    /// How cross-validation folds were formed, for auditing.
    pub fold_scheme: Option<String>,
}

/// A counterfactual imputation strategy.
pub trait Imputer: Send + Sync {
    fn method(&self) -> Method;

    fn name(&self) -> &'static str {
        self.method().name()
    }

    /// Imputes the target cell of `mp`, tuning penalties internally.
    fn impute(&self, mp: &MaskedPanel) -> Result<ImputationResult>;

    /// Imputes with a penalty fixed in advance. Strategies without a tunable
    /// penalty, or given a penalty of the wrong kind, fall back to `impute`.
    fn impute_with_penalty(&self, mp: &MaskedPanel, penalty: &Penalty) -> Result<ImputationResult> {
        let _ = penalty;
        self.impute(mp)
    }

    /// Imputes given the VR, HZ and MC results for the same `mp`. Only
    /// ensembles make use of them.
    fn impute_with_components(
        &self,
        mp: &MaskedPanel,
        components: &[ImputationResult; 3],
    ) -> Result<ImputationResult> {
        let _ = components;
        self.impute(mp)
    }
}

/// How regression samples are split for penalty cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FoldScheme {
    /// Consecutive blocks of samples.
    Contiguous { max_folds: usize },
    /// Seeded random balanced assignment.
    Random { max_folds: usize, seed: u64 },
    /// Fold id per sample.
    Explicit(Vec<usize>),
}

impl FoldScheme {
    /// Fold id for each of `n` samples. The fold count is
    /// `min(max_folds, n - 1)`, but never below 2.
    pub fn assign(&self, n: usize) -> Result<Vec<usize>> {
        if n < 2 {
            return Err(Error::Fold(format!("cannot split {n} samples into folds")));
        }
        let count = |max: usize| max.min(n - 1).max(2);
        match self {
            FoldScheme::Contiguous { max_folds } => {
                let k = count(*max_folds);
                Ok((0..n).map(|s| s * k / n).collect())
            }
            FoldScheme::Random { max_folds, seed } => {
                let k = count(*max_folds);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                let mut folds = vec![0; n];
                for (pos, &s) in order.iter().enumerate() {
                    folds[s] = pos * k / n;
                }
                Ok(folds)
            }
            FoldScheme::Explicit(f) => {
                if f.len() != n {
                    return Err(Error::Fold(format!(
                        "explicit folds cover {} samples, need {n}",
                        f.len()
                    )));
                }
                Ok(f.clone())
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FoldScheme::Contiguous { max_folds } => format!("contiguous:max{max_folds}"),
            FoldScheme::Random { max_folds, seed } => format!("random:max{max_folds}:seed={seed}"),
            FoldScheme::Explicit(_) => "explicit".to_string(),
        }
    }
}

/// Regression problem extracted from a masked panel.
struct Design {
    x: DMatrix<f64>,
    y: Vec<f64>,
    target_row: Vec<f64>,
}

fn require_single_hidden(mp: &MaskedPanel) -> Result<()> {
    if mp.only_target_hidden() {
        Ok(())
    } else {
        Err(Error::Mask(
            "regression imputers need every cell visible except the target".into(),
        ))
    }
}

/// Samples are periods other than the target period; predictors are the
/// other units.
fn vertical_design(mp: &MaskedPanel) -> Result<Design> {
    require_single_hidden(mp)?;
    let (ti, tt) = mp.target();
    let y_all = mp.panel().values();
    let periods: Vec<usize> = (0..mp.n_periods()).filter(|&t| t != tt).collect();
    let units: Vec<usize> = (0..mp.n_units()).filter(|&i| i != ti).collect();
    if periods.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "vertical regression needs at least 2 training periods, have {}",
            periods.len()
        )));
    }
    if units.is_empty() {
        return Err(Error::InsufficientUnits("no control units".into()));
    }
    Ok(Design {
        x: DMatrix::from_fn(periods.len(), units.len(), |s, j| y_all[(units[j], periods[s])]),
        y: periods.iter().map(|&t| y_all[(ti, t)]).collect(),
        target_row: units.iter().map(|&i| y_all[(i, tt)]).collect(),
    })
}

/// Samples are units other than the target unit; predictors are the other
/// periods.
fn horizontal_design(mp: &MaskedPanel) -> Result<Design> {
    require_single_hidden(mp)?;
    let (ti, tt) = mp.target();
    let y_all = mp.panel().values();
    let units: Vec<usize> = (0..mp.n_units()).filter(|&i| i != ti).collect();
    let periods: Vec<usize> = (0..mp.n_periods()).filter(|&t| t != tt).collect();
    if units.len() < 2 {
        return Err(Error::InsufficientUnits(format!(
            "horizontal regression needs at least 2 control units, have {}",
            units.len()
        )));
    }
    if periods.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "horizontal regression needs at least 2 earlier periods, have {}",
            periods.len()
        )));
    }
    Ok(Design {
        x: DMatrix::from_fn(units.len(), periods.len(), |s, j| y_all[(units[s], periods[j])]),
        y: units.iter().map(|&i| y_all[(i, tt)]).collect(),
        target_row: periods.iter().map(|&t| y_all[(ti, t)]).collect(),
    })
}

fn regress(
    design: Design,
    method: Method,
    folds: &FoldScheme,
    grid: &PenaltyGrid,
    fixed: Option<(f64, f64)>,
) -> Result<ImputationResult> {
    let (lambda, mixing) = match fixed {
        Some(p) => p,
        None => {
            let assignment = folds.assign(design.y.len())?;
            let choice = select_penalties_cv(&design.x, &design.y, &assignment, grid)?;
            (choice.lambda, choice.mixing)
        }
    };
    let fit = fit_at(&design.x, &design.y, lambda, mixing, grid)?;
    let value = fit.predict_row(&design.target_row);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("{method} produced a non-finite imputation")));
    }
    Ok(ImputationResult {
        value,
        method,
        complexity: Some(fit.n_nonzero as f64),
        penalty: Penalty::ElasticNet { lambda, mixing },
        diagnostics: Diagnostics::Coefficients {
            intercept: fit.intercept,
            coefficients: fit.coefficients,
        },
        fold_scheme: fixed.is_none().then(|| folds.describe()),
    })
}

fn fixed_elastic_net(penalty: &Penalty) -> Option<(f64, f64)> {
    match *penalty {
        Penalty::ElasticNet { lambda, mixing } => Some((lambda, mixing)),
        _ => None,
    }
}

/// Elastic-net regression of the target unit on the other units.
#[derive(Debug, Clone)]
pub struct VerticalRegression {
    pub folds: FoldScheme,
    pub grid: PenaltyGrid,
}

impl Default for VerticalRegression {
    fn default() -> Self {
        Self {
            folds: FoldScheme::Contiguous { max_folds: 5 },
            grid: PenaltyGrid::default(),
        }
    }
}

impl Imputer for VerticalRegression {
    fn method(&self) -> Method {
        Method::Vr
    }

    fn impute(&self, mp: &MaskedPanel) -> Result<ImputationResult> {
        regress(vertical_design(mp)?, Method::Vr, &self.folds, &self.grid, None)
    }

    fn impute_with_penalty(&self, mp: &MaskedPanel, penalty: &Penalty) -> Result<ImputationResult> {
        match fixed_elastic_net(penalty) {
            Some(p) => regress(vertical_design(mp)?, Method::Vr, &self.folds, &self.grid, Some(p)),
            None => self.impute(mp),
        }
    }
}

/// Elastic-net regression of the target period on earlier periods, across
/// units.
#[derive(Debug, Clone)]
pub struct HorizontalRegression {
    pub folds: FoldScheme,
    pub grid: PenaltyGrid,
}

impl HorizontalRegression {
    pub fn new(seed: u64) -> Self {
        Self {
            folds: FoldScheme::Random { max_folds: 10, seed },
            grid: PenaltyGrid::default(),
        }
    }
}

impl Default for HorizontalRegression {
    fn default() -> Self {
        Self::new(crate::DEFAULT_SEED)
    }
}

impl Imputer for HorizontalRegression {
    fn method(&self) -> Method {
        Method::Hz
    }

    fn impute(&self, mp: &MaskedPanel) -> Result<ImputationResult> {
        regress(horizontal_design(mp)?, Method::Hz, &self.folds, &self.grid, None)
    }

    fn impute_with_penalty(&self, mp: &MaskedPanel, penalty: &Penalty) -> Result<ImputationResult> {
        match fixed_elastic_net(penalty) {
            Some(p) => regress(horizontal_design(mp)?, Method::Hz, &self.folds, &self.grid, Some(p)),
            None => self.impute(mp),
        }
    }
}

/// Treatment effect `Y_obs - Y(0)_hat` for `unit` in `period`, imputing from
/// periods up to and including `period`.
pub fn estimate_effect(panel: &Panel, unit: usize, period: usize, imputer: &dyn Imputer) -> Result<f64> {
    let mp = panel.restrict(unit, period)?;
    let imputed = imputer.impute(&mp)?;
    Ok(panel.get(unit, period) - imputed.value)
}
