//! Stacked combination of the VR, HZ and MC imputers.
//!
//! Weights are the least-squares fit of held-out outcomes on held-out
//! predictions, restricted to the probability simplex and without an
//! intercept. Vertical cross-validation holds out each control unit's target
//! period; horizontal cross-validation holds out the target unit's most recent
//! earlier periods, using only data up to the held-out period.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputers::{Diagnostics, ImputationResult, Imputer, Method, Penalty};
use crate::panel::MaskedPanel;

/// Convex weights on (VR, HZ, MC).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub theta_vt: f64,
    pub theta_hz: f64,
    pub theta_mc: f64,
}

impl EnsembleWeights {
    pub const VR: Self = Self::from_array([1.0, 0.0, 0.0]);
    pub const HZ: Self = Self::from_array([0.0, 1.0, 0.0]);
    pub const MC: Self = Self::from_array([0.0, 0.0, 1.0]);

    pub const fn from_array(w: [f64; 3]) -> Self {
        Self {
            theta_vt: w[0],
            theta_hz: w[1],
            theta_mc: w[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.theta_vt, self.theta_hz, self.theta_mc]
    }

    pub fn combine(&self, p: &[f64; 3]) -> f64 {
        self.theta_vt * p[0] + self.theta_hz * p[1] + self.theta_mc * p[2]
    }

    /// Elementwise mean; `None` for an empty slice.
    pub fn average(all: &[EnsembleWeights]) -> Option<EnsembleWeights> {
        if all.is_empty() {
            return None;
        }
        let mut sum = [0.0; 3];
        for w in all {
            for (s, v) in sum.iter_mut().zip(w.as_array()) {
                *s += v;
            }
        }
        let n = all.len() as f64;
        Some(Self::from_array(sum.map(|s| s / n)))
    }
}

/// Held-out predictions (columns VR, HZ, MC) and the outcomes they target.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StackingProblem {
    pub predictions: Vec<[f64; 3]>,
    pub targets: Vec<f64>,
}

impl StackingProblem {
    pub fn push(&mut self, predictions: [f64; 3], target: f64) {
        self.predictions.push(predictions);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Sum of squared stacking residuals at `weights`. Terms are added in
    /// sorted order so the value does not depend on row order.
    pub fn loss(&self, weights: &EnsembleWeights) -> f64 {
        let mut terms: Vec<f64> = self
            .predictions
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| (y - weights.combine(p)).powi(2))
            .collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact minimizer of the stacking loss over the simplex.
///
/// Every face of the simplex (three vertices, three edges, the interior) is
/// solved as an equality-constrained least-squares problem; feasible
/// candidates are scored and the smallest loss wins. Exact ties prefer more
/// weight on VR, then on HZ. Rows are put in a canonical order first, so the
/// result does not depend on how they were supplied.
pub fn solve_simplex_ls(problem: &StackingProblem) -> Result<EnsembleWeights> {
    if problem.is_empty() {
        return Err(Error::Ensemble("stacking problem has no rows".into()));
    }
    if problem.predictions.len() != problem.targets.len() {
        return Err(Error::Ensemble("prediction and target counts differ".into()));
    }
    if problem
        .predictions
        .iter()
        .flatten()
        .chain(&problem.targets)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("non-finite value in stacking problem".into()));
    }

    let mut rows: Vec<([f64; 3], f64)> = problem
        .predictions
        .iter()
        .copied()
        .zip(problem.targets.iter().copied())
        .collect();
    rows.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then(a.0[0].total_cmp(&b.0[0]))
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.0[2].total_cmp(&b.0[2]))
    });
    let canonical = StackingProblem {
        predictions: rows.iter().map(|r| r.0).collect(),
        targets: rows.iter().map(|r| r.1).collect(),
    };
    let col = |k: usize| -> Vec<f64> { canonical.predictions.iter().map(|p| p[k]).collect() };
    let cols = [col(0), col(1), col(2)];
    let y = &canonical.targets;

    let mut candidates = vec![EnsembleWeights::VR, EnsembleWeights::HZ, EnsembleWeights::MC];

    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let d: Vec<f64> = cols[a].iter().zip(&cols[b]).map(|(x, z)| x - z).collect();
        let r: Vec<f64> = y.iter().zip(&cols[b]).map(|(v, z)| v - z).collect();
        let dd = dot(&d, &d);
        if dd > 0.0 {
            let t = dot(&d, &r) / dd;
            if t > 0.0 && t < 1.0 {
                let mut w = [0.0; 3];
                w[a] = t;
                w[b] = 1.0 - t;
                candidates.push(EnsembleWeights::from_array(w));
            }
        }
    }

    let d1: Vec<f64> = cols[0].iter().zip(&cols[2]).map(|(x, z)| x - z).collect();
    let d2: Vec<f64> = cols[1].iter().zip(&cols[2]).map(|(x, z)| x - z).collect();
    let r: Vec<f64> = y.iter().zip(&cols[2]).map(|(v, z)| v - z).collect();
    let (g11, g12, g22) = (dot(&d1, &d1), dot(&d1, &d2), dot(&d2, &d2));
    let det = g11 * g22 - g12 * g12;
    if det > 1e-12 * g11 * g22 && det > 0.0 {
        let (c1, c2) = (dot(&d1, &r), dot(&d2, &r));
        let t1 = (g22 * c1 - g12 * c2) / det;
        let t2 = (g11 * c2 - g12 * c1) / det;
        if t1 > 0.0 && t2 > 0.0 && t1 + t2 < 1.0 {
            candidates.push(EnsembleWeights::from_array([t1, t2, 1.0 - t1 - t2]));
        }
    }

    let mut best = candidates[0];
    let mut best_loss = canonical.loss(&best);
    for c in candidates.into_iter().skip(1) {
        let loss = canonical.loss(&c);
        let preferred = loss == best_loss
            && (c.theta_vt, c.theta_hz) > (best.theta_vt, best.theta_hz);
        if loss < best_loss || preferred {
            best = c;
            best_loss = loss;
        }
    }
    Ok(best)
}

/// Which held-out cells train the stacking weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validation {
    /// Each control unit's target-period outcome, with the target unit removed.
    Vertical,
    /// The target unit's previous `periods` outcomes, each predicted from data
    /// up to that period. `None` picks `min(10, available)`.
    Horizontal { periods: Option<usize> },
}

/// Stacked ensemble over three component imputers (VR, HZ, MC order).
#[derive(Clone)]
pub struct StackedEnsemble {
    pub components: [Arc<dyn Imputer>; 3],
    pub validation: Validation,
    /// Reuse the main problem's penalties inside folds instead of
    /// re-selecting them.
    pub fast_mode: bool,
}

impl StackedEnsemble {
    pub fn new(components: [Arc<dyn Imputer>; 3], validation: Validation, fast_mode: bool) -> Self {
        Self {
            components,
            validation,
            fast_mode,
        }
    }

    fn component_predictions(&self, inner: &MaskedPanel, penalties: &[Penalty; 3]) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (k, imputer) in self.components.iter().enumerate() {
            let r = if self.fast_mode {
                imputer.impute_with_penalty(inner, &penalties[k])?
            } else {
                imputer.impute(inner)?
            };
            out[k] = r.value;
        }
        Ok(out)
    }

    /// Inner problems with the true value of each held-out cell, in a fixed
    /// order (by unit for VC, by lag for HC).
    fn folds(&self, mp: &MaskedPanel) -> Result<Vec<(MaskedPanel, f64)>> {
        if !mp.only_target_hidden() {
            return Err(Error::Mask("ensembles need every cell visible except the target".into()));
        }
        let (ti, tt) = mp.target();
        let panel = mp.panel();
        match self.validation {
            Validation::Vertical => {
                if mp.n_units() < 4 {
                    return Err(Error::InsufficientUnits(format!(
                        "vertical cross-validation needs at least 4 units, have {}",
                        mp.n_units()
                    )));
                }
                let reduced = panel.without_unit(ti)?;
                (0..reduced.n_units())
                    .map(|j| {
                        let inner = MaskedPanel::single_hidden(reduced.clone(), (j, tt))?;
                        Ok((inner, reduced.get(j, tt)))
                    })
                    .collect()
            }
            Validation::Horizontal { periods } => {
                // target period counted from one
                let t_star = tt + 1;
                let s = periods.unwrap_or_else(|| 10.min(t_star.saturating_sub(3)));
                if s < 2 {
                    return Err(Error::Ensemble(format!(
                        "horizontal cross-validation needs at least 2 held-out periods, have {s}"
                    )));
                }
                if t_star < s + 3 {
                    return Err(Error::InsufficientHistory(format!(
                        "holding out {s} periods before period {t_star} leaves fewer than 3"
                    )));
                }
                (1..=s)
                    .map(|lag| {
                        let inner_panel = panel.leading_periods(tt - lag + 1)?;
                        let inner = MaskedPanel::single_hidden(inner_panel, (ti, tt - lag))?;
                        Ok((inner, panel.get(ti, tt - lag)))
                    })
                    .collect()
            }
        }
    }

    /// Builds the stacking problem from the folds that the component
    /// imputers could handle.
    pub fn stacking_problem(&self, mp: &MaskedPanel, penalties: &[Penalty; 3]) -> Result<StackingProblem> {
        let folds = self.folds(mp)?;
        let rows: Vec<Option<([f64; 3], f64)>> = folds
            .par_iter()
            .map(|(inner, truth)| {
                self.component_predictions(inner, penalties)
                    .ok()
                    .map(|p| (p, *truth))
            })
            .collect();
        let mut problem = StackingProblem::default();
        for (p, y) in rows.into_iter().flatten() {
            problem.push(p, y);
        }
        if problem.len() < 2 {
            return Err(Error::Ensemble(format!(
                "only {} of {} folds produced component imputations",
                problem.len(),
                folds.len()
            )));
        }
        Ok(problem)
    }

    fn describe(&self) -> String {
        let base = match self.validation {
            Validation::Vertical => "vc:units".to_string(),
            Validation::Horizontal { periods: Some(s) } => format!("hc:S={s}"),
            Validation::Horizontal { periods: None } => "hc:S=auto".to_string(),
        };
        if self.fast_mode {
            format!("{base}:fast")
        } else {
            base
        }
    }
}

impl Imputer for StackedEnsemble {
    fn method(&self) -> Method {
        match self.validation {
            Validation::Vertical => Method::EnsVc,
            Validation::Horizontal { .. } => Method::EnsHc,
        }
    }

    fn impute(&self, mp: &MaskedPanel) -> Result<ImputationResult> {
        let components = [
            self.components[0].impute(mp)?,
            self.components[1].impute(mp)?,
            self.components[2].impute(mp)?,
        ];
        self.impute_with_components(mp, &components)
    }

    fn impute_with_components(
        &self,
        mp: &MaskedPanel,
        components: &[ImputationResult; 3],
    ) -> Result<ImputationResult> {
        let penalties = [components[0].penalty, components[1].penalty, components[2].penalty];
        let problem = self.stacking_problem(mp, &penalties)?;
        let weights = solve_simplex_ls(&problem)?;
        let values = [components[0].value, components[1].value, components[2].value];
        Ok(ImputationResult {
            value: weights.combine(&values),
            method: self.method(),
            complexity: None,
            penalty: Penalty::None,
            diagnostics: Diagnostics::Weights {
                weights,
                folds_used: problem.len(),
                components: values,
            },
            fold_scheme: Some(self.describe()),
        })
    }
}
