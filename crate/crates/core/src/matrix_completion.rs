//! Nuclear-norm matrix completion with unpenalized unit and time effects.
//!
//! Minimizes
//!
//! ```text
//! 1/2 * sum_{visible (i,t)} (Y_it - a_i - b_t - L_it)^2 + lambda * ||L||_*
//! ```
//!
//! by alternating an exact fixed-effect update on the visible cells with a
//! fill-and-threshold step for `L`: hidden cells take the current low-rank
//! value, then the singular values are soft-thresholded by `lambda`. Both steps
//! are descent steps, so the recorded objective trace never increases.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputers::{Diagnostics, ImputationResult, Imputer, Method, Penalty};
use crate::panel::MaskedPanel;

/// Singular values at or below this count as zero when reporting rank.
pub const RANK_THRESHOLD: f64 = 1e-10;
pub const MAX_OUTER_ITERATIONS: usize = 500;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;
pub const CV_FOLDS: usize = 5;
pub const CV_HOLDOUT_FRACTION: f64 = 0.1;
/// Fewest visible cells for which λ is cross-validated.
pub const MIN_CV_CELLS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCFit {
    pub low_rank: DMatrix<f64>,
    pub unit_effects: DVector<f64>,
    pub time_effects: DVector<f64>,
    pub rank: usize,
    pub lambda: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl MCFit {
    /// Model value `L_it + a_i + b_t`.
    pub fn predict(&self, unit: usize, period: usize) -> f64 {
        self.low_rank[(unit, period)] + self.unit_effects[unit] + self.time_effects[period]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Result of singular value soft-thresholding.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub matrix: DMatrix<f64>,
    /// Post-shrinkage singular values, largest first, zeros dropped.
    pub singular_values: Vec<f64>,
}

impl Thresholded {
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }

    pub fn rank(&self) -> usize {
        self.singular_values.iter().filter(|s| **s > RANK_THRESHOLD).count()
    }
}

/// Proximal operator of `threshold * ||.||_*`: `U soft(S, threshold) V^T`.
pub fn svt(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    svt_full(m, threshold).matrix
}

pub fn svt_full(m: &DMatrix<f64>, threshold: f64) -> Thresholded {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut kept: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(k, s)| (k, s - threshold))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out = DMatrix::zeros(rows, cols);
    for &(k, s) in &kept {
        out.ger(s, &u.column(k), &v_t.row(k).transpose(), 1.0);
    }
    Thresholded {
        matrix: out,
        singular_values: kept.into_iter().map(|(_, s)| s).collect(),
    }
}

/// Visible-cell view with row and column lists for the fixed-effect updates.
struct Cells<'a> {
    mp: &'a MaskedPanel,
    by_row: Vec<Vec<usize>>,
    by_col: Vec<Vec<usize>>,
}

impl<'a> Cells<'a> {
    fn new(mp: &'a MaskedPanel) -> Result<Self> {
        let (n, t) = (mp.n_units(), mp.n_periods());
        let mut by_row = vec![Vec::new(); n];
        let mut by_col = vec![Vec::new(); t];
        for i in 0..n {
            for s in 0..t {
                if mp.is_visible(i, s) {
                    by_row[i].push(s);
                    by_col[s].push(i);
                }
            }
        }
        if let Some(i) = by_row.iter().position(Vec::is_empty) {
            return Err(Error::DegenerateMask(format!("unit {i} has no visible cell")));
        }
        if let Some(s) = by_col.iter().position(Vec::is_empty) {
            return Err(Error::DegenerateMask(format!("period {s} has no visible cell")));
        }
        Ok(Self { mp, by_row, by_col })
    }

    fn y(&self, i: usize, t: usize) -> f64 {
        self.mp.panel().get(i, t)
    }

    /// Exact least-squares unit and time effects for `Y - L` on visible cells,
    /// by block coordinate descent from the supplied start. Recentered so the
    /// unit effects average to zero.
    fn update_effects(&self, low_rank: &DMatrix<f64>, a: &mut DVector<f64>, b: &mut DVector<f64>) {
        let scale = self
            .by_row
            .iter()
            .enumerate()
            .flat_map(|(i, ts)| ts.iter().map(move |&t| (i, t)))
            .map(|(i, t)| (self.y(i, t) - low_rank[(i, t)]).abs())
            .fold(1.0, f64::max);
        let tol = 1e-11 * scale;
        for _ in 0..100_000 {
            for (i, ts) in self.by_row.iter().enumerate() {
                let sum: f64 = ts.iter().map(|&t| self.y(i, t) - low_rank[(i, t)] - b[t]).sum();
                a[i] = sum / ts.len() as f64;
            }
            for (t, is) in self.by_col.iter().enumerate() {
                let sum: f64 = is.iter().map(|&i| self.y(i, t) - low_rank[(i, t)] - a[i]).sum();
                b[t] = sum / is.len() as f64;
            }
            // column gradients vanish after the b step; check the rows
            let worst = self
                .by_row
                .iter()
                .enumerate()
                .map(|(i, ts)| {
                    ts.iter()
                        .map(|&t| self.y(i, t) - low_rank[(i, t)] - a[i] - b[t])
                        .sum::<f64>()
                        .abs()
                })
                .fold(0.0, f64::max);
            if worst <= tol {
                break;
            }
        }
        let shift = a.mean();
        a.add_scalar_mut(-shift);
        b.add_scalar_mut(shift);
    }

    fn loss(&self, low_rank: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut sse = 0.0;
        for (i, ts) in self.by_row.iter().enumerate() {
            for &t in ts {
                sse += (self.y(i, t) - a[i] - b[t] - low_rank[(i, t)]).powi(2);
            }
        }
        0.5 * sse
    }

    /// Residual `Y - a - b` on visible cells and `fill` elsewhere.
    fn filled_residual(&self, a: &DVector<f64>, b: &DVector<f64>, fill: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = fill.clone();
        for (i, ts) in self.by_row.iter().enumerate() {
            for &t in ts {
                z[(i, t)] = self.y(i, t) - a[i] - b[t];
            }
        }
        z
    }
}

fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().sum()
}

/// Penalized objective of a fit on the visible cells of `mp`.
pub fn objective(mp: &MaskedPanel, fit: &MCFit) -> Result<f64> {
    let cells = Cells::new(mp)?;
    let nuc = nuclear_norm(&fit.low_rank);
    let penalty = if nuc == 0.0 { 0.0 } else { fit.lambda * nuc };
    Ok(cells.loss(&fit.low_rank, &fit.unit_effects, &fit.time_effects) + penalty)
}

fn fit_with(cells: &Cells<'_>, lambda: f64, warm: Option<&MCFit>) -> MCFit {
    let (n, t) = (cells.mp.n_units(), cells.mp.n_periods());
    let (mut low_rank, mut a, mut b, mut nuc, mut rank) = match warm {
        Some(w) => (
            w.low_rank.clone(),
            w.unit_effects.clone(),
            w.time_effects.clone(),
            nuclear_norm(&w.low_rank),
            w.rank,
        ),
        None => (DMatrix::zeros(n, t), DVector::zeros(n), DVector::zeros(t), 0.0, 0),
    };
    cells.update_effects(&low_rank, &mut a, &mut b);
    let mut trace = vec![cells.loss(&low_rank, &a, &b) + lambda * nuc];
    let mut converged = false;
    for _ in 0..MAX_OUTER_ITERATIONS {
        let z = cells.filled_residual(&a, &b, &low_rank);
        let th = svt_full(&z, lambda);
        low_rank = th.matrix;
        nuc = th.singular_values.iter().sum();
        rank = th.singular_values.iter().filter(|s| **s > RANK_THRESHOLD).count();
        cells.update_effects(&low_rank, &mut a, &mut b);
        let obj = cells.loss(&low_rank, &a, &b) + lambda * nuc;
        let prev = *trace.last().expect("non-empty");
        trace.push(obj);
        if prev - obj <= RELATIVE_TOLERANCE * prev {
            converged = true;
            break;
        }
    }
    MCFit {
        low_rank,
        unit_effects: a,
        time_effects: b,
        rank,
        lambda,
        objective_trace: trace,
        converged,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("nuclear-norm lambda must be finite and >= 0, got {lambda}")))
    }
}

/// Fits at a single λ starting from `L = 0`.
pub fn fit_mc(mp: &MaskedPanel, lambda: f64) -> Result<MCFit> {
    check_lambda(lambda)?;
    let cells = Cells::new(mp)?;
    Ok(fit_with(&cells, lambda, None))
}

/// Fits each λ in turn, warm-starting from the previous solution. Pass λ in
/// descending order.
pub fn fit_mc_path(mp: &MaskedPanel, lambdas: &[f64]) -> Result<Vec<MCFit>> {
    let cells = Cells::new(mp)?;
    let mut fits: Vec<MCFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        check_lambda(lambda)?;
        let fit = fit_with(&cells, lambda, fits.last());
        fits.push(fit);
    }
    Ok(fits)
}

/// Fits at `lambda` by walking down `grid` (descending) from its top.
pub fn fit_mc_at(mp: &MaskedPanel, lambda: f64, grid: &[f64]) -> Result<MCFit> {
    let mut path: Vec<f64> = grid.iter().copied().filter(|l| *l > lambda).collect();
    path.push(lambda);
    Ok(fit_mc_path(mp, &path)?.pop().expect("non-empty path"))
}

/// Fixed-effects-only fit (`L = 0`).
pub fn fit_fixed_effects(mp: &MaskedPanel) -> Result<MCFit> {
    let cells = Cells::new(mp)?;
    let (n, t) = (mp.n_units(), mp.n_periods());
    let low_rank = DMatrix::zeros(n, t);
    let mut a = DVector::zeros(n);
    let mut b = DVector::zeros(t);
    cells.update_effects(&low_rank, &mut a, &mut b);
    let loss = cells.loss(&low_rank, &a, &b);
    Ok(MCFit {
        low_rank,
        unit_effects: a,
        time_effects: b,
        rank: 0,
        lambda: f64::INFINITY,
        objective_trace: vec![loss],
        converged: true,
    })
}

/// Descending geometric grid from the top singular value of the residual
/// left by the fixed-effects-only fit (hidden cells zero) down to
/// `min_ratio` times that value. Collapses to `[0]` when that residual
/// vanishes.
pub fn lambda_grid(mp: &MaskedPanel, len: usize, min_ratio: f64) -> Result<Vec<f64>> {
    let fe = fit_fixed_effects(mp)?;
    let cells = Cells::new(mp)?;
    let resid = cells.filled_residual(&fe.unit_effects, &fe.time_effects, &DMatrix::zeros(mp.n_units(), mp.n_periods()));
    let top = resid.singular_values().max();
    let scale = mp
        .panel()
        .values()
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    if top <= 1e-12 * scale || len < 2 {
        return Ok(vec![if top <= 1e-12 * scale { 0.0 } else { top }]);
    }
    let step = min_ratio.ln() / (len - 1) as f64;
    Ok((0..len)
        .map(|k| match k {
            0 => top,
            k if k == len - 1 => top * min_ratio,
            k => top * (step * k as f64).exp(),
        })
        .collect())
}

/// Held-out cell folds: shuffled visible cells, `CV_FOLDS` disjoint slices of
/// `CV_HOLDOUT_FRACTION` of them each.
pub fn holdout_folds(mp: &MaskedPanel, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut cells: Vec<(usize, usize)> = (0..mp.n_units())
        .flat_map(|i| (0..mp.n_periods()).map(move |t| (i, t)))
        .filter(|&(i, t)| mp.is_visible(i, t) && (i, t) != mp.target())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let size = ((cells.len() as f64 * CV_HOLDOUT_FRACTION).round() as usize).max(1);
    (0..CV_FOLDS)
        .map(|k| cells.iter().skip(k * size).take(size).copied().collect())
        .filter(|f: &Vec<_>| !f.is_empty())
        .collect()
}

/// Chooses λ from a descending grid by held-out-cell cross-validation.
/// Ties go to the larger λ.
pub fn select_lambda_mc(mp: &MaskedPanel, grid: &[f64], seed: u64) -> Result<f64> {
    Ok(cv_errors(mp, grid, seed)?.0)
}

/// Selected λ plus the mean held-out squared error for each grid value.
pub fn cv_errors(mp: &MaskedPanel, grid: &[f64], seed: u64) -> Result<(f64, Vec<f64>)> {
    match grid.len() {
        0 => return Err(Error::Config("empty nuclear-norm lambda grid".into())),
        1 => return Ok((grid[0], vec![0.0])),
        _ => {}
    }
    if mp.n_visible() < MIN_CV_CELLS {
        return Err(Error::Config(format!(
            "cross-validating lambda needs at least {MIN_CV_CELLS} visible cells, got {}",
            mp.n_visible()
        )));
    }
    let mut errors = vec![0.0; grid.len()];
    let mut used = 0usize;
    for fold in holdout_folds(mp, seed) {
        let train = mp.with_hidden(&fold);
        let path = match fit_mc_path(&train, grid) {
            Ok(p) => p,
            Err(Error::DegenerateMask(_)) => continue,
            Err(e) => return Err(e),
        };
        for (e, fit) in errors.iter_mut().zip(&path) {
            let sse: f64 = fold
                .iter()
                .map(|&(i, t)| (mp.panel().get(i, t) - fit.predict(i, t)).powi(2))
                .sum();
            *e += sse / fold.len() as f64;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateMask("every cross-validation fold emptied a row or column".into()));
    }
    errors.iter_mut().for_each(|e| *e /= used as f64);
    let mut best = 0;
    for k in 1..grid.len() {
        if errors[k] < errors[best] - 1e-12 * errors[best] {
            best = k;
        }
    }
    Ok((grid[best], errors))
}

/// Matrix-completion imputer with cross-validated λ.
#[derive(Debug, Clone)]
pub struct MatrixCompletion {
    pub seed: u64,
    pub grid_len: usize,
    pub min_ratio: f64,
}

impl Default for MatrixCompletion {
    fn default() -> Self {
        Self {
            seed: crate::DEFAULT_SEED,
            grid_len: 30,
            min_ratio: 1e-4,
        }
    }
}

impl MatrixCompletion {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn finish(&self, mp: &MaskedPanel, fit: MCFit) -> ImputationResult {
        let (i, t) = mp.target();
        ImputationResult {
            value: fit.predict(i, t),
            method: Method::Mc,
            complexity: Some(fit.rank as f64),
            penalty: Penalty::Nuclear { lambda: fit.lambda },
            diagnostics: Diagnostics::LowRank {
                rank: fit.rank,
                unit_effect: fit.unit_effects[i],
                time_effect: fit.time_effects[t],
                low_rank_value: fit.low_rank[(i, t)],
            },
            fold_scheme: Some(format!(
                "cells:{CV_FOLDS}x{CV_HOLDOUT_FRACTION}:seed={}",
                self.seed
            )),
        }
    }
}

impl Imputer for MatrixCompletion {
    fn method(&self) -> Method {
        Method::Mc
    }

    fn impute(&self, mp: &MaskedPanel) -> Result<ImputationResult> {
        let grid = lambda_grid(mp, self.grid_len, self.min_ratio)?;
        let lambda = select_lambda_mc(mp, &grid, self.seed)?;
        let fit = fit_mc_at(mp, lambda, &grid)?;
        Ok(self.finish(mp, fit))
    }

    fn impute_with_penalty(&self, mp: &MaskedPanel, penalty: &Penalty) -> Result<ImputationResult> {
        let Penalty::Nuclear { lambda } = *penalty else {
            return self.impute(mp);
        };
        let grid = lambda_grid(mp, self.grid_len, self.min_ratio)?;
        let fit = fit_mc_at(mp, lambda, &grid)?;
        Ok(self.finish(mp, fit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Panel;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn rank_one(seed: u64, n: usize, t: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let v: Vec<f64> = (0..t).map(|_| 1.0 + rng.random::<f64>()).collect();
        DMatrix::from_fn(n, t, |i, s| u[i] * v[s])
    }

    #[test]
    fn svt_on_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&m, 2.0);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = normal_matrix(&mut rng, 4, 6);
        assert!((svt(&m, 0.0) - &m).amax() < 1e-10);
    }

    #[test]
    fn svt_minimizes_the_proximal_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = normal_matrix(&mut rng, 4, 5);
        let tau = 0.7;
        let prox = |z: &DMatrix<f64>| 0.5 * (&m - z).norm_squared() + tau * nuclear_norm(z);
        let out = svt(&m, tau);
        let best = prox(&out);
        // candidates: same singular vectors, each singular value scanned on a grid
        let svd = m.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        for k in 0..svd.singular_values.len() {
            for step in 0..=400 {
                let mut s = svd.singular_values.map(|x| (x - tau).max(0.0));
                s[k] = step as f64 * svd.singular_values[k] / 400.0;
                let z = &u * DMatrix::from_diagonal(&s) * &vt;
                assert!(prox(&z) >= best - 1e-12);
            }
        }
        // random perturbations in arbitrary directions never help either
        for _ in 0..200 {
            let d = normal_matrix(&mut rng, 4, 5) * 1e-3;
            assert!(prox(&(&out + d)) >= best - 1e-12);
        }
    }

    #[test]
    fn svt_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = normal_matrix(&mut rng, 5, 7);
            let b = normal_matrix(&mut rng, 5, 7);
            let tau = rng.random::<f64>() * 2.0;
            assert!((svt(&a, tau) - svt(&b, tau)).norm() <= (&a - &b).norm() + 1e-12);
        }
    }

    fn masked(values: DMatrix<f64>, target: (usize, usize)) -> MaskedPanel {
        MaskedPanel::single_hidden(Panel::from_matrix(values).unwrap(), target).unwrap()
    }

    #[test]
    fn huge_lambda_gives_fixed_effects_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mp = masked(normal_matrix(&mut rng, 6, 8), (2, 7));
        let grid = lambda_grid(&mp, 30, 1e-4).unwrap();
        let fit = fit_mc(&mp, grid[0] * 1.0001).unwrap();
        assert_eq!(fit.rank, 0);
        let fe = fit_fixed_effects(&mp).unwrap();
        assert!((fit.predict(2, 7) - fe.predict(2, 7)).abs() < 1e-9);
        assert!((fit.predict(2, 7) - (fit.unit_effects[2] + fit.time_effects[7])).abs() < 1e-15);
    }

    #[test]
    fn fixed_effects_update_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mp = masked(normal_matrix(&mut rng, 6, 9), (5, 8))
            .with_hidden(&[(0, 0), (3, 4), (2, 2)]);
        let cells = Cells::new(&mp).unwrap();
        let low_rank = normal_matrix(&mut rng, 6, 9) * 0.3;
        let mut a = DVector::zeros(6);
        let mut b = DVector::zeros(9);
        cells.update_effects(&low_rank, &mut a, &mut b);
        assert!(a.sum().abs() < 1e-12);
        for i in 0..6 {
            let g: f64 = cells.by_row[i]
                .iter()
                .map(|&t| cells.y(i, t) - low_rank[(i, t)] - a[i] - b[t])
                .sum();
            assert!(g.abs() <= 1e-8);
        }
        for t in 0..9 {
            let g: f64 = cells.by_col[t]
                .iter()
                .map(|&i| cells.y(i, t) - low_rank[(i, t)] - a[i] - b[t])
                .sum();
            assert!(g.abs() <= 1e-8);
        }
    }

    #[test]
    fn objective_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mp = masked(normal_matrix(&mut rng, 8, 10) + rank_one(1, 8, 10), (7, 9));
        let grid = lambda_grid(&mp, 30, 1e-4).unwrap();
        for fit in fit_mc_path(&mp, &grid).unwrap() {
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
            let recomputed = objective(&mp, &fit).unwrap();
            assert!((recomputed - fit.final_objective()).abs() <= 1e-8 * recomputed.max(1.0));
        }
        let fe = fit_fixed_effects(&mp).unwrap();
        let fit = fit_mc(&mp, grid[10]).unwrap();
        assert!(fit.final_objective() <= fe.objective_trace[0] + 1e-12);
    }

    #[test]
    fn recovers_hidden_cell_of_rank_one_panel() {
        for seed in 0..5 {
            let y = rank_one(seed, 10, 12);
            let truth = y[(9, 11)];
            let mp = masked(y, (9, 11));
            let top = lambda_grid(&mp, 30, 1e-4).unwrap()[0];
            let grid: Vec<f64> = (0..40).map(|k| top * 0.6f64.powi(k)).collect();
            let fit = fit_mc_at(&mp, 1e-6, &grid).unwrap();
            let rel = (fit.predict(9, 11) - truth).abs() / truth.abs();
            assert!(rel < 1e-4, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn rank_shrinks_as_lambda_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mp = masked(normal_matrix(&mut rng, 10, 12) * 0.2 + rank_one(2, 10, 12) * 3.0, (0, 11));
        let grid = lambda_grid(&mp, 30, 1e-4).unwrap();
        let path = fit_mc_path(&mp, &grid).unwrap();
        for w in path.windows(2) {
            assert!(w[0].rank <= w[1].rank, "rank {} at larger lambda vs {}", w[0].rank, w[1].rank);
        }
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let mp = masked(DMatrix::from_element(3, 3, 1.0), (0, 2)).with_hidden(&[(0, 0), (0, 1)]);
        assert!(matches!(fit_mc(&mp, 1.0), Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn cv_grid_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mp = masked(normal_matrix(&mut rng, 6, 6), (0, 5));
        assert!(matches!(select_lambda_mc(&mp, &[], 1), Err(Error::Config(_))));
        assert_eq!(select_lambda_mc(&mp, &[0.25], 1).unwrap(), 0.25);
    }

    #[test]
    fn holdout_folds_never_contain_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mp = masked(normal_matrix(&mut rng, 7, 9), (3, 8));
        let folds = holdout_folds(&mp, 5);
        assert_eq!(folds.len(), CV_FOLDS);
        let mut seen = std::collections::HashSet::new();
        for f in &folds {
            assert_eq!(f.len(), 6);
            for c in f {
                assert_ne!(*c, (3, 8));
                assert!(seen.insert(*c));
            }
        }
    }

    #[test]
    fn cv_prefers_low_rank_fit_on_rank_one_panel() {
        let y = rank_one(3, 12, 12);
        let mp = masked(y, (11, 11));
        let grid = lambda_grid(&mp, 30, 1e-4).unwrap();
        let (lambda, errors) = cv_errors(&mp, &grid, 1).unwrap();
        let pos = grid.iter().position(|l| *l == lambda).unwrap();
        assert!(pos >= 15, "selected position {pos}");
        assert!(errors[pos] < errors[0]);
    }

    #[test]
    fn cv_prefers_fixed_effects_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mp = masked(normal_matrix(&mut rng, 12, 12), (11, 11));
        let grid = lambda_grid(&mp, 30, 1e-4).unwrap();
        let lambda = select_lambda_mc(&mp, &grid, 1).unwrap();
        let pos = grid.iter().position(|l| *l == lambda).unwrap();
        assert!(pos < 3, "selected position {pos}");
    }

    #[test]
    fn constant_panel_imputes_constant() {
        let mp = masked(DMatrix::from_element(5, 6, 4.5), (4, 5));
        let r = MatrixCompletion::default().impute(&mp).unwrap();
        assert!((r.value - 4.5).abs() < 1e-12);
        assert_eq!(r.complexity, Some(0.0));
    }
}
