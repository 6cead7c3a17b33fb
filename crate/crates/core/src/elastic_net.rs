//! Elastic-net least squares by cyclic coordinate descent.
//!
//! The objective, in standardized predictor coordinates, is
//!
//! ```text
//! 1/2 * sum_k (y_k - b0 - z_k . c)^2 + lambda * (alpha * |c|_1 + (1 - alpha)/2 * |c|_2^2)
//! ```
//!
//! with an unpenalized intercept `b0`. Each predictor column is centered and
//! scaled to unit (population) variance before fitting; reported coefficients
//! are mapped back to the original scale. Constant columns carry a zero
//! coefficient.
//!
//! Coordinate descent identifies the signed support; once it stops changing
//! a primal active-set loop solves the remaining smooth problem exactly. This
//! matters in the `p > n`, small-λ corner where plain coordinate descent
//! converges very slowly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest coefficient change (standardized scale) that counts as converged.
pub const COEF_TOLERANCE: f64 = 1e-7;
/// Optimality tolerance, relative to max(1, |y - mean(y)|_inf).
pub const KKT_TOLERANCE: f64 = 1e-9;
/// Sweep cap for a single fit.
pub const MAX_SWEEPS: usize = 10_000;
/// Sweeps with an unchanged signed support before the active-set finish.
const POLISH_STABLE: usize = 2;
/// After this many sweeps the active-set finish is also tried at every power
/// of two.
const POLISH_AFTER: usize = 64;
/// Mixing used to define the grid top when the mixing itself is zero.
pub const RIDGE_GRID_MIXING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub mixing: f64,
    pub n_nonzero: usize,
    pub converged: bool,
    pub sweeps: usize,
}

impl ElasticNetFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }
}

/// Descending geometric λ grid crossed with a set of mixings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyGrid {
    pub n_lambdas: usize,
    /// Smallest λ as a fraction of λ_max.
    pub min_ratio: f64,
    pub mixings: Vec<f64>,
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        Self {
            n_lambdas: 50,
            min_ratio: 1e-4,
            mixings: vec![0.05, 0.25, 0.5, 0.75, 0.95, 1.0],
        }
    }
}

impl PenaltyGrid {
    /// λ values from `lambda_max` down to `min_ratio * lambda_max`. A zero
    /// `lambda_max` (constant response) collapses the grid to `[0]`.
    pub fn lambdas(&self, lambda_max: f64) -> Vec<f64> {
        if lambda_max <= 0.0 || self.n_lambdas < 2 {
            return vec![lambda_max.max(0.0)];
        }
        let step = self.min_ratio.ln() / (self.n_lambdas - 1) as f64;
        (0..self.n_lambdas)
            .map(|k| {
                if k == 0 {
                    lambda_max
                } else if k == self.n_lambdas - 1 {
                    lambda_max * self.min_ratio
                } else {
                    lambda_max * (step * k as f64).exp()
                }
            })
            .collect()
    }
}

/// Centered and scaled copy of a design plus the centered response.
#[derive(Debug, Clone)]
struct Standardized {
    z: DMatrix<f64>,
    means: Vec<f64>,
    /// Population standard deviation; zero for constant columns.
    scales: Vec<f64>,
    sq_norms: Vec<f64>,
    /// `z' z`.
    gram: DMatrix<f64>,
    y_mean: f64,
    y_centered: DVector<f64>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 {
            return Err(Error::Numerical("elastic net needs at least one sample".into()));
        }
        if y.len() != n {
            return Err(Error::Numerical(format!(
                "response has {} entries for {n} samples",
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite value in elastic-net input".into()));
        }
        let nf = n as f64;
        let mut z = DMatrix::zeros(n, p);
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        let mut sq_norms = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let mean = col.sum() / nf;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
            let sd = var.sqrt();
            // Columns whose spread is at rounding level are treated as constant.
            let tiny = 1e-12 * col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let sd = if sd > tiny { sd } else { 0.0 };
            if sd > 0.0 {
                for k in 0..n {
                    z[(k, j)] = (x[(k, j)] - mean) / sd;
                }
            }
            sq_norms.push(z.column(j).norm_squared());
            means.push(mean);
            scales.push(sd);
        }
        let y_mean = y.iter().sum::<f64>() / nf;
        let y_centered = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let gram = z.tr_mul(&z);
        Ok(Self {
            gram,
            z,
            means,
            scales,
            sq_norms,
            y_mean,
            y_centered,
        })
    }

    fn p(&self) -> usize {
        self.z.ncols()
    }

    fn lambda_max(&self, mixing: f64) -> f64 {
        // same summation as the sweeps, so the all-zero fit is exact here
        let n = self.y_centered.len();
        let z = self.z.as_slice();
        let top = (0..self.p())
            .map(|j| dot(&z[j * n..(j + 1) * n], self.y_centered.as_slice()).abs())
            .fold(0.0, f64::max);
        let mut lm = top / mixing;
        while lm * mixing < top {
            lm = lm.next_up();
        }
        lm
    }

    fn to_fit(&self, std_coef: &[f64], lambda: f64, mixing: f64, converged: bool, sweeps: usize) -> ElasticNetFit {
        let coefficients: Vec<f64> = std_coef
            .iter()
            .zip(&self.scales)
            .map(|(c, s)| if *s > 0.0 { c / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean
            - coefficients
                .iter()
                .zip(&self.means)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        ElasticNetFit {
            intercept,
            n_nonzero: coefficients.iter().filter(|c| **c != 0.0).count(),
            coefficients,
            lambda,
            mixing,
            converged,
            sweeps,
        }
    }

    fn to_std_coef(&self, fit: &ElasticNetFit) -> Vec<f64> {
        fit.coefficients
            .iter()
            .zip(&self.scales)
            .map(|(c, s)| c * s)
            .collect()
    }

    fn residual(&self, std_coef: &[f64]) -> DVector<f64> {
        let mut r = self.y_centered.clone();
        for (j, c) in std_coef.iter().enumerate() {
            if *c != 0.0 {
                r.axpy(-c, &self.z.column(j), 1.0);
            }
        }
        r
    }

    fn objective(&self, std_coef: &[f64], lambda: f64, mixing: f64) -> f64 {
        let r = self.residual(std_coef);
        0.5 * r.norm_squared() + penalty(std_coef, lambda, mixing)
    }

    /// Largest violation of the subgradient conditions, standardized scale.
    fn kkt(&self, std_coef: &[f64], residual: &DVector<f64>, lambda: f64, mixing: f64) -> f64 {
        let l1 = lambda * mixing;
        let l2 = lambda * (1.0 - mixing);
        let mut worst: f64 = 0.0;
        for (j, &c) in std_coef.iter().enumerate() {
            if self.scales[j] == 0.0 {
                continue;
            }
            let g = self.z.column(j).dot(residual) - l2 * c;
            let v = if c != 0.0 {
                (g - l1 * c.signum()).abs()
            } else {
                (g.abs() - l1).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

fn penalty(std_coef: &[f64], lambda: f64, mixing: f64) -> f64 {
    let l1: f64 = std_coef.iter().map(|c| c.abs()).sum();
    let l2: f64 = std_coef.iter().map(|c| c * c).sum();
    lambda * (mixing * l1 + 0.5 * (1.0 - mixing) * l2)
}

/// Newton direction `-H^-1 g`, or when `H` is singular the gradient's
/// component in the null space of `H` (if any), else the pseudo-inverse
/// Newton direction. Also returns the scale of `H`.
fn descent_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    if let Some(chol) = hess.clone().cholesky() {
        return Some((-chol.solve(grad), hess.diagonal().max()));
    }
    let eig = hess.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) {
        return None;
    }
    let m = grad.len();
    let mut null_dir = DVector::zeros(m);
    let mut newton_dir = DVector::zeros(m);
    for k in 0..m {
        let ev = eig.eigenvalues[k];
        let u = eig.eigenvectors.column(k);
        let proj = u.dot(grad);
        if ev > 1e-10 * top {
            newton_dir.axpy(-proj / ev, &u, 1.0);
        } else {
            null_dir.axpy(-proj, &u, 1.0);
        }
    }
    if null_dir.norm() > 1e-12 * grad.norm() {
        Some((null_dir, top))
    } else {
        Some((newton_dir, top))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn check_penalty(lambda: f64, mixing: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Numerical(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&mixing) {
        return Err(Error::Numerical(format!("mixing must lie in [0, 1], got {mixing}")));
    }
    Ok(())
}

/// Coordinate-descent state over one standardized problem.
struct Solver<'a> {
    data: &'a Standardized,
    coef: Vec<f64>,
    residual: DVector<f64>,
}

impl<'a> Solver<'a> {
    fn new(data: &'a Standardized) -> Self {
        Self {
            data,
            coef: vec![0.0; data.p()],
            residual: data.y_centered.clone(),
        }
    }

    /// One cyclic pass; returns the largest absolute coefficient change and
    /// whether any coefficient changed sign (including to or from zero).
    fn sweep(&mut self, lambda: f64, mixing: f64) -> (f64, bool) {
        let l1 = lambda * mixing;
        let l2 = lambda * (1.0 - mixing);
        let mut max_change: f64 = 0.0;
        let mut sign_change = false;
        let n = self.residual.len();
        let z = self.data.z.as_slice();
        let r = self.residual.as_mut_slice();
        for j in 0..self.data.p() {
            let d = self.data.sq_norms[j];
            if d == 0.0 {
                continue;
            }
            let col = &z[j * n..(j + 1) * n];
            let old = self.coef[j];
            let rho = dot(col, r) + d * old;
            let new = soft(rho, l1) / (d + l2);
            if new != old {
                let delta = old - new;
                for (rk, zk) in r.iter_mut().zip(col) {
                    *rk += delta * zk;
                }
                self.coef[j] = new;
                max_change = max_change.max((new - old).abs());
                sign_change |= sign(new) != sign(old);
            }
        }
        (max_change, sign_change)
    }

    /// Primal active-set finish. With the signed support fixed the objective
    /// is the quadratic `f(c) = 1/2 |y - Z_A c|^2 + l1 s_A.c + l2/2 |c|^2`;
    /// each step moves toward its minimizer and stops at the first sign
    /// change, so the objective never increases. Directions in the Hessian's
    /// null space (where `f` is linear) are followed until a coefficient
    /// reaches zero. After a full step the worst violating inactive
    /// coordinate joins the support. Returns true once the optimality
    /// conditions hold; on false the iterate is still a valid warm start.
    fn active_set(&mut self, lambda: f64, mixing: f64, kkt_tol: f64) -> bool {
        let l1 = lambda * mixing;
        let l2 = lambda * (1.0 - mixing);
        let p = self.data.p();
        // coordinates at zero that are about to enter, with their sign
        let mut entering: Vec<(usize, f64)> = Vec::new();
        for _ in 0..(4 * p + 8) {
            let mut support: Vec<(usize, f64)> = self
                .coef
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| (j, c.signum()))
                .collect();
            support.extend(entering.drain(..));
            if support.is_empty() {
                return self.data.kkt(&self.coef, &self.residual, lambda, mixing) <= kkt_tol;
            }
            let m = support.len();
            let z = &self.data.z;
            let mut hess = DMatrix::zeros(m, m);
            let mut grad = DVector::zeros(m);
            for (a, &(ja, sa)) in support.iter().enumerate() {
                grad[a] = -z.column(ja).dot(&self.residual) + l1 * sa + l2 * self.coef[ja];
                for (b, &(jb, _)) in support.iter().enumerate() {
                    hess[(a, b)] = self.data.gram[(ja, jb)];
                }
                hess[(a, a)] += l2;
            }
            let Some((dir, top)) = descent_direction(&hess, &grad) else {
                return false;
            };
            let slope = grad.dot(&dir);
            let curvature = dir.dot(&(&hess * &dir));
            if !(slope < 0.0) || !curvature.is_finite() {
                return false;
            }
            let mut limit = f64::INFINITY;
            let mut blocker = None;
            for (a, &(j, s)) in support.iter().enumerate() {
                let (c, d) = (self.coef[j], dir[a]);
                let t = if c == 0.0 {
                    if d * s < 0.0 { 0.0 } else { continue }
                } else if c * d < 0.0 {
                    -c / d
                } else {
                    continue;
                };
                if t < limit {
                    limit = t;
                    blocker = Some(j);
                }
            }
            let free = if curvature > 1e-14 * top * dir.norm_squared() {
                -slope / curvature
            } else {
                f64::INFINITY
            };
            let step = free.min(limit);
            if !step.is_finite() {
                return false;
            }
            for (a, &(j, _)) in support.iter().enumerate() {
                self.coef[j] += step * dir[a];
            }
            let blocked = step == limit;
            if blocked {
                if let Some(j) = blocker {
                    self.coef[j] = 0.0;
                }
            }
            self.residual = self.data.residual(&self.coef);
            if blocked {
                continue;
            }
            let mut worst = (kkt_tol, None);
            for j in 0..p {
                if self.coef[j] != 0.0 || self.data.scales[j] == 0.0 {
                    continue;
                }
                let g = z.column(j).dot(&self.residual);
                let v = g.abs() - l1;
                if v > worst.0 {
                    worst = (v, Some((j, g.signum())));
                }
            }
            match worst.1 {
                Some(enter) => entering.push(enter),
                None => return self.data.kkt(&self.coef, &self.residual, lambda, mixing) <= kkt_tol,
            }
        }
        false
    }

    /// Sweeps until coefficients settle and the optimality conditions hold.
    /// Once the signed support stops changing, hands over to the active-set
    /// finish; if that fails the sweeps continue from where it left off.
    fn solve(&mut self, lambda: f64, mixing: f64) -> (bool, usize) {
        let kkt_tol = KKT_TOLERANCE * self.data.y_centered.amax().max(1.0);
        // whether the active-set finish already failed on the current support
        let mut tried = false;
        let mut stable_for = 0;
        for sweep in 1..=MAX_SWEEPS {
            let (change, sign_change) = self.sweep(lambda, mixing);
            if change < COEF_TOLERANCE {
                // refresh to shed accumulated drift before the optimality check
                self.residual = self.data.residual(&self.coef);
                if self.data.kkt(&self.coef, &self.residual, lambda, mixing) <= kkt_tol {
                    return (true, sweep);
                }
            }
            if sign_change {
                tried = false;
                stable_for = 0;
            } else {
                stable_for += 1;
            }
            let backoff = sweep >= POLISH_AFTER && sweep.is_power_of_two();
            if (stable_for >= POLISH_STABLE && !tried) || backoff {
                if self.active_set(lambda, mixing, kkt_tol) {
                    return (true, sweep);
                }
                tried = true;
                stable_for = 0;
            }
        }
        (false, MAX_SWEEPS)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Fits the elastic net at a single `(lambda, mixing)` from a cold start.
pub fn fit_elastic_net(x: &DMatrix<f64>, y: &[f64], lambda: f64, mixing: f64) -> Result<ElasticNetFit> {
    check_penalty(lambda, mixing)?;
    let data = Standardized::new(x, y)?;
    let mut solver = Solver::new(&data);
    let (converged, sweeps) = solver.solve(lambda, mixing);
    Ok(data.to_fit(&solver.coef, lambda, mixing, converged, sweeps))
}

/// Fits a sequence of λ values (normally descending), warm-starting each fit
/// from the previous solution.
pub fn fit_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64], mixing: f64) -> Result<Vec<ElasticNetFit>> {
    let data = Standardized::new(x, y)?;
    let mut solver = Solver::new(&data);
    lambdas
        .iter()
        .map(|&lambda| {
            check_penalty(lambda, mixing)?;
            let (converged, sweeps) = solver.solve(lambda, mixing);
            Ok(data.to_fit(&solver.coef, lambda, mixing, converged, sweeps))
        })
        .collect()
}

/// Smallest λ at which every coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], mixing: f64) -> Result<f64> {
    if !(mixing > 0.0) {
        return Err(Error::Mixing);
    }
    Ok(Standardized::new(x, y)?.lambda_max(mixing))
}

/// Maximum violation of the optimality conditions of `fit` on `(x, y)`,
/// measured in standardized coordinates. Includes the intercept condition.
pub fn kkt_residual(fit: &ElasticNetFit, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let data = Standardized::new(x, y)?;
    let std_coef = data.to_std_coef(fit);
    let r = data.residual(&std_coef);
    let coef_kkt = data.kkt(&std_coef, &r, fit.lambda, fit.mixing);
    let intercept_kkt = (0..x.nrows())
        .map(|k| y[k] - fit.predict_row(&x.row(k).iter().copied().collect::<Vec<_>>()))
        .sum::<f64>()
        .abs();
    Ok(coef_kkt.max(intercept_kkt))
}

/// Penalized objective of `fit` in standardized coordinates.
pub fn objective(fit: &ElasticNetFit, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let data = Standardized::new(x, y)?;
    Ok(data.objective(&data.to_std_coef(fit), fit.lambda, fit.mixing))
}

/// Outcome of penalty selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvChoice {
    pub lambda: f64,
    pub mixing: f64,
    pub cv_error: f64,
}

/// λ grid a mixing value is evaluated on for this data.
pub fn lambda_grid(x: &DMatrix<f64>, y: &[f64], mixing: f64, grid: &PenaltyGrid) -> Result<Vec<f64>> {
    let top = lambda_max(x, y, if mixing > 0.0 { mixing } else { RIDGE_GRID_MIXING })?;
    Ok(grid.lambdas(top))
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Chooses `(lambda, mixing)` by K-fold cross-validation. `folds[k]` is the
/// fold of sample `k`; fold ids must cover `0..K` with `K >= 2`. The score is
/// the mean over folds of the held-out mean squared error. Ties go to the
/// larger λ, then the larger mixing.
pub fn select_penalties_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    folds: &[usize],
    grid: &PenaltyGrid,
) -> Result<CvChoice> {
    let n = x.nrows();
    if folds.len() != n || y.len() != n {
        return Err(Error::Fold(format!(
            "fold assignment has {} entries for {n} samples",
            folds.len()
        )));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {k}")));
    }
    if grid.mixings.is_empty() {
        return Err(Error::Config("penalty grid has no mixing values".into()));
    }
    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let test: Vec<usize> = (0..n).filter(|&s| folds[s] == fold).collect();
        let train: Vec<usize> = (0..n).filter(|&s| folds[s] != fold).collect();
        if test.is_empty() {
            return Err(Error::Fold(format!("fold {fold} is empty")));
        }
        if train.is_empty() {
            return Err(Error::Fold(format!("fold {fold} leaves no training samples")));
        }
        splits.push((train, test));
    }

    let mut candidates: Vec<CvChoice> = Vec::new();
    for &mixing in &grid.mixings {
        let lambdas = lambda_grid(x, y, mixing, grid)?;
        let mut err = vec![0.0; lambdas.len()];
        for (train, test) in &splits {
            let xt = rows(x, train);
            let yt: Vec<f64> = train.iter().map(|&s| y[s]).collect();
            let path = fit_path(&xt, &yt, &lambdas, mixing)?;
            for (e, fit) in err.iter_mut().zip(&path) {
                let sse: f64 = test
                    .iter()
                    .map(|&s| {
                        let row: Vec<f64> = x.row(s).iter().copied().collect();
                        (y[s] - fit.predict_row(&row)).powi(2)
                    })
                    .sum();
                *e += sse / test.len() as f64;
            }
        }
        for (lambda, e) in lambdas.into_iter().zip(err) {
            candidates.push(CvChoice {
                lambda,
                mixing,
                cv_error: e / k as f64,
            });
        }
    }
    Ok(best_candidate(candidates))
}

fn best_candidate(mut candidates: Vec<CvChoice>) -> CvChoice {
    // preference order: larger lambda first, then larger mixing
    candidates.sort_by(|a, b| {
        b.lambda
            .total_cmp(&a.lambda)
            .then(b.mixing.total_cmp(&a.mixing))
    });
    let mut best = candidates[0];
    for c in candidates.into_iter().skip(1) {
        if c.cv_error < best.cv_error - 1e-12 * best.cv_error.abs() {
            best = c;
        }
    }
    best
}

/// Fits at a chosen penalty, warm-starting along the grid from λ_max.
pub fn fit_at(x: &DMatrix<f64>, y: &[f64], lambda: f64, mixing: f64, grid: &PenaltyGrid) -> Result<ElasticNetFit> {
    check_penalty(lambda, mixing)?;
    let mut lambdas: Vec<f64> = lambda_grid(x, y, mixing, grid)?
        .into_iter()
        .filter(|l| *l > lambda)
        .collect();
    lambdas.push(lambda);
    let mut path = fit_path(x, y, &lambdas, mixing)?;
    Ok(path.pop().expect("path has at least one fit"))
}
