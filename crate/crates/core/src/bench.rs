//! Pseudo-treatment benchmark: every unit is treated in turn in each of the
//! last `T - T0` periods, imputed from the data up to that period, and scored
//! against the observed outcome.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::ensemble::EnsembleWeights;
use crate::error::{Error, Result};
use crate::imputers::{Diagnostics, ImputationResult, Method};
use crate::panel::{OutcomeTransform, Panel};
use crate::registry::{EstimatorConfig, MethodRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    /// Periods before the first pseudo-treated one. `None` means
    /// `ceil(0.8 T)`.
    pub t0: Option<usize>,
    pub transform: OutcomeTransform,
    /// Held-out periods for ENS_HC; `None` means `min(10, t - 3)` per cell.
    pub hc_periods: Option<usize>,
    pub seed: u64,
    pub fast_mode: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            t0: None,
            transform: OutcomeTransform::Level,
            hc_periods: None,
            seed: crate::DEFAULT_SEED,
            fast_mode: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            seed: self.seed,
            fast_mode: self.fast_mode,
            hc_periods: self.hc_periods,
        }
    }

    /// T0 for a panel with `n_periods` periods, validated.
    pub fn resolve_t0(&self, n_periods: usize) -> Result<usize> {
        let t0 = self
            .t0
            .unwrap_or_else(|| (0.8 * n_periods as f64).ceil() as usize);
        if t0 < 2 || t0 >= n_periods {
            return Err(Error::Config(format!(
                "T0 must satisfy 2 <= T0 < T = {n_periods}, got {t0}"
            )));
        }
        Ok(t0)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if let Some(s) = self.hc_periods {
            if s < 2 {
                return Err(Error::Config(format!("S must be at least 2, got {s}")));
            }
        }
        Ok(())
    }
}

/// Why a method produced no value for a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodError {
    pub kind: String,
    pub message: String,
}

impl From<Error> for MethodError {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for MethodError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

pub type MethodOutcome = std::result::Result<ImputationResult, MethodError>;

/// Outcome of one method on one pseudo-treated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub unit: usize,
    pub period: usize,
    pub truth: f64,
    pub results: Vec<(Method, MethodOutcome)>,
}

/// Imputes cell `(unit, period)` of `panel` with every method in `methods`.
/// VR, HZ and MC are computed once and shared with the ensembles.
pub fn evaluate_cell(
    panel: &Panel,
    unit: usize,
    period: usize,
    registry: &MethodRegistry,
    methods: &[Method],
) -> Result<CellOutcome> {
    let mp = panel.restrict(unit, period)?;
    let needs_all = methods.iter().any(|m| m.is_ensemble());
    let mut base: [Option<MethodOutcome>; 3] = [None, None, None];
    for (k, m) in Method::BASE.iter().enumerate() {
        if needs_all || methods.contains(m) {
            base[k] = Some(
                registry
                    .method(*m)?
                    .impute(&mp)
                    .map_err(MethodError::from),
            );
        }
    }
    let components: Option<[ImputationResult; 3]> = match &base {
        [Some(Ok(a)), Some(Ok(b)), Some(Ok(c))] => Some([a.clone(), b.clone(), c.clone()]),
        _ => None,
    };
    let mut results = Vec::with_capacity(methods.len());
    for &m in methods {
        let r = if m.is_ensemble() {
            match &components {
                Some(c) => registry
                    .method(m)?
                    .impute_with_components(&mp, c)
                    .map_err(MethodError::from),
                None => Err(MethodError {
                    kind: "EnsembleError".into(),
                    message: "a component imputer failed on this cell".into(),
                }),
            }
        } else {
            let k = Method::BASE.iter().position(|b| *b == m).expect("base method");
            base[k].clone().expect("computed above")
        };
        results.push((m, r));
    }
    Ok(CellOutcome {
        unit,
        period,
        truth: panel.get(unit, period),
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub rmse: Option<f64>,
    /// Mean non-zero count (VR, HZ) or rank (MC); absent for ensembles.
    pub avg_complexity: Option<f64>,
    pub n_evaluated: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub unit: String,
    pub period: String,
    pub error: MethodError,
}

/// Configuration as actually applied, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub methods: Vec<Method>,
    pub n_units: usize,
    pub n_periods: usize,
    pub t0: usize,
    pub transform: OutcomeTransform,
    pub hc_periods: Option<usize>,
    pub seed: u64,
    pub fast_mode: bool,
    pub vr_folds: String,
    pub hz_folds: String,
    pub mc_folds: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ResolvedConfig,
    pub methods: Vec<MethodSummary>,
    /// Mean VC ensemble weights over the cells where ENS_VC succeeded.
    pub avg_weights_vc: Option<EnsembleWeights>,
    pub avg_weights_hc: Option<EnsembleWeights>,
    /// Pseudo-treated cells attempted, `N (T - T0)`.
    pub n_cells_total: usize,
    /// Cells on which every configured method succeeded.
    pub n_cells: usize,
    pub failures: Vec<CellFailure>,
}

impl BenchmarkReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn rmse(&self, method: Method) -> Option<f64> {
        self.summary(method).and_then(|s| s.rmse)
    }
}

/// Runs every configured method on every pseudo-treated cell. Cells are
/// evaluated in parallel on the current rayon pool; results are reduced in
/// (unit, period) order so the report is independent of the thread count.
pub fn pseudo_treatment_eval(panel: &Panel, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let panel = panel.transform(cfg.transform)?;
    let t0 = cfg.resolve_t0(panel.n_periods())?;
    let registry = MethodRegistry::standard(&cfg.estimator_config());
    let cells: Vec<(usize, usize)> = (0..panel.n_units())
        .flat_map(|i| (t0..panel.n_periods()).map(move |t| (i, t)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(i, t)| evaluate_cell(&panel, i, t, &registry, &cfg.methods))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&panel, cfg, t0, &outcomes))
}

/// Folds per-cell outcomes into a report, in the order given.
pub fn summarize(panel: &Panel, cfg: &BenchmarkConfig, t0: usize, outcomes: &[CellOutcome]) -> BenchmarkReport {
    let mut failures = Vec::new();
    let mut vc_weights = Vec::new();
    let mut hc_weights = Vec::new();
    let mut n_cells = 0;
    let mut acc: Vec<(f64, f64, usize, usize)> = vec![(0.0, 0.0, 0, 0); cfg.methods.len()];
    for cell in outcomes {
        let mut all_ok = true;
        for (k, (m, r)) in cell.results.iter().enumerate() {
            match r {
                Ok(res) => {
                    acc[k].0 += (res.value - cell.truth).powi(2);
                    acc[k].1 += res.complexity.unwrap_or(0.0);
                    acc[k].2 += 1;
                    if let Diagnostics::Weights { weights, .. } = &res.diagnostics {
                        match m {
                            Method::EnsVc => vc_weights.push(*weights),
                            Method::EnsHc => hc_weights.push(*weights),
                            _ => {}
                        }
                    }
                }
                Err(e) => {
                    all_ok = false;
                    acc[k].3 += 1;
                    failures.push(CellFailure {
                        method: *m,
                        unit: panel.unit_labels()[cell.unit].clone(),
                        period: panel.period_labels()[cell.period].clone(),
                        error: e.clone(),
                    });
                }
            }
        }
        if all_ok {
            n_cells += 1;
        }
    }
    let methods = cfg
        .methods
        .iter()
        .zip(acc)
        .map(|(&method, (sse, complexity, ok, failed))| MethodSummary {
            method,
            rmse: (ok > 0).then(|| (sse / ok as f64).sqrt()),
            avg_complexity: (ok > 0 && !method.is_ensemble()).then(|| complexity / ok as f64),
            n_evaluated: ok,
            n_failed: failed,
        })
        .collect();
    let est = cfg.estimator_config();
    BenchmarkReport {
        config: ResolvedConfig {
            methods: cfg.methods.clone(),
            n_units: panel.n_units(),
            n_periods: panel.n_periods(),
            t0,
            transform: cfg.transform,
            hc_periods: cfg.hc_periods,
            seed: cfg.seed,
            fast_mode: cfg.fast_mode,
            vr_folds: "contiguous:max5".into(),
            hz_folds: format!("random:max10:seed={}", est.seed),
            mc_folds: format!(
                "cells:{}x{}:seed={}",
                crate::matrix_completion::CV_FOLDS,
                crate::matrix_completion::CV_HOLDOUT_FRACTION,
                est.seed
            ),
        },
        methods,
        avg_weights_vc: EnsembleWeights::average(&vc_weights),
        avg_weights_hc: EnsembleWeights::average(&hc_weights),
        n_cells_total: outcomes.len(),
        n_cells,
        failures,
    }
}

/// Factor-model panel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub rank: usize,
    pub factor_scale: f64,
    pub noise_scale: f64,
    pub fe_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_units: 20,
            n_periods: 20,
            rank: 2,
            factor_scale: 1.0,
            noise_scale: 0.3,
            fe_scale: 1.0,
            seed: crate::DEFAULT_SEED,
        }
    }
}

/// `Y_it = fe (a_i + b_t) + factor * sum_r u_ir v_tr + noise * e_it` with all
/// draws standard normal from a seeded ChaCha8 stream, in the order a, b, u,
/// v, e (each row-major).
pub fn generate_synthetic_panel(spec: &SyntheticSpec) -> Result<Panel> {
    let (n, t, r) = (spec.n_units, spec.n_periods, spec.rank);
    for (name, v) in [
        ("factor_scale", spec.factor_scale),
        ("noise_scale", spec.noise_scale),
        ("fe_scale", spec.fe_scale),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let a = draw(n);
    let b = draw(t);
    let u = draw(n * r);
    let v = draw(t * r);
    let e = draw(n * t);
    let values = DMatrix::from_fn(n, t, |i, s| {
        let factor: f64 = (0..r).map(|k| u[i * r + k] * v[s * r + k]).sum();
        spec.fe_scale * (a[i] + b[s]) + spec.factor_scale * factor + spec.noise_scale * e[i * t + s]
    });
    Panel::from_matrix(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" | "text" | "text-table" => Ok(ReportFormat::Table),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Header of the RMSE table.
pub const TABLE_COLUMNS: [&str; 9] = [
    "Periods", "VR", "HZ", "MC", "Ens-VC", "Ens-HC", "VC-w-VR", "VC-w-HZ", "VC-w-MC",
];
/// Header of the complexity table.
pub const COMPLEXITY_COLUMNS: [&str; 4] = ["Periods", "VR", "HZ", "MC"];
pub const CSV_METRICS: [&str; 4] = ["rmse", "avg_complexity", "n_evaluated", "n_failed"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Serializes a report. JSON is lossless; CSV has one row per (method,
/// metric); the table mirrors the RMSE / VC-weight layout followed by the
/// complexity table.
pub fn emit_report(report: &BenchmarkReport, format: ReportFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.push(b'\n');
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["method", "metric", "value"])?;
            for s in &report.methods {
                let values = [
                    s.rmse.map(|v| v.to_string()),
                    s.avg_complexity.map(|v| v.to_string()),
                    Some(s.n_evaluated.to_string()),
                    Some(s.n_failed.to_string()),
                ];
                for (metric, value) in CSV_METRICS.iter().zip(values) {
                    w.write_record([s.method.name(), metric, &value.unwrap_or_default()])?;
                }
            }
            w.flush()?;
        }
        ReportFormat::Table => {
            let periods = report.config.n_periods.to_string();
            let weights = report.avg_weights_vc.map(|w| w.as_array());
            let mut row = vec![periods.clone()];
            for m in Method::ALL {
                row.push(opt(report.rmse(m)));
            }
            for k in 0..3 {
                row.push(opt(weights.map(|w| w[k])));
            }
            write_table(&mut out, &TABLE_COLUMNS, &row)?;
            writeln!(out)?;
            let mut row = vec![periods];
            for m in Method::BASE {
                row.push(opt(report.summary(m).and_then(|s| s.avg_complexity)));
            }
            write_table(&mut out, &COMPLEXITY_COLUMNS, &row)?;
        }
    }
    Ok(out)
}

fn write_table(out: &mut Vec<u8>, header: &[&str], row: &[String]) -> Result<()> {
    let widths: Vec<usize> = header
        .iter()
        .zip(row)
        .map(|(h, r)| h.len().max(r.len()))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    writeln!(out, "{}", line(row.iter().map(String::as_str).collect()))?;
    Ok(())
}
