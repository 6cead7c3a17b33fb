//! Panel data model, outcome transforms, masking and CSV I/O.
//!
//! A [`Panel`] is a dense, balanced N×T outcome matrix. Missingness lives only
//! in a [`MaskedPanel`], which pairs a panel with a visibility pattern and the
//! single target cell an estimator has to impute. Row and column indices in
//! this API are zero-based.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale on which the outcomes of a panel are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeTransform {
    #[default]
    Level,
    Log,
    /// Period-over-period percent change, `100 (Y_t - Y_{t-1}) / Y_{t-1}`.
    Growth,
}

impl fmt::Display for OutcomeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutcomeTransform::Level => "level",
            OutcomeTransform::Log => "log",
            OutcomeTransform::Growth => "growth",
        };
        f.write_str(s)
    }
}

impl FromStr for OutcomeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "level" => Ok(OutcomeTransform::Level),
            "log" => Ok(OutcomeTransform::Log),
            "growth" => Ok(OutcomeTransform::Growth),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// Layout of a panel CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsvLayout {
    /// `unit,period,value`, one row per cell.
    #[default]
    Long,
    /// `unit,<p1>,<p2>,...`, one row per unit.
    Wide,
}

impl FromStr for CsvLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(CsvLayout::Long),
            "wide" => Ok(CsvLayout::Wide),
            other => Err(Error::Config(format!("unknown csv format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PeriodKey {
    Int(i64),
    Date(NaiveDate),
}

fn period_key(label: &str) -> Option<PeriodKey> {
    let label = label.trim();
    if let Ok(v) = label.parse::<i64>() {
        return Some(PeriodKey::Int(v));
    }
    NaiveDate::parse_from_str(label, "%Y-%m-%d")
        .ok()
        .map(PeriodKey::Date)
}

fn period_keys(labels: &[String]) -> Result<Vec<PeriodKey>> {
    let keys = labels
        .iter()
        .map(|l| period_key(l).ok_or_else(|| Error::Parse(format!("period label `{l}` is neither an integer nor an ISO date"))))
        .collect::<Result<Vec<_>>>()?;
    let ints = keys.iter().filter(|k| matches!(k, PeriodKey::Int(_))).count();
    if ints != 0 && ints != keys.len() {
        return Err(Error::Parse("period labels mix integers and dates".into()));
    }
    Ok(keys)
}

/// Dense N×T outcome matrix with unit and period labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    unit_labels: Vec<String>,
    period_labels: Vec<String>,
    transform: OutcomeTransform,
}

impl Panel {
    /// Builds a panel, checking shape, finiteness, label uniqueness and
    /// chronological order of the period labels.
    pub fn new(
        values: DMatrix<f64>,
        unit_labels: Vec<String>,
        period_labels: Vec<String>,
        transform: OutcomeTransform,
    ) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 units and 2 periods, got {n}x{t}"
            )));
        }
        if unit_labels.len() != n || period_labels.len() != t {
            return Err(Error::InvalidPanel(format!(
                "label counts ({}, {}) do not match the {n}x{t} matrix",
                unit_labels.len(),
                period_labels.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite value at unit {} period {}",
                pos % n,
                pos / n
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &unit_labels {
            if !seen.insert(u.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate unit label `{u}`")));
            }
        }
        let keys = period_keys(&period_labels)?;
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel(
                "period labels must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            values,
            unit_labels,
            period_labels,
            transform,
        })
    }

    /// Panel with integer labels `0..N` for units and `1..=T` for periods.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let units = (0..values.nrows()).map(|i| format!("u{i}")).collect();
        let periods = (1..=values.ncols()).map(|t| t.to_string()).collect();
        Self::new(values, units, periods, OutcomeTransform::Level)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn transform_kind(&self) -> OutcomeTransform {
        self.transform
    }

    pub fn get(&self, unit: usize, period: usize) -> f64 {
        self.values[(unit, period)]
    }

    pub fn unit_index(&self, label: &str) -> Option<usize> {
        self.unit_labels.iter().position(|u| u == label)
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.period_labels.iter().position(|p| p == label)
    }

    /// Copy of the panel with a different value matrix of the same shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::InvalidPanel("shape mismatch".into()));
        }
        Self::new(
            values,
            self.unit_labels.clone(),
            self.period_labels.clone(),
            self.transform,
        )
    }

    /// Keeps the first `count` periods.
    pub fn leading_periods(&self, count: usize) -> Result<Self> {
        if count > self.n_periods() {
            return Err(Error::InvalidPanel(format!(
                "cannot keep {count} of {} periods",
                self.n_periods()
            )));
        }
        Self::new(
            self.values.columns(0, count).into_owned(),
            self.unit_labels.clone(),
            self.period_labels[..count].to_vec(),
            self.transform,
        )
    }

    /// Keeps the last `count` periods.
    pub fn trailing_periods(&self, count: usize) -> Result<Self> {
        let t = self.n_periods();
        if count > t {
            return Err(Error::InvalidPanel(format!("cannot keep {count} of {t} periods")));
        }
        Self::new(
            self.values.columns(t - count, count).into_owned(),
            self.unit_labels.clone(),
            self.period_labels[t - count..].to_vec(),
            self.transform,
        )
    }

    /// Drops one unit.
    pub fn without_unit(&self, unit: usize) -> Result<Self> {
        if unit >= self.n_units() {
            return Err(Error::Config(format!("unit index {unit} out of range")));
        }
        let mut labels = self.unit_labels.clone();
        labels.remove(unit);
        Self::new(
            self.values.clone().remove_row(unit),
            labels,
            self.period_labels.clone(),
            self.transform,
        )
    }

    /// Applies an outcome transform. Growth drops the first period.
    pub fn transform(&self, kind: OutcomeTransform) -> Result<Self> {
        match kind {
            OutcomeTransform::Level => Ok(self.clone()),
            OutcomeTransform::Log => {
                if let Some(pos) = self.values.iter().position(|v| *v <= 0.0) {
                    let n = self.n_units();
                    return Err(Error::Domain(format!(
                        "log transform needs positive values; unit `{}` period `{}` is {}",
                        self.unit_labels[pos % n],
                        self.period_labels[pos / n],
                        self.values[pos]
                    )));
                }
                Ok(Self {
                    values: self.values.map(f64::ln),
                    unit_labels: self.unit_labels.clone(),
                    period_labels: self.period_labels.clone(),
                    transform: OutcomeTransform::Log,
                })
            }
            OutcomeTransform::Growth => {
                let (n, t) = self.values.shape();
                if t < 3 {
                    return Err(Error::Domain(format!(
                        "growth transform needs at least 3 periods, got {t}"
                    )));
                }
                let mut out = DMatrix::zeros(n, t - 1);
                for i in 0..n {
                    for s in 1..t {
                        let prev = self.values[(i, s - 1)];
                        if prev == 0.0 {
                            return Err(Error::Domain(format!(
                                "growth transform divides by zero at unit `{}` period `{}`",
                                self.unit_labels[i], self.period_labels[s - 1]
                            )));
                        }
                        out[(i, s - 1)] = 100.0 * (self.values[(i, s)] - prev) / prev;
                    }
                }
                Self::new(
                    out,
                    self.unit_labels.clone(),
                    self.period_labels[1..].to_vec(),
                    OutcomeTransform::Growth,
                )
            }
        }
    }

    /// Reads a panel from CSV text. Rows are ordered by first appearance of
    /// the unit and columns by period.
    pub fn from_csv<R: Read>(reader: R, layout: CsvLayout) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut units: Vec<String> = Vec::new();
        let mut unit_pos: HashMap<String, usize> = HashMap::new();
        let mut periods: Vec<String> = Vec::new();
        let mut period_pos: HashMap<String, usize> = HashMap::new();
        let mut cells: HashMap<(usize, usize), f64> = HashMap::new();

        let intern = |label: &str, list: &mut Vec<String>, pos: &mut HashMap<String, usize>| {
            if let Some(&k) = pos.get(label) {
                return k;
            }
            list.push(label.to_string());
            pos.insert(label.to_string(), list.len() - 1);
            list.len() - 1
        };

        let parse_value = |raw: &str, unit: &str, period: &str| -> Result<f64> {
            let v: f64 = raw.parse().map_err(|_| {
                Error::Parse(format!(
                    "value `{raw}` for unit `{unit}` period `{period}` is not numeric"
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "value `{raw}` for unit `{unit}` period `{period}` is not finite"
                )));
            }
            Ok(v)
        };

        match layout {
            CsvLayout::Long => {
                let header = rdr.headers()?.clone();
                if header.len() != 3 {
                    return Err(Error::Parse(format!(
                        "long format needs 3 columns (unit,period,value), header has {}",
                        header.len()
                    )));
                }
                for rec in rdr.records() {
                    let rec = rec?;
                    if rec.len() != 3 {
                        return Err(Error::Parse(format!("ragged row: {rec:?}")));
                    }
                    let (u, p, raw) = (&rec[0], &rec[1], &rec[2]);
                    let value = parse_value(raw, u, p)?;
                    let ui = intern(u, &mut units, &mut unit_pos);
                    let pi = intern(p, &mut periods, &mut period_pos);
                    if cells.insert((ui, pi), value).is_some() {
                        return Err(Error::DuplicateCell {
                            unit: u.to_string(),
                            period: p.to_string(),
                        });
                    }
                }
            }
            CsvLayout::Wide => {
                let header = rdr.headers()?.clone();
                if header.len() < 2 {
                    return Err(Error::Parse("wide format needs at least one period column".into()));
                }
                let cols: Vec<usize> = header
                    .iter()
                    .skip(1)
                    .map(|p| {
                        if period_pos.contains_key(p) {
                            Err(Error::Parse(format!("duplicate period column `{p}`")))
                        } else {
                            Ok(intern(p, &mut periods, &mut period_pos))
                        }
                    })
                    .collect::<Result<_>>()?;
                for rec in rdr.records() {
                    let rec = rec?;
                    if rec.len() != header.len() {
                        return Err(Error::IncompletePanel(format!(
                            "row for unit `{}` has {} fields, expected {}",
                            &rec[0],
                            rec.len(),
                            header.len()
                        )));
                    }
                    let u = &rec[0];
                    if unit_pos.contains_key(u) {
                        return Err(Error::DuplicateCell {
                            unit: u.to_string(),
                            period: periods.first().cloned().unwrap_or_default(),
                        });
                    }
                    let ui = intern(u, &mut units, &mut unit_pos);
                    for (k, raw) in rec.iter().skip(1).enumerate() {
                        if raw.is_empty() {
                            return Err(Error::IncompletePanel(format!(
                                "missing value for unit `{u}` period `{}`",
                                periods[cols[k]]
                            )));
                        }
                        let value = parse_value(raw, u, &periods[cols[k]])?;
                        cells.insert((ui, cols[k]), value);
                    }
                }
            }
        }

        let keys = period_keys(&periods)?;
        let mut order: Vec<usize> = (0..periods.len()).collect();
        order.sort_by_key(|&k| keys[k]);
        if order.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
            return Err(Error::Parse("two period labels denote the same period".into()));
        }

        let (n, t) = (units.len(), periods.len());
        let mut values = DMatrix::zeros(n, t);
        for (i, unit) in units.iter().enumerate() {
            for (col, &p) in order.iter().enumerate() {
                values[(i, col)] = *cells.get(&(i, p)).ok_or_else(|| {
                    Error::IncompletePanel(format!(
                        "no value for unit `{unit}` period `{}`",
                        periods[p]
                    ))
                })?;
            }
        }
        let sorted_periods = order.iter().map(|&p| periods[p].clone()).collect();
        Self::new(values, units, sorted_periods, OutcomeTransform::Level)
    }

    /// Writes the panel as long-format CSV (`unit,period,value`).
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "period", "value"])?;
        for (i, unit) in self.unit_labels.iter().enumerate() {
            for (t, period) in self.period_labels.iter().enumerate() {
                wtr.write_record([unit.as_str(), period.as_str(), &self.values[(i, t)].to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the panel as wide-format CSV (`unit,<p1>,...`).
    pub fn write_wide_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string()];
        header.extend(self.period_labels.iter().cloned());
        wtr.write_record(&header)?;
        for (i, unit) in self.unit_labels.iter().enumerate() {
            let mut row = vec![unit.clone()];
            row.extend((0..self.n_periods()).map(|t| self.values[(i, t)].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Evaluation view for pseudo-treating `unit` in `period`: periods after
    /// `period` are dropped and the target cell is hidden.
    pub fn restrict(&self, unit: usize, period: usize) -> Result<MaskedPanel> {
        if unit >= self.n_units() {
            return Err(Error::Config(format!(
                "unit index {unit} out of range for {} units",
                self.n_units()
            )));
        }
        if period >= self.n_periods() {
            return Err(Error::Config(format!(
                "period index {period} out of range for {} periods",
                self.n_periods()
            )));
        }
        if period < 1 {
            return Err(Error::InsufficientHistory(
                "the target period needs at least one earlier period".into(),
            ));
        }
        MaskedPanel::single_hidden(self.leading_periods(period + 1)?, (unit, period))
    }

    /// Swaps the roles of units and periods. Labels swap along with the axes,
    /// so the result is not guaranteed to satisfy period ordering; it is meant
    /// for estimator symmetry checks and carries synthetic labels.
    pub fn transpose(&self) -> Result<Self> {
        Self::from_matrix(self.values.transpose())
    }
}

/// A panel together with the cells an estimator is allowed to read and the
/// single target cell to impute.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPanel {
    panel: Panel,
    visible: DMatrix<bool>,
    target: (usize, usize),
}

impl MaskedPanel {
    pub fn new(panel: Panel, visible: DMatrix<bool>, target: (usize, usize)) -> Result<Self> {
        if visible.shape() != panel.values.shape() {
            return Err(Error::Mask("visibility pattern does not match panel shape".into()));
        }
        let (n, t) = visible.shape();
        if target.0 >= n || target.1 >= t {
            return Err(Error::Mask(format!("target {target:?} outside {n}x{t} panel")));
        }
        if visible[target] {
            return Err(Error::Mask("target cell must be hidden".into()));
        }
        Ok(Self {
            panel,
            visible,
            target,
        })
    }

    /// Every cell visible except `target`.
    pub fn single_hidden(panel: Panel, target: (usize, usize)) -> Result<Self> {
        let mut visible = DMatrix::from_element(panel.n_units(), panel.n_periods(), true);
        if target.0 < visible.nrows() && target.1 < visible.ncols() {
            visible[target] = false;
        }
        Self::new(panel, visible, target)
    }

    pub fn panel(&self) -> &Panel {
        &self.panel
    }

    pub fn visible(&self) -> &DMatrix<bool> {
        &self.visible
    }

    pub fn is_visible(&self, unit: usize, period: usize) -> bool {
        self.visible[(unit, period)]
    }

    pub fn target(&self) -> (usize, usize) {
        self.target
    }

    pub fn n_units(&self) -> usize {
        self.panel.n_units()
    }

    pub fn n_periods(&self) -> usize {
        self.panel.n_periods()
    }

    pub fn n_visible(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Visible value, or `None` for hidden cells.
    pub fn observed(&self, unit: usize, period: usize) -> Option<f64> {
        self.visible[(unit, period)].then(|| self.panel.values[(unit, period)])
    }

    /// True when the target is the only hidden cell.
    pub fn only_target_hidden(&self) -> bool {
        self.n_visible() + 1 == self.visible.len()
    }

    /// Copy with additional cells hidden. The target stays hidden.
    pub fn with_hidden(&self, cells: &[(usize, usize)]) -> Self {
        let mut visible = self.visible.clone();
        for &c in cells {
            visible[c] = false;
        }
        Self {
            panel: self.panel.clone(),
            visible,
            target: self.target,
        }
    }

    /// Transposed view: unit `i`, period `t` becomes unit `t`, period `i`.
    pub fn transpose(&self) -> Result<Self> {
        Self::new(
            self.panel.transpose()?,
            self.visible.transpose(),
            (self.target.1, self.target.0),
        )
    }

    /// Values with every hidden cell replaced by `fill`. Used to prove that
    /// estimators never read hidden cells.
    pub fn poisoned(&self, fill: f64) -> Result<Self> {
        let mut values = self.panel.values.clone();
        for (v, vis) in values.iter_mut().zip(self.visible.iter()) {
            if !vis {
                *v = fill;
            }
        }
        Ok(Self {
            panel: self.panel.with_values(values)?,
            visible: self.visible.clone(),
            target: self.target,
        })
    }
}
