//! Natural cubic spline bases, exposure-quartile indicators, and the design
//! matrices for the outcome and mediator regressions.
//!
//! The spline basis is the B-spline construction with the natural (zero
//! second derivative) constraint projected out at the boundary knots, so any
//! affine function of the input lies in the span of {1, basis columns} and
//! evaluation beyond the boundary knots extrapolates linearly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeriesDataset, Weekday};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::math;

/// Natural cubic spline basis with frozen knots.
///
/// `df` basis columns, intercept excluded; `interior_knots.len() == df - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    df: usize,
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    /// Clamped knot vector: boundary repeated 4x on each side.
    aknots: Vec<f64>,
    /// Natural-constraint projector applied to the raw B-spline row
    /// (first B-spline dropped): (df + 2) x df.
    q2: Mat,
}

impl SplineBasis {
    pub fn df(&self) -> usize {
        self.df
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn is_outside(&self, x: f64) -> bool {
        x < self.boundary.0 || x > self.boundary.1
    }

    /// Basis row at `x`; linear extrapolation beyond the boundary knots.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.df];
        self.evaluate_into(x, &mut out);
        out
    }

    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.df);
        let raw = self.raw_row(x);
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..raw.len() {
                s += raw[i] * self.q2[(i, j)];
            }
            *o = s;
        }
    }

    /// Raw B-spline row with the first function dropped, extended linearly
    /// outside the boundary.
    fn raw_row(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let full = if x < lo {
            let v = bspline_all(&self.aknots, 4, lo, 0);
            let d = bspline_all(&self.aknots, 4, lo, 1);
            v.iter()
                .zip(&d)
                .map(|(v, d)| v + (x - lo) * d)
                .collect::<Vec<f64>>()
        } else if x > hi {
            let v = bspline_all(&self.aknots, 4, hi, 0);
            let d = bspline_all(&self.aknots, 4, hi, 1);
            v.iter()
                .zip(&d)
                .map(|(v, d)| v + (x - hi) * d)
                .collect::<Vec<f64>>()
        } else {
            bspline_all(&self.aknots, 4, x, 0)
        };
        full[1..].to_vec()
    }
}

/// All order-`k` B-spline values (or `deriv`-th derivatives) on knot vector
/// `t` at a point inside [t.first, t.last]. Returns `t.len() - k` values.
fn bspline_all(t: &[f64], k: usize, x: f64, deriv: usize) -> Vec<f64> {
    let n = t.len() - 1; // number of order-1 functions
    // Order-1: indicator of the half-open knot span, closing the last
    // non-empty span so the right boundary is covered.
    let mut vals = vec![0.0; n];
    let mut span = None;
    for i in 0..n {
        if t[i] <= x && x < t[i + 1] {
            span = Some(i);
            break;
        }
    }
    if span.is_none() {
        for i in (0..n).rev() {
            if t[i] < t[i + 1] {
                span = Some(i);
                break;
            }
        }
    }
    if let Some(i) = span {
        vals[i] = 1.0;
    }
    // Raise the order without differentiation up to k - deriv.
    let base_order = k - deriv;
    let mut order = 1;
    while order < base_order {
        let next_n = t.len() - (order + 1);
        let mut next = vec![0.0; next_n];
        for i in 0..next_n {
            let mut v = 0.0;
            let dl = t[i + order] - t[i];
            if dl > 0.0 {
                v += (x - t[i]) / dl * vals[i];
            }
            let dr = t[i + order + 1] - t[i + 1];
            if dr > 0.0 {
                v += (t[i + order + 1] - x) / dr * vals[i + 1];
            }
            next[i] = v;
        }
        vals = next;
        order += 1;
    }
    // Each differentiation step raises the order with the derivative
    // recurrence instead.
    while order < k {
        let next_n = t.len() - (order + 1);
        let mut next = vec![0.0; next_n];
        for i in 0..next_n {
            let mut v = 0.0;
            let dl = t[i + order] - t[i];
            if dl > 0.0 {
                v += vals[i] / dl;
            }
            let dr = t[i + order + 1] - t[i + 1];
            if dr > 0.0 {
                v -= vals[i + 1] / dr;
            }
            next[i] = order as f64 * v;
        }
        vals = next;
        order += 1;
    }
    vals
}

/// Natural cubic spline basis from data: interior knots at equally spaced
/// quantiles of the distinct values, boundary knots at the data range unless
/// overridden. Returns the frozen basis and its evaluation at `values`.
pub fn ncs_basis(
    values: &[f64],
    df: usize,
    boundary: Option<(f64, f64)>,
) -> Result<(SplineBasis, Mat)> {
    if df < 2 {
        return Err(Error::argument("spline df must be at least 2"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("spline inputs must be finite"));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < df + 1 {
        return Err(Error::argument(format!(
            "need at least {} distinct values for df={}, got {}",
            df + 1,
            df,
            distinct.len()
        )));
    }
    let (lo, hi) = boundary.unwrap_or((distinct[0], distinct[distinct.len() - 1]));
    if !(lo < hi) {
        return Err(Error::argument("boundary knots must satisfy lo < hi"));
    }
    let interior: Vec<f64> = (1..df)
        .map(|i| math::quantile_sorted(&distinct, i as f64 / df as f64))
        .collect();
    if interior.iter().any(|k| *k <= lo || *k >= hi) {
        return Err(Error::argument(
            "interior knots fall outside the boundary knots",
        ));
    }
    for w in interior.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::argument("interior knots are not strictly increasing"));
        }
    }
    let mut aknots = vec![lo; 4];
    aknots.extend_from_slice(&interior);
    aknots.extend_from_slice(&[hi; 4]);

    // Constraint rows: second derivative of each retained B-spline at the
    // two boundary knots (first B-spline dropped with the intercept).
    let width = df + 2;
    let d2_lo = bspline_all(&aknots, 4, lo, 2);
    let d2_hi = bspline_all(&aknots, 4, hi, 2);
    let mut cons_t = Mat::zeros(width, 2);
    for i in 0..width {
        cons_t[(i, 0)] = d2_lo[i + 1];
        cons_t[(i, 1)] = d2_hi[i + 1];
    }
    let q2 = null_space_basis(&cons_t, df)?;

    let basis = SplineBasis {
        df,
        interior_knots: interior,
        boundary: (lo, hi),
        aknots,
        q2,
    };
    let mut mat = Mat::zeros(values.len(), df);
    for (r, &x) in values.iter().enumerate() {
        basis.evaluate_into(x, mat.row_mut(r));
    }
    Ok((basis, mat))
}

/// Orthonormal basis of the null space of `a^T` (`a` is n x 2) via full
/// Householder QR of `a`: the trailing n - 2 columns of Q.
fn null_space_basis(a: &Mat, expect_cols: usize) -> Result<Mat> {
    let n = a.nrows();
    let k = a.ncols();
    assert!(k == 2);
    if n < k + expect_cols {
        return Err(Error::argument("constraint matrix too small"));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut norm = 0.0;
        for i in j..n {
            norm += work[(i, j)] * work[(i, j)];
        }
        norm = math::sqrt(norm);
        if norm == 0.0 {
            return Err(Error::Numeric(
                "degenerate natural-spline constraints".into(),
            ));
        }
        let alpha = if work[(j, j)] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[j] = work[(j, j)] - alpha;
        for i in (j + 1)..n {
            v[i] = work[(i, j)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in j..k {
                let mut s = 0.0;
                for i in j..n {
                    s += v[i] * work[(i, col)];
                }
                let tau = 2.0 * s / vnorm2;
                for i in j..n {
                    let vi = v[i];
                    work[(i, col)] -= tau * vi;
                }
            }
        }
        reflectors.push(v);
    }
    // Q = H1 H2; null-space columns are Q e_j for j in k..n.
    let mut q2 = Mat::zeros(n, expect_cols);
    for (out_col, j) in (k..k + expect_cols).enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for v in reflectors.iter().rev() {
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let s = dot(v, &e);
            let tau = 2.0 * s / vnorm2;
            for i in 0..n {
                e[i] -= tau * v[i];
            }
        }
        for i in 0..n {
            q2[(i, out_col)] = e[i];
        }
    }
    Ok(q2)
}

/// Empirical exposure quartile cutpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileSpec {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl QuartileSpec {
    pub fn new(q25: f64, q50: f64, q75: f64) -> Result<Self> {
        if !(q25 <= q50 && q50 <= q75) {
            return Err(Error::argument("quartile cutpoints must be ordered"));
        }
        Ok(QuartileSpec { q25, q50, q75 })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("no values for quartile cutpoints"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        QuartileSpec::new(
            math::quantile_sorted(&sorted, 0.25),
            math::quantile_sorted(&sorted, 0.50),
            math::quantile_sorted(&sorted, 0.75),
        )
    }
}

/// Indicators for quartiles 2-4; the first quartile is the baseline.
/// Intervals are left-open/right-closed:
/// (-inf, q25], (q25, q50], (q50, q75], (q75, inf).
pub fn quartile_indicators(x: f64, q: &QuartileSpec) -> (bool, bool, bool) {
    if x <= q.q25 {
        (false, false, false)
    } else if x <= q.q50 {
        (true, false, false)
    } else if x <= q.q75 {
        (false, true, false)
    } else {
        (false, false, true)
    }
}

/// Index 0..=3 of the quartile interval containing `x` (0 = baseline).
pub fn quartile_index(x: f64, q: &QuartileSpec) -> usize {
    match quartile_indicators(x, q) {
        (false, false, false) => 0,
        (true, false, false) => 1,
        (false, true, false) => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignRole {
    /// Quasi-Poisson outcome regression: splines, mediator, interactions,
    /// confounders.
    Outcome,
    /// Spline-linear mediator regression: exposure spline plus confounders.
    MediatorSpline,
    /// Raw covariates for the tree-based mediator model.
    MediatorRaw,
}

/// Kind of a raw covariate column; controls cutpoint construction in the
/// tree sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    Ordinal,
}

/// Spline degrees of freedom per smooth term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplineDfs {
    pub temperature: usize,
    pub humidity: usize,
    pub doy: usize,
}

impl Default for SplineDfs {
    fn default() -> Self {
        SplineDfs {
            temperature: 6,
            humidity: 6,
            doy: 6,
        }
    }
}

/// Column ranges of a design matrix (intercept excluded; the model fitters
/// prepend it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub temperature: Range<usize>,
    pub mediator: Option<usize>,
    pub interactions: Option<Range<usize>>,
    pub confounders: Range<usize>,
}

/// Frozen description of a design: bases, knots, quartiles, column order.
/// Built once from the fitting data and reused verbatim for counterfactual
/// prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub role: DesignRole,
    pub temperature_basis: Option<SplineBasis>,
    pub humidity_basis: Option<SplineBasis>,
    pub doy_basis: Option<SplineBasis>,
    pub year_levels: Vec<i32>,
    pub quartiles: QuartileSpec,
    pub column_names: Vec<String>,
    pub layout: DesignLayout,
    /// Whether the dataset carried any holiday flag (the indicator column is
    /// omitted when it would be identically zero).
    pub has_holiday: bool,
    /// Column kinds; populated for the raw-covariate role.
    pub raw_kinds: Vec<CovariateKind>,
}

impl DesignSpec {
    pub fn ncols(&self) -> usize {
        self.column_names.len()
    }

    pub fn temperature_basis(&self) -> &SplineBasis {
        self.temperature_basis
            .as_ref()
            .expect("role without temperature basis")
    }

    /// Shared confounder column layout for outcome/mediator-spline roles.
    fn confounder_names(
        doy_df: usize,
        hum_df: usize,
        years: &[i32],
        has_holiday: bool,
    ) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=doy_df {
            names.push(format!("doy_ns{i}"));
        }
        for &y in &years[1..] {
            for i in 1..=doy_df {
                names.push(format!("doy_ns{i}:year{y}"));
            }
        }
        for i in 1..=hum_df {
            names.push(format!("humidity_ns{i}"));
        }
        for wd in &Weekday::ALL[1..] {
            names.push(format!("wd_{}", wd.label()));
        }
        if has_holiday {
            names.push("holiday".into());
        }
        names
    }

    /// Outcome-regression spec (temperature spline, mediator main effect,
    /// quartile interactions, confounders), knots frozen from `ds`.
    pub fn outcome(ds: &TimeSeriesDataset, dfs: SplineDfs) -> Result<DesignSpec> {
        Self::with_splines(ds, dfs, DesignRole::Outcome)
    }

    /// Spline-linear mediator spec (temperature spline plus confounders).
    pub fn mediator_spline(ds: &TimeSeriesDataset, dfs: SplineDfs) -> Result<DesignSpec> {
        Self::with_splines(ds, dfs, DesignRole::MediatorSpline)
    }

    fn with_splines(
        ds: &TimeSeriesDataset,
        dfs: SplineDfs,
        role: DesignRole,
    ) -> Result<DesignSpec> {
        if ds.is_empty() {
            return Err(Error::argument("empty dataset"));
        }
        let xs = ds.exposures();
        let hums: Vec<f64> = ds.rows.iter().map(|r| r.humidity).collect();
        let doys: Vec<f64> = ds.rows.iter().map(|r| r.doy as f64).collect();
        let (temp_basis, _) = ncs_basis(&xs, dfs.temperature, None)?;
        let (hum_basis, _) = ncs_basis(&hums, dfs.humidity, None)?;
        let (doy_basis, _) = ncs_basis(&doys, dfs.doy, None)?;
        let years = ds.year_levels();
        let quartiles = QuartileSpec::from_values(&xs)?;
        let has_holiday = ds.rows.iter().any(|r| r.holiday);

        let mut names: Vec<String> = (1..=dfs.temperature).map(|i| format!("x_ns{i}")).collect();
        let temp_range = 0..dfs.temperature;
        let (mediator, interactions) = match role {
            DesignRole::Outcome => {
                names.push("m".into());
                for h in 2..=4 {
                    names.push(format!("q{h}_x:m"));
                }
                (
                    Some(dfs.temperature),
                    Some(dfs.temperature + 1..dfs.temperature + 4),
                )
            }
            _ => (None, None),
        };
        let conf_start = names.len();
        names.extend(Self::confounder_names(
            dfs.doy,
            dfs.humidity,
            &years,
            has_holiday,
        ));
        let layout = DesignLayout {
            temperature: temp_range,
            mediator,
            interactions,
            confounders: conf_start..names.len(),
        };
        Ok(DesignSpec {
            role,
            temperature_basis: Some(temp_basis),
            humidity_basis: Some(hum_basis),
            doy_basis: Some(doy_basis),
            year_levels: years,
            quartiles,
            column_names: names,
            layout,
            has_holiday,
            raw_kinds: Vec::new(),
        })
    }

    /// Raw-covariate spec for the tree-based mediator model.
    pub fn mediator_raw(ds: &TimeSeriesDataset) -> Result<DesignSpec> {
        if ds.is_empty() {
            return Err(Error::argument("empty dataset"));
        }
        let names: Vec<String> = ["x", "humidity", "doy", "year", "weekday", "holiday"]
            .iter()
            .map(|s| String::from(*s))
            .collect();
        let quartiles = QuartileSpec::from_values(&ds.exposures())?;
        Ok(DesignSpec {
            role: DesignRole::MediatorRaw,
            temperature_basis: None,
            humidity_basis: None,
            doy_basis: None,
            year_levels: ds.year_levels(),
            quartiles,
            column_names: names,
            layout: DesignLayout {
                temperature: 0..1,
                mediator: None,
                interactions: None,
                confounders: 1..6,
            },
            has_holiday: ds.rows.iter().any(|r| r.holiday),
            raw_kinds: vec![
                CovariateKind::Continuous,
                CovariateKind::Continuous,
                CovariateKind::Continuous,
                CovariateKind::Ordinal,
                CovariateKind::Ordinal,
                CovariateKind::Ordinal,
            ],
        })
    }

    /// Confounder block of a single day's design row (doy splines, doy-year
    /// interactions, humidity splines, weekday indicators, holiday).
    pub fn confounder_row(&self, day: &crate::data::DayRecord) -> Vec<f64> {
        let doy_b = self
            .doy_basis
            .as_ref()
            .expect("confounder_row needs spline bases");
        let hum_b = self.humidity_basis.as_ref().unwrap();
        let doy_df = doy_b.df();
        let n = self.layout.confounders.len();
        let mut row = Vec::with_capacity(n);
        let doy_vals = doy_b.evaluate(day.doy as f64);
        row.extend_from_slice(&doy_vals);
        for &y in &self.year_levels[1..] {
            if day.year == y {
                row.extend_from_slice(&doy_vals);
            } else {
                row.extend(core::iter::repeat(0.0).take(doy_df));
            }
        }
        row.extend(hum_b.evaluate(day.humidity));
        for wd in &Weekday::ALL[1..] {
            row.push(if day.weekday == *wd { 1.0 } else { 0.0 });
        }
        if self.has_holiday {
            row.push(if day.holiday { 1.0 } else { 0.0 });
        }
        debug_assert_eq!(row.len(), n);
        row
    }
}

/// A realized design matrix plus the spec that produced it.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: Mat,
    pub spec: DesignSpec,
    pub warnings: Vec<String>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Outcome design rows for `ds` under a frozen spec. Overrides substitute a
/// constant exposure and/or mediator on every row for counterfactual
/// prediction; confounder columns keep the observed day values.
pub fn build_outcome_design(
    ds: &TimeSeriesDataset,
    spec: &DesignSpec,
    x_override: Option<f64>,
    m_override: Option<f64>,
) -> Result<DesignMatrix> {
    if spec.role != DesignRole::Outcome {
        return Err(Error::argument("spec role is not `outcome`"));
    }
    if ds.is_empty() {
        return Err(Error::argument("empty dataset"));
    }
    let mut warnings = Vec::new();
    let temp_basis = spec.temperature_basis();
    if let Some(x) = x_override {
        if temp_basis.is_outside(x) {
            warnings.push(format!(
                "exposure override {x} outside boundary knots {:?}; extrapolating linearly",
                temp_basis.boundary()
            ));
        }
    }
    let p = spec.ncols();
    let mut mat = Mat::zeros(ds.len(), p);
    for (r, day) in ds.rows.iter().enumerate() {
        let x = x_override.unwrap_or(day.x);
        let m = m_override.unwrap_or(day.m);
        let row = mat.row_mut(r);
        temp_basis.evaluate_into(x, &mut row[spec.layout.temperature.clone()]);
        let m_col = spec.layout.mediator.unwrap();
        row[m_col] = m;
        let inter = spec.layout.interactions.clone().unwrap();
        let (i1, i2, i3) = quartile_indicators(x, &spec.quartiles);
        row[inter.start] = if i1 { m } else { 0.0 };
        row[inter.start + 1] = if i2 { m } else { 0.0 };
        row[inter.start + 2] = if i3 { m } else { 0.0 };
        let conf = spec.confounder_row(day);
        row[spec.layout.confounders.clone()].copy_from_slice(&conf);
    }
    check_finite(&mat)?;
    Ok(DesignMatrix {
        values: mat,
        spec: spec.clone(),
        warnings,
    })
}

/// Mediator design rows: spline-expanded for the linear model, raw
/// covariates for the tree model.
pub fn build_mediator_design(ds: &TimeSeriesDataset, spec: &DesignSpec) -> Result<DesignMatrix> {
    if ds.is_empty() {
        return Err(Error::argument("empty dataset"));
    }
    match spec.role {
        DesignRole::MediatorSpline => {
            let p = spec.ncols();
            let mut mat = Mat::zeros(ds.len(), p);
            let temp_basis = spec.temperature_basis();
            for (r, day) in ds.rows.iter().enumerate() {
                let row = mat.row_mut(r);
                temp_basis.evaluate_into(day.x, &mut row[spec.layout.temperature.clone()]);
                let conf = spec.confounder_row(day);
                row[spec.layout.confounders.clone()].copy_from_slice(&conf);
            }
            check_finite(&mat)?;
            Ok(DesignMatrix {
                values: mat,
                spec: spec.clone(),
                warnings: Vec::new(),
            })
        }
        DesignRole::MediatorRaw => {
            let mut mat = Mat::zeros(ds.len(), 6);
            for (r, day) in ds.rows.iter().enumerate() {
                let row = mat.row_mut(r);
                row[0] = day.x;
                row[1] = day.humidity;
                row[2] = day.doy as f64;
                row[3] = day.year as f64;
                row[4] = day.weekday.code() as f64;
                row[5] = if day.holiday { 1.0 } else { 0.0 };
            }
            check_finite(&mat)?;
            Ok(DesignMatrix {
                values: mat,
                spec: spec.clone(),
                warnings: Vec::new(),
            })
        }
        DesignRole::Outcome => Err(Error::argument(
            "use build_outcome_design for the outcome role",
        )),
    }
}

/// Confounder block only (shared layout between outcome and mediator-spline
/// designs), one row per day.
pub fn build_confounder_matrix(ds: &TimeSeriesDataset, spec: &DesignSpec) -> Result<Mat> {
    if matches!(spec.role, DesignRole::MediatorRaw) {
        return Err(Error::argument("raw role has no confounder block"));
    }
    let n = spec.layout.confounders.len();
    let mut mat = Mat::zeros(ds.len(), n);
    for (r, day) in ds.rows.iter().enumerate() {
        let row = spec.confounder_row(day);
        mat.row_mut(r).copy_from_slice(&row);
    }
    Ok(mat)
}

fn check_finite(mat: &Mat) -> Result<()> {
    if mat.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("design matrix contains non-finite entries"));
    }
    Ok(())
}
