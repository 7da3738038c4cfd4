//! Rolling-origin tuning and evaluation.
//!
//! The series is split into `[0, T1)` (fit), `[T1, T2)` (validation) and
//! `[T2, T)` (test). For every λ on the grid a model is fit on the first
//! block and scored by one-step-ahead MSPE on the second, using the actual
//! lagged values. The λ with the lowest validation MSPE is refit on
//! `[0, T2)` and scored on the test block.

use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    family_name, fit_gstar_penalized, fit_star_ols, fit_var_ols, lambda_max, GstarModel,
    OneStepPredictor, VarModel,
};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::series::{
    check_range, standardize, ModelOrder, SpatioTemporalSeries, StandardizationStats,
};
use crate::solver::SolverConfig;
use crate::weights::NeighborhoodWeights;

/// Time boundaries: fit on `0..t1`, validate on `t1..t2`, test on `t2..len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub t1: usize,
    pub t2: usize,
}

impl SplitSpec {
    pub fn new(t1: usize, t2: usize, len: usize) -> Result<Self> {
        if !(0 < t1 && t1 < t2 && t2 < len) {
            return Err(Error::InvalidSplit(format!(
                "need 0 < T1 < T2 < T, got T1={t1}, T2={t2}, T={len}"
            )));
        }
        Ok(Self { t1, t2 })
    }

    /// `T1 = ⌊T/3⌋`, `T2 = ⌊2T/3⌋`.
    pub fn thirds(len: usize) -> Result<Self> {
        Self::new(len / 3, 2 * len / 3, len)
    }

    pub fn train(&self) -> Range<usize> {
        0..self.t1
    }

    pub fn validation(&self) -> Range<usize> {
        self.t1..self.t2
    }

    pub fn refit(&self) -> Range<usize> {
        0..self.t2
    }

    pub fn test(&self, len: usize) -> Range<usize> {
        self.t2..len
    }
}

/// How the raw series is scaled before each fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Use values as given.
    AsIs,
    /// Per-location mean/std over the whole series.
    #[default]
    Global,
    /// Per-location mean/std over the fit window only.
    TrainOnly,
}

pub fn prepare(
    series: &SpatioTemporalSeries,
    scaling: Scaling,
    fit_window: Range<usize>,
) -> Result<(SpatioTemporalSeries, Option<StandardizationStats>)> {
    match scaling {
        Scaling::AsIs => Ok((series.clone(), None)),
        Scaling::Global => standardize(series, 0..series.len()).map(|(s, st)| (s, Some(st))),
        Scaling::TrainOnly => standardize(series, fit_window).map(|(s, st)| (s, Some(st))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// Explicit grid; must be strictly decreasing and nonnegative.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidGrid(
                "values must be finite and nonnegative".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidGrid(
                "values must be strictly decreasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `points` values log-spaced from `max` down to `max · min_ratio`.
    pub fn log_spaced(max: f64, points: usize, min_ratio: f64) -> Result<Self> {
        if points == 0 || !(min_ratio > 0.0 && min_ratio < 1.0) {
            return Err(Error::InvalidGrid(format!(
                "need points >= 1 and 0 < ratio < 1 (got {points}, {min_ratio})"
            )));
        }
        if max == 0.0 || points == 1 {
            return Self::from_values(vec![max]);
        }
        let log_ratio = min_ratio.ln();
        let values = (0..points)
            .map(|q| max * (log_ratio * q as f64 / (points - 1) as f64).exp())
            .collect();
        Self::from_values(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Grid settings resolved against the data at tuning time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub points: usize,
    pub min_ratio: f64,
    /// Overrides the data-driven grid when present.
    pub values: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 20,
            min_ratio: 1e-3,
            values: None,
        }
    }
}

impl GridSpec {
    /// Explicit values, or a log grid from `max_i ‖Z_iᵀ y_i‖∞` on the
    /// training window of `prepared`.
    pub fn resolve(
        &self,
        prepared: &SpatioTemporalSeries,
        weights: &NeighborhoodWeights,
        order: ModelOrder,
        train: Range<usize>,
    ) -> Result<LambdaGrid> {
        match &self.values {
            Some(v) => LambdaGrid::from_values(v.clone()),
            None => LambdaGrid::log_spaced(
                lambda_max(prepared, weights, order, train)?,
                self.points,
                self.min_ratio,
            ),
        }
    }
}

/// Mean squared error over all entries of two `k x n` matrices.
pub fn mspe(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_shapes(actual, predicted)?;
    let n = actual.len() as f64;
    Ok(actual
        .iter()
        .zip(predicted.iter())
        .map(|(a, p)| (a - p).powi(2))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mrpe {
    pub value: f64,
    /// Terms skipped because the actual value was exactly zero.
    pub excluded: usize,
}

/// Mean absolute relative error, skipping terms whose actual value is zero.
pub fn mrpe(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<Mrpe> {
    check_shapes(actual, predicted)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (a, p) in actual.iter().zip(predicted.iter()) {
        if *a != 0.0 {
            total += ((a - p) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllZeroActuals);
    }
    Ok(Mrpe {
        value: total / used as f64,
        excluded: actual.len() - used,
    })
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    Ok(())
}

/// Actual and one-step-predicted values over `window` (columns are times).
pub fn one_step_predictions<M: OneStepPredictor + ?Sized>(
    model: &M,
    series: &SpatioTemporalSeries,
    window: Range<usize>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_range(&window, series.len())?;
    let k = series.k();
    let mut actual = DMatrix::zeros(k, window.len());
    let mut predicted = DMatrix::zeros(k, window.len());
    for (c, t) in window.enumerate() {
        actual.set_column(c, &series.at(t));
        predicted.set_column(c, &model.predict_at(series, t)?);
    }
    Ok((actual, predicted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    /// `None` when the residual sum of squares is zero.
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub degenerate: bool,
    pub rss: f64,
    pub n: usize,
    pub df: usize,
}

/// Models that can report their count of nonzero coefficients.
pub trait SparseModel: OneStepPredictor {
    fn nonzero(&self) -> usize;
}

impl SparseModel for GstarModel {
    fn nonzero(&self) -> usize {
        GstarModel::nonzero(self)
    }
}

impl SparseModel for VarModel {
    fn nonzero(&self) -> usize {
        VarModel::nonzero(self)
    }
}

/// Pooled Gaussian criteria over the in-sample one-step residuals of
/// `fit_range`: with `N = k·(len − p)`, `df` the nonzero count,
/// `AIC = N ln(RSS/N) + 2 df` and `BIC = N ln(RSS/N) + ln(N) df`.
pub fn information_criteria<M: SparseModel + ?Sized>(
    model: &M,
    series: &SpatioTemporalSeries,
    fit_range: Range<usize>,
) -> Result<InformationCriteria> {
    check_range(&fit_range, series.len())?;
    let p = model.max_lag();
    if fit_range.len() <= p {
        return Err(Error::WindowTooShort {
            len: fit_range.len(),
            p,
        });
    }
    let window = (fit_range.start + p)..fit_range.end;
    let (actual, predicted) = one_step_predictions(model, series, window)?;
    let n = actual.len();
    let rss: f64 = actual
        .iter()
        .zip(predicted.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let df = model.nonzero();
    Ok(information_criteria_from(rss, n, df))
}

/// The criteria from their sufficient statistics.
pub fn information_criteria_from(rss: f64, n: usize, df: usize) -> InformationCriteria {
    let scale = actual_floor(n);
    if rss <= scale {
        return InformationCriteria {
            aic: None,
            bic: None,
            degenerate: true,
            rss,
            n,
            df,
        };
    }
    let nf = n as f64;
    let base = nf * (rss / nf).ln();
    InformationCriteria {
        aic: Some(base + 2.0 * df as f64),
        bic: Some(base + nf.ln() * df as f64),
        degenerate: false,
        rss,
        n,
        df,
    }
}

// RSS at or below this counts as an exact fit: numerical noise from an
// interpolating least-squares solve sits many orders of magnitude lower
// than any genuine residual on standardized data.
fn actual_floor(n: usize) -> f64 {
    n as f64 * 1e-20
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub validation_mspe: Vec<f64>,
    pub selected_index: usize,
    pub selected_lambda: f64,
    /// Model fitted on the training window for each grid value.
    pub fits: Vec<GstarModel>,
}

/// Shared settings of one tuning/evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub split: SplitSpec,
    pub scaling: Scaling,
    pub solver: SolverConfig,
    pub grid: GridSpec,
}

impl Protocol {
    pub fn paper(len: usize) -> Result<Self> {
        Ok(Self {
            split: SplitSpec::thirds(len)?,
            scaling: Scaling::Global,
            solver: SolverConfig::default(),
            grid: GridSpec::default(),
        })
    }
}

fn check_protocol(series: &SpatioTemporalSeries, split: &SplitSpec, p: usize) -> Result<()> {
    SplitSpec::new(split.t1, split.t2, series.len())?;
    if series.len() <= 3 * p {
        return Err(Error::WindowTooShort {
            len: series.len(),
            p,
        });
    }
    if split.t1 <= p {
        return Err(Error::WindowTooShort { len: split.t1, p });
    }
    Ok(())
}

fn fit_kind(
    prepared: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    kind: PenaltyKind,
    lambda: f64,
    solver: &SolverConfig,
    window: Range<usize>,
) -> Result<GstarModel> {
    let spec = PenaltySpec::new(kind, lambda, order)?;
    fit_gstar_penalized(prepared, weights, &spec, solver, window)
}

/// Fits on the training block for every grid value and scores one-step
/// predictions on the validation block. Ties go to the larger λ.
pub fn rolling_cv(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    kind: PenaltyKind,
    grid: &LambdaGrid,
    protocol: &Protocol,
) -> Result<CvResult> {
    let split = protocol.split;
    check_protocol(series, &split, order.p)?;
    let (prepared, _) = prepare(series, protocol.scaling, split.train())?;
    let mut validation_mspe = Vec::with_capacity(grid.values().len());
    let mut fits = Vec::with_capacity(grid.values().len());
    for &lambda in grid.values() {
        let model = fit_kind(
            &prepared,
            weights,
            order,
            kind,
            lambda,
            &protocol.solver,
            split.train(),
        )?;
        let (actual, predicted) = one_step_predictions(&model, &prepared, split.validation())?;
        validation_mspe.push(mspe(&actual, &predicted)?);
        fits.push(model);
    }
    // grid is strictly decreasing, so the first minimum is the largest λ
    let mut selected_index = 0;
    for (q, &v) in validation_mspe.iter().enumerate() {
        if v < validation_mspe[selected_index] {
            selected_index = q;
        }
    }
    Ok(CvResult {
        lambdas: grid.values().to_vec(),
        selected_lambda: grid.values()[selected_index],
        selected_index,
        validation_mspe,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// Neighborhood levels; absent for VAR.
    pub eta: Option<usize>,
    pub mspe: f64,
    /// Absent when every test actual is zero.
    pub mrpe: Option<f64>,
    pub mrpe_excluded: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub ic_degenerate: bool,
    pub selected_lambda: Option<f64>,
    pub validation_mspe: Option<f64>,
    pub nonzero: usize,
    pub parameters: usize,
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// A refitted model and its test-block scores.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Gstar(GstarModel),
    Var(VarModel),
}

impl FittedModel {
    pub fn as_predictor(&self) -> &dyn SparseModel {
        match self {
            FittedModel::Gstar(m) => m,
            FittedModel::Var(m) => m,
        }
    }
}

fn score_on_test<M: SparseModel>(
    name: &str,
    eta: Option<usize>,
    model: &M,
    prepared: &SpatioTemporalSeries,
    split: &SplitSpec,
    parameters: usize,
) -> Result<ReportRow> {
    let (actual, predicted) = one_step_predictions(model, prepared, split.test(prepared.len()))?;
    let err = mspe(&actual, &predicted)?;
    let rel = match mrpe(&actual, &predicted) {
        Ok(m) => Some(m),
        Err(Error::AllZeroActuals) => None,
        Err(e) => return Err(e),
    };
    let ic = information_criteria(model, prepared, split.refit())?;
    Ok(ReportRow {
        model: name.to_string(),
        eta,
        mspe: err,
        mrpe: rel.map(|m| m.value),
        mrpe_excluded: rel.map_or(actual.len(), |m| m.excluded),
        aic: ic.aic,
        bic: ic.bic,
        ic_degenerate: ic.degenerate,
        selected_lambda: None,
        validation_mspe: None,
        nonzero: model.nonzero(),
        parameters,
        wall_seconds: 0.0,
    })
}

/// Refits with `lambda` on `[0, T2)` and scores the test block. With
/// `PenaltyKind::None` the refit is ordinary least squares (STAR).
pub fn evaluate_final(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    kind: PenaltyKind,
    lambda: f64,
    protocol: &Protocol,
) -> Result<(ReportRow, GstarModel)> {
    let split = protocol.split;
    check_protocol(series, &split, order.p)?;
    let (prepared, stats) = prepare(series, protocol.scaling, split.refit())?;
    let mut model = if kind == PenaltyKind::None {
        fit_star_ols(&prepared, weights, order, split.refit())?
    } else {
        fit_kind(
            &prepared,
            weights,
            order,
            kind,
            lambda,
            &protocol.solver,
            split.refit(),
        )?
    };
    model.stats = stats;
    let mut row = score_on_test(
        family_name(kind),
        Some(order.eta),
        &model,
        &prepared,
        &split,
        model.parameter_count(),
    )?;
    if kind != PenaltyKind::None {
        row.selected_lambda = Some(lambda);
    }
    Ok((row, model))
}

/// VAR(p) baseline refit on `[0, T2)` and scored on the test block.
pub fn evaluate_var(
    series: &SpatioTemporalSeries,
    p: usize,
    protocol: &Protocol,
) -> Result<(ReportRow, VarModel)> {
    let split = protocol.split;
    check_protocol(series, &split, p)?;
    let (prepared, _) = prepare(series, protocol.scaling, split.refit())?;
    let model = fit_var_ols(&prepared, p, split.refit())?;
    let row = score_on_test(
        "VAR",
        None,
        &model,
        &prepared,
        &split,
        model.parameter_count(),
    )?;
    Ok((row, model))
}

/// Tunes λ by [`rolling_cv`] (penalized kinds only) and evaluates the
/// selected model with [`evaluate_final`].
pub fn tune_and_evaluate(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    kind: PenaltyKind,
    protocol: &Protocol,
) -> Result<(ReportRow, GstarModel, Option<CvResult>)> {
    if kind == PenaltyKind::None {
        let (row, model) = evaluate_final(series, weights, order, kind, 0.0, protocol)?;
        return Ok((row, model, None));
    }
    let (prepared, _) = prepare(series, protocol.scaling, protocol.split.train())?;
    let grid = protocol
        .grid
        .resolve(&prepared, weights, order, protocol.split.train())?;
    let cv = rolling_cv(series, weights, order, kind, &grid, protocol)?;
    let (mut row, model) =
        evaluate_final(series, weights, order, kind, cv.selected_lambda, protocol)?;
    row.validation_mspe = Some(cv.validation_mspe[cv.selected_index]);
    Ok((row, model, Some(cv)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub k: usize,
    pub t: usize,
    pub p: usize,
    pub split: SplitSpec,
    pub scaling: Scaling,
    pub rows: Vec<ReportRow>,
}

/// One row of a comparison plus everything fitted to produce it.
#[derive(Debug, Clone)]
pub struct ComparisonEntry {
    pub row: ReportRow,
    pub model: FittedModel,
    pub cv: Option<CvResult>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: EvaluationReport,
    pub entries: Vec<ComparisonEntry>,
}

/// One VAR row (if requested) followed by every `(η, kind)` pair, η in the
/// given order and kinds in the given order.
pub fn compare_models(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    p: usize,
    etas: &[usize],
    kinds: &[PenaltyKind],
    include_var: bool,
    protocol: &Protocol,
) -> Result<Comparison> {
    if etas.is_empty() {
        return Err(Error::InvalidConfig("eta list is empty".into()));
    }
    let mut entries = Vec::new();
    if include_var {
        let start = Instant::now();
        let (mut row, model) = evaluate_var(series, p, protocol)?;
        row.wall_seconds = start.elapsed().as_secs_f64();
        entries.push(ComparisonEntry {
            row,
            model: FittedModel::Var(model),
            cv: None,
        });
    }
    for &eta in etas {
        let order = ModelOrder::new(p, eta)?;
        for &kind in kinds {
            let start = Instant::now();
            let (mut row, model, cv) = tune_and_evaluate(series, weights, order, kind, protocol)?;
            row.wall_seconds = start.elapsed().as_secs_f64();
            entries.push(ComparisonEntry {
                row,
                model: FittedModel::Gstar(model),
                cv,
            });
        }
    }
    Ok(Comparison {
        report: EvaluationReport {
            k: series.k(),
            t: series.len(),
            p,
            split: protocol.split,
            scaling: protocol.scaling,
            rows: entries.iter().map(|e| e.row.clone()).collect(),
        },
        entries,
    })
}

fn opt4(x: Option<f64>) -> String {
    x.map_or_else(|| "-inf".to_string(), |v| format!("{v:.4}"))
}

impl EvaluationReport {
    /// Aligned text table, columns `Model η MSPE MRPE AIC BIC λ nonzero`.
    pub fn to_text(&self) -> String {
        let header = [
            "Model", "eta", "MSPE", "MRPE", "AIC", "BIC", "lambda", "nonzero",
        ];
        let mut cells: Vec<[String; 8]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.model.clone(),
                r.eta.map_or_else(|| "-".into(), |e| e.to_string()),
                format!("{:.4}", r.mspe),
                r.mrpe.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
                opt4(r.aic),
                opt4(r.bic),
                r.selected_lambda
                    .map_or_else(|| "-".into(), |v| format!("{v:.4e}")),
                format!("{}/{}", r.nonzero, r.parameters),
            ]);
        }
        let widths: Vec<usize> = (0..8)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "k={} T={} p={} T1={} T2={} scaling={:?}\n",
            self.k, self.t, self.p, self.split.t1, self.split.t2, self.scaling
        );
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Per-(location, lag, level) coefficient table as CSV, 17 significant
/// digits.
pub fn coefficient_csv(model: &GstarModel, name: &str) -> String {
    let mut out = String::from("model,eta,location,lag,level,coefficient,magnitude\n");
    for (i, c) in model.coefficients.iter().enumerate() {
        for q in 0..model.order.n_coef() {
            let (j, l) = model.order.lag_level(q);
            let v = c.values()[q];
            let _ = writeln!(
                out,
                "{name},{},{},{j},{l},{},{}",
                model.order.eta,
                model.location_ids()[i],
                crate::fmt_f64(v),
                crate::fmt_f64(v.abs())
            );
        }
    }
    out
}
