//! STAR/GSTAR and VAR model fitting, one-step prediction and the
//! GSTAR-to-VAR expansion.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_norm_lstsq, min_norm_lstsq_multi};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::series::{
    build_design, check_range, regressors, ModelOrder, SpatioTemporalSeries, StandardizationStats,
};
use crate::solver::{fista, FitDiagnostics, SolverConfig};
use crate::weights::{build_weights_over, AdjacencyGraph, NeighborhoodWeights};

/// Entries with magnitude at or below this count as zero in sparsity counts.
pub const NONZERO_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    values: DVector<f64>,
    order: ModelOrder,
}

impl CoefficientVector {
    pub fn new(values: DVector<f64>, order: ModelOrder) -> Result<Self> {
        if values.len() != order.n_coef() {
            return Err(Error::DimensionMismatch {
                expected: order.n_coef(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite coefficient".into()));
        }
        Ok(Self { values, order })
    }

    pub fn zeros(order: ModelOrder) -> Self {
        Self {
            values: DVector::zeros(order.n_coef()),
            order,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn order(&self) -> ModelOrder {
        self.order
    }

    /// φ^(j,l), `j` 1-based lag, `l` 0-based level.
    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.values[self.order.position(j, l)]
    }

    pub fn nonzero(&self) -> usize {
        self.values
            .iter()
            .filter(|v| v.abs() > NONZERO_THRESHOLD)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GstarModel {
    pub order: ModelOrder,
    pub weights: NeighborhoodWeights,
    pub coefficients: Vec<CoefficientVector>,
    pub stats: Option<StandardizationStats>,
    pub penalty: PenaltySpec,
    pub diagnostics: Vec<Option<FitDiagnostics>>,
}

impl GstarModel {
    /// Assembles a model from per-location coefficients; `weights` may carry
    /// more levels than `order.eta`.
    pub fn from_coefficients(
        weights: &NeighborhoodWeights,
        order: ModelOrder,
        coefficients: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if weights.eta() < order.eta {
            return Err(Error::InvalidOrder(format!(
                "weights provide {} levels, model needs {}",
                weights.eta(),
                order.eta
            )));
        }
        if coefficients.len() != weights.k() {
            return Err(Error::DimensionMismatch {
                expected: weights.k(),
                got: coefficients.len(),
            });
        }
        let coefficients = coefficients
            .into_iter()
            .map(|c| CoefficientVector::new(c, order))
            .collect::<Result<Vec<_>>>()?;
        let k = coefficients.len();
        Ok(Self {
            order,
            weights: weights.truncated(order.eta),
            coefficients,
            stats: None,
            penalty: PenaltySpec::unpenalized(order),
            diagnostics: vec![None; k],
        })
    }

    pub fn zeros(weights: &NeighborhoodWeights, order: ModelOrder) -> Result<Self> {
        Self::from_coefficients(
            weights,
            order,
            vec![DVector::zeros(order.n_coef()); weights.k()],
        )
    }

    pub fn k(&self) -> usize {
        self.coefficients.len()
    }

    pub fn location_ids(&self) -> &[String] {
        self.weights.location_ids()
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients
            .iter()
            .map(CoefficientVector::nonzero)
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.k() * self.order.n_coef()
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coefficients {
            c.values *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub location_ids: Vec<String>,
    /// A_1 … A_p, each k x k.
    pub lags: Vec<DMatrix<f64>>,
}

impl VarModel {
    pub fn k(&self) -> usize {
        self.location_ids.len()
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn nonzero(&self) -> usize {
        self.lags
            .iter()
            .map(|a| a.iter().filter(|v| v.abs() > NONZERO_THRESHOLD).count())
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.k() * self.k() * self.p()
    }

    /// k·p x k·p companion matrix.
    pub fn companion(&self) -> DMatrix<f64> {
        let (k, p) = (self.k(), self.p());
        let mut m = DMatrix::zeros(k * p, k * p);
        for (j, a) in self.lags.iter().enumerate() {
            m.view_mut((0, j * k), (k, k)).copy_from(a);
        }
        for b in 1..p {
            m.view_mut((b * k, (b - 1) * k), (k, k))
                .copy_from(&DMatrix::identity(k, k));
        }
        m
    }
}

/// Models that forecast `Y(t)` from `Y(t-1), …, Y(t-p)`.
pub trait OneStepPredictor {
    fn k(&self) -> usize;

    fn max_lag(&self) -> usize;

    /// `history[j-1]` is `Y(t-j)`. Extra history beyond `max_lag` is ignored.
    fn predict_one_step(&self, history: &[DVector<f64>]) -> Result<DVector<f64>>;

    /// One-step prediction of `Y(t)` from the actual values of `series`
    /// before `t`.
    fn predict_at(&self, series: &SpatioTemporalSeries, t: usize) -> Result<DVector<f64>> {
        let p = self.max_lag();
        if t < p || t > series.len() {
            return Err(Error::InsufficientHistory {
                need: p,
                got: t.min(series.len()),
            });
        }
        let history: Vec<DVector<f64>> = (1..=p).map(|j| series.at(t - j)).collect();
        self.predict_one_step(&history)
    }
}

fn check_history(history: &[DVector<f64>], p: usize, k: usize) -> Result<()> {
    if history.len() < p {
        return Err(Error::InsufficientHistory {
            need: p,
            got: history.len(),
        });
    }
    if let Some(h) = history[..p].iter().find(|h| h.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: h.len(),
        });
    }
    Ok(())
}

impl OneStepPredictor for GstarModel {
    fn k(&self) -> usize {
        self.coefficients.len()
    }

    fn max_lag(&self) -> usize {
        self.order.p
    }

    fn predict_one_step(&self, history: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_history(history, self.order.p, self.k())?;
        Ok(DVector::from_fn(self.k(), |i, _| {
            regressors(&self.weights, self.order, i, history).dot(self.coefficients[i].values())
        }))
    }
}

impl OneStepPredictor for VarModel {
    fn k(&self) -> usize {
        self.location_ids.len()
    }

    fn max_lag(&self) -> usize {
        self.lags.len()
    }

    fn predict_one_step(&self, history: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_history(history, self.p(), self.k())?;
        let mut out = DVector::zeros(self.k());
        for (a, y) in self.lags.iter().zip(history) {
            out += a * y;
        }
        Ok(out)
    }
}

fn check_fit_inputs(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    fit_range: &Range<usize>,
) -> Result<()> {
    check_range(fit_range, series.len())?;
    if fit_range.len() <= order.p {
        return Err(Error::WindowTooShort {
            len: fit_range.len(),
            p: order.p,
        });
    }
    if weights.location_ids() != series.locations() {
        return Err(Error::InvalidSeries(
            "weight matrices and series disagree on location order".into(),
        ));
    }
    Ok(())
}

/// Per-location least squares. Rank-deficient designs get the minimum-norm
/// solution.
pub fn fit_star_ols(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    fit_range: Range<usize>,
) -> Result<GstarModel> {
    check_fit_inputs(series, weights, order, &fit_range)?;
    let coefs = (0..series.k())
        .map(|i| {
            let d = build_design(series, weights, order, i, fit_range.clone())?;
            Ok(min_norm_lstsq(&d.z, &d.y))
        })
        .collect::<Result<Vec<_>>>()?;
    GstarModel::from_coefficients(weights, order, coefs)
}

/// Per-location FISTA on the penalized objective, each started from zero.
pub fn fit_gstar_penalized(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    spec: &PenaltySpec,
    config: &SolverConfig,
    fit_range: Range<usize>,
) -> Result<GstarModel> {
    let order = spec.order;
    check_fit_inputs(series, weights, order, &fit_range)?;
    let mut coefs = Vec::with_capacity(series.k());
    let mut diags = Vec::with_capacity(series.k());
    for i in 0..series.k() {
        let d = build_design(series, weights, order, i, fit_range.clone())?;
        let (phi, diag) = fista(&d.z, &d.y, spec, config, &DVector::zeros(order.n_coef()))?;
        if !diag.converged {
            log::debug!(
                "location {} did not converge in {} iterations ({} λ={})",
                series.locations()[i],
                diag.iterations,
                spec.kind,
                spec.lambda
            );
        }
        coefs.push(phi);
        diags.push(Some(diag));
    }
    let mut model = GstarModel::from_coefficients(weights, order, coefs)?;
    model.penalty = spec.clone();
    model.diagnostics = diags;
    Ok(model)
}

/// `max_i ‖Z_iᵀ y_i‖∞`: the smallest λ at which the LASSO fit is all zero.
pub fn lambda_max(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    fit_range: Range<usize>,
) -> Result<f64> {
    check_fit_inputs(series, weights, order, &fit_range)?;
    let mut best = 0.0f64;
    for i in 0..series.k() {
        let d = build_design(series, weights, order, i, fit_range.clone())?;
        best = best.max((d.z.transpose() * &d.y).amax());
    }
    Ok(best)
}

/// Equation-by-equation least squares on all `k·p` lagged values, no
/// intercept. Minimum-norm when the design is rank-deficient.
pub fn fit_var_ols(
    series: &SpatioTemporalSeries,
    p: usize,
    fit_range: Range<usize>,
) -> Result<VarModel> {
    check_range(&fit_range, series.len())?;
    if p == 0 {
        return Err(Error::InvalidOrder("p must be at least 1".into()));
    }
    if fit_range.len() <= p {
        return Err(Error::WindowTooShort {
            len: fit_range.len(),
            p,
        });
    }
    let k = series.k();
    let rows = (fit_range.start + p)..fit_range.end;
    let n = rows.len();
    let mut x = DMatrix::zeros(n, k * p);
    let mut y = DMatrix::zeros(n, k);
    for (r, t) in rows.enumerate() {
        for i in 0..k {
            y[(r, i)] = series.value(i, t);
        }
        for j in 1..=p {
            for m in 0..k {
                x[(r, (j - 1) * k + m)] = series.value(m, t - j);
            }
        }
    }
    let b = min_norm_lstsq_multi(&x, &y);
    let lags = (0..p)
        .map(|j| DMatrix::from_fn(k, k, |i, m| b[(j * k + m, i)]))
        .collect();
    Ok(VarModel {
        location_ids: series.locations().to_vec(),
        lags,
    })
}

/// The unconstrained VAR(p) with the same one-step predictions:
/// row `i` of `A_j` is `Σ_l φ_i^(j,l) W_i^(l)`.
pub fn gstar_to_var(model: &GstarModel) -> VarModel {
    let k = model.k();
    let lags = (1..=model.order.p)
        .map(|j| {
            let mut a = DMatrix::zeros(k, k);
            for i in 0..k {
                for l in 0..model.order.eta {
                    let phi = model.coefficients[i].get(j, l);
                    if phi != 0.0 {
                        let w = model.weights.level(l);
                        for c in 0..k {
                            a[(i, c)] += phi * w[(i, c)];
                        }
                    }
                }
            }
            a
        })
        .collect();
    VarModel {
        location_ids: model.location_ids().to_vec(),
        lags,
    }
}

/// On-disk form of a fitted GSTAR model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstarModelFile {
    pub order: ModelOrder,
    pub location_ids: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub stats: Option<StandardizationStats>,
    pub penalty: PenaltySpec,
    pub adjacency_fingerprint: String,
    pub adjacency: AdjacencyGraph,
}

impl GstarModelFile {
    pub fn new(model: &GstarModel, graph: &AdjacencyGraph) -> Self {
        Self {
            order: model.order,
            location_ids: model.location_ids().to_vec(),
            coefficients: model
                .coefficients
                .iter()
                .map(|c| c.values().iter().copied().collect())
                .collect(),
            stats: model.stats.clone(),
            penalty: model.penalty.clone(),
            adjacency_fingerprint: graph.fingerprint(),
            adjacency: graph.clone(),
        }
    }

    /// Rebuilds the model. Fails if the embedded graph does not match its
    /// fingerprint, or differs from `expected_graph` when one is supplied.
    pub fn into_model(self, expected_graph: Option<&AdjacencyGraph>) -> Result<GstarModel> {
        if self.adjacency.fingerprint() != self.adjacency_fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        if let Some(g) = expected_graph {
            if g.fingerprint() != self.adjacency_fingerprint {
                return Err(Error::FingerprintMismatch);
            }
        }
        let weights = build_weights_over(&self.adjacency, &self.location_ids, self.order.eta)?;
        let coefs = self
            .coefficients
            .into_iter()
            .map(DVector::from_vec)
            .collect();
        let mut model = GstarModel::from_coefficients(&weights, self.order, coefs)?;
        model.stats = self.stats;
        model.penalty = self.penalty;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Display name used in reports: STAR for the unpenalized fit, otherwise the
/// upper-cased penalty kind.
pub fn family_name(kind: PenaltyKind) -> &'static str {
    match kind {
        PenaltyKind::None => "STAR",
        PenaltyKind::Lasso => "LASSO",
        PenaltyKind::Hglasso => "HGLASSO",
        PenaltyKind::Dhglasso => "DHGLASSO",
    }
}
