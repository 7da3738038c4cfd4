//! Synthetic GSTAR data: stationarity checks, random sparse models and
//! forward simulation with the portable Gaussian source.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{gstar_to_var, GstarModel};
use crate::rng::PortableRng;
use crate::series::{ModelOrder, SpatioTemporalSeries};
use crate::weights::{build_weights, AdjacencyGraph};

const GELFAND_POWER: usize = 256;
const GELFAND_SEEDS: u64 = 8;
const STABILITY_MARGIN: f64 = 1e-3;
const BISECTION_STEPS: usize = 60;
const TARGET_BAND: (f64, f64) = (0.5, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub stable: bool,
    pub spectral_radius: f64,
}

/// Spectral radius estimate `max_v ‖Mᵐ v‖^(1/m)` with `m = 256` over eight
/// fixed pseudo-random unit start vectors.
pub fn spectral_radius_estimate(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut best = 0.0f64;
    for seed in 0..GELFAND_SEEDS {
        let mut rng = PortableRng::new(0x6E1F_A4D0 + seed);
        let mut v = DVector::from_fn(n, |_, _| rng.normal());
        v /= v.norm();
        let mut log_norm = 0.0;
        let mut vanished = false;
        for _ in 0..GELFAND_POWER {
            v = m * v;
            let norm = v.norm();
            if norm == 0.0 {
                vanished = true;
                break;
            }
            log_norm += norm.ln();
            v /= norm;
        }
        if !vanished {
            best = best.max((log_norm / GELFAND_POWER as f64).exp());
        }
    }
    best
}

/// Stability of the VAR expansion's companion matrix.
pub fn check_stationarity(model: &GstarModel) -> Stationarity {
    let radius = spectral_radius_estimate(&gstar_to_var(model).companion());
    Stationarity {
        stable: radius < 1.0 - STABILITY_MARGIN,
        spectral_radius: radius,
    }
}

/// Stationary covariance `Γ(0)` of `Y(t) = Σ_j A_j Y(t-j) + ε`, `Cov ε = σ²I`,
/// for the model's VAR expansion. Returns the k x k block of the companion
/// solution. The model must be stable.
pub fn stationary_covariance(model: &GstarModel, sigma: f64) -> DMatrix<f64> {
    let var = gstar_to_var(model);
    let (k, p) = (var.k(), var.p());
    let m = var.companion();
    let mut q = DMatrix::zeros(k * p, k * p);
    for i in 0..k {
        q[(i, i)] = sigma * sigma;
    }
    // Doubling: Σ = Σ_{n≥0} Mⁿ Q Mⁿᵀ.
    let mut sigma_acc = q;
    let mut power = m;
    for _ in 0..64 {
        let next = &sigma_acc + &power * &sigma_acc * power.transpose();
        let delta = (&next - &sigma_acc).amax();
        sigma_acc = next;
        power = &power * &power;
        if delta <= 1e-15 * sigma_acc.amax() {
            break;
        }
    }
    sigma_acc.view((0, 0), (k, k)).into_owned()
}

/// Mean over locations of `(Var Y_i − σ²) / σ²` at stationarity.
pub fn signal_to_noise(model: &GstarModel) -> f64 {
    let gamma = stationary_covariance(model, 1.0);
    let k = gamma.nrows();
    (0..k).map(|i| gamma[(i, i)] - 1.0).sum::<f64>() / k as f64
}

/// Rescales all coefficients by a common factor so that
/// [`signal_to_noise`] equals `target` (within relative 1e-6), keeping the
/// model stable. The ratio grows monotonically with the factor.
pub fn scale_to_snr(model: &GstarModel, target: f64) -> Result<GstarModel> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidConfig(
            "target signal-to-noise must be positive".into(),
        ));
    }
    if model.nonzero() == 0 {
        return Err(Error::InvalidConfig(
            "the zero model has no signal to scale".into(),
        ));
    }
    let snr_at = |c: f64| {
        let m = model.scaled(c);
        check_stationarity(&m).stable.then(|| signal_to_noise(&m))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut steps = 0;
    // grow until the target is bracketed or stability is lost
    while let Some(s) = snr_at(hi) {
        if s >= target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps >= BISECTION_STEPS {
            return Err(Error::FailedToStabilize(steps));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match snr_at(mid) {
            Some(s) if (s - target).abs() <= 1e-6 * target => return Ok(model.scaled(mid)),
            Some(s) if s < target => lo = mid,
            _ => hi = mid,
        }
    }
    Err(Error::FailedToStabilize(200))
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub model: GstarModel,
    pub sigma: f64,
    pub t_len: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// `Y(-1), …, Y(-p)` before the first simulated step (most recent
    /// first). Zeros when absent.
    pub initial: Option<Vec<DVector<f64>>>,
}

impl SimulationSpec {
    pub fn new(model: GstarModel, sigma: f64, t_len: usize, seed: u64) -> Self {
        Self {
            model,
            sigma,
            t_len,
            burn_in: 200,
            seed,
            initial: None,
        }
    }
}

/// Iterates the GSTAR recursion for `burn_in + t_len` steps and returns the
/// last `t_len`. At each step, locations are visited in order and
///
/// ```text
/// Y_i(t) = Σ_{j=1..p} Σ_{l=0..η-1} φ_i^(j,l) · (Σ_m W^(l)[i,m] · Y_m(t-j)) + σ·ε_i(t)
/// ```
///
/// is accumulated in exactly that loop order, with `ε_i(t)` the next draw of
/// [`PortableRng::normal`] seeded by `spec.seed`.
pub fn simulate(spec: &SimulationSpec) -> Result<SpatioTemporalSeries> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidConfig(
            "sigma must be finite and nonnegative".into(),
        ));
    }
    if spec.t_len == 0 {
        return Err(Error::InvalidConfig(
            "simulation length must be positive".into(),
        ));
    }
    if spec.sigma > 0.0 {
        let st = check_stationarity(&spec.model);
        if !st.stable {
            return Err(Error::UnstableModel(st.spectral_radius));
        }
    }
    let model = &spec.model;
    let (k, p, eta) = (model.k(), model.order.p, model.order.eta);
    let total = spec.burn_in + spec.t_len;
    let mut values = DMatrix::zeros(k, p + total);
    if let Some(init) = &spec.initial {
        if init.len() != p || init.iter().any(|v| v.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: init.len(),
            });
        }
        for (j, v) in init.iter().enumerate() {
            values.set_column(p - 1 - j, v);
        }
    }
    let mut rng = PortableRng::new(spec.seed);
    for t in p..(p + total) {
        for i in 0..k {
            let phi = model.coefficients[i].values();
            let mut acc = 0.0;
            for j in 1..=p {
                for l in 0..eta {
                    let w = model.weights.level(l);
                    let mut s = 0.0;
                    for m in 0..k {
                        s += w[(i, m)] * values[(m, t - j)];
                    }
                    acc += phi[(j - 1) * eta + l] * s;
                }
            }
            values[(i, t)] = acc + spec.sigma * rng.normal();
        }
    }
    let kept = values.columns(p + spec.burn_in, spec.t_len).into_owned();
    SpatioTemporalSeries::from_matrix(model.location_ids().to_vec(), kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SupportPattern {
    /// Per-location flags over the lag-major positions.
    Explicit(Vec<Vec<bool>>),
    /// Each position active with this probability.
    Random { density: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPlan {
    pub support: SupportPattern,
    /// Coefficient magnitudes are drawn uniformly from this range before
    /// rescaling.
    pub magnitude: (f64, f64),
    /// For random supports: pack each location's active count into the
    /// leading positions, so supports are prefixes of the group chain.
    pub prefix: bool,
}

impl Default for SparsityPlan {
    fn default() -> Self {
        Self {
            support: SupportPattern::Random { density: 0.5 },
            magnitude: (0.2, 0.8),
            prefix: true,
        }
    }
}

/// Draws a sparse GSTAR model on `graph` whose companion spectral radius
/// estimate lies in [0.5, 0.9]. Coefficients on the support get uniform
/// magnitudes with random signs, then the whole model is rescaled by
/// bisection on a common factor.
pub fn random_sparse_model(
    graph: &AdjacencyGraph,
    order: ModelOrder,
    plan: &SparsityPlan,
    seed: u64,
) -> Result<GstarModel> {
    let k = graph.len();
    let n = order.n_coef();
    let weights = build_weights(graph, order.eta)?;
    let mut rng = PortableRng::new(seed);
    let (lo, hi) = plan.magnitude;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidConfig(
            "magnitude range must satisfy 0 <= lo <= hi".into(),
        ));
    }

    let masks: Vec<Vec<bool>> = match &plan.support {
        SupportPattern::Explicit(m) => {
            if m.len() != k || m.iter().any(|r| r.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: k * n,
                    got: m.iter().map(Vec::len).sum(),
                });
            }
            m.clone()
        }
        SupportPattern::Random { density } => (0..k)
            .map(|_| {
                let flags: Vec<bool> = (0..n).map(|_| rng.bernoulli(*density)).collect();
                if plan.prefix {
                    let count = flags.iter().filter(|&&f| f).count();
                    (0..n).map(|q| q < count).collect()
                } else {
                    flags
                }
            })
            .collect(),
    };
    let coefs: Vec<DVector<f64>> = masks
        .iter()
        .map(|mask| {
            DVector::from_fn(n, |q, _| {
                if mask[q] {
                    let mag = rng.uniform_in(lo, hi);
                    if rng.bernoulli(0.5) {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    0.0
                }
            })
        })
        .collect();
    let base = GstarModel::from_coefficients(&weights, order, coefs)?;
    if base.nonzero() == 0 {
        return Ok(base);
    }

    let radius_at = |c: f64| check_stationarity(&base.scaled(c)).spectral_radius;
    let in_band = |r: f64| (TARGET_BAND.0..=TARGET_BAND.1).contains(&r);
    if in_band(radius_at(1.0)) {
        return Ok(base);
    }
    let (mut lo_c, mut hi_c) = (0.0, 1.0);
    let mut steps = 0;
    while radius_at(hi_c) < TARGET_BAND.0 {
        lo_c = hi_c;
        hi_c *= 2.0;
        steps += 1;
        if steps >= BISECTION_STEPS {
            return Err(Error::FailedToStabilize(steps));
        }
    }
    while steps < BISECTION_STEPS {
        let mid = 0.5 * (lo_c + hi_c);
        let r = radius_at(mid);
        if in_band(r) {
            return Ok(base.scaled(mid));
        }
        if r > TARGET_BAND.1 {
            hi_c = mid;
        } else {
            lo_c = mid;
        }
        steps += 1;
    }
    Err(Error::FailedToStabilize(steps))
}
