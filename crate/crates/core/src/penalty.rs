//! Sparsity penalties on a location's coefficient vector and their proximal
//! operators.
//!
//! The hierarchical penalties are sums of Euclidean norms over a chain of
//! nested suffix groups of the lag-major coefficient layout. For such a
//! tree-structured norm the proximal operator is the composition of group
//! soft-thresholds applied from the innermost (shortest suffix) group out to
//! the full vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::ModelOrder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    #[serde(alias = "star")]
    None,
    Lasso,
    Hglasso,
    Dhglasso,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 4] = [
        PenaltyKind::None,
        PenaltyKind::Lasso,
        PenaltyKind::Hglasso,
        PenaltyKind::Dhglasso,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Hglasso => "hglasso",
            PenaltyKind::Dhglasso => "dhglasso",
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(self, PenaltyKind::Hglasso | PenaltyKind::Dhglasso)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "star" => Ok(PenaltyKind::None),
            "lasso" => Ok(PenaltyKind::Lasso),
            "hglasso" => Ok(PenaltyKind::Hglasso),
            "dhglasso" => Ok(PenaltyKind::Dhglasso),
            other => Err(Error::InvalidPenalty(format!(
                "unknown penalty kind `{other}`"
            ))),
        }
    }
}

/// Nested coefficient groups, outermost first. Every group is a suffix of
/// the lag-major layout, so a group is fully described by its start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupChain {
    starts: Vec<usize>,
    len: usize,
}

impl GroupChain {
    pub fn for_kind(kind: PenaltyKind, order: ModelOrder) -> Option<Self> {
        let len = order.n_coef();
        let starts = match kind {
            PenaltyKind::Hglasso => (1..=order.p).map(|j| order.position(j, 0)).collect(),
            PenaltyKind::Dhglasso => (0..len).collect(),
            PenaltyKind::None | PenaltyKind::Lasso => return None,
        };
        Some(Self { starts, len })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Index range of group `g` (0 = outermost).
    pub fn group(&self, g: usize) -> std::ops::Range<usize> {
        self.starts[g]..self.len
    }

    pub fn groups(&self) -> impl DoubleEndedIterator<Item = std::ops::Range<usize>> + '_ {
        self.starts.iter().map(move |&s| s..self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub order: ModelOrder,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, order: ModelOrder) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Self {
            kind,
            lambda,
            order,
        })
    }

    pub fn unpenalized(order: ModelOrder) -> Self {
        Self {
            kind: PenaltyKind::None,
            lambda: 0.0,
            order,
        }
    }

    pub fn chain(&self) -> Option<GroupChain> {
        GroupChain::for_kind(self.kind, self.order)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let expected = self.order.n_coef();
        if n != expected {
            return Err(Error::DimensionMismatch { expected, got: n });
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ω(φ), without the λ factor.
pub fn penalty_value(phi: &DVector<f64>, spec: &PenaltySpec) -> Result<f64> {
    spec.check_len(phi.len())?;
    Ok(match spec.kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Lasso => phi.iter().map(|x| x.abs()).sum(),
        PenaltyKind::Hglasso | PenaltyKind::Dhglasso => {
            let chain = spec.chain().expect("hierarchical kinds have a chain");
            chain.groups().map(|g| norm(&phi.as_slice()[g])).sum()
        }
    })
}

pub fn soft_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

/// Shrinks the block `group` of `v` toward zero by `tau` in Euclidean norm;
/// entries outside the block are untouched.
pub fn group_soft_threshold(
    v: &DVector<f64>,
    group: std::ops::Range<usize>,
    tau: f64,
) -> DVector<f64> {
    let mut out = v.clone();
    shrink_block(out.as_mut_slice(), group, tau);
    out
}

fn shrink_block(v: &mut [f64], group: std::ops::Range<usize>, tau: f64) {
    let block = &mut v[group];
    let n = norm(block);
    let factor = if n > tau { 1.0 - tau / n } else { 0.0 };
    for x in block {
        *x *= factor;
    }
}

/// `argmin_u ½‖v − u‖² + scale·λ·Ω(u)`.
pub fn prox(v: &DVector<f64>, spec: &PenaltySpec, scale: f64) -> Result<DVector<f64>> {
    spec.check_len(v.len())?;
    let tau = scale * spec.lambda;
    if tau == 0.0 {
        return Ok(v.clone());
    }
    Ok(match spec.kind {
        PenaltyKind::None => v.clone(),
        PenaltyKind::Lasso => soft_threshold(v, tau),
        PenaltyKind::Hglasso | PenaltyKind::Dhglasso => {
            let chain = spec.chain().expect("hierarchical kinds have a chain");
            let mut out = v.clone();
            for g in chain.groups().rev() {
                shrink_block(out.as_mut_slice(), g, tau);
            }
            out
        }
    })
}

/// True when the nonzero entries (|x| > `threshold`) of `phi` occupy a
/// leading run `0..m` of the layout.
pub fn has_prefix_support(phi: &DVector<f64>, threshold: f64) -> bool {
    let m = phi.iter().take_while(|x| x.abs() > threshold).count();
    phi.iter().skip(m).all(|x| x.abs() <= threshold)
}
