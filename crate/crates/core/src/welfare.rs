//! Utility proxies, reference envelopes and social welfare functions.
//!
//! Every curtailment scheme is described by a [`SchemeConfig`]. The four
//! bargaining schemes differ only in the fallback and utopia envelopes they
//! build from a snapshot; the Nash and utilitarian schemes reuse the same
//! reference machinery for their search box.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Snapshot;

/// Gains below this (metric units) are rounding noise, not a loss.
const GAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    /// `u_i(x) = x_i`
    Generation,
    /// `u_i(x) = x_i - d_i`
    Export,
}

impl UtilityMetric {
    /// The metric as explicit per-agent affine maps for this snapshot.
    pub fn resolve(self, snap: &Snapshot) -> AffineUtility {
        let n = snap.len();
        let offset = match self {
            UtilityMetric::Generation => vec![0.0; n],
            UtilityMetric::Export => snap.demand().iter().map(|d| -d).collect(),
        };
        AffineUtility {
            scale: vec![1.0; n],
            offset,
        }
    }
}

/// Per-agent utility `u_i = scale_i * x_i + offset_i` with `scale_i > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineUtility {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineUtility {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    pub fn utility(&self, agent: usize, x: f64) -> f64 {
        self.scale[agent] * x + self.offset[agent]
    }

    pub fn envelope(&self, agent: usize, u: f64) -> f64 {
        (u - self.offset[agent]) / self.scale[agent]
    }

    pub fn profile(&self, x: &[f64]) -> Result<UtilityProfile> {
        check_len("envelope", x.len(), self.len())?;
        Ok(UtilityProfile::new(
            x.iter().enumerate().map(|(i, &xi)| self.utility(i, xi)).collect(),
        ))
    }

    pub fn envelopes(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, &ui)| self.envelope(i, ui)).collect()
    }

    /// Composes `u -> a_i u + b_i` after this map.
    pub fn transformed(&self, a: &[f64], b: &[f64]) -> Result<Self> {
        check_positive_scales(a)?;
        check_len("affine scale", a.len(), self.len())?;
        check_len("affine shift", b.len(), self.len())?;
        Ok(AffineUtility {
            scale: self.scale.iter().zip(a).map(|(s, a)| a * s).collect(),
            offset: self
                .offset
                .iter()
                .zip(a.iter().zip(b))
                .map(|(o, (a, b))| a * o + b)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtilityProfile {
    values: Vec<f64>,
}

impl UtilityProfile {
    pub fn new(values: Vec<f64>) -> Self {
        UtilityProfile { values }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for UtilityProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for UtilityProfile {
    fn from(values: Vec<f64>) -> Self {
        UtilityProfile::new(values)
    }
}

pub fn evaluate_metric(metric: UtilityMetric, snap: &Snapshot, x: &[f64]) -> Result<UtilityProfile> {
    metric.resolve(snap).profile(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeConfig {
    /// Equal fraction of available generation.
    OpfGeneration,
    /// Equal fraction of export capability; self-consumption is protected.
    OpfExport,
    /// Equal export volume up to a common entitlement `k` (kW).
    UniformDynamicExport { k: f64 },
    /// Equal absolute curtailment relative to a reference curtailment `c_ref` (kW).
    Egalitarian { c_ref: f64 },
    /// Nash product of export gains.
    NashExport,
    /// Mean utility plus `gamma` times the largest deviation above the mean.
    UtilitarianMix { gamma: f64 },
}

impl SchemeConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeConfig::OpfGeneration => "opf_generation",
            SchemeConfig::OpfExport => "opf_export",
            SchemeConfig::UniformDynamicExport { .. } => "uniform_dynamic_export",
            SchemeConfig::Egalitarian { .. } => "egalitarian",
            SchemeConfig::NashExport => "nash_export",
            SchemeConfig::UtilitarianMix { .. } => "utilitarian_mix",
        }
    }

    pub fn metric(&self) -> UtilityMetric {
        match self {
            SchemeConfig::OpfExport | SchemeConfig::NashExport => UtilityMetric::Export,
            _ => UtilityMetric::Generation,
        }
    }

    /// True for the four schemes solved by the equal-ratio bisection.
    pub fn is_bargaining(&self) -> bool {
        matches!(
            self,
            SchemeConfig::OpfGeneration
                | SchemeConfig::OpfExport
                | SchemeConfig::UniformDynamicExport { .. }
                | SchemeConfig::Egalitarian { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeConfig::UniformDynamicExport { k } if !(k > 0.0 && k.is_finite()) => Err(
                Error::InvalidScheme(format!("uniform_dynamic_export needs k > 0, got {k}")),
            ),
            SchemeConfig::Egalitarian { c_ref } if !(c_ref > 0.0 && c_ref.is_finite()) => Err(
                Error::InvalidScheme(format!("egalitarian needs c_ref > 0, got {c_ref}")),
            ),
            SchemeConfig::UtilitarianMix { gamma } if !(0.0..=1.0).contains(&gamma) => Err(
                Error::InvalidScheme(format!("utilitarian_mix needs gamma in [0, 1], got {gamma}")),
            ),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for SchemeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeConfig::UniformDynamicExport { k } => write!(f, "{}(k={k})", self.name()),
            SchemeConfig::Egalitarian { c_ref } => write!(f, "{}(c_ref={c_ref})", self.name()),
            SchemeConfig::UtilitarianMix { gamma } => write!(f, "{}(gamma={gamma})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Fallback and utopia, both as utilities and as envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoints {
    pub fallback_u: Vec<f64>,
    pub utopia_u: Vec<f64>,
    pub fallback_x: Vec<f64>,
    pub utopia_x: Vec<f64>,
    /// False for degenerate agents (`utopia_u <= fallback_u`). They are left
    /// out of the ratio and pinned to their fallback envelope.
    pub included: Vec<bool>,
}

impl ReferencePoints {
    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn degenerate(&self) -> impl Iterator<Item = usize> + '_ {
        self.included.iter().enumerate().filter(|(_, inc)| !**inc).map(|(i, _)| i)
    }

    pub fn any_included(&self) -> bool {
        self.included.iter().any(|&inc| inc)
    }

    /// Builds references from two envelopes under a utility map.
    pub fn from_envelopes(utility: &AffineUtility, fallback_x: Vec<f64>, utopia_x: Vec<f64>) -> Result<Self> {
        let fallback_u = utility.profile(&fallback_x)?.into_inner();
        let utopia_u = utility.profile(&utopia_x)?.into_inner();
        let included = fallback_u.iter().zip(&utopia_u).map(|(lo, hi)| hi > lo).collect();
        Ok(ReferencePoints {
            fallback_u,
            utopia_u,
            fallback_x,
            utopia_x,
            included,
        })
    }

    /// Applies `u -> a_i u + b_i` to both reference utilities.
    pub fn transformed(&self, a: &[f64], b: &[f64]) -> Result<Self> {
        Ok(ReferencePoints {
            fallback_u: apply_affine(&self.fallback_u, a, b)?.into_inner(),
            utopia_u: apply_affine(&self.utopia_u, a, b)?.into_inner(),
            ..self.clone()
        })
    }
}

/// Fallback and utopia for a scheme.
///
/// Envelopes are clamped to the box `[0, p̄]`: the uniform-export utopia is
/// capped at `p̄`, the egalitarian fallback is floored at zero, and the
/// export fallback `d` is capped at `p̄`.
pub fn reference_points(cfg: &SchemeConfig, snap: &Snapshot) -> Result<ReferencePoints> {
    cfg.validate()?;
    let p = snap.potential();
    let d = snap.demand();
    let load_capped: Vec<f64> = d.iter().zip(p).map(|(d, p)| d.min(*p)).collect();
    let (fallback_x, utopia_x) = match *cfg {
        SchemeConfig::OpfGeneration | SchemeConfig::UtilitarianMix { .. } => {
            (vec![0.0; p.len()], p.to_vec())
        }
        SchemeConfig::OpfExport | SchemeConfig::NashExport => (load_capped, p.to_vec()),
        SchemeConfig::UniformDynamicExport { k } => {
            let utopia = d.iter().zip(p).map(|(d, p)| (d + k).min(*p)).collect();
            (load_capped, utopia)
        }
        SchemeConfig::Egalitarian { c_ref } => {
            let fallback = p.iter().map(|p| (p - c_ref).max(0.0)).collect();
            (fallback, p.to_vec())
        }
    };
    ReferencePoints::from_envelopes(&cfg.metric().resolve(snap), fallback_x, utopia_x)
}

/// Normalized gain of every agent; `None` for degenerate agents.
pub fn ks_ratios(u: &[f64], refs: &ReferencePoints) -> Result<Vec<Option<f64>>> {
    check_len("utility profile", u.len(), refs.len())?;
    Ok(u.iter()
        .enumerate()
        .map(|(i, &ui)| {
            refs.included[i]
                .then(|| (ui - refs.fallback_u[i]) / (refs.utopia_u[i] - refs.fallback_u[i]))
        })
        .collect())
}

/// Smallest normalized gain over the included agents.
pub fn ks_welfare(u: &[f64], refs: &ReferencePoints) -> Result<f64> {
    ks_ratios(u, refs)?
        .into_iter()
        .flatten()
        .reduce(f64::min)
        .ok_or(Error::EmptyAgentSet)
}

/// Product of gains over the fallback, over the included agents.
pub fn nash_welfare(u: &[f64], refs: &ReferencePoints) -> Result<f64> {
    check_len("utility profile", u.len(), refs.len())?;
    if !refs.any_included() {
        return Err(Error::EmptyAgentSet);
    }
    let mut product = 1.0;
    for (i, &ui) in u.iter().enumerate().filter(|(i, _)| refs.included[*i]) {
        let gain = ui - refs.fallback_u[i];
        if gain < -GAIN_TOLERANCE {
            return Err(Error::NegativeGain { agent: i, gain });
        }
        product *= gain.max(0.0);
    }
    Ok(product)
}

/// `mean(u) + gamma * max_i (u_i - mean(u))`.
pub fn cfc_welfare(u: &[f64], gamma: f64) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let spread = u.iter().map(|ui| ui - mean).fold(f64::NEG_INFINITY, f64::max);
    mean + gamma * spread
}

/// Gini index normalized so that the two-agent case is `|u1 - u2| / (u1 + u2)`:
/// `sum_{i,j} |u_i - u_j| / (2 (N - 1) sum_k u_k)`.
pub fn gini(u: &[f64]) -> Result<f64> {
    let total: f64 = u.iter().sum();
    if u.iter().all(|&ui| ui == 0.0) {
        return Err(Error::AllZero);
    }
    if u.len() < 2 {
        return Ok(0.0);
    }
    let spread: f64 = u
        .iter()
        .map(|a| u.iter().map(|b| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(spread / (2.0 * (u.len() - 1) as f64 * total))
}

/// Jain fairness index `(sum u)^2 / (N sum u^2)`.
pub fn jain(u: &[f64]) -> Result<f64> {
    let squares: f64 = u.iter().map(|x| x * x).sum();
    if squares == 0.0 {
        return Err(Error::AllZero);
    }
    let total: f64 = u.iter().sum();
    Ok(total * total / (u.len() as f64 * squares))
}

fn check_positive_scales(a: &[f64]) -> Result<()> {
    match a.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        Some((agent, &scale)) => Err(Error::NonPositiveScale { agent, scale }),
        None => Ok(()),
    }
}

/// `u'_i = a_i u_i + b_i` with every `a_i > 0`.
pub fn apply_affine(u: &[f64], a: &[f64], b: &[f64]) -> Result<UtilityProfile> {
    check_positive_scales(a)?;
    check_len("affine scale", a.len(), u.len())?;
    check_len("affine shift", b.len(), u.len())?;
    Ok(UtilityProfile::new(
        u.iter().zip(a.iter().zip(b)).map(|(u, (a, b))| a * u + b).collect(),
    ))
}
