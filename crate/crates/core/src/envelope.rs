//! Admissible operating envelopes: the box `0 <= x <= p̄` intersected with
//! the grid limits evaluated by the power flow.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::grid::{Network, Snapshot};
use crate::powerflow::{prosumer_injections, solve_pf, PowerFlowSolution};

/// Slack (kW) tolerated on the box bounds before an envelope counts as outside.
pub const BOX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxViolation {
    pub prosumer: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Set when the envelope left the box; no power flow was run then.
    pub box_violation: Option<BoxViolation>,
    /// min over buses of min(v_max - |V|, |V| - v_min), p.u.
    pub worst_voltage_margin: Option<f64>,
    /// min over limited lines of (limit - |I|), ampere.
    pub worst_current_margin: Option<f64>,
    /// Index of the bus that attains the worst voltage margin.
    pub binding_bus: Option<usize>,
    pub pf: Option<PowerFlowSolution>,
}

pub fn check_envelope(net: &Network, snap: &Snapshot, x: &[f64]) -> Result<FeasibilityReport> {
    snap.check_network(net)?;
    check_len("envelope", x.len(), net.prosumer_count())?;
    for (i, (&xi, &cap)) in x.iter().zip(snap.potential()).enumerate() {
        if !xi.is_finite() || xi < -BOX_TOLERANCE || xi > cap + BOX_TOLERANCE {
            return Ok(FeasibilityReport {
                feasible: false,
                box_violation: Some(BoxViolation {
                    prosumer: i,
                    value: xi,
                    lower: 0.0,
                    upper: cap,
                }),
                worst_voltage_margin: None,
                worst_current_margin: None,
                binding_bus: None,
                pf: None,
            });
        }
    }
    let clamped: Vec<f64> = x
        .iter()
        .zip(snap.potential())
        .map(|(xi, cap)| xi.clamp(0.0, *cap))
        .collect();
    let injections = prosumer_injections(net, snap, &clamped)?;
    let pf = solve_pf(net, &injections)?;

    let (binding_bus, worst_voltage_margin) = net
        .buses()
        .iter()
        .zip(&pf.magnitudes)
        .map(|(bus, v)| (bus.v_max - v).min(v - bus.v_min))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, m)| if m < acc.1 { (k, m) } else { acc });
    let worst_current_margin = net
        .lines()
        .iter()
        .zip(&pf.line_currents)
        .filter_map(|(line, i)| line.current_limit.map(|limit| limit - i))
        .reduce(f64::min);

    let feasible = pf.converged
        && worst_voltage_margin >= 0.0
        && worst_current_margin.is_none_or(|m| m >= 0.0);
    Ok(FeasibilityReport {
        feasible,
        box_violation: None,
        worst_voltage_margin: Some(worst_voltage_margin),
        worst_current_margin,
        binding_bus: Some(binding_bus),
        pf: Some(pf),
    })
}

/// Point `x0 + lambda (x1 - x0)` on the segment between two envelopes.
pub fn segment_point(x0: &[f64], x1: &[f64], lambda: f64) -> Vec<f64> {
    x0.iter().zip(x1).map(|(a, b)| a + lambda * (b - a)).collect()
}

pub fn feasible_on_segment(
    net: &Network,
    snap: &Snapshot,
    x0: &[f64],
    x1: &[f64],
    lambda: f64,
) -> Result<FeasibilityReport> {
    check_len("segment end", x1.len(), x0.len())?;
    // endpoints are evaluated exactly, without rounding through the blend
    let x = if lambda == 0.0 {
        x0.to_vec()
    } else if lambda == 1.0 {
        x1.to_vec()
    } else {
        segment_point(x0, x1, lambda)
    };
    check_envelope(net, snap, &x)
}
