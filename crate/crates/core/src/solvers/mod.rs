//! Optimal envelopes for every scheme.
//!
//! All solvers take a [`FeasibilityOracle`], so the power-flow feasible set
//! and small analytic sets go through the same code. The `*_with` variants
//! accept any oracle; the short names build a [`GridOracle`].

mod ascent;
mod audit;
mod brute;
mod ks;

use serde::{Deserialize, Serialize};

pub use ascent::{solve_nash, solve_nash_with, solve_utilitarian, solve_utilitarian_with};
pub use audit::{check_monotone_path, check_monotone_path_with};
pub use brute::{brute_force_argmax, MAX_BRUTE_FORCE_AGENTS};
pub use ks::{ks_lambda_tolerance, solve_ks, solve_ks_in, solve_ks_with};

use crate::envelope::FeasibilityReport;
use crate::error::Result;
use crate::grid::{Network, Snapshot};
use crate::oracle::{FeasibilityOracle, GridOracle};
use crate::welfare::{SchemeConfig, UtilityProfile};

/// Envelope accuracy in kW used when the caller gives none.
pub const DEFAULT_TOLERANCE_KW: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_kw: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_kw: DEFAULT_TOLERANCE_KW,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tol_kw: f64) -> Self {
        SolveOptions { tol_kw }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub scheme: SchemeConfig,
    /// Envelope per prosumer, kW.
    pub x: Vec<f64>,
    /// Common fraction of the fallback-to-utopia gain (bargaining schemes only).
    pub lambda: Option<f64>,
    pub welfare: f64,
    /// Utilities under the scheme's metric.
    pub utilities: UtilityProfile,
    /// Normalized gains; `None` for degenerate agents.
    pub ratios: Vec<Option<f64>>,
    pub feasible: bool,
    /// Power-flow detail at `x`, when the oracle provides it.
    pub report: Option<FeasibilityReport>,
    pub iterations: usize,
    /// False when an iterative solver stopped on its iteration budget.
    pub converged: bool,
}

impl SolveResult {
    /// Total envelope, kW.
    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// Solves any scheme against the grid.
pub fn solve(net: &Network, snap: &Snapshot, cfg: &SchemeConfig, opts: SolveOptions) -> Result<SolveResult> {
    snap.check_network(net)?;
    solve_with(&GridOracle::new(net, snap), snap, cfg, opts)
}

pub fn solve_with<O: FeasibilityOracle>(
    oracle: &O,
    snap: &Snapshot,
    cfg: &SchemeConfig,
    opts: SolveOptions,
) -> Result<SolveResult> {
    match *cfg {
        SchemeConfig::NashExport => solve_nash_with(oracle, snap, cfg, opts),
        SchemeConfig::UtilitarianMix { gamma } => solve_utilitarian_with(oracle, snap, gamma, opts),
        _ => solve_ks_with(oracle, snap, cfg, opts),
    }
}

fn fallback_infeasible(verdict: &crate::oracle::Verdict) -> crate::error::Error {
    let detail = match verdict.report.as_ref() {
        Some(r) => match (r.box_violation, r.worst_voltage_margin) {
            (Some(b), _) => format!("prosumer {} outside its box", b.prosumer + 1),
            (None, Some(m)) if m < 0.0 => format!("worst voltage margin {m:.3e} p.u."),
            (None, _) => match r.worst_current_margin {
                Some(c) if c < 0.0 => format!("worst current margin {c:.3} A"),
                _ => "power flow did not converge".to_string(),
            },
        },
        None => "oracle rejects the fallback envelope".to_string(),
    };
    crate::error::Error::FallbackInfeasible { detail }
}

fn check_tolerance(opts: &SolveOptions) -> Result<()> {
    if opts.tol_kw > 0.0 && opts.tol_kw.is_finite() {
        Ok(())
    } else {
        Err(crate::error::Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol_kw
        )))
    }
}
