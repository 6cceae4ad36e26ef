use log::{debug, warn};

use super::{check_tolerance, fallback_infeasible, SolveOptions, SolveResult};
use crate::error::Result;
use crate::grid::{Network, Snapshot};
use crate::oracle::{FeasibilityOracle, GridOracle, Verdict};
use crate::solvers::check_monotone_path_with;
use crate::welfare::{ks_ratios, ks_welfare, reference_points, AffineUtility, ReferencePoints, SchemeConfig};

/// Bisection never needs more steps for spans below 1e7 kW at 1e-5 kW accuracy.
const MAX_BISECTIONS: usize = 40;
const AUDIT_STEPS: usize = 100;

pub fn solve_ks(net: &Network, snap: &Snapshot, cfg: &SchemeConfig, tol_kw: f64) -> Result<SolveResult> {
    snap.check_network(net)?;
    solve_ks_with(&GridOracle::new(net, snap), snap, cfg, SolveOptions::with_tolerance(tol_kw))
}

pub fn solve_ks_with<O: FeasibilityOracle>(
    oracle: &O,
    snap: &Snapshot,
    cfg: &SchemeConfig,
    opts: SolveOptions,
) -> Result<SolveResult> {
    let refs = reference_points(cfg, snap)?;
    let utility = cfg.metric().resolve(snap);
    solve_ks_in(oracle, &utility, &refs, *cfg, opts)
}

/// Largest bisection gap in `lambda` that keeps every envelope within
/// `tol_kw` of the boundary.
pub fn ks_lambda_tolerance(refs: &ReferencePoints, tol_kw: f64) -> f64 {
    let span = refs
        .fallback_x
        .iter()
        .zip(&refs.utopia_x)
        .zip(&refs.included)
        .filter(|(_, inc)| **inc)
        .map(|((lo, hi), _)| hi - lo)
        .fold(0.0, f64::max);
    if span > 0.0 {
        tol_kw / span
    } else {
        1.0
    }
}

/// Envelope on the fallback-utopia segment, traced in utility space.
fn envelope_at(utility: &AffineUtility, refs: &ReferencePoints, lambda: f64) -> Vec<f64> {
    (0..refs.len())
        .map(|i| {
            if refs.included[i] {
                let lo = refs.fallback_u[i];
                utility.envelope(i, lo + lambda * (refs.utopia_u[i] - lo))
            } else {
                refs.fallback_x[i]
            }
        })
        .collect()
}

/// Equal-ratio solution: the largest common fraction `lambda` of every
/// agent's fallback-to-utopia gain that the oracle accepts.
///
/// `utility` and `refs` must use the same metric; both may be rescaled by
/// per-agent positive affine maps without moving the resulting envelope.
pub fn solve_ks_in<O: FeasibilityOracle>(
    oracle: &O,
    utility: &AffineUtility,
    refs: &ReferencePoints,
    scheme: SchemeConfig,
    opts: SolveOptions,
) -> Result<SolveResult> {
    check_tolerance(&opts)?;
    crate::error::check_len("utility map", utility.len(), refs.len())?;

    let fallback = envelope_at(utility, refs, 0.0);
    let start = oracle.assess(&fallback)?;
    if !start.feasible {
        return Err(fallback_infeasible(&start));
    }

    let utopia = envelope_at(utility, refs, 1.0);
    if log::log_enabled!(log::Level::Debug)
        && !check_monotone_path_with(oracle, &fallback, &utopia, AUDIT_STEPS)?
    {
        warn!("feasibility is not monotone along the fallback-utopia segment of {scheme}");
    }

    let top = oracle.assess(&utopia)?;
    let mut iterations = 1;
    let (lambda, verdict): (f64, Verdict) = if top.feasible {
        (1.0, top)
    } else {
        let tol = ks_lambda_tolerance(refs, opts.tol_kw);
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = start;
        while hi - lo > tol && iterations <= MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let v = oracle.assess(&envelope_at(utility, refs, mid))?;
            if v.feasible {
                lo = mid;
                best = v;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        debug!("{scheme}: lambda in [{lo}, {hi}] after {iterations} bisections");
        (lo, best)
    };

    let x = envelope_at(utility, refs, lambda);
    let utilities = utility.profile(&x)?;
    let ratios = ks_ratios(&utilities, refs)?;
    let welfare = if refs.any_included() {
        ks_welfare(&utilities, refs)?
    } else {
        lambda
    };
    Ok(SolveResult {
        scheme,
        x,
        lambda: Some(lambda),
        welfare,
        utilities,
        ratios,
        feasible: verdict.feasible,
        report: verdict.report,
        iterations,
        converged: true,
    })
}
