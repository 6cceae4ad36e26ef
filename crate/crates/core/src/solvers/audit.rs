use crate::envelope::segment_point;
use crate::error::{check_len, Result};
use crate::grid::{Network, Snapshot};
use crate::oracle::{FeasibilityOracle, GridOracle};

/// True when feasibility along `x0 -> x1` is a feasible prefix followed by
/// an infeasible suffix, sampled at `steps + 1` evenly spaced points.
pub fn check_monotone_path(net: &Network, snap: &Snapshot, x0: &[f64], x1: &[f64], steps: usize) -> Result<bool> {
    snap.check_network(net)?;
    check_monotone_path_with(&GridOracle::new(net, snap), x0, x1, steps)
}

pub fn check_monotone_path_with<O: FeasibilityOracle + ?Sized>(
    oracle: &O,
    x0: &[f64],
    x1: &[f64],
    steps: usize,
) -> Result<bool> {
    check_len("segment end", x1.len(), x0.len())?;
    let steps = steps.max(2);
    let mut left_feasible = false;
    for k in 0..=steps {
        let lambda = k as f64 / steps as f64;
        let feasible = oracle.is_feasible(&segment_point(x0, x1, lambda))?;
        if feasible && left_feasible {
            return Ok(false);
        }
        left_feasible |= !feasible;
    }
    Ok(true)
}
