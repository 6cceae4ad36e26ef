//! Feasibility oracles shared by every solver.
//!
//! The grid oracle runs the power flow; the analytic ones describe
//! downward-closed sets directly and are used for small worked examples and
//! verification.

use crate::envelope::{check_envelope, FeasibilityReport};
use crate::error::Result;
use crate::grid::{Network, Snapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub feasible: bool,
    /// Power-flow detail, when the oracle has any.
    pub report: Option<FeasibilityReport>,
}

impl Verdict {
    pub fn plain(feasible: bool) -> Self {
        Verdict {
            feasible,
            report: None,
        }
    }
}

pub trait FeasibilityOracle {
    fn assess(&self, x: &[f64]) -> Result<Verdict>;

    fn is_feasible(&self, x: &[f64]) -> Result<bool> {
        Ok(self.assess(x)?.feasible)
    }
}

impl<O: FeasibilityOracle + ?Sized> FeasibilityOracle for &O {
    fn assess(&self, x: &[f64]) -> Result<Verdict> {
        (**self).assess(x)
    }
}

/// Grid limits of a network at one snapshot.
#[derive(Debug, Clone, Copy)]
pub struct GridOracle<'a> {
    pub net: &'a Network,
    pub snap: &'a Snapshot,
}

impl<'a> GridOracle<'a> {
    pub fn new(net: &'a Network, snap: &'a Snapshot) -> Self {
        GridOracle { net, snap }
    }
}

impl FeasibilityOracle for GridOracle<'_> {
    fn assess(&self, x: &[f64]) -> Result<Verdict> {
        let report = check_envelope(self.net, self.snap, x)?;
        Ok(Verdict {
            feasible: report.feasible,
            report: Some(report),
        })
    }
}

/// Intersection of half-spaces `a . x <= b`.
///
/// With non-negative coefficients the set is downward closed, as every
/// physical feasible set here is.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceOracle {
    rows: Vec<(Vec<f64>, f64)>,
}

impl HalfspaceOracle {
    pub fn new(rows: Vec<(Vec<f64>, f64)>) -> Self {
        HalfspaceOracle { rows }
    }

    /// Region below the concave polyline through `vertices` in the
    /// (x1, x2) plane, vertices ordered by increasing x1.
    pub fn below_polyline(vertices: &[(f64, f64)]) -> Self {
        let rows = vertices
            .windows(2)
            .map(|w| {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                let slope = (y1 - y0) / (x1 - x0);
                // y <= y0 + slope (x - x0)  <=>  -slope x + y <= y0 - slope x0
                (vec![-slope, 1.0], y0 - slope * x0)
            })
            .collect();
        HalfspaceOracle { rows }
    }

    pub fn rows(&self) -> &[(Vec<f64>, f64)] {
        &self.rows
    }
}

impl FeasibilityOracle for HalfspaceOracle {
    fn assess(&self, x: &[f64]) -> Result<Verdict> {
        let inside = self
            .rows
            .iter()
            .all(|(a, b)| a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() <= *b + 1e-12);
        Ok(Verdict::plain(inside))
    }
}

/// Wraps a predicate.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&[f64]) -> bool> FeasibilityOracle for FnOracle<F> {
    fn assess(&self, x: &[f64]) -> Result<Verdict> {
        Ok(Verdict::plain((self.0)(x)))
    }
}
