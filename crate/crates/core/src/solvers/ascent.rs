//! Nash and utilitarian-egalitarian solvers.
//!
//! The search runs over the efficient frontier of the feasible set. A
//! direction `d >= 0` from the fallback is retracted onto the frontier by
//! bisection along the clipped ray `lo + clamp(t d, 0, span)`; downward
//! closure makes feasibility monotone in `t`. Projected gradient ascent with
//! Armijo backtracking moves `y = lo + d`, and a compass search polishes the
//! result so that kinks of the frontier are handled.

use log::debug;

use super::{check_tolerance, fallback_infeasible, SolveOptions, SolveResult};
use crate::error::Result;
use crate::grid::{Network, Snapshot};
use crate::oracle::{FeasibilityOracle, GridOracle};
use crate::welfare::{cfc_welfare, ks_ratios, nash_welfare, reference_points, SchemeConfig, UtilityMetric};

const NASH_EPSILON: f64 = 1e-9;
const DIFF_STEP: f64 = 1e-3;
const RETRACT_PRECISION: f64 = 1e-9;
const MAX_RETRACT_BISECTIONS: usize = 60;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const MAX_ASCENT_ITERATIONS: usize = 300;
const MIN_STEP: f64 = 1e-7;
const POLISH_START: f64 = 0.05;
const MAX_POLISH_EVALUATIONS: usize = 20_000;

pub fn solve_nash(net: &Network, snap: &Snapshot, cfg: &SchemeConfig, tol_kw: f64) -> Result<SolveResult> {
    snap.check_network(net)?;
    solve_nash_with(&GridOracle::new(net, snap), snap, cfg, SolveOptions::with_tolerance(tol_kw))
}

/// Maximizes the Nash product of gains over the scheme's fallback.
///
/// `cfg` supplies the reference points and metric; any scheme works, the
/// export-based `NashExport` is the usual choice.
pub fn solve_nash_with<O: FeasibilityOracle>(
    oracle: &O,
    snap: &Snapshot,
    cfg: &SchemeConfig,
    opts: SolveOptions,
) -> Result<SolveResult> {
    check_tolerance(&opts)?;
    let refs = reference_points(cfg, snap)?;
    let utility = cfg.metric().resolve(snap);
    let included = refs.included.clone();
    let fallback_u = refs.fallback_u.clone();
    let objective = |x: &[f64]| {
        x.iter()
            .enumerate()
            .filter(|(i, _)| included[*i])
            .map(|(i, &xi)| (utility.utility(i, xi) - fallback_u[i] + NASH_EPSILON).ln())
            .sum::<f64>()
    };
    let outcome = maximize(oracle, &refs.fallback_x, &refs.utopia_x, &refs.included, &objective)?;

    let utilities = utility.profile(&outcome.x)?;
    let welfare = if refs.any_included() {
        nash_welfare(&utilities, &refs)?
    } else {
        1.0
    };
    let ratios = ks_ratios(&utilities, &refs)?;
    let verdict = oracle.assess(&outcome.x)?;
    Ok(SolveResult {
        scheme: *cfg,
        x: outcome.x,
        lambda: None,
        welfare,
        utilities,
        ratios,
        feasible: verdict.feasible,
        report: verdict.report,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

pub fn solve_utilitarian(net: &Network, snap: &Snapshot, gamma: f64, tol_kw: f64) -> Result<SolveResult> {
    snap.check_network(net)?;
    solve_utilitarian_with(&GridOracle::new(net, snap), snap, gamma, SolveOptions::with_tolerance(tol_kw))
}

/// Maximizes `cfc_welfare(x, gamma)` of the generation over the box `[0, p̄]`.
pub fn solve_utilitarian_with<O: FeasibilityOracle>(
    oracle: &O,
    snap: &Snapshot,
    gamma: f64,
    opts: SolveOptions,
) -> Result<SolveResult> {
    check_tolerance(&opts)?;
    let cfg = SchemeConfig::UtilitarianMix { gamma };
    let refs = reference_points(&cfg, snap)?;
    let utility = UtilityMetric::Generation.resolve(snap);
    let objective = |x: &[f64]| match utility.profile(x) {
        Ok(u) => cfc_welfare(&u, gamma),
        Err(_) => f64::NAN,
    };
    let outcome = maximize(oracle, &refs.fallback_x, &refs.utopia_x, &refs.included, &objective)?;

    let utilities = utility.profile(&outcome.x)?;
    let welfare = cfc_welfare(&utilities, gamma);
    let ratios = ks_ratios(&utilities, &refs)?;
    let verdict = oracle.assess(&outcome.x)?;
    Ok(SolveResult {
        scheme: cfg,
        x: outcome.x,
        lambda: None,
        welfare,
        utilities,
        ratios,
        feasible: verdict.feasible,
        report: verdict.report,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

struct Outcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

struct Frontier<'a, O> {
    oracle: &'a O,
    lo: &'a [f64],
    span: Vec<f64>,
    free: Vec<usize>,
    objective: &'a dyn Fn(&[f64]) -> f64,
    evaluations: usize,
}

impl<O: FeasibilityOracle> Frontier<'_, O> {
    fn point(&self, d: &[f64], t: f64) -> Vec<f64> {
        let mut x = self.lo.to_vec();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] += (t * d[k]).clamp(0.0, self.span[i]);
        }
        x
    }

    /// Frontier point along direction `y - lo`, with its objective value.
    fn eval(&mut self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.evaluations += 1;
        let d: Vec<f64> = self.free.iter().zip(y).map(|(&i, yk)| (yk - self.lo[i]).max(0.0)).collect();
        let dmax = d.iter().cloned().fold(0.0, f64::max);
        if dmax <= 0.0 {
            let x = self.lo.to_vec();
            let f = (self.objective)(&x);
            return Ok((x, f));
        }
        let t_top = self
            .free
            .iter()
            .zip(&d)
            .filter(|(_, dk)| **dk > 0.0)
            .map(|(&i, dk)| self.span[i] / dk)
            .fold(0.0, f64::max);
        let top = self.point(&d, t_top);
        if self.oracle.is_feasible(&top)? {
            let f = (self.objective)(&top);
            return Ok((top, f));
        }
        let (mut a, mut b) = (0.0, t_top);
        for _ in 0..MAX_RETRACT_BISECTIONS {
            if (b - a) * dmax <= RETRACT_PRECISION {
                break;
            }
            let mid = 0.5 * (a + b);
            if self.oracle.is_feasible(&self.point(&d, mid))? {
                a = mid;
            } else {
                b = mid;
            }
        }
        let x = self.point(&d, a);
        let f = (self.objective)(&x);
        Ok((x, f))
    }

    /// Rescales `y - lo` so its largest span fraction is one.
    fn gauge(&self, y: &mut [f64]) {
        let s = self
            .free
            .iter()
            .zip(y.iter())
            .map(|(&i, yk)| (yk - self.lo[i]) / self.span[i])
            .fold(0.0, f64::max);
        if s > 0.0 {
            for (k, &i) in self.free.iter().enumerate() {
                y[k] = self.lo[i] + (y[k] - self.lo[i]).max(0.0) / s;
            }
        }
    }

    fn project(&self, y: &mut [f64]) {
        for (k, &i) in self.free.iter().enumerate() {
            y[k] = y[k].max(self.lo[i]);
        }
    }

    fn gradient(&mut self, y: &[f64], f: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; y.len()];
        let mut probe = y.to_vec();
        for k in 0..y.len() {
            let i = self.free[k];
            probe[k] = y[k] + DIFF_STEP;
            let (_, up) = self.eval(&probe)?;
            if y[k] - DIFF_STEP >= self.lo[i] {
                probe[k] = y[k] - DIFF_STEP;
                let (_, down) = self.eval(&probe)?;
                g[k] = (up - down) / (2.0 * DIFF_STEP);
            } else {
                g[k] = (up - f) / DIFF_STEP;
            }
            probe[k] = y[k];
        }
        Ok(g)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate.is_finite() && candidate > current + 1e-12 * (1.0 + current.abs())
}

fn maximize<O: FeasibilityOracle>(
    oracle: &O,
    lo: &[f64],
    hi: &[f64],
    included: &[bool],
    objective: &dyn Fn(&[f64]) -> f64,
) -> Result<Outcome> {
    let start = oracle.assess(lo)?;
    if !start.feasible {
        return Err(fallback_infeasible(&start));
    }
    let span: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(0.0)).collect();
    let free: Vec<usize> = (0..lo.len()).filter(|&i| included[i] && span[i] > 0.0).collect();
    if free.is_empty() {
        return Ok(Outcome {
            x: lo.to_vec(),
            iterations: 0,
            converged: true,
        });
    }
    let max_span = free.iter().map(|&i| span[i]).fold(0.0, f64::max);
    let mut fr = Frontier {
        oracle,
        lo,
        span,
        free,
        objective,
        evaluations: 0,
    };

    // start on the equal-ratio ray
    let mut y: Vec<f64> = fr.free.iter().map(|&i| hi[i]).collect();
    let (mut x, mut f) = fr.eval(&y)?;
    let mut alpha: Option<f64> = None;
    let mut iterations = 0;

    while iterations < MAX_ASCENT_ITERATIONS {
        iterations += 1;
        let g = fr.gradient(&y, f)?;
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(gnorm > 0.0 && gnorm.is_finite()) {
            break;
        }
        let cap = max_span / gnorm;
        let mut a = alpha.unwrap_or(0.25 * cap).min(cap);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = y.iter().zip(&g).map(|(yk, gk)| yk + a * gk).collect();
            fr.project(&mut trial);
            let slope: f64 = trial.iter().zip(&y).zip(&g).map(|((t, y), g)| (t - y) * g).sum();
            let (tx, tf) = fr.eval(&trial)?;
            if improves(tf, f) && tf >= f + ARMIJO_C * slope {
                accepted = Some((trial, tx, tf));
                break;
            }
            a *= 0.5;
        }
        let Some((mut trial, tx, tf)) = accepted else {
            break;
        };
        let moved = max_abs_diff(&tx, &x);
        fr.gauge(&mut trial);
        y = trial;
        x = tx;
        f = tf;
        alpha = Some(2.0 * a);
        if moved < MIN_STEP {
            break;
        }
    }
    debug!("gradient phase: {iterations} iterations, objective {f}");

    let n = y.len();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = sign;
            directions.push(e);
        }
        for j in 0..n {
            if i != j {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e[j] = -1.0;
                directions.push(e);
            }
        }
    }
    let budget = fr.evaluations + MAX_POLISH_EVALUATIONS;
    let mut step = POLISH_START * max_span;
    let mut converged = true;
    while step > MIN_STEP {
        if fr.evaluations >= budget {
            converged = false;
            break;
        }
        let mut moved = false;
        for dir in &directions {
            let mut trial: Vec<f64> = y.iter().zip(dir).map(|(yk, dk)| yk + step * dk).collect();
            fr.project(&mut trial);
            let (tx, tf) = fr.eval(&trial)?;
            if improves(tf, f) {
                fr.gauge(&mut trial);
                y = trial;
                x = tx;
                f = tf;
                moved = true;
                iterations += 1;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    debug!("polish: objective {f}, {} evaluations", fr.evaluations);

    Ok(Outcome {
        x,
        iterations,
        converged,
    })
}
