use crate::error::{check_len, Error, Result};
use crate::grid::Snapshot;
use crate::oracle::FeasibilityOracle;

pub const MAX_BRUTE_FORCE_AGENTS: usize = 3;

/// Exhaustive argmax of `welfare` over the grid `k * step` inside `[0, p̄]`.
///
/// Points are visited in lexicographic order and only a strictly better
/// value replaces the incumbent, so ties go to the lexicographically
/// smallest envelope. NaN welfare values are skipped.
pub fn brute_force_argmax<F, O>(welfare: F, snap: &Snapshot, oracle: &O, step_kw: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    O: FeasibilityOracle + ?Sized,
{
    let n = snap.len();
    if n > MAX_BRUTE_FORCE_AGENTS {
        return Err(Error::TooManyAgents {
            got: n,
            max: MAX_BRUTE_FORCE_AGENTS,
        });
    }
    if !(step_kw > 0.0 && step_kw.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {step_kw}")));
    }
    let counts: Vec<usize> = snap
        .potential()
        .iter()
        .map(|p| (p / step_kw + 1e-9).floor() as usize + 1)
        .collect();
    check_len("grid", counts.len(), n)?;

    let mut index = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        for (xi, k) in x.iter_mut().zip(&index) {
            *xi = *k as f64 * step_kw;
        }
        if oracle.is_feasible(&x)? {
            let w = welfare(&x);
            if !w.is_nan() && best.as_ref().is_none_or(|(b, _)| w > *b) {
                best = Some((w, x.clone()));
            }
        }
        // odometer, last coordinate fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return best.map(|(_, x)| x).ok_or(Error::NoFeasiblePoint);
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < counts[pos] {
                break;
            }
            index[pos] = 0;
        }
    }
}
