//! Balanced AC power flow with zero reactive power at every load bus.
//!
//! Polar Newton-Raphson from a flat start. Dense matrices are fine here:
//! LV feeders have a handful of buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{Network, Snapshot};

/// Largest active/reactive mismatch (p.u.) accepted as converged.
pub const MISMATCH_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Bus voltage magnitudes in p.u., in network bus order.
    pub magnitudes: Vec<f64>,
    /// Bus voltage angles in radian.
    pub angles: Vec<f64>,
    /// Line current magnitudes in ampere, in network line order.
    pub line_currents: Vec<f64>,
    /// Active power drawn from the slack bus into the feeder, kW.
    pub slack_injection: f64,
    /// Active series losses, kW.
    pub losses: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest power mismatch over pq buses at the returned iterate, p.u.
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: usize) -> Complex64 {
        Complex64::from_polar(self.magnitudes[bus], self.angles[bus])
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_magnitude(&self) -> f64 {
        self.magnitudes.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-unit series admittance of every line, in network line order.
fn line_admittances(net: &Network) -> Vec<Complex64> {
    let z_base = net.base_impedance();
    net.lines()
        .iter()
        .map(|l| Complex64::new(1.0, 0.0) / Complex64::new(l.resistance / z_base, l.reactance / z_base))
        .collect()
}

/// Bus admittance matrix in p.u. No shunt elements are modeled.
pub fn build_admittance(net: &Network) -> DMatrix<Complex64> {
    let n = net.bus_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (&(f, t), ys) in net.line_ends().iter().zip(line_admittances(net)) {
        y[(f, f)] += ys;
        y[(t, t)] += ys;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    y
}

/// Net active injection per bus (kW) when every prosumer generates at its
/// envelope. Prosumers sharing a bus add up.
pub fn prosumer_injections(net: &Network, snap: &Snapshot, x: &[f64]) -> Result<Vec<f64>> {
    snap.check_network(net)?;
    check_len("envelope", x.len(), net.prosumer_count())?;
    let mut injection = vec![0.0; net.bus_count()];
    for (i, &bus) in net.prosumer_buses().iter().enumerate() {
        injection[bus] += x[i].min(snap.potential()[i]) - snap.demand()[i];
    }
    Ok(injection)
}

fn calc_power(y: &DMatrix<Complex64>, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = v.len();
    let current: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|k| y[(i, k)] * v[k]).sum())
        .collect();
    let power = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
    (power, current)
}

/// Solves the power flow for per-bus active injections in kW (the slack
/// entry is ignored). A run that exhausts its iterations returns the
/// iterate with the smallest mismatch and `converged = false`.
pub fn solve_pf(net: &Network, injections_kw: &[f64]) -> Result<PowerFlowSolution> {
    check_len("injections", injections_kw.len(), net.bus_count())?;
    let y = build_admittance(net);
    let n = net.bus_count();
    let slack = net.slack_index();
    let pq: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let m = pq.len();
    let scale = 1e3 / net.base_power();
    let p_spec: Vec<f64> = injections_kw.iter().map(|p| p * scale).collect();

    let mut v = vec![Complex64::new(net.slack_voltage(), 0.0); n];
    let mut best: Option<(f64, Vec<Complex64>, usize)> = None;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let (s, current) = calc_power(&y, &v);
        let mut mismatch = DVector::zeros(2 * m);
        for (r, &k) in pq.iter().enumerate() {
            mismatch[r] = s[k].re - p_spec[k];
            mismatch[m + r] = s[k].im;
        }
        let worst = mismatch.amax();
        let finite = worst.is_finite();
        if finite && best.as_ref().is_none_or(|(w, _, _)| worst < *w) {
            best = Some((worst, v.clone(), iterations));
        }
        if finite && worst <= MISMATCH_TOLERANCE {
            converged = true;
            break;
        }
        if !finite || iterations >= MAX_ITERATIONS {
            break;
        }

        let jac = jacobian(&y, &v, &current, &pq);
        let step = jac.lu().solve(&mismatch).ok_or(Error::SingularJacobian {
            iteration: iterations,
        })?;
        for (r, &k) in pq.iter().enumerate() {
            let angle = v[k].arg() - step[r];
            let magnitude = v[k].norm() - step[m + r];
            v[k] = Complex64::from_polar(magnitude, angle);
        }
        iterations += 1;
    }

    let (max_mismatch, v, _) = best.expect("flat start always evaluates");
    Ok(finish(net, &y, v, converged, iterations, max_mismatch))
}

/// Jacobian of the pq-bus power mismatches with respect to (angle, magnitude).
fn jacobian(
    y: &DMatrix<Complex64>,
    v: &[Complex64],
    current: &[Complex64],
    pq: &[usize],
) -> DMatrix<f64> {
    let m = pq.len();
    let j = Complex64::new(0.0, 1.0);
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pq.iter().enumerate() {
            let unit_k = v[k] / v[k].norm();
            let mut d_angle = -(y[(i, k)] * v[k]).conj();
            let mut d_mag = v[i] * (y[(i, k)] * unit_k).conj();
            if i == k {
                d_angle += current[i].conj();
                d_mag += current[i].conj() * unit_k;
            }
            let d_angle = j * v[i] * d_angle;
            jac[(r, c)] = d_angle.re;
            jac[(r, m + c)] = d_mag.re;
            jac[(m + r, c)] = d_angle.im;
            jac[(m + r, m + c)] = d_mag.im;
        }
    }
    jac
}

fn finish(
    net: &Network,
    y: &DMatrix<Complex64>,
    v: Vec<Complex64>,
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let to_kw = net.base_power() / 1e3;
    let i_base = net.base_current();
    let (s, _) = calc_power(y, &v);
    let mut line_currents = Vec::with_capacity(net.lines().len());
    let mut losses = 0.0;
    for (&(f, t), ys) in net.line_ends().iter().zip(line_admittances(net)) {
        let i_ft = (v[f] - v[t]) * ys;
        losses += (v[f] * i_ft.conj() - v[t] * i_ft.conj()).re;
        line_currents.push(i_ft.norm() * i_base);
    }
    PowerFlowSolution {
        magnitudes: v.iter().map(|z| z.norm()).collect(),
        angles: v.iter().map(|z| z.arg()).collect(),
        line_currents,
        slack_injection: s[net.slack_index()].re * to_kw,
        losses: losses * to_kw,
        converged,
        iterations,
        max_mismatch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::builtin_testbed;

    pub(crate) fn two_bus(r: f64, x: f64) -> Network {
        Network::from_toml_str(&format!(
            r#"
            [network]
            slack_voltage = 1.046
            [[bus]]
            id = 0
            kind = "slack"
            v_min = 0.95
            v_max = 1.05
            [[bus]]
            id = 1
            kind = "pq"
            v_min = 0.95
            v_max = 1.05
            [[line]]
            from_bus = 0
            to_bus = 1
            resistance = {r}
            reactance = {x}
            [[prosumer]]
            id = 1
            bus = 1
            label = "a"
            "#
        ))
        .unwrap()
    }

    #[test]
    fn single_line_admittance() {
        let net = two_bus(0.1, 0.1);
        let y = build_admittance(&net);
        let z_pu = Complex64::new(0.1, 0.1) / net.base_impedance();
        let expected = -Complex64::new(1.0, 0.0) / z_pu;
        assert!((y[(0, 1)] - expected).norm() < 1e-12);
        assert_eq!(y[(0, 1)], y[(1, 0)]);
        assert!((y[(0, 0)] + y[(0, 1)]).norm() < 1e-12);
    }

    #[test]
    fn doubled_impedance_halves_admittance() {
        let a = build_admittance(&two_bus(0.1, 0.1));
        let b = build_admittance(&two_bus(0.2, 0.2));
        assert!((a[(0, 1)] / b[(0, 1)] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn testbed_sparsity_and_row_sums() {
        let net = builtin_testbed();
        let y = build_admittance(&net);
        let n = net.bus_count();
        let mut connected = vec![vec![false; n]; n];
        for &(f, t) in net.line_ends() {
            connected[f][t] = true;
            connected[t][f] = true;
        }
        for i in 0..n {
            let row: Complex64 = (0..n).map(|k| y[(i, k)]).sum();
            assert!(row.norm() < 1e-9, "row {i} sums to {row}");
            for k in 0..n {
                assert_eq!(y[(i, k)], y[(k, i)]);
                if i != k {
                    assert_eq!(y[(i, k)].norm() == 0.0, !connected[i][k], "entry ({i},{k})");
                }
            }
        }
    }

    #[test]
    fn no_load_keeps_slack_voltage() {
        let net = builtin_testbed();
        let sol = solve_pf(&net, &vec![0.0; net.bus_count()]).unwrap();
        assert!(sol.converged);
        for v in &sol.magnitudes {
            assert!((v - 1.046).abs() < 1e-6);
        }
        assert!(sol.losses.abs() < 1e-9);
    }

    #[test]
    fn slack_voltage_pinned() {
        let net = builtin_testbed();
        let inj = vec![-3.0, 4.0, -1.0, 6.0, 2.0, 0.0];
        let sol = solve_pf(&net, &inj).unwrap();
        assert!(sol.converged);
        assert!(sol.max_mismatch <= MISMATCH_TOLERANCE);
        assert_eq!(sol.magnitudes[net.slack_index()], 1.046);
        assert_eq!(sol.angles[net.slack_index()], 0.0);
    }

    #[test]
    fn injection_length_checked() {
        let net = builtin_testbed();
        assert!(matches!(solve_pf(&net, &[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prosumer_injection_cases() {
        let net = builtin_testbed();
        let snap = Snapshot::new(vec![1.0, 2.0, 1.0, 2.0, 1.0], vec![5.0, 3.0, 4.0, 6.0, 2.0]).unwrap();
        let zero = prosumer_injections(&net, &snap, &[0.0; 5]).unwrap();
        let full = prosumer_injections(&net, &snap, snap.potential()).unwrap();
        let bus = net.prosumer_buses();
        // prosumers 1 and 2 share a bus
        assert_eq!(zero[bus[0]], -3.0);
        assert_eq!(full[bus[0]], 4.0 + 1.0);
        for i in 2..5 {
            assert_eq!(zero[bus[i]], -snap.demand()[i]);
            assert_eq!(full[bus[i]], snap.potential()[i] - snap.demand()[i]);
        }
        assert_eq!(zero[net.slack_index()], 0.0);
        assert!(prosumer_injections(&net, &snap, &[0.0; 4]).is_err());
    }

    #[test]
    fn additive_on_shared_bus() {
        let net = builtin_testbed();
        let snap = Snapshot::new(vec![1.0, 2.0, 0.0, 0.0, 0.0], vec![4.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let inj = prosumer_injections(&net, &snap, &[4.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(inj[net.prosumer_buses()[0]], 2.0);
    }

    #[test]
    fn deterministic_iterates() {
        let net = builtin_testbed();
        let inj = vec![0.0, 3.0, 1.5, 4.0, -2.0, 0.0];
        let a = solve_pf(&net, &inj).unwrap();
        let b = solve_pf(&net, &inj).unwrap();
        assert_eq!(a, b);
    }
}
