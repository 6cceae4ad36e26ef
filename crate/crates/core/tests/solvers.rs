use fair_curtail::envelope::check_envelope;
use fair_curtail::grid::{builtin_testbed, Snapshot};
use fair_curtail::oracle::{FnOracle, HalfspaceOracle};
use fair_curtail::simulator::{comparison_panels, generate_duck_curve};
use fair_curtail::solvers::{
    brute_force_argmax, check_monotone_path, ks_lambda_tolerance, solve, solve_ks, solve_ks_in, solve_ks_with,
    solve_nash, solve_nash_with, solve_utilitarian, solve_utilitarian_with, SolveOptions,
};
use fair_curtail::welfare::{cfc_welfare, nash_welfare, reference_points, SchemeConfig, UtilityMetric};

const TOL: f64 = 1e-2;

fn toy(p: &[f64]) -> Snapshot {
    Snapshot::new(vec![0.0; p.len()], p.to_vec()).unwrap()
}

fn left() -> HalfspaceOracle {
    HalfspaceOracle::below_polyline(&[(0.0, 4.0), (4.0, 1.0)])
}

fn right() -> HalfspaceOracle {
    HalfspaceOracle::below_polyline(&[(0.0, 4.0), (2.0, 3.5), (4.0, 1.0)])
}

fn close(x: &[f64], expected: &[f64], tol: f64) -> bool {
    x.iter().zip(expected).all(|(a, b)| (a - b).abs() <= tol)
}

fn midday() -> Snapshot {
    generate_duck_curve(&builtin_testbed(), 42).snapshots()[48].clone()
}

#[test]
fn ks_on_both_frontiers() {
    let snap = toy(&[4.0, 4.0]);
    let opts = SolveOptions::default();
    let a = solve_ks_with(&left(), &snap, &SchemeConfig::OpfGeneration, opts).unwrap();
    let b = solve_ks_with(&right(), &snap, &SchemeConfig::OpfGeneration, opts).unwrap();
    assert!(close(&a.x, &[16.0 / 7.0; 2], TOL), "{:?}", a.x);
    assert!(close(&b.x, &[8.0 / 3.0; 2], TOL), "{:?}", b.x);
}

#[test]
fn nash_on_both_frontiers() {
    let snap = toy(&[4.0, 4.0]);
    let opts = SolveOptions::default();
    let a = solve_nash_with(&left(), &snap, &SchemeConfig::NashExport, opts).unwrap();
    let b = solve_nash_with(&right(), &snap, &SchemeConfig::NashExport, opts).unwrap();
    assert!(close(&a.x, &[8.0 / 3.0, 2.0], TOL), "{:?}", a.x);
    assert!(close(&b.x, &[2.4, 3.0], TOL), "{:?}", b.x);
    assert!(a.lambda.is_none());
}

#[test]
fn individual_monotonicity_split() {
    let snap = toy(&[4.0, 4.0]);
    let opts = SolveOptions::default();
    let ks = |o: &HalfspaceOracle| solve_ks_with(o, &snap, &SchemeConfig::OpfGeneration, opts).unwrap().x[0];
    let nash = |o: &HalfspaceOracle| solve_nash_with(o, &snap, &SchemeConfig::NashExport, opts).unwrap().x[0];
    assert!(ks(&right()) >= ks(&left()));
    assert!(nash(&right()) < nash(&left()));
}

#[test]
fn brute_force_ks_point() {
    let snap = toy(&[4.0, 4.0]);
    let refs = reference_points(&SchemeConfig::OpfGeneration, &snap).unwrap();
    let x = brute_force_argmax(
        |x| fair_curtail::welfare::ks_welfare(x, &refs).unwrap(),
        &snap,
        &left(),
        0.01,
    )
    .unwrap();
    assert!(close(&x, &[2.29, 2.29], 0.01 + 1e-9), "{x:?}");
}

#[test]
fn utilitarian_matches_grid_on_two_agents() {
    let snap = toy(&[3.0, 2.5]);
    let oracle = HalfspaceOracle::new(vec![(vec![1.0, 0.6], 3.2), (vec![0.3, 1.0], 2.6)]);
    let r = solve_utilitarian_with(&oracle, &snap, 0.0, SolveOptions::default()).unwrap();
    let grid = brute_force_argmax(|x| cfc_welfare(x, 0.0), &snap, &oracle, 0.01).unwrap();
    assert!(close(&r.x, &grid, TOL), "{:?} vs {grid:?}", r.x);
    assert!((r.welfare - cfc_welfare(&grid, 0.0)).abs() <= TOL);
}

#[test]
fn utilitarian_unconstrained_snapshot() {
    let net = builtin_testbed();
    let snap = generate_duck_curve(&net, 42).snapshots()[28].clone();
    let r = solve_utilitarian(&net, &snap, 0.0, TOL).unwrap();
    assert_eq!(r.x, snap.potential());
}

#[test]
fn ks_off_peak_has_no_curtailment() {
    let net = builtin_testbed();
    let snap = generate_duck_curve(&net, 42).snapshots()[12].clone();
    let r = solve_ks(&net, &snap, &SchemeConfig::OpfExport, TOL).unwrap();
    assert_eq!(r.lambda, Some(1.0));
    assert_eq!(r.x, snap.potential());
}

#[test]
fn ks_sits_on_the_boundary() {
    let net = builtin_testbed();
    let snap = midday();
    for cfg in comparison_panels(&snap).into_iter().filter(SchemeConfig::is_bargaining) {
        let r = solve_ks(&net, &snap, &cfg, TOL).unwrap();
        let lambda = r.lambda.unwrap();
        assert!(lambda < 1.0, "{cfg}");
        let refs = reference_points(&cfg, &snap).unwrap();
        for ratio in r.ratios.iter().flatten() {
            assert!((ratio - lambda).abs() <= 1e-6);
        }
        let beyond = (lambda + 2.0 * ks_lambda_tolerance(&refs, TOL)).min(1.0);
        let x: Vec<f64> = refs
            .fallback_x
            .iter()
            .zip(&refs.utopia_x)
            .map(|(lo, hi)| lo + beyond * (hi - lo))
            .collect();
        assert!(!check_envelope(&net, &snap, &x).unwrap().feasible, "{cfg}");
        let margin = r.report.unwrap().worst_voltage_margin.unwrap();
        assert!((0.0..1e-3).contains(&margin), "{cfg}: {margin}");
    }
}

#[test]
fn ks_envelope_survives_affine_rescaling() {
    let net = builtin_testbed();
    let snap = midday();
    let oracle = fair_curtail::oracle::GridOracle::new(&net, &snap);
    let cfg = SchemeConfig::OpfExport;
    let refs = reference_points(&cfg, &snap).unwrap();
    let utility = cfg.metric().resolve(&snap);
    let base = solve_ks_in(&oracle, &utility, &refs, cfg, SolveOptions::default()).unwrap();
    let a = [0.1, 3.0, 10.0, 0.7, 2.2];
    let b = [-5.0, 4.0, 0.5, -1.5, 5.0];
    let moved = solve_ks_in(
        &oracle,
        &utility.transformed(&a, &b).unwrap(),
        &refs.transformed(&a, &b).unwrap(),
        cfg,
        SolveOptions::default(),
    )
    .unwrap();
    assert!(close(&base.x, &moved.x, 1e-9), "{:?} vs {:?}", base.x, moved.x);
}

#[test]
fn midday_segment_is_monotone() {
    let net = builtin_testbed();
    let snap = midday();
    let refs = reference_points(&SchemeConfig::OpfExport, &snap).unwrap();
    assert!(check_monotone_path(&net, &snap, &refs.fallback_x, &refs.utopia_x, 100).unwrap());
}

#[test]
fn utilitarian_curtails_the_most_sensitive_prosumer() {
    let net = builtin_testbed();
    let snap = midday();
    let r = solve_utilitarian(&net, &snap, 0.0, TOL).unwrap();
    assert!(r.feasible);
    let curtailed: Vec<f64> = snap.potential().iter().zip(&r.x).map(|(p, x)| p - x).collect();
    let most = (0..curtailed.len()).max_by(|&a, &b| curtailed[a].total_cmp(&curtailed[b])).unwrap();

    // room above the potential so the probe can leave the box
    let wide = Snapshot::new(snap.demand().to_vec(), snap.potential().iter().map(|p| p + 1.0).collect()).unwrap();
    let vmax = |x: &[f64]| check_envelope(&net, &wide, x).unwrap().pf.unwrap().max_magnitude();
    let h = 1e-3;
    let sensitivity: Vec<f64> = (0..r.x.len())
        .map(|i| {
            let mut up = r.x.clone();
            let mut down = r.x.clone();
            up[i] += h;
            down[i] = (down[i] - h).max(0.0);
            (vmax(&up) - vmax(&down)) / (up[i] - down[i])
        })
        .collect();
    let steepest = (0..sensitivity.len())
        .max_by(|&a, &b| sensitivity[a].total_cmp(&sensitivity[b]))
        .unwrap();
    assert_eq!(most, steepest, "curtailment {curtailed:?}, sensitivity {sensitivity:?}");
}

#[test]
fn nash_beats_every_other_panel_on_its_own_welfare() {
    let net = builtin_testbed();
    let snap = midday();
    let nash = solve_nash(&net, &snap, &SchemeConfig::NashExport, TOL).unwrap();
    assert!(nash.feasible);
    let refs = reference_points(&SchemeConfig::NashExport, &snap).unwrap();
    let utility = UtilityMetric::Export.resolve(&snap);
    for cfg in comparison_panels(&snap) {
        let other = solve(&net, &snap, &cfg, SolveOptions::default()).unwrap();
        let u = utility.profile(&other.x).unwrap();
        if let Ok(w) = nash_welfare(&u, &refs) {
            assert!(nash.welfare >= w * (1.0 - 1e-6), "{cfg}: {} < {w}", nash.welfare);
        }
    }
}

#[test]
fn utilitarian_total_is_largest() {
    let net = builtin_testbed();
    let snap = midday();
    let results: Vec<_> = comparison_panels(&snap)
        .iter()
        .map(|cfg| solve(&net, &snap, cfg, SolveOptions::default()).unwrap())
        .collect();
    let util = results.iter().find(|r| matches!(r.scheme, SchemeConfig::UtilitarianMix { .. })).unwrap();
    for r in &results {
        assert!(util.total() >= r.total() - 1e-6, "{}: {} > {}", r.scheme, r.total(), util.total());
    }
}

#[test]
fn degenerate_nash_agents_are_pinned() {
    let oracle = FnOracle(|x: &[f64]| x[0] + x[1] <= 3.0);
    let snap = Snapshot::new(vec![0.0, 2.0], vec![4.0, 1.5]).unwrap();
    let r = solve_nash_with(&oracle, &snap, &SchemeConfig::NashExport, SolveOptions::default()).unwrap();
    assert_eq!(r.x[1], 1.5);
    assert!((r.x[0] - 1.5).abs() < 1e-6);
    assert!(r.ratios[1].is_none());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn halfspace_case() -> impl Strategy<Value = (Vec<f64>, Vec<(Vec<f64>, f64)>)> {
        (2usize..=4).prop_flat_map(|n| {
            (
                prop::collection::vec(0.5..5.0f64, n),
                prop::collection::vec((prop::collection::vec(0.1..2.0f64, n), 0.2..0.9f64), 1..=3),
            )
                .prop_map(|(p, rows)| {
                    let rows = rows
                        .into_iter()
                        .map(|(a, frac)| {
                            let full: f64 = a.iter().zip(&p).map(|(a, p)| a * p).sum();
                            (a, frac * full)
                        })
                        .collect();
                    (p, rows)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ks_equal_ratio_on_the_boundary((p, rows) in halfspace_case()) {
            let oracle = HalfspaceOracle::new(rows);
            let snap = toy(&p);
            let r = solve_ks_with(&oracle, &snap, &SchemeConfig::OpfGeneration, SolveOptions::default()).unwrap();
            let lambda = r.lambda.unwrap();
            prop_assert!(r.feasible);
            for ratio in r.ratios.iter().flatten() {
                prop_assert!((ratio - lambda).abs() <= 1e-6);
            }
            let refs = reference_points(&SchemeConfig::OpfGeneration, &snap).unwrap();
            let beyond = (lambda + 2.0 * ks_lambda_tolerance(&refs, TOL)).min(1.0);
            let x: Vec<f64> = p.iter().map(|p| p * beyond).collect();
            prop_assert!(lambda == 1.0 || !fair_curtail::FeasibilityOracle::is_feasible(&oracle, &x).unwrap());
        }

        #[test]
        fn nash_product_beats_the_ks_point((p, rows) in halfspace_case()) {
            let oracle = HalfspaceOracle::new(rows);
            let snap = toy(&p);
            let opts = SolveOptions::default();
            let nash = solve_nash_with(&oracle, &snap, &SchemeConfig::NashExport, opts).unwrap();
            let ks = solve_ks_with(&oracle, &snap, &SchemeConfig::OpfExport, opts).unwrap();
            let refs = reference_points(&SchemeConfig::NashExport, &snap).unwrap();
            prop_assert!(nash.feasible);
            let ks_product = nash_welfare(&ks.utilities, &refs).unwrap();
            prop_assert!(nash.welfare >= ks_product * (1.0 - 1e-6), "{} < {ks_product}", nash.welfare);
        }
    }
}
