use proptest::prelude::*;
use yamabe_lab::asymptotics::*;
use yamabe_lab::elliptic_solver::*;
use yamabe_lab::geometry::*;

fn point() -> StratifiedSet {
    StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap()
}

fn log_grid() -> Grid {
    Grid::build(&GridSpec::LogRadial(LogRadialSpec {
        base: vec![0.0; 3],
        axis: vec![0.0, 0.0, 1.0],
        perp: vec![1.0, 0.0, 0.0],
        flat: vec![],
        t_min: 0.0,
        t_max: 20.0,
        nt: 161,
        ntheta: 8,
    }))
    .unwrap()
}

fn plane_field() -> (ScalarField, StratifiedSet) {
    let g = StratifiedSet::new(3, vec![Stratum::plane_patch(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 10.0)]).unwrap();
    let grid = Grid::build(&GridSpec::Cartesian(CartesianSpec {
        axes: vec![
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: 0.0, hi: 1.0, n: 257 },
        ],
        lo_face: vec![Face::Mirror, Face::Mirror, Face::Dirichlet],
        hi_face: vec![Face::Mirror, Face::Mirror, Face::Dirichlet],
    }))
    .unwrap();
    let c = 0.75f64.powf(0.25);
    let f = ScalarField::from_fn(grid, 3, 5.0, &g, |_, r| if r > 0.0 { c / r.sqrt() } else { 1e6 });
    (f, g)
}

#[test]
fn exact_half_space_profile_is_strong_and_complete() {
    let (f, _) = plane_field();
    let fit = fit_exponent(&f, (0.2, 0.5)).unwrap();
    assert!((fit.beta_fit - 0.5).abs() < 1e-12);
    let stats = shell_statistics(&f, 0.5, 4, |_| true);
    let sw = sandwich_test(&stats).unwrap();
    assert!(sw.holds && (sw.c1 - 0.75f64.powf(0.25)).abs() < 1e-12);
    let path = geometric_path(&[0.0, 0.0, 0.9], &[0.0; 3], 400, 0.95);
    let comp = completeness_length(&f, &path, 1.0 / 64.0).unwrap();
    assert!(comp.is_complete(), "{comp:?}");
    let prof = BlowupProfile::assemble(fit, 0.5, 0.02, Some(sw), None, &comp).unwrap();
    assert!(prof.strong_singularity);
    let v = threshold_verdict(3, 5.0, 2, true, &prof).unwrap();
    assert!(v.consistent && v.regime == Regime::Above);
}

#[test]
fn delta_witness_recovers_planted_decay() {
    // r^{β₀}u = 3 r^{0.3}
    let f = ScalarField::from_fn(log_grid(), 3, 5.0, &point(), |_, r| 3.0 * r.powf(0.3 - 0.5));
    let d = delta_witness(&f, 0.5, (1e-6, 1e-2)).unwrap();
    assert!((d.delta - 0.3).abs() < 1e-9, "{d:?}");
    assert!((d.bound - 3.0).abs() < 1e-6);
}

#[test]
fn completeness_oracles() {
    let path = geometric_path(&[1.0, 0.0, 0.0], &[0.0; 3], 400, 0.95);
    // density 1/s: each dyad contributes ln 2
    match completeness_length_with(&path, |x| Some(1.0 / x[0].max(1e-300)), 1e-6).unwrap() {
        Completeness::Diverges { dyad_sums } => assert!(dyad_sums.iter().all(|s| (s - 2f64.ln()).abs() < 1e-6)),
        c => panic!("{c:?}"),
    }
    // density s^{-1/2}: total length 2
    match completeness_length_with(&path, |x| Some(x[0].max(1e-300).powf(-0.5)), 1e-6).unwrap() {
        Completeness::Finite { length, .. } => assert!((length - 2.0).abs() < 1e-3, "{length}"),
        c => panic!("{c:?}"),
    }
    assert!(matches!(completeness_length_with(&path[..50], |_| Some(1.0), 1e-6), Err(AsymptoticsError::InvalidInput(_))));
}

#[test]
fn scaling_limit_detects_converged_and_vanishing_slices() {
    let conv = ScalarField::from_fn(log_grid(), 3, 5.0, &point(), |x, r| r.powf(-0.5) * (1.0 + 0.3 * x[2] / r) * (1.0 + r));
    match scaling_limit(&conv, (4.0, 16.0), 0.0).unwrap() {
        ScalingLimit::Converged { samples, .. } => {
            for (th, v) in samples {
                assert!((v - (1.0 + 0.3 * th.cos())).abs() < 1e-5, "{th} {v}");
            }
        }
        s => panic!("{s:?}"),
    }
    let zero = ScalarField::from_fn(log_grid(), 3, 5.0, &point(), |_, r| r.powf(-0.5) * r.powf(0.4));
    match scaling_limit(&zero, (4.0, 16.0), 0.0).unwrap() {
        ScalingLimit::Zero { rate, .. } => assert!((rate - 0.4).abs() < 1e-6, "{rate}"),
        s => panic!("{s:?}"),
    }
}

fn envelope_samples(e: f64, k: f64, wiggle: f64) -> Vec<(f64, f64)> {
    (0..240)
        .map(|j| {
            let r = (-(j as f64) * 0.08).exp();
            (r, k * r.powf(e) * (1.0 + wiggle * (7.0 * j as f64).sin()))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_limit_is_linear(k in 0.05f64..20.0) {
        let base = |x: &[f64], r: f64| r.powf(-0.5) * (1.0 + 0.3 * x[2] / r) * (1.0 + r);
        let f = ScalarField::from_fn(log_grid(), 3, 5.0, &point(), base);
        let g = ScalarField::from_fn(log_grid(), 3, 5.0, &point(), |x, r| k * base(x, r));
        match (scaling_limit(&f, (4.0, 16.0), 0.0).unwrap(), scaling_limit(&g, (4.0, 16.0), 0.0).unwrap()) {
            (ScalingLimit::Converged { samples: a, .. }, ScalingLimit::Converged { samples: b, .. }) => {
                for (p, q) in a.iter().zip(&b) {
                    prop_assert!((q.1 - k * p.1).abs() <= 1e-12 * q.1.abs());
                }
            }
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn decay_class_ignores_scale(e in 0.05f64..1.5, k in 1e-3f64..1e3) {
        let a = envelope_from_samples(&envelope_samples(e, 1.0, 0.0)).unwrap();
        let b = envelope_from_samples(&envelope_samples(e, k, 0.0)).unwrap();
        match (classify_decay(&a), classify_decay(&b)) {
            (DecayCase::Power(x), DecayCase::Power(y)) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x, y),
        }
        prop_assert!((a.a_limit - b.a_limit).abs() < 1e-7 * (1.0 + a.a_limit.abs()));
        prop_assert!((a.b_limit - b.b_limit).abs() < 1e-7 * (1.0 + a.b_limit.abs()), "{} {}", a.b_limit, b.b_limit);
    }

    #[test]
    fn envelope_is_monotone_and_close(e in 0.05f64..1.5, w in 0.0f64..0.02) {
        let env = envelope_from_samples(&envelope_samples(e, 1.0, w)).unwrap();
        // raw envelope is nondecreasing in r
        let mut pairs: Vec<(f64, f64)> = env.radii.iter().copied().zip(env.raw.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(pairs.windows(2).all(|p| p[1].1 >= p[0].1));
        let sup = env.raw.iter().zip(&env.smoothed).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max);
        prop_assert!(sup < 0.05, "{}", sup);
    }

    #[test]
    fn larger_density_never_shortens(a in 0.2f64..0.9, da in 0.0f64..0.5, k in 1.0f64..3.0) {
        let path = geometric_path(&[1.0, 0.0, 0.0], &[0.0; 3], 400, 0.95);
        let lo = completeness_length_with(&path, |x| Some(x[0].max(1e-300).powf(-a)), 1e-6).unwrap();
        let hi = completeness_length_with(&path, |x| Some(k * x[0].max(1e-300).powf(-a - da)), 1e-6).unwrap();
        match (&lo, &hi) {
            (Completeness::Finite { length: l1, .. }, Completeness::Finite { length: l2, .. }) => prop_assert!(l2 >= l1),
            (Completeness::Diverges { .. }, Completeness::Finite { .. }) => prop_assert!(false, "{lo:?} {hi:?}"),
            _ => {}
        }
    }
}
