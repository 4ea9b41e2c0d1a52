use proptest::prelude::*;
use yamabe_lab::elliptic_solver::*;
use yamabe_lab::geometry::*;

fn plane() -> StratifiedSet {
    StratifiedSet::new(3, vec![Stratum::plane_patch(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 10.0)]).unwrap()
}

fn column(nz: usize) -> GridSpec {
    GridSpec::Cartesian(CartesianSpec {
        axes: vec![
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: 0.0, hi: 3.0, n: nz },
        ],
        lo_face: vec![Face::Mirror, Face::Mirror, Face::Dirichlet],
        hi_face: vec![Face::Mirror, Face::Mirror, Face::Dirichlet],
    })
}

/// u on the column axis at z = k/32, k = 6..=16.
fn plane_profile(nz: usize) -> (Vec<f64>, ScalarField) {
    let mut spec = ProblemSpec::new(3, 5.0, plane(), column(nz)).unwrap();
    spec.schedule = default_schedule(0.02, 6);
    spec.probe = (0.2, 0.5);
    let f = maximal_solution(&spec).unwrap().field;
    let vals = (6..=16)
        .map(|k| {
            let z = k as f64 / 32.0;
            let i = (0..f.values.len()).find(|&i| {
                let x = f.grid.coords(i);
                x[0] == 0.0 && x[1] == 0.0 && (x[2] - z).abs() < 1e-12
            });
            f.values[i.unwrap()]
        })
        .collect();
    (vals, f)
}

#[test]
fn half_space_profile_converges_at_second_order() {
    // oracle: u'' = u⁵ on the half-line, u = (3/4)^{1/4} z^{-1/2}
    let c = 0.75f64.powf(0.25);
    let (a, _) = plane_profile(97);
    let (b, _) = plane_profile(193);
    let (d, f) = plane_profile(385);
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let order = (diff(&a, &b) / diff(&b, &d)).log2();
    assert!(order >= 1.7, "observed order {order}");
    let mut worst: f64 = 0.0;
    for i in 0..f.values.len() {
        if f.rho[i] >= 0.2 && f.rho[i] <= 0.5 {
            worst = worst.max((f.values[i] * f.rho[i].sqrt() / c - 1.0).abs());
        }
    }
    assert!(worst < 0.03, "max relative error {worst}");
}

#[test]
fn constants_match_closed_forms() {
    assert!((half_space_constant(5.0).unwrap() - 0.75f64.powf(0.25)).abs() < 1e-15);
    assert!((half_space_constant(3.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(d0(4, 2.5).unwrap(), 2.0 - 4.0 / 3.0);
    // closure value sits between the continuum constant and twice it
    let k = tube_closure_constant(5.0);
    let c = half_space_constant(5.0).unwrap();
    assert!(k > c && k < 2.0 * c, "{k}");
}

fn point_log_grid(nt: usize, ntheta: usize) -> (Grid, StratifiedSet) {
    let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
    let spec = LogRadialSpec {
        base: vec![0.0; 3],
        axis: vec![0.0, 0.0, 1.0],
        perp: vec![1.0, 0.0, 0.0],
        flat: vec![],
        t_min: 0.0,
        t_max: 10.0,
        nt,
        ntheta,
    };
    (Grid::build(&GridSpec::LogRadial(spec)).unwrap(), g)
}

#[test]
fn log_grid_laplacian_of_radial_power() {
    // Δ r^{-β} = β(β − 1) r^{-β-2} in R³
    let b = 0.5;
    for (nt, tol) in [(81, 4e-3), (161, 1e-3)] {
        let (grid, g) = point_log_grid(nt, 8);
        let f = ScalarField::from_fn(grid, 3, 5.0, &g, |_, r| r.powf(-b));
        let l = discrete_laplacian(&f).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..f.values.len() {
            let r = f.rho[i];
            if f.grid.is_box_boundary(i) || r < 1e-4 {
                continue;
            }
            let exact = b * (b - 1.0) * r.powf(-b - 2.0);
            worst = worst.max((l.values[i] / exact - 1.0).abs());
        }
        assert!(worst < tol, "nt {nt}: {worst}");
    }
}

#[test]
fn log_grid_laplacian_of_harmonic_function() {
    // x₃ = r cos θ is harmonic; the residual must be small against u / r²
    let (grid, g) = point_log_grid(161, 32);
    let f = ScalarField::from_fn(grid, 3, 5.0, &g, |x, _| x[2]);
    let l = discrete_laplacian(&f).unwrap();
    for i in 0..f.values.len() {
        let r = f.rho[i];
        if f.grid.is_box_boundary(i) || r < 1e-4 {
            continue;
        }
        assert!(l.values[i].abs() * r < 5e-3, "{} at r = {r}", l.values[i]);
    }
}

#[test]
fn harnack_ratio_of_power_profile() {
    let g = plane();
    let grid = Grid::build(&GridSpec::Cartesian(CartesianSpec {
        axes: vec![
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: -0.01, hi: 0.01, n: 3 },
            AxisSpec::Uniform { lo: 0.0, hi: 1.0, n: 257 },
        ],
        lo_face: vec![Face::Dirichlet; 3],
        hi_face: vec![Face::Dirichlet; 3],
    }))
    .unwrap();
    let f = ScalarField::from_fn(grid, 3, 5.0, &g, |_, r| r.powf(-0.5));
    // ball B_{1/16}(z = 1/2) reaches z = 7/16 and 9/16
    let h = harnack_ratio(&f, &g, &[0.0, 0.0, 0.5]).unwrap();
    assert!((h - (9.0f64 / 7.0).sqrt()).abs() < 1e-12, "{h}");
}

fn small_box(n: usize) -> GridSpec {
    GridSpec::Cartesian(CartesianSpec {
        axes: vec![AxisSpec::Uniform { lo: -1.0, hi: 1.0, n }; 3],
        lo_face: vec![Face::Dirichlet; 3],
        hi_face: vec![Face::Dirichlet; 3],
    })
}

#[test]
fn larger_singular_set_gives_larger_solution() {
    let n = 17;
    let p = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
    let s = StratifiedSet::new(3, vec![Stratum::segment(&[-0.5, 0.0, 0.0], &[0.5, 0.0, 0.0])]).unwrap();
    let pl = StratifiedSet::new(3, vec![Stratum::plane_patch(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 0.5)]).unwrap();
    let sols: Vec<ScalarField> = [p, s, pl]
        .into_iter()
        .map(|g| maximal_solution(&ProblemSpec::new(3, 3.0, g, small_box(n)).unwrap()).unwrap().field)
        .collect();
    for w in sols.windows(2) {
        for i in 0..w[0].values.len() {
            assert!(w[0].values[i] <= w[1].values[i] * (1.0 + 1e-9) + 1e-12, "node {i}");
        }
    }
}

#[test]
fn maximal_solution_descends_and_converges() {
    let g = StratifiedSet::new(3, vec![Stratum::segment(&[-0.5, 0.0, 0.0], &[0.5, 0.0, 0.0])]).unwrap();
    let sol = maximal_solution(&ProblemSpec::new(3, 5.0, g, small_box(17)).unwrap()).unwrap();
    assert_eq!(sol.stages.len(), 4);
    let dirs: Vec<i8> = sol.stages.iter().skip(1).map(|s| s.direction).filter(|&d| d != 0).collect();
    assert!(dirs.windows(2).all(|w| w[0] == w[1]), "{dirs:?}");
    for r in &sol.reports {
        assert!(r.monotone);
        let sup = sol.field.values.iter().copied().fold(0.0, f64::max);
        assert!(*r.residuals.last().unwrap() <= 1e-8 * sup);
    }
    assert!(sol.field.values.iter().all(|&u| u > 0.0));
}

#[test]
fn rejects_subcritical_exponent_and_short_schedules() {
    let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
    assert!(matches!(ProblemSpec::new(3, 1.0, g.clone(), small_box(9)), Err(SolverError::SubcriticalExponent(_))));
    let mut spec = ProblemSpec::new(3, 5.0, g, small_box(9)).unwrap();
    spec.schedule.truncate(2);
    assert!(matches!(maximal_solution(&spec), Err(SolverError::InvalidProblem(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn truncated_solve_is_monotone_in_m(q in 2.0f64..6.0, m1 in 1.0f64..50.0, f in 1.1f64..4.0) {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
        let spec = ProblemSpec::new(3, q, g, small_box(11)).unwrap();
        let a = truncated_solve(&spec, m1, 0.3).unwrap().field;
        let b = truncated_solve(&spec, m1 * f, 0.3).unwrap().field;
        for i in 0..a.values.len() {
            prop_assert!(a.values[i] <= b.values[i] * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn truncated_solve_is_antitone_in_potential(q in 2.0f64..6.0, s1 in -0.5f64..2.0, ds in 0.1f64..3.0) {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
        let mut spec = ProblemSpec::new(3, q, g, small_box(11)).unwrap();
        spec.s = Potential::Constant(s1);
        let a = truncated_solve(&spec, 20.0, 0.3).unwrap().field;
        spec.s = Potential::Constant(s1 + ds);
        let b = truncated_solve(&spec, 20.0, 0.3).unwrap().field;
        for i in 0..a.values.len() {
            prop_assert!(b.values[i] <= a.values[i] * (1.0 + 1e-9) + 1e-12);
        }
    }
}
