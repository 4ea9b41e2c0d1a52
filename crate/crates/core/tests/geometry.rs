use std::f64::consts::PI;

use proptest::prelude::*;
use yamabe_lab::geometry::*;

fn cusp_cylinder() -> StratifiedSet {
    // x₁² = x₃³, x₃ ≥ 0, x₂ free
    let st = Stratum::custom(|s| vec![s[0].powi(3), s[1], s[0] * s[0]], &[-1.5, -2.0], &[1.5, 2.0], true, "cusp");
    StratifiedSet::new(3, vec![st]).unwrap()
}

fn cusp_of_revolution() -> StratifiedSet {
    // x₁² + x₂² = x₃³ as (t³ cos φ, t³ sin φ, t²)
    let st = Stratum::custom(
        |s| vec![s[0].powi(3) * s[1].cos(), s[0].powi(3) * s[1].sin(), s[0] * s[0]],
        &[0.0, 0.0],
        &[1.0, 2.0 * PI],
        true,
        "cusp",
    );
    StratifiedSet::new(3, vec![st]).unwrap()
}

fn segment_and_sine() -> StratifiedSet {
    let seg = Stratum::segment(&[0.0, -1.0], &[0.0, 1.0]);
    let sine = Stratum::custom(|s| vec![s[0], s[0].sin()], &[0.0], &[10.0], false, "sine");
    StratifiedSet::new(2, vec![seg, sine]).unwrap()
}

fn eps_seq(e0: f64, k: usize) -> Vec<f64> {
    (0..k).map(|j| e0 * 0.5f64.powi(j as i32)).collect()
}

#[test]
fn cusp_distance_matches_brute_force() {
    let g = cusp_cylinder();
    let x = [0.3, 0.0, 0.2];
    // brute-force oracle: 10⁶ samples over the (t, x₂) chart
    let n = 1000;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let t = -1.5 + 3.0 * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let y = -0.05 + 0.1 * j as f64 / (n - 1) as f64;
            let d = ((t.powi(3) - x[0]).powi(2) + (y - x[1]).powi(2) + (t * t - x[2]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    // one-parameter dense refinement of the oracle (x₂ = 0 is optimal by symmetry)
    let mut fine = f64::INFINITY;
    for i in 0..1_000_000 {
        let t = -1.5 + 3.0 * i as f64 / 999_999.0;
        fine = fine.min(((t.powi(3) - x[0]).powi(2) + (t * t - x[2]).powi(2)).sqrt());
    }
    let d = distance_to_set(&x, &g).unwrap();
    assert!(d <= best + 1e-12, "{d} vs brute {best}");
    assert!((d - fine).abs() < 1e-8, "{d} vs dense {fine}");
}

#[test]
fn cusp_essential_link_is_vertical_direction() {
    let g = cusp_of_revolution();
    let tc = tangent_cone(&g, &[0.0; 3], &eps_seq(0.02, 6), 20_000).unwrap();
    assert!(!tc.link.directions.is_empty());
    assert!(tc.link.angular_spread() < 0.05, "spread {}", tc.link.angular_spread());
    for d in &tc.link.directions {
        assert!(angle_between(&d.v, &[0.0, 0.0, 1.0]) < 0.05);
    }
    assert_eq!(tc.link.dim_estimate, 0);
    assert_eq!(tc.dim, 1);
}

#[test]
fn cusp_in_r5_has_one_dimensional_tangent_cone() {
    // x₁² + … + x₄² = x₅³ as (t³ ω, t²), ω ∈ S³ in hyperspherical angles
    let st = Stratum::custom(
        |s| {
            let (t, a, b, c) = (s[0], s[1], s[2], s[3]);
            let r = t.powi(3);
            vec![
                r * a.cos(),
                r * a.sin() * b.cos(),
                r * a.sin() * b.sin() * c.cos(),
                r * a.sin() * b.sin() * c.sin(),
                t * t,
            ]
        },
        &[0.0, 0.0, 0.0, 0.0],
        &[1.0, PI, PI, 2.0 * PI],
        true,
        "cusp5",
    );
    let g = StratifiedSet::new(5, vec![st]).unwrap();
    let tc = tangent_cone(&g, &[0.0; 5], &eps_seq(0.02, 5), 20_000).unwrap();
    for d in &tc.link.directions {
        assert!(angle_between(&d.v, &[0.0, 0.0, 0.0, 0.0, 1.0]) < 0.05);
    }
    assert_eq!(tc.dim, 1);
}

#[test]
fn segment_and_sine_link_has_three_directions() {
    let g = segment_and_sine();
    let link = epsilon_link(&g, &[0.0, 0.0], 0.05, 20_000).unwrap();
    // oracle: brute-force projection of dense curve samples inside the ball
    let mut oracle: Vec<[f64; 2]> = vec![];
    for i in 1..=200_000 {
        let t = 0.05 * i as f64 / 200_000.0;
        for p in [[0.0, t], [0.0, -t], [t, t.sin()]] {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if r <= 0.05 {
                let w = [p[0] / r, p[1] / r];
                if !oracle.iter().any(|o| angle_between(o, &w) < 0.01) {
                    oracle.push(w);
                }
            }
        }
    }
    assert_eq!(oracle.len(), 3);
    assert_eq!(link.len(), 3);
    for o in &oracle {
        assert!(link.iter().any(|d| angle_between(&d.v, o) < 0.01));
    }
    let expected = [[0.0, 1.0], [0.0, -1.0], [0.5f64.sqrt(), 0.5f64.sqrt()]];
    for e in &expected {
        assert!(link.iter().any(|d| angle_between(&d.v, e) < 0.01));
    }
    let tc = tangent_cone(&g, &[0.0, 0.0], &[0.05, 0.025, 0.0125], 20_000).unwrap();
    assert_eq!(tc.link.directions.len(), 3);
    assert_eq!(tc.dim, 1);
}

#[test]
fn smooth_stratum_dims() {
    let line = StratifiedSet::new(4, vec![Stratum::segment(&[-1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0])]).unwrap();
    let tc = tangent_cone(&line, &[0.0; 4], &eps_seq(0.1, 3), 4000).unwrap();
    assert_eq!(tc.link.dim_estimate, 0);
    assert_eq!(tc.dim, 1);
    let sphere = Stratum::custom(
        |s| vec![1.0 - s[0].cos(), s[0].sin() * s[1].cos(), s[0].sin() * s[1].sin()],
        &[0.0, 0.0],
        &[PI, 2.0 * PI],
        true,
        "sphere",
    );
    let g = StratifiedSet::new(3, vec![sphere]).unwrap();
    let tc = tangent_cone(&g, &[0.0; 3], &eps_seq(0.05, 4), 20_000).unwrap();
    assert_eq!(tc.link.dim_estimate, 1);
    assert_eq!(tc.dim, 2);
}

#[test]
fn drifting_set_fails_link_convergence() {
    // direction angle 0.1 s² at radius e^{-s}: each halving of ε strips a growing arc
    let curve = Stratum::custom(
        |s| {
            let r = (-s[0]).exp();
            let th = 0.1 * s[0] * s[0];
            vec![r * th.cos(), r * th.sin()]
        },
        &[0.0],
        &[5.0],
        true,
        "drift",
    );
    let g = StratifiedSet::new(2, vec![curve]).unwrap();
    let seq: Vec<f64> = (0..4).map(|j| 0.2 * 0.5f64.powi(j)).collect();
    let r = essential_link(&g, &[0.0, 0.0], &seq, 4000);
    assert!(matches!(r, Err(GeometryError::LinkNotConverged(_))), "{r:?}");
}

fn segment_set() -> StratifiedSet {
    StratifiedSet::new(3, vec![Stratum::segment(&[-0.5, 0.0, 0.0], &[0.5, 0.2, 0.0]), Stratum::point(&[0.0, 0.7, 0.1])]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_one_lipschitz(
        x in prop::array::uniform3(-1.0f64..1.0),
        y in prop::array::uniform3(-1.0f64..1.0),
    ) {
        for g in [segment_set(), cusp_cylinder()] {
            let dx = distance_to_set(&x, &g).unwrap();
            let dy = distance_to_set(&y, &g).unwrap();
            let dxy = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!((dx - dy).abs() <= dxy + 1e-7);
        }
    }

    #[test]
    fn projection_is_unit_and_ray_constant(
        x in prop::array::uniform3(-1.0f64..1.0),
        p in prop::array::uniform3(-0.2f64..0.2),
        t in 0.01f64..1.0,
    ) {
        prop_assume!(x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() > 1e-6);
        let w = omega_projection(&x, &p, 10.0).unwrap();
        let nw = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((nw - 1.0).abs() <= 1e-12);
        let xt: Vec<f64> = (0..3).map(|i| p[i] + t * (x[i] - p[i])).collect();
        let wt = omega_projection(&xt, &p, 10.0).unwrap();
        prop_assert!(angle_between(&w, &wt) < 1e-12);
    }

    #[test]
    fn smaller_ball_links_nest(e1 in 0.02f64..0.1, f in 0.2f64..0.9) {
        let g = segment_and_sine();
        let big = epsilon_link(&g, &[0.0, 0.0], e1, 4000).unwrap();
        let small = epsilon_link(&g, &[0.0, 0.0], e1 * f, 4000).unwrap();
        let tol = 2.0 * angular_resolution(4000);
        for d in &small {
            prop_assert!(big.iter().any(|b| angle_between(&b.v, &d.v) <= tol));
        }
    }

    #[test]
    fn link_directions_are_unit(e in 0.01f64..0.2) {
        let link = epsilon_link(&cusp_of_revolution(), &[0.0; 3], e, 4000).unwrap();
        for d in &link {
            let n = d.v.iter().map(|c| c * c).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }
    }
}
