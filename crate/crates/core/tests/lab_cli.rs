use std::path::PathBuf;

use proptest::prelude::*;
use yamabe_lab::asymptotics::Regime;
use yamabe_lab::lab_cli::*;

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("yamabe-lab-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> i32 {
    main_with(std::iter::once("yamabe-lab").chain(args.iter().copied()))
}

fn plane_text() -> &'static str {
    bundled("plane-oracle").unwrap()
}

#[test]
fn unknown_key_reports_line_and_field() {
    let text = plane_text().replace("probe = 0.2 0.5", "probe = 0.2 0.5\nprobbe = 1");
    let line = text.lines().position(|l| l.starts_with("probbe")).unwrap() + 1;
    let err = Scenario::from_text(&text, &Overrides { q: None, resolution: 1.0 }).unwrap_err();
    assert_eq!((err.line, err.field.as_str()), (line, "probbe"));
    assert!(err.to_string().starts_with(&format!("line {line}: probbe:")));
}

#[test]
fn bad_values_are_config_errors() {
    let ov = Overrides { q: None, resolution: 1.0 };
    for (from, to, field) in [
        ("q = 5", "q = 1", "q"),
        ("q = 5", "q = five", "q"),
        ("analyses = tangent_cone oracle exponent sandwich completeness verdict", "analyses = verdict", "analyses"),
        ("axis = uniform 0 3 385", "axis = uniform 0 3", "axis"),
        ("kind = plane-patch", "kind = torus", "kind"),
    ] {
        let text = plane_text().replace(from, to);
        let err = Scenario::from_text(&text, &ov).unwrap_err();
        assert_eq!(err.field, field, "{err}");
        assert!(err.line > 0);
    }
    let dir = scratch("badcfg");
    let path = dir.join("bad.conf");
    std::fs::write(&path, plane_text().replace("n = 3", "n = 3\nn = 4")).unwrap();
    assert_eq!(run(&["run", path.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(run(&["run", "no-such-scenario"]), EXIT_CONFIG);
    assert_eq!(run(&["frobnicate"]), EXIT_CONFIG);
}

#[test]
fn hash_ignores_layout_and_tracks_content() {
    let ov = Overrides { q: None, resolution: 1.0 };
    let h = |t: &str, o: &Overrides| Scenario::from_text(t, o).unwrap().config_hash;
    let base = h(plane_text(), &ov);
    let noisy: String = plane_text().lines().map(|l| format!("  {}   # note\n\n", l.replace(" = ", "=   "))).collect();
    assert_eq!(h(&noisy, &ov), base);
    assert_ne!(h(&plane_text().replace("probe = 0.2 0.5", "probe = 0.2 0.6"), &ov), base);
    assert_ne!(h(plane_text(), &Overrides { q: Some(4.0), resolution: 1.0 }), base);
    assert_ne!(h(plane_text(), &Overrides { q: None, resolution: 2.0 }), base);
}

#[test]
fn empty_sweep_grid_writes_header_only() {
    let cfg = Config::parse(plane_text()).unwrap();
    let rows = run_sweep(&cfg, &parse_param("q=").unwrap(), &Overrides { q: None, resolution: 1.0 }, None).unwrap();
    assert!(rows.is_empty());
    assert_eq!(sweep_csv(&[]), format!("{SWEEP_HEADER}\n"));
    let dir = scratch("sweep");
    assert_eq!(run(&["sweep", "plane-oracle", "--param", "q=", "--out", dir.to_str().unwrap()]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(dir.join("sweep.csv")).unwrap(), format!("{SWEEP_HEADER}\n"));
    assert!(matches!(parse_param("beta=1"), Err(_)));
    assert!(matches!(parse_param("q=2,x"), Err(_)));
}

#[test]
fn bundled_scenarios_parse_and_list() {
    assert_eq!(run(&["list"]), EXIT_OK);
    for name in ["plane-oracle", "point-subthreshold", "segment", "line-r4"] {
        let sc = Scenario::from_text(bundled(name).unwrap(), &Overrides { q: None, resolution: 1.0 }).unwrap();
        assert_eq!(sc.name, name);
    }
}

#[test]
fn plane_oracle_run_is_reproducible() {
    let dir = scratch("plane");
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(run(&["run", "plane-oracle", "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run(&["run", "plane-oracle", "--out", b.to_str().unwrap()]), EXIT_OK);
    for f in ["report.json", "field.csv", "shells.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], SCHEMA);
    let beta = v["profile"]["beta_fit"].as_f64().unwrap();
    assert!((beta - 0.5).abs() < 0.02, "{beta}");
    assert_eq!(v["profile"]["complete"], true);
    assert_eq!(v["verdict"]["consistent"], true);
}

#[test]
fn subthreshold_point_is_incomplete_with_decay() {
    let sc = Scenario::from_text(bundled("point-subthreshold").unwrap(), &Overrides { q: None, resolution: 1.0 }).unwrap();
    let out = run_scenario(&sc, None);
    assert_eq!(out.report.exit_code, EXIT_OK, "{}", out.report.status);
    let prof = out.report.profile.as_ref().unwrap();
    assert!(!prof.complete && !prof.strong_singularity);
    assert!(prof.delta_witness.unwrap() > 0.1);
    let v = out.report.verdict.as_ref().unwrap();
    assert!(v.consistent && v.regime == Regime::Below);
}

#[test]
fn budget_overrun_is_a_numerical_failure() {
    let sc = Scenario::from_text(plane_text(), &Overrides { q: None, resolution: 1.0 }).unwrap();
    let out = run_scenario(&sc, Some(0.0));
    assert_eq!(out.report.exit_code, EXIT_NUMERICAL, "{}", out.report.status);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn comment_lines_never_change_the_hash(junk in "[a-z =0-9.]{0,30}", at in 0usize..30) {
        let ov = Overrides { q: None, resolution: 1.0 };
        let mut lines: Vec<String> = plane_text().lines().map(String::from).collect();
        let at = at.min(lines.len());
        lines.insert(at, format!("# {junk}"));
        let text = lines.join("\n");
        prop_assert_eq!(Scenario::from_text(&text, &ov).unwrap().config_hash, Scenario::from_text(plane_text(), &ov).unwrap().config_hash);
    }
}
