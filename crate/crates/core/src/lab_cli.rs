//! Scenario runner: flat key-value configs with `[stratum]` blocks, a fixed analysis
//! pipeline, JSON reports and CSV dumps.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymptotics::*;
use crate::elliptic_solver::*;
use crate::geometry::{tangent_cone, Monomial, StratifiedSet, Stratum};
use crate::solver_core::SolveOptions;
use crate::sphere_link::solve_link_equation;

pub const SCHEMA: u32 = 1;
/// Default output root when `--out` is absent.
pub const OUT_ENV: &str = "YAMABE_LAB_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const BUNDLED: [(&str, &str); 4] = [
    ("plane-oracle", include_str!("../scenarios/plane-oracle.conf")),
    ("point-subthreshold", include_str!("../scenarios/point-subthreshold.conf")),
    ("segment", include_str!("../scenarios/segment.conf")),
    ("line-r4", include_str!("../scenarios/line-r4.conf")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {field}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

fn cerr(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line, field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub top: Vec<Entry>,
    pub strata: Vec<Block>,
}

const TOP_KEYS: &[&str] = &[
    "name", "n", "q", "potential", "grid", "axis", "faces.lo", "faces.hi", "log.base", "log.axis", "log.perp",
    "log.flat", "log.t_min", "log.t_max", "log.nt", "log.ntheta", "schedule.eps0", "schedule.stages", "schedule.m0",
    "schedule.m_growth", "schedule.eps_ratio", "probe", "lower_floor", "solver.rel_tol", "solver.max_sweeps",
    "base_point", "analyses", "tc.eps", "tc.budget", "fit.shell", "fit.box_lo", "fit.box_hi", "sandwich.rho_max",
    "sandwich.shells", "scaling.window", "scaling.avoid", "envelope.theta", "envelope.r_range", "delta.theta",
    "delta.r_range", "path.start", "path.end", "path.samples", "path.ratio", "path.floor", "link.support",
    "link.cells", "link.eps0", "link.stages", "link.band", "verdict.smooth", "verdict.beta_tol", "dump.field",
];
const REPEATABLE: &[&str] = &["axis", "log.flat", "base_point"];
const STRATUM_KEYS: &[&str] = &["kind", "at", "a", "b", "origin", "dir", "reach", "u", "v", "half_width", "coord", "lo", "hi", "boundary", "label"];

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut top: Vec<Entry> = vec![];
        let mut strata: Vec<Block> = vec![];
        let mut in_stratum = false;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let s = raw.split('#').next().unwrap().trim();
            if s.is_empty() {
                continue;
            }
            if s.starts_with('[') {
                match s {
                    "[stratum]" => {
                        strata.push(Block { line, entries: vec![] });
                        in_stratum = true;
                    }
                    "[scenario]" => in_stratum = false,
                    _ => return Err(cerr(line, s, "unknown section (expected [scenario] or [stratum])")),
                }
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| cerr(line, s, "expected `key = value`"))?;
            let key = key.trim().to_string();
            let value = value.split_whitespace().collect::<Vec<_>>().join(" ");
            if key.is_empty() {
                return Err(cerr(line, "", "empty key"));
            }
            let (known, list) = if in_stratum {
                (STRATUM_KEYS, &mut strata.last_mut().unwrap().entries)
            } else {
                (TOP_KEYS, &mut top)
            };
            if !known.contains(&key.as_str()) {
                return Err(cerr(line, &key, "unknown key"));
            }
            let repeatable = if in_stratum { key == "coord" } else { REPEATABLE.contains(&key.as_str()) };
            if !repeatable {
                if let Some(prev) = list.iter().find(|e| e.key == key) {
                    return Err(cerr(line, &key, format!("duplicate key (first set on line {})", prev.line)));
                }
            }
            list.push(Entry { key, value, line });
        }
        Ok(Config { top, strata })
    }

    /// Comment- and layout-independent text: keys sorted stably within each section.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let dump = |out: &mut String, es: &[Entry]| {
            let mut v: Vec<&Entry> = es.iter().collect();
            v.sort_by(|a, b| a.key.cmp(&b.key));
            for e in v {
                let _ = writeln!(out, "{}={}", e.key, e.value);
            }
        };
        dump(&mut out, &self.top);
        for b in &self.strata {
            out.push_str("[stratum]\n");
            dump(&mut out, &b.entries);
        }
        out
    }
}

struct Section<'a> {
    entries: &'a [Entry],
    line: usize,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Option<&'a Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn all(&self, key: &str) -> Vec<&'a Entry> {
        self.entries.iter().filter(|e| e.key == key).collect()
    }

    fn missing(&self, key: &str) -> ConfigError {
        cerr(self.line, key, "required key missing")
    }

    fn str(&self, key: &str) -> Result<&'a str, ConfigError> {
        self.get(key).map(|e| e.value.as_str()).ok_or_else(|| self.missing(key))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|e| num(e, &e.value)).transpose()
    }

    fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.f64_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn f64_or(&self, key: &str, d: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(d))
    }

    fn usize_or(&self, key: &str, d: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(d),
            Some(e) => e.value.parse().map_err(|_| cerr(e.line, key, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    fn bool_or(&self, key: &str, d: bool) -> Result<bool, ConfigError> {
        match self.get(key).map(|e| (e, e.value.as_str())) {
            None => Ok(d),
            Some((_, "true" | "yes")) => Ok(true),
            Some((_, "false" | "no")) => Ok(false),
            Some((e, v)) => Err(cerr(e.line, key, format!("`{v}` is not a boolean"))),
        }
    }

    fn vec_opt(&self, key: &str, len: Option<usize>) -> Result<Option<Vec<f64>>, ConfigError> {
        self.get(key).map(|e| vec_of(e, len)).transpose()
    }

    fn vec(&self, key: &str, len: Option<usize>) -> Result<Vec<f64>, ConfigError> {
        self.vec_opt(key, len)?.ok_or_else(|| self.missing(key))
    }

    fn pair_or(&self, key: &str, d: (f64, f64)) -> Result<(f64, f64), ConfigError> {
        Ok(self.vec_opt(key, Some(2))?.map(|v| (v[0], v[1])).unwrap_or(d))
    }
}

fn num(e: &Entry, s: &str) -> Result<f64, ConfigError> {
    s.parse::<f64>().ok().filter(|v| !v.is_nan()).ok_or_else(|| cerr(e.line, &e.key, format!("`{s}` is not a number")))
}

fn vec_of(e: &Entry, len: Option<usize>) -> Result<Vec<f64>, ConfigError> {
    let v = e.value.split_whitespace().map(|s| num(e, s)).collect::<Result<Vec<_>, _>>()?;
    match len {
        Some(l) if v.len() != l => Err(cerr(e.line, &e.key, format!("expected {l} numbers, got {}", v.len()))),
        _ => Ok(v),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    TangentCone,
    Oracle,
    Exponent,
    Sandwich,
    Scaling,
    Envelope,
    Delta,
    Completeness,
    Link,
    Verdict,
}

impl Analysis {
    fn parse(s: &str) -> Option<Analysis> {
        Some(match s {
            "tangent_cone" => Analysis::TangentCone,
            "oracle" => Analysis::Oracle,
            "exponent" => Analysis::Exponent,
            "sandwich" => Analysis::Sandwich,
            "scaling" => Analysis::Scaling,
            "envelope" => Analysis::Envelope,
            "delta" => Analysis::Delta,
            "completeness" => Analysis::Completeness,
            "link" => Analysis::Link,
            "verdict" => Analysis::Verdict,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Analysis::TangentCone => "tangent_cone",
            Analysis::Oracle => "oracle",
            Analysis::Exponent => "exponent",
            Analysis::Sandwich => "sandwich",
            Analysis::Scaling => "scaling",
            Analysis::Envelope => "envelope",
            Analysis::Delta => "delta",
            Analysis::Completeness => "completeness",
            Analysis::Link => "link",
            Analysis::Verdict => "verdict",
        }
    }

    fn needs_field(self) -> bool {
        !matches!(self, Analysis::TangentCone | Analysis::Link)
    }

    fn needs_log_grid(self) -> bool {
        matches!(self, Analysis::Scaling | Analysis::Envelope | Analysis::Delta)
    }
}

/// Overrides applied on top of a parsed config (sweeps and CLI flags).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overrides {
    pub q: Option<f64>,
    pub resolution: f64,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides { q: None, resolution: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub tc_eps: Vec<f64>,
    pub tc_budget: usize,
    pub fit_shell: (f64, f64),
    pub fit_box: Option<(Vec<f64>, Vec<f64>)>,
    pub sandwich_rho_max: f64,
    pub sandwich_shells: usize,
    pub scaling_window: (f64, f64),
    pub scaling_avoid: f64,
    pub envelope_theta: f64,
    pub envelope_r: (f64, f64),
    pub delta_theta: f64,
    pub delta_r: (f64, f64),
    pub path_start: Option<Vec<f64>>,
    pub path_end: Option<Vec<f64>>,
    pub path_samples: usize,
    pub path_ratio: f64,
    pub path_floor: f64,
    pub link_support: Vec<f64>,
    pub link_cells: usize,
    pub link_eps0: f64,
    pub link_stages: usize,
    pub link_band: (f64, f64),
    pub verdict_smooth: bool,
    pub verdict_beta_tol: f64,
    pub dump_field: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub spec: ProblemSpec,
    pub strata: Vec<String>,
    pub base_points: Vec<Vec<f64>>,
    pub analyses: Vec<Analysis>,
    pub settings: Settings,
    pub resolution: f64,
    pub config_hash: String,
}

fn parse_polynomial(e: &Entry, dim: usize) -> Result<Vec<Monomial>, ConfigError> {
    let mut out = vec![];
    for term in e.value.split('+') {
        let mut parts = term.trim().split('*');
        let coef = num(e, parts.next().unwrap_or("").trim())?;
        let mut pow = vec![0u32; dim];
        for f in parts {
            let f = f.trim();
            let (var, p) = f.split_once('^').unwrap_or((f, "1"));
            let idx: usize = var
                .strip_prefix('s')
                .and_then(|k| k.parse().ok())
                .filter(|&k| k < dim)
                .ok_or_else(|| cerr(e.line, &e.key, format!("bad variable `{var}` (chart has s0..s{})", dim.saturating_sub(1))))?;
            pow[idx] += p.parse::<u32>().map_err(|_| cerr(e.line, &e.key, format!("bad power `{p}`")))?;
        }
        out.push(Monomial { coef, pow });
    }
    Ok(out)
}

fn build_stratum(b: &Block, n: usize) -> Result<Stratum, ConfigError> {
    let s = Section { entries: &b.entries, line: b.line };
    let kind = s.str("kind")?;
    let mut st = match kind {
        "point" => Stratum::point(&s.vec("at", Some(n))?),
        "segment" => Stratum::segment(&s.vec("a", Some(n))?, &s.vec("b", Some(n))?),
        "halfline" => Stratum::half_line(&s.vec("origin", Some(n))?, &s.vec("dir", Some(n))?, s.f64("reach")?),
        "plane-patch" => Stratum::plane_patch(&s.vec("origin", Some(n))?, &s.vec("u", Some(n))?, &s.vec("v", Some(n))?, s.f64_or("half_width", 10.0)?),
        "parametric" => {
            let lo = s.vec("lo", None)?;
            let hi = s.vec("hi", Some(lo.len()))?;
            let coords = s.all("coord");
            if coords.len() != n {
                return Err(cerr(b.line, "coord", format!("need {n} coord lines, got {}", coords.len())));
            }
            let polys = coords.iter().map(|e| parse_polynomial(e, lo.len())).collect::<Result<Vec<_>, _>>()?;
            Stratum::polynomial(polys, &lo, &hi, s.bool_or("boundary", true)?)
        }
        other => return Err(cerr(s.get("kind").unwrap().line, "kind", format!("unknown stratum kind `{other}`"))),
    };
    if let Some(e) = s.get("label") {
        st.label = e.value.clone();
    }
    Ok(st)
}

fn scale_count(n: usize, f: f64) -> usize {
    if n <= 3 {
        n
    } else {
        ((n - 1) as f64 * f).round() as usize + 1
    }
}

fn parse_axis(e: &Entry, f: f64) -> Result<AxisSpec, ConfigError> {
    let t: Vec<&str> = e.value.split_whitespace().collect();
    let nums = |r: std::ops::Range<usize>| t[r].iter().map(|s| num(e, s)).collect::<Result<Vec<_>, _>>();
    match t.first().copied() {
        Some("uniform") if t.len() == 4 => {
            let v = nums(1..3)?;
            let n: usize = t[3].parse().map_err(|_| cerr(e.line, "axis", "node count must be an integer"))?;
            Ok(AxisSpec::Uniform { lo: v[0], hi: v[1], n: scale_count(n, f) })
        }
        Some("graded") if t.len() == 8 => {
            let v = nums(1..6)?;
            let fine: usize = t[6].parse().map_err(|_| cerr(e.line, "axis", "fine count must be an integer"))?;
            let fine_at_lo = match t[7] {
                "lo" => true,
                "hi" => false,
                s => return Err(cerr(e.line, "axis", format!("`{s}` must be lo or hi"))),
            };
            Ok(AxisSpec::Graded { lo: v[0], hi: v[1], h_min: v[2] / f, growth: v[3], h_max: v[4] / f, fine, fine_at_lo })
        }
        _ => Err(cerr(e.line, "axis", "expected `uniform LO HI N` or `graded LO HI H_MIN GROWTH H_MAX FINE lo|hi`")),
    }
}

fn parse_faces(s: &Section, key: &str, n: usize) -> Result<Vec<Face>, ConfigError> {
    match s.get(key) {
        None => Ok(vec![Face::Dirichlet; n]),
        Some(e) => {
            let v = e
                .value
                .split_whitespace()
                .map(|w| match w {
                    "dirichlet" => Ok(Face::Dirichlet),
                    "mirror" => Ok(Face::Mirror),
                    _ => Err(cerr(e.line, key, format!("`{w}` must be dirichlet or mirror"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if v.len() != n {
                return Err(cerr(e.line, key, format!("expected {n} faces, got {}", v.len())));
            }
            Ok(v)
        }
    }
}

fn hash_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Scenario {
    pub fn from_text(text: &str, ov: &Overrides) -> Result<Scenario, ConfigError> {
        Scenario::from_config(&Config::parse(text)?, ov)
    }

    pub fn from_config(cfg: &Config, ov: &Overrides) -> Result<Scenario, ConfigError> {
        let s = Section { entries: &cfg.top, line: 1 };
        let name = s.str("name")?.to_string();
        let n_entry = s.get("n").ok_or_else(|| s.missing("n"))?;
        let n: usize = n_entry.value.parse().map_err(|_| cerr(n_entry.line, "n", "must be an integer"))?;
        if !(3..=5).contains(&n) {
            return Err(cerr(n_entry.line, "n", "ambient dimension must lie in 3..=5"));
        }
        let q = match ov.q {
            Some(q) => q,
            None => s.f64("q")?,
        };
        if !(q > 1.0) {
            let line = s.get("q").map_or(1, |e| e.line);
            return Err(cerr(line, "q", format!("q = {q} must exceed 1")));
        }
        if !(ov.resolution > 0.0) {
            return Err(cerr(0, "resolution", "must be positive"));
        }
        if cfg.strata.is_empty() {
            return Err(cerr(1, "[stratum]", "at least one stratum block is required"));
        }
        let strata = cfg.strata.iter().map(|b| build_stratum(b, n)).collect::<Result<Vec<_>, _>>()?;
        let labels = strata.iter().map(|st| st.label.clone()).collect();
        let gamma = StratifiedSet::new(n, strata).map_err(|e| cerr(cfg.strata[0].line, "[stratum]", e.to_string()))?;
        let f = ov.resolution;
        let grid_kind = s.str("grid")?;
        let grid = match grid_kind {
            "cartesian" => {
                let axes = s.all("axis");
                if axes.len() != n {
                    return Err(cerr(axes.first().map_or(1, |e| e.line), "axis", format!("need {n} axis lines, got {}", axes.len())));
                }
                GridSpec::Cartesian(CartesianSpec {
                    axes: axes.iter().map(|e| parse_axis(e, f)).collect::<Result<Vec<_>, _>>()?,
                    lo_face: parse_faces(&s, "faces.lo", n)?,
                    hi_face: parse_faces(&s, "faces.hi", n)?,
                })
            }
            "logradial" => {
                let nt = s.usize_or("log.nt", 0)?;
                if nt < 3 {
                    return Err(cerr(s.get("log.nt").map_or(1, |e| e.line), "log.nt", "need at least 3 radial nodes"));
                }
                GridSpec::LogRadial(LogRadialSpec {
                    base: s.vec_opt("log.base", Some(n))?.unwrap_or(vec![0.0; n]),
                    axis: s.vec("log.axis", Some(n))?,
                    perp: s.vec("log.perp", Some(n))?,
                    flat: s.all("log.flat").into_iter().map(|e| vec_of(e, Some(n))).collect::<Result<Vec<_>, _>>()?,
                    t_min: s.f64_or("log.t_min", 0.0)?,
                    t_max: s.f64("log.t_max")?,
                    nt: scale_count(nt, f),
                    ntheta: s.usize_or("log.ntheta", 8)?,
                })
            }
            other => return Err(cerr(s.get("grid").unwrap().line, "grid", format!("unknown grid `{other}` (cartesian or logradial)"))),
        };
        let mut spec = ProblemSpec::new(n, q, gamma, grid.clone()).map_err(|e| cerr(1, "n", e.to_string()))?;
        Grid::build(&grid).map_err(|e| cerr(s.get("grid").unwrap().line, "grid", e.to_string()))?;
        spec.s = Potential::Constant(s.f64_or("potential", 0.0)?);
        let stages = s.usize_or("schedule.stages", 4)?;
        if stages < 3 {
            return Err(cerr(s.get("schedule.stages").unwrap().line, "schedule.stages", "need at least 3 stages"));
        }
        let (eps0, m0) = (s.f64_or("schedule.eps0", 0.02)?, s.f64_or("schedule.m0", 10.0)?);
        let (mg, er) = (s.f64_or("schedule.m_growth", 4.0)?, s.f64_or("schedule.eps_ratio", 0.5)?);
        if !(eps0 > 0.0 && m0 > 0.0 && mg >= 1.0 && er > 0.0 && er <= 1.0) {
            return Err(cerr(s.get("schedule.eps0").map_or(1, |e| e.line), "schedule", "need ε₀, m₀ > 0, m_growth ≥ 1, 0 < eps_ratio ≤ 1"));
        }
        spec.schedule = (0..stages).map(|j| Stage { m: m0 * mg.powi(j as i32), eps: eps0 * er.powi(j as i32) }).collect();
        spec.probe = s.pair_or("probe", (0.1, f64::INFINITY))?;
        spec.lower_floor = s.f64_or("lower_floor", 1e-2)?;
        spec.solve = SolveOptions { rel_tol: s.f64_or("solver.rel_tol", 1e-8)?, max_sweeps: s.usize_or("solver.max_sweeps", 200)?, ..SolveOptions::default() };

        let base_points = s.all("base_point").into_iter().map(|e| vec_of(e, Some(n))).collect::<Result<Vec<_>, _>>()?;
        let mut analyses = vec![];
        if let Some(e) = s.get("analyses") {
            for w in e.value.split_whitespace() {
                let a = Analysis::parse(w).ok_or_else(|| cerr(e.line, "analyses", format!("unknown analysis `{w}`")))?;
                if !analyses.contains(&a) {
                    analyses.push(a);
                }
            }
        }
        analyses.sort();
        let aline = s.get("analyses").map_or(1, |e| e.line);
        let has = |a: Analysis| analyses.contains(&a);
        if has(Analysis::Verdict) && !(has(Analysis::Exponent) && has(Analysis::Completeness)) {
            return Err(cerr(aline, "analyses", "verdict needs exponent and completeness"));
        }
        if has(Analysis::TangentCone) && base_points.is_empty() {
            return Err(cerr(aline, "analyses", "tangent_cone needs at least one base_point"));
        }
        if matches!(spec.grid, GridSpec::Cartesian(_)) {
            if let Some(a) = analyses.iter().find(|a| a.needs_log_grid()) {
                return Err(cerr(aline, "analyses", format!("{} needs grid = logradial", a.name())));
            }
        }
        let path_start = s.vec_opt("path.start", Some(n))?;
        let path_end = s.vec_opt("path.end", Some(n))?.or_else(|| base_points.first().cloned());
        if has(Analysis::Completeness) && (path_start.is_none() || path_end.is_none()) {
            return Err(cerr(aline, "analyses", "completeness needs path.start and path.end (or a base_point)"));
        }
        let fit_box = match (s.vec_opt("fit.box_lo", Some(n))?, s.vec_opt("fit.box_hi", Some(n))?) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(cerr(aline, "fit.box_lo", "fit.box_lo and fit.box_hi go together")),
        };
        let env_theta = s.f64_or("envelope.theta", 0.5)?;
        let env_r = s.pair_or("envelope.r_range", (1e-5, 0.1))?;
        let link_support = s.vec_opt("link.support", None)?.unwrap_or_default();
        if has(Analysis::Link) && link_support.is_empty() {
            return Err(cerr(aline, "analyses", "link needs link.support"));
        }
        let settings = Settings {
            tc_eps: s.vec_opt("tc.eps", None)?.unwrap_or(vec![0.1, 0.05, 0.025]),
            tc_budget: s.usize_or("tc.budget", 4000)?,
            fit_shell: s.pair_or("fit.shell", (0.2, 0.5))?,
            fit_box,
            sandwich_rho_max: s.f64_or("sandwich.rho_max", 0.5)?,
            sandwich_shells: s.usize_or("sandwich.shells", 4)?,
            scaling_window: s.pair_or("scaling.window", (2.0, 12.0))?,
            scaling_avoid: s.f64_or("scaling.avoid", 0.1)?,
            envelope_theta: env_theta,
            envelope_r: env_r,
            delta_theta: s.f64_or("delta.theta", env_theta)?,
            delta_r: s.pair_or("delta.r_range", env_r)?,
            path_start,
            path_end,
            path_samples: s.usize_or("path.samples", 400)?,
            path_ratio: s.f64_or("path.ratio", 0.95)?,
            path_floor: s.f64_or("path.floor", 1e-3)?,
            link_support,
            link_cells: scale_count(s.usize_or("link.cells", 201)?, f),
            link_eps0: s.f64_or("link.eps0", 0.05)?,
            link_stages: s.usize_or("link.stages", 4)?,
            link_band: s.pair_or("link.band", (0.02, 0.2))?,
            verdict_smooth: s.bool_or("verdict.smooth", true)?,
            verdict_beta_tol: s.f64_or("verdict.beta_tol", 0.05)?,
            dump_field: s.bool_or("dump.field", true)?,
        };
        let mut canon = cfg.canonical();
        if let Some(q) = ov.q {
            let _ = writeln!(canon, "[override]\nq={q:?}");
        }
        if ov.resolution != 1.0 {
            let _ = writeln!(canon, "[override]\nresolution={:?}", ov.resolution);
        }
        Ok(Scenario { name, spec, strata: labels, base_points, analyses, settings, resolution: f, config_hash: hash_hex(&canon) })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub spec: GridSpec,
    pub nodes: usize,
    pub h_min: f64,
    pub h_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub n: usize,
    pub q: f64,
    pub beta0: f64,
    pub d0: f64,
    pub potential: f64,
    pub strata: Vec<String>,
    pub grid: GridSummary,
    pub schedule: Vec<Stage>,
    pub probe: (f64, f64),
    pub resolution: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub stages: Vec<StageRecord>,
    pub sweeps: Vec<usize>,
    pub cg_iterations: Vec<usize>,
    /// sup over unmasked nodes of ρ^{β₀}u.
    pub apriori_bound: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRecord {
    pub analysis: Analysis,
    pub inputs: Value,
    pub result: Option<Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub name: String,
    pub config_hash: String,
    pub provenance: Provenance,
    pub solve: Option<SolveSummary>,
    pub analyses: Vec<AnalysisRecord>,
    pub profile: Option<BlowupProfile>,
    pub verdict: Option<ThresholdReport>,
    pub status: String,
    pub exit_code: i32,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn record(&self, a: Analysis) -> Option<&AnalysisRecord> {
        self.analyses.iter().find(|r| r.analysis == a)
    }
}

/// Report plus CSV artifacts (file name, contents).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<(String, String)>,
    pub field: Option<ScalarField>,
}

fn in_box(x: &[f64], b: &Option<(Vec<f64>, Vec<f64>)>) -> bool {
    match b {
        None => true,
        Some((lo, hi)) => x.iter().zip(lo).zip(hi).all(|((v, l), h)| v >= l && v <= h),
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("serialisable")
}

/// Runs the pipeline: tangent cones, the maximal solution, then the field analyses in
/// dependency order. `budget` caps wall time in seconds.
pub fn run_scenario(sc: &Scenario, budget: Option<f64>) -> RunOutput {
    let started = Instant::now();
    let spec = &sc.spec;
    let st = &sc.settings;
    let grid = Grid::build(&spec.grid).expect("validated at parse time");
    let provenance = Provenance {
        n: spec.n,
        q: spec.q,
        beta0: spec.beta0(),
        d0: spec.d0(),
        potential: spec.s.at(&vec![0.0; spec.n]),
        strata: sc.strata.clone(),
        grid: GridSummary { spec: spec.grid.clone(), nodes: grid.n_nodes(), h_min: grid.h_min(), h_max: grid.h_max() },
        schedule: spec.schedule.clone(),
        probe: spec.probe,
        resolution: sc.resolution,
    };
    let mut records: Vec<AnalysisRecord> = vec![];
    let mut artifacts: Vec<(String, String)> = vec![];
    let mut numerical = false;
    let mut assertion = false;
    let push = |records: &mut Vec<AnalysisRecord>, numerical: &mut bool, a: Analysis, inputs: Value, r: Result<Value, String>| {
        let (result, error) = match r {
            Ok(v) => (Some(v), None),
            Err(e) => {
                *numerical = true;
                (None, Some(e))
            }
        };
        records.push(AnalysisRecord { analysis: a, inputs, result, error });
    };

    let mut cone_dim: Option<usize> = None;
    if sc.analyses.contains(&Analysis::TangentCone) {
        let mut out = vec![];
        let mut err = None;
        for p in &sc.base_points {
            match tangent_cone(&spec.gamma, p, &st.tc_eps, st.tc_budget) {
                Ok(tc) => {
                    cone_dim.get_or_insert(tc.dim);
                    out.push(json!({
                        "base_point": p,
                        "dim": tc.dim,
                        "link_dim": tc.link.dim_estimate,
                        "directions": tc.link.directions.len(),
                        "angular_spread": tc.link.angular_spread(),
                        "box_dim": tc.link.box_dim,
                        "hausdorff_steps": tc.link.hausdorff_steps,
                    }));
                }
                Err(e) => err = Some(format!("base point {p:?}: {e}")),
            }
        }
        let inputs = json!({"base_points": sc.base_points, "eps": st.tc_eps, "budget": st.tc_budget});
        push(&mut records, &mut numerical, Analysis::TangentCone, inputs, err.map_or(Ok(Value::Array(out)), Err));
    }

    let mut solve_summary = None;
    let mut field: Option<ScalarField> = None;
    if sc.analyses.iter().any(|a| a.needs_field()) {
        let mut spec = spec.clone();
        spec.solve.wall_budget = budget;
        match maximal_solution(&spec) {
            Ok(sol) => {
                let over = budget.is_some_and(|b| started.elapsed().as_secs_f64() > b);
                solve_summary = Some(SolveSummary {
                    stages: sol.stages.clone(),
                    sweeps: sol.reports.iter().map(|r| r.iterations).collect(),
                    cg_iterations: sol.reports.iter().map(|r| r.cg_iterations).collect(),
                    apriori_bound: apriori_bound(&sol.field),
                    error: over.then(|| "wall budget exceeded".to_string()),
                });
                if over {
                    numerical = true;
                } else {
                    field = Some(sol.field);
                }
            }
            Err(e) => {
                numerical = true;
                solve_summary = Some(SolveSummary { stages: vec![], sweeps: vec![], cg_iterations: vec![], apriori_bound: f64::NAN, error: Some(e.to_string()) });
            }
        }
    }
    if let (Some(f), true) = (&field, st.dump_field) {
        artifacts.push(("field.csv".into(), f.to_csv()));
    }

    let b0 = spec.beta0();
    let mut fit = None;
    let mut sandwich = None;
    let mut delta = None;
    let mut completeness = None;
    for &a in &sc.analyses {
        if a == Analysis::TangentCone || a == Analysis::Verdict {
            continue;
        }
        let f = match (&field, a.needs_field()) {
            (Some(f), _) => Some(f),
            (None, false) => None,
            (None, true) => {
                push(&mut records, &mut numerical, a, Value::Null, Err("no field (solve failed)".into()));
                continue;
            }
        };
        let (inputs, res): (Value, Result<Value, String>) = match a {
            Analysis::Oracle => {
                let f = f.unwrap();
                let c = half_space_constant(spec.q).unwrap();
                let mut worst: f64 = 0.0;
                let mut count = 0;
                for i in 0..f.values.len() {
                    let r = f.rho[i];
                    if f.mask[i] || r < st.fit_shell.0 || r > st.fit_shell.1 || !in_box(&f.grid.coords(i), &st.fit_box) {
                        continue;
                    }
                    worst = worst.max((f.values[i] / (c * r.powf(-b0)) - 1.0).abs());
                    count += 1;
                }
                let inputs = json!({"shell": st.fit_shell, "constant": c, "beta0": b0});
                let res = if count == 0 { Err("no nodes in the oracle shell".into()) } else { Ok(json!({"max_rel_error": worst, "nodes": count})) };
                (inputs, res)
            }
            Analysis::Exponent => {
                let r = fit_exponent_where(f.unwrap(), st.fit_shell, |x| in_box(x, &st.fit_box));
                fit = r.as_ref().ok().copied();
                (json!({"shell": st.fit_shell, "box": st.fit_box}), r.map(|v| to_value(&v)).map_err(|e| e.to_string()))
            }
            Analysis::Sandwich => {
                let stats = shell_statistics(f.unwrap(), st.sandwich_rho_max, st.sandwich_shells, |x| in_box(x, &st.fit_box));
                let mut csv = String::from("lo,hi,min,max,count\n");
                for s in &stats {
                    let _ = writeln!(csv, "{:e},{:e},{:e},{:e},{}", s.lo, s.hi, s.min, s.max, s.count);
                }
                artifacts.push(("shells.csv".into(), csv));
                sandwich = sandwich_test(&stats);
                let inputs = json!({"rho_max": st.sandwich_rho_max, "shells": st.sandwich_shells, "box": st.fit_box});
                let res = match sandwich {
                    Some(t) => Ok(json!({"stats": stats, "test": t})),
                    None => Err(format!("only {} populated shells", stats.len())),
                };
                (inputs, res)
            }
            Analysis::Scaling => {
                let r = scaling_limit(f.unwrap(), st.scaling_window, st.scaling_avoid);
                if let Ok(l) = &r {
                    artifacts.push(("scaling.csv".into(), scaling_limit_csv(l)));
                }
                (json!({"t_window": st.scaling_window, "avoid": st.scaling_avoid}), r.map(|v| to_value(&v)).map_err(|e| e.to_string()))
            }
            Analysis::Envelope => {
                let r = envelope(f.unwrap(), st.envelope_theta, st.envelope_r);
                let res = r.map(|env| {
                    artifacts.push(("envelope.csv".into(), envelope_csv(&env)));
                    json!({
                        "a_limit": env.a_limit,
                        "b_limit": env.b_limit,
                        "a_residual": env.a_residual,
                        "b_residual": env.b_residual,
                        "decay": classify_decay(&env),
                    })
                });
                (json!({"theta": st.envelope_theta, "r_range": st.envelope_r}), res.map_err(|e| e.to_string()))
            }
            Analysis::Delta => {
                let r = delta_witness(f.unwrap(), st.delta_theta, st.delta_r);
                delta = r.as_ref().ok().cloned();
                (json!({"theta": st.delta_theta, "r_range": st.delta_r}), r.map(|v| to_value(&v)).map_err(|e| e.to_string()))
            }
            Analysis::Completeness => {
                let (s0, s1) = (st.path_start.as_ref().unwrap(), st.path_end.as_ref().unwrap());
                let path = geometric_path(s0, s1, st.path_samples, st.path_ratio);
                let r = completeness_length(f.unwrap(), &path, st.path_floor);
                completeness = r.as_ref().ok().cloned();
                let inputs = json!({"start": s0, "end": s1, "samples": st.path_samples, "ratio": st.path_ratio, "floor": st.path_floor});
                (inputs, r.map(|c| json!({"complete": c.is_complete(), "detail": c})).map_err(|e| e.to_string()))
            }
            Analysis::Link => {
                let sched = default_schedule(st.link_eps0, st.link_stages);
                let mut opts = spec.solve.clone();
                opts.wall_budget = budget;
                let inputs = json!({"support": st.link_support, "cells": st.link_cells, "schedule": sched, "band": st.link_band});
                let r = solve_link_equation(spec.n, spec.q, &st.link_support, st.link_cells, &sched, &opts);
                let res = r.map_err(|e| e.to_string()).and_then(|sol| {
                    artifacts.push(("link.csv".into(), sol.to_csv()));
                    let c = half_space_constant(spec.q).unwrap();
                    let ratios: Vec<f64> = (0..sol.v.len())
                        .filter(|&j| !sol.mask[j] && sol.sigma[j] >= st.link_band.0 && sol.sigma[j] <= st.link_band.1)
                        .map(|j| sol.sigma[j].powf(b0) * sol.v[j] / c)
                        .collect();
                    if ratios.is_empty() {
                        return Err("no cells in link.band".to_string());
                    }
                    Ok(json!({
                        "apriori": sol.apriori,
                        "beta_fit": sol.beta_fit(st.link_band),
                        "ratio_min": ratios.iter().copied().fold(f64::INFINITY, f64::min),
                        "ratio_max": ratios.iter().copied().fold(0.0, f64::max),
                        "cells_in_band": ratios.len(),
                    }))
                });
                (inputs, res)
            }
            Analysis::TangentCone | Analysis::Verdict => unreachable!(),
        };
        push(&mut records, &mut numerical, a, inputs, res);
    }

    let mut profile = None;
    let mut verdict = None;
    if sc.analyses.contains(&Analysis::Verdict) {
        let dim = cone_dim.unwrap_or(spec.gamma.dim());
        let inputs = json!({
            "dim": dim,
            "dim_source": if cone_dim.is_some() { "tangent_cone" } else { "strata" },
            "smooth": st.verdict_smooth,
            "beta_tol": st.verdict_beta_tol,
        });
        let res = match (&fit, &completeness) {
            (Some(fi), Some(c)) => match BlowupProfile::assemble(*fi, b0, st.verdict_beta_tol, sandwich, delta.as_ref(), c) {
                Ok(p) => {
                    let v = threshold_verdict(spec.n, spec.q, dim, st.verdict_smooth, &p).map_err(|e| e.to_string());
                    profile = Some(p);
                    if let Ok(t) = &v {
                        assertion |= !t.consistent;
                        verdict = Some(t.clone());
                    }
                    v.map(|t| to_value(&t))
                }
                Err(e) => {
                    assertion = true;
                    records.push(AnalysisRecord { analysis: Analysis::Verdict, inputs: inputs.clone(), result: None, error: Some(e.to_string()) });
                    Err(String::new())
                }
            },
            _ => Err("exponent or completeness unavailable".to_string()),
        };
        match res {
            Ok(v) => records.push(AnalysisRecord { analysis: Analysis::Verdict, inputs, result: Some(v), error: None }),
            Err(e) if !e.is_empty() => push(&mut records, &mut numerical, Analysis::Verdict, inputs, Err(e)),
            Err(_) => {}
        }
    }

    let (status, exit_code) = if numerical {
        ("numerical_failure", EXIT_NUMERICAL)
    } else if assertion {
        ("assertion_failure", EXIT_ASSERTION)
    } else {
        ("ok", EXIT_OK)
    };
    let report = RunReport {
        schema: SCHEMA,
        name: sc.name.clone(),
        config_hash: sc.config_hash.clone(),
        provenance,
        solve: solve_summary,
        analyses: records,
        profile,
        verdict,
        status: status.into(),
        exit_code,
    };
    RunOutput { report, artifacts, field }
}

pub fn write_run(dir: &Path, out: &RunOutput) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    std::fs::write(&path, out.report.to_json())?;
    for (name, body) in &out.artifacts {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    Q(Vec<f64>),
    Resolution(Vec<f64>),
}

pub fn parse_param(s: &str) -> Result<SweepParam, ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| cerr(0, "--param", "expected NAME=V1,V2,..."))?;
    let vals = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| cerr(0, "--param", format!("`{t}` is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    match k.trim() {
        "q" => Ok(SweepParam::Q(vals)),
        "resolution" => Ok(SweepParam::Resolution(vals)),
        other => Err(cerr(0, "--param", format!("cannot sweep `{other}` (q or resolution)"))),
    }
}

pub const SWEEP_HEADER: &str = "q,beta0,d0,dim,beta_fit,complete,regime,status";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub q: f64,
    pub resolution: f64,
    pub beta0: f64,
    pub d0: f64,
    pub dim: Option<usize>,
    pub beta_fit: Option<f64>,
    pub complete: Option<bool>,
    pub regime: Option<Regime>,
    pub status: String,
    pub exit_code: i32,
}

impl SweepRow {
    fn csv(&self) -> String {
        let o = |v: Option<String>| v.unwrap_or_default();
        let regime = self.regime.map(|r| match r {
            Regime::Below => "below".to_string(),
            Regime::Critical => "critical".to_string(),
            Regime::Above => "above".to_string(),
        });
        format!(
            "{},{},{},{},{},{},{},{}",
            self.q,
            self.beta0,
            self.d0,
            o(self.dim.map(|d| d.to_string())),
            o(self.beta_fit.map(|b| b.to_string())),
            o(self.complete.map(|c| c.to_string())),
            o(regime),
            self.status.replace(',', ";"),
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

fn row_from(report: &RunReport, resolution: f64) -> SweepRow {
    let p = &report.provenance;
    let dim = report
        .verdict
        .as_ref()
        .map(|v| v.dim)
        .or_else(|| report.record(Analysis::TangentCone).and_then(|r| r.result.as_ref()?.get(0)?.get("dim")?.as_u64()).map(|d| d as usize));
    let beta_fit = report.record(Analysis::Exponent).and_then(|r| r.result.as_ref()?.get("beta_fit")?.as_f64());
    let complete = report.record(Analysis::Completeness).and_then(|r| r.result.as_ref()?.get("complete")?.as_bool());
    let errors: Vec<String> = report
        .analyses
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.analysis.name())))
        .chain(report.solve.as_ref().and_then(|s| s.error.clone()).map(|e| format!("solve: {e}")))
        .collect();
    let status = if errors.is_empty() { report.status.clone() } else { format!("{}: {}", report.status, errors.join("; ")) };
    SweepRow {
        q: p.q,
        resolution,
        beta0: p.beta0,
        d0: p.d0,
        dim,
        beta_fit,
        complete,
        regime: report.verdict.as_ref().map(|v| v.regime),
        status,
        exit_code: report.exit_code,
    }
}

/// One run per grid value; failures stay in their rows.
pub fn run_sweep(cfg: &Config, param: &SweepParam, base: &Overrides, budget: Option<f64>) -> Result<Vec<(SweepRow, RunOutput)>, ConfigError> {
    let overrides: Vec<Overrides> = match param {
        SweepParam::Q(v) => v.iter().map(|&q| Overrides { q: Some(q), ..*base }).collect(),
        SweepParam::Resolution(v) => v.iter().map(|&r| Overrides { resolution: base.resolution * r, ..*base }).collect(),
    };
    let scenarios = overrides.iter().map(|o| Scenario::from_config(cfg, o)).collect::<Result<Vec<_>, _>>()?;
    Ok(scenarios
        .iter()
        .map(|sc| {
            let out = run_scenario(sc, budget);
            (row_from(&out.report, sc.resolution), out)
        })
        .collect())
}

#[derive(Debug, Parser)]
#[command(name = "yamabe-lab", about = "Boundary blow-up experiments near singular sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory (default: $YAMABE_LAB_OUT/<name> or ./lab-out/<name>)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Wall-clock budget in seconds
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    /// Grid refinement factor applied to node counts and spacings
    #[arg(long, global = true, default_value_t = 1.0)]
    pub resolution: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario (file path or bundled name)
    Run { config: String },
    /// Run a scenario over a parameter grid, e.g. --param q=2.5,3,4
    Sweep {
        config: String,
        #[arg(long)]
        param: String,
    },
    /// List bundled scenarios
    List,
}

fn load(config: &str) -> Result<(String, String), String> {
    let p = Path::new(config);
    if p.is_file() {
        return std::fs::read_to_string(p).map(|t| (t, config.to_string())).map_err(|e| format!("{config}: {e}"));
    }
    bundled(config).map(|t| (t.to_string(), format!("<bundled {config}>"))).ok_or_else(|| format!("{config}: no such file or bundled scenario"))
}

fn out_dir(cli_out: &Option<PathBuf>, name: &str) -> PathBuf {
    match cli_out {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("lab-out")).join(name),
    }
}

/// CLI entry point; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let base = Overrides { q: None, resolution: cli.resolution };
    match &cli.command {
        Command::List => {
            for (n, _) in BUNDLED {
                println!("{n}");
            }
            EXIT_OK
        }
        Command::Run { config } => {
            let (text, origin) = match load(config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let sc = match Scenario::from_text(&text, &base) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("config error in {origin}: {e}");
                    return EXIT_CONFIG;
                }
            };
            let t = Instant::now();
            let out = run_scenario(&sc, cli.budget);
            eprintln!("{}: {:.1}s", sc.name, t.elapsed().as_secs_f64());
            let dir = out_dir(&cli.out, &sc.name);
            match write_run(&dir, &out) {
                Ok(p) => println!("{} {} -> {}", sc.name, out.report.status, p.display()),
                Err(e) => {
                    eprintln!("cannot write {}: {e}", dir.display());
                    return EXIT_NUMERICAL.max(out.report.exit_code);
                }
            }
            for r in &out.report.analyses {
                if let Some(e) = &r.error {
                    eprintln!("{}: {e}", r.analysis.name());
                }
            }
            out.report.exit_code
        }
        Command::Sweep { config, param } => {
            let param = match parse_param(param) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("usage error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let (text, origin) = match load(config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let cfg = match Config::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error in {origin}: {e}");
                    return EXIT_CONFIG;
                }
            };
            let name = Section { entries: &cfg.top, line: 1 }.str("name").unwrap_or("sweep").to_string();
            let t = Instant::now();
            let runs = match run_sweep(&cfg, &param, &base, cli.budget) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("config error in {origin}: {e}");
                    return EXIT_CONFIG;
                }
            };
            eprintln!("{name} sweep: {} runs, {:.1}s", runs.len(), t.elapsed().as_secs_f64());
            let dir = out_dir(&cli.out, &format!("{name}-sweep"));
            let rows: Vec<SweepRow> = runs.iter().map(|(r, _)| r.clone()).collect();
            let mut summary: BTreeMap<&str, usize> = BTreeMap::new();
            let written = (|| -> std::io::Result<PathBuf> {
                std::fs::create_dir_all(&dir)?;
                for (k, (_, out)) in runs.iter().enumerate() {
                    write_run(&dir.join(format!("run-{k:02}")), out)?;
                }
                let p = dir.join("sweep.csv");
                std::fs::write(&p, sweep_csv(&rows))?;
                Ok(p)
            })();
            match written {
                Ok(p) => println!("{name} sweep -> {}", p.display()),
                Err(e) => {
                    eprintln!("cannot write {}: {e}", dir.display());
                    return EXIT_NUMERICAL;
                }
            }
            for r in &rows {
                *summary.entry(r.status.split(':').next().unwrap_or("")).or_default() += 1;
            }
            for (s, c) in summary {
                eprintln!("  {s}: {c}");
            }
            rows.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_OK)
        }
    }
}
