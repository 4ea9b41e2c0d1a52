//! Stratified singular sets: distance queries, ε-links, essential links and
//! tangent-cone dimension on a flat background.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("singular set has no strata")]
    EmptySingularSet,
    #[error("projection requested at the base point")]
    ProjectionAtBasePoint,
    #[error("|x - p| = {dist} is not below r0 = {r0}")]
    OutsideInjectivityRadius { dist: f64, r0: f64 },
    #[error("link not converged, hausdorff steps {0:?}")]
    LinkNotConverged(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid stratum: {0}")]
    InvalidStratum(String),
    #[error("invalid epsilon sequence: {0}")]
    BadEpsilonSequence(String),
}

pub type ChartFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One monomial `coef * Π s_i^{pow_i}` of a polynomial chart coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monomial {
    pub coef: f64,
    pub pow: Vec<u32>,
}

#[derive(Clone)]
pub enum Chart {
    Point(Vec<f64>),
    /// s ∈ [0,1] ↦ a + s (b − a)
    Segment { a: Vec<f64>, b: Vec<f64> },
    /// t ∈ [0, reach] ↦ origin + t dir. Distances treat the half-line as unbounded.
    HalfLine { origin: Vec<f64>, dir: Vec<f64>, reach: f64 },
    /// (a, b) ∈ [−w, w]² ↦ origin + a e1 + b e2, with e1, e2 orthonormal.
    PlanePatch { origin: Vec<f64>, e1: Vec<f64>, e2: Vec<f64>, half_width: f64 },
    /// One polynomial per ambient coordinate.
    Polynomial(Vec<Vec<Monomial>>),
    Custom(ChartFn),
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Chart::Point(p) => write!(f, "Point({p:?})"),
            Chart::Segment { a, b } => write!(f, "Segment({a:?}, {b:?})"),
            Chart::HalfLine { origin, dir, .. } => write!(f, "HalfLine({origin:?}, {dir:?})"),
            Chart::PlanePatch { origin, e1, e2, half_width } => {
                write!(f, "PlanePatch({origin:?}, {e1:?}, {e2:?}, {half_width})")
            }
            Chart::Polynomial(p) => write!(f, "Polynomial({} coords)", p.len()),
            Chart::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stratum {
    pub dim: usize,
    pub chart: Chart,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub boundary_flag: bool,
    pub label: String,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Angle between unit vectors, accurate for nearly parallel inputs.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    2.0 * (0.5 * dist(a, b)).min(1.0).asin()
}

impl Stratum {
    pub fn point(p: &[f64]) -> Self {
        Stratum { dim: 0, chart: Chart::Point(p.to_vec()), lo: vec![], hi: vec![], boundary_flag: true, label: "point".into() }
    }

    pub fn segment(a: &[f64], b: &[f64]) -> Self {
        Stratum {
            dim: 1,
            chart: Chart::Segment { a: a.to_vec(), b: b.to_vec() },
            lo: vec![0.0],
            hi: vec![1.0],
            boundary_flag: true,
            label: "segment".into(),
        }
    }

    pub fn half_line(origin: &[f64], dir: &[f64], reach: f64) -> Self {
        let nd = norm(dir);
        let dir: Vec<f64> = dir.iter().map(|d| d / nd).collect();
        Stratum {
            dim: 1,
            chart: Chart::HalfLine { origin: origin.to_vec(), dir, reach },
            lo: vec![0.0],
            hi: vec![reach],
            boundary_flag: true,
            label: "halfline".into(),
        }
    }

    /// Square patch spanned by `u`, `v` (orthonormalised here).
    pub fn plane_patch(origin: &[f64], u: &[f64], v: &[f64], half_width: f64) -> Self {
        let nu = norm(u);
        let e1: Vec<f64> = u.iter().map(|x| x / nu).collect();
        let c = dot(v, &e1);
        let w: Vec<f64> = v.iter().zip(&e1).map(|(x, e)| x - c * e).collect();
        let nw = norm(&w);
        let e2: Vec<f64> = w.iter().map(|x| x / nw).collect();
        Stratum {
            dim: 2,
            chart: Chart::PlanePatch { origin: origin.to_vec(), e1, e2, half_width },
            lo: vec![-half_width; 2],
            hi: vec![half_width; 2],
            boundary_flag: true,
            label: "plane".into(),
        }
    }

    pub fn polynomial(coords: Vec<Vec<Monomial>>, lo: &[f64], hi: &[f64], boundary_flag: bool) -> Self {
        Stratum {
            dim: lo.len(),
            chart: Chart::Polynomial(coords),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            boundary_flag,
            label: "parametric".into(),
        }
    }

    pub fn custom<F>(f: F, lo: &[f64], hi: &[f64], boundary_flag: bool, label: &str) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Stratum { dim: lo.len(), chart: Chart::Custom(Arc::new(f)), lo: lo.to_vec(), hi: hi.to_vec(), boundary_flag, label: label.into() }
    }

    pub fn eval(&self, s: &[f64]) -> Vec<f64> {
        match &self.chart {
            Chart::Point(p) => p.clone(),
            Chart::Segment { a, b } => a.iter().zip(b).map(|(x, y)| x + s[0] * (y - x)).collect(),
            Chart::HalfLine { origin, dir, .. } => origin.iter().zip(dir).map(|(o, d)| o + s[0] * d).collect(),
            Chart::PlanePatch { origin, e1, e2, .. } => {
                (0..origin.len()).map(|i| origin[i] + s[0] * e1[i] + s[1] * e2[i]).collect()
            }
            Chart::Polynomial(coords) => coords
                .iter()
                .map(|poly| {
                    poly.iter()
                        .map(|m| m.coef * m.pow.iter().zip(s).map(|(&k, &x)| x.powi(k as i32)).product::<f64>())
                        .sum()
                })
                .collect(),
            Chart::Custom(f) => f(s),
        }
    }

    /// Exact distance for the affine kinds, `None` for general charts.
    fn exact_distance(&self, x: &[f64]) -> Option<f64> {
        match &self.chart {
            Chart::Point(p) => Some(dist(x, p)),
            Chart::Segment { a, b } => {
                let ab = sub(b, a);
                let l2 = dot(&ab, &ab);
                let t = if l2 > 0.0 { (dot(&sub(x, a), &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
                Some(dist(x, &self.eval(&[t])))
            }
            Chart::HalfLine { origin, dir, .. } => {
                let t = dot(&sub(x, origin), dir).max(0.0);
                Some(dist(x, &self.eval(&[t])))
            }
            Chart::PlanePatch { origin, e1, e2, half_width } => {
                let d = sub(x, origin);
                let a = dot(&d, e1).clamp(-half_width, *half_width);
                let b = dot(&d, e2).clamp(-half_width, *half_width);
                Some(dist(x, &self.eval(&[a, b])))
            }
            _ => None,
        }
    }

    /// Projected Levenberg–Marquardt minimisation of |c(s) − x|² from `s0`.
    fn refine(&self, x: &[f64], s0: &[f64]) -> (Vec<f64>, f64) {
        let k = self.dim;
        let mut s = s0.to_vec();
        let mut r = sub(&self.eval(&s), x);
        let mut f = dot(&r, &r);
        let mut mu = 1e-6;
        for _ in 0..60 {
            let mut jac = vec![vec![0.0; x.len()]; k];
            for i in 0..k {
                let step = 1e-7 * (1.0 + (self.hi[i] - self.lo[i]).abs());
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[i] = (s[i] + step).min(self.hi[i]);
                sm[i] = (s[i] - step).max(self.lo[i]);
                let (cp, cm) = (self.eval(&sp), self.eval(&sm));
                let ds = sp[i] - sm[i];
                if ds > 0.0 {
                    jac[i] = cp.iter().zip(&cm).map(|(a, b)| (a - b) / ds).collect();
                }
            }
            let mut a = vec![vec![0.0; k]; k];
            let mut g = vec![0.0; k];
            for i in 0..k {
                g[i] = dot(&jac[i], &r);
                for j in 0..k {
                    a[i][j] = dot(&jac[i], &jac[j]);
                }
            }
            let mut improved = false;
            for _ in 0..12 {
                let mut m = a.clone();
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] += mu * (1.0 + a[i][i]);
                }
                let Some(delta) = solve_small(m, g.iter().map(|v| -v).collect()) else { break };
                let trial: Vec<f64> =
                    (0..k).map(|i| (s[i] + delta[i]).clamp(self.lo[i], self.hi[i])).collect();
                let rt = sub(&self.eval(&trial), x);
                let ft = dot(&rt, &rt);
                if ft < f {
                    let gain = f - ft;
                    s = trial;
                    r = rt;
                    f = ft;
                    mu = (mu * 0.3).max(1e-12);
                    improved = gain > 1e-30 * (1.0 + f);
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (s, f.sqrt())
    }
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Tensor grid of parameter samples (cell centres plus, with the frontier flag, the faces).
fn param_grid(lo: &[f64], hi: &[f64], per_axis: usize, with_frontier: bool) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| {
            if with_frontier {
                (0..per_axis).map(|i| a + (b - a) * i as f64 / (per_axis - 1).max(1) as f64).collect()
            } else {
                (0..per_axis).map(|i| a + (b - a) * (i as f64 + 0.5) / per_axis as f64).collect()
            }
        })
        .collect();
    let mut out = vec![vec![]];
    for ax in &axes {
        let mut next = Vec::with_capacity(out.len() * ax.len());
        for p in &out {
            for &v in ax {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone)]
struct SampleCache {
    params: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StratifiedSet {
    pub ambient_dim: usize,
    pub strata: Vec<Stratum>,
    caches: Vec<SampleCache>,
}

/// Per-axis sample counts for the distance cache: about `budget` samples per stratum.
fn samples_per_axis(dim: usize, budget: usize) -> usize {
    if dim == 0 {
        return 1;
    }
    ((budget as f64).powf(1.0 / dim as f64).floor() as usize).clamp(2, 4096)
}

impl StratifiedSet {
    pub fn new(ambient_dim: usize, strata: Vec<Stratum>) -> Result<Self, GeometryError> {
        Self::with_sampling(ambient_dim, strata, 20_000)
    }

    /// `budget` controls the sample count per general stratum used to seed distance refinement.
    pub fn with_sampling(ambient_dim: usize, strata: Vec<Stratum>, budget: usize) -> Result<Self, GeometryError> {
        if strata.is_empty() {
            return Err(GeometryError::EmptySingularSet);
        }
        let mut caches = Vec::with_capacity(strata.len());
        for st in &strata {
            if st.dim >= ambient_dim {
                return Err(GeometryError::InvalidStratum(format!(
                    "stratum dim {} not below ambient dim {}",
                    st.dim, ambient_dim
                )));
            }
            if st.lo.len() != st.dim || st.hi.len() != st.dim {
                return Err(GeometryError::InvalidStratum("parameter box does not match dim".into()));
            }
            if st.lo.iter().zip(&st.hi).any(|(a, b)| !(a < b)) {
                return Err(GeometryError::InvalidStratum("empty parameter box".into()));
            }
            let probe = st.eval(&st.lo);
            if probe.len() != ambient_dim {
                return Err(GeometryError::DimensionMismatch { expected: ambient_dim, got: probe.len() });
            }
            let cache = if st.exact_distance(&probe).is_some() {
                SampleCache { params: vec![], points: vec![] }
            } else {
                let params = param_grid(&st.lo, &st.hi, samples_per_axis(st.dim, budget), true);
                let points = params.iter().map(|s| st.eval(s)).collect();
                SampleCache { params, points }
            };
            caches.push(cache);
        }
        Ok(StratifiedSet { ambient_dim, strata, caches })
    }

    /// Stratified dimension: the largest stratum dimension.
    pub fn dim(&self) -> usize {
        self.strata.iter().map(|s| s.dim).max().unwrap_or(0)
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.strata.iter().enumerate().map(|(i, _)| self.stratum_distance(i, x)).fold(f64::INFINITY, f64::min)
    }

    fn stratum_distance(&self, idx: usize, x: &[f64]) -> f64 {
        let st = &self.strata[idx];
        if let Some(d) = st.exact_distance(x) {
            return d;
        }
        let cache = &self.caches[idx];
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(4);
        for (j, p) in cache.points.iter().enumerate() {
            let d = dist(p, x);
            if best.len() < 3 || d < best[best.len() - 1].0 {
                best.push((d, j));
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
                best.truncate(3);
            }
        }
        let mut d_min = best.first().map(|b| b.0).unwrap_or(f64::INFINITY);
        for &(_, j) in &best {
            let (_, d) = st.refine(x, &cache.params[j]);
            d_min = d_min.min(d);
        }
        d_min
    }

    /// Sampled closedness check: frontier samples of strata whose chart excludes its
    /// frontier must lie within `tol` of the union. Returns offending (stratum, point) pairs.
    pub fn frontier_gaps(&self, tol: f64, per_axis: usize) -> Vec<(usize, Vec<f64>)> {
        let mut gaps = vec![];
        for (i, st) in self.strata.iter().enumerate() {
            if st.boundary_flag || st.dim == 0 {
                continue;
            }
            for s in param_grid(&st.lo, &st.hi, per_axis, true) {
                let on_face = s.iter().zip(st.lo.iter().zip(&st.hi)).any(|(v, (a, b))| v == a || v == b);
                if !on_face {
                    continue;
                }
                let x = st.eval(&s);
                let d = self
                    .strata
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, _)| self.stratum_distance(j, &x))
                    .fold(f64::INFINITY, f64::min);
                if d > tol {
                    gaps.push((i, x));
                }
            }
        }
        gaps
    }

    /// Sampled axiom-of-frontier diagnostic: pairs (α, β) where some sample of α meets
    /// clos(β) but not all of α's samples do.
    pub fn frontier_axiom_violations(&self, tol: f64, per_axis: usize) -> Vec<(usize, usize)> {
        let samples: Vec<Vec<Vec<f64>>> = self
            .strata
            .iter()
            .map(|st| param_grid(&st.lo, &st.hi, per_axis, true).iter().map(|s| st.eval(s)).collect())
            .collect();
        let mut bad = vec![];
        for a in 0..self.strata.len() {
            for b in 0..self.strata.len() {
                if a == b || self.strata[a].dim >= self.strata[b].dim {
                    continue;
                }
                let near: Vec<bool> = samples[a].iter().map(|x| self.stratum_distance(b, x) <= tol).collect();
                if near.iter().any(|&v| v) && !near.iter().all(|&v| v) {
                    bad.push((a, b));
                }
            }
        }
        bad
    }
}

impl Stratum {
    /// Sampled injectivity check on the open parameter cube: no two samples further than
    /// `h` apart in parameter space map within `h/10` of each other.
    pub fn is_injective_sampled(&self, h: f64) -> bool {
        if self.dim == 0 {
            return true;
        }
        let per_axis = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| ((b - a) / h).ceil() as usize)
            .max()
            .unwrap_or(2)
            .clamp(2, 200);
        let params = param_grid(&self.lo, &self.hi, per_axis, false);
        let pts: Vec<Vec<f64>> = params.iter().map(|s| self.eval(s)).collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if dist(&params[i], &params[j]) > h && dist(&pts[i], &pts[j]) < h / 10.0 {
                    return false;
                }
            }
        }
        true
    }
}

pub fn distance_to_set(x: &[f64], gamma: &StratifiedSet) -> Result<f64, GeometryError> {
    if gamma.strata.is_empty() {
        return Err(GeometryError::EmptySingularSet);
    }
    if x.len() != gamma.ambient_dim {
        return Err(GeometryError::DimensionMismatch { expected: gamma.ambient_dim, got: x.len() });
    }
    Ok(gamma.distance(x))
}

/// Half the inradius of an axis-aligned box, the default query radius r₀.
pub fn default_r0(lo: &[f64], hi: &[f64]) -> f64 {
    0.5 * lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min)
}

pub fn omega_projection(x: &[f64], p: &[f64], r0: f64) -> Result<Vec<f64>, GeometryError> {
    let v = sub(x, p);
    let d = norm(&v);
    if d == 0.0 {
        return Err(GeometryError::ProjectionAtBasePoint);
    }
    if d >= r0 {
        return Err(GeometryError::OutsideInjectivityRadius { dist: d, r0 });
    }
    let mut w: Vec<f64> = v.iter().map(|c| c / d).collect();
    // one renormalisation pass pins |w| to 1 at the last ulp
    let nw = norm(&w);
    w.iter_mut().for_each(|c| *c /= nw);
    Ok(w)
}

/// A direction on the unit sphere tagged by the strata whose samples produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Direction {
    pub v: Vec<f64>,
    pub strata: Vec<usize>,
}

/// Angular resolution implied by a sample budget.
pub fn angular_resolution(sample_budget: usize) -> f64 {
    (4.0 * std::f64::consts::PI / sample_budget.max(16) as f64).sqrt().min(0.5)
}

#[derive(Clone)]
struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Points of one stratum inside B_ε(p)\{p}, from adaptive bisection of the parameter box.
fn stratum_points_in_ball(st: &Stratum, p: &[f64], eps: f64, ang_res: f64, budget: usize) -> Vec<Vec<f64>> {
    if st.dim == 0 {
        let x = st.eval(&[]);
        let d = dist(&x, p);
        return if d > 0.0 && d <= eps { vec![x] } else { vec![] };
    }
    let k = st.dim;
    let mut queue = VecDeque::from([Cell { lo: st.lo.clone(), hi: st.hi.clone() }]);
    let mut leaves = vec![];
    let mut processed = 0usize;
    let max_cells = budget.saturating_mul(8).max(1024);
    while let Some(cell) = queue.pop_front() {
        processed += 1;
        let mid: Vec<f64> = cell.lo.iter().zip(&cell.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let c = st.eval(&mid);
        let mut radius: f64 = 0.0;
        let mut extent = vec![0.0; k];
        for corner in 0..(1usize << k) {
            let s: Vec<f64> = (0..k).map(|i| if corner >> i & 1 == 1 { cell.hi[i] } else { cell.lo[i] }).collect();
            radius = radius.max(dist(&st.eval(&s), &c));
        }
        for i in 0..k {
            // polyline length along the axis; a chord alone misses periodic parameters
            let mut prev: Option<Vec<f64>> = None;
            let mut e = 0.0;
            for j in 0..5 {
                let mut a = mid.clone();
                a[i] = cell.lo[i] + (cell.hi[i] - cell.lo[i]) * j as f64 / 4.0;
                let y = st.eval(&a);
                radius = radius.max(dist(&y, &c));
                if let Some(pv) = prev {
                    e += dist(&pv, &y);
                }
                prev = Some(y);
            }
            extent[i] = e;
            radius = radius.max(0.5 * e);
        }
        let reach = 1.25 * radius;
        let dc = dist(&c, p);
        if dc - reach > eps {
            continue;
        }
        let fine = reach <= 0.5 * ang_res * dc.max(eps * ang_res);
        if fine || processed + queue.len() >= max_cells {
            if dc > 0.0 && dc <= eps {
                leaves.push(c);
            }
            continue;
        }
        let axis = (0..k).max_by(|&i, &j| extent[i].total_cmp(&extent[j])).unwrap_or(0);
        let split = mid[axis];
        let mut left = cell.clone();
        left.hi[axis] = split;
        let mut right = cell;
        right.lo[axis] = split;
        queue.push_back(left);
        queue.push_back(right);
    }
    leaves
}

/// Greedy clustering at angular tolerance `tol`, in input order.
fn dedup_directions(raw: Vec<(Vec<f64>, usize)>, tol: f64) -> Vec<Direction> {
    let mut reps: Vec<Direction> = vec![];
    for (v, tag) in raw {
        match reps.iter_mut().find(|r| angle_between(&r.v, &v) <= tol) {
            Some(r) => {
                if !r.strata.contains(&tag) {
                    r.strata.push(tag);
                    r.strata.sort_unstable();
                }
            }
            None => reps.push(Direction { v, strata: vec![tag] }),
        }
    }
    reps
}

/// ω_p(Γ ∩ B_ε^*) deduplicated at the budget's angular resolution.
pub fn epsilon_link(
    gamma: &StratifiedSet,
    p: &[f64],
    eps: f64,
    sample_budget: usize,
) -> Result<Vec<Direction>, GeometryError> {
    if p.len() != gamma.ambient_dim {
        return Err(GeometryError::DimensionMismatch { expected: gamma.ambient_dim, got: p.len() });
    }
    if !(eps > 0.0) {
        return Err(GeometryError::BadEpsilonSequence(format!("ε = {eps} must be positive")));
    }
    let ang_res = angular_resolution(sample_budget);
    let mut raw = vec![];
    for (i, st) in gamma.strata.iter().enumerate() {
        for x in stratum_points_in_ball(st, p, eps, ang_res, sample_budget) {
            let v = sub(&x, p);
            let d = norm(&v);
            if d <= 1e-14 * (1.0 + norm(p)) {
                continue;
            }
            let mut w: Vec<f64> = v.iter().map(|c| c / d).collect();
            let nw = norm(&w);
            w.iter_mut().for_each(|c| *c /= nw);
            raw.push((w, i));
        }
    }
    Ok(dedup_directions(raw, ang_res))
}

pub fn hausdorff_angle(a: &[Direction], b: &[Direction]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let one_sided = |x: &[Direction], y: &[Direction]| {
        x.iter()
            .map(|u| y.iter().map(|w| angle_between(&u.v, &w.v)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

/// Slope of log(box count) against log(1/δ) at δ ∈ {4, 8, 16}·`ang_res`.
pub fn box_counting_dim(dirs: &[Direction], ang_res: f64) -> f64 {
    if dirs.len() < 2 {
        return 0.0;
    }
    let scales = [4.0 * ang_res, 8.0 * ang_res, 16.0 * ang_res];
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .map(|&d| {
            let boxes: BTreeSet<Vec<i64>> =
                dirs.iter().map(|u| u.v.iter().map(|c| (c / d).floor() as i64).collect()).collect();
            ((1.0 / d).ln(), (boxes.len() as f64).ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).max(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkCloud {
    pub base_point: Vec<f64>,
    pub directions: Vec<Direction>,
    pub eps_used: f64,
    pub dim_estimate: usize,
    /// Box-counting slope of the final cloud, reported alongside the stratum count.
    pub box_dim: f64,
    pub hausdorff_steps: Vec<f64>,
    pub angular_resolution: f64,
}

impl LinkCloud {
    /// Largest angle between any direction and the normalised mean direction.
    pub fn angular_spread(&self) -> f64 {
        if self.directions.is_empty() {
            return 0.0;
        }
        let n = self.base_point.len();
        let mut m = vec![0.0; n];
        for d in &self.directions {
            for i in 0..n {
                m[i] += d.v[i];
            }
        }
        let nm = norm(&m);
        if nm == 0.0 {
            return std::f64::consts::PI;
        }
        m.iter_mut().for_each(|c| *c /= nm);
        self.directions.iter().map(|d| angle_between(&d.v, &m)).fold(0.0, f64::max)
    }
}

pub fn essential_link(
    gamma: &StratifiedSet,
    p: &[f64],
    eps_sequence: &[f64],
    sample_budget: usize,
) -> Result<LinkCloud, GeometryError> {
    if eps_sequence.len() < 3 {
        return Err(GeometryError::BadEpsilonSequence("need at least 3 radii".into()));
    }
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(GeometryError::BadEpsilonSequence("radii must decrease strictly".into()));
    }
    let ang_res = angular_resolution(sample_budget);
    let links = eps_sequence
        .iter()
        .map(|&e| epsilon_link(gamma, p, e, sample_budget))
        .collect::<Result<Vec<_>, _>>()?;
    let steps: Vec<f64> = links.windows(2).map(|w| hausdorff_angle(&w[0], &w[1])).collect();
    let k = steps.len();
    if k >= 2 {
        let (prev, last) = (steps[k - 2], steps[k - 1]);
        if last > 2.0 * ang_res && last >= prev {
            return Err(GeometryError::LinkNotConverged(steps));
        }
    }
    let directions = links.into_iter().last().unwrap_or_default();
    let box_dim = box_counting_dim(&directions, ang_res);
    let dim_estimate = if directions.is_empty() {
        0
    } else {
        let tagged: BTreeMap<usize, usize> = directions
            .iter()
            .flat_map(|d| d.strata.iter().map(|&s| (s, gamma.strata[s].dim.saturating_sub(1))))
            .collect();
        let bookkeeping = tagged.values().copied().max().unwrap_or(0);
        bookkeeping.min(box_dim.round() as usize)
    };
    Ok(LinkCloud {
        base_point: p.to_vec(),
        directions,
        eps_used: *eps_sequence.last().unwrap_or(&0.0),
        dim_estimate,
        box_dim,
        hausdorff_steps: steps,
        angular_resolution: ang_res,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentCone {
    pub link: LinkCloud,
    pub dim: usize,
}

pub fn tangent_cone(
    gamma: &StratifiedSet,
    p: &[f64],
    eps_sequence: &[f64],
    sample_budget: usize,
) -> Result<TangentCone, GeometryError> {
    let link = essential_link(gamma, p, eps_sequence, sample_budget)?;
    let dim = if link.directions.is_empty() { 0 } else { link.dim_estimate + 1 };
    Ok(TangentCone { link, dim })
}
