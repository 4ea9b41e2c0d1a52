//! Maximal solutions of Δu = u^q + S u on a flat box minus Γ by monotone iteration with
//! double truncation, plus the a priori, Harnack and weighted-norm diagnostics.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::StratifiedSet;
use crate::solver_core::{monotone_solve, Discretization, IterationReport, SolveError, SolveOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("exponent q = {0} must exceed 1")]
    SubcriticalExponent(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("stage {stage} moved the probe region both up ({up:e}) and down ({down:e})")]
    TruncationInconsistent { stage: usize, up: f64, down: f64 },
    #[error("ball around x0 holds {found} unmasked nodes, need 5")]
    BallUnresolved { found: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub fn beta0(q: f64) -> Result<f64, SolverError> {
    if !(q > 1.0) {
        return Err(SolverError::SubcriticalExponent(q));
    }
    Ok(2.0 / (q - 1.0))
}

pub fn d0(n: usize, q: f64) -> Result<f64, SolverError> {
    Ok(n as f64 - 2.0 - beta0(q)?)
}

/// c with c^{q−1} = β₀(β₀+1): the half-space profile c·ρ^{−β₀}.
pub fn half_space_constant(q: f64) -> Result<f64, SolverError> {
    let b = beta0(q)?;
    Ok((b * (b + 1.0)).powf(1.0 / (q - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Face {
    Dirichlet,
    /// Reflection symmetry plane (zero normal flux).
    Mirror,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AxisSpec {
    Uniform { lo: f64, hi: f64, n: usize },
    /// `fine` cells of width `h_min` at the fine end, then geometric growth up to `h_max`.
    Graded { lo: f64, hi: f64, h_min: f64, growth: f64, h_max: f64, fine: usize, fine_at_lo: bool },
}

impl AxisSpec {
    pub fn nodes(&self) -> Vec<f64> {
        match *self {
            AxisSpec::Uniform { lo, hi, n } => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
            AxisSpec::Graded { lo, hi, h_min, growth, h_max, fine, fine_at_lo } => {
                let len = hi - lo;
                let mut widths = vec![];
                let mut acc = 0.0;
                let mut k = 0usize;
                while acc < len - 1e-12 * len {
                    let h = (h_min * growth.powi(k.saturating_sub(fine) as i32)).min(h_max);
                    widths.push(h);
                    acc += h;
                    k += 1;
                }
                // absorb the overshoot into the last cells proportionally
                let over = acc - len;
                let last = widths.len() - 1;
                if over > 0.5 * widths[last] && widths.len() > 1 {
                    let w = widths.pop().unwrap();
                    let l = widths.len() - 1;
                    widths[l] += w - over;
                } else {
                    widths[last] -= over;
                }
                let mut x = vec![0.0];
                for w in &widths {
                    x.push(x.last().unwrap() + w);
                }
                let n = x.len();
                x[n - 1] = len;
                if fine_at_lo {
                    x.iter().map(|v| lo + v).collect()
                } else {
                    x.iter().rev().map(|v| hi - v).collect()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CartesianSpec {
    pub axes: Vec<AxisSpec>,
    pub lo_face: Vec<Face>,
    pub hi_face: Vec<Face>,
}

/// Log-radial zonal grid around `base`: x = base + r (cos θ axis + sin θ perp), r = e^{−t}.
/// The field is assumed independent of the unit `flat` directions (orthogonal to both
/// vectors), so the transverse dimension is n − flat.len().
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRadialSpec {
    pub base: Vec<f64>,
    pub axis: Vec<f64>,
    pub perp: Vec<f64>,
    pub flat: Vec<Vec<f64>>,
    pub t_min: f64,
    pub t_max: f64,
    pub nt: usize,
    pub ntheta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GridSpec {
    Cartesian(CartesianSpec),
    LogRadial(LogRadialSpec),
}

#[derive(Debug, Clone, Serialize)]
pub struct CartesianGrid {
    pub axes: Vec<Vec<f64>>,
    pub lo_face: Vec<Face>,
    pub hi_face: Vec<Face>,
}

impl CartesianGrid {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for a in (0..self.axes.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.axes[a + 1].len();
        }
        s
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut m = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            let n = self.axes[a].len();
            m[a] = i % n;
            i /= n;
        }
        m
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        self.multi_index(i).iter().enumerate().map(|(a, &k)| self.axes[a][k]).collect()
    }

    /// Dual cell width along an axis.
    fn dual_width(&self, a: usize, k: usize) -> f64 {
        let x = &self.axes[a];
        let n = x.len();
        let left = if k > 0 { x[k] - x[k - 1] } else { 0.0 };
        let right = if k + 1 < n { x[k + 1] - x[k] } else { 0.0 };
        0.5 * (left + right)
    }

    fn local_h(&self, m: &[usize]) -> f64 {
        m.iter()
            .enumerate()
            .map(|(a, &k)| {
                let x = &self.axes[a];
                let l = if k > 0 { x[k] - x[k - 1] } else { 0.0 };
                let r = if k + 1 < x.len() { x[k + 1] - x[k] } else { 0.0 };
                l.max(r)
            })
            .fold(0.0, f64::max)
    }

    fn on_dirichlet_face(&self, m: &[usize]) -> bool {
        m.iter().enumerate().any(|(a, &k)| {
            (k == 0 && self.lo_face[a] == Face::Dirichlet) || (k + 1 == self.axes[a].len() && self.hi_face[a] == Face::Dirichlet)
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRadialGrid {
    pub spec: LogRadialSpec,
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
}

impl LogRadialGrid {
    pub fn transverse_dim(&self, n: usize) -> usize {
        n - self.spec.flat.len()
    }

    pub fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    pub fn dtheta(&self) -> f64 {
        std::f64::consts::PI / self.theta.len() as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.t.len() * self.theta.len()
    }

    pub fn index(&self, it: usize, jt: usize) -> usize {
        it * self.theta.len() + jt
    }

    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.theta.len(), i % self.theta.len())
    }

    pub fn point(&self, t: f64, theta: f64) -> Vec<f64> {
        let r = (-t).exp();
        let s = &self.spec;
        (0..s.base.len()).map(|k| s.base[k] + r * (theta.cos() * s.axis[k] + theta.sin() * s.perp[k])).collect()
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let (a, b) = self.split(i);
        self.point(self.t[a], self.theta[b])
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum Grid {
    Cartesian(CartesianGrid),
    LogRadial(LogRadialGrid),
}

impl Grid {
    pub fn build(spec: &GridSpec) -> Result<Grid, SolverError> {
        match spec {
            GridSpec::Cartesian(c) => {
                let axes: Vec<Vec<f64>> = c.axes.iter().map(|a| a.nodes()).collect();
                if axes.iter().any(|a| a.len() < 3) {
                    return Err(SolverError::InvalidProblem("each axis needs at least 3 nodes".into()));
                }
                if c.lo_face.len() != axes.len() || c.hi_face.len() != axes.len() {
                    return Err(SolverError::InvalidProblem("face list does not match axes".into()));
                }
                Ok(Grid::Cartesian(CartesianGrid { axes, lo_face: c.lo_face.clone(), hi_face: c.hi_face.clone() }))
            }
            GridSpec::LogRadial(s) => {
                if s.nt < 3 || s.ntheta < 1 || !(s.t_max > s.t_min) {
                    return Err(SolverError::InvalidProblem("log-radial grid too small".into()));
                }
                let t = (0..s.nt).map(|i| s.t_min + (s.t_max - s.t_min) * i as f64 / (s.nt - 1) as f64).collect();
                let dth = std::f64::consts::PI / s.ntheta as f64;
                let theta = (0..s.ntheta).map(|j| (j as f64 + 0.5) * dth).collect();
                Ok(Grid::LogRadial(LogRadialGrid { spec: s.clone(), t, theta }))
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            Grid::Cartesian(g) => g.n_nodes(),
            Grid::LogRadial(g) => g.n_nodes(),
        }
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        match self {
            Grid::Cartesian(g) => g.coords(i),
            Grid::LogRadial(g) => g.coords(i),
        }
    }

    /// Physical node spacing used by the h/2 regularisation.
    pub fn local_h(&self, i: usize) -> f64 {
        match self {
            Grid::Cartesian(g) => g.local_h(&g.multi_index(i)),
            Grid::LogRadial(g) => {
                let (a, _) = g.split(i);
                (-g.t[a]).exp() * g.dt().max(g.dtheta())
            }
        }
    }

    /// Spacing across Γ: the widest neighbour gap along axes where ρ changes by at least
    /// half the gap. Falls back to `local_h`.
    pub fn normal_h(&self, i: usize, rho: &[f64]) -> f64 {
        let Grid::Cartesian(g) = self else { return self.local_h(i) };
        let m = g.multi_index(i);
        let strides = g.strides();
        let mut best: f64 = 0.0;
        for a in 0..m.len() {
            let x = &g.axes[a];
            if m[a] > 0 {
                let d = x[m[a]] - x[m[a] - 1];
                if (rho[i - strides[a]] - rho[i]).abs() >= 0.5 * d {
                    best = best.max(d);
                }
            }
            if m[a] + 1 < x.len() {
                let d = x[m[a] + 1] - x[m[a]];
                if (rho[i + strides[a]] - rho[i]).abs() >= 0.5 * d {
                    best = best.max(d);
                }
            }
        }
        if best > 0.0 {
            best
        } else {
            self.local_h(i)
        }
    }

    /// Nodes carrying box (or log-grid end) Dirichlet data.
    pub fn is_box_boundary(&self, i: usize) -> bool {
        match self {
            Grid::Cartesian(g) => g.on_dirichlet_face(&g.multi_index(i)),
            Grid::LogRadial(g) => {
                let (a, _) = g.split(i);
                a == 0 || a + 1 == g.t.len()
            }
        }
    }

    /// Smallest spacing over all axes.
    pub fn h_min(&self) -> f64 {
        match self {
            Grid::Cartesian(g) => {
                g.axes.iter().flat_map(|x| x.windows(2).map(|w| w[1] - w[0])).fold(f64::INFINITY, f64::min)
            }
            Grid::LogRadial(g) => (-g.t[g.t.len() - 1]).exp() * g.dt().min(g.dtheta()),
        }
    }

    pub fn h_max(&self) -> f64 {
        match self {
            Grid::Cartesian(g) => g.axes.iter().flat_map(|x| x.windows(2).map(|w| w[1] - w[0])).fold(0.0, f64::max),
            Grid::LogRadial(g) => (-g.t[0]).exp() * g.dt().max(g.dtheta()),
        }
    }
}

#[derive(Clone)]
pub enum Potential {
    Constant(f64),
    Function(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Potential::Constant(s) => write!(f, "Constant({s})"),
            Potential::Function(_) => write!(f, "Function"),
        }
    }
}

impl Potential {
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Constant(s) => *s,
            Potential::Function(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Stage {
    pub m: f64,
    pub eps: f64,
}

/// Default schedule m_j = 10·4^j, ε_j = ε₀ 2^{−j}.
pub fn default_schedule(eps0: f64, stages: usize) -> Vec<Stage> {
    (0..stages).map(|j| Stage { m: 10.0 * 4f64.powi(j as i32), eps: eps0 * 0.5f64.powi(j as i32) }).collect()
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub n: usize,
    pub q: f64,
    pub s: Potential,
    pub gamma: StratifiedSet,
    pub grid: GridSpec,
    pub schedule: Vec<Stage>,
    /// Box data where S ≥ 0 (where S < 0 the trace is (−S)^{1/(q−1)}).
    pub lower_floor: f64,
    /// Probe region for stage comparisons: nodes with ρ in this range.
    pub probe: (f64, f64),
    pub solve: SolveOptions,
}

impl ProblemSpec {
    pub fn new(n: usize, q: f64, gamma: StratifiedSet, grid: GridSpec) -> Result<Self, SolverError> {
        beta0(q)?;
        if !(3..=5).contains(&n) {
            return Err(SolverError::InvalidProblem(format!("ambient dimension {n} outside 3..=5")));
        }
        if gamma.ambient_dim != n {
            return Err(SolverError::InvalidProblem("Γ ambient dimension differs from n".into()));
        }
        Ok(ProblemSpec {
            n,
            q,
            s: Potential::Constant(0.0),
            gamma,
            grid,
            schedule: default_schedule(0.02, 4),
            lower_floor: 1e-2,
            probe: (0.1, f64::INFINITY),
            solve: SolveOptions::default(),
        })
    }

    pub fn beta0(&self) -> f64 {
        2.0 / (self.q - 1.0)
    }

    pub fn d0(&self) -> f64 {
        self.n as f64 - 2.0 - self.beta0()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldMeta {
    pub n: usize,
    pub q: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub eps: f64,
    pub m: f64,
}

/// Nodal field u with its tube mask and distance to Γ.
#[derive(Debug, Clone, Serialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub rho: Vec<f64>,
    pub meta: FieldMeta,
}

impl ScalarField {
    pub fn from_fn(grid: Grid, n: usize, q: f64, gamma: &StratifiedSet, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let nn = grid.n_nodes();
        let rho: Vec<f64> = (0..nn).map(|i| gamma.distance(&grid.coords(i))).collect();
        let values = (0..nn).map(|i| f(&grid.coords(i), rho[i])).collect();
        let meta = FieldMeta { n, q, h_min: grid.h_min(), h_max: grid.h_max(), eps: 0.0, m: f64::INFINITY };
        ScalarField { grid, values, mask: vec![false; nn], rho, meta }
    }

    pub fn beta0(&self) -> f64 {
        2.0 / (self.meta.q - 1.0)
    }

    /// Nodes that are neither tube nodes nor box-boundary nodes.
    pub fn is_interior(&self, i: usize) -> bool {
        !self.mask[i] && !self.grid.is_box_boundary(i)
    }

    /// Multilinear interpolation of u (Cartesian, with reflection across mirror faces) or
    /// bilinear interpolation in (t, θ) (log-radial). `None` outside the grid.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        match &self.grid {
            Grid::Cartesian(g) => {
                let strides = g.strides();
                let mut corners: Vec<(usize, f64)> = vec![(0, 1.0)];
                for (a, ax) in g.axes.iter().enumerate() {
                    let (lo, hi) = (ax[0], ax[ax.len() - 1]);
                    let mut c = x[a];
                    if c < lo && g.lo_face[a] == Face::Mirror {
                        c = 2.0 * lo - c;
                    }
                    if c > hi && g.hi_face[a] == Face::Mirror {
                        c = 2.0 * hi - c;
                    }
                    let tol = 1e-12 * (hi - lo);
                    if c < lo - tol || c > hi + tol {
                        return None;
                    }
                    let k = ax.partition_point(|&v| v <= c).clamp(1, ax.len() - 1) - 1;
                    let w = ((c - ax[k]) / (ax[k + 1] - ax[k])).clamp(0.0, 1.0);
                    let mut next = Vec::with_capacity(corners.len() * 2);
                    for &(i, cw) in &corners {
                        next.push((i + k * strides[a], cw * (1.0 - w)));
                        next.push((i + (k + 1) * strides[a], cw * w));
                    }
                    corners = next;
                }
                Some(corners.iter().map(|&(i, w)| w * self.values[i]).sum())
            }
            Grid::LogRadial(g) => {
                let s = &g.spec;
                let mut d: Vec<f64> = x.iter().zip(&s.base).map(|(a, b)| a - b).collect();
                for f in &s.flat {
                    let c: f64 = d.iter().zip(f).map(|(p, q)| p * q).sum();
                    d.iter_mut().zip(f).for_each(|(p, q)| *p -= c * q);
                }
                let a: f64 = d.iter().zip(&s.axis).map(|(p, q)| p * q).sum();
                let flat: f64 = d.iter().map(|v| v * v).sum::<f64>() - a * a;
                let r = (a * a + flat.max(0.0)).sqrt();
                let r_perp = (flat.max(0.0)).sqrt();
                if r <= 0.0 {
                    return None;
                }
                let t = -r.ln();
                let th = r_perp.atan2(a);
                let (t0, t1) = (g.t[0], g.t[g.t.len() - 1]);
                if t < t0 - 1e-12 || t > t1 + 1e-12 {
                    return None;
                }
                let ft = ((t - t0) / g.dt()).clamp(0.0, (g.t.len() - 1) as f64);
                let it = (ft.floor() as usize).min(g.t.len() - 2);
                let wt = ft - it as f64;
                let nth = g.theta.len();
                let fj = (th / g.dtheta() - 0.5).clamp(0.0, (nth - 1) as f64);
                let jt = (fj.floor() as usize).min(nth.saturating_sub(2));
                let wj = if nth > 1 { fj - jt as f64 } else { 0.0 };
                let j2 = (jt + 1).min(nth - 1);
                let u = |a: usize, b: usize| self.values[g.index(a, b)];
                Some(
                    (1.0 - wt) * ((1.0 - wj) * u(it, jt) + wj * u(it, j2))
                        + wt * ((1.0 - wj) * u(it + 1, jt) + wj * u(it + 1, j2)),
                )
            }
        }
    }

    /// CSV with columns (x₁..xₙ, ρ, u).
    pub fn to_csv(&self) -> String {
        let n = self.meta.n;
        let mut s = String::new();
        let head: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
        let _ = writeln!(s, "{},rho,u", head.join(","));
        for i in 0..self.values.len() {
            let x = self.grid.coords(i);
            let xs: Vec<String> = x.iter().map(|v| format!("{v:.9e}")).collect();
            let _ = writeln!(s, "{},{:.9e},{:.12e}", xs.join(","), self.rho[i], self.values[i]);
        }
        s
    }
}

/// Flux-form operator for the grid. Cartesian unknown is u; log-radial unknown is
/// v = r^{β₀} u in transverse dimension n_t with weight e^{(β₀−d_t) t}.
fn assemble(grid: &Grid, n: usize, q: f64, s_at: &dyn Fn(usize) -> f64, fixed: Vec<bool>) -> Discretization {
    let nn = grid.n_nodes();
    match grid {
        Grid::Cartesian(g) => {
            let strides = g.strides();
            let dims = g.axes.len();
            let mut vol = vec![0.0; nn];
            let mut faces = Vec::with_capacity(nn * dims);
            for i in 0..nn {
                let m = g.multi_index(i);
                let w: Vec<f64> = (0..dims).map(|a| g.dual_width(a, m[a])).collect();
                vol[i] = w.iter().product();
                for a in 0..dims {
                    if m[a] + 1 < g.axes[a].len() {
                        let area: f64 = (0..dims).filter(|&b| b != a).map(|b| w[b]).product();
                        let dx = g.axes[a][m[a] + 1] - g.axes[a][m[a]];
                        faces.push((i, i + strides[a], area / dx));
                    }
                }
            }
            let s = (0..nn).map(s_at).collect();
            Discretization { n_nodes: nn, fixed, vol, faces, p: vec![1.0; nn], s, q }
        }
        Grid::LogRadial(g) => {
            let nt = g.transverse_dim(n);
            let b = 2.0 / (q - 1.0);
            let dt_ = nt as f64 - 2.0 - b;
            let alpha = b - dt_;
            let t_ref = 0.5 * (g.t[0] + g.t[g.t.len() - 1]);
            let (dt, dth) = (g.dt(), g.dtheta());
            let sw = |th: f64| th.sin().max(0.0).powi(nt as i32 - 2);
            let mut vol = vec![0.0; nn];
            let mut faces = vec![];
            let mut s = vec![0.0; nn];
            for a in 0..g.t.len() {
                let ew = (alpha * (g.t[a] - t_ref)).exp();
                for j in 0..g.theta.len() {
                    let i = g.index(a, j);
                    vol[i] = ew * sw(g.theta[j]) * dt * dth;
                    s[i] = b * dt_ + s_at(i) * (-2.0 * g.t[a]).exp();
                    if a + 1 < g.t.len() {
                        let eh = (alpha * (0.5 * (g.t[a] + g.t[a + 1]) - t_ref)).exp();
                        faces.push((i, g.index(a + 1, j), eh * sw(g.theta[j]) * dth / dt));
                    }
                    if j + 1 < g.theta.len() {
                        let th = 0.5 * (g.theta[j] + g.theta[j + 1]);
                        faces.push((i, g.index(a, j + 1), ew * sw(th) * dt / dth));
                    }
                }
            }
            Discretization { n_nodes: nn, fixed, vol, faces, p: vec![1.0; nn], s, q }
        }
    }
}

/// Result of one truncated Dirichlet problem.
#[derive(Debug, Clone, Serialize)]
pub struct TruncatedSolution {
    pub field: ScalarField,
    pub report: IterationReport,
    pub repaired_nodes: usize,
}

/// κ with κ h^{−β₀} the Dirichlet value on a node of a flat Γ for which the discrete
/// half-line solution of u″ = u^q matches c z^{−β₀} with no offset. Scale invariance of
/// the stencil makes κ depend on q only.
pub fn tube_closure_constant(q: f64) -> f64 {
    let b = 2.0 / (q - 1.0);
    let c = (b * (b + 1.0)).powf(1.0 / (q - 1.0));
    let n = 2000usize;
    let offset = |d: f64| -> f64 {
        let mut u: Vec<f64> = (0..=n).map(|k| c * (k as f64).max(0.5).powf(-b)).collect();
        u[0] = d;
        let m = n - 1;
        for _ in 0..100 {
            // Newton step on the tridiagonal system, Thomas algorithm
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let uk = u[k + 1];
                rhs[k] = -(u[k + 2] - 2.0 * uk + u[k] - uk.powf(q));
                diag[k] = -2.0 - q * uk.powf(q - 1.0);
            }
            for k in 1..m {
                let w = 1.0 / diag[k - 1];
                diag[k] -= w;
                rhs[k] -= w * rhs[k - 1];
            }
            let mut du = vec![0.0; m];
            du[m - 1] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                du[k] = (rhs[k] - du[k + 1]) / diag[k];
            }
            let mut big: f64 = 0.0;
            for k in 0..m {
                let nu = (u[k + 1] + du[k]).max(0.5 * u[k + 1]);
                big = big.max(((nu - u[k + 1]) / u[k + 1]).abs());
                u[k + 1] = nu;
            }
            if big < 1e-14 {
                break;
            }
        }
        let mut off: Vec<f64> = (50..200).map(|k| (u[k] / c).powf(-1.0 / b) - k as f64).collect();
        off.sort_by(f64::total_cmp);
        off[off.len() / 2]
    };
    let (mut lo, mut hi) = (0.05 * c, 50.0 * c);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if offset(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Barrier constant C = 2c + (sup S⁻)^{1/(q−1)} D^{β₀} with D the box diameter. Positive
/// S only helps the upper barrier, so the data stay nonincreasing in S.
fn barrier_constant(spec: &ProblemSpec, s_neg: f64, diam: f64) -> f64 {
    let c = half_space_constant(spec.q).unwrap_or(1.0);
    2.0 * c + s_neg.powf(1.0 / (spec.q - 1.0)) * diam.powf(spec.beta0())
}

/// Solves Δu = u^q + Su on box∖N_ε(Γ) by monotone descent from the barrier.
///
/// Tube nodes (ρ < max(ε, h/2)) carry min(m, C max(ρ, h/2)^{−β₀}); box nodes carry the
/// lower-solution trace.
pub fn truncated_solve(spec: &ProblemSpec, m: f64, eps: f64) -> Result<TruncatedSolution, SolverError> {
    let grid = Grid::build(&spec.grid)?;
    let rho: Vec<f64> = (0..grid.n_nodes()).map(|i| spec.gamma.distance(&grid.coords(i))).collect();
    truncated_solve_on(spec, grid, rho, m, eps)
}

fn truncated_solve_on(spec: &ProblemSpec, grid: Grid, rho: Vec<f64>, m: f64, eps: f64) -> Result<TruncatedSolution, SolverError> {
    if !(m > 0.0) || !(eps > 0.0) {
        return Err(SolverError::InvalidProblem("m and ε must be positive".into()));
    }
    let q = spec.q;
    let b = spec.beta0();
    let nn = grid.n_nodes();
    let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.coords(i)).collect();
    let s_node: Vec<f64> = coords.iter().map(|x| spec.s.at(x)).collect();
    let s_min = s_node.iter().copied().fold(0.0f64, f64::min);
    let diam = match &grid {
        Grid::Cartesian(g) => g.axes.iter().map(|x| (x[x.len() - 1] - x[0]).powi(2)).sum::<f64>().sqrt(),
        Grid::LogRadial(g) => 2.0 * (-g.t[0]).exp(),
    };
    let big_c = barrier_constant(spec, -s_min, diam);
    let h: Vec<f64> = (0..nn).map(|i| grid.normal_h(i, &rho)).collect();
    let closure = tube_closure_constant(q);
    let barrier = |i: usize| big_c * rho[i].max(0.5 * h[i]).powf(-b);
    let trace = |i: usize| {
        if s_node[i] < 0.0 {
            (-s_node[i]).powf(1.0 / (q - 1.0))
        } else {
            spec.lower_floor
        }
    };
    let mask: Vec<bool> = (0..nn).map(|i| rho[i] < eps.max(0.5 * h[i] * (1.0 + 1e-9))).collect();
    // data and unknowns in u (Cartesian) or v = r^{β₀} u (log-radial)
    let to_unknown: Vec<f64> = match &grid {
        Grid::Cartesian(_) => vec![1.0; nn],
        Grid::LogRadial(g) => (0..nn).map(|i| (-b * g.t[g.split(i).0]).exp()).collect(),
    };
    let mut fixed = vec![false; nn];
    let mut v = vec![0.0; nn];
    for i in 0..nn {
        if mask[i] {
            fixed[i] = true;
            let d = if rho[i] < 0.5 * h[i] { closure * h[i].powf(-b) } else { barrier(i) };
            v[i] = m.min(d) * to_unknown[i];
        } else if grid.is_box_boundary(i) {
            fixed[i] = true;
            v[i] = match &grid {
                Grid::LogRadial(g) if g.split(i).0 + 1 == g.t.len() => m.min(barrier(i)),
                _ => trace(i),
            } * to_unknown[i];
        }
    }
    let disc = assemble(&grid, spec.n, q, &|i| s_node[i], fixed.clone());
    let data_max = (0..nn).filter(|&i| fixed[i]).map(|i| v[i]).fold(0.0, f64::max);
    let cap: Vec<f64> = match &grid {
        Grid::Cartesian(_) => {
            let floor = if s_min < 0.0 { (-s_min).powf(1.0 / (q - 1.0)) } else { 0.0 };
            vec![m.max(data_max).max(floor); nn]
        }
        Grid::LogRadial(_) => {
            let need = disc.s.iter().fold(0.0f64, |a, &s| a.max(-s));
            vec![big_c.max(data_max).max(need.powf(1.0 / (q - 1.0)) * 1.000001); nn]
        }
    };
    for i in 0..nn {
        if !fixed[i] {
            v[i] = cap[i].min(barrier(i) * to_unknown[i]);
        }
    }
    let repaired = disc.repair_upper(&mut v, &cap);
    let report = monotone_solve(&disc, &mut v, &spec.solve)?;
    let values: Vec<f64> = (0..nn).map(|i| v[i] / to_unknown[i]).collect();
    let meta = FieldMeta { n: spec.n, q, h_min: grid.h_min(), h_max: grid.h_max(), eps, m };
    Ok(TruncatedSolution { field: ScalarField { grid, values, mask, rho, meta }, report, repaired_nodes: repaired })
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub m: f64,
    pub eps: f64,
    pub sweeps: usize,
    /// Sup-norm change on the probe region relative to the previous stage.
    pub probe_delta: Option<f64>,
    /// +1 when the stage raised the probe values, −1 when it lowered them, 0 when unchanged.
    pub direction: i8,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalSolution {
    pub field: ScalarField,
    pub stages: Vec<StageRecord>,
    pub reports: Vec<IterationReport>,
}

fn probe_nodes(field: &ScalarField, probe: (f64, f64)) -> Vec<usize> {
    (0..field.values.len())
        .filter(|&i| field.is_interior(i) && field.rho[i] >= probe.0 && field.rho[i] <= probe.1)
        .collect()
}

/// Double-truncation limit over the schedule. Consecutive stages must move the probe
/// region in one direction only.
pub fn maximal_solution(spec: &ProblemSpec) -> Result<MaximalSolution, SolverError> {
    if spec.schedule.len() < 3 {
        return Err(SolverError::InvalidProblem("schedule needs at least 3 stages".into()));
    }
    let grid = Grid::build(&spec.grid)?;
    let rho: Vec<f64> = (0..grid.n_nodes()).map(|i| spec.gamma.distance(&grid.coords(i))).collect();
    let mut stages = vec![];
    let mut reports = vec![];
    let mut prev: Option<ScalarField> = None;
    for (k, st) in spec.schedule.iter().enumerate() {
        let sol = truncated_solve_on(spec, grid.clone(), rho.clone(), st.m, st.eps)?;
        let f = sol.field;
        let mut rec = StageRecord { m: st.m, eps: st.eps, sweeps: sol.report.iterations, probe_delta: None, direction: 0 };
        if let Some(p) = &prev {
            let nodes: Vec<usize> = probe_nodes(&f, spec.probe).into_iter().filter(|&i| p.is_interior(i)).collect();
            let scale = nodes.iter().map(|&i| f.values[i].abs()).fold(0.0, f64::max);
            let tol = 1e-6 * scale;
            let (mut up, mut down) = (0.0f64, 0.0f64);
            for &i in &nodes {
                let d = f.values[i] - p.values[i];
                up = up.max(d);
                down = down.max(-d);
            }
            if up > tol && down > tol {
                return Err(SolverError::TruncationInconsistent { stage: k, up, down });
            }
            rec.probe_delta = Some(up.max(down));
            rec.direction = if up > tol { 1 } else if down > tol { -1 } else { 0 };
        }
        stages.push(rec);
        reports.push(sol.report);
        prev = Some(f);
    }
    Ok(MaximalSolution { field: prev.unwrap(), stages, reports })
}

/// Nodes of a Cartesian field inside the closed ball B_r(x0).
fn cartesian_ball(g: &CartesianGrid, x0: &[f64], r: f64) -> Vec<usize> {
    let ranges: Vec<(usize, usize)> = g
        .axes
        .iter()
        .zip(x0)
        .map(|(ax, &c)| {
            let lo = ax.partition_point(|&v| v < c - r);
            let hi = ax.partition_point(|&v| v <= c + r);
            (lo, hi)
        })
        .collect();
    if ranges.iter().any(|(a, b)| a >= b) {
        return vec![];
    }
    let strides = g.strides();
    let mut out = vec![];
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        let d2: f64 = idx.iter().enumerate().map(|(a, &k)| (g.axes[a][k] - x0[a]).powi(2)).sum();
        if d2 <= r * r {
            out.push(idx.iter().zip(&strides).map(|(k, s)| k * s).sum());
        }
        let mut a = idx.len();
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
        }
    }
}

/// sup/inf of the field over B_{ρ(x₀)/8}(x₀).
pub fn harnack_ratio(field: &ScalarField, gamma: &StratifiedSet, x0: &[f64]) -> Result<f64, SolverError> {
    let r = gamma.distance(x0) / 8.0;
    let nodes: Vec<usize> = match &field.grid {
        Grid::Cartesian(g) => cartesian_ball(g, x0, r),
        Grid::LogRadial(_) => (0..field.values.len())
            .filter(|&i| {
                let x = field.grid.coords(i);
                x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r * r
            })
            .collect(),
    };
    let vals: Vec<f64> = nodes.into_iter().filter(|&i| !field.mask[i]).map(|i| field.values[i]).collect();
    if vals.len() < 5 {
        return Err(SolverError::BallUnresolved { found: vals.len() });
    }
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(hi / lo)
}

/// sup over unmasked nodes of ρ^{β₀} u.
pub fn apriori_bound(field: &ScalarField) -> f64 {
    let b = field.beta0();
    (0..field.values.len()).filter(|&i| !field.mask[i]).map(|i| field.rho[i].powf(b) * field.values[i]).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WeightedNorm {
    pub sup: f64,
    pub grad_term: f64,
    pub hess_term: f64,
    /// Grid-resolution stand-in for the Hölder seminorm term with exponent ½.
    pub holder_term: f64,
    pub total: f64,
}

/// Discrete |u|*₂,₀ over the sub-box [lo, hi] of a Cartesian field.
pub fn weighted_norm(field: &ScalarField, lo: &[f64], hi: &[f64]) -> Result<WeightedNorm, SolverError> {
    let Grid::Cartesian(g) = &field.grid else {
        return Err(SolverError::InvalidProblem("weighted norm needs a Cartesian field".into()));
    };
    let dims = g.axes.len();
    let strides = g.strides();
    let shape = g.shape();
    let inside = |m: &[usize]| (0..dims).all(|a| g.axes[a][m[a]] >= lo[a] - 1e-12 && g.axes[a][m[a]] <= hi[a] + 1e-12);
    let u = &field.values;
    let mut out = WeightedNorm { sup: 0.0, grad_term: 0.0, hess_term: 0.0, holder_term: 0.0, total: 0.0 };
    let mut hess_cache: Vec<(Vec<f64>, f64, Vec<f64>)> = vec![];
    for i in 0..u.len() {
        let m = g.multi_index(i);
        if !inside(&m) {
            continue;
        }
        if field.mask[i] {
            return Err(SolverError::InvalidProblem("sub-box meets the tube".into()));
        }
        let x = g.coords(i);
        let d = (0..dims).map(|a| (x[a] - lo[a]).min(hi[a] - x[a])).fold(f64::INFINITY, f64::min).max(0.0);
        out.sup = out.sup.max(u[i].abs());
        // derivatives only where the full stencil stays inside the grid
        if (0..dims).any(|a| m[a] == 0 || m[a] + 1 == shape[a]) {
            continue;
        }
        let mut grad = vec![0.0; dims];
        let mut hess = vec![0.0; dims * dims];
        for a in 0..dims {
            let (xm, x0, xp) = (g.axes[a][m[a] - 1], g.axes[a][m[a]], g.axes[a][m[a] + 1]);
            let (um, u0, up) = (u[i - strides[a]], u[i], u[i + strides[a]]);
            let (hm, hp) = (x0 - xm, xp - x0);
            grad[a] = (up * hm * hm - um * hp * hp + u0 * (hp * hp - hm * hm)) / (hm * hp * (hm + hp));
            hess[a * dims + a] = 2.0 * (up * hm + um * hp - u0 * (hm + hp)) / (hm * hp * (hm + hp));
            for b in a + 1..dims {
                let (ha, hb) = (xp - xm, g.axes[b][m[b] + 1] - g.axes[b][m[b] - 1]);
                let v = |da: isize, db: isize| {
                    u[(i as isize + da * strides[a] as isize + db * strides[b] as isize) as usize]
                };
                let mixed = (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (ha * hb);
                hess[a * dims + b] = mixed;
                hess[b * dims + a] = mixed;
            }
        }
        let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hn = hess.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.grad_term = out.grad_term.max(d * gn);
        out.hess_term = out.hess_term.max(d * d * hn);
        hess_cache.push((x, d, hess));
    }
    for (k, (x, d, hx)) in hess_cache.iter().enumerate() {
        for (y, e, hy) in hess_cache.iter().skip(k + 1).take(2 * dims) {
            let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let diff = hx.iter().zip(hy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dd = d.min(*e);
            if dist > 0.0 {
                out.holder_term = out.holder_term.max(dd.powf(2.5) * diff / dist.sqrt());
            }
        }
    }
    out.total = out.sup + out.grad_term + out.hess_term;
    Ok(out)
}

/// Δu at nodes with a full stencil, zero elsewhere. Cartesian: centred flux form.
/// Log-radial: e^{2t}(u_tt − (n_t−2) u_t + Δ_ω u).
pub fn discrete_laplacian(field: &ScalarField) -> Result<ScalarField, SolverError> {
    let nn = field.values.len();
    let u = &field.values;
    let mut out = vec![0.0; nn];
    match &field.grid {
        Grid::Cartesian(g) => {
            let all_fixed: Vec<bool> = (0..nn).map(|i| field.grid.is_box_boundary(i)).collect();
            let disc = assemble(&field.grid, field.meta.n, field.meta.q, &|_| 0.0, all_fixed.clone());
            let k = disc.apply_k(u);
            for i in 0..nn {
                if !all_fixed[i] {
                    out[i] = -k[i] / disc.vol[i];
                }
            }
            if g.axes.iter().any(|a| a.len() < 3) {
                return Err(SolverError::InvalidProblem("need 3 nodes per axis".into()));
            }
        }
        Grid::LogRadial(g) => {
            let nt = g.transverse_dim(field.meta.n) as f64;
            let (dt, dth) = (g.dt(), g.dtheta());
            let sw = |th: f64| th.sin().max(0.0).powf(nt - 2.0);
            let ntheta = g.theta.len();
            for a in 1..g.t.len() - 1 {
                for j in 0..ntheta {
                    let i = g.index(a, j);
                    let (um, u0, up) = (u[g.index(a - 1, j)], u[i], u[g.index(a + 1, j)]);
                    let utt = (up - 2.0 * u0 + um) / (dt * dt);
                    let ut = (up - um) / (2.0 * dt);
                    let mut ang = 0.0;
                    if j + 1 < ntheta {
                        ang += sw(0.5 * (g.theta[j] + g.theta[j + 1])) * (u[g.index(a, j + 1)] - u0);
                    }
                    if j > 0 {
                        ang -= sw(0.5 * (g.theta[j] + g.theta[j - 1])) * (u0 - u[g.index(a, j - 1)]);
                    }
                    let lap_w = if ntheta > 1 { ang / (dth * dth * sw(g.theta[j])) } else { 0.0 };
                    out[i] = (2.0 * g.t[a]).exp() * (utt - (nt - 2.0) * ut + lap_w);
                }
            }
        }
    }
    Ok(ScalarField { grid: field.grid.clone(), values: out, mask: field.mask.clone(), rho: field.rho.clone(), meta: field.meta.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Stratum;

    #[test]
    fn exponent_examples() {
        assert_eq!((beta0(5.0).unwrap(), d0(3, 5.0).unwrap()), (0.5, 0.5));
        assert_eq!((beta0(3.0).unwrap(), d0(4, 3.0).unwrap()), (1.0, 1.0));
        assert_eq!((beta0(2.0).unwrap(), d0(5, 2.0).unwrap()), (2.0, 1.0));
        assert_eq!(beta0(1.0), Err(SolverError::SubcriticalExponent(1.0)));
        assert_eq!(d0(3, 0.5), Err(SolverError::SubcriticalExponent(0.5)));
    }

    #[test]
    fn graded_axis_is_monotone_and_spans() {
        let ax = AxisSpec::Graded { lo: 0.0, hi: 2.0, h_min: 1.0 / 128.0, growth: 1.1, h_max: 0.125, fine: 8, fine_at_lo: true };
        let x = ax.nodes();
        assert_eq!(x[0], 0.0);
        assert_eq!(*x.last().unwrap(), 2.0);
        assert!(x.windows(2).all(|w| w[1] > w[0]));
        assert!((x[1] - 1.0 / 128.0).abs() < 1e-15);
        let rev = AxisSpec::Graded { lo: 0.0, hi: 2.0, h_min: 1.0 / 128.0, growth: 1.1, h_max: 0.125, fine: 8, fine_at_lo: false }.nodes();
        assert!((rev[rev.len() - 1] - rev[rev.len() - 2] - 1.0 / 128.0).abs() < 1e-12);
    }

    fn box3(n: usize) -> GridSpec {
        GridSpec::Cartesian(CartesianSpec {
            axes: vec![AxisSpec::Uniform { lo: -1.0, hi: 1.0, n }; 3],
            lo_face: vec![Face::Dirichlet; 3],
            hi_face: vec![Face::Dirichlet; 3],
        })
    }

    #[test]
    fn laplacian_of_constants_and_quadratics() {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
        let grid = Grid::build(&box3(9)).unwrap();
        let f = ScalarField::from_fn(grid.clone(), 3, 5.0, &g, |_, _| 1.0);
        let l = discrete_laplacian(&f).unwrap();
        assert!(l.values.iter().all(|v| v.abs() < 1e-12));
        let f = ScalarField::from_fn(grid, 3, 5.0, &g, |x, _| x[0] * x[0]);
        let l = discrete_laplacian(&f).unwrap();
        for i in 0..l.values.len() {
            if !f.grid.is_box_boundary(i) {
                assert!((l.values[i] - 2.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn large_potential_keeps_solution_below_m() {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
        let mut spec = ProblemSpec::new(3, 5.0, g, box3(11)).unwrap();
        spec.s = Potential::Constant(50.0);
        let m = 0.5;
        let sol = truncated_solve(&spec, m, 0.2).unwrap();
        assert!(sol.field.values.iter().all(|&u| u <= m * (1.0 + 1e-12)));
        assert!(sol.report.monotone);
    }

    #[test]
    fn harnack_and_apriori_on_constant_field() {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[0.0; 3])]).unwrap();
        let grid = Grid::build(&box3(41)).unwrap();
        let f = ScalarField::from_fn(grid, 3, 5.0, &g, |_, _| 3.0);
        assert_eq!(harnack_ratio(&f, &g, &[0.8, 0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(harnack_ratio(&f, &g, &[0.1, 0.0, 0.0]), Err(SolverError::BallUnresolved { .. })));
        let b = apriori_bound(&f);
        assert!((b - 3.0 * 3f64.sqrt().sqrt()).abs() < 1e-12);
        let w = weighted_norm(&f, &[-0.5; 3], &[0.5; 3]).unwrap();
        assert!((w.total - 3.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_norm_of_linear_field() {
        let g = StratifiedSet::new(3, vec![Stratum::point(&[5.0; 3])]).unwrap();
        let grid = Grid::build(&box3(21)).unwrap();
        let a = [0.3, -0.4, 1.2];
        let f = ScalarField::from_fn(grid, 3, 5.0, &g, |x, _| 2.0 + a[0] * x[0] + a[1] * x[1] + a[2] * x[2]);
        let w = weighted_norm(&f, &[-0.5; 3], &[0.5; 3]).unwrap();
        let an = (a.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!(w.hess_term < 1e-9);
        assert!((w.grad_term - 0.5 * an).abs() < 1e-9);
        assert!((w.sup - (2.0 + 0.5 * (0.3 + 0.4 + 1.2))).abs() < 1e-12);
    }
}
