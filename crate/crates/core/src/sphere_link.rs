//! Green's kernel of −Δ_ω + β₀d₀ on S^{n−1}, Poisson transforms over link strata, the link
//! equation Δ_ω v = v^q + β₀d₀ v and the comparison lower bound near the link.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::elliptic_solver::{beta0, d0, half_space_constant, tube_closure_constant, Stage};
use crate::solver_core::{monotone_solve, Discretization, IterationReport, SolveError, SolveOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SphereError {
    #[error("no global kernel: d₀ = {0} ≤ 0")]
    NoGlobalKernel(f64),
    #[error("points coincide")]
    DiagonalSingularity,
    #[error("evaluation point within {dist:e} of the support, resolution {resolution:e}")]
    QuadratureUnderResolved { dist: f64, resolution: f64 },
    #[error("no comparison step with v̄ ≥ v after {steps} steps")]
    ComparisonFailed { steps: usize },
    #[error("exponent n−k−3 = {0} < 0: lower bound vacuous")]
    VacuousExponent(i64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{0}")]
    InvalidInput(String),
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.reverse();
    out
}

/// Surface area of the unit sphere S^m.
pub fn sphere_area(m: usize) -> f64 {
    let k = (m + 1) as f64;
    2.0 * PI.powf(0.5 * k) / libm_gamma(0.5 * k)
}

fn libm_gamma(x: f64) -> f64 {
    // half-integers and integers only
    let mut v = if (x - x.floor()).abs() < 1e-12 { 1.0 } else { PI.sqrt() };
    let mut y = if (x - x.floor()).abs() < 1e-12 { 1.0 } else { 0.5 };
    while y < x - 1e-12 {
        v *= y;
        y += 1.0;
    }
    v
}

pub fn angle(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = x.iter().zip(y).map(|(a, b)| (a / nx - b / ny).powi(2)).sum::<f64>().sqrt();
    2.0 * (0.5 * d).min(1.0).asin()
}

/// Kernel of −Δ_ω + κ on S^{n−1}, κ = β₀d₀, eigenvalues l(l+n−2).
#[derive(Debug, Clone, Serialize)]
pub struct GreensKernel {
    pub n: usize,
    pub q: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub degree: usize,
    /// (l + α)/(α |S^{n−1}|) / (λ_l + κ)
    pub coefficients: Vec<f64>,
    area: f64,
    panels: Vec<(f64, f64)>,
}

const SUBTRACTED_LEVELS: i32 = 2;

impl GreensKernel {
    pub fn new(n: usize, q: f64, degree: usize) -> Result<Self, SphereError> {
        let b = beta0(q).map_err(|e| SphereError::InvalidInput(e.to_string()))?;
        let d = d0(n, q).map_err(|e| SphereError::InvalidInput(e.to_string()))?;
        if !(d > 0.0) {
            return Err(SphereError::NoGlobalKernel(d));
        }
        if n < 3 || degree < 8 {
            return Err(SphereError::InvalidInput("need n ≥ 3 and degree ≥ 8".into()));
        }
        let kappa = b * d;
        let alpha = 0.5 * (n as f64 - 2.0);
        let area = sphere_area(n - 1);
        let coefficients = (0..=degree)
            .map(|l| {
                let l = l as f64;
                (l + alpha) / (alpha * area) / (l * (l + 2.0 * alpha) + kappa)
            })
            .collect();
        let gl = gauss_legendre(16);
        Ok(GreensKernel { n, q, kappa, alpha, degree, coefficients, area, panels: gl })
    }

    /// Gegenbauer values C_l^α(t), l = 0..=L.
    fn gegenbauer(&self, t: f64, l_max: usize) -> Vec<f64> {
        let a = self.alpha;
        let mut c = vec![0.0; l_max + 1];
        c[0] = 1.0;
        if l_max >= 1 {
            c[1] = 2.0 * a * t;
        }
        for l in 1..l_max {
            let lf = l as f64;
            c[l + 1] = (2.0 * (lf + a) * t * c[l] - (lf + 2.0 * a - 1.0) * c[l - 1]) / (lf + 1.0);
        }
        c
    }

    /// I_k(θ) = ∫₀¹ r^{α−1} (log 1/r)^{k−1}/(k−1)! (1 − 2r cos θ + r²)^{−α} dr.
    fn comparison_integral(&self, k: i32, theta: f64) -> f64 {
        let a = self.alpha;
        let s2 = (0.5 * theta).sin().powi(2);
        let fact: f64 = (1..k).map(|j| j as f64).product();
        let f = |s: f64| {
            // r = s^{1/α}, r^{α−1} dr = ds/α
            let r = s.powf(1.0 / a);
            let lg = -s.ln() / a;
            let d = (1.0 - r).powi(2) + 4.0 * r * s2;
            lg.powi(k - 1) / fact * d.powf(-a) / a
        };
        let mut cuts = vec![0.0];
        for j in (1..=60).rev() {
            cuts.push(0.5f64.powi(j));
        }
        let near = (a * theta * 1e-3).max(1e-15);
        let mut g = 0.5;
        while g > near {
            g *= 0.5;
            cuts.push(1.0 - g);
        }
        cuts.push(1.0);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for &(x, wt) in &self.panels {
                total += wt * half * f(mid + half * x);
            }
        }
        total
    }

    fn remainder_sum(&self, t: f64, l_max: usize) -> f64 {
        let a = self.alpha;
        let gamma = a * a - self.kappa;
        let c = self.gegenbauer(t, l_max);
        let mut s = 0.0;
        for (l, cl) in c.iter().enumerate() {
            let la = l as f64 + a;
            let lam = l as f64 * (l as f64 + 2.0 * a);
            s += la * cl * gamma.powi(SUBTRACTED_LEVELS + 1) / (la.powi(2 * SUBTRACTED_LEVELS + 2) * (lam + self.kappa));
        }
        s
    }

    /// G at angular distance θ with the flat comparison series subtracted.
    pub fn eval_angle(&self, theta: f64) -> Result<f64, SphereError> {
        if !(theta > 1e-12) {
            return Err(SphereError::DiagonalSingularity);
        }
        let gamma = self.alpha * self.alpha - self.kappa;
        let head: f64 = (0..=SUBTRACTED_LEVELS).map(|j| gamma.powi(j) * self.comparison_integral(2 * j + 1, theta)).sum();
        let rem = self.remainder_sum(theta.cos(), self.degree);
        Ok((head + rem) / (self.alpha * self.area))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, SphereError> {
        if x.len() != self.n || y.len() != self.n {
            return Err(SphereError::InvalidInput("points must lie in R^n".into()));
        }
        self.eval_angle(angle(x, y))
    }

    /// |S_L − S_{3L/4}| of the remainder series relative to G(θ).
    pub fn tail_bound(&self, theta: f64) -> Result<f64, SphereError> {
        let g = self.eval_angle(theta)?;
        let t = theta.cos();
        let full = self.remainder_sum(t, self.degree);
        let part = self.remainder_sum(t, 3 * self.degree / 4);
        Ok(((full - part) / (self.alpha * self.area) / g).abs())
    }

    /// Plain truncated series Σ_l coefficient_l C_l^α(cos θ) up to `l_max`, no subtraction.
    pub fn eval_plain(&self, theta: f64, l_max: usize) -> f64 {
        let c = self.gegenbauer(theta.cos(), l_max);
        let a = self.alpha;
        c.iter()
            .enumerate()
            .map(|(l, cl)| {
                let lf = l as f64;
                (lf + a) / (a * self.area) / (lf * (lf + 2.0 * a) + self.kappa) * cl
            })
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,coefficient\n");
        for (l, c) in self.coefficients.iter().enumerate() {
            let _ = writeln!(s, "{l},{c:.15e}");
        }
        s
    }
}

pub type SphereChart = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One stratum of the link: a chart into R^n (normalised onto the sphere) with a density.
#[derive(Clone)]
pub struct LinkStratum {
    pub dim: usize,
    pub chart: SphereChart,
    pub density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl std::fmt::Debug for LinkStratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LinkStratum(dim {})", self.dim)
    }
}

impl LinkStratum {
    pub fn point(p: &[f64], mass: f64) -> Self {
        let p = p.to_vec();
        LinkStratum { dim: 0, chart: Arc::new(move |_| p.clone()), density: Arc::new(move |_| mass), lo: vec![], hi: vec![] }
    }

    pub fn chart<F, D>(dim: usize, chart: F, density: D, lo: &[f64], hi: &[f64]) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        LinkStratum { dim, chart: Arc::new(chart), density: Arc::new(density), lo: lo.to_vec(), hi: hi.to_vec() }
    }
}

/// Density-weighted link strata with a product Gauss rule per stratum.
#[derive(Debug, Clone)]
pub struct LinkMeasure {
    pub strata: Vec<LinkStratum>,
    /// (unit point, weight)
    pub nodes: Vec<(Vec<f64>, f64)>,
    /// Largest angular gap between neighbouring quadrature nodes.
    pub resolution: f64,
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl LinkMeasure {
    /// `panels` Gauss panels of order `order` per chart parameter.
    pub fn new(strata: Vec<LinkStratum>, panels: usize, order: usize) -> Result<Self, SphereError> {
        let gl = gauss_legendre(order);
        let mut nodes = vec![];
        let mut resolution: f64 = 0.0;
        for st in &strata {
            if st.dim == 0 {
                let m = (st.density)(&[]);
                if m < 0.0 {
                    return Err(SphereError::InvalidInput("negative density".into()));
                }
                nodes.push((normalize((st.chart)(&[])), m));
                continue;
            }
            let d = st.dim;
            let per_axis: Vec<Vec<(f64, f64)>> = (0..d)
                .map(|a| {
                    let h = (st.hi[a] - st.lo[a]) / panels as f64;
                    (0..panels)
                        .flat_map(|p| {
                            let lo = st.lo[a] + p as f64 * h;
                            gl.iter().map(move |&(x, w)| (lo + 0.5 * h * (x + 1.0), 0.5 * h * w)).collect::<Vec<_>>()
                        })
                        .collect()
                })
                .collect();
            let count: usize = per_axis.iter().map(|a| a.len()).product();
            let mut prev: Option<Vec<f64>> = None;
            for flat in 0..count {
                let mut rest = flat;
                let mut idx = vec![0usize; d];
                for a in (0..d).rev() {
                    idx[a] = rest % per_axis[a].len();
                    rest /= per_axis[a].len();
                }
                let s: Vec<f64> = (0..d).map(|a| per_axis[a][idx[a]].0).collect();
                let w: f64 = (0..d).map(|a| per_axis[a][idx[a]].1).product();
                let p = normalize((st.chart)(&s));
                let phi = (st.density)(&s);
                if phi < 0.0 {
                    return Err(SphereError::InvalidInput("negative density".into()));
                }
                if let Some(q) = &prev {
                    if idx[d - 1] > 0 {
                        resolution = resolution.max(angle(q, &p));
                    }
                }
                prev = Some(p.clone());
                nodes.push((p, w * induced_volume(&st.chart, &s) * phi));
            }
        }
        Ok(LinkMeasure { strata, nodes, resolution })
    }

    pub fn max_dim(&self) -> usize {
        self.strata.iter().map(|s| s.dim).max().unwrap_or(0)
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).sum()
    }

    /// Angular distance from x to the nearest quadrature node.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.nodes.iter().map(|(p, _)| angle(x, p)).fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut m = self.clone();
        m.nodes.iter_mut().for_each(|n| n.1 *= k);
        m
    }
}

/// sqrt det(JᵀJ) of the normalised chart, by central differences.
fn induced_volume(chart: &SphereChart, s: &[f64]) -> f64 {
    let d = s.len();
    let h = 1e-6;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let mut sp = s.to_vec();
            let mut sm = s.to_vec();
            sp[a] += h;
            sm[a] -= h;
            let (p, m) = (normalize(chart(&sp)), normalize(chart(&sm)));
            p.iter().zip(&m).map(|(x, y)| (x - y) / (2.0 * h)).collect()
        })
        .collect();
    let mut g = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            g[i][j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        }
    }
    determinant(g).max(0.0).sqrt()
}

fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

/// ∫ G(x, y) φ(y) dν(y) by the measure's quadrature.
pub fn poisson_transform(kernel: &GreensKernel, mu: &LinkMeasure, x: &[f64]) -> Result<f64, SphereError> {
    let dist = mu.distance(x);
    if dist < mu.resolution.max(1e-12) {
        return Err(SphereError::QuadratureUnderResolved { dist, resolution: mu.resolution });
    }
    let mut s = 0.0;
    for (p, w) in &mu.nodes {
        s += w * kernel.eval(x, p)?;
    }
    Ok(s)
}

/// Orthonormal basis of the tangent space at unit x.
fn tangent_basis(x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut basis: Vec<Vec<f64>> = vec![];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        for b in std::iter::once(x.to_vec()).chain(basis.iter().cloned()) {
            let c: f64 = e.iter().zip(&b).map(|(a, b)| a * b).sum();
            e.iter_mut().zip(&b).for_each(|(a, b)| *a -= c * b);
        }
        let nn = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nn > 1e-6 {
            basis.push(e.into_iter().map(|v| v / nn).collect());
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    basis
}

/// Relative residual |Δ_ω v − κ v| / (κ |v|) at x by geodesic second differences with step h.
pub fn transform_residual(kernel: &GreensKernel, mu: &LinkMeasure, x: &[f64], h: f64) -> Result<f64, SphereError> {
    let x = normalize(x.to_vec());
    let v0 = poisson_transform(kernel, mu, &x)?;
    let mut lap = 0.0;
    for e in tangent_basis(&x) {
        for sgn in [1.0, -1.0] {
            let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a * h.cos() + sgn * b * h.sin()).collect();
            lap += poisson_transform(kernel, mu, &y)? - v0;
        }
    }
    lap /= h * h;
    Ok((lap - kernel.kappa * v0).abs() / (kernel.kappa * v0.abs()))
}

/// Zonal solution of the link equation on S^{n−1}: v depends on the polar angle φ only.
#[derive(Debug, Clone, Serialize)]
pub struct LinkSolution {
    pub n: usize,
    pub q: f64,
    pub phi: Vec<f64>,
    pub v: Vec<f64>,
    pub mask: Vec<bool>,
    /// Angular distance to the support.
    pub sigma: Vec<f64>,
    pub reports: Vec<IterationReport>,
    /// sup σ^{β₀} v over unmasked nodes.
    pub apriori: f64,
}

impl LinkSolution {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi,sigma,v\n");
        for j in 0..self.phi.len() {
            let _ = writeln!(s, "{:.9e},{:.9e},{:.12e}", self.phi[j], self.sigma[j], self.v[j]);
        }
        s
    }

    /// Least-squares exponent of v against σ over σ in `shell`.
    pub fn beta_fit(&self, shell: (f64, f64)) -> Option<f64> {
        let pts: Vec<(f64, f64)> = (0..self.phi.len())
            .filter(|&j| !self.mask[j] && self.sigma[j] >= shell.0 && self.sigma[j] <= shell.1 && self.v[j] > 0.0)
            .map(|j| (-self.sigma[j].ln(), self.v[j].ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        Some(sxy / sxx)
    }
}

/// Monotone iteration for Δ_ω v = v^q + β₀d₀ v on a cell-centred zonal grid of `cells`
/// polar cells; `support` lists polar angles of the link (0 or π for poles, otherwise
/// latitude spheres).
pub fn solve_link_equation(
    n: usize,
    q: f64,
    support: &[f64],
    cells: usize,
    schedule: &[Stage],
    opts: &SolveOptions,
) -> Result<LinkSolution, SphereError> {
    let b = beta0(q).map_err(|e| SphereError::InvalidInput(e.to_string()))?;
    let d = d0(n, q).map_err(|e| SphereError::InvalidInput(e.to_string()))?;
    if !(d > 0.0) {
        return Err(SphereError::NoGlobalKernel(d));
    }
    if cells < 3 {
        return Err(SphereError::InvalidInput("need at least 3 cells".into()));
    }
    let kappa = b * d;
    let m_dim = n - 1;
    let h = PI / cells as f64;
    let phi: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * h).collect();
    let sigma: Vec<f64> = phi.iter().map(|&p| support.iter().map(|&s| (p - s).abs()).fold(f64::INFINITY, f64::min)).collect();
    let sw = |x: f64| x.sin().powi(m_dim as i32 - 1);
    let vol: Vec<f64> = phi.iter().map(|&p| sw(p) * h).collect();
    let faces: Vec<(usize, usize, f64)> = (0..cells - 1).map(|j| (j, j + 1, sw(phi[j] + 0.5 * h) / h)).collect();
    let closure = tube_closure_constant(q);
    let big_c = 2.0 * half_space_constant(q).unwrap() + kappa.powf(1.0 / (q - 1.0)) * PI.powf(b);
    let mut reports = vec![];
    let mut v = vec![0.0; cells];
    let mut mask = vec![false; cells];
    let stages: Vec<Stage> = if support.is_empty() { schedule.iter().take(1).cloned().collect() } else { schedule.to_vec() };
    for st in &stages {
        mask = sigma.iter().map(|&s| s < st.eps.max(0.5 * h * (1.0 + 1e-9))).collect();
        let mut data = vec![0.0; cells];
        for j in 0..cells {
            if mask[j] {
                let val = if sigma[j] < 0.5 * h { closure * h.powf(-b) } else { big_c * sigma[j].powf(-b) };
                data[j] = st.m.min(val);
            }
        }
        let cap = data.iter().copied().fold(st.m, f64::max);
        let disc = Discretization { n_nodes: cells, fixed: mask.clone(), vol: vol.clone(), faces: faces.clone(), p: vec![1.0; cells], s: vec![kappa; cells], q };
        v = (0..cells).map(|j| if mask[j] { data[j] } else { cap.min(big_c * sigma[j].max(0.5 * h).powf(-b)) }).collect();
        disc.repair_upper(&mut v, &vec![cap; cells]);
        reports.push(monotone_solve(&disc, &mut v, opts)?);
    }
    let apriori = (0..cells).filter(|&j| !mask[j]).map(|j| sigma[j].powf(b) * v[j]).fold(0.0, f64::max);
    Ok(LinkSolution { n, q, phi, v, mask, sigma, reports, apriori })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComparisonCertificate {
    /// Path on the sphere from the seed toward the support.
    pub path: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// Scale applied to μ so that v ≤ v̄ at the seed.
    pub mu_scale: f64,
    /// min over the path of v̄ σ^{n−k−3} (or v̄ / (1 + |log σ|) when n−k−3 = 0).
    pub delta: f64,
    /// The same quantity at the innermost path point.
    pub delta_near: f64,
    pub log_branch: bool,
}

/// Greedy descent toward the support along which v̄ ≥ v = P[μ]; stops at σ ≤ `sigma_stop`.
pub fn comparison_lower_bound(
    vbar: &dyn Fn(&[f64]) -> f64,
    kernel: &GreensKernel,
    mu: &LinkMeasure,
    seed: &[f64],
    step: f64,
    sigma_stop: f64,
) -> Result<ComparisonCertificate, SphereError> {
    let k = mu.max_dim() as i64;
    let expo = kernel.n as i64 - k - 3;
    if expo < 0 {
        return Err(SphereError::VacuousExponent(expo));
    }
    let log_branch = expo == 0;
    let weight = |s: f64| if log_branch { 1.0 / (1.0 + s.ln().abs()) } else { s.powi(expo as i32) };
    let mut x = normalize(seed.to_vec());
    let v_seed = poisson_transform(kernel, mu, &x)?;
    let vb_seed = vbar(&x);
    if !(vb_seed > 0.0) {
        return Err(SphereError::InvalidInput("v̄ must be positive at the seed".into()));
    }
    let mu_scale = if v_seed < vb_seed { 1.0 } else { 0.5 * vb_seed / v_seed };
    let mut path = vec![x.clone()];
    let mut sig = vec![mu.distance(&x)];
    let mut delta = vb_seed * weight(sig[0]);
    let max_steps = (PI / step).ceil() as usize * 4;
    let mut steps = 0;
    while *sig.last().unwrap() > sigma_stop {
        steps += 1;
        if steps > max_steps {
            return Err(SphereError::ComparisonFailed { steps });
        }
        // nearest support node gives the descent direction; fan out if blocked
        let (target, _) = mu.nodes.iter().map(|(p, _)| (p, angle(&x, p))).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let dir: Vec<f64> = {
            let c: f64 = target.iter().zip(&x).map(|(a, b)| a * b).sum();
            normalize(target.iter().zip(&x).map(|(a, b)| a - c * b).collect())
        };
        let basis = tangent_basis(&x);
        let sig_now = *sig.last().unwrap();
        let h = step.min(0.5 * (sig_now - sigma_stop).max(0.5 * sigma_stop)).min(0.5 * sig_now);
        let mut candidates = vec![dir.clone()];
        for e in &basis {
            for s in [0.3, -0.3] {
                candidates.push(normalize(dir.iter().zip(e).map(|(a, b)| a + s * b).collect()));
            }
        }
        let mut moved = false;
        for c in candidates {
            let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a * h.cos() + b * h.sin()).collect();
            let s_y = mu.distance(&y);
            if s_y >= sig_now || s_y < mu.resolution {
                continue;
            }
            let v = mu_scale * poisson_transform(kernel, mu, &y)?;
            let vb = vbar(&y);
            if vb - v >= 0.0 {
                delta = delta.min(vb * weight(s_y));
                x = y;
                path.push(x.clone());
                sig.push(s_y);
                moved = true;
                break;
            }
        }
        if !moved {
            return Err(SphereError::ComparisonFailed { steps });
        }
    }
    let delta_near = vbar(&x) * weight(*sig.last().unwrap());
    Ok(ComparisonCertificate { path, sigma: sig, mu_scale, delta, delta_near, log_branch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let gl = gauss_legendre(10);
        let s: f64 = gl.iter().map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn kernel_needs_positive_threshold() {
        assert_eq!(GreensKernel::new(3, 3.0, 64).unwrap_err(), SphereError::NoGlobalKernel(0.0));
        let k = GreensKernel::new(4, 3.0, 64).unwrap();
        assert_eq!(k.eval(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]), Err(SphereError::DiagonalSingularity));
    }
}
