//! Blow-up exponents, scaling limits r^{β₀}u → v(ω), radial envelopes, decay classes and
//! conformal completeness of u^{q−1} g.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::elliptic_solver::{d0, Grid, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("shell holds {found} nodes, need 20")]
    ShellTooThin { found: usize },
    #[error("slice deltas do not shrink: {0:?}")]
    NoScalingLimit(Vec<f64>),
    #[error("envelope grows by {growth:e} toward the singular set")]
    EnvelopeUnbounded { growth: f64 },
    #[error("path point {index} lies outside the field")]
    PathOutOfDomain { index: usize },
    #[error("{0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ExponentFit {
    pub beta_fit: f64,
    pub stderr: f64,
    pub nodes: usize,
}

/// Least-squares slope of log u against −log ρ over unmasked nodes with ρ in `shell`
/// accepted by `keep`.
pub fn fit_exponent_where(
    field: &ScalarField,
    shell: (f64, f64),
    keep: impl Fn(&[f64]) -> bool,
) -> Result<ExponentFit, AsymptoticsError> {
    let mut xs = vec![];
    let mut ys = vec![];
    for i in 0..field.values.len() {
        let r = field.rho[i];
        if field.mask[i] || r < shell.0 || r > shell.1 || field.values[i] <= 0.0 {
            continue;
        }
        if !keep(&field.grid.coords(i)) {
            continue;
        }
        xs.push(-r.ln());
        ys.push(field.values[i].ln());
    }
    let n = xs.len();
    if n < 20 {
        return Err(AsymptoticsError::ShellTooThin { found: n });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-14 * n as f64 {
        return Err(AsymptoticsError::ShellTooThin { found: n });
    }
    let slope = sxy / sxx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let stderr = (sse / (n as f64 - 2.0).max(1.0) / sxx).sqrt();
    Ok(ExponentFit { beta_fit: slope, stderr, nodes: n })
}

pub fn fit_exponent(field: &ScalarField, shell: (f64, f64)) -> Result<ExponentFit, AsymptoticsError> {
    fit_exponent_where(field, shell, |_| true)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ShellStat {
    pub lo: f64,
    pub hi: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// min/max of ρ^{β₀}u over dyadic shells [ρ_max 2^{−k−1}, ρ_max 2^{−k}], k < `shells`.
pub fn shell_statistics(field: &ScalarField, rho_max: f64, shells: usize, keep: impl Fn(&[f64]) -> bool) -> Vec<ShellStat> {
    let b = field.beta0();
    let mut out: Vec<ShellStat> = (0..shells)
        .map(|k| {
            let hi = rho_max * 0.5f64.powi(k as i32);
            ShellStat { lo: 0.5 * hi, hi, min: f64::INFINITY, max: 0.0, count: 0 }
        })
        .collect();
    for i in 0..field.values.len() {
        let r = field.rho[i];
        if field.mask[i] || r <= 0.0 || r > rho_max {
            continue;
        }
        let k = (rho_max / r).log2().floor() as usize;
        if k >= shells || !keep(&field.grid.coords(i)) {
            continue;
        }
        let w = r.powf(b) * field.values[i];
        let s = &mut out[k];
        s.min = s.min.min(w);
        s.max = s.max.max(w);
        s.count += 1;
    }
    out.retain(|s| s.count > 0);
    out
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SandwichTest {
    pub c1: f64,
    pub c2: f64,
    pub holds: bool,
}

/// Two-sided bound test over the two finest populated shells: min > 0.1·max there and the
/// shell maxima stay within a factor 10 of each other.
pub fn sandwich_test(stats: &[ShellStat]) -> Option<SandwichTest> {
    if stats.len() < 2 {
        return None;
    }
    let fine = &stats[stats.len() - 2..];
    let c1 = fine.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    let c2 = fine.iter().map(|s| s.max).fold(0.0, f64::max);
    let top = stats.iter().map(|s| s.max).fold(0.0, f64::max);
    let bottom = stats.iter().map(|s| s.max).fold(f64::INFINITY, f64::min);
    let holds = c1 > 0.1 * c2 && c1 > 0.0 && top < 10.0 * bottom;
    Some(SandwichTest { c1, c2, holds })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum ScalingLimit {
    /// v(ω) samples (θ, v) from the last slice and the consecutive slice deltas.
    Converged { samples: Vec<(f64, f64)>, deltas: Vec<f64> },
    /// r^{β₀}u decays to zero at exponential rate `rate` in t.
    Zero { rate: f64, sups: Vec<f64>, deltas: Vec<f64> },
}

fn log_grid(field: &ScalarField) -> Result<&crate::elliptic_solver::LogRadialGrid, AsymptoticsError> {
    match &field.grid {
        Grid::LogRadial(g) => Ok(g),
        _ => Err(AsymptoticsError::InvalidInput("field is not on a log-radial grid".into())),
    }
}

/// Angular nodes at angular distance ≥ `avoid` from Γ (ρ/r ≥ sin avoid on every slice).
fn clear_angles(field: &ScalarField, slices: &[usize], avoid: f64) -> Vec<usize> {
    let g = log_grid(field).unwrap();
    (0..g.theta.len())
        .filter(|&j| {
            slices.iter().all(|&a| {
                let i = g.index(a, j);
                let r = (-g.t[a]).exp();
                !field.mask[i] && field.rho[i] >= avoid.sin() * r
            })
        })
        .collect()
}

/// Slices of r^{β₀}u for t in `t_window`, compared on link-avoiding angles.
pub fn scaling_limit(field: &ScalarField, t_window: (f64, f64), avoid: f64) -> Result<ScalingLimit, AsymptoticsError> {
    let g = log_grid(field)?;
    let b = field.beta0();
    let slices: Vec<usize> = (0..g.t.len()).filter(|&a| g.t[a] >= t_window.0 - 1e-12 && g.t[a] <= t_window.1 + 1e-12).collect();
    if slices.len() < 3 {
        return Err(AsymptoticsError::InvalidInput("t window holds fewer than 3 slices".into()));
    }
    let js = clear_angles(field, &slices, avoid);
    if js.is_empty() {
        return Err(AsymptoticsError::InvalidInput("no angles clear of the link".into()));
    }
    let v = |a: usize, j: usize| (-b * g.t[a]).exp() * field.values[g.index(a, j)];
    let sups: Vec<f64> = slices.iter().map(|&a| js.iter().map(|&j| v(a, j).abs()).fold(0.0, f64::max)).collect();
    let deltas: Vec<f64> = slices
        .windows(2)
        .map(|w| js.iter().map(|&j| (v(w[1], j) - v(w[0], j)).abs()).fold(0.0, f64::max))
        .collect();
    // zero branch: sup decays monotonically by at least a factor 4 across the window
    let decaying = sups.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let first = sups[0];
    let last = *sups.last().unwrap();
    if decaying && last < 0.25 * first {
        let span = g.t[*slices.last().unwrap()] - g.t[slices[0]];
        let rate = (first / last).ln() / span;
        return Ok(ScalingLimit::Zero { rate, sups, deltas });
    }
    let scale = sups.iter().copied().fold(0.0, f64::max).max(1e-300);
    let converged = deltas.iter().all(|&d| d <= 1e-10 * scale)
        || (deltas.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6) + 1e-12 * scale) && deltas.last() < deltas.first());
    if !converged {
        return Err(AsymptoticsError::NoScalingLimit(deltas));
    }
    let a = *slices.last().unwrap();
    let samples = js.iter().map(|&j| (g.theta[j], v(a, j))).collect();
    Ok(ScalingLimit::Converged { samples, deltas })
}

/// CSV (theta, v) of a converged scaling limit.
pub fn scaling_limit_csv(lim: &ScalingLimit) -> String {
    let mut s = String::from("theta,v\n");
    if let ScalingLimit::Converged { samples, .. } = lim {
        for (t, v) in samples {
            let _ = writeln!(s, "{t:.9e},{v:.12e}");
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Envelope {
    /// Increasing radii.
    pub radii: Vec<f64>,
    /// Raw sup-envelope f₀(r) = sup_{r_min ≤ s ≤ r} s^{β₀}u(s, ω₀).
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// r f′/f
    pub a: Vec<f64>,
    /// r² f″/f
    pub b: Vec<f64>,
    pub a_limit: f64,
    pub b_limit: f64,
    pub a_residual: f64,
    pub b_residual: f64,
}

/// Envelope from samples (r_k, g_k = r^{β₀}u) along a ray; radii need not be sorted.
pub fn envelope_from_samples(samples: &[(f64, f64)]) -> Result<Envelope, AsymptoticsError> {
    let mut pts: Vec<(f64, f64)> = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 9 {
        return Err(AsymptoticsError::InvalidInput("envelope needs at least 9 samples".into()));
    }
    if pts.iter().any(|p| !(p.1.is_finite() && p.1 > 0.0 && p.0 > 0.0)) {
        return Err(AsymptoticsError::EnvelopeUnbounded { growth: f64::INFINITY });
    }
    let outer = pts.last().unwrap().1;
    let peak = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let growth = peak / outer;
    if growth > 1e3 {
        return Err(AsymptoticsError::EnvelopeUnbounded { growth });
    }
    let radii: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut raw = Vec::with_capacity(pts.len());
    let mut run: f64 = 0.0;
    for p in &pts {
        run = run.max(p.1);
        raw.push(run);
    }
    // local quadratic least squares of log f in x = log r, then cumulative max
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let lf: Vec<f64> = raw.iter().map(|f| f.ln()).collect();
    let n = x.len();
    let half = 3usize;
    let mut smoothed = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let lo = k.saturating_sub(half).min(n - 2 * half - 1);
        let hi = lo + 2 * half + 1;
        let (c0, c1, c2) = quad_fit(&x[lo..hi], &lf[lo..hi], x[k]);
        smoothed[k] = c0.exp();
        a[k] = c1;
        b[k] = 2.0 * c2 + c1 * c1 - c1;
    }
    for k in 1..n {
        smoothed[k] = smoothed[k].max(smoothed[k - 1]);
    }
    let (a_limit, a_residual) = richardson_to_origin(&radii, &a);
    let (b_limit, b_residual) = richardson_to_origin(&radii, &b);
    Ok(Envelope { radii, raw, smoothed, a, b, a_limit, b_limit, a_residual, b_residual })
}

/// Fit y ≈ c0 + c1 (x − x0) + c2 (x − x0)²; returns (c0, c1, c2).
fn quad_fit(x: &[f64], y: &[f64], x0: f64) -> (f64, f64, f64) {
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let d = xi - x0;
        let p = [1.0, d, d * d];
        for i in 0..3 {
            r[i] += p[i] * yi;
            for j in 0..3 {
                m[i][j] += p[i] * p[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut mc = m;
        for i in 0..3 {
            mc[i][c] = r[i];
        }
        out[c] = det(&mc) / d;
    }
    (out[0], out[1], out[2])
}

/// Two-level Richardson extrapolation in h = 1/log(1/r) over the last decade of r, on the
/// triplets at r_min·10^{(1, 2/3, 1/3)} and 10^{(2/3, 1/3, 0)}. Returns (limit, spread).
fn richardson_to_origin(radii: &[f64], vals: &[f64]) -> (f64, f64) {
    let r_min = radii[0];
    let n = radii.len();
    let pick = |target: f64| {
        let k = (0..n).min_by(|&a, &b| (radii[a].ln() - target.ln()).abs().total_cmp(&(radii[b].ln() - target.ln()).abs())).unwrap();
        // stay clear of the one-sided fit at the ends
        k.clamp(3.min(n - 1), (n - 1).saturating_sub(3).max(3.min(n - 1)))
    };
    let ks: Vec<usize> = [1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0].iter().map(|e| pick(r_min * 10f64.powf(*e))).collect();
    let h = |k: usize| 1.0 / (1.0 / radii[k]).ln().abs().max(1e-12);
    let neville = |idx: &[usize]| -> Option<f64> {
        let hs: Vec<f64> = idx.iter().map(|&k| h(k)).collect();
        let ys: Vec<f64> = idx.iter().map(|&k| vals[k]).collect();
        if (hs[0] - hs[1]).abs() < 1e-14 || (hs[1] - hs[2]).abs() < 1e-14 {
            return None;
        }
        let p01 = (ys[1] * hs[0] - ys[0] * hs[1]) / (hs[0] - hs[1]);
        let p12 = (ys[2] * hs[1] - ys[1] * hs[2]) / (hs[1] - hs[2]);
        Some((p12 * hs[0] - p01 * hs[2]) / (hs[0] - hs[2]))
    };
    match (neville(&ks[0..3]), neville(&ks[1..4])) {
        (Some(a), Some(b)) => (b, (a - b).abs()),
        _ => (vals[ks[3]], 0.0),
    }
}

/// Envelope along the ray at angle θ₀ of a log-radial field over radii in `r_range`.
pub fn envelope(field: &ScalarField, theta0: f64, r_range: (f64, f64)) -> Result<Envelope, AsymptoticsError> {
    let g = log_grid(field)?;
    let b = field.beta0();
    let j = g.theta.iter().enumerate().min_by(|a, b| (a.1 - theta0).abs().total_cmp(&(b.1 - theta0).abs())).unwrap().0;
    let samples: Vec<(f64, f64)> = (0..g.t.len())
        .filter_map(|a| {
            let r = (-g.t[a]).exp();
            let i = g.index(a, j);
            (r >= r_range.0 && r <= r_range.1 && !field.mask[i]).then(|| (r, r.powf(b) * field.values[i]))
        })
        .collect();
    envelope_from_samples(&samples)
}

pub fn envelope_csv(env: &Envelope) -> String {
    let mut s = String::from("r,f_raw,f_smooth,a,b\n");
    for k in 0..env.radii.len() {
        let _ = writeln!(s, "{:.9e},{:.12e},{:.12e},{:.9e},{:.9e}", env.radii[k], env.raw[k], env.smoothed[k], env.a[k], env.b[k]);
    }
    s
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub enum DecayCase {
    Power(f64),
    Flat,
    Critical,
}

const BAND: f64 = 1e-3;

pub fn classify_decay(env: &Envelope) -> DecayCase {
    let ok = |lim: f64, res: f64| res < 0.1 * lim.abs() || res < BAND;
    if !ok(env.a_limit, env.a_residual) {
        return DecayCase::Critical;
    }
    if env.a_limit > BAND {
        return DecayCase::Power(env.a_limit);
    }
    if env.a_limit.abs() <= BAND && ok(env.b_limit, env.b_residual) && env.b_limit.abs() <= BAND {
        return DecayCase::Flat;
    }
    DecayCase::Critical
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum Completeness {
    Diverges { dyad_sums: Vec<f64> },
    Finite { length: f64, dyad_sums: Vec<f64> },
}

impl Completeness {
    pub fn is_complete(&self) -> bool {
        matches!(self, Completeness::Diverges { .. })
    }
}

/// Geometric path from `start` to `end` with `samples` points accumulating at `end`.
pub fn geometric_path(start: &[f64], end: &[f64], samples: usize, ratio: f64) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|k| {
            let s = if k + 1 == samples { 0.0 } else { ratio.powi(k as i32) };
            start.iter().zip(end).map(|(a, b)| b + s * (a - b)).collect()
        })
        .collect()
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// ĝ-length ∫ u^{(q−1)/2} ds along a polyline ending on Γ, split into dyads of arclength
/// distance to the end point. Dyads reaching below `floor` are dropped.
pub fn completeness_length_with(
    path: &[Vec<f64>],
    density: impl Fn(&[f64]) -> Option<f64>,
    floor: f64,
) -> Result<Completeness, AsymptoticsError> {
    if path.len() < 100 {
        return Err(AsymptoticsError::InvalidInput("path needs at least 100 samples".into()));
    }
    let seg: Vec<f64> = path.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).collect();
    let total: f64 = seg.iter().sum();
    // arclength remaining to the end at each vertex
    let mut rem = vec![0.0; path.len()];
    for k in (0..seg.len()).rev() {
        rem[k] = rem[k + 1] + seg[k];
    }
    let point_at = |s: f64| -> Vec<f64> {
        // s = remaining arclength
        let k = rem.partition_point(|&r| r > s).clamp(1, path.len() - 1) - 1;
        let w = if seg[k] > 0.0 { ((rem[k] - s) / seg[k]).clamp(0.0, 1.0) } else { 0.0 };
        path[k].iter().zip(&path[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
    };
    for (k, p) in path.iter().enumerate() {
        if rem[k] >= floor && density(p).is_none() {
            return Err(AsymptoticsError::PathOutOfDomain { index: k });
        }
    }
    let mut sums = vec![];
    let mut hi = total;
    while 0.5 * hi >= floor {
        let lo = 0.5 * hi;
        let mut acc = 0.0;
        for &(x, w) in &GAUSS8 {
            let s = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x;
            let p = point_at(s);
            let d = density(&p).ok_or(AsymptoticsError::PathOutOfDomain { index: rem.partition_point(|&r| r > s) })?;
            acc += w * 0.5 * (hi - lo) * d;
        }
        sums.push(acc);
        hi = lo;
    }
    if sums.len() < 5 {
        return Err(AsymptoticsError::InvalidInput("fewer than 5 dyads above the floor".into()));
    }
    let tail = &sums[sums.len() - 4..];
    if tail.windows(2).all(|w| w[1] >= 0.95 * w[0]) {
        return Ok(Completeness::Diverges { dyad_sums: sums });
    }
    let last = *sums.last().unwrap();
    let ratio = (tail[3] / tail[2]).clamp(0.0, 0.95);
    let length = sums.iter().sum::<f64>() + last * ratio / (1.0 - ratio);
    Ok(Completeness::Finite { length, dyad_sums: sums })
}

pub fn completeness_length(field: &ScalarField, path: &[Vec<f64>], floor: f64) -> Result<Completeness, AsymptoticsError> {
    let e = 0.5 * (field.meta.q - 1.0);
    completeness_length_with(path, |x| field.interpolate(x).map(|u| u.max(0.0).powf(e)), floor)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DeltaWitness {
    pub delta: f64,
    pub stderr: f64,
    /// sup of ρ^{β₀−δ}u over the fit window.
    pub bound: f64,
}

/// Fits ρ^{β₀}u ≈ A ρ^{δ} along a ray of the log-radial field at θ₀ over `r_range`.
pub fn delta_witness(field: &ScalarField, theta0: f64, r_range: (f64, f64)) -> Result<DeltaWitness, AsymptoticsError> {
    let g = log_grid(field)?;
    let b = field.beta0();
    let j = g.theta.iter().enumerate().min_by(|a, b| (a.1 - theta0).abs().total_cmp(&(b.1 - theta0).abs())).unwrap().0;
    let pts: Vec<(f64, f64, f64)> = (0..g.t.len())
        .filter_map(|a| {
            let i = g.index(a, j);
            let r = field.rho[i];
            (r >= r_range.0 && r <= r_range.1 && !field.mask[i] && field.values[i] > 0.0).then(|| (r.ln(), (r.powf(b) * field.values[i]).ln(), field.values[i]))
        })
        .collect();
    if pts.len() < 5 {
        return Err(AsymptoticsError::ShellTooThin { found: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let delta = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p.1 - my - delta * (p.0 - mx)).powi(2)).sum();
    let stderr = (sse / (n - 2.0).max(1.0) / sxx).sqrt();
    let bound = pts.iter().map(|p| (p.0 * (b - delta)).exp() * p.2).fold(0.0, f64::max);
    Ok(DeltaWitness { delta, stderr, bound })
}

/// Angle of the slice minimiser of r^{β₀}u at the innermost slice of `t_window`.
pub fn minimising_angle(field: &ScalarField, t_window: (f64, f64), avoid: f64) -> Result<f64, AsymptoticsError> {
    let g = log_grid(field)?;
    let a = (0..g.t.len()).filter(|&a| g.t[a] <= t_window.1 + 1e-12).last().ok_or(AsymptoticsError::InvalidInput("empty window".into()))?;
    let js = clear_angles(field, &[a], avoid);
    js.into_iter()
        .min_by(|&x, &y| field.values[g.index(a, x)].total_cmp(&field.values[g.index(a, y)]))
        .map(|j| g.theta[j])
        .ok_or(AsymptoticsError::InvalidInput("no angles clear of the link".into()))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BlowupProfile {
    pub beta_fit: f64,
    pub beta_stderr: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub strong_singularity: bool,
    pub delta_witness: Option<f64>,
    pub complete: bool,
}

impl BlowupProfile {
    /// Strong singularity requires a sandwich and an exponent within `beta_tol` of β₀; it
    /// forces completeness.
    pub fn assemble(
        fit: ExponentFit,
        beta0: f64,
        beta_tol: f64,
        sandwich: Option<SandwichTest>,
        delta: Option<&DeltaWitness>,
        completeness: &Completeness,
    ) -> Result<Self, AsymptoticsError> {
        let sw = sandwich.filter(|s| s.holds);
        let strong = sw.is_some() && (fit.beta_fit - beta0).abs() <= beta_tol;
        let complete = completeness.is_complete();
        if strong && !complete {
            return Err(AsymptoticsError::InvalidInput("strong singularity with a finite ĝ-length".into()));
        }
        Ok(BlowupProfile {
            beta_fit: fit.beta_fit,
            beta_stderr: fit.stderr,
            c1: sw.map(|s| s.c1),
            c2: sw.map(|s| s.c2),
            strong_singularity: strong,
            delta_witness: delta.map(|d| d.delta),
            complete,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
pub enum Regime {
    Below,
    Critical,
    Above,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ThresholdReport {
    pub d0: f64,
    pub dim: usize,
    pub regime: Regime,
    pub consistent: bool,
    pub flags: Vec<String>,
}

/// Checks the verdicts against the tangent-cone dimension: below d₀ forbids strong
/// singularity and completeness; above d₀ with smooth Γ expects strong singularity.
pub fn threshold_verdict(n: usize, q: f64, dim: usize, smooth: bool, profile: &BlowupProfile) -> Result<ThresholdReport, AsymptoticsError> {
    let d0 = d0(n, q).map_err(|e| AsymptoticsError::InvalidInput(e.to_string()))?;
    let gap = dim as f64 - d0;
    let regime = if gap.abs() < 1e-9 {
        Regime::Critical
    } else if gap < 0.0 {
        Regime::Below
    } else {
        Regime::Above
    };
    let mut flags = vec![];
    match regime {
        Regime::Below => {
            if profile.strong_singularity {
                flags.push("strong singularity below threshold".to_string());
            }
            if profile.complete {
                flags.push("complete metric below threshold".to_string());
            }
        }
        Regime::Above => {
            if smooth && !profile.strong_singularity {
                flags.push("no strong singularity above threshold".to_string());
            }
        }
        Regime::Critical => {}
    }
    Ok(ThresholdReport { d0, dim, regime, consistent: flags.is_empty(), flags })
}
