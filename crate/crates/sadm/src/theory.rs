//! Numerical verification of the joint-sample reading of structural
//! training on tractable 1D toy instances: forward-kernel consistency for
//! sample pairs, Bayes decomposition of the relation-conditioned score, the
//! Jensen bound chain connecting the relation-density objective to the
//! pairwise relation loss, and the equivalence of the batch structural
//! distance with its pairwise enumeration.

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};
use crate::structure::{
    affinity, relation_value, structural_distance, DistanceFn, RelationFn,
};
use crate::tensor::{Tape, Tensor};
use std::f64::consts::PI;
use std::fmt;

// ── Report plumbing ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct TheoryReport {
    pub lines: Vec<CheckLine>,
}

impl TheoryReport {
    pub fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.lines.push(CheckLine {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn extend(&mut self, other: TheoryReport) {
        self.lines.extend(other.lines);
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(
                f,
                "[{}] {} — {}",
                if line.pass { "PASS" } else { "FAIL" },
                line.name,
                line.detail
            )?;
        }
        Ok(())
    }
}

// ── Toy distributions with closed-form diffusion posteriors ────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyDist {
    Gaussian { mean: f64, std: f64 },
    /// Two-component mixture; `weight` is the mass of the first component.
    Mixture2 {
        means: [f64; 2],
        stds: [f64; 2],
        weight: f64,
    },
}

impl ToyDist {
    pub fn standard() -> Self {
        ToyDist::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn mixture() -> Self {
        ToyDist::Mixture2 {
            means: [-1.5, 1.5],
            stds: [0.5, 0.5],
            weight: 0.5,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ToyDist::Gaussian { .. } => "gaussian",
            ToyDist::Mixture2 { .. } => "mixture2",
        }
    }

    fn components(&self) -> Vec<(f64, f64, f64)> {
        match *self {
            ToyDist::Gaussian { mean, std } => vec![(1.0, mean, std)],
            ToyDist::Mixture2 {
                means,
                stds,
                weight,
            } => vec![(weight, means[0], stds[0]), (1.0 - weight, means[1], stds[1])],
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let comps = self.components();
        let u = rng.uniform(0.0, 1.0);
        let (_, mean, std) = if u < comps[0].0 { comps[0] } else { comps[1 % comps.len()] };
        mean + std * rng.standard_normal()
    }

    pub fn mean_var(&self) -> (f64, f64) {
        let comps = self.components();
        let mean: f64 = comps.iter().map(|(w, m, _)| w * m).sum();
        let second: f64 = comps.iter().map(|(w, m, s)| w * (s * s + m * m)).sum();
        (mean, second - mean * mean)
    }

    /// Posterior mixture over x₀ given x_t under the VP kernel: each prior
    /// component conjugates to a Gaussian with
    /// v = s²σ²/(σ² + α²s²), m = v·(μ/s² + α·x_t/σ²),
    /// and log-weight ln w + ln N(x_t; αμ, α²s² + σ²).
    pub fn posterior(&self, alpha: f64, sigma2: f64, xt: f64) -> Vec<(f64, f64, f64)> {
        let comps = self.components();
        let mut out = Vec::with_capacity(comps.len());
        let mut log_ws = Vec::with_capacity(comps.len());
        for (w, mu, s) in &comps {
            let s2 = s * s;
            let v = s2 * sigma2 / (sigma2 + alpha * alpha * s2);
            let m = v * (mu / s2 + alpha * xt / sigma2);
            let marg_var = alpha * alpha * s2 + sigma2;
            let log_w = w.ln() + ln_gauss(xt, alpha * mu, marg_var);
            out.push((0.0, m, v));
            log_ws.push(log_w);
        }
        let max = log_ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for lw in &mut log_ws {
            *lw = (*lw - max).exp();
            z += *lw;
        }
        for (slot, lw) in out.iter_mut().zip(log_ws.iter()) {
            slot.0 = lw / z;
        }
        out
    }

    pub fn sample_posterior(rng: &mut StreamRng, posterior: &[(f64, f64, f64)]) -> f64 {
        let u = rng.uniform(0.0, 1.0);
        let mut acc = 0.0;
        for &(w, m, v) in posterior {
            acc += w;
            if u < acc {
                return m + v.sqrt() * rng.standard_normal();
            }
        }
        let &(_, m, v) = posterior.last().unwrap();
        m + v.sqrt() * rng.standard_normal()
    }
}

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + var.ln() + (2.0 * PI).ln())
}

fn gauss(x: f64, mean: f64, var: f64) -> f64 {
    ln_gauss(x, mean, var).exp()
}

/// 1D relation between two scalars, shared with the batch affinity code.
pub fn scalar_relation(rel: RelationFn, a: f64, b: f64) -> f64 {
    relation_value(rel, &[a], &[b])
}

// ── Relation density g(R | y₀) on a fixed grid ─────────────────────────

/// Gaussian density over the relation variable, mean R(x_i, x_j) and
/// variance γ².
#[derive(Debug, Clone, Copy)]
pub struct GaussianRelationDensity {
    pub mean: f64,
    pub gamma: f64,
}

impl GaussianRelationDensity {
    pub fn eval(&self, r: f64) -> f64 {
        gauss(r, self.mean, self.gamma * self.gamma)
    }

    /// Simpson quadrature of the density over mean ± 8γ; must be 1 within
    /// 1e-6 for the density to be well-formed.
    pub fn integral(&self) -> f64 {
        let lo = self.mean - 8.0 * self.gamma;
        let hi = self.mean + 8.0 * self.gamma;
        simpson(lo, hi, 512, |r| self.eval(r))
    }
}

/// Fixed grid of relation values on which g-vectors are compared; spans the
/// observed relation range padded by ±4γ.
#[derive(Debug, Clone)]
pub struct RelationGrid {
    pub points: Vec<f64>,
}

impl RelationGrid {
    pub fn spanning(values: &[f64], gamma: f64, n: usize) -> RelationGrid {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * gamma;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * gamma;
        let points = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        RelationGrid { points }
    }

    /// g-vector: the density with the given mean evaluated at every grid
    /// point.
    pub fn g_into(&self, mean: f64, gamma: f64, out: &mut [f64]) {
        let var = gamma * gamma;
        for (o, &r) in out.iter_mut().zip(self.points.iter()) {
            *o = gauss(r, mean, var);
        }
    }

    /// Squared Lipschitz constant of m ↦ g-vector: max over a dense mean
    /// grid of Σₖ (∂g_k/∂m)².
    pub fn weight_gamma(&self, gamma: f64) -> f64 {
        let var = gamma * gamma;
        let lo = self.points[0];
        let hi = *self.points.last().unwrap();
        let mut best = 0.0f64;
        let dense = 512;
        for i in 0..dense {
            let m = lo + (hi - lo) * i as f64 / (dense - 1) as f64;
            let mut s = 0.0;
            for &r in &self.points {
                let d = gauss(r, m, var) * (r - m) / var;
                s += d * d;
            }
            best = best.max(s);
        }
        best
    }
}

fn simpson(lo: f64, hi: f64, half_intervals: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = 2 * half_intervals; // even interval count
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

// ── Forward consistency of the joint kernel (pairs of samples) ──────────

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PairStats {
    mean: [f64; 2],
    mean_se: [f64; 2],
    var: [f64; 2],
    var_se: [f64; 2],
    cov: f64,
    cov_se: f64,
}

fn pair_stats(ys: &[[f64; 2]]) -> PairStats {
    let n = ys.len() as f64;
    let mut mean = [0.0; 2];
    for y in ys {
        mean[0] += y[0];
        mean[1] += y[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut var = [0.0; 2];
    let mut cov = 0.0;
    let mut m4 = [0.0; 2];
    let mut cov2 = 0.0;
    for y in ys {
        let a = y[0] - mean[0];
        let b = y[1] - mean[1];
        var[0] += a * a;
        var[1] += b * b;
        cov += a * b;
        m4[0] += a * a * a * a;
        m4[1] += b * b * b * b;
        cov2 += a * a * b * b;
    }
    var[0] /= n - 1.0;
    var[1] /= n - 1.0;
    cov /= n - 1.0;
    m4[0] /= n;
    m4[1] /= n;
    cov2 /= n;
    PairStats {
        mean,
        mean_se: [(var[0] / n).sqrt(), (var[1] / n).sqrt()],
        var,
        var_se: [
            ((m4[0] - var[0] * var[0]).max(0.0) / n).sqrt(),
            ((m4[1] - var[1] * var[1]).max(0.0) / n).sqrt(),
        ],
        cov,
        cov_se: ((cov2 - cov * cov).max(0.0) / n).sqrt(),
    }
}

/// Verify that jointly perturbing y₀ = (x_i, x_j) with the kernel
/// N(α_t·y₀, σ_t²·I) matches perturbing the two samples independently:
/// component means/variances and the cross-covariance agree within 3
/// combined standard errors, and the injected noise components are
/// uncorrelated. With `duplicate` the pair is (x, x) and the cross
/// covariance is checked against α_t²·Var(x₀) instead.
pub fn joint_forward_consistency(
    schedule: &NoiseSchedule,
    dist: &ToyDist,
    t: f64,
    n_mc: usize,
    duplicate: bool,
    seed: u64,
) -> Result<TheoryReport> {
    if n_mc < 10_000 {
        return Err(Error::InvalidArgument("n_mc must be >= 1e4".into()));
    }
    schedule.check_time(t)?;
    let (alpha, sigma) = (schedule.alpha(t), schedule.sigma(t));
    let mut rng = StreamRng::new(seed, streams::THEORY);

    let mut joint = Vec::with_capacity(n_mc);
    let mut noise = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let xi = dist.sample(&mut rng);
        let xj = if duplicate { xi } else { dist.sample(&mut rng) };
        let (ei, ej) = (rng.standard_normal(), rng.standard_normal());
        joint.push([alpha * xi + sigma * ei, alpha * xj + sigma * ej]);
        noise.push([ei, ej]);
    }
    let mut indep = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let xi = dist.sample(&mut rng);
        let xj = if duplicate { xi } else { dist.sample(&mut rng) };
        let yi = alpha * xi + sigma * rng.standard_normal();
        let yj = alpha * xj + sigma * rng.standard_normal();
        indep.push([yi, yj]);
    }

    let a = pair_stats(&joint);
    let b = pair_stats(&indep);
    let mut report = TheoryReport::default();
    let ctx = format!("dist={} t={t} dup={duplicate}", dist.label());

    for c in 0..2 {
        let tol = 3.0 * (a.mean_se[c].powi(2) + b.mean_se[c].powi(2)).sqrt();
        let diff = (a.mean[c] - b.mean[c]).abs();
        report.push(
            format!("forward_consistency mean[{c}] ({ctx})"),
            diff < tol,
            format!("|{:.5} - {:.5}| = {diff:.2e} < {tol:.2e}", a.mean[c], b.mean[c]),
        );
        let tol = 3.0 * (a.var_se[c].powi(2) + b.var_se[c].powi(2)).sqrt();
        let diff = (a.var[c] - b.var[c]).abs();
        report.push(
            format!("forward_consistency var[{c}] ({ctx})"),
            diff < tol,
            format!("|{:.5} - {:.5}| = {diff:.2e} < {tol:.2e}", a.var[c], b.var[c]),
        );
    }
    let tol = 3.0 * (a.cov_se.powi(2) + b.cov_se.powi(2)).sqrt();
    let diff = (a.cov - b.cov).abs();
    report.push(
        format!("forward_consistency cross-cov ({ctx})"),
        diff < tol,
        format!("|{:.5} - {:.5}| = {diff:.2e} < {tol:.2e}", a.cov, b.cov),
    );

    let noise_stats = pair_stats(&noise);
    report.push(
        format!("forward_consistency noise-cov zero ({ctx})"),
        noise_stats.cov.abs() < 3.0 * noise_stats.cov_se,
        format!("{:.2e} (se {:.2e})", noise_stats.cov, noise_stats.cov_se),
    );

    if duplicate {
        let (_, var0) = dist.mean_var();
        let expect = alpha * alpha * var0;
        let tol = 3.0 * a.cov_se;
        report.push(
            format!("forward_consistency duplicated cov = alpha²·var ({ctx})"),
            (a.cov - expect).abs() < tol,
            format!("{:.5} vs {expect:.5} (3se {tol:.2e})", a.cov),
        );
    }
    Ok(report)
}

// ── Score decomposition (Bayes rule, relation term) ─────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ScoreDecompParams {
    /// Per-sample Gaussian data distributions.
    pub mu: [f64; 2],
    pub std: [f64; 2],
    pub t: f64,
    pub y_t: [f64; 2],
    pub relation: RelationFn,
    /// Conditioning value of the relation variable.
    pub r_value: f64,
    pub gamma: f64,
    pub fd_step: f64,
}

impl Default for ScoreDecompParams {
    fn default() -> Self {
        ScoreDecompParams {
            mu: [0.4, -0.7],
            std: [1.0, 0.8],
            t: 0.5,
            y_t: [0.3, -0.2],
            relation: RelationFn::InnerProduct,
            r_value: 0.1,
            gamma: 0.4,
            fd_step: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreDecompReport {
    /// Max abs difference between the analytic joint score and the
    /// concatenation of per-sample scores (exact identity).
    pub unconditional_error: f64,
    /// Max abs difference between the finite-difference conditional score
    /// of the direct joint integral and (per-sample scores + the gradient
    /// of log E[g(R|y₀)|y_t] from the closed-form posterior).
    pub conditional_residual: f64,
}

/// Marginal variance of one component at time t.
fn marg_var(schedule: &NoiseSchedule, std: f64, t: f64) -> f64 {
    let a = schedule.alpha(t);
    a * a * std * std + schedule.sigma(t).powi(2)
}

struct Grid1 {
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Simpson points/weights over [lo, hi].
fn simpson_grid(lo: f64, hi: f64, half_intervals: usize) -> Grid1 {
    let n = 2 * half_intervals;
    let h = (hi - lo) / n as f64;
    let mut points = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n + 1);
    for i in 0..=n {
        points.push(lo + h * i as f64);
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights.push(w * h / 3.0);
    }
    Grid1 { points, weights }
}

pub fn score_decomposition_check(
    schedule: &NoiseSchedule,
    p: &ScoreDecompParams,
) -> Result<ScoreDecompReport> {
    schedule.check_time(p.t)?;
    let alpha = schedule.alpha(p.t);
    let sigma2 = schedule.sigma(p.t).powi(2);
    let gamma2 = p.gamma * p.gamma;

    // Part 1: unconditional joint score equals concatenated per-sample
    // scores. The joint route treats the 2D Gaussian as one object and
    // solves Σ·z = (y − m); the per-sample route divides componentwise.
    let m = [alpha * p.mu[0], alpha * p.mu[1]];
    let v = [
        marg_var(schedule, p.std[0], p.t),
        marg_var(schedule, p.std[1], p.t),
    ];
    let per_sample = [-(p.y_t[0] - m[0]) / v[0], -(p.y_t[1] - m[1]) / v[1]];
    // diagonal 2x2 solve, kept generic over the covariance entries
    let cov = [[v[0], 0.0], [0.0, v[1]]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let rhs = [p.y_t[0] - m[0], p.y_t[1] - m[1]];
    let joint = [
        -(cov[1][1] * rhs[0] - cov[0][1] * rhs[1]) / det,
        -(cov[0][0] * rhs[1] - cov[1][0] * rhs[0]) / det,
    ];
    let unconditional_error = (joint[0] - per_sample[0])
        .abs()
        .max((joint[1] - per_sample[1]).abs());

    // Quadrature grids per axis covering prior and posterior mass.
    let grid_for = |axis: usize| -> Grid1 {
        let s = p.std[axis];
        let s2 = s * s;
        let post_v = s2 * sigma2 / (sigma2 + alpha * alpha * s2);
        let post_m = post_v * (p.mu[axis] / s2 + alpha * p.y_t[axis] / sigma2);
        let lo = (p.mu[axis] - 10.0 * s).min(post_m - 10.0 * post_v.sqrt());
        let hi = (p.mu[axis] + 10.0 * s).max(post_m + 10.0 * post_v.sqrt());
        simpson_grid(lo, hi, 150)
    };
    let gx = grid_for(0);
    let gy = grid_for(1);

    // Direct route: h(y) = ln ∬ q0(y0)·g(R | R(y0))·N(y; α·y0, σ²I) dy0,
    // differentiated by central differences in y.
    let h_direct = |y: [f64; 2]| -> f64 {
        let mut acc = 0.0f64;
        for (i, &xi) in gx.points.iter().enumerate() {
            let base_i = ln_gauss(xi, p.mu[0], p.std[0] * p.std[0])
                + ln_gauss(y[0], alpha * xi, sigma2);
            for (j, &xj) in gy.points.iter().enumerate() {
                let lnf = base_i
                    + ln_gauss(xj, p.mu[1], p.std[1] * p.std[1])
                    + ln_gauss(y[1], alpha * xj, sigma2)
                    + ln_gauss(p.r_value, scalar_relation(p.relation, xi, xj), gamma2);
                acc += gx.weights[i] * gy.weights[j] * lnf.exp();
            }
        }
        acc.ln()
    };
    let h = p.fd_step;
    let fd_direct = [
        (h_direct([p.y_t[0] + h, p.y_t[1]]) - h_direct([p.y_t[0] - h, p.y_t[1]])) / (2.0 * h),
        (h_direct([p.y_t[0], p.y_t[1] + h]) - h_direct([p.y_t[0], p.y_t[1] - h])) / (2.0 * h),
    ];

    // Posterior route: m(y) = E[g(R|y₀) | y_t] over the closed-form
    // posterior; ∇ ln m is computed by differentiating under the integral
    // (no finite differences on this side).
    let post = |axis: usize| -> (f64, f64) {
        let s2 = p.std[axis] * p.std[axis];
        let pv = s2 * sigma2 / (sigma2 + alpha * alpha * s2);
        let pm = pv * (p.mu[axis] / s2 + alpha * p.y_t[axis] / sigma2);
        (pm, pv)
    };
    let (pm0, pv0) = post(0);
    let (pm1, pv1) = post(1);
    let mut m_val = 0.0f64;
    let mut dm = [0.0f64; 2];
    let dmean_dy = [alpha * pv0 / sigma2, alpha * pv1 / sigma2];
    for (i, &xi) in gx.points.iter().enumerate() {
        let pi = gauss(xi, pm0, pv0);
        for (j, &xj) in gy.points.iter().enumerate() {
            let pj = gauss(xj, pm1, pv1);
            let gval = gauss(p.r_value, scalar_relation(p.relation, xi, xj), gamma2);
            let w = gx.weights[i] * gy.weights[j] * pi * pj * gval;
            m_val += w;
            dm[0] += w * (xi - pm0) / pv0 * dmean_dy[0];
            dm[1] += w * (xj - pm1) / pv1 * dmean_dy[1];
        }
    }
    let grad_ln_m = [dm[0] / m_val, dm[1] / m_val];

    let conditional_residual = (fd_direct[0] - (per_sample[0] + grad_ln_m[0]))
        .abs()
        .max((fd_direct[1] - (per_sample[1] + grad_ln_m[1])).abs());

    Ok(ScoreDecompReport {
        unconditional_error,
        conditional_residual,
    })
}

// ── Jensen bound chain ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct JensenParams {
    pub dist: ToyDist,
    pub t: f64,
    pub gamma: f64,
    pub relation: RelationFn,
    pub n_mc: usize,
    /// Posterior draws per outer sample for the conditional expectation.
    pub inner_mc: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl JensenParams {
    pub fn new(dist: ToyDist, t: f64, gamma: f64, relation: RelationFn, seed: u64) -> Self {
        JensenParams {
            dist,
            t,
            gamma,
            relation,
            n_mc: 3000,
            inner_mc: 128,
            grid_points: 64,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JensenReport {
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    pub w_gamma: f64,
    /// Standard error of mean(mid − lhs) over paired samples.
    pub se_lhs_mid: f64,
    /// Standard error of mean(rhs − mid).
    pub se_mid_rhs: f64,
    pub lhs_le_mid: bool,
    pub mid_le_rhs: bool,
}

impl JensenReport {
    pub fn passed(&self) -> bool {
        self.lhs_le_mid && self.mid_le_rhs
    }
}

/// Estimate the three quantities of the bound chain
///   E‖E[g|y_t] − g(·|R(ŷ))‖² ≤ E‖g(·|R(y₀)) − g(·|R(ŷ))‖² ≤ w(γ)·E(R−R̂)²
/// with a fixed denoiser applied per sample, and check both inequalities
/// within 3 paired standard errors.
pub fn jensen_bound_check(
    schedule: &NoiseSchedule,
    p: &JensenParams,
    denoiser: &dyn Fn(f64, f64) -> f64,
) -> Result<JensenReport> {
    schedule.check_time(p.t)?;
    if p.gamma <= 0.0 {
        return Err(Error::InvalidArgument("gamma must be > 0".into()));
    }
    let alpha = schedule.alpha(p.t);
    let sigma = schedule.sigma(p.t);
    let sigma2 = sigma * sigma;
    let mut rng = StreamRng::new(p.seed, streams::THEORY);

    // Outer draws: pairs, their noisy versions, predictions, and relations.
    let mut yts = Vec::with_capacity(p.n_mc);
    let mut m0s = Vec::with_capacity(p.n_mc);
    let mut mhats = Vec::with_capacity(p.n_mc);
    for _ in 0..p.n_mc {
        let xi = p.dist.sample(&mut rng);
        let xj = p.dist.sample(&mut rng);
        let yi = alpha * xi + sigma * rng.standard_normal();
        let yj = alpha * xj + sigma * rng.standard_normal();
        let (hi, hj) = (denoiser(yi, p.t), denoiser(yj, p.t));
        yts.push([yi, yj]);
        m0s.push(scalar_relation(p.relation, xi, xj));
        mhats.push(scalar_relation(p.relation, hi, hj));
    }

    let mut all: Vec<f64> = m0s.clone();
    all.extend_from_slice(&mhats);
    let grid = RelationGrid::spanning(&all, p.gamma, p.grid_points);
    let w_gamma = grid.weight_gamma(p.gamma);
    let k = grid.points.len();

    let mut g0 = vec![0.0; k];
    let mut ghat = vec![0.0; k];
    let mut gsum = vec![0.0; k];
    let mut gsumsq = vec![0.0; k];
    let mut lhs_terms = Vec::with_capacity(p.n_mc);
    let mut mid_terms = Vec::with_capacity(p.n_mc);
    let mut rhs_terms = Vec::with_capacity(p.n_mc);

    let m_inner = p.inner_mc as f64;
    for idx in 0..p.n_mc {
        grid.g_into(m0s[idx], p.gamma, &mut g0);
        grid.g_into(mhats[idx], p.gamma, &mut ghat);

        let mid: f64 = g0
            .iter()
            .zip(ghat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        mid_terms.push(mid);
        let dr = m0s[idx] - mhats[idx];
        rhs_terms.push(w_gamma * dr * dr);

        // E[g | y_t] by sampling the closed-form posterior per coordinate.
        let post_i = p.dist.posterior(alpha, sigma2, yts[idx][0]);
        let post_j = p.dist.posterior(alpha, sigma2, yts[idx][1]);
        gsum.iter_mut().for_each(|v| *v = 0.0);
        gsumsq.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..p.inner_mc {
            let xi = ToyDist::sample_posterior(&mut rng, &post_i);
            let xj = ToyDist::sample_posterior(&mut rng, &post_j);
            let mean = scalar_relation(p.relation, xi, xj);
            let var = p.gamma * p.gamma;
            for (kk, &r) in grid.points.iter().enumerate() {
                let val = gauss(r, mean, var);
                gsum[kk] += val;
                gsumsq[kk] += val * val;
            }
        }
        // ‖ĝ − g(·|R̂)‖² minus the inner-MC variance of ĝ, which removes the
        // upward bias of the plug-in estimator
        let mut lhs = 0.0;
        for kk in 0..k {
            let mean_k = gsum[kk] / m_inner;
            let var_k = (gsumsq[kk] / m_inner - mean_k * mean_k).max(0.0) * m_inner
                / (m_inner - 1.0);
            let d = mean_k - ghat[kk];
            lhs += d * d - var_k / m_inner;
        }
        lhs_terms.push(lhs);
    }

    let (lhs, _) = mean_se(&lhs_terms);
    let (mid, se_mid) = mean_se(&mid_terms);
    let (rhs, _) = mean_se(&rhs_terms);

    if mid > 1e-12 && se_mid > 0.1 * mid {
        return Err(Error::InvalidArgument(format!(
            "MC standard error {se_mid:.3e} exceeds 10% of mid {mid:.3e}; increase n_mc"
        )));
    }

    let diffs_lm: Vec<f64> = mid_terms
        .iter()
        .zip(lhs_terms.iter())
        .map(|(m, l)| m - l)
        .collect();
    let diffs_mr: Vec<f64> = rhs_terms
        .iter()
        .zip(mid_terms.iter())
        .map(|(r, m)| r - m)
        .collect();
    let (d_lm, se_lm) = mean_se(&diffs_lm);
    let (d_mr, se_mr) = mean_se(&diffs_mr);

    Ok(JensenReport {
        lhs,
        mid,
        rhs,
        w_gamma,
        se_lhs_mid: se_lm,
        se_mid_rhs: se_mr,
        lhs_le_mid: d_lm >= -3.0 * se_lm,
        mid_le_rhs: d_mr >= -3.0 * se_mr,
    })
}

// ── Batch objective equivalence ─────────────────────────────────────────

/// |batch structural distance − brute-force average over all ordered
/// pairs|, with η_t = 1. The batch route runs through the affinity ops; the
/// reference enumerates pairs with scalar relation calls.
pub fn objective_equivalence_check(
    emb_real: &Tensor,
    emb_fake: &Tensor,
    rel: RelationFn,
    dist: DistanceFn,
) -> Result<f64> {
    let n = emb_real.rows();
    let mut brute = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = relation_value(rel, emb_real.row(i), emb_real.row(j));
            let f = relation_value(rel, emb_fake.row(i), emb_fake.row(j));
            brute += match dist {
                DistanceFn::L2Sq => (r - f) * (r - f),
                DistanceFn::L1 => (r - f).abs(),
            };
        }
    }
    brute /= (n * n) as f64;

    let mut tape = Tape::new();
    let a = tape.constant(emb_real);
    let b = tape.constant(emb_fake);
    let real = affinity(&mut tape, &a, rel)?;
    let fake = affinity(&mut tape, &b, rel)?;
    let batch = structural_distance(&mut tape, &real, &fake, dist)?.item()?;
    Ok((brute - batch).abs())
}

// ── Full verification suite ─────────────────────────────────────────────

/// The 24-configuration grid: {gaussian, mixture2} × t ∈ {0.1, 0.5, 0.9} ×
/// γ ∈ {0.1, 0.5} × {inner_product, neg_l2}.
pub fn jensen_invariant_grid(seed: u64) -> Vec<JensenParams> {
    let mut out = Vec::new();
    for dist in [ToyDist::standard(), ToyDist::mixture()] {
        for t in [0.1, 0.5, 0.9] {
            for gamma in [0.1, 0.5] {
                for rel in [RelationFn::InnerProduct, RelationFn::NegL2] {
                    out.push(JensenParams::new(dist, t, gamma, rel, seed));
                }
            }
        }
    }
    out
}

/// Run every verification check and collect one pass/fail line per check.
pub fn run_verification_suite(seed: u64) -> Result<TheoryReport> {
    let schedule = NoiseSchedule::default();
    let mut report = TheoryReport::default();

    // forward kernel consistency
    report.extend(joint_forward_consistency(
        &schedule,
        &ToyDist::standard(),
        0.5,
        20_000,
        false,
        seed,
    )?);
    report.extend(joint_forward_consistency(
        &schedule,
        &ToyDist::standard(),
        0.5,
        20_000,
        true,
        seed.wrapping_add(1),
    )?);

    // near-identity at t_min, on a smaller draw so the 4σ max bound holds
    {
        let t = schedule.t_min;
        let (alpha, sigma) = (schedule.alpha(t), schedule.sigma(t));
        let mut rng = StreamRng::new(seed.wrapping_add(2), streams::THEORY);
        let mut max_disc = 0.0f64;
        for _ in 0..500 {
            let x = ToyDist::standard().sample(&mut rng);
            let y = alpha * x + sigma * rng.standard_normal();
            max_disc = max_disc.max((y - x).abs());
        }
        report.push(
            "forward_consistency near-identity at t_min",
            max_disc < 4.0 * sigma,
            format!("max |y_t − y₀| = {max_disc:.3e} < 4σ = {:.3e}", 4.0 * sigma),
        );
    }

    // relation density normalization
    let density = GaussianRelationDensity {
        mean: 0.3,
        gamma: 0.25,
    };
    let integral = density.integral();
    report.push(
        "relation density integrates to one",
        (integral - 1.0).abs() < 1e-6,
        format!("∫g = {integral:.9}"),
    );

    // score decomposition
    let sd = score_decomposition_check(&schedule, &ScoreDecompParams::default())?;
    report.push(
        "score decomposition unconditional identity",
        sd.unconditional_error < 1e-10,
        format!("max err {:.2e}", sd.unconditional_error),
    );
    report.push(
        "score decomposition conditional residual",
        sd.conditional_residual < 1e-4,
        format!("max residual {:.2e}", sd.conditional_residual),
    );
    {
        // O(h²) scaling of the finite-difference residual
        let coarse = score_decomposition_check(
            &schedule,
            &ScoreDecompParams {
                fd_step: 4e-2,
                ..ScoreDecompParams::default()
            },
        )?;
        let fine = score_decomposition_check(
            &schedule,
            &ScoreDecompParams {
                fd_step: 2e-2,
                ..ScoreDecompParams::default()
            },
        )?;
        let ratio = coarse.conditional_residual / fine.conditional_residual;
        report.push(
            "score decomposition residual scales O(h²)",
            ratio > 2.5 && ratio < 6.0,
            format!(
                "residual({:.0e})/residual({:.0e}) = {ratio:.2}",
                4e-2, 2e-2
            ),
        );
    }

    // Jensen bound grid with the zero denoiser
    let zero = |_x: f64, _t: f64| 0.0;
    for p in jensen_invariant_grid(seed) {
        let r = jensen_bound_check(&schedule, &p, &zero)?;
        report.push(
            format!(
                "jensen dist={} t={} gamma={} rel={:?}",
                p.dist.label(),
                p.t,
                p.gamma,
                p.relation
            ),
            r.passed(),
            format!(
                "lhs={:.4e} mid={:.4e} rhs={:.4e} (se {:.1e}/{:.1e})",
                r.lhs, r.mid, r.rhs, r.se_lhs_mid, r.se_mid_rhs
            ),
        );
    }

    // objective equivalence
    {
        let mut rng = StreamRng::new(seed.wrapping_add(3), streams::THEORY);
        let two = Tensor::new(vec![2, 3], rng.normal_vec(6))?;
        let two_hat = Tensor::new(vec![2, 3], rng.normal_vec(6))?;
        let err = objective_equivalence_check(&two, &two_hat, RelationFn::InnerProduct, DistanceFn::L2Sq)?;
        report.push(
            "objective equivalence |B|=2",
            err < 1e-10,
            format!("err {err:.2e}"),
        );
        let same = Tensor::new(vec![4, 3], rng.normal_vec(12))?;
        let err = objective_equivalence_check(&same, &same, RelationFn::Cosine, DistanceFn::L2Sq)?;
        report.push(
            "objective equivalence identical batch",
            err < 1e-10,
            format!("err {err:.2e}"),
        );
        let five = Tensor::new(vec![5, 3], rng.normal_vec(15))?;
        let five_hat = Tensor::new(vec![5, 3], rng.normal_vec(15))?;
        for (rel, dist) in [
            (RelationFn::InnerProduct, DistanceFn::L2Sq),
            (RelationFn::Cosine, DistanceFn::L2Sq),
            (RelationFn::NegL2, DistanceFn::L1),
        ] {
            let err = objective_equivalence_check(&five, &five_hat, rel, dist)?;
            report.push(
                format!("objective equivalence |B|=5 {rel:?}/{dist:?}"),
                err < 1e-10,
                format!("err {err:.2e}"),
            );
        }
    }

    Ok(report)
}
