//! Monte Carlo experiments and rate fits.
//!
//! Envelope checks never assume a constant: the unknown `C` is fitted at one
//! anchor point and dominance is tested everywhere else.

use rayon::prelude::*;

use crate::cell::{solve_cell, CellOptions};
use crate::effective::{mbar_estimate, metric_at_targets, sample_for_cell, MbarEstimate, MetricOptions, MetricReplica, MU_MIN};
use crate::environment::{estimate_tail, HamiltonianModel, Profile, RandomField, TailEstimate};
use crate::error::{invalid, Error, Result};
use crate::grid::{norm, scale, Vec2};
use crate::seeds::replica_seed;

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Least-squares line through `(ln x, ln y)`: returns `(slope, intercept)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let k = sxy / sxx;
    (k, my - k * mx)
}

/// Least-squares line `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// `R^2` of the least-squares line through `(ln x, ln y)`.
fn log_log_r2(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let my = mean(&ys);
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = points
        .iter()
        .zip(&ys)
        .map(|(p, y)| {
            let r = y - (intercept + slope * p.0.ln());
            r * r
        })
        .sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    }
}

/// Where the unknown constant of an envelope is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Smallest,
    Largest,
}

/// One-sided dominance `value <= C env(scale) + allowance` with `C` fitted
/// so that equality holds (without allowance) at the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCheck {
    pub form: String,
    pub constant: f64,
    pub anchor_scale: f64,
    pub bounds: Vec<f64>,
    pub dominated: Vec<bool>,
    pub holds: bool,
}

pub fn envelope_check(
    points: &[(f64, f64)],
    form: &str,
    envelope: &dyn Fn(f64) -> f64,
    anchor: Anchor,
    allowances: &[f64],
) -> EnvelopeCheck {
    let k = match anchor {
        Anchor::Smallest => (0..points.len()).min_by(|&a, &b| points[a].0.total_cmp(&points[b].0)),
        Anchor::Largest => (0..points.len()).max_by(|&a, &b| points[a].0.total_cmp(&points[b].0)),
    }
    .unwrap_or(0);
    let (s0, v0) = points.get(k).copied().unwrap_or((f64::NAN, 0.0));
    let e0 = envelope(s0);
    let constant = if e0 > 0.0 { v0 / e0 } else { 0.0 };
    let bounds: Vec<f64> = points.iter().map(|&(s, _)| constant * envelope(s)).collect();
    let dominated: Vec<bool> = points
        .iter()
        .zip(&bounds)
        .enumerate()
        .map(|(i, (&(_, v), &b))| v <= b + allowances.get(i).copied().unwrap_or(0.0) + 1e-12 * b.abs())
        .collect();
    let holds = dominated.iter().all(|&d| d);
    EnvelopeCheck { form: form.to_string(), constant, anchor_scale: s0, bounds, dominated, holds }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub exponent: f64,
    pub log_constant: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
    pub envelope: Option<EnvelopeCheck>,
}

/// Envelope shape for [`rate_fit`].
pub struct Envelope<'a> {
    pub form: &'a str,
    pub f: &'a dyn Fn(f64) -> f64,
    pub anchor: Anchor,
}

/// Log-log least squares `value ~ exp(log_constant) scale^exponent`, with an
/// optional envelope dominance check.
pub fn rate_fit(points: &[(f64, f64)], envelope: Option<Envelope>) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(invalid("points", "a rate fit needs at least three points"));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0) || !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::DegenerateFit("scales and values must be positive and finite".into()));
    }
    let (exponent, log_constant) = log_log_slope(points);
    let r2 = log_log_r2(points, exponent, log_constant);
    let envelope = envelope.map(|e| envelope_check(points, e.form, e.f, e.anchor, &[]));
    Ok(RateFit { exponent, log_constant, r2, points: points.to_vec(), envelope })
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 4 {
        return 0.0;
    }
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)).max(0.0) / n).sqrt()
}

/// Samples `m_mu(t e, 0, omega_i)` for every `t` in the ladder and every
/// replica `i`; `out[i][k]` belongs to `t_ladder[k]`.
pub fn metric_samples(
    model: &HamiltonianModel,
    mu: f64,
    e: Vec2,
    t_ladder: &[f64],
    seeds: &[u64],
    opts: &MetricOptions,
) -> Result<Vec<Vec<f64>>> {
    let targets: Vec<Vec2> = t_ladder.iter().map(|&t| scale(e, t)).collect();
    seeds.par_iter().map(|&s| metric_at_targets(model, mu, s, &targets, opts)).collect()
}

fn experiment_seeds(base_seed: u64, experiment: &str, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| replica_seed(base_seed, experiment, i)).collect()
}

fn unit_direction(dim: usize, e: Vec2) -> Result<Vec2> {
    let e = if dim == 1 { [e[0], 0.0] } else { e };
    let r = norm(e);
    if !(r > 0.0) {
        return Err(invalid("direction", "must be nonzero"));
    }
    Ok(scale(e, 1.0 / r))
}

fn check_increasing(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.iter().any(|&x| !(x > 0.0)) || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(name, "must be positive and strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationRecord {
    pub mu: f64,
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
    /// `(lambda, P[|m - mean| > lambda])`, lambda increasing.
    pub tail: Vec<(f64, f64)>,
    pub n: usize,
    pub samples: Vec<f64>,
}

/// Gaussian-form tail check at one `(t, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCheck {
    pub t: f64,
    pub lambda: f64,
    pub exceedance: f64,
    pub bound: f64,
    pub allowance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationReport {
    pub records: Vec<FluctuationRecord>,
    pub seeds: Vec<u64>,
    /// Log-log fit of the variance against `t`, when all variances are positive.
    pub fit: Option<RateFit>,
    /// `Var <= C t / mu` anchored at the smallest `t`, with 3 sigma allowances.
    pub variance_envelope: EnvelopeCheck,
    /// `C` of `exp(-mu lambda^2 / (C t))`, fitted at the smallest `t` and the largest lambda.
    pub tail_constant: f64,
    pub tail_checks: Vec<TailCheck>,
    pub tail_holds: bool,
}

/// Multiples of the standard deviation used as tail levels.
pub const TAIL_LEVELS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Fluctuations of `m_mu(t e, 0, .)` along a ladder of `t`.
pub fn fluctuation_experiment(
    model: &HamiltonianModel,
    mu: f64,
    e: Vec2,
    t_ladder: &[f64],
    n: usize,
    base_seed: u64,
    opts: &MetricOptions,
) -> Result<FluctuationReport> {
    if !(mu >= MU_MIN) {
        return Err(invalid("mu", format!("{mu} is below the floor {MU_MIN}")));
    }
    check_increasing("t_ladder", t_ladder)?;
    if n < 4 {
        return Err(invalid("n", "at least 4 replicas"));
    }
    let e = unit_direction(model.dimension, e)?;
    let seeds = experiment_seeds(base_seed, "fluct", n);
    let samples = metric_samples(model, mu, e, t_ladder, &seeds, opts)?;
    let records: Vec<FluctuationRecord> = t_ladder
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let m = mean(&xs);
            let var = variance(&xs);
            let sd = var.sqrt();
            let tail = TAIL_LEVELS
                .iter()
                .map(|&q| {
                    let l = q * sd;
                    let c = xs.iter().filter(|&&x| (x - m).abs() > l).count();
                    (l, c as f64 / n as f64)
                })
                .collect();
            FluctuationRecord { mu, t, mean: m, variance: var, variance_se: variance_se(&xs), tail, n, samples: xs }
        })
        .collect();
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.variance)).collect();
    let fit = if points.len() >= 3 && points.iter().all(|p| p.1 > 0.0) { rate_fit(&points, None).ok() } else { None };
    let allow: Vec<f64> = records.iter().map(|r| 3.0 * r.variance_se).collect();
    let variance_envelope = envelope_check(&points, "C t / mu", &|t| t / mu, Anchor::Smallest, &allow);

    let first = &records[0];
    let (l0, p0) = *first.tail.last().unwrap();
    let q0 = (p0 * n as f64).max(0.5) / n as f64;
    let tail_constant = if l0 > 0.0 { mu * l0 * l0 / (first.t * -q0.ln()) } else { 0.0 };
    let mut tail_checks = Vec::new();
    for r in &records {
        for &(l, p) in &r.tail {
            let bound = if l > 0.0 && tail_constant > 0.0 { (-mu * l * l / (tail_constant * r.t)).exp() } else { 1.0 };
            let allowance = 3.0 * (bound * (1.0 - bound) / n as f64).sqrt();
            tail_checks.push(TailCheck { t: r.t, lambda: l, exceedance: p, bound, allowance, ok: p <= bound + allowance });
        }
    }
    let tail_holds = tail_checks.iter().all(|c| c.ok);
    Ok(FluctuationReport { records, seeds, fit, variance_envelope, tail_constant, tail_checks, tail_holds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRecord {
    pub t: f64,
    /// Mean of `m_mu(t e, 0) / t`.
    pub mean: f64,
    pub se: f64,
    /// `E m_mu(t e, 0) - t mbar_ref`.
    pub bias: f64,
    /// `mean >= mbar_ref - 2 sqrt(se^2 + se_ref^2)`.
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub reference: MbarEstimate,
    pub mbar_ref: f64,
    pub records: Vec<BiasRecord>,
    /// Fit of the positive biases against `t`.
    pub fit: Option<RateFit>,
    pub one_sided_holds: bool,
}

/// Bias `E m_mu(t e, 0) - t mbar_mu(e)` along a ladder, against the Fekete
/// upper bound of an independent reference run extended to twice the largest `t`.
#[allow(clippy::too_many_arguments)]
pub fn bias_experiment(
    model: &HamiltonianModel,
    mu: f64,
    e: Vec2,
    t_ladder: &[f64],
    n: usize,
    base_seed: u64,
    opts: &MetricOptions,
) -> Result<BiasReport> {
    check_increasing("t_ladder", t_ladder)?;
    let e = unit_direction(model.dimension, e)?;
    let mut ref_ladder = t_ladder.to_vec();
    ref_ladder.push(2.0 * t_ladder[t_ladder.len() - 1]);
    let reference = mbar_estimate(model, mu, e, &ref_ladder, n, replica_seed(base_seed, "bias-reference", 0), opts)?;
    let mbar_ref = reference.fekete_upper;
    let se_ref = reference.ses.iter().zip(&reference.means).map(|(s, m)| (m + s, *s)).fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a }).1;
    let seeds = experiment_seeds(base_seed, "bias", n);
    let samples = metric_samples(model, mu, e, t_ladder, &seeds, opts)?;
    let records: Vec<BiasRecord> = t_ladder
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[k] / t).collect();
            let m = mean(&xs);
            let se = std_error(&xs);
            BiasRecord { t, mean: m, se, bias: t * (m - mbar_ref), one_sided: m >= mbar_ref - 2.0 * (se * se + se_ref * se_ref).sqrt() }
        })
        .collect();
    let positive: Vec<(f64, f64)> = records.iter().filter(|r| r.bias > 0.0).map(|r| (r.t, r.bias)).collect();
    let fit = if positive.len() >= 3 { rate_fit(&positive, None).ok() } else { None };
    let one_sided_holds = records.iter().all(|r| r.one_sided);
    Ok(BiasReport { reference, mbar_ref, records, fit, one_sided_holds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GSigmaEstimate {
    pub sigma: f64,
    pub t: f64,
    /// Monte Carlo `G_{mu,sigma}(t)` over the truncated lattice plane.
    pub g_big: f64,
    /// `-log(G) / sigma`.
    pub g_hat: f64,
    /// Mean over replicas of `m_mu(H_t, 0)`, the metric to the plane.
    pub plane_mean: f64,
    pub plane_se: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// `sqrt(d - 1) f_max`: the explicit constant of the upper comparison.
    pub upper_constant: f64,
    pub upper_ok: bool,
    /// `sigma t / mu^2 + log(1 + t / (sigma mu)) / sigma`.
    pub lower_slack: f64,
    pub seeds: Vec<u64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `G_{mu,sigma}(t) = sum_{y in H_t} E exp(-sigma m_mu(y, 0))` with `H_t` the
/// lattice points of the plane `{y . e = t}`, `e` the last coordinate axis,
/// truncated to `|y| <= 2 (f_max / f_min) t`.
pub fn g_sigma_estimate(
    model: &HamiltonianModel,
    mu: f64,
    sigma: f64,
    t: f64,
    n: usize,
    base_seed: u64,
    opts: &MetricOptions,
) -> Result<GSigmaEstimate> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(invalid("sigma", format!("{sigma} is outside (0, 1]")));
    }
    if !(t > 0.0) || !(mu >= MU_MIN) || n == 0 {
        return Err(invalid("t", "need t > 0, mu above the floor and at least one replica"));
    }
    let dim = model.dimension;
    let seeds = experiment_seeds(base_seed, "gsigma", n);
    let rows = seeds
        .par_iter()
        .map(|&s| -> Result<(f64, f64, f64, f64)> {
            let mut hw = 2.0 * t + 2.0;
            loop {
                let rep = MetricReplica::new(model, s, hw, opts)?;
                let sol = rep.solve(model, mu)?;
                let radius = 2.0 * sol.f_max / sol.f_min * t;
                if dim == 2 && radius + 1.0 > hw {
                    hw = radius + 2.0;
                    continue;
                }
                if dim == 1 {
                    let m = sol.at([t, 0.0])?;
                    return Ok((-sigma * m, m, sol.f_min, sol.f_max));
                }
                let reach = (radius * radius - t * t).max(0.0).sqrt().floor() as i64;
                let mut exps = Vec::new();
                for k in -reach..=reach {
                    exps.push(-sigma * sol.at([k as f64, t])?);
                }
                let g = &sol.grid;
                let mut plane = f64::INFINITY;
                for i in 0..g.n[0] {
                    let x = g.origin[0] + i as f64 * g.h;
                    if x.abs() <= radius {
                        plane = plane.min(sol.at([x, t])?);
                    }
                }
                return Ok((log_sum_exp(&exps), plane, sol.f_min, sol.f_max));
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let log_g = log_sum_exp(&logs) - (n as f64).ln();
    let g_hat = -log_g / sigma;
    let planes: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let plane_mean = mean(&planes);
    let plane_se = std_error(&planes);
    let f_min = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let f_max = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let upper_constant = ((dim - 1) as f64).sqrt() * f_max;
    let upper_ok = g_hat <= plane_mean + upper_constant + 2.0 * plane_se + 1e-9 * plane_mean.abs();
    let lower_slack = sigma * t / (mu * mu) + (1.0 + t / (sigma * mu)).ln() / sigma;
    Ok(GSigmaEstimate {
        sigma,
        t,
        g_big: log_g.exp(),
        g_hat,
        plane_mean,
        plane_se,
        f_min,
        f_max,
        upper_constant,
        upper_ok,
        lower_slack,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GSigmaSandwich {
    pub estimates: Vec<GSigmaEstimate>,
    /// Lower constant fitted at the first estimate.
    pub lower_constant: f64,
    pub lower_ok: Vec<bool>,
    pub holds: bool,
}

/// Checks `E m(H_t) - C (sigma t / mu^2 + log(1 + t/(sigma mu)) / sigma) <= g`
/// with `C` fitted at the first estimate, and the explicit upper comparison.
pub fn g_sigma_sandwich(estimates: Vec<GSigmaEstimate>) -> GSigmaSandwich {
    let lower_constant = estimates
        .first()
        .map(|e| ((e.plane_mean - e.g_hat) / e.lower_slack).max(0.0))
        .unwrap_or(0.0);
    let lower_ok: Vec<bool> = estimates
        .iter()
        .map(|e| e.plane_mean - lower_constant * e.lower_slack <= e.g_hat + 2.0 * e.plane_se + 1e-9 * e.plane_mean.abs())
        .collect();
    let holds = lower_ok.iter().all(|&b| b) && estimates.iter().all(|e| e.upper_ok);
    GSigmaSandwich { estimates, lower_constant, lower_ok, holds }
}

/// Deterministic bounds on `-delta v^delta(0; 0)` for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatSpotReport {
    pub delta: f64,
    pub measured: f64,
    /// `max_R (sup_{B_R} H(0, .) - K_0 R delta)` and its maximiser.
    pub lower: f64,
    pub lower_radius: f64,
    /// `min_R max(-delta R, delta R / (C + delta R) sup_{B_R} H(0, .))` and its minimiser.
    pub upper: f64,
    pub upper_radius: f64,
    pub constant: f64,
    pub k0: f64,
    pub tol: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

impl FlatSpotReport {
    pub fn holds(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// Constant of the upper flat-spot bound: `max(1, Lipschitz constant of H(., y) on B_1)`.
pub fn flat_spot_constant(model: &HamiltonianModel, cmax: f64) -> f64 {
    match model.profile {
        Profile::Quadratic => 1.0,
        Profile::Linear => cmax.max(1.0),
    }
}

/// Solves the cell problem at `p = 0` and brackets `-delta v^delta(0)` by the
/// discrete sup of `H(0, .)` over balls of the given radii.
pub fn flat_spot_sandwich(field: &RandomField, delta: f64, radii: &[f64], opts: &CellOptions) -> Result<FlatSpotReport> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(invalid("radii", "need positive radii"));
    }
    let model = &field.model;
    let sol = solve_cell(field, [0.0, 0.0], delta, opts)?;
    let measured = sol.hbar_proxy([0.0, 0.0])?;
    let g = sol.grid;
    let coef = field.sample_on(&g)?;
    let (_, cmax) = field.coefficient_bounds();
    let k0 = sol.kp;
    let constant = flat_spot_constant(model, cmax);
    let sup_ball = |r: f64| -> f64 {
        (0..g.len())
            .filter(|&k| norm(g.point(k)) <= r)
            .map(|k| model.radial(0.0, coef[k]))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (mut lower, mut lower_radius) = (f64::NEG_INFINITY, 0.0);
    let (mut upper, mut upper_radius) = (f64::INFINITY, 0.0);
    let w = g.window();
    for &r in radii {
        if r > w.hi[0] {
            continue;
        }
        let s = sup_ball(r);
        let lo = s - k0 * r * delta;
        if lo > lower {
            lower = lo;
            lower_radius = r;
        }
        let up = (-delta * r).max(delta * r / (constant + delta * r) * s);
        if up < upper {
            upper = up;
            upper_radius = r;
        }
    }
    if !lower.is_finite() {
        return Err(invalid("radii", "no radius fits inside the solution window"));
    }
    let tol = k0 * g.h + 1e-7 * (1.0 + measured.abs());
    Ok(FlatSpotReport {
        delta,
        measured,
        lower,
        lower_radius,
        upper,
        upper_radius,
        constant,
        k0,
        tol,
        lower_ok: measured >= lower - tol,
        upper_ok: measured <= upper + tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubballisticReport {
    pub tail: TailEstimate,
    /// `min(1/6, d / (d + theta))`.
    pub alpha: f64,
    pub beta: f64,
    /// `(delta, mean of delta v^delta(0; 0), se)`.
    pub ladder: Vec<(f64, f64, f64)>,
    pub values: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Fit of the mean magnitude against `delta`; absent when it vanishes.
    pub fit: Option<RateFit>,
    /// `mean <= C delta^alpha |log delta|^beta`, anchored at the largest delta.
    pub envelope: Option<EnvelopeCheck>,
}

/// Decay of `-delta v^delta(0; 0)` along a ladder of discounts.
pub fn subballistic_rate(
    model: &HamiltonianModel,
    delta_ladder: &[f64],
    n: usize,
    base_seed: u64,
    tail_lambdas: &[f64],
    opts: &CellOptions,
) -> Result<SubballisticReport> {
    if delta_ladder.len() < 2 || delta_ladder.iter().any(|&d| !(d > 0.0 && d < 1.0)) || delta_ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("delta_ladder", "need at least two decreasing discounts in (0, 1)"));
    }
    if n == 0 {
        return Err(invalid("n", "at least one replica"));
    }
    let tail = estimate_tail(model, tail_lambdas, (4 * n).max(400), replica_seed(base_seed, "subrate-tail", 0))?;
    let d = model.dimension as f64;
    let alpha = if tail.theta.is_finite() { (1.0 / 6.0f64).min(d / (d + tail.theta.max(0.0))) } else { 0.0 };
    let beta = 0.25;
    let seeds = experiment_seeds(base_seed, "subrate", n);
    let small = *delta_ladder.last().unwrap();
    let values = seeds
        .par_iter()
        .map(|&s| {
            let (field, _) = sample_for_cell(model, s, [0.0, 0.0], small, opts)?;
            delta_ladder
                .iter()
                .map(|&dl| Ok(-solve_cell(&field, [0.0, 0.0], dl, opts)?.hbar_proxy([0.0, 0.0])?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let ladder: Vec<(f64, f64, f64)> = delta_ladder
        .iter()
        .enumerate()
        .map(|(k, &dl)| {
            let col: Vec<f64> = values.iter().map(|v| v[k]).collect();
            (dl, mean(&col), std_error(&col))
        })
        .collect();
    let points: Vec<(f64, f64)> = ladder.iter().map(|l| (l.0, l.1)).collect();
    let positive = points.iter().all(|p| p.1 > 0.0);
    let fit = if positive && points.len() >= 3 { rate_fit(&points, None).ok() } else { None };
    let envelope = positive.then(|| {
        let env = move |dl: f64| dl.powf(alpha) * dl.ln().abs().powf(beta);
        let allow: Vec<f64> = ladder.iter().map(|l| 2.0 * l.2).collect();
        envelope_check(&points, "C delta^alpha |log delta|^beta", &env, Anchor::Largest, &allow)
    });
    Ok(SubballisticReport { tail, alpha, beta, ladder, values, seeds, fit, envelope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_field, Medium};
    use crate::grid::Window;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn rate_fit_exact_power_laws() {
        let f = rate_fit(&[(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)], None).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = rate_fit(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)], None).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (4.0, 1.0)], None).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 1.0)], None).is_err());
    }

    #[test]
    fn rate_fit_noisy_synthetic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let s = 2f64.powi(k);
                (s, s.powf(0.33) * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
            })
            .collect();
        let f = rate_fit(&pts, None).unwrap();
        assert!(f.exponent >= 0.25 && f.exponent <= 0.41, "{}", f.exponent);
    }

    #[test]
    fn envelope_anchor_and_dominance() {
        let pts = [(1.0, 1.0), (2.0, 1.5), (4.0, 2.0)];
        let env = |s: f64| s;
        let c = envelope_check(&pts, "C s", &env, Anchor::Smallest, &[]);
        assert!(c.holds && c.constant == 1.0);
        let c = envelope_check(&pts, "C s", &env, Anchor::Largest, &[]);
        assert!(!c.holds && c.constant == 0.5);
        let r = rate_fit(&pts, Some(Envelope { form: "C s", f: &env, anchor: Anchor::Largest })).unwrap();
        assert!(!r.envelope.unwrap().holds);
    }

    #[test]
    fn variance_helpers() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(variance(&[1.0]), 0.0);
        assert_eq!(variance_se(&[2.0; 8]), 0.0);
        let (a, b) = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_model_has_no_fluctuations() {
        let m = HamiltonianModel::deterministic_linear(2, 1.0).unwrap();
        let r = fluctuation_experiment(&m, 1.0, [1.0, 0.0], &[2.0, 4.0, 8.0], 4, 1, &MetricOptions::default()).unwrap();
        assert!(r.records.iter().all(|x| x.variance == 0.0));
        assert!(r.variance_envelope.holds && r.tail_holds && r.fit.is_none());
        let b = bias_experiment(&m, 1.0, [1.0, 0.0], &[2.0, 4.0, 8.0], 4, 1, &MetricOptions::default()).unwrap();
        assert!(b.records.iter().all(|x| x.bias.abs() < 1e-9) && b.one_sided_holds);
    }

    #[test]
    fn g_sigma_single_point_in_one_dimension() {
        let m = HamiltonianModel::deterministic_linear(1, 2.0).unwrap();
        let g = g_sigma_estimate(&m, 1.0, 0.5, 4.0, 2, 1, &MetricOptions::default()).unwrap();
        assert!((g.g_hat - 2.0).abs() < 1e-9 && (g.plane_mean - 2.0).abs() < 1e-9);
        assert!(g_sigma_estimate(&m, 1.0, 1.5, 4.0, 2, 1, &MetricOptions::default()).is_err());
    }

    #[test]
    fn g_sigma_constant_speed_plane() {
        // Unit speed: m(y) = |y|, so G = sum_n exp(-sigma sqrt(n^2 + t^2)).
        let m = HamiltonianModel::deterministic_linear(2, 1.0).unwrap();
        let (sigma, t) = (1.0, 4.0);
        let g = g_sigma_estimate(&m, 1.0, sigma, t, 1, 1, &MetricOptions::default()).unwrap();
        let exact: f64 = (-8..=8).map(|n: i32| (-sigma * ((n * n) as f64 + t * t).sqrt()).exp()).sum();
        // off-axis fast-marching values run about 1.5% high
        assert!((g.g_big / exact - 1.0).abs() < 0.1, "{} {}", g.g_big, exact);
        assert!((g.plane_mean - t).abs() < 1e-9);
        assert!(g.g_hat <= g.plane_mean + g.upper_constant);
    }

    #[test]
    fn flat_spot_of_zero_potential() {
        let m = HamiltonianModel::h1(2, Medium::Constant(0.0), None).unwrap();
        let f = sample_field(&m, Window::centered(2, [0.0, 0.0], 12.0), 1).unwrap();
        let opts = CellOptions { half_width: Some(4.0), ..Default::default() };
        let r = flat_spot_sandwich(&f, 0.1, &[1.0, 2.0], &opts).unwrap();
        assert!(r.measured.abs() < 1e-9 && r.holds());
        assert_eq!(r.upper, 0.0);
    }

    #[test]
    fn h2_is_identically_flat_at_zero() {
        let m = HamiltonianModel::h2(1, 1.0, 2.0, Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 }).unwrap();
        let r = subballistic_rate(&m, &[0.2, 0.1], 3, 1, &[0.1, 0.5], &CellOptions::default()).unwrap();
        assert!(r.ladder.iter().all(|l| l.1 == 0.0));
        assert!(r.fit.is_none() && r.tail.probabilities.iter().all(|&p| p == 1.0));
    }
}
