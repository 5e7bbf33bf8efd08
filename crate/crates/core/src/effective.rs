//! Effective Hamiltonian by two routes.
//!
//! Metric route: `H(p) = inf{mu >= 0 : mbar_mu(e) >= p.e for all unit e}`,
//! with `mbar_mu(e)` estimated by `E m_mu(t e, 0) / t` at a large `t`.
//! Cell route: `-delta v^delta(0; p)` averaged over realizations and
//! extrapolated to `delta = 0` along a ladder.

use rayon::prelude::*;

use crate::cell::{cell_grid, solve_cell_on, CellOptions};
use crate::environment::{sample_field, HamiltonianModel, Profile, RandomField};
use crate::error::{invalid, Error, Result};
use crate::grid::{dot, norm, scale, Grid, Vec2, Window};
use crate::metric::{boundary_minimum, speeds_from_coefficients, MetricSolution};
use crate::seeds::replica_seed;
use crate::stats::{linear_fit, mean, std_error};

/// Smallest level used by the metric route.
pub const MU_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricOptions {
    pub h: f64,
    /// Initial window half-width as a multiple of the farthest target distance.
    pub window_factor: f64,
    pub max_nodes: usize,
}

impl Default for MetricOptions {
    fn default() -> MetricOptions {
        MetricOptions { h: 0.125, window_factor: 1.25, max_nodes: 9_000_000 }
    }
}

/// Coefficients of one realization on a centered grid, reused across levels `mu`.
#[derive(Debug, Clone)]
pub struct MetricReplica {
    pub seed: u64,
    pub grid: Grid,
    pub coef: Vec<f64>,
}

impl MetricReplica {
    pub fn new(model: &HamiltonianModel, seed: u64, half_width: f64, opts: &MetricOptions) -> Result<MetricReplica> {
        let scale = model.oscillation_scale();
        if opts.h > 0.5 * scale {
            return Err(Error::UnderResolved { h: opts.h, required: 0.5 * scale });
        }
        let dim = model.dimension;
        let m = (half_width / opts.h).ceil() as usize;
        let nodes = (2 * m + 1).pow(dim as u32);
        if nodes > opts.max_nodes {
            return Err(Error::GridBudget { required_half_width: half_width, nodes, limit: opts.max_nodes });
        }
        let grid = Grid::centered(dim, half_width, opts.h)?;
        let field = sample_field(model, grid.window(), seed)?;
        let coef = field.sample_on(&grid)?;
        Ok(MetricReplica { seed, grid, coef })
    }

    pub fn half_width(&self) -> f64 {
        -self.grid.origin[0]
    }

    /// Metric from the origin at level `mu`.
    pub fn solve(&self, model: &HamiltonianModel, mu: f64) -> Result<MetricSolution> {
        if !(mu > 0.0) {
            return Err(Error::DegenerateEikonal(format!("mu = {mu} must be positive")));
        }
        let speeds = speeds_from_coefficients(model, &self.coef, mu);
        let origin = self.grid.nearest([0.0, 0.0])?;
        Ok(MetricSolution::from_speeds(self.grid, speeds, mu, vec![origin], true))
    }

    /// `m_mu(y, 0)` at each target, growing the window until every value is
    /// below the boundary minimum (so truncation cannot have affected it).
    pub fn certified_values(&mut self, model: &HamiltonianModel, mu: f64, targets: &[Vec2], opts: &MetricOptions) -> Result<Vec<f64>> {
        loop {
            let sol = self.solve(model, mu)?;
            let vals = targets.iter().map(|&y| sol.at(y)).collect::<Result<Vec<f64>>>()?;
            let top = vals.iter().copied().fold(0.0, f64::max) + sol.f_max * self.grid.h * 2.0;
            if boundary_minimum(&sol) >= top {
                return Ok(vals);
            }
            *self = MetricReplica::new(model, self.seed, 1.5 * self.half_width(), opts)?;
        }
    }
}

fn initial_half_width(targets: &[Vec2], opts: &MetricOptions) -> f64 {
    targets.iter().map(|&y| norm(y)).fold(0.0, f64::max) * opts.window_factor + 2.0
}

/// `m_mu(y_k, 0, omega_seed)` for each target.
pub fn metric_at_targets(model: &HamiltonianModel, mu: f64, seed: u64, targets: &[Vec2], opts: &MetricOptions) -> Result<Vec<f64>> {
    let mut rep = MetricReplica::new(model, seed, initial_half_width(targets, opts), opts)?;
    rep.certified_values(model, mu, targets, opts)
}

/// Unit directions used for the infimum over `e`: `n` equally spaced angles
/// in 2D, `{+1, -1}` in 1D.
pub fn directions(dim: usize, n: usize) -> Vec<Vec2> {
    if dim == 1 {
        return vec![[1.0, 0.0], [-1.0, 0.0]];
    }
    (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            [th.cos(), th.sin()]
        })
        .collect()
}

fn unit(dim: usize, e: Vec2) -> Result<Vec2> {
    let e = if dim == 1 { [e[0], 0.0] } else { e };
    let r = norm(e);
    if !(r > 0.0) {
        return Err(invalid("direction", "must be nonzero"));
    }
    Ok(scale(e, 1.0 / r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbarEstimate {
    pub mu: f64,
    pub direction: Vec2,
    /// Mean of `m_mu(t e, 0) / t` at the largest `t`.
    pub value: f64,
    pub se: f64,
    /// `min_t (mean_t + se_t)`; an upper bound for `mbar` by subadditivity.
    pub fekete_upper: f64,
    pub t_ladder: Vec<f64>,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `samples[i][k] = m_mu(t_k e, 0, omega_i) / t_k`.
    pub samples: Vec<Vec<f64>>,
}

impl MbarEstimate {
    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn consistent(&self) -> bool {
        self.value <= self.fekete_upper
    }
}

fn check_ladder(name: &'static str, ladder: &[f64], increasing: bool) -> Result<()> {
    if ladder.is_empty() || ladder.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid(name, "entries must be positive"));
    }
    let ok = ladder.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
    if !ok {
        let order = if increasing { "increasing" } else { "decreasing" };
        return Err(invalid(name, format!("must be strictly {order}")));
    }
    Ok(())
}

/// Monte Carlo estimate of `mbar_mu(e)` along a ladder of distances.
pub fn mbar_estimate(
    model: &HamiltonianModel,
    mu: f64,
    direction: Vec2,
    t_ladder: &[f64],
    n_seeds: usize,
    base_seed: u64,
    opts: &MetricOptions,
) -> Result<MbarEstimate> {
    if !(mu >= MU_MIN) {
        return Err(invalid("mu", format!("{mu} is below the floor {MU_MIN}")));
    }
    check_ladder("t_ladder", t_ladder, true)?;
    if n_seeds < 4 {
        return Err(invalid("n_seeds", "at least 4 realizations"));
    }
    let e = unit(model.dimension, direction)?;
    let targets: Vec<Vec2> = t_ladder.iter().map(|&t| scale(e, t)).collect();
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| replica_seed(base_seed, "mbar", i)).collect();
    let samples = seeds
        .par_iter()
        .map(|&s| {
            let v = metric_at_targets(model, mu, s, &targets, opts)?;
            Ok(v.iter().zip(t_ladder).map(|(m, t)| m / t).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let column = |k: usize| samples.iter().map(|s| s[k]).collect::<Vec<f64>>();
    let means: Vec<f64> = (0..t_ladder.len()).map(|k| mean(&column(k))).collect();
    let ses: Vec<f64> = (0..t_ladder.len()).map(|k| std_error(&column(k))).collect();
    let last = t_ladder.len() - 1;
    let fekete_upper = means.iter().zip(&ses).map(|(m, s)| m + s).fold(f64::INFINITY, f64::min);
    Ok(MbarEstimate {
        mu,
        direction: e,
        value: means[last],
        se: ses[last],
        fekete_upper,
        t_ladder: t_ladder.to_vec(),
        means,
        ses,
        seeds,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Metric,
    Cell,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Metric => "metric",
            Route::Cell => "cell",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HbarEstimate {
    pub p: Vec2,
    pub value: f64,
    pub route: Route,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
    /// Estimated one-sided truncation error (finite `t` or finite `delta`).
    pub systematic: f64,
    /// Metric route only: the predicate already held at `MU_MIN`.
    pub flat_spot: bool,
    /// Final bisection bracket width (metric) or the delta ladder (cell).
    pub params: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `(parameter, mean, se)` per ladder entry or per final bracket end.
    pub ladder: Vec<(f64, f64, f64)>,
}

impl HbarEstimate {
    pub fn overlaps(&self, other: &HbarEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Per-level evaluation of the metric predicate across realizations.
struct Level {
    /// `per_seed[i][k]`: `m(t e_k)/t` for `k < n_dir`, then `m(t/2 e_k)/(t/2)`.
    per_seed: Vec<Vec<f64>>,
}

impl Level {
    fn predicate(&self, dirs: &[Vec2], p: Vec2, half: bool) -> (f64, usize) {
        let n = dirs.len();
        let off = if half { n } else { 0 };
        let mut best = (f64::INFINITY, 0);
        for (k, e) in dirs.iter().enumerate() {
            let m = mean(&self.per_seed.iter().map(|s| s[off + k]).collect::<Vec<f64>>());
            let g = m - dot(p, *e);
            if g < best.0 {
                best = (g, k);
            }
        }
        best
    }
}

/// Metric-route estimate of `H(p)` by bisection in `mu`.
#[allow(clippy::too_many_arguments)]
pub fn hbar_from_metric(
    model: &HamiltonianModel,
    p: Vec2,
    mu_bracket: (f64, f64),
    n_directions: usize,
    t: f64,
    n_seeds: usize,
    base_seed: u64,
    opts: &MetricOptions,
) -> Result<HbarEstimate> {
    let dim = model.dimension;
    let p = if dim == 1 { [p[0], 0.0] } else { p };
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    if n_seeds == 0 || (dim == 2 && n_directions < 4) {
        return Err(invalid("n_directions", "need at least one seed and four directions"));
    }
    let (mut lo, mut hi) = (mu_bracket.0.max(MU_MIN), mu_bracket.1);
    if !(hi > lo) {
        return Err(Error::Bracket { lo, hi });
    }
    let dirs = directions(dim, n_directions);
    let mut targets: Vec<Vec2> = dirs.iter().map(|&e| scale(e, t)).collect();
    targets.extend(dirs.iter().map(|&e| scale(e, 0.5 * t)));
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| replica_seed(base_seed, "hbar", i)).collect();
    let hw = initial_half_width(&targets, opts);
    let mut reps = seeds
        .par_iter()
        .map(|&s| MetricReplica::new(model, s, hw, opts))
        .collect::<Result<Vec<_>>>()?;
    let nd = dirs.len();
    let eval = |mu: f64, reps: &mut Vec<MetricReplica>| -> Result<Level> {
        let per_seed = reps
            .par_iter_mut()
            .map(|r| {
                let v = r.certified_values(model, mu, &targets, opts)?;
                Ok(v.iter().enumerate().map(|(k, m)| m / if k < nd { t } else { 0.5 * t }).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Level { per_seed })
    };
    let at_lo = eval(lo, &mut reps)?;
    let g_lo0 = at_lo.predicate(&dirs, p, false).0;
    if g_lo0 >= 0.0 {
        return Ok(HbarEstimate {
            p,
            value: 0.0,
            route: Route::Metric,
            ci_low: 0.0,
            ci_high: lo,
            se: 0.0,
            systematic: 0.0,
            flat_spot: true,
            params: vec![hi - lo],
            seeds,
            ladder: vec![(lo, g_lo0, 0.0)],
        });
    }
    let at_hi = eval(hi, &mut reps)?;
    if at_hi.predicate(&dirs, p, false).0 < 0.0 {
        return Err(Error::Bracket { lo, hi });
    }
    let tol = 1e-3 * (hi - lo);
    let (mut level_lo, mut level_hi) = (at_lo, at_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let l = eval(mid, &mut reps)?;
        if l.predicate(&dirs, p, false).0 >= 0.0 {
            hi = mid;
            level_hi = l;
        } else {
            lo = mid;
            level_lo = l;
        }
    }
    let (g_lo, _) = level_lo.predicate(&dirs, p, false);
    let (g_hi, k_star) = level_hi.predicate(&dirs, p, false);
    let slope = ((g_hi - g_lo) / (hi - lo)).max(1e-12);
    let value = (lo - g_lo / slope).clamp(lo, hi);
    let g_seed: Vec<f64> = level_hi.per_seed.iter().map(|s| s[k_star] - dot(p, dirs[k_star])).collect();
    let se = std_error(&g_seed) / slope;
    // M(t)/t overestimates mbar by roughly c t^{-1/3}; compare with t/2 to size it.
    let (g_half, _) = level_hi.predicate(&dirs, p, true);
    let mu_half = hi - g_half / slope;
    let systematic = (value - mu_half).abs() / (2f64.powf(1.0 / 3.0) - 1.0);
    Ok(HbarEstimate {
        p,
        value,
        route: Route::Metric,
        ci_low: (value - 2.0 * se).max(0.0),
        ci_high: value + 2.0 * se + systematic,
        se,
        systematic,
        flat_spot: false,
        params: vec![hi - lo],
        seeds,
        ladder: vec![(lo, g_lo, 0.0), (hi, g_hi, std_error(&g_seed))],
    })
}

/// Samples a realization large enough for the cell grid at discount `delta`.
pub fn sample_for_cell(model: &HamiltonianModel, seed: u64, p: Vec2, delta: f64, opts: &CellOptions) -> Result<(RandomField, Grid)> {
    let dim = model.dimension;
    let mut hw = opts.half_width.unwrap_or(8.0 / delta) + 1.0;
    loop {
        let field = sample_field(model, Window::centered(dim, [0.0, 0.0], hw), seed)?;
        let grid = cell_grid(&field, p, delta, opts)?;
        let w = grid.window();
        if field.window.contains(w.lo) && field.window.contains(w.hi) {
            return Ok((field, grid));
        }
        hw = (0..dim).map(|k| w.hi[k].abs().max(w.lo[k].abs())).fold(hw, f64::max) + 1.0;
    }
}

/// Cell-route estimate of `H(p)`: `-delta v^delta(0)` on each realization,
/// extrapolated linearly to `delta = 0`.
pub fn hbar_from_cell(
    model: &HamiltonianModel,
    p: Vec2,
    delta_ladder: &[f64],
    n_seeds: usize,
    base_seed: u64,
    opts: &CellOptions,
) -> Result<HbarEstimate> {
    check_ladder("delta_ladder", delta_ladder, false)?;
    if n_seeds == 0 {
        return Err(invalid("n_seeds", "at least one realization"));
    }
    let p = if model.dimension == 1 { [p[0], 0.0] } else { p };
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| replica_seed(base_seed, "hbar", i)).collect();
    let small = *delta_ladder.last().unwrap();
    let rows = seeds
        .par_iter()
        .map(|&s| {
            let (field, _) = sample_for_cell(model, s, p, small, opts)?;
            delta_ladder
                .iter()
                .map(|&d| {
                    let grid = cell_grid(&field, p, d, opts)?;
                    solve_cell_on(&field, p, d, grid, opts)?.hbar_proxy([0.0, 0.0])
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let intercepts: Vec<f64> = rows
        .iter()
        .map(|r| {
            if r.len() == 1 {
                r[0]
            } else {
                linear_fit(&delta_ladder.iter().copied().zip(r.iter().copied()).collect::<Vec<_>>()).0
            }
        })
        .collect();
    let ladder: Vec<(f64, f64, f64)> = (0..delta_ladder.len())
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            (delta_ladder[k], mean(&col), std_error(&col))
        })
        .collect();
    let value = mean(&intercepts);
    let se = std_error(&intercepts);
    let systematic = (value - ladder.last().unwrap().1).abs();
    Ok(HbarEstimate {
        p,
        value,
        route: Route::Cell,
        ci_low: value - 2.0 * se - systematic,
        ci_high: value + 2.0 * se + systematic,
        se,
        systematic,
        flat_spot: false,
        params: delta_ladder.to_vec(),
        seeds,
        ladder,
    })
}

/// Effective Hamiltonian of a one-dimensional medium from coefficient
/// samples along a long stretch: the smallest `mu >= 0` with
/// `mean f_mu >= |p|` (for the linear profile, `|p| / mean(1/a)`).
pub fn hbar_1d(model: &HamiltonianModel, p: f64, coefficients: &[f64]) -> f64 {
    let target = p.abs();
    match model.profile {
        Profile::Linear => target / mean(&coefficients.iter().map(|c| 1.0 / c).collect::<Vec<f64>>()),
        Profile::Quadratic => {
            let avg = |mu: f64| mean(&coefficients.iter().map(|&c| model.speed(c, mu)).collect::<Vec<f64>>());
            if avg(0.0) >= target {
                return 0.0;
            }
            let (mut lo, mut hi) = (0.0, 0.5 * target * target + 1.0);
            while avg(hi) < target {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if avg(mid) >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Lower bounds on `lim f(s)/s` for a function satisfying the approximate
/// superadditivity `f(s + t) >= f(s) + f(t) - Delta(s + t)`:
/// `f(t)/t + Delta(t)/t - 4 int_{2t}^inf Delta(s)/s^2 ds` for each sample.
///
/// `delta_table` is `(s, Delta(s))`, nondecreasing; beyond its last entry
/// `Delta` is extended by a power law fitted to the last points, which must
/// grow slower than linearly.
pub fn fekete_extrapolate(samples: &[(f64, f64)], delta_table: &[(f64, f64)]) -> Result<Vec<f64>> {
    if delta_table.len() < 2 {
        return Err(invalid("delta_table", "need at least two entries"));
    }
    if delta_table.windows(2).any(|w| !(w[1].0 > w[0].0) || w[1].1 < w[0].1) || delta_table[0].1 < 0.0 {
        return Err(invalid("delta_table", "must be nonnegative, nondecreasing, with increasing abscissae"));
    }
    let tail = TailModel::fit(delta_table)?;
    samples
        .iter()
        .map(|&(t, f)| {
            if !(t > 0.0) {
                return Err(invalid("samples", "t must be positive"));
            }
            Ok(f / t + tail.delta(t) / t - 4.0 * tail.integral_from(2.0 * t))
        })
        .collect()
}

struct TailModel<'a> {
    table: &'a [(f64, f64)],
    /// `Delta(s) = a s^beta` beyond the table.
    a: f64,
    beta: f64,
}

impl<'a> TailModel<'a> {
    fn fit(table: &'a [(f64, f64)]) -> Result<TailModel<'a>> {
        let last = table[table.len() - 1];
        if last.1 == 0.0 {
            return Ok(TailModel { table, a: 0.0, beta: 0.0 });
        }
        let pts: Vec<(f64, f64)> = table.iter().rev().take(4).filter(|q| q.1 > 0.0).copied().collect();
        let beta = if pts.len() >= 2 { crate::stats::log_log_slope(&pts).0.max(0.0) } else { 0.0 };
        if beta >= 1.0 - 1e-9 {
            return Err(Error::DegenerateFit(format!("Delta grows like s^{beta:.3}; the tail integral diverges")));
        }
        Ok(TailModel { table, a: last.1 / last.0.powf(beta), beta })
    }

    fn delta(&self, s: f64) -> f64 {
        let t = self.table;
        if s <= t[0].0 {
            return t[0].1;
        }
        let last = t[t.len() - 1];
        if s >= last.0 {
            return self.a * s.powf(self.beta);
        }
        let k = t.partition_point(|q| q.0 <= s);
        let (a, b) = (t[k - 1], t[k]);
        a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
    }

    /// `int_x^inf Delta(s) / s^2 ds`.
    fn integral_from(&self, x: f64) -> f64 {
        let end = self.table[self.table.len() - 1].0;
        let mut total = 0.0;
        if x < end {
            // Simpson in u = ln s, where the integrand is Delta(e^u) e^{-u}.
            let (u0, u1) = (x.ln(), end.ln());
            let n = 4096;
            let hu = (u1 - u0) / n as f64;
            let g = |u: f64| self.delta(u.exp()) * (-u).exp();
            let mut s = g(u0) + g(u1);
            for i in 1..n {
                s += g(u0 + i as f64 * hu) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += s * hu / 3.0;
        }
        let from = x.max(end);
        total + self.a * from.powf(self.beta - 1.0) / (1.0 - self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Medium;

    #[test]
    fn fekete_closed_forms() {
        let zero = [(1.0, 0.0), (100.0, 0.0)];
        let lin: Vec<(f64, f64)> = [1.0, 2.0, 8.0].iter().map(|&t| (t, 3.0 * t)).collect();
        for b in fekete_extrapolate(&lin, &zero).unwrap() {
            assert!((b - 3.0).abs() < 1e-12);
        }
        let aff: Vec<(f64, f64)> = [1.0, 2.0, 8.0].iter().map(|&t| (t, 3.0 * t - 2.0)).collect();
        let b = fekete_extrapolate(&aff, &zero).unwrap();
        for (k, &t) in [1.0, 2.0, 8.0].iter().enumerate() {
            assert!((b[k] - (3.0 - 2.0 / t)).abs() < 1e-12);
        }
    }

    #[test]
    fn fekete_square_root_modulus() {
        let table: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let s = 2f64.powf(k as f64 * 0.1);
                (s, 2.0 * s.sqrt())
            })
            .collect();
        for &t in &[1.0, 4.0, 50.0, 5000.0] {
            let b = fekete_extrapolate(&[(t, t + t.sqrt())], &table).unwrap()[0];
            let exact = 1.0 + t.sqrt() / t + 2.0 * t.sqrt() / t - 8.0 * 2f64.sqrt() / t.sqrt();
            assert!((b - exact).abs() < 1e-3 * exact.abs().max(1.0), "t={t} {b} {exact}");
        }
        let linear = [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)];
        assert!(fekete_extrapolate(&[(1.0, 1.0)], &linear).is_err());
    }

    #[test]
    fn constant_models_have_exact_hbar() {
        let opts = MetricOptions::default();
        let m = HamiltonianModel::deterministic_linear(2, 2.0).unwrap();
        let est = hbar_from_metric(&m, [1.0, 0.0], (0.0, 4.0), 64, 4.0, 1, 1, &opts).unwrap();
        assert!((est.value - 2.0).abs() < 0.01 * 2.0, "{est:?}");
        let m = HamiltonianModel::deterministic_quadratic(2).unwrap();
        let est = hbar_from_metric(&m, [1.0, 0.0], (0.0, 2.0), 64, 4.0, 1, 1, &opts).unwrap();
        assert!((est.value - 0.5).abs() < 0.005, "{est:?}");
        let est = hbar_from_metric(&m, [0.0, 0.0], (0.0, 2.0), 64, 4.0, 1, 1, &opts).unwrap();
        assert!(est.flat_spot && est.value == 0.0);
        let cell = hbar_from_cell(&m, [1.0, 0.0], &[0.4, 0.2], 1, 1, &CellOptions::default()).unwrap();
        assert!((cell.value - 0.5).abs() < 1e-7);
    }

    #[test]
    fn mbar_of_constant_speed_has_no_spread() {
        let m = HamiltonianModel::deterministic_linear(2, 2.0).unwrap();
        let est = mbar_estimate(&m, 1.0, [1.0, 0.0], &[2.0, 4.0], 4, 3, &MetricOptions::default()).unwrap();
        assert!((est.value - 0.5).abs() < 1e-12);
        assert!(est.se == 0.0 && est.consistent());
        assert!(mbar_estimate(&m, 1e-4, [1.0, 0.0], &[2.0], 4, 3, &MetricOptions::default()).is_err());
        assert!(mbar_estimate(&m, 1.0, [1.0, 0.0], &[4.0, 2.0], 4, 3, &MetricOptions::default()).is_err());
    }

    #[test]
    fn one_dimensional_formula() {
        let m = HamiltonianModel::h2(1, 1.0, 2.0, Medium::Constant(0.5)).unwrap();
        assert!((hbar_1d(&m, 2.0, &[1.0, 2.0]) - 2.0 / 0.75).abs() < 1e-12);
        let q = HamiltonianModel::deterministic_quadratic(1).unwrap();
        assert!((hbar_1d(&q, 1.0, &[0.0, 0.0]) - 0.5).abs() < 1e-12);
    }
}
