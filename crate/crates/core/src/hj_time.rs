//! Time-dependent problems `u_t + H(Du, x / eps) = 0` and `u_t + Hbar(Du) = 0`.
//!
//! Both are advanced by the same explicit monotone scheme on a centered box.
//! The box is large enough that the region of interest `B_R x [0, T]` stays
//! outside the cone of slope `max(L, s)` grown from the boundary, where `L`
//! bounds `|Du|` and `s` bounds `|dH/dp|`. Boundary nodes use only the
//! neighbours inside the box. Values outside the cone are never reported.

use rayon::prelude::*;
use std::time::Instant;

use crate::cell::{lipschitz_level, Scheme};
use crate::effective::{mbar_estimate, MetricOptions, MU_MIN};
use crate::environment::{sample_field, HamiltonianModel, Medium, Profile, RandomField};
use crate::error::{invalid, Error, Result};
use crate::grid::{dot, norm, Grid, GridFunction, Vec2, Window};
use crate::seeds::replica_seed;
use crate::stats::{mean, rate_fit, std_error, Anchor, Envelope, RateFit};

/// Lipschitz initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    /// `|x|^2 / 2` for `|x| <= k`, continued linearly with slope `k`.
    Quad { k: f64 },
    /// `slope |x|`.
    Cone { slope: f64 },
    /// `p . x` clipped to `[-k, k]`.
    Plane { p: Vec2, k: f64 },
}

impl InitialData {
    pub fn parse(name: &str, k: f64, p: Vec2) -> Result<InitialData> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(invalid("K", "must be positive"));
        }
        match name {
            "quad" => Ok(InitialData::Quad { k }),
            "cone" => Ok(InitialData::Cone { slope: k }),
            "plane" => Ok(InitialData::Plane { p, k }),
            _ => Err(invalid("u0", format!("unknown initial datum `{name}` (quad, cone, plane)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialData::Quad { .. } => "quad",
            InitialData::Cone { .. } => "cone",
            InitialData::Plane { .. } => "plane",
        }
    }

    pub fn value(&self, x: Vec2) -> f64 {
        match *self {
            InitialData::Quad { k } => {
                let r = norm(x);
                if r <= k {
                    0.5 * r * r
                } else {
                    k * r - 0.5 * k * k
                }
            }
            InitialData::Cone { slope } => slope * norm(x),
            InitialData::Plane { p, k } => dot(p, x).clamp(-k, k),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            InitialData::Quad { k } => k,
            InitialData::Cone { slope } => slope.abs(),
            InitialData::Plane { p, .. } => norm(p),
        }
    }
}

/// Radial effective Hamiltonian `Hbar(p) = g(|p|)`, nondecreasing in `|p|`.
#[derive(Debug, Clone, PartialEq)]
pub enum HbarTable {
    /// Closed form `G(|p|, c)` of a position-independent model.
    Analytic { model: HamiltonianModel, c: f64 },
    /// Piecewise-linear interpolation of `(r, g(r))`.
    Tabulated { r: Vec<f64>, values: Vec<f64> },
}

impl HbarTable {
    pub fn tabulated(r: Vec<f64>, values: Vec<f64>) -> Result<HbarTable> {
        if r.len() < 2 || r.len() != values.len() {
            return Err(invalid("hbar_table", "need at least two (r, value) pairs"));
        }
        if r[0] != 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("hbar_table", "radii must start at 0 and increase"));
        }
        if values.windows(2).any(|w| w[1] < w[0] - 1e-12) || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("hbar_table", "values must be finite and nondecreasing in |p|"));
        }
        Ok(HbarTable::Tabulated { r, values })
    }

    pub fn from_fn(r_max: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<HbarTable> {
        if !(r_max > 0.0) || n < 2 {
            return Err(invalid("hbar_table", "need r_max > 0 and n >= 2"));
        }
        let r: Vec<f64> = (0..n).map(|k| r_max * k as f64 / (n - 1) as f64).collect();
        let values = r.iter().map(|&x| f(x)).collect();
        HbarTable::tabulated(r, values)
    }

    /// Exact table of a model whose coefficient does not depend on position.
    pub fn exact(model: &HamiltonianModel) -> Result<HbarTable> {
        match model.medium {
            Medium::Constant(c) => Ok(HbarTable::Analytic { model: model.clone(), c: model.map.apply(c) }),
            _ => Err(invalid("model", "an exact table needs a position-independent Hamiltonian")),
        }
    }

    /// Ergodic table of a one-dimensional model from coefficient samples:
    /// `r / mean(1/a)` for speeds; for potentials the inverse of
    /// `mu -> mean sqrt(2 (mu + W))`, with the flat piece `g = 0` below
    /// `mean sqrt(2 W)`.
    pub fn one_dimensional(model: &HamiltonianModel, coefficients: &[f64], r_max: f64, n: usize) -> Result<HbarTable> {
        if coefficients.is_empty() {
            return Err(invalid("coefficients", "empty sample"));
        }
        match model.profile {
            Profile::Linear => {
                let harmonic = 1.0 / mean(&coefficients.iter().map(|c| 1.0 / c).collect::<Vec<f64>>());
                HbarTable::from_fn(r_max, n, |r| harmonic * r)
            }
            Profile::Quadratic => {
                let avg = |mu: f64| coefficients.iter().map(|&c| model.speed(c, mu)).sum::<f64>() / coefficients.len() as f64;
                let mut mu_top = 1.0;
                while avg(mu_top) < r_max {
                    mu_top *= 2.0;
                }
                // levels clustered near 0, where mu(r) has a square-root onset
                let m = 4 * n;
                let levels: Vec<f64> = (0..=m).map(|k| mu_top * (k as f64 / m as f64).powi(2)).collect();
                let speeds: Vec<f64> = levels.iter().map(|&mu| avg(mu)).collect();
                let r: Vec<f64> = (0..n).map(|k| r_max * k as f64 / (n - 1) as f64).collect();
                let values = r
                    .iter()
                    .map(|&x| {
                        if x <= speeds[0] {
                            return 0.0;
                        }
                        let j = speeds.partition_point(|&s| s < x).clamp(1, m);
                        let (s0, s1) = (speeds[j - 1], speeds[j]);
                        let w = if s1 > s0 { (x - s0) / (s1 - s0) } else { 1.0 };
                        levels[j - 1] + w * (levels[j] - levels[j - 1])
                    })
                    .collect();
                HbarTable::tabulated(r, values)
            }
        }
    }

    /// Table of a statistically isotropic model from the metric route:
    /// `g(mbar_mu(e_1)) = mu` on a level grid, with `g = 0` below the
    /// smallest level's metric constant. The same replicas serve every level.
    pub fn from_metric(
        model: &HamiltonianModel,
        levels: &[f64],
        t: f64,
        n_seeds: usize,
        base_seed: u64,
        opts: &MetricOptions,
    ) -> Result<HbarTable> {
        if levels.len() < 2 || levels.windows(2).any(|w| !(w[1] > w[0])) || levels[0] < MU_MIN {
            return Err(invalid("levels", format!("need increasing levels >= {MU_MIN}")));
        }
        let mut r = vec![0.0];
        let mut values = vec![0.0];
        for &mu in levels {
            let est = mbar_estimate(model, mu, [1.0, 0.0], &[t], n_seeds, base_seed, opts)?;
            let prev = *r.last().unwrap();
            if est.value > prev {
                r.push(est.value);
                values.push(if r.len() == 2 { 0.0 } else { mu });
            }
        }
        HbarTable::tabulated(r, values)
    }

    /// Largest `|p|` covered.
    pub fn r_max(&self) -> f64 {
        match self {
            HbarTable::Analytic { .. } => f64::INFINITY,
            HbarTable::Tabulated { r, .. } => *r.last().unwrap(),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            HbarTable::Analytic { model, c } => model.radial(r, *c),
            HbarTable::Tabulated { r: rs, values } => {
                let n = rs.len();
                let j = rs.partition_point(|&x| x < r).clamp(1, n - 1);
                let w = (r - rs[j - 1]) / (rs[j] - rs[j - 1]);
                values[j - 1] + w * (values[j] - values[j - 1])
            }
        }
    }

    /// Largest slope `dg/dr` on `[0, r]`.
    pub fn max_slope(&self, r: f64) -> f64 {
        match self {
            HbarTable::Analytic { model, c } => model.radial_slope(r, *c).abs(),
            HbarTable::Tabulated { r: rs, values } => {
                let mut s: f64 = 0.0;
                for k in 1..rs.len() {
                    s = s.max((values[k] - values[k - 1]) / (rs[k] - rs[k - 1]));
                    if rs[k - 1] >= r {
                        break;
                    }
                }
                s
            }
        }
    }

    /// Smallest second difference of the table, scaled by the slope range;
    /// negative values measure the departure from convexity.
    pub fn convexity_defect(&self) -> f64 {
        match self {
            HbarTable::Analytic { .. } => 0.0,
            HbarTable::Tabulated { r, values } => {
                let slopes: Vec<f64> = (1..r.len()).map(|k| (values[k] - values[k - 1]) / (r[k] - r[k - 1])).collect();
                let range = slopes.iter().copied().fold(0.0, f64::max).max(1e-300);
                slopes.windows(2).map(|w| (w[1] - w[0]) / range).fold(0.0, f64::min)
            }
        }
    }

    /// Requires the table to cover `|p| <= l`.
    pub fn check_coverage(&self, l: f64) -> Result<()> {
        if self.r_max() + 1e-12 < l {
            return Err(Error::Precondition(format!(
                "effective Hamiltonian table covers |p| <= {} but the gradient bound is {l}",
                self.r_max()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeOptions {
    /// Grid spacing; `None` selects `eps / 8` (required for the homogenized problem).
    pub h: Option<f64>,
    /// Fraction of the CFL limit used as time step.
    pub cfl: f64,
    pub scheme: Scheme,
    /// Number of stored frames after the initial one.
    pub frames: usize,
    /// Radius of the reported ball; `None` means `T`.
    pub region_radius: Option<f64>,
    /// Box half-width; `None` adds the exclusion cone to the region.
    pub half_width: Option<f64>,
    pub max_nodes: usize,
}

impl Default for TimeOptions {
    fn default() -> TimeOptions {
        TimeOptions {
            h: None,
            cfl: 0.9,
            scheme: Scheme::Upwind,
            frames: 4,
            region_radius: None,
            half_width: None,
            max_nodes: 6_000_000,
        }
    }
}

/// Frames of a time-dependent solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSolution {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub frames: Vec<GridFunction>,
    /// 0 for the homogenized problem.
    pub epsilon: f64,
    pub dt: f64,
    /// `dt` as a fraction of the CFL limit.
    pub cfl: f64,
    pub steps: usize,
    /// Bound `L` on `|Du|`.
    pub lipschitz_bound: f64,
    /// Bound on `|H|` over `|p| <= L`, hence on `|u_t|`.
    pub time_bound: f64,
    pub region_radius: f64,
    pub cone_slope: f64,
}

/// Per-frame invariant measurements over the reported region.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub lipschitz: Vec<f64>,
    /// `max |u(x, t) - u0(x)|` per frame.
    pub drift: Vec<f64>,
    pub sup: Vec<f64>,
    pub sup_bound: f64,
    pub lipschitz_ok: bool,
    pub sup_ok: bool,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.lipschitz_ok && self.sup_ok
    }
}

impl SpaceTimeSolution {
    /// Whether node `idx` is reported at time `t`.
    pub fn reported(&self, idx: usize, t: f64) -> bool {
        let x = self.grid.point(idx);
        norm(x) <= self.region_radius + 1e-12 && self.grid.window().depth(x) >= self.cone_slope * t - 1e-12
    }

    pub fn at(&self, frame: usize, x: Vec2) -> Result<f64> {
        self.frames[frame].at(x)
    }

    /// Index of the frame closest to `t`.
    pub fn frame_near(&self, t: f64) -> usize {
        (0..self.times.len()).min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs())).unwrap()
    }

    /// Discrete Lipschitz constant and sup bound `sup |u0| + T sup|H|` per frame.
    pub fn invariants(&self, u0: &InitialData, tol: f64) -> InvariantReport {
        let u0v: Vec<f64> = (0..self.grid.len()).map(|k| u0.value(self.grid.point(k))).collect();
        let region0: Vec<bool> = (0..self.grid.len()).map(|k| self.reported(k, 0.0)).collect();
        let u0_sup = (0..self.grid.len()).filter(|&k| region0[k]).map(|k| u0v[k].abs()).fold(0.0, f64::max);
        let t_end = *self.times.last().unwrap();
        let sup_bound = u0_sup + self.time_bound * t_end;
        let mut lipschitz = Vec::new();
        let mut drift = Vec::new();
        let mut sup = Vec::new();
        let mut drift_ok = true;
        for (f, &t) in self.frames.iter().zip(&self.times) {
            let mask: Vec<bool> = (0..self.grid.len()).map(|k| self.reported(k, t)).collect();
            lipschitz.push(f.lipschitz_where(|k| mask[k]));
            let d = (0..self.grid.len()).filter(|&k| mask[k]).map(|k| (f.values[k] - u0v[k]).abs()).fold(0.0, f64::max);
            drift_ok &= d <= self.time_bound * t + tol;
            drift.push(d);
            sup.push((0..self.grid.len()).filter(|&k| mask[k]).map(|k| f.values[k].abs()).fold(0.0, f64::max));
        }
        let lipschitz_ok = lipschitz.iter().all(|&l| l <= self.lipschitz_bound + tol);
        let sup_ok = drift_ok && sup.iter().all(|&s| s <= sup_bound + tol);
        InvariantReport { lipschitz, drift, sup, sup_bound, lipschitz_ok, sup_ok }
    }
}

/// Local Hamiltonian `G(r, node)` driving the scheme.
enum Local<'a> {
    Field { model: &'a HamiltonianModel, coef: Vec<f64> },
    Table(&'a HbarTable),
}

impl Local<'_> {
    #[inline]
    fn g(&self, r: f64, idx: usize) -> f64 {
        match self {
            Local::Field { model, coef } => model.radial(r, coef[idx]),
            Local::Table(t) => t.eval(r),
        }
    }
}

/// One explicit monotone marching state.
struct Marcher<'a> {
    grid: Grid,
    u: Vec<f64>,
    next: Vec<f64>,
    local: Local<'a>,
    scheme: Scheme,
    /// Lax-Friedrichs viscosity.
    alpha: f64,
}

impl Marcher<'_> {
    fn step(&mut self, dt: f64) {
        let g = &self.grid;
        let (n0, n1) = (g.n[0], g.n[1]);
        let ih = 1.0 / g.h;
        let u = &self.u;
        for j in 0..n1 {
            for i in 0..n0 {
                let idx = j * n0 + i;
                let ui = u[idx];
                let mut r2 = 0.0;
                let mut visc = 0.0;
                let mut axis = |lo: f64, hi: f64| {
                    let dm = (ui - lo) * ih;
                    let dp = (hi - ui) * ih;
                    match self.scheme {
                        Scheme::Upwind => {
                            let a = dm.max(0.0).max(-dp);
                            r2 += a * a;
                        }
                        Scheme::LaxFriedrichs => {
                            let c = 0.5 * (dm + dp);
                            r2 += c * c;
                            visc += 0.5 * self.alpha * (dp - dm);
                        }
                    }
                };
                let left = if i > 0 { u[idx - 1] } else { ui };
                let right = if i + 1 < n0 { u[idx + 1] } else { ui };
                axis(left, right);
                if g.dim == 2 {
                    let down = if j > 0 { u[idx - n0] } else { ui };
                    let up = if j + 1 < n1 { u[idx + n0] } else { ui };
                    axis(down, up);
                }
                self.next[idx] = ui - dt * (self.local.g(r2.sqrt(), idx) - visc);
            }
        }
        std::mem::swap(&mut self.u, &mut self.next);
    }
}

/// Bounds shared by the oscillatory and homogenized solves.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    lipschitz: f64,
    speed: f64,
    time_bound: f64,
}

fn field_bounds(model: &HamiltonianModel, cmin: f64, cmax: f64, k: f64) -> Bounds {
    let l = lipschitz_level(model, cmin, cmax, k).max(k);
    let speed = match model.profile {
        Profile::Quadratic => l,
        Profile::Linear => cmax,
    };
    let time_bound = [model.radial(0.0, cmin), model.radial(0.0, cmax), model.radial(l, cmin), model.radial(l, cmax)]
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    Bounds { lipschitz: l, speed, time_bound }
}

fn table_bounds(table: &HbarTable, k: f64) -> Result<Bounds> {
    // Hbar is radial and nondecreasing: |Du| <= K unless K lies on the flat piece
    let g_k = table.eval(k);
    let mut l = k;
    if let HbarTable::Tabulated { r, values } = table {
        for (x, v) in r.iter().zip(values) {
            if *v <= g_k + 1e-14 {
                l = l.max(*x);
            }
        }
    }
    table.check_coverage(l)?;
    let time_bound = table.eval(0.0).abs().max(table.eval(l).abs());
    Ok(Bounds { lipschitz: l, speed: table.max_slope(l), time_bound })
}

fn check_common(epsilon: f64, t_end: f64, opts: &TimeOptions) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid("T", "must be positive"));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", "must be nonnegative"));
    }
    if !(opts.cfl > 0.0) {
        return Err(invalid("cfl", "must be positive"));
    }
    if opts.cfl > 1.0 {
        return Err(Error::Cfl { dt: opts.cfl, limit: 1.0 });
    }
    if opts.frames == 0 {
        return Err(invalid("frames", "at least one"));
    }
    Ok(())
}

/// Grid spacing, box, time step and step count.
struct Layout {
    grid: Grid,
    dt: f64,
    steps: usize,
    region: f64,
    slope: f64,
}

fn layout(dim: usize, h: f64, t_end: f64, speed: f64, lipschitz: f64, opts: &TimeOptions) -> Result<Layout> {
    let region = opts.region_radius.unwrap_or(t_end);
    if !(region > 0.0) {
        return Err(invalid("region_radius", "must be positive"));
    }
    let slope = speed.max(lipschitz);
    let hw = opts.half_width.unwrap_or(region + slope * t_end + 4.0 * h);
    let m = (hw / h - 1e-9).ceil() as usize;
    let nodes = (2 * m + 1).pow(dim as u32);
    if nodes > opts.max_nodes {
        return Err(Error::GridBudget { required_half_width: hw, nodes, limit: opts.max_nodes });
    }
    let grid = Grid::centered(dim, hw, h)?;
    let limit = h / (2.0 * speed.max(1e-300));
    let per_frame = (t_end / (opts.frames as f64 * opts.cfl * limit)).ceil().max(1.0) as usize;
    let steps = per_frame * opts.frames;
    Ok(Layout { grid, dt: t_end / steps as f64, steps, region, slope })
}

fn march(layout: &Layout, mut m: Marcher, epsilon: f64, bounds: Bounds, frames: usize) -> SpaceTimeSolution {
    let per_frame = layout.steps / frames;
    let mut times = vec![0.0];
    let mut out = vec![GridFunction::new(layout.grid, m.u.clone())];
    for f in 1..=frames {
        for _ in 0..per_frame {
            m.step(layout.dt);
        }
        times.push((f * per_frame) as f64 * layout.dt);
        out.push(GridFunction::new(layout.grid, m.u.clone()));
    }
    SpaceTimeSolution {
        grid: layout.grid,
        times,
        frames: out,
        epsilon,
        dt: layout.dt,
        cfl: layout.dt * 2.0 * bounds.speed / layout.grid.h,
        steps: layout.steps,
        lipschitz_bound: bounds.lipschitz,
        time_bound: bounds.time_bound,
        region_radius: layout.region,
        cone_slope: layout.slope,
    }
}

fn initial(grid: &Grid, u0: &InitialData) -> Vec<f64> {
    (0..grid.len()).map(|k| u0.value(grid.point(k))).collect()
}

/// Half-width in `x` of the box [`solve_hj_eps`] needs for `field`.
pub fn required_half_width(field: &RandomField, epsilon: f64, u0: &InitialData, t_end: f64, opts: &TimeOptions) -> f64 {
    let (cmin, cmax) = field.coefficient_bounds();
    let b = field_bounds(&field.model, cmin, cmax, u0.lipschitz());
    let h = opts.h.unwrap_or(epsilon / 8.0);
    opts.half_width.unwrap_or(opts.region_radius.unwrap_or(t_end) + b.speed.max(b.lipschitz) * t_end + 4.0 * h)
}

fn oscillatory_layout(field: &RandomField, epsilon: f64, u0: &InitialData, t_end: f64, opts: &TimeOptions) -> Result<(Layout, Bounds)> {
    check_common(epsilon, t_end, opts)?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let h = opts.h.unwrap_or(epsilon / 8.0);
    if h > epsilon / 8.0 + 1e-15 {
        return Err(Error::UnderResolved { h, required: epsilon / 8.0 });
    }
    let (cmin, cmax) = field.coefficient_bounds();
    let b = field_bounds(&field.model, cmin, cmax, u0.lipschitz());
    Ok((layout(field.model.dimension, h, t_end, b.speed, b.lipschitz, opts)?, b))
}

fn field_marcher<'a>(field: &'a RandomField, epsilon: f64, lay: &Layout, u0: &InitialData, bounds: Bounds, scheme: Scheme) -> Result<Marcher<'a>> {
    let grid = lay.grid;
    let w = grid.window();
    let inner = Window { dim: w.dim, lo: [w.lo[0] / epsilon, w.lo[1] / epsilon], hi: [w.hi[0] / epsilon, w.hi[1] / epsilon] };
    if !field.window.contains(inner.lo) || !field.window.contains(inner.hi) {
        return Err(Error::OutOfWindow { x: inner.hi[0], y: inner.hi[1] });
    }
    let coef = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            field.coefficient_unchecked([x[0] / epsilon, x[1] / epsilon])
        })
        .collect();
    let u = initial(&grid, u0);
    Ok(Marcher {
        grid,
        next: u.clone(),
        u,
        local: Local::Field { model: &field.model, coef },
        scheme,
        alpha: bounds.speed,
    })
}

/// Solves `u_t + H(Du, x / eps) = 0`, `u(., 0) = u0` on `[0, T]`.
/// The field must cover the box divided by `eps`
/// (see [`required_half_width`]).
pub fn solve_hj_eps(field: &RandomField, epsilon: f64, u0: &InitialData, t_end: f64, opts: &TimeOptions) -> Result<SpaceTimeSolution> {
    let (lay, bounds) = oscillatory_layout(field, epsilon, u0, t_end, opts)?;
    let m = field_marcher(field, epsilon, &lay, u0, bounds, opts.scheme)?;
    Ok(march(&lay, m, epsilon, bounds, opts.frames))
}

/// Solves `u_t + Hbar(Du) = 0` with the tabulated effective Hamiltonian.
pub fn solve_hj_hbar(table: &HbarTable, dim: usize, u0: &InitialData, t_end: f64, opts: &TimeOptions) -> Result<SpaceTimeSolution> {
    check_common(0.0, t_end, opts)?;
    let h = opts.h.ok_or_else(|| invalid("h", "the homogenized problem needs an explicit grid spacing"))?;
    let bounds = table_bounds(table, u0.lipschitz())?;
    let lay = layout(dim, h, t_end, bounds.speed, bounds.lipschitz, opts)?;
    let u = initial(&lay.grid, u0);
    let m = Marcher {
        grid: lay.grid,
        next: u.clone(),
        u,
        local: Local::Table(table),
        scheme: opts.scheme,
        alpha: bounds.speed,
    };
    Ok(march(&lay, m, 0.0, bounds, opts.frames))
}

/// Numerical Legendre transform `l(q) = sup_r (r q - g(r))` of a radial table.
#[derive(Debug, Clone, PartialEq)]
pub struct Legendre {
    q: Vec<f64>,
    values: Vec<f64>,
}

impl Legendre {
    pub fn new(table: &HbarTable, r_max: f64, q_max: f64, n: usize) -> Legendre {
        let nr = 4 * n;
        let rs: Vec<f64> = (0..=nr).map(|k| r_max * k as f64 / nr as f64).collect();
        let gs: Vec<f64> = rs.iter().map(|&r| table.eval(r)).collect();
        let q: Vec<f64> = (0..=n).map(|k| q_max * k as f64 / n as f64).collect();
        let values = q
            .iter()
            .map(|&x| rs.iter().zip(&gs).map(|(r, g)| r * x - g).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Legendre { q, values }
    }

    pub fn eval(&self, q: f64) -> f64 {
        let n = self.q.len();
        if q >= self.q[n - 1] {
            // beyond the table the transform grows at least with slope r_max
            let slope = (self.values[n - 1] - self.values[n - 2]) / (self.q[n - 1] - self.q[n - 2]);
            return self.values[n - 1] + slope * (q - self.q[n - 1]);
        }
        let j = self.q.partition_point(|&x| x < q).clamp(1, n - 1);
        let w = (q - self.q[j - 1]) / (self.q[j] - self.q[j - 1]);
        self.values[j - 1] + w * (self.values[j] - self.values[j - 1])
    }
}

/// Hopf-Lax value `min_y u0(y) + t l(|x - y| / t)` over a lattice of
/// spacing `h` covering `|x - y| <= t q_max`.
pub fn hopf_lax(legendre: &Legendre, u0: &InitialData, dim: usize, x: Vec2, t: f64, q_max: f64, h: f64) -> f64 {
    if t <= 0.0 {
        return u0.value(x);
    }
    let reach = t * q_max;
    let m = (reach / h).ceil() as i64;
    let mut best = f64::INFINITY;
    let jr = if dim == 2 { m } else { 0 };
    for j in -jr..=jr {
        for i in -m..=m {
            let d = [i as f64 * h, j as f64 * h];
            let len = norm(d);
            if len > reach + 1e-12 {
                continue;
            }
            let y = [x[0] + d[0], x[1] + d[1]];
            best = best.min(u0.value(y) + t * legendre.eval(len / t));
        }
    }
    best
}

/// Largest scheme-vs-Hopf-Lax difference at the frames nearest
/// `T/4, T/2, T`, sampled at `n_points` points of the reported region.
pub fn hopf_lax_check(sol: &SpaceTimeSolution, table: &HbarTable, u0: &InitialData, n_points: usize) -> Result<Vec<(f64, f64)>> {
    let dim = sol.grid.dim;
    let bounds = table_bounds(table, u0.lipschitz())?;
    if table.convexity_defect() < -1e-6 {
        return Err(Error::Precondition("Hopf-Lax oracle needs a convex effective Hamiltonian".into()));
    }
    let q_max = 1.05 * bounds.speed.max(1e-6);
    let legendre = Legendre::new(table, bounds.lipschitz, q_max, 2000);
    let t_end = *sol.times.last().unwrap();
    let h_search = 0.25 * sol.grid.h;
    let pts: Vec<Vec2> = (0..n_points)
        .map(|k| {
            let s = (k as f64 + 0.5) / n_points as f64;
            let r = sol.region_radius * (2.0 * s - 1.0);
            if dim == 2 {
                let th = 2.399963 * k as f64;
                [r.abs() * th.cos(), r.abs() * th.sin()]
            } else {
                [r, 0.0]
            }
        })
        .collect();
    let mut out = Vec::new();
    for target in [0.25 * t_end, 0.5 * t_end, t_end] {
        let f = sol.frame_near(target);
        let t = sol.times[f];
        let mut err: f64 = 0.0;
        for &x in &pts {
            if let Some(k) = sol.grid.nearest(x).ok().filter(|&k| sol.reported(k, t)) {
                let xn = sol.grid.point(k);
                let exact = hopf_lax(&legendre, u0, dim, xn, t, q_max, h_search);
                err = err.max((sol.frames[f].values[k] - exact).abs());
            }
        }
        out.push((t, err));
    }
    Ok(out)
}

/// How the effective Hamiltonian of [`homogenization_error`] is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum HbarSource {
    /// Closed form; position-independent models only.
    Exact,
    /// Ergodic one-dimensional formula from an independent realization
    /// sampled with `spacing` on `[-length, length]`.
    OneDimensional { length: f64, spacing: f64 },
    /// Metric route on `n_levels` levels `mu`, spaced quadratically up to
    /// a level whose metric constant exceeds the needed gradient range.
    Metric { n_levels: usize, t: f64, n_seeds: usize, opts: MetricOptions },
    Given(HbarTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogOptions {
    pub time: TimeOptions,
    pub hbar: HbarSource,
    /// Exponents `(a, b)` of the envelope `T eps^a |log eps|^b`.
    pub envelope: (f64, f64),
    /// Round-off tolerance of one solve.
    pub solver_tol: f64,
}

impl Default for HomogOptions {
    fn default() -> HomogOptions {
        HomogOptions {
            time: TimeOptions::default(),
            hbar: HbarSource::OneDimensional { length: 2000.0, spacing: 1.0 / 64.0 },
            envelope: (1.0 / 8.0, 3.0 / 16.0),
            solver_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogRecord {
    pub epsilon: f64,
    pub seed: u64,
    pub replica: usize,
    pub sup_error: f64,
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizationReport {
    pub records: Vec<HomogRecord>,
    pub ladder: Vec<f64>,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub fit: Option<RateFit>,
    /// Envelope `C T eps^a |log eps|^b` anchored at the largest `eps`.
    pub envelope_holds: bool,
    pub envelope_constant: f64,
    /// Mean error decreases by more than `2 SE` between consecutive rungs.
    pub strictly_decreasing: bool,
    pub table: HbarTable,
    pub solver_tol: f64,
}

/// Builds the effective Hamiltonian table covering `|p| <= r_max`.
pub fn hbar_table(model: &HamiltonianModel, source: &HbarSource, r_max: f64, base_seed: u64) -> Result<HbarTable> {
    match source {
        HbarSource::Exact => HbarTable::exact(model),
        HbarSource::Given(t) => Ok(t.clone()),
        HbarSource::OneDimensional { length, spacing } => {
            if model.dimension != 1 {
                return Err(invalid("hbar", "the one-dimensional formula needs d = 1"));
            }
            let field = sample_field(model, Window::centered(1, [0.0, 0.0], *length), replica_seed(base_seed, "homog-hbar", 0))?;
            let n = (2.0 * length / spacing) as usize;
            let coef: Vec<f64> = (0..n).map(|k| field.coefficient_unchecked([-length + (k as f64 + 0.5) * spacing, 0.0])).collect();
            HbarTable::one_dimensional(model, &coef, r_max, 401)
        }
        HbarSource::Metric { n_levels, t, n_seeds, opts } => {
            if *n_levels < 2 {
                return Err(invalid("n_levels", "at least two"));
            }
            // mbar_mu >= sqrt(2 mu) for potentials, mu / a_max for speeds
            let top = match model.profile {
                Profile::Quadratic => 0.5 * r_max * r_max,
                Profile::Linear => r_max * model.a_max,
            };
            let levels: Vec<f64> = (0..*n_levels)
                .map(|k| MU_MIN + (top - MU_MIN) * (k as f64 / (*n_levels - 1) as f64).powi(2))
                .collect();
            HbarTable::from_metric(model, &levels, *t, *n_seeds, replica_seed(base_seed, "homog-hbar", 0), opts)
        }
    }
}

/// Gradient bound valid for every realization of `model`.
fn model_lipschitz(model: &HamiltonianModel, k: f64) -> f64 {
    let (cmin, cmax) = match model.profile {
        Profile::Quadratic => (0.0, model.v_max),
        Profile::Linear => (model.a_min, model.a_max),
    };
    lipschitz_level(model, cmin, cmax, k).max(k)
}

/// Sup error over the region and every time step between one oscillatory
/// realization and the homogenized solution, advanced in lockstep on the
/// same grid with the same time step.
pub fn sup_error(field: &RandomField, epsilon: f64, table: &HbarTable, u0: &InitialData, t_end: f64, opts: &TimeOptions) -> Result<f64> {
    let (_, fb) = oscillatory_layout(field, epsilon, u0, t_end, opts)?;
    let tb = table_bounds(table, u0.lipschitz())?;
    let joint = Bounds { lipschitz: fb.lipschitz.max(tb.lipschitz), speed: fb.speed.max(tb.speed), time_bound: 0.0 };
    let h = opts.h.unwrap_or(epsilon / 8.0);
    let lay = layout(field.model.dimension, h, t_end, joint.speed, joint.lipschitz, opts)?;
    let mut a = field_marcher(field, epsilon, &lay, u0, fb, opts.scheme)?;
    a.alpha = joint.speed;
    let u = initial(&lay.grid, u0);
    let mut b = Marcher { grid: lay.grid, next: u.clone(), u, local: Local::Table(table), scheme: opts.scheme, alpha: joint.speed };
    let region: Vec<usize> = (0..lay.grid.len()).filter(|&k| norm(lay.grid.point(k)) <= lay.region + 1e-12).collect();
    let w = lay.grid.window();
    let mut err: f64 = 0.0;
    for s in 1..=lay.steps {
        a.step(lay.dt);
        b.step(lay.dt);
        let t = s as f64 * lay.dt;
        for &k in &region {
            if w.depth(lay.grid.point(k)) >= lay.slope * t - 1e-12 {
                err = err.max((a.u[k] - b.u[k]).abs());
            }
        }
    }
    Ok(err)
}

/// `E(eps) = sup_{B_R x (0, T]} |u^eps - u|` per realization along a ladder
/// of `eps`, with a log-log fit of the seed means and a one-sided envelope.
pub fn homogenization_error(
    model: &HamiltonianModel,
    u0: &InitialData,
    epsilon_ladder: &[f64],
    t_end: f64,
    n_seeds: usize,
    base_seed: u64,
    opts: &HomogOptions,
) -> Result<HomogenizationReport> {
    if epsilon_ladder.is_empty() || epsilon_ladder.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(invalid("eps_ladder", "entries must lie in (0, 1)"));
    }
    if epsilon_ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("eps_ladder", "must be strictly decreasing"));
    }
    if n_seeds == 0 {
        return Err(invalid("n_seeds", "at least one"));
    }
    let l = model_lipschitz(model, u0.lipschitz());
    let table = hbar_table(model, &opts.hbar, 1.5 * u0.lipschitz() + 1.0, base_seed)?;
    let region = opts.time.region_radius.unwrap_or(t_end);
    let jobs: Vec<(usize, usize)> = (0..epsilon_ladder.len()).flat_map(|e| (0..n_seeds).map(move |i| (e, i))).collect();
    let records = jobs
        .par_iter()
        .map(|&(e, i)| {
            let eps = epsilon_ladder[e];
            let seed = replica_seed(base_seed, "homog", i as u64);
            let start = Instant::now();
            let slope = match model.profile {
                Profile::Quadratic => l,
                Profile::Linear => l.max(model.a_max),
            };
            let h = opts.time.h.unwrap_or(eps / 8.0);
            let hw = opts.time.half_width.unwrap_or(region + slope * t_end + 4.0 * h) + h;
            let field = sample_field(model, Window::centered(model.dimension, [0.0, 0.0], hw / eps), seed)?;
            let err = sup_error(&field, eps, &table, u0, t_end, &opts.time)?;
            Ok(HomogRecord { epsilon: eps, seed, replica: i, sup_error: err, runtime: start.elapsed().as_secs_f64() })
        })
        .collect::<Result<Vec<HomogRecord>>>()?;
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &eps in epsilon_ladder {
        let xs: Vec<f64> = records.iter().filter(|r| r.epsilon == eps).map(|r| r.sup_error).collect();
        means.push(mean(&xs));
        ses.push(if xs.len() > 1 { std_error(&xs) } else { 0.0 });
    }
    let strictly_decreasing = (1..means.len()).all(|k| means[k - 1] - means[k] > 2.0 * ses[k - 1].hypot(ses[k]));
    let (a, b) = opts.envelope;
    let env = move |eps: f64| t_end * eps.powf(a) * eps.ln().abs().powf(b);
    let points: Vec<(f64, f64)> = epsilon_ladder.iter().copied().zip(means.iter().copied()).collect();
    let check = crate::stats::envelope_check(
        &points,
        "T eps^a |log eps|^b",
        &env,
        Anchor::Largest,
        &ses.iter().map(|s| 2.0 * s + 2.0 * opts.solver_tol).collect::<Vec<f64>>(),
    );
    let fit = if points.len() >= 3 && points.iter().all(|p| p.1 > 0.0) {
        Some(rate_fit(&points, Some(Envelope { form: "T eps^a |log eps|^b", f: &env, anchor: Anchor::Largest }))?)
    } else {
        None
    };
    Ok(HomogenizationReport {
        records,
        ladder: epsilon_ladder.to_vec(),
        means,
        ses,
        fit,
        envelope_holds: check.holds,
        envelope_constant: check.constant,
        strictly_decreasing,
        table,
        solver_tol: opts.solver_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_model(dim: usize) -> HamiltonianModel {
        HamiltonianModel::deterministic_quadratic(dim).unwrap()
    }

    fn constant_field(model: &HamiltonianModel, hw: f64) -> RandomField {
        sample_field(model, Window::centered(model.dimension, [0.0, 0.0], hw), 0).unwrap()
    }

    fn opts(h: f64) -> TimeOptions {
        TimeOptions { h: Some(h), region_radius: Some(1.0), ..TimeOptions::default() }
    }

    fn max_error(sol: &SpaceTimeSolution, exact: impl Fn(Vec2, f64) -> f64) -> f64 {
        let mut e: f64 = 0.0;
        for (f, &t) in sol.frames.iter().zip(&sol.times) {
            for k in 0..sol.grid.len() {
                if sol.reported(k, t) {
                    e = e.max((f.values[k] - exact(sol.grid.point(k), t)).abs());
                }
            }
        }
        e
    }

    #[test]
    fn quadratic_hamiltonian_quadratic_data() {
        for dim in [1, 2] {
            let model = quad_model(dim);
            let field = constant_field(&model, 1e6);
            let u0 = InitialData::Quad { k: 4.0 };
            let sol = solve_hj_eps(&field, 0.8, &u0, 1.0, &opts(0.05)).unwrap();
            let e = max_error(&sol, |x, t| 0.5 * norm(x).powi(2) / (1.0 + t));
            assert!(e < 0.05, "dim {dim}: {e}");
            assert!(sol.invariants(&u0, 1e-9).holds());
        }
    }

    #[test]
    fn unit_speed_cone_shrinks() {
        let model = HamiltonianModel::deterministic_linear(2, 1.0).unwrap();
        let field = constant_field(&model, 1e6);
        let u0 = InitialData::Cone { slope: 1.0 };
        let sol = solve_hj_eps(&field, 0.8, &u0, 1.0, &opts(0.05)).unwrap();
        let e = max_error(&sol, |x, t| (norm(x) - t).max(0.0));
        assert!(e < 0.08, "{e}");
    }

    #[test]
    fn table_reproduces_closed_forms() {
        let q = HbarTable::from_fn(8.0, 801, |r| 0.5 * r * r).unwrap();
        let u0 = InitialData::Quad { k: 4.0 };
        let sol = solve_hj_hbar(&q, 1, &u0, 1.0, &opts(0.02)).unwrap();
        assert!(max_error(&sol, |x, t| 0.5 * x[0] * x[0] / (1.0 + t)) < 0.02);
        let lin = HbarTable::from_fn(4.0, 5, |r| r).unwrap();
        let cone = InitialData::Cone { slope: 1.0 };
        let sol = solve_hj_hbar(&lin, 1, &cone, 1.0, &opts(0.02)).unwrap();
        let e = max_error(&sol, |x, t| (x[0].abs() - t).max(0.0));
        assert!(e < 0.06, "{e}");
    }

    #[test]
    fn hopf_lax_matches_closed_form() {
        let q = HbarTable::from_fn(6.0, 601, |r| 0.5 * r * r).unwrap();
        let leg = Legendre::new(&q, 6.0, 6.5, 2000);
        assert!((leg.eval(1.5) - 1.125).abs() < 1e-3);
        let u0 = InitialData::Quad { k: 4.0 };
        let v = hopf_lax(&leg, &u0, 1, [0.8, 0.0], 0.5, 6.5, 0.001);
        assert!((v - 0.64 / 3.0).abs() < 2e-3, "{v}");
    }

    #[test]
    fn invalid_inputs() {
        let model = quad_model(1);
        let field = constant_field(&model, 1e6);
        let u0 = InitialData::Quad { k: 2.0 };
        let coarse = TimeOptions { h: Some(0.1), ..TimeOptions::default() };
        assert!(matches!(solve_hj_eps(&field, 0.4, &u0, 1.0, &coarse), Err(Error::UnderResolved { .. })));
        let fast = TimeOptions { cfl: 1.5, ..TimeOptions::default() };
        assert!(matches!(solve_hj_eps(&field, 0.4, &u0, 1.0, &fast), Err(Error::Cfl { .. })));
        let short = HbarTable::from_fn(1.0, 11, |r| 0.5 * r * r).unwrap();
        assert!(solve_hj_hbar(&short, 1, &u0, 1.0, &opts(0.05)).is_err());
        assert!(InitialData::parse("bowl", 1.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn one_dimensional_table_flat_piece() {
        let model = HamiltonianModel::h1(1, Medium::Periodic { amplitude: 1.0 }, None).unwrap();
        let coef: Vec<f64> = (0..1000).map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / 1000.0).sin().powi(2)).collect();
        let t = HbarTable::one_dimensional(&model, &coef, 4.0, 81).unwrap();
        let flat = mean(&coef.iter().map(|c| (2.0 * c).sqrt()).collect::<Vec<f64>>());
        assert_eq!(t.eval(0.99 * flat), 0.0);
        assert!(t.eval(1.05 * flat) > 0.0);
        for p in [1.5, 3.0] {
            let exact = crate::effective::hbar_1d(&model, p, &coef);
            assert!((t.eval(p) - exact).abs() < 2e-3 * (1.0 + exact), "{p}");
        }
    }

    #[test]
    fn deterministic_model_has_no_homogenization_error() {
        let model = quad_model(1);
        let o = HomogOptions { hbar: HbarSource::Exact, ..HomogOptions::default() };
        let rep = homogenization_error(&model, &InitialData::Quad { k: 2.0 }, &[0.4, 0.2, 0.1], 1.0, 2, 1, &o).unwrap();
        assert_eq!(rep.records.len(), 6);
        assert!(rep.means.iter().all(|&m| m <= 2.0 * rep.solver_tol));
    }
}
