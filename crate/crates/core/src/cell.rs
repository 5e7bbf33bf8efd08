//! Discounted cell problem `delta v + H(p + Dv, y) = 0`.
//!
//! The equation is discretised with a monotone numerical Hamiltonian and
//! solved by Gauss-Seidel sweeps in alternating directions. Two schemes are
//! available:
//!
//! * [`Scheme::Upwind`]: `G(|A|, c(y))` with
//!   `A_k = max((p_k + D_k^- v)^+, (p_k + D_k^+ v)^-)`, valid for the radial
//!   profiles of [`crate::environment`]. The local equation is solved exactly.
//! * [`Scheme::LaxFriedrichs`]: central differences plus numerical viscosity.
//!
//! On a truncated window the outer ring is held at the barrier
//! `-inf_y H(p, y) / delta`, a supersolution, so the discrete solution lies
//! above the whole-space one and converges to it away from the boundary.

use crate::environment::{HamiltonianModel, Profile, RandomField};
use crate::error::{invalid, Error, Result};
use crate::grid::{norm, Grid, GridFunction, Vec2, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Upwind,
    LaxFriedrichs,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "upwind" => Ok(Scheme::Upwind),
            "lax_friedrichs" | "lf" => Ok(Scheme::LaxFriedrichs),
            _ => Err(invalid("scheme", format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Outer ring fixed at the supersolution barrier.
    Barrier,
    /// Periodic wrap on `[0, 1)^d`.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOptions {
    pub h: f64,
    /// Window half-width; `None` selects [`default_half_width`].
    pub half_width: Option<f64>,
    pub scheme: Scheme,
    pub boundary: Boundary,
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_nodes: usize,
    /// When set, the default window is enlarged until the barrier's estimated
    /// influence on the interior, `osc H exp(-delta R / (2 s))` with `s` the
    /// characteristic speed bound, falls below this value.
    pub influence_tol: Option<f64>,
}

impl Default for CellOptions {
    fn default() -> CellOptions {
        CellOptions {
            h: 0.125,
            half_width: None,
            scheme: Scheme::Upwind,
            boundary: Boundary::Barrier,
            tol: 1e-8,
            max_sweeps: 100_000,
            max_nodes: 12_000_000,
            influence_tol: None,
        }
    }
}

/// Window half-width `max(3 K_p, 8) / delta`; the node budget caps it.
pub fn default_half_width(kp: f64, delta: f64) -> f64 {
    (3.0 * kp).max(8.0) / delta
}

/// Half-width making the barrier influence on the inner half at most `tol`.
pub fn influence_half_width(model: &HamiltonianModel, cmin: f64, cmax: f64, p: Vec2, delta: f64, tol: f64) -> f64 {
    let kp = kp_from_bounds(model, cmin, cmax, p);
    let r = norm(p);
    let speed = match model.profile {
        Profile::Quadratic => kp - r,
        Profile::Linear => cmax,
    }
    .max(1e-12);
    let osc = (model.radial(r, cmin) - model.radial(r, cmax)).abs().max(tol);
    2.0 * speed * (osc / tol).ln().max(1.0) / delta
}

/// Lipschitz bound `K_p = |p| + sup{|q| : inf_y H(q, y) <= sup_y H(p, y)}`
/// with per-realization coefficient bounds:
/// `|p| + sqrt(|p|^2 + 2 v_max)` for potentials, `|p| (1 + a_max / a_min)` for speeds.
pub fn compute_kp(field: &RandomField, p: Vec2) -> f64 {
    let (cmin, cmax) = field.coefficient_bounds();
    kp_from_bounds(&field.model, cmin, cmax, p)
}

pub fn kp_from_bounds(model: &HamiltonianModel, cmin: f64, cmax: f64, p: Vec2) -> f64 {
    let r = norm(p);
    match model.profile {
        Profile::Quadratic => r + (r * r + 2.0 * cmax.max(0.0)).sqrt(),
        Profile::Linear => r + r * cmax / cmin,
    }
}

/// `L(K) = sup{|q| : inf_y H(q, y) <= sup_{|p| <= K, y} H(p, y)}`.
pub fn lipschitz_level(model: &HamiltonianModel, cmin: f64, cmax: f64, k: f64) -> f64 {
    match model.profile {
        Profile::Quadratic => (k * k + 2.0 * cmax.max(0.0) - 2.0 * cmin.max(0.0)).sqrt(),
        Profile::Linear => k * cmax / cmin,
    }
}

/// Maximiser of the bound `Pi_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiBound {
    pub value: f64,
    pub q: Vec2,
    pub sigma: f64,
    pub coefficient: f64,
}

/// `Pi_p = max_{sigma = +-1} sup_{|q| <= K_p, y} |H(p + q, y) - H(p + (1 + sigma) q, y)|`
/// by search over a polar grid in `q` and the coefficient range.
pub fn compute_pip(field: &RandomField, p: Vec2, n_probes: usize) -> PiBound {
    let (cmin, cmax) = field.coefficient_bounds();
    let kp = compute_kp(field, p);
    let model = &field.model;
    let dim = model.dimension;
    let mut coefs = vec![cmin, cmax];
    for k in 1..n_probes.min(16) {
        coefs.push(cmin + (cmax - cmin) * k as f64 / n_probes.min(16) as f64);
    }
    let nr = n_probes.max(8);
    let mut dirs: Vec<Vec2> = Vec::new();
    if dim == 1 {
        dirs.push([1.0, 0.0]);
        dirs.push([-1.0, 0.0]);
    } else {
        let na = 4 * n_probes.max(8);
        for j in 0..na {
            let th = 2.0 * std::f64::consts::PI * j as f64 / na as f64;
            dirs.push([th.cos(), th.sin()]);
        }
        let r = norm(p);
        if r > 0.0 {
            dirs.push([p[0] / r, p[1] / r]);
            dirs.push([-p[0] / r, -p[1] / r]);
        }
    }
    let mut best = PiBound { value: 0.0, q: [0.0, 0.0], sigma: 1.0, coefficient: cmin };
    for &c in &coefs {
        for e in &dirs {
            for k in 0..=nr {
                let s = kp * k as f64 / nr as f64;
                let q = [s * e[0], s * e[1]];
                let h1 = model.h([p[0] + q[0], p[1] + q[1]], c);
                for sigma in [-1.0, 1.0] {
                    let f = 1.0 + sigma;
                    let h2 = model.h([p[0] + f * q[0], p[1] + f * q[1]], c);
                    let d = (h1 - h2).abs();
                    if d > best.value {
                        best = PiBound { value: d, q, sigma, coefficient: c };
                    }
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub p: Vec2,
    pub delta: f64,
    pub residual: f64,
    pub sweeps: usize,
    pub barrier: f64,
    pub kp: f64,
    /// `inf_y H(p, y)` and `sup_y H(p, y)` over the window.
    pub h_inf: f64,
    pub h_sup: f64,
    /// Region where values are reported (inner half of the window).
    pub interior: Window,
    pub boundary: Boundary,
}

impl CellSolution {
    pub fn at(&self, y: Vec2) -> Result<f64> {
        if self.boundary == Boundary::Periodic {
            let w = |x: f64| x - x.floor();
            let g = &self.grid;
            let y = [w(y[0]), if g.dim == 2 { w(y[1]) } else { 0.0 }];
            return periodic_interpolate(g, &self.values, y);
        }
        self.grid.interpolate(&self.values, y)
    }

    /// `-delta v^delta(y)`, the finite-delta approximation of the effective Hamiltonian.
    pub fn hbar_proxy(&self, y: Vec2) -> Result<f64> {
        Ok(-self.delta * self.at(y)?)
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.grid.len()).map(|k| self.interior.contains(self.grid.point(k))).collect()
    }

    /// Largest axis difference quotient on the interior.
    pub fn lipschitz_interior(&self) -> f64 {
        let g = &self.grid;
        let mask = self.interior_mask();
        let mut best: f64 = 0.0;
        for k in 0..g.len() {
            if !mask[k] {
                continue;
            }
            let (i, j) = g.coords(k);
            if i + 1 < g.n[0] && mask[k + 1] {
                best = best.max((self.values[k + 1] - self.values[k]).abs() / g.h);
            }
            if g.dim == 2 && j + 1 < g.n[1] && mask[k + g.n[0]] {
                best = best.max((self.values[k + g.n[0]] - self.values[k]).abs() / g.h);
            }
        }
        best
    }

    /// `(min, max)` of `delta v` on the interior.
    pub fn delta_v_range(&self) -> (f64, f64) {
        let mask = self.interior_mask();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &m) in mask.iter().enumerate() {
            if m {
                let x = self.delta * self.values[k];
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        (lo, hi)
    }

    pub fn as_grid_function(&self) -> GridFunction {
        GridFunction::new(self.grid, self.values.clone())
    }
}

fn periodic_interpolate(g: &Grid, values: &[f64], y: Vec2) -> Result<f64> {
    let loc = |x: f64, n: usize| -> (usize, usize, f64) {
        let s = x / g.h;
        let i = (s.floor() as usize) % n;
        (i, (i + 1) % n, s - s.floor())
    };
    let (i0, i1, a) = loc(y[0], g.n[0]);
    if g.dim == 1 {
        return Ok(values[i0] * (1.0 - a) + values[i1] * a);
    }
    let (j0, j1, b) = loc(y[1], g.n[1]);
    let v = |i, j| values[g.index(i, j)];
    Ok((1.0 - b) * ((1.0 - a) * v(i0, j0) + a * v(i1, j0)) + b * ((1.0 - a) * v(i0, j1) + a * v(i1, j1)))
}

/// Grid, coefficients and parameters of one discrete cell problem.
pub struct CellProblem<'a> {
    pub model: &'a HamiltonianModel,
    pub grid: Grid,
    pub coef: Vec<f64>,
    pub p: Vec2,
    pub delta: f64,
    pub scheme: Scheme,
    pub boundary: Boundary,
    /// Numerical viscosity of the Lax-Friedrichs scheme.
    pub viscosity: f64,
}

impl<'a> CellProblem<'a> {
    #[inline]
    fn neighbours(&self, k: usize, v: &[f64]) -> [(f64, f64); 2] {
        let g = &self.grid;
        let (i, j) = g.coords(k);
        let nx = g.n[0];
        let mut out = [(0.0, 0.0); 2];
        let periodic = self.boundary == Boundary::Periodic;
        let left = if i > 0 { k - 1 } else if periodic { k + nx - 1 } else { k };
        let right = if i + 1 < nx { k + 1 } else if periodic { k + 1 - nx } else { k };
        out[0] = (v[left], v[right]);
        if g.dim == 2 {
            let ny = g.n[1];
            let down = if j > 0 { k - nx } else if periodic { k + nx * (ny - 1) } else { k };
            let up = if j + 1 < ny { k + nx } else if periodic { k - nx * (ny - 1) } else { k };
            out[1] = (v[down], v[up]);
        }
        out
    }

    /// Local residual `delta v_k + H_num` with the current neighbours.
    fn local_residual(&self, k: usize, v: &[f64]) -> f64 {
        let nb = self.neighbours(k, v);
        let h = self.grid.h;
        let c = self.coef[k];
        let vk = v[k];
        match self.scheme {
            Scheme::Upwind => {
                let mut s = 0.0;
                for ax in 0..self.grid.dim {
                    let (wm, wp) = nb[ax];
                    let a = ((self.p[ax] + (vk - wm) / h).max(0.0)).max(-(self.p[ax] + (wp - vk) / h));
                    s += a * a;
                }
                self.delta * vk + self.model.radial(s.sqrt(), c)
            }
            Scheme::LaxFriedrichs => {
                let mut pc = [0.0; 2];
                let mut lap = 0.0;
                for ax in 0..self.grid.dim {
                    let (wm, wp) = nb[ax];
                    pc[ax] = self.p[ax] + (wp - wm) / (2.0 * h);
                    lap += wp + wm - 2.0 * vk;
                }
                self.delta * vk + self.model.h(pc, c) - self.viscosity * lap / (2.0 * h)
            }
        }
    }

    /// Solves the local equation at node `k` for `v_k`.
    fn local_solve(&self, k: usize, v: &[f64]) -> f64 {
        let nb = self.neighbours(k, v);
        let h = self.grid.h;
        let c = self.coef[k];
        let d = self.delta;
        let dim = self.grid.dim;
        match self.scheme {
            Scheme::LaxFriedrichs => {
                let mut pc = [0.0; 2];
                let mut sum = 0.0;
                for ax in 0..dim {
                    let (wm, wp) = nb[ax];
                    pc[ax] = self.p[ax] + (wp - wm) / (2.0 * h);
                    sum += wp + wm;
                }
                let s = self.viscosity / (2.0 * h);
                (s * sum - self.model.h(pc, c)) / (d + 2.0 * dim as f64 * s)
            }
            Scheme::Upwind => {
                // A_k(v) = ((v - t_k) / h)^+ with kinks t_k.
                let mut t = [f64::INFINITY; 2];
                for ax in 0..dim {
                    let (wm, wp) = nb[ax];
                    t[ax] = (wm - h * self.p[ax]).min(wp + h * self.p[ax]);
                }
                if t[1] < t[0] {
                    t.swap(0, 1);
                }
                match self.model.profile {
                    Profile::Quadratic => solve_quadratic_local(d, c, h, &t[..dim]),
                    Profile::Linear => solve_linear_local(d, c, h, &t[..dim]),
                }
            }
        }
    }

    fn updatable(&self, k: usize) -> bool {
        self.boundary == Boundary::Periodic || !self.grid.on_boundary(k)
    }

    /// Gauss-Seidel sweeps until the residual drops below `tol_abs`.
    pub fn solve(&self, initial: Vec<f64>, tol_abs: f64, max_sweeps: usize) -> Result<(Vec<f64>, f64, usize)> {
        let g = self.grid;
        let mut v = initial;
        let (nx, ny) = (g.n[0], g.n[1]);
        let orders: &[(bool, bool)] = if g.dim == 1 {
            &[(false, false), (true, false)]
        } else {
            &[(false, false), (true, false), (true, true), (false, true)]
        };
        let mut sweeps = 0;
        let mut residual = f64::INFINITY;
        while sweeps < max_sweeps {
            let mut change: f64 = 0.0;
            for &(rev_i, rev_j) in orders {
                for jj in 0..ny {
                    let j = if rev_j { ny - 1 - jj } else { jj };
                    for ii in 0..nx {
                        let i = if rev_i { nx - 1 - ii } else { ii };
                        let k = j * nx + i;
                        if !self.updatable(k) {
                            continue;
                        }
                        let new = self.local_solve(k, &v);
                        change = change.max((new - v[k]).abs());
                        v[k] = new;
                    }
                }
                sweeps += 1;
            }
            if change * (self.delta + 1.0 / g.h) <= tol_abs || change == 0.0 {
                residual = self.residual(&v);
                if residual <= tol_abs {
                    return Ok((v, residual, sweeps));
                }
            }
        }
        if residual.is_infinite() {
            residual = self.residual(&v);
        }
        Err(Error::NonConvergence { iterations: sweeps, residual })
    }

    pub fn residual(&self, v: &[f64]) -> f64 {
        (0..self.grid.len())
            .filter(|&k| self.updatable(k))
            .map(|k| self.local_residual(k, v).abs())
            .fold(0.0, f64::max)
    }
}

/// Root of `delta v + sum_k ((v - t_k)^+)^2 / (2 h^2) - c = 0`, kinks sorted.
fn solve_quadratic_local(d: f64, c: f64, h: f64, t: &[f64]) -> f64 {
    let v0 = c / d;
    if v0 <= t[0] {
        return v0;
    }
    // One active axis: u = v - t0 solves u^2 / (2h^2) + d u + (d t0 - c) = 0.
    let a = 1.0 / (2.0 * h * h);
    let cc = d * t[0] - c;
    let u = -2.0 * cc / (d + (d * d - 4.0 * a * cc).sqrt());
    let v1 = t[0] + u;
    if t.len() == 1 || v1 <= t[1] {
        return v1;
    }
    // Two active axes, e = t1 - t0: u^2 / h^2 + (d - e / h^2) u + d t0 + e^2 / (2h^2) - c = 0.
    let e = t[1] - t[0];
    let a = 1.0 / (h * h);
    let b = d - e / (h * h);
    let cc = d * t[0] + e * e / (2.0 * h * h) - c;
    let disc = (b * b - 4.0 * a * cc).max(0.0).sqrt();
    let u = if b >= 0.0 { -2.0 * cc / (b + disc) } else { (-b + disc) / (2.0 * a) };
    t[0] + u
}

/// Root of `delta v + c |A(v)| = 0` with `A_k = ((v - t_k) / h)^+`.
fn solve_linear_local(d: f64, c: f64, h: f64, t: &[f64]) -> f64 {
    if 0.0 <= t[0] {
        return 0.0;
    }
    let s = c / h;
    let v1 = s * t[0] / (d + s);
    if t.len() == 1 || v1 <= t[1] {
        return v1;
    }
    // d v + s sqrt((v - t0)^2 + (v - t1)^2) = 0 with t1 <= v <= 0.
    let a = 2.0 * s * s - d * d;
    let b = -2.0 * s * s * (t[0] + t[1]);
    let cc = s * s * (t[0] * t[0] + t[1] * t[1]);
    let disc = (b * b - 4.0 * a * cc).max(0.0).sqrt();
    let r1 = (-b + disc) / (2.0 * a);
    let r2 = (-b - disc) / (2.0 * a);
    let ok = |r: f64| r >= t[1] - 1e-12 * (1.0 + t[1].abs()) && r <= 1e-12;
    match (ok(r1), ok(r2)) {
        (true, true) => r1.min(r2),
        (true, false) => r1,
        (false, true) => r2,
        (false, false) => t[1],
    }
}

/// Numerical viscosity covering `|dH/dp_k|` over `|P| <= |p| + K_p`.
pub fn lf_viscosity(model: &HamiltonianModel, cmax: f64, p: Vec2, kp: f64) -> f64 {
    match model.profile {
        Profile::Quadratic => norm(p) + kp,
        Profile::Linear => cmax,
    }
}

/// Grid used by [`solve_cell`] for this realization, slope and discount.
pub fn cell_grid(field: &RandomField, p: Vec2, delta: f64, opts: &CellOptions) -> Result<Grid> {
    let dim = field.model.dimension;
    let scale = field.model.oscillation_scale();
    if opts.h > 0.5 * scale {
        return Err(Error::UnderResolved { h: opts.h, required: 0.5 * scale });
    }
    match opts.boundary {
        Boundary::Periodic => {
            let n = (1.0 / opts.h).round() as usize;
            if ((n as f64) * opts.h - 1.0).abs() > 1e-9 {
                return Err(invalid("h", "periodic cells need h = 1/n"));
            }
            Grid::new(dim, [0.0, 0.0], [n, n], 1.0 / n as f64)
        }
        Boundary::Barrier => {
            let kp = compute_kp(field, p);
            let hw = opts.half_width.unwrap_or_else(|| {
                let base = default_half_width(kp, delta);
                match opts.influence_tol {
                    Some(tol) => {
                        let (cmin, cmax) = field.coefficient_bounds();
                        base.max(influence_half_width(&field.model, cmin, cmax, p, delta, tol))
                    }
                    None => base,
                }
            });
            let m = (hw / opts.h).ceil() as usize;
            let nodes = (2 * m + 1).pow(dim as u32);
            if nodes > opts.max_nodes {
                return Err(Error::GridBudget { required_half_width: hw, nodes, limit: opts.max_nodes });
            }
            Grid::centered(dim, hw, opts.h)
        }
    }
}

/// Solves the cell problem for slope `p` and discount `delta` on `field`.
pub fn solve_cell(field: &RandomField, p: Vec2, delta: f64, opts: &CellOptions) -> Result<CellSolution> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid("delta", format!("{delta} must be positive")));
    }
    let grid = cell_grid(field, p, delta, opts)?;
    solve_cell_on(field, p, delta, grid, opts)
}

/// Solves the cell problem on a prescribed grid.
pub fn solve_cell_on(field: &RandomField, p: Vec2, delta: f64, grid: Grid, opts: &CellOptions) -> Result<CellSolution> {
    let model = &field.model;
    let coef = field.sample_on(&grid)?;
    let cmin = coef.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = coef.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (bmin, bmax) = field.coefficient_bounds();
    let kp = kp_from_bounds(model, bmin, bmax, p);
    let r = norm(p);
    let (h_inf, h_sup) = {
        let a = model.radial(r, cmin);
        let b = model.radial(r, cmax);
        (a.min(b), a.max(b))
    };
    let barrier = -h_inf / delta;
    let problem = CellProblem {
        model,
        grid,
        coef,
        p,
        delta,
        scheme: opts.scheme,
        boundary: opts.boundary,
        viscosity: lf_viscosity(model, bmax, p, kp),
    };
    let tol_abs = opts.tol * (1.0 + h_inf.abs().max(h_sup.abs()));
    let (values, residual, sweeps) = problem.solve(vec![barrier; grid.len()], tol_abs, opts.max_sweeps)?;
    let interior = match opts.boundary {
        Boundary::Periodic => grid.window(),
        Boundary::Barrier => {
            let w = grid.window();
            let c = [0.5 * (w.lo[0] + w.hi[0]), 0.5 * (w.lo[1] + w.hi[1])];
            Window::centered(grid.dim, c, 0.25 * (w.hi[0] - w.lo[0]))
        }
    };
    Ok(CellSolution {
        grid,
        values,
        p,
        delta,
        residual,
        sweeps,
        barrier,
        kp,
        h_inf,
        h_sup,
        interior,
        boundary: opts.boundary,
    })
}

/// `max |delta v^delta - eta v^eta|` over the interior, both solved on the
/// grid chosen for the smaller discount.
pub fn delta_consistency(field: &RandomField, p: Vec2, delta: f64, eta: f64, opts: &CellOptions) -> Result<f64> {
    if !(delta > 0.0 && eta > 0.0) {
        return Err(invalid("delta", "discounts must be positive"));
    }
    let grid = cell_grid(field, p, delta.min(eta), opts)?;
    let a = solve_cell_on(field, p, delta, grid, opts)?;
    let b = solve_cell_on(field, p, eta, grid, opts)?;
    let mask = a.interior_mask();
    Ok((0..grid.len())
        .filter(|&k| mask[k])
        .map(|k| (delta * a.values[k] - eta * b.values[k]).abs())
        .fold(0.0, f64::max))
}

/// Largest change of `delta v` on the interior of the half-width `hw` window
/// when the window is doubled, relative to `max |delta v|` there.
pub fn window_drift(field: &RandomField, p: Vec2, delta: f64, hw: f64, opts: &CellOptions) -> Result<f64> {
    let dim = field.model.dimension;
    let g1 = Grid::centered(dim, hw, opts.h)?;
    let g2 = Grid::centered(dim, 2.0 * hw, opts.h)?;
    let a = solve_cell_on(field, p, delta, g1, opts)?;
    let b = solve_cell_on(field, p, delta, g2, opts)?;
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..g1.len() {
        let y = g1.point(k);
        if !a.interior.contains(y) {
            continue;
        }
        let k2 = g2.nearest(y)?;
        diff = diff.max(delta * (a.values[k] - b.values[k2]).abs());
        scale = scale.max((delta * b.values[k2]).abs());
    }
    Ok(diff / scale.max(1e-3))
}
