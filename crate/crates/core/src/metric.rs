//! Metric problem `H(Dm, y) = mu` with `m = 0` on a source set.
//!
//! For the shipped Hamiltonians the problem reduces to the eikonal equation
//! `|Dm| = f_mu(y)`, solved here by first-order fast marching. A Dijkstra
//! solver on 8- or 16-neighbour stencils serves as an independent oracle.
//! Values are computed on a bounded window with state constraints, so they
//! are the window-restricted metric; [`boundary_minimum`] certifies where
//! they coincide with the whole-space metric.

use crate::environment::RandomField;
use crate::error::{invalid, Error, Result};
use crate::grid::{dist, Grid, Vec2};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Point(Vec2),
    Points(Vec<Vec2>),
    Ball { center: Vec2, radius: f64 },
}

impl Source {
    /// Grid nodes carrying the boundary condition; off-grid points are
    /// snapped to their nearest node.
    pub fn nodes(&self, grid: &Grid) -> Result<Vec<usize>> {
        let mut nodes = match self {
            Source::Point(p) => vec![grid.nearest(*p).map_err(|_| Error::EmptySource)?],
            Source::Points(ps) => ps.iter().filter_map(|p| grid.nearest(*p).ok()).collect(),
            Source::Ball { center, radius } => (0..grid.len())
                .filter(|&k| dist(grid.point(k), *center) <= *radius)
                .collect(),
        };
        nodes.sort_unstable();
        nodes.dedup();
        if nodes.is_empty() {
            return Err(Error::EmptySource);
        }
        Ok(nodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// First-order fast marching for `|Dm| = f` with `m = 0` on `sources`.
///
/// Each node is accepted once, in increasing order of value, and its value
/// depends only on previously accepted neighbours.
pub fn fast_march(grid: &Grid, speeds: &[f64], sources: &[usize]) -> Vec<f64> {
    let seeds: Vec<(usize, f64)> = sources.iter().map(|&s| (s, 0.0)).collect();
    fast_march_seeded(grid, speeds, &seeds)
}

/// Fast marching started from tentative values `seeds`; each seed value is an
/// upper bound that the march may lower.
pub fn fast_march_seeded(grid: &Grid, speeds: &[f64], seeds: &[(usize, f64)]) -> Vec<f64> {
    let n = grid.len();
    assert_eq!(speeds.len(), n);
    let mut value = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(s, v) in seeds {
        if v < value[s] {
            value[s] = v;
            heap.push(Reverse(Key(v, s)));
        }
    }
    let h = grid.h;
    let nx = grid.n[0];
    let mut nbrs = Vec::with_capacity(4);
    while let Some(Reverse(Key(v, k))) = heap.pop() {
        if known[k] || v > value[k] {
            continue;
        }
        known[k] = true;
        grid.neighbors(k, &mut nbrs);
        for &q in &nbrs {
            if known[q] {
                continue;
            }
            let (i, j) = grid.coords(q);
            let mut a = f64::INFINITY;
            if i > 0 && known[q - 1] {
                a = a.min(value[q - 1]);
            }
            if i + 1 < nx && known[q + 1] {
                a = a.min(value[q + 1]);
            }
            let mut b = f64::INFINITY;
            if grid.dim == 2 {
                if j > 0 && known[q - nx] {
                    b = b.min(value[q - nx]);
                }
                if j + 1 < grid.n[1] && known[q + nx] {
                    b = b.min(value[q + nx]);
                }
            }
            let fh = speeds[q] * h;
            let cand = if a.is_infinite() || b.is_infinite() || (a - b).abs() >= fh {
                a.min(b) + fh
            } else {
                let d = a - b;
                0.5 * (a + b + (2.0 * fh * fh - d * d).sqrt())
            };
            if cand < value[q] {
                value[q] = cand;
                heap.push(Reverse(Key(cand, q)));
            }
        }
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Eight,
    Sixteen,
}

impl Stencil {
    fn offsets(self, dim: usize) -> Vec<(i64, i64)> {
        if dim == 1 {
            return vec![(1, 0), (-1, 0)];
        }
        let mut o = vec![(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        if self == Stencil::Sixteen {
            for (a, b) in [(1, 2), (2, 1)] {
                for (sa, sb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    o.push((sa * a, sb * b));
                }
            }
        }
        o
    }

    /// Worst-case relative overestimate of Euclidean length by the stencil.
    pub fn metrication_constant(self, dim: usize) -> f64 {
        if dim == 1 {
            return 0.0;
        }
        // largest angular gap between consecutive stencil directions
        let gap: f64 = match self {
            Stencil::Eight => std::f64::consts::FRAC_PI_4,
            Stencil::Sixteen => (0.5f64).atan(),
        };
        1.0 / (0.5 * gap).cos() - 1.0
    }
}

/// Shortest paths on the stencil graph; an edge costs its length times the
/// mean of the endpoint speeds.
pub fn dijkstra(grid: &Grid, speeds: &[f64], sources: &[usize], stencil: Stencil) -> Vec<f64> {
    let n = grid.len();
    let offsets: Vec<(i64, i64, f64)> = stencil
        .offsets(grid.dim)
        .into_iter()
        .map(|(a, b)| (a, b, grid.h * ((a * a + b * b) as f64).sqrt()))
        .collect();
    let mut value = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        value[s] = 0.0;
        heap.push(Reverse(Key(0.0, s)));
    }
    while let Some(Reverse(Key(v, k))) = heap.pop() {
        if done[k] || v > value[k] {
            continue;
        }
        done[k] = true;
        let (i, j) = grid.coords(k);
        for &(di, dj, len) in &offsets {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni as usize >= grid.n[0] || nj as usize >= grid.n[1] {
                continue;
            }
            let q = grid.index(ni as usize, nj as usize);
            let cand = v + len * 0.5 * (speeds[k] + speeds[q]);
            if cand < value[q] {
                value[q] = cand;
                heap.push(Reverse(Key(cand, q)));
            }
        }
    }
    value
}

/// Radius of the ball around a point source where values are initialised by
/// straight rays, which removes most of the first-order error of the point
/// singularity. Kept below the unit range of dependence.
pub fn ray_init_radius(h: f64) -> f64 {
    (8.0 * h).min(0.5)
}

/// Straight-ray costs `|y - x| * mean f` from each source node to the nodes
/// within [`ray_init_radius`], by the trapezoid rule on interpolated speeds.
pub fn ray_seeds(grid: &Grid, speeds: &[f64], sources: &[usize]) -> Vec<(usize, f64)> {
    let rho = ray_init_radius(grid.h);
    let reach = (rho / grid.h).floor() as i64;
    let mut seeds = Vec::new();
    for &s in sources {
        seeds.push((s, 0.0));
        let x = grid.point(s);
        let (i, j) = grid.coords(s);
        let jr = if grid.dim == 2 { -reach..=reach } else { 0..=0 };
        for b in jr {
            for a in -reach..=reach {
                let (ni, nj) = (i as i64 + a, j as i64 + b);
                if (a, b) == (0, 0) || ni < 0 || nj < 0 || ni as usize >= grid.n[0] || nj as usize >= grid.n[1] {
                    continue;
                }
                let len = ((a * a + b * b) as f64).sqrt() * grid.h;
                if len > rho + 1e-12 {
                    continue;
                }
                let k = grid.index(ni as usize, nj as usize);
                let y = grid.point(k);
                let q = (2.0 * len / grid.h).ceil().max(1.0) as usize;
                let mut acc = 0.5 * (speeds[s] + speeds[k]);
                for r in 1..q {
                    let t = r as f64 / q as f64;
                    let z = [x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1])];
                    acc += grid.interpolate(speeds, z).unwrap_or(speeds[k]);
                }
                seeds.push((k, len * acc / q as f64));
            }
        }
    }
    seeds
}

/// `f_mu` at every grid node.
pub fn speeds_on(field: &RandomField, grid: &Grid, mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::DegenerateEikonal(format!("mu = {mu} must be positive")));
    }
    let coef = field.sample_on(grid)?;
    Ok(speeds_from_coefficients(&field.model, &coef, mu))
}

pub fn speeds_from_coefficients(model: &crate::environment::HamiltonianModel, coef: &[f64], mu: f64) -> Vec<f64> {
    coef.iter().map(|&c| model.speed(c, mu)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSolution {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub speeds: Vec<f64>,
    pub mu: f64,
    pub source_nodes: Vec<usize>,
    /// Whether point sources were initialised by straight rays.
    pub ray_init: bool,
    pub f_min: f64,
    pub f_max: f64,
}

impl MetricSolution {
    pub fn from_speeds(grid: Grid, speeds: Vec<f64>, mu: f64, source_nodes: Vec<usize>, ray_init: bool) -> MetricSolution {
        let values = if ray_init {
            fast_march_seeded(&grid, &speeds, &ray_seeds(&grid, &speeds, &source_nodes))
        } else {
            fast_march(&grid, &speeds, &source_nodes)
        };
        let f_min = speeds.iter().copied().fold(f64::INFINITY, f64::min);
        let f_max = speeds.iter().copied().fold(0.0, f64::max);
        MetricSolution { grid, values, speeds, mu, source_nodes, ray_init, f_min, f_max }
    }

    /// Metric from a point source at node `node` on the same speeds.
    pub fn resolve(&self, node: usize) -> MetricSolution {
        MetricSolution::from_speeds(self.grid, self.speeds.clone(), self.mu, vec![node], true)
    }

    pub fn at(&self, p: Vec2) -> Result<f64> {
        self.grid.interpolate(&self.values, p)
    }

    /// Bound on the displacement of snapped point sources, as a metric error.
    pub fn snapping_error(&self) -> f64 {
        self.f_max * self.grid.h * if self.grid.dim == 2 { std::f64::consts::FRAC_1_SQRT_2 } else { 0.5 }
    }

    /// Dijkstra values on the same speeds and sources.
    pub fn oracle(&self, stencil: Stencil) -> Vec<f64> {
        dijkstra(&self.grid, &self.speeds, &self.source_nodes, stencil)
    }
}

/// Solves the metric problem at level `mu` on `grid`.
pub fn solve_metric(field: &RandomField, mu: f64, source: &Source, grid: &Grid) -> Result<MetricSolution> {
    let speeds = speeds_on(field, grid, mu)?;
    let nodes = source.nodes(grid)?;
    let ray_init = !matches!(source, Source::Ball { .. });
    Ok(MetricSolution::from_speeds(*grid, speeds, mu, nodes, ray_init))
}

/// `{m <= t}` as a node mask.
pub fn reachable_set(sol: &MetricSolution, t: f64) -> Vec<bool> {
    sol.values.iter().map(|&v| v <= t).collect()
}

/// Smallest value on the outer boundary of the grid. Values `<= t` are
/// certified to equal the whole-space metric whenever this exceeds `t`.
pub fn boundary_minimum(sol: &MetricSolution) -> f64 {
    (0..sol.grid.len())
        .filter(|&k| sol.grid.on_boundary(k))
        .map(|k| sol.values[k])
        .fold(f64::INFINITY, f64::min)
}

/// Nodes within Euclidean distance `r` of the mask.
pub fn dilate(grid: &Grid, mask: &[bool], r: f64) -> Vec<bool> {
    let reach = (r / grid.h).floor() as i64;
    let mut out = mask.to_vec();
    let offsets: Vec<(i64, i64)> = (-reach..=reach)
        .flat_map(|a| {
            let rng = if grid.dim == 2 { -reach..=reach } else { 0..=0 };
            rng.map(move |b| (a, b))
        })
        .filter(|&(a, b)| ((a * a + b * b) as f64).sqrt() * grid.h <= r + 1e-12)
        .collect();
    for k in 0..grid.len() {
        if !mask[k] {
            continue;
        }
        let (i, j) = grid.coords(k);
        for &(a, b) in &offsets {
            let (ni, nj) = (i as i64 + a, j as i64 + b);
            if ni >= 0 && nj >= 0 && (ni as usize) < grid.n[0] && (nj as usize) < grid.n[1] {
                out[grid.index(ni as usize, nj as usize)] = true;
            }
        }
    }
    out
}

/// Largest change of `m` on `{m <= t}` when the speeds on `region` are
/// replaced by those of `alternative`. No disjointness is required.
pub fn perturbation_response(sol: &MetricSolution, t: f64, region: &[bool], alternative: &[f64]) -> f64 {
    let speeds: Vec<f64> = (0..sol.grid.len())
        .map(|k| if region[k] { alternative[k] } else { sol.speeds[k] })
        .collect();
    let other = MetricSolution::from_speeds(sol.grid, speeds, sol.mu, sol.source_nodes.clone(), sol.ray_init);
    (0..sol.grid.len())
        .filter(|&k| sol.values[k] <= t)
        .map(|k| (sol.values[k] - other.values[k]).abs())
        .fold(0.0, f64::max)
}

/// Locality of the metric: replacing the medium on `region` leaves
/// `m` unchanged on `{m <= t}`. `region` must avoid the reachable set
/// dilated by `1 + h` (the range of dependence plus one cell).
pub fn locality_check_region(sol: &MetricSolution, t: f64, region: &[bool], alternative: &[f64]) -> Result<bool> {
    let grown = dilate(&sol.grid, &reachable_set(sol, t), 1.0 + sol.grid.h);
    if region.iter().zip(&grown).any(|(a, b)| *a && *b) {
        return Err(Error::Precondition(
            "perturbation region meets the dilated reachable set".into(),
        ));
    }
    Ok(perturbation_response(sol, t, region, alternative) <= 1e-12 * (1.0 + t))
}

/// Resamples the medium with `seed_perturb` outside the dilated reachable
/// set `{m <= t}` and checks that `m` is unchanged on it.
pub fn locality_check(field: &RandomField, mu: f64, t: f64, seed_perturb: u64, sol: &MetricSolution) -> Result<bool> {
    if seed_perturb == field.seed {
        return Err(invalid("seed_perturb", "must differ from the field seed"));
    }
    let other = crate::environment::sample_field(&field.model, field.window, seed_perturb)?;
    let alt = speeds_on(&other, &sol.grid, mu)?;
    let grown = dilate(&sol.grid, &reachable_set(sol, t), 1.0 + sol.grid.h);
    let region: Vec<bool> = grown.iter().map(|g| !g).collect();
    locality_check_region(sol, t, &region, &alt)
}

/// Whether removing `shell` disconnects `a` from `b` in the 4-neighbour graph
/// used by fast marching.
pub fn separates(grid: &Grid, shell: &[usize], a: &[usize], b: usize) -> bool {
    let mut blocked = vec![false; grid.len()];
    for &s in shell {
        blocked[s] = true;
    }
    if blocked[b] || a.iter().any(|&k| blocked[k]) {
        return false;
    }
    let mut seen = vec![false; grid.len()];
    let mut queue: VecDeque<usize> = a.iter().copied().collect();
    for &k in a {
        seen[k] = true;
    }
    let mut nbrs = Vec::with_capacity(4);
    while let Some(k) = queue.pop_front() {
        if k == b {
            return false;
        }
        grid.neighbors(k, &mut nbrs);
        for &q in &nbrs {
            if !seen[q] && !blocked[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    true
}

/// Nodes within `h / sqrt 2` of the circle `|z - center| = r`.
pub fn annulus_shell(grid: &Grid, center: Vec2, r: f64) -> Vec<usize> {
    let w = grid.h * std::f64::consts::FRAC_1_SQRT_2;
    (0..grid.len())
        .filter(|&k| (dist(grid.point(k), center) - r).abs() <= w)
        .collect()
}

/// Dynamic programming residual `|m(y, x) - min_{z in shell} (m(y, z) + m(z, x))|`
/// for a shell separating the source `x` from `y`.
pub fn dpp_check(sol: &MetricSolution, shell: &[usize], y: Vec2) -> Result<f64> {
    let yk = sol.grid.nearest(y)?;
    if shell.is_empty() || !separates(&sol.grid, shell, &sol.source_nodes, yk) {
        return Err(Error::Precondition("shell does not separate the source from y".into()));
    }
    let from_y = sol.resolve(yk);
    let best = shell
        .iter()
        .map(|&z| from_y.values[z] + sol.values[z])
        .fold(f64::INFINITY, f64::min);
    Ok((sol.values[yk] - best).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_field, HamiltonianModel, Medium};
    use crate::grid::Window;

    fn constant_grid(n: usize) -> (Grid, Vec<f64>) {
        let g = Grid::centered(2, 1.0, 2.0 / (n as f64 - 1.0)).unwrap();
        (g, vec![1.0; g.len()])
    }

    #[test]
    fn axis_values_are_exact_for_constant_speed() {
        let (g, f) = constant_grid(41);
        let src = g.nearest([0.0, 0.0]).unwrap();
        let m = fast_march(&g, &f, &[src]);
        for k in 0..g.len() {
            let p = g.point(k);
            if p[1].abs() < 1e-12 {
                assert!((m[k] - p[0].abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_marching_overestimates_the_cone_slightly() {
        let (g, f) = constant_grid(101);
        let src = g.nearest([0.0, 0.0]).unwrap();
        let plain = fast_march(&g, &f, &[src]);
        let seeded = fast_march_seeded(&g, &f, &ray_seeds(&g, &f, &[src]));
        let (mut worst_plain, mut worst_seeded): (f64, f64) = (0.0, 0.0);
        for k in 0..g.len() {
            let r = crate::grid::norm(g.point(k));
            assert!(plain[k] >= r - 1e-12 && seeded[k] >= r - 1e-12);
            if r > 0.3 {
                worst_plain = worst_plain.max((plain[k] - r) / r);
                worst_seeded = worst_seeded.max((seeded[k] - r) / r);
            }
        }
        assert!(worst_plain < 0.07, "{worst_plain}");
        assert!(worst_seeded < 0.6 * worst_plain, "{worst_seeded}");
    }

    #[test]
    fn dijkstra_metrication_is_within_stencil_constant() {
        let (g, f) = constant_grid(61);
        let src = g.nearest([0.0, 0.0]).unwrap();
        for st in [Stencil::Eight, Stencil::Sixteen] {
            let d = dijkstra(&g, &f, &[src], st);
            let c = st.metrication_constant(2);
            for k in 0..g.len() {
                let r = crate::grid::norm(g.point(k));
                assert!(d[k] >= r - 1e-12 && d[k] <= r * (1.0 + c) + 1e-12);
            }
        }
        // Independent value: the 16-stencil misses directions by at most atan(1/2)/2.
        let expected = 1.0 / (0.5 * 0.5f64.atan()).cos() - 1.0;
        assert!((Stencil::Sixteen.metrication_constant(2) - expected).abs() < 1e-15);
        assert!((Stencil::Eight.metrication_constant(2) - 0.082_392_200_8).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_march_is_a_riemann_sum() {
        let g = Grid::centered(1, 1.0, 0.01).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|k| 1.0 + g.point(k)[0].powi(2)).collect();
        let src = g.nearest([0.0, 0.0]).unwrap();
        let m = fast_march(&g, &f, &[src]);
        let mut sum = 0.0;
        for k in src + 1..g.len() {
            sum += g.h * f[k];
            assert!((m[k] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_degenerate_inputs_are_errors() {
        let m = HamiltonianModel::deterministic_quadratic(2).unwrap();
        let field = sample_field(&m, Window::centered(2, [0.0, 0.0], 2.0), 0).unwrap();
        let g = Grid::centered(2, 1.0, 0.1).unwrap();
        assert!(matches!(
            solve_metric(&field, 0.0, &Source::Point([0.0, 0.0]), &g),
            Err(Error::DegenerateEikonal(_))
        ));
        assert!(matches!(
            solve_metric(&field, 1.0, &Source::Points(vec![[5.0, 5.0]]), &g),
            Err(Error::EmptySource)
        ));
    }

    #[test]
    fn locality_and_dpp_on_a_random_medium() {
        let m = HamiltonianModel::h1(2, Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 }, None).unwrap();
        let field = sample_field(&m, Window::centered(2, [0.0, 0.0], 6.5), 4).unwrap();
        let g = Grid::centered(2, 6.0, 0.1).unwrap();
        let sol = solve_metric(&field, 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
        assert!(locality_check(&field, 1.0, 3.0, 99, &sol).unwrap());
        // A perturbation inside the reachable set must be detected.
        let other = sample_field(&m, field.window, 99).unwrap();
        let alt = speeds_on(&other, &g, 1.0).unwrap();
        let inside: Vec<bool> = sol.values.iter().map(|&v| v > 0.5 && v < 2.0).collect();
        assert!(locality_check_region(&sol, 3.0, &inside, &alt).is_err());
        assert!(perturbation_response(&sol, 3.0, &inside, &alt) > 1e-3);

        let shell = annulus_shell(&g, [0.0, 0.0], 2.0);
        let res = dpp_check(&sol, &shell, [3.5, 1.0]).unwrap();
        assert!(res <= 2.0 * sol.f_max * g.h, "{res}");
        let bad = annulus_shell(&g, [0.0, 0.0], 5.0);
        assert!(dpp_check(&sol, &bad, [3.5, 1.0]).is_err());
    }
}
