//! Uniform Cartesian grids in one or two dimensions.
//!
//! One-dimensional grids store a single row (`n[1] == 1`) and ignore the
//! second coordinate of every [`Vec2`].

use crate::error::{invalid, Error, Result};

pub type Vec2 = [f64; 2];

pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

/// Axis-aligned box `[lo, hi]`; in 1D only the first coordinate is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub dim: usize,
    pub lo: Vec2,
    pub hi: Vec2,
}

impl Window {
    pub fn centered(dim: usize, center: Vec2, half_width: f64) -> Window {
        let mut lo = [center[0] - half_width, center[1] - half_width];
        let mut hi = [center[0] + half_width, center[1] + half_width];
        if dim == 1 {
            lo[1] = 0.0;
            hi[1] = 0.0;
        }
        Window { dim, lo, hi }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0..self.dim).all(|k| p[k] >= self.lo[k] - 1e-12 && p[k] <= self.hi[k] + 1e-12)
    }

    pub fn dilate(&self, r: f64) -> Window {
        let mut w = *self;
        for k in 0..self.dim {
            w.lo[k] -= r;
            w.hi[k] += r;
        }
        w
    }

    /// Distance from `p` (inside) to the boundary of the box.
    pub fn depth(&self, p: Vec2) -> f64 {
        (0..self.dim)
            .map(|k| (p[k] - self.lo[k]).min(self.hi[k] - p[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: [usize; 2],
    pub h: f64,
    pub origin: Vec2,
}

impl Grid {
    pub fn new(dim: usize, origin: Vec2, n: [usize; 2], h: f64) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dimension", format!("{dim} is not 1 or 2")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("h", format!("{h} must be positive")));
        }
        let n = if dim == 1 { [n[0], 1] } else { n };
        if n[0] < 2 || n[1] < 1 || (dim == 2 && n[1] < 2) {
            return Err(invalid("grid_n", "at least two nodes per axis"));
        }
        let origin = if dim == 1 { [origin[0], 0.0] } else { origin };
        Ok(Grid { dim, n, h, origin })
    }

    /// Grid with nodes at `i h`, `|i| <= ceil(half_width / h)`; the origin is a node.
    pub fn centered(dim: usize, half_width: f64, h: f64) -> Result<Grid> {
        if !(half_width > 0.0) {
            return Err(invalid("half_width", "must be positive"));
        }
        let m = (half_width / h - 1e-9).ceil().max(1.0) as usize;
        let o = -(m as f64) * h;
        Grid::new(dim, [o, o], [2 * m + 1, 2 * m + 1], h)
    }

    /// `cells` cells per axis covering `[lo, hi]`, nodes at the cell centres.
    pub fn cell_centered(dim: usize, lo: Vec2, hi: Vec2, cells: usize) -> Result<Grid> {
        let h = (hi[0] - lo[0]) / cells as f64;
        let n1 = if dim == 2 { ((hi[1] - lo[1]) / h).round() as usize } else { 1 };
        Grid::new(dim, [lo[0] + 0.5 * h, lo[1] + 0.5 * h], [cells, n1], h)
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Vec2 {
        let (i, j) = self.coords(idx);
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    pub fn window(&self) -> Window {
        let hi = [
            self.origin[0] + (self.n[0] - 1) as f64 * self.h,
            self.origin[1] + (self.n[1] - 1) as f64 * self.h,
        ];
        Window { dim: self.dim, lo: self.origin, hi }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.window().contains(p)
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.coords(idx);
        i == 0 || i + 1 == self.n[0] || (self.dim == 2 && (j == 0 || j + 1 == self.n[1]))
    }

    /// Nearest node to `p`, or an error if `p` is outside the grid box.
    pub fn nearest(&self, p: Vec2) -> Result<usize> {
        if !self.contains(p) {
            return Err(Error::OutOfWindow { x: p[0], y: p[1] });
        }
        let i = (((p[0] - self.origin[0]) / self.h).round() as usize).min(self.n[0] - 1);
        let j = if self.dim == 2 {
            (((p[1] - self.origin[1]) / self.h).round() as usize).min(self.n[1] - 1)
        } else {
            0
        };
        Ok(self.index(i, j))
    }

    /// Axis neighbours of `idx` (at most 2 in 1D, 4 in 2D).
    pub fn neighbors(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let (i, j) = self.coords(idx);
        if i > 0 {
            out.push(idx - 1);
        }
        if i + 1 < self.n[0] {
            out.push(idx + 1);
        }
        if self.dim == 2 {
            if j > 0 {
                out.push(idx - self.n[0]);
            }
            if j + 1 < self.n[1] {
                out.push(idx + self.n[0]);
            }
        }
    }

    /// Multilinear interpolation of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Vec2) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::OutOfWindow { x: p[0], y: p[1] });
        }
        let locate = |x: f64, o: f64, n: usize| -> (usize, f64) {
            let s = ((x - o) / self.h).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n.saturating_sub(2));
            (i, s - i as f64)
        };
        let (i, a) = locate(p[0], self.origin[0], self.n[0]);
        if self.dim == 1 {
            return Ok(values[i] * (1.0 - a) + values[i + 1] * a);
        }
        let (j, b) = locate(p[1], self.origin[1], self.n[1]);
        let v00 = values[self.index(i, j)];
        let v10 = values[self.index(i + 1, j)];
        let v01 = values[self.index(i, j + 1)];
        let v11 = values[self.index(i + 1, j + 1)];
        Ok((1.0 - b) * ((1.0 - a) * v00 + a * v10) + b * ((1.0 - a) * v01 + a * v11))
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> GridFunction {
        assert_eq!(grid.len(), values.len());
        GridFunction { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> f64) -> GridFunction {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        GridFunction { grid, values }
    }

    pub fn at(&self, p: Vec2) -> Result<f64> {
        self.grid.interpolate(&self.values, p)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest difference quotient over axis and diagonal neighbour pairs
    /// with both ends satisfying `keep`.
    pub fn lipschitz_where(&self, keep: impl Fn(usize) -> bool) -> f64 {
        let g = &self.grid;
        let mut best: f64 = 0.0;
        let offsets: &[(isize, isize, f64)] = if g.dim == 1 {
            &[(1, 0, 1.0)]
        } else {
            &[(1, 0, 1.0), (0, 1, 1.0), (1, 1, std::f64::consts::SQRT_2), (1, -1, std::f64::consts::SQRT_2)]
        };
        for idx in 0..g.len() {
            if !keep(idx) {
                continue;
            }
            let (i, j) = g.coords(idx);
            for &(di, dj, len) in offsets {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni as usize >= g.n[0] || nj as usize >= g.n[1] {
                    continue;
                }
                let nidx = g.index(ni as usize, nj as usize);
                if keep(nidx) {
                    let q = (self.values[idx] - self.values[nidx]).abs() / (len * g.h);
                    best = best.max(q);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_grid_has_origin_node() {
        let g = Grid::centered(2, 1.0, 0.25).unwrap();
        assert_eq!(g.n, [9, 9]);
        let k = g.nearest([0.0, 0.0]).unwrap();
        assert_eq!(g.point(k), [0.0, 0.0]);
    }

    #[test]
    fn cell_centered_grid_offsets_nodes() {
        let g = Grid::cell_centered(1, [-1.0, 0.0], [1.0, 0.0], 8).unwrap();
        assert_eq!(g.n, [8, 1]);
        assert!((g.point(0)[0] + 0.875).abs() < 1e-15);
        assert!((g.point(7)[0] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn bilinear_interpolation_is_exact_on_bilinear_functions() {
        let g = Grid::centered(2, 1.0, 0.1).unwrap();
        let f = GridFunction::from_fn(g, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]);
        let p = [0.237, -0.561];
        let exact = 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
        assert!((f.at(p).unwrap() - exact).abs() < 1e-12);
        assert!(f.at([2.0, 0.0]).is_err());
    }

    #[test]
    fn lipschitz_of_linear_function() {
        let g = Grid::centered(2, 1.0, 0.1).unwrap();
        let f = GridFunction::from_fn(g, |p| 3.0 * p[0] + 4.0 * p[1]);
        let l = f.lipschitz_where(|_| true);
        assert!(l <= 5.0 + 1e-9 && l > 4.9);
    }
}
