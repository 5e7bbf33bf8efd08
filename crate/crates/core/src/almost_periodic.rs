//! Moduli of almost periodicity and explicit rates for deterministic media.
//!
//! `rho_K(R) = sup_y inf_{|z| <= R} sup_{|p| <= K, x} |H(p, x + y) - H(p, x + z)|`
//! measures how well translates of `H` by `y` are matched by translates of
//! size at most `R`, and `eta_K(delta) = 4 inf{s > 0 : rho_K(s / (K delta)) <= s}`
//! turns it into a modulus for the cell problem.
//!
//! Suprema and infima over continua are replaced by probes on a lattice of
//! spacing `h`: translations `y` and points `x` are quasi-random lattice
//! nodes, `z` runs over every lattice node of the ball. When `1 / h` is an
//! integer, integer translates are represented exactly, so 1-periodic media
//! give `rho = 0` up to round-off once the ball contains the fundamental cell.

use std::time::Instant;

use crate::cell::{lipschitz_level, solve_cell, Boundary, CellOptions};
use crate::environment::{sample_field, HamiltonianModel, Medium, Profile, RandomField};
use crate::error::{invalid, Error, Result};
use crate::grid::Window;
use crate::hj_time::{sup_error, HbarTable, InitialData, TimeOptions};
use crate::stats::{envelope_check, rate_fit, EnvelopeCheck, Anchor, RateFit};

#[derive(Debug, Clone, PartialEq)]
pub struct RhoOptions {
    /// Lattice spacing of all probes.
    pub h: f64,
    /// Translations `y` are drawn from `[-y_range, y_range]^d`.
    pub y_range: f64,
    pub n_y: usize,
    /// Points `x` are drawn from `[-x_range, x_range]^d`.
    pub x_range: f64,
    pub n_x: usize,
}

impl Default for RhoOptions {
    fn default() -> RhoOptions {
        RhoOptions { h: 1.0 / 32.0, y_range: 200.0, n_y: 128, x_range: 20.0, n_x: 256 }
    }
}

/// Tabulated `rho_K` on a radius grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTable {
    pub k: f64,
    pub radii: Vec<f64>,
    /// After running-minimum enforcement.
    pub values: Vec<f64>,
    /// Direct probe values.
    pub raw: Vec<f64>,
    pub n_y: usize,
    pub n_z: usize,
    pub n_x: usize,
    pub h: f64,
}

impl RhoTable {
    /// Piecewise-linear interpolation; `None` beyond the last radius.
    pub fn at(&self, r: f64) -> Option<f64> {
        let n = self.radii.len();
        if r > self.radii[n - 1] {
            return None;
        }
        if n == 1 || r <= 0.0 {
            return Some(self.values[0]);
        }
        let j = self.radii.partition_point(|&x| x < r).clamp(1, n - 1);
        let w = (r - self.radii[j - 1]) / (self.radii[j] - self.radii[j - 1]);
        Some(self.values[j - 1] + w * (self.values[j] - self.values[j - 1]))
    }
}

fn van_der_corput(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Quasi-random lattice offsets in `[-m, m]^d` (in units of the spacing).
fn lattice_probes(dim: usize, m: i64, n: usize, salt: u64) -> Vec<[i64; 2]> {
    (0..n as u64)
        .map(|i| {
            let k = i + 1 + salt;
            let s = |u: f64| ((2.0 * u - 1.0) * m as f64).round() as i64;
            let a = s(van_der_corput(k, 2));
            let b = if dim == 2 { s(van_der_corput(k, 3)) } else { 0 };
            [a, b]
        })
        .collect()
}

/// `sup_{|p| <= K} |H(p, .) - H(p, .)|` per unit coefficient difference.
fn p_factor(model: &HamiltonianModel, k: f64) -> f64 {
    match model.profile {
        Profile::Quadratic => 1.0,
        Profile::Linear => k,
    }
}

fn deterministic_field(model: &HamiltonianModel, half_width: f64) -> Result<RandomField> {
    if model.kind.is_random() {
        return Err(Error::Precondition(format!("model `{}` is random; a deterministic Hamiltonian is required", model.kind.name())));
    }
    sample_field(model, Window::centered(model.dimension, [0.0, 0.0], half_width), 0)
}

/// Probes `rho_K` on `radii` (sorted and prefixed with 0 if needed).
pub fn compute_rho(model: &HamiltonianModel, k: f64, radii: &[f64], opts: &RhoOptions) -> Result<RhoTable> {
    if !(k > 0.0) {
        return Err(invalid("K", "must be positive"));
    }
    if !(opts.h > 0.0) || opts.n_y == 0 || opts.n_x == 0 || !(opts.y_range >= 0.0) || !(opts.x_range >= 0.0) {
        return Err(invalid("rho_options", "spacing, ranges and probe counts must be positive"));
    }
    if radii.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(invalid("R_grid", "radii must be nonnegative"));
    }
    let mut grid: Vec<f64> = radii.to_vec();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let dim = model.dimension;
    let h = opts.h;
    let my = (opts.y_range / h).round() as i64;
    let mx = (opts.x_range / h).round() as i64;
    let mz = (grid[grid.len() - 1] / h + 1e-9).floor() as i64;
    let span = my.max(mz) + mx + 1;
    let field = deterministic_field(model, (span + 2) as f64 * h)?;
    let side = (2 * span + 1) as usize;
    let rows = if dim == 2 { side } else { 1 };
    let mut coef = Vec::with_capacity(side * rows);
    for j in 0..rows as i64 {
        for i in 0..side as i64 {
            let y = if dim == 2 { (j - span) as f64 * h } else { 0.0 };
            coef.push(field.coefficient_unchecked([(i - span) as f64 * h, y]));
        }
    }
    let at = |v: [i64; 2]| coef[((v[1] + if dim == 2 { span } else { 0 }) as usize) * side + (v[0] + span) as usize];
    let ys = lattice_probes(dim, my, opts.n_y, 0);
    let xs = lattice_probes(dim, mx, opts.n_x, 7919);
    let mut zs: Vec<([i64; 2], f64)> = Vec::new();
    let jz = if dim == 2 { mz } else { 0 };
    for j in -jz..=jz {
        for i in -mz..=mz {
            let r = (i as f64).hypot(j as f64) * h;
            if r <= grid[grid.len() - 1] + 1e-12 {
                zs.push(([i, j], r));
            }
        }
    }
    zs.sort_by(|a, b| a.1.total_cmp(&b.1));
    let factor = p_factor(model, k);
    let mut raw = vec![0.0f64; grid.len()];
    for y in &ys {
        let cy: Vec<f64> = xs.iter().map(|x| at([x[0] + y[0], x[1] + y[1]])).collect();
        // running infimum over z sorted by radius
        let mut best = f64::INFINITY;
        let mut gi = 0;
        for (z, r) in &zs {
            while gi < grid.len() && grid[gi] < *r - 1e-12 {
                raw[gi] = raw[gi].max(best);
                gi += 1;
            }
            if best > 0.0 {
                let mut sup: f64 = 0.0;
                for (x, c) in xs.iter().zip(&cy) {
                    sup = sup.max((c - at([x[0] + z[0], x[1] + z[1]])).abs());
                    if sup >= best {
                        break;
                    }
                }
                best = best.min(sup);
            }
        }
        while gi < grid.len() {
            raw[gi] = raw[gi].max(best);
            gi += 1;
        }
    }
    for v in &mut raw {
        *v *= factor;
    }
    let mut values = raw.clone();
    for i in 1..values.len() {
        values[i] = values[i].min(values[i - 1]);
    }
    Ok(RhoTable { k, radii: grid, values, raw, n_y: ys.len(), n_z: zs.len(), n_x: xs.len(), h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaEntry {
    pub delta: f64,
    pub eta: f64,
    /// The crossing lies beyond the radius table; `eta` is then the upper
    /// bound `4 max(rho(R_max), K delta R_max)`.
    pub table_limited: bool,
}

/// `eta_K(delta)` per `delta` by bisection on the interpolated table.
pub fn compute_eta(rho: &RhoTable, deltas: &[f64]) -> Result<Vec<EtaEntry>> {
    if rho.values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition("rho table must be nonincreasing".into()));
    }
    if deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
        return Err(invalid("delta_grid", "entries must lie in (0, 1)"));
    }
    let k = rho.k;
    let r_max = *rho.radii.last().unwrap();
    Ok(deltas
        .iter()
        .map(|&delta| {
            let scale = k * delta;
            let rho0 = rho.values[0];
            if rho0 <= 0.0 {
                return EtaEntry { delta, eta: 0.0, table_limited: false };
            }
            // s >= rho(0) always qualifies; the crossing is inside the table
            // iff rho(R_max) <= K delta R_max
            let s_end = scale * r_max;
            let rho_end = rho.values[rho.values.len() - 1];
            if rho_end > s_end {
                return EtaEntry { delta, eta: 4.0 * rho_end.max(s_end), table_limited: true };
            }
            let ok = |s: f64| rho.at(s / scale).is_some_and(|v| v <= s);
            let (mut lo, mut hi) = (0.0, s_end.min(rho0));
            if !ok(hi) {
                hi = s_end;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-14 * hi.max(1e-300) {
                    break;
                }
            }
            EtaEntry { delta, eta: 4.0 * hi, table_limited: false }
        })
        .collect())
}

/// `rho_K`, `eta_K` and `L(K)` of a deterministic model.
#[derive(Debug, Clone, PartialEq)]
pub struct APModulus {
    pub k: f64,
    pub rho: RhoTable,
    pub eta: Vec<EtaEntry>,
    pub l: f64,
}

pub fn ap_modulus(model: &HamiltonianModel, k: f64, radii: &[f64], deltas: &[f64], opts: &RhoOptions) -> Result<APModulus> {
    let rho = compute_rho(model, k, radii, opts)?;
    let eta = compute_eta(&rho, deltas)?;
    let (cmin, cmax) = coefficient_range(model)?;
    Ok(APModulus { k, rho, eta, l: lipschitz_level(model, cmin, cmax, k).max(k) })
}

fn coefficient_range(model: &HamiltonianModel) -> Result<(f64, f64)> {
    Ok(deterministic_field(model, 1.0)?.coefficient_bounds())
}

/// `0, 0.05, ..., 1` refined near the periodic threshold, then geometric up to 32.
pub fn default_radii() -> Vec<f64> {
    let mut r: Vec<f64> = (0..=20).map(|k| 0.05 * k as f64).collect();
    let mut x = 1.25;
    while x <= 32.0 {
        r.push(x);
        x *= 1.25;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApOptions {
    pub rho: RhoOptions,
    pub radii: Vec<f64>,
    /// Discounts of the oscillation check.
    pub deltas: Vec<f64>,
    /// Slopes `p = (s, 0)` of the oscillation check.
    pub slopes: Vec<f64>,
    pub cell: CellOptions,
    pub osc_tol: f64,
    pub time: TimeOptions,
    /// Sampling of the coefficient for the one-dimensional table.
    pub hbar_spacing: f64,
    pub hbar_length: f64,
}

impl Default for ApOptions {
    fn default() -> ApOptions {
        ApOptions {
            rho: RhoOptions::default(),
            radii: default_radii(),
            deltas: vec![0.2, 0.1, 0.05],
            slopes: vec![0.0, 0.5, 1.0, 2.0],
            cell: CellOptions { h: 1.0 / 32.0, ..CellOptions::default() },
            osc_tol: 1e-6,
            time: TimeOptions::default(),
            hbar_spacing: 1.0 / 256.0,
            hbar_length: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscCheck {
    pub slope: f64,
    pub delta: f64,
    pub osc: f64,
    /// `eta_L(delta)` with `L = L(|p|)`.
    pub eta: f64,
    pub l: f64,
    pub table_limited: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApRecord {
    pub epsilon: f64,
    pub sup_error: f64,
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub modulus: APModulus,
    pub osc_checks: Vec<OscCheck>,
    pub osc_holds: bool,
    pub records: Vec<ApRecord>,
    /// `T (eps^{1/3} + eta_L(eps^{1/3}))` per rung.
    pub envelope_values: Vec<f64>,
    pub envelope: EnvelopeCheck,
    /// `E(eps) <= C eps^{1/3}`, the periodic form.
    pub cube_root_envelope: EnvelopeCheck,
    /// Fit of `E(eps)`; `None` when an error vanishes.
    pub fit: Option<RateFit>,
}

fn is_periodic(model: &HamiltonianModel) -> bool {
    matches!(model.medium, Medium::Periodic { .. } | Medium::Constant(_))
}

/// Oscillation of `delta v^delta(.; p)` against `eta_L(delta)`, and the
/// homogenization error against `C T (eps^{1/3} + eta_L(eps^{1/3}))`.
pub fn ap_rate_check(model: &HamiltonianModel, u0: &InitialData, eps_ladder: &[f64], t_end: f64, opts: &ApOptions) -> Result<ApReport> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(invalid("eps_ladder", "entries must lie in (0, 1)"));
    }
    let k = u0.lipschitz();
    let (cmin, cmax) = coefficient_range(model)?;
    let l_u = lipschitz_level(model, cmin, cmax, k).max(k);
    let env_deltas: Vec<f64> = eps_ladder.iter().map(|e| e.cbrt()).collect();
    let modulus = ap_modulus(model, l_u, &opts.radii, &env_deltas, &opts.rho)?;

    let mut osc_checks = Vec::new();
    let cell_opts = CellOptions {
        boundary: if is_periodic(model) { Boundary::Periodic } else { Boundary::Barrier },
        ..opts.cell.clone()
    };
    let field = deterministic_field(model, 1.0)?;
    for &s in &opts.slopes {
        let l = lipschitz_level(model, cmin, cmax, s.abs()).max(s.abs()).max(1e-12);
        let rho = compute_rho(model, l, &opts.radii, &opts.rho)?;
        let etas = compute_eta(&rho, &opts.deltas)?;
        for e in etas {
            let hw = match cell_opts.boundary {
                Boundary::Periodic => 1.0,
                Boundary::Barrier => {
                    crate::cell::default_half_width(crate::cell::kp_from_bounds(model, cmin, cmax, [s, 0.0]), e.delta) + 2.0
                }
            };
            let f = if hw > 1.0 { deterministic_field(model, hw)? } else { field.clone() };
            let sol = solve_cell(&f, [s, 0.0], e.delta, &cell_opts)?;
            let (lo, hi) = sol.delta_v_range();
            let osc = hi - lo;
            osc_checks.push(OscCheck {
                slope: s,
                delta: e.delta,
                osc,
                eta: e.eta,
                l,
                table_limited: e.table_limited,
                ok: osc <= e.eta + opts.osc_tol,
            });
        }
    }
    let osc_holds = osc_checks.iter().all(|c| c.ok);

    let table = ap_table(model, 1.5 * k + 1.0, opts)?;
    let mut records = Vec::new();
    for &eps in eps_ladder {
        let start = Instant::now();
        let f = deterministic_field(model, (opts.time.region_radius.unwrap_or(t_end) + 2.0 * l_u.max(cmax) * t_end + 2.0) / eps)?;
        let err = sup_error(&f, eps, &table, u0, t_end, &opts.time)?;
        records.push(ApRecord { epsilon: eps, sup_error: err, runtime: start.elapsed().as_secs_f64() });
    }
    let envelope_values: Vec<f64> = eps_ladder
        .iter()
        .zip(&modulus.eta)
        .map(|(e, eta)| t_end * (e.cbrt() + eta.eta))
        .collect();
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.epsilon, r.sup_error)).collect();
    let env_of = |e: f64| {
        let i = eps_ladder.iter().position(|&x| x == e).unwrap_or(0);
        envelope_values[i]
    };
    let allow = vec![2.0 * opts.osc_tol; points.len()];
    let envelope = envelope_check(&points, "T (eps^{1/3} + eta_L(eps^{1/3}))", &env_of, Anchor::Largest, &allow);
    let cube_root_envelope = envelope_check(&points, "eps^{1/3}", &|e: f64| e.cbrt(), Anchor::Largest, &allow);
    let fit = if points.len() >= 3 && points.iter().all(|p| p.1 > 0.0) { Some(rate_fit(&points, None)?) } else { None };
    Ok(ApReport { modulus, osc_checks, osc_holds, records, envelope_values, envelope, cube_root_envelope, fit })
}

/// Effective Hamiltonian of a one-dimensional deterministic model from its
/// coefficient over one period (periodic) or a long stretch.
fn ap_table(model: &HamiltonianModel, r_max: f64, opts: &ApOptions) -> Result<HbarTable> {
    if let Medium::Constant(_) = model.medium {
        return HbarTable::exact(model);
    }
    if model.dimension != 1 {
        return Err(Error::Precondition(
            "the homogenized solve of a position-dependent deterministic model is available in one dimension".into(),
        ));
    }
    let length = if is_periodic(model) { 0.5 } else { opts.hbar_length };
    let field = deterministic_field(model, length + 1.0)?;
    let n = (2.0 * length / opts.hbar_spacing).round() as usize;
    let coef: Vec<f64> = (0..n).map(|i| field.coefficient_unchecked([-length + (i as f64 + 0.5) * opts.hbar_spacing, 0.0])).collect();
    HbarTable::one_dimensional(model, &coef, r_max, 401)
}

/// `L(K)` for a deterministic model.
pub fn l_of_k(model: &HamiltonianModel, k: f64) -> Result<f64> {
    let (cmin, cmax) = coefficient_range(model)?;
    Ok(lipschitz_level(model, cmin, cmax, k).max(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RhoOptions {
        RhoOptions { h: 1.0 / 16.0, y_range: 50.0, n_y: 32, x_range: 5.0, n_x: 64 }
    }

    #[test]
    fn position_independent_rho_vanishes() {
        let m = HamiltonianModel::deterministic_quadratic(1).unwrap();
        let rho = compute_rho(&m, 2.0, &[0.5, 1.0], &fast()).unwrap();
        assert!(rho.values.iter().all(|&v| v == 0.0));
        let eta = compute_eta(&rho, &[0.1, 0.5]).unwrap();
        assert!(eta.iter().all(|e| e.eta == 0.0 && !e.table_limited));
    }

    #[test]
    fn periodic_rho_reaches_zero_at_half() {
        for dim in [1, 2] {
            let m = HamiltonianModel::periodic(dim, 1.0).unwrap();
            let half = 0.5 * (dim as f64).sqrt();
            let rho = compute_rho(&m, 1.0, &[0.1, 0.25, half, half + 0.2], &fast()).unwrap();
            assert!(rho.at(0.1).unwrap() > 0.0);
            assert!(rho.at(half).unwrap() < 1e-12, "dim {dim}");
        }
    }

    #[test]
    fn periodic_eta_is_linear_in_delta() {
        let m = HamiltonianModel::periodic(1, 1.0).unwrap();
        let radii: Vec<f64> = (0..=20).map(|k| 0.05 * k as f64).collect();
        let rho = compute_rho(&m, 1.0, &radii, &fast()).unwrap();
        let eta = compute_eta(&rho, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        for e in &eta {
            // eta <= 4 K delta R_0 with R_0 = 1/2
            assert!(e.eta <= 2.0 * e.delta + 1e-12, "{e:?}");
        }
        for w in eta.windows(2) {
            let ratio = w[0].eta / w[1].eta;
            assert!((1.8..=2.2).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn quasi_periodic_rho_decreases() {
        let m = HamiltonianModel::quasi_periodic(1, 1.0).unwrap();
        let radii = [0.0, 0.5, 1.0, 2.0, 4.0];
        let rho = compute_rho(&m, 1.0, &radii, &fast()).unwrap();
        assert!(rho.values.iter().all(|&v| v > 0.0));
        assert!(rho.values.windows(2).all(|w| w[1] < w[0]), "{:?}", rho.values);
        let eta = compute_eta(&rho, &[0.05, 0.1, 0.2]).unwrap();
        assert!(eta.windows(2).all(|w| w[1].eta >= w[0].eta));
    }

    #[test]
    fn random_model_rejected() {
        let m = HamiltonianModel::h1(1, Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 }, None).unwrap();
        assert!(matches!(compute_rho(&m, 1.0, &[1.0], &fast()), Err(Error::Precondition(_))));
    }

    #[test]
    fn position_independent_rate_is_zero() {
        let m = HamiltonianModel::deterministic_quadratic(1).unwrap();
        let opts = ApOptions { rho: fast(), radii: vec![0.5, 1.0], ..ApOptions::default() };
        let rep = ap_rate_check(&m, &InitialData::Quad { k: 1.0 }, &[0.4, 0.2], 0.5, &opts).unwrap();
        assert!(rep.osc_checks.iter().all(|c| c.osc.abs() < 1e-9 && c.ok));
        assert!(rep.records.iter().all(|r| r.sup_error == 0.0));
    }
}
