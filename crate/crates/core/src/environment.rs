//! Hamiltonian models and seeded random media.
//!
//! Every shipped Hamiltonian has the form `H(p, y) = G(|p|, c(y))` with a
//! scalar coefficient field `c`:
//!
//! * quadratic profile: `H = |p|^2 / 2 - W(y)` with a potential `W >= 0`,
//!   `inf W = 0`;
//! * linear profile: `H = a(y) |p|` with `0 < a_min <= a <= a_max`.
//!
//! A [`RandomField`] is one realization of the coefficient on a bounded
//! window. Random media are generated lattice cell by lattice cell from keyed
//! streams (see [`crate::seeds`]), so a realization is a deterministic function
//! of `(seed, y)` and is stationary under integer shifts.

use crate::error::{invalid, Error, Result};
use crate::grid::{dist, norm, Grid, Vec2, Window};
use crate::seeds::cell_rng;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    H1Potential,
    H2Speed,
    Deterministic,
    PeriodicPotential,
    QuasiPeriodicPotential,
    SlowRate,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        Ok(match s {
            "H1_potential" | "h1_potential" | "h1" => ModelKind::H1Potential,
            "H2_speed" | "h2_speed" | "h2" => ModelKind::H2Speed,
            "deterministic" => ModelKind::Deterministic,
            "periodic_potential" | "periodic" => ModelKind::PeriodicPotential,
            "quasi_periodic_potential" | "quasi_periodic" => ModelKind::QuasiPeriodicPotential,
            "slow_rate" => ModelKind::SlowRate,
            _ => return Err(invalid("kind", format!("unknown model kind `{s}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::H1Potential => "H1_potential",
            ModelKind::H2Speed => "H2_speed",
            ModelKind::Deterministic => "deterministic",
            ModelKind::PeriodicPotential => "periodic_potential",
            ModelKind::QuasiPeriodicPotential => "quasi_periodic_potential",
            ModelKind::SlowRate => "slow_rate",
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, ModelKind::H1Potential | ModelKind::H2Speed | ModelKind::SlowRate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `|p|^2 / 2 - c`
    Quadratic,
    /// `c |p|`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: Vec2,
    pub height: f64,
    pub radius: f64,
}

/// Smooth compactly supported bump `(1 - s^2)^2` on `s < 1`.
#[inline]
fn bump_shape(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s2;
        t * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Medium {
    Constant(f64),
    /// Poisson cloud of bumps with the given intensity per unit volume.
    Poisson { intensity: f64, height: f64, radius: f64 },
    /// I.i.d. `U[0, amplitude]` values on the lattice `spacing Z^d`,
    /// interpolated multilinearly.
    Lattice { spacing: f64, amplitude: f64 },
    /// `amplitude * mean_k sin^2(pi y_k)`.
    Periodic { amplitude: f64 },
    /// `amplitude * mean_k (2 + sin(2 pi y_k) + sin(2 sqrt2 pi y_k)) / 4`.
    QuasiPeriodic { amplitude: f64 },
    /// Explicit bumps on a zero background.
    Bumps(Vec<Bump>),
}

/// Decreasing map `phi` used by the slow-rate construction, tabulated on a
/// logarithmic grid in `u = 1 - v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    log_u: Vec<f64>,
    phi: Vec<f64>,
    /// `phi(0)`, the largest value.
    pub top: f64,
    /// Tail exponent target `rho_hat(sigma) = c sigma^d (rho^{-1}(sigma))^{d+2}`.
    pub rho_points: Vec<(f64, f64)>,
    pub c_norm: f64,
    pub dim: usize,
}

impl PhiTable {
    fn rho_inverse(&self, sigma: f64) -> f64 {
        let pts = &self.rho_points;
        if sigma <= 0.0 {
            return 0.0;
        }
        for w in pts.windows(2) {
            let (d0, r0) = w[0];
            let (d1, r1) = w[1];
            if sigma <= r1 {
                return d0 + (d1 - d0) * (sigma - r0) / (r1 - r0);
            }
        }
        pts.last().unwrap().0
    }

    /// Target tail `P[H(0, 0) > -sigma]`.
    pub fn rho_hat(&self, sigma: f64) -> f64 {
        let d = self.dim as f64;
        (self.c_norm * sigma.powf(d) * self.rho_inverse(sigma).powf(d + 2.0)).min(1.0)
    }

    fn build(dim: usize, rho_points: Vec<(f64, f64)>) -> Result<PhiTable> {
        if rho_points.len() < 2 || rho_points[0] != (0.0, 0.0) {
            return Err(invalid("rho", "table must start at (0, 0) and have at least two points"));
        }
        for w in rho_points.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(invalid("rho", "table must be strictly increasing"));
            }
        }
        let (d_top, s_top) = *rho_points.last().unwrap();
        let d = dim as f64;
        let c_norm = 1.0 / (s_top.powf(d) * d_top.powf(d + 2.0));
        let mut table = PhiTable {
            log_u: Vec::new(),
            phi: Vec::new(),
            top: s_top,
            rho_points,
            c_norm,
            dim,
        };
        // phi(v) = rho_hat^{-1}(1 - v), by bisection at each table node.
        let n = 4096;
        let (lo_exp, hi_exp) = (-14.0f64, 0.0f64);
        for k in 0..=n {
            let e = lo_exp + (hi_exp - lo_exp) * k as f64 / n as f64;
            let u = 10f64.powf(e);
            let (mut a, mut b) = (0.0, s_top);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if table.rho_hat(m) < u {
                    a = m;
                } else {
                    b = m;
                }
            }
            table.log_u.push(e);
            table.phi.push(0.5 * (a + b));
        }
        Ok(table)
    }

    pub fn phi(&self, v: f64) -> f64 {
        let u = (1.0 - v).clamp(0.0, 1.0);
        if u <= 0.0 {
            return 0.0;
        }
        let e = u.log10();
        let n = self.log_u.len() - 1;
        let (lo, hi) = (self.log_u[0], self.log_u[n]);
        if e <= lo {
            // rho_hat is a power law near zero; interpolate towards phi(1) = 0
            return self.phi[0] * (u / 10f64.powf(lo)).powf(1.0 / (2.0 * self.dim as f64 + 2.0));
        }
        let s = (e - lo) / (hi - lo) * n as f64;
        let k = (s.floor() as usize).min(n - 1);
        let t = s - k as f64;
        self.phi[k] * (1.0 - t) + self.phi[k + 1] * t
    }
}

/// How the raw medium value becomes the Hamiltonian coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientMap {
    /// `c = min(raw, cap)`.
    Identity { cap: Option<f64> },
    /// `c = a_min + (a_max - a_min) min(raw, 1)`.
    Speed { a_min: f64, a_max: f64 },
    /// `c = phi(raw)`.
    SlowRate(Box<PhiTable>),
}

impl CoefficientMap {
    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        match self {
            CoefficientMap::Identity { cap: None } => raw,
            CoefficientMap::Identity { cap: Some(c) } => raw.min(*c),
            CoefficientMap::Speed { a_min, a_max } => a_min + (a_max - a_min) * raw.min(1.0),
            CoefficientMap::SlowRate(t) => t.phi(raw),
        }
    }

    fn is_decreasing(&self) -> bool {
        matches!(self, CoefficientMap::SlowRate(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub kind: ModelKind,
    pub dimension: usize,
    pub profile: Profile,
    pub medium: Medium,
    pub map: CoefficientMap,
    /// Almost-sure bound on the potential (quadratic profile).
    pub v_max: f64,
    /// Almost-sure bounds on the speed (linear profile).
    pub a_min: f64,
    pub a_max: f64,
}

/// Declarative description of a model, as read from configuration files.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dimension: usize,
    /// `poisson`, `lattice` or `constant`; random kinds only.
    pub medium: String,
    pub intensity: f64,
    pub bump_height: f64,
    pub bump_radius: f64,
    pub v_max: Option<f64>,
    pub a_min: f64,
    pub a_max: f64,
    pub amplitude: f64,
    pub lattice_spacing: f64,
    /// Slow-rate modulus `rho(delta) = delta^rho_exponent` on `[0, 1]`.
    pub rho_exponent: f64,
    /// Profile of the deterministic kind: `quadratic` or `linear`.
    pub profile: String,
}

impl Default for ModelSpec {
    fn default() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::H1Potential,
            dimension: 2,
            medium: "poisson".into(),
            intensity: 1.0,
            bump_height: 1.0,
            bump_radius: 0.4,
            v_max: None,
            a_min: 1.0,
            a_max: 2.0,
            amplitude: 1.0,
            lattice_spacing: 1.0 / 3.0,
            rho_exponent: 1.0,
            profile: "quadratic".into(),
        }
    }
}

/// Largest number of unit lattice cells met by a ball of radius `r <= 1/2`.
fn cells_met(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        4.0
    }
}

fn poisson_cap(intensity: f64) -> usize {
    (intensity + 10.0 * intensity.sqrt() + 10.0).ceil() as usize
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(invalid("dimension", format!("{d} is not supported (use 1 or 2)")))
    }
}

impl HamiltonianModel {
    fn medium_raw_bounds(medium: &Medium, dim: usize) -> (f64, f64) {
        match medium {
            Medium::Constant(c) => (*c, *c),
            Medium::Poisson { intensity, height, .. } => {
                (0.0, height * poisson_cap(*intensity) as f64 * cells_met(dim))
            }
            Medium::Lattice { amplitude, .. } => (0.0, *amplitude),
            Medium::Periodic { amplitude } | Medium::QuasiPeriodic { amplitude } => (0.0, *amplitude),
            Medium::Bumps(b) => (0.0, b.iter().map(|b| b.height).sum()),
        }
    }

    fn validate_medium(medium: &Medium) -> Result<()> {
        match medium {
            Medium::Constant(c) if !c.is_finite() => Err(invalid("constant", "must be finite")),
            Medium::Poisson { intensity, height, radius } => {
                if !(*intensity > 0.0) {
                    return Err(invalid("intensity", "must be positive"));
                }
                if !(*height >= 0.0) {
                    return Err(Error::Assumption {
                        assumption: "nonnegative potential",
                        detail: format!("bump height {height} < 0"),
                    });
                }
                if !(*radius > 0.0 && *radius <= 0.5) {
                    return Err(Error::Assumption {
                        assumption: "finite range of dependence",
                        detail: format!("bump radius {radius} must lie in (0, 1/2]"),
                    });
                }
                Ok(())
            }
            Medium::Lattice { spacing, amplitude } => {
                if !(*spacing > 0.0) || (1.0 / spacing - (1.0 / spacing).round()).abs() > 1e-9 {
                    return Err(invalid("lattice_spacing", "must be 1/k for an integer k"));
                }
                if !(*amplitude > 0.0) {
                    return Err(invalid("amplitude", "must be positive"));
                }
                Ok(())
            }
            Medium::Periodic { amplitude } | Medium::QuasiPeriodic { amplitude } => {
                if *amplitude >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("amplitude", "must be nonnegative"))
                }
            }
            Medium::Bumps(b) => {
                if b.iter().all(|b| b.radius > 0.0 && b.height.is_finite()) {
                    Ok(())
                } else {
                    Err(invalid("bumps", "radii must be positive"))
                }
            }
            _ => Ok(()),
        }
    }

    /// Potential model `|p|^2/2 - W(y)`; `W` must be nonnegative with infimum 0.
    pub fn h1(dimension: usize, medium: Medium, v_cap: Option<f64>) -> Result<HamiltonianModel> {
        Self::quadratic(ModelKind::H1Potential, dimension, medium, v_cap)
    }

    fn quadratic(kind: ModelKind, dimension: usize, medium: Medium, v_cap: Option<f64>) -> Result<HamiltonianModel> {
        check_dimension(dimension)?;
        Self::validate_medium(&medium)?;
        if let Medium::Constant(c) = medium {
            if c != 0.0 {
                return Err(Error::Assumption {
                    assumption: "zero level at the bottom (esssup H(0, .) = 0)",
                    detail: format!("constant potential {c} must be 0"),
                });
            }
        }
        if let Medium::Bumps(b) = &medium {
            if b.iter().any(|b| b.height < 0.0) {
                return Err(Error::Assumption {
                    assumption: "nonnegative potential",
                    detail: "negative bump height".into(),
                });
            }
        }
        if let Some(c) = v_cap {
            if !(c > 0.0) {
                return Err(invalid("v_max", "must be positive"));
            }
        }
        let (_, hi) = Self::medium_raw_bounds(&medium, dimension);
        let v_max = v_cap.map_or(hi, |c| c.min(hi));
        Ok(HamiltonianModel {
            kind,
            dimension,
            profile: Profile::Quadratic,
            medium,
            map: CoefficientMap::Identity { cap: v_cap },
            v_max,
            a_min: 0.0,
            a_max: 0.0,
        })
    }

    /// Speed model `a(y) |p|` with `a = a_min + (a_max - a_min) min(W, 1)`.
    pub fn h2(dimension: usize, a_min: f64, a_max: f64, medium: Medium) -> Result<HamiltonianModel> {
        check_dimension(dimension)?;
        Self::validate_medium(&medium)?;
        if !(a_min > 0.0 && a_max >= a_min && a_max.is_finite()) {
            return Err(Error::Assumption {
                assumption: "speed bounded away from zero",
                detail: format!("need 0 < a_min <= a_max, got a_min = {a_min}, a_max = {a_max}"),
            });
        }
        Ok(HamiltonianModel {
            kind: ModelKind::H2Speed,
            dimension,
            profile: Profile::Linear,
            medium,
            map: CoefficientMap::Speed { a_min, a_max },
            v_max: 0.0,
            a_min,
            a_max,
        })
    }

    /// `|p|^2 / 2`, independent of position.
    pub fn deterministic_quadratic(dimension: usize) -> Result<HamiltonianModel> {
        Self::quadratic(ModelKind::Deterministic, dimension, Medium::Constant(0.0), None)
    }

    /// `a0 |p|`, independent of position.
    pub fn deterministic_linear(dimension: usize, a0: f64) -> Result<HamiltonianModel> {
        check_dimension(dimension)?;
        if !(a0 > 0.0) {
            return Err(Error::Assumption {
                assumption: "speed bounded away from zero",
                detail: format!("a0 = {a0}"),
            });
        }
        Ok(HamiltonianModel {
            kind: ModelKind::Deterministic,
            dimension,
            profile: Profile::Linear,
            medium: Medium::Constant(a0),
            map: CoefficientMap::Identity { cap: None },
            v_max: 0.0,
            a_min: a0,
            a_max: a0,
        })
    }

    pub fn periodic(dimension: usize, amplitude: f64) -> Result<HamiltonianModel> {
        Self::quadratic(ModelKind::PeriodicPotential, dimension, Medium::Periodic { amplitude }, None)
    }

    pub fn quasi_periodic(dimension: usize, amplitude: f64) -> Result<HamiltonianModel> {
        Self::quadratic(ModelKind::QuasiPeriodicPotential, dimension, Medium::QuasiPeriodic { amplitude }, None)
    }

    /// `|p|^2/2 - phi(V(y))` with `V` the uniform lattice field and `phi`
    /// chosen so that `P[H(0, 0) > -sigma] = c sigma^d (rho^{-1}(sigma))^{d+2}`.
    /// `rho_points` tabulates an increasing modulus starting at `(0, 0)`.
    pub fn slow_rate(dimension: usize, rho_points: Vec<(f64, f64)>, spacing: f64) -> Result<HamiltonianModel> {
        check_dimension(dimension)?;
        let medium = Medium::Lattice { spacing, amplitude: 1.0 };
        Self::validate_medium(&medium)?;
        let table = PhiTable::build(dimension, rho_points)?;
        let top = table.top;
        Ok(HamiltonianModel {
            kind: ModelKind::SlowRate,
            dimension,
            profile: Profile::Quadratic,
            medium,
            map: CoefficientMap::SlowRate(Box::new(table)),
            v_max: top,
            a_min: 0.0,
            a_max: 0.0,
        })
    }

    /// Tabulates `rho(delta) = delta^exponent` on `[0, 1]`.
    pub fn power_rho(exponent: f64) -> Vec<(f64, f64)> {
        let n = 512;
        (0..=n)
            .map(|k| {
                let d = k as f64 / n as f64;
                (d, d.powf(exponent))
            })
            .collect()
    }

    /// Length scale on which the coefficient varies; grids must resolve it.
    pub fn oscillation_scale(&self) -> f64 {
        match &self.medium {
            Medium::Constant(_) => f64::INFINITY,
            Medium::Poisson { radius, .. } => *radius,
            Medium::Lattice { spacing, .. } => *spacing,
            Medium::Periodic { .. } => 1.0,
            Medium::QuasiPeriodic { .. } => std::f64::consts::FRAC_1_SQRT_2,
            Medium::Bumps(b) => b.iter().map(|b| b.radius).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn phi_table(&self) -> Option<&PhiTable> {
        match &self.map {
            CoefficientMap::SlowRate(t) => Some(t),
            _ => None,
        }
    }

    /// `H` as a function of `r = |p|` and the local coefficient `c`.
    #[inline]
    pub fn radial(&self, r: f64, c: f64) -> f64 {
        match self.profile {
            Profile::Quadratic => 0.5 * r * r - c,
            Profile::Linear => c * r,
        }
    }

    /// `dG/dr`.
    #[inline]
    pub fn radial_slope(&self, r: f64, c: f64) -> f64 {
        match self.profile {
            Profile::Quadratic => r,
            Profile::Linear => c,
        }
    }

    #[inline]
    pub fn h(&self, p: Vec2, c: f64) -> f64 {
        self.radial(norm(p), c)
    }

    /// Speed `f_mu` of the isotropic eikonal reduction `|Dm| = f_mu(y)`.
    #[inline]
    pub fn speed(&self, c: f64, mu: f64) -> f64 {
        match self.profile {
            Profile::Quadratic => (2.0 * (mu + c)).sqrt(),
            Profile::Linear => mu / c,
        }
    }

    /// Largest `|p|` with `G(|p|, c) <= level`.
    pub fn radial_inverse(&self, level: f64, c: f64) -> f64 {
        match self.profile {
            Profile::Quadratic => (2.0 * (level + c)).max(0.0).sqrt(),
            Profile::Linear => (level / c).max(0.0),
        }
    }
}

/// Builds and validates a model from its declarative description.
pub fn build_model(spec: &ModelSpec) -> Result<HamiltonianModel> {
    check_dimension(spec.dimension)?;
    let random_medium = |height: f64| -> Result<Medium> {
        Ok(match spec.medium.as_str() {
            "poisson" => Medium::Poisson { intensity: spec.intensity, height, radius: spec.bump_radius },
            "lattice" | "uniform" => Medium::Lattice { spacing: spec.lattice_spacing, amplitude: spec.amplitude },
            other => return Err(invalid("medium", format!("unknown medium `{other}`"))),
        })
    };
    match spec.kind {
        ModelKind::H1Potential => HamiltonianModel::h1(spec.dimension, random_medium(spec.bump_height)?, spec.v_max),
        ModelKind::H2Speed => HamiltonianModel::h2(spec.dimension, spec.a_min, spec.a_max, random_medium(spec.bump_height)?),
        ModelKind::Deterministic => match spec.profile.as_str() {
            "quadratic" => HamiltonianModel::deterministic_quadratic(spec.dimension),
            "linear" => HamiltonianModel::deterministic_linear(spec.dimension, spec.a_min),
            other => Err(invalid("profile", format!("unknown profile `{other}`"))),
        },
        ModelKind::PeriodicPotential => HamiltonianModel::periodic(spec.dimension, spec.amplitude),
        ModelKind::QuasiPeriodicPotential => HamiltonianModel::quasi_periodic(spec.dimension, spec.amplitude),
        ModelKind::SlowRate => {
            if !(spec.rho_exponent > 0.0) {
                return Err(invalid("rho_exponent", "must be positive"));
            }
            HamiltonianModel::slow_rate(
                spec.dimension,
                HamiltonianModel::power_rho(spec.rho_exponent),
                spec.lattice_spacing,
            )
        }
    }
}

const TAG_POISSON: u64 = 0x5051;
const TAG_LATTICE: u64 = 0x4c41;

#[derive(Debug, Clone, PartialEq)]
enum FieldData {
    Constant(f64),
    Poisson {
        cell_lo: [i64; 2],
        cells: [usize; 2],
        points: Vec<Vec<Vec2>>,
        height: f64,
        radius: f64,
    },
    Lattice {
        node_lo: [i64; 2],
        nodes: [usize; 2],
        spacing: f64,
        values: Vec<f64>,
    },
    Periodic(f64),
    QuasiPeriodic(f64),
    Bumps(Vec<Bump>),
}

/// One realization of the coefficient field on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    pub model: HamiltonianModel,
    pub seed: u64,
    pub window: Window,
    data: FieldData,
    raw_min: f64,
    raw_max: f64,
}

fn window_cells(window: &Window, pad: f64, unit: f64) -> ([i64; 2], [usize; 2]) {
    let mut lo = [0i64; 2];
    let mut n = [1usize; 2];
    for k in 0..window.dim {
        let a = ((window.lo[k] - pad) / unit).floor() as i64;
        let b = ((window.hi[k] + pad) / unit).floor() as i64;
        lo[k] = a;
        n[k] = (b - a + 1) as usize;
    }
    (lo, n)
}

/// Samples the realization `seed` of `model` on `window`.
pub fn sample_field(model: &HamiltonianModel, window: Window, seed: u64) -> Result<RandomField> {
    if window.dim != model.dimension {
        return Err(invalid("window", "dimension differs from the model"));
    }
    let dim = model.dimension;
    let (data, raw_min, raw_max) = match &model.medium {
        Medium::Constant(c) => (FieldData::Constant(*c), *c, *c),
        Medium::Periodic { amplitude } => (FieldData::Periodic(*amplitude), 0.0, *amplitude),
        Medium::QuasiPeriodic { amplitude } => (FieldData::QuasiPeriodic(*amplitude), 0.0, *amplitude),
        Medium::Bumps(b) => {
            let total = b.iter().map(|b| b.height).sum::<f64>();
            (FieldData::Bumps(b.clone()), b.iter().map(|b| b.height).fold(0.0, f64::min), total)
        }
        Medium::Poisson { intensity, height, radius } => {
            let (cell_lo, cells) = window_cells(&window, radius + 1.0, 1.0);
            let law = Poisson::new(*intensity).map_err(|e| invalid("intensity", e.to_string()))?;
            let cap = poisson_cap(*intensity);
            let mut points = Vec::with_capacity(cells[0] * cells[1]);
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    let (ci, cj) = (cell_lo[0] + i as i64, cell_lo[1] + j as i64);
                    let mut rng = cell_rng(seed, TAG_POISSON, ci, cj);
                    let count = (law.sample(&mut rng) as usize).min(cap);
                    let pts: Vec<Vec2> = (0..count)
                        .map(|_| {
                            let x = ci as f64 + rng.random::<f64>();
                            let y = if dim == 2 { cj as f64 + rng.random::<f64>() } else { 0.0 };
                            [x, y]
                        })
                        .collect();
                    points.push(pts);
                }
            }
            // sup W <= height * max_x #{points within 2 r of x}
            let mut max_count = 0usize;
            let r2 = 2.0 * radius;
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    for x in &points[j * cells[0] + i] {
                        let mut c = 0;
                        for dj in -1i64..=1 {
                            for di in -1i64..=1 {
                                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                                if ni < 0 || nj < 0 || ni as usize >= cells[0] || nj as usize >= cells[1] {
                                    continue;
                                }
                                c += points[nj as usize * cells[0] + ni as usize]
                                    .iter()
                                    .filter(|z| dist(**z, *x) < r2)
                                    .count();
                            }
                        }
                        max_count = max_count.max(c);
                    }
                }
            }
            let data = FieldData::Poisson { cell_lo, cells, points, height: *height, radius: *radius };
            (data, 0.0, height * max_count as f64)
        }
        Medium::Lattice { spacing, amplitude } => {
            let (node_lo, mut nodes) = window_cells(&window, 2.0 * spacing, *spacing);
            for k in 0..dim {
                nodes[k] += 1;
            }
            let mut values = Vec::with_capacity(nodes[0] * nodes[1]);
            for j in 0..nodes[1] {
                for i in 0..nodes[0] {
                    let mut rng = cell_rng(seed, TAG_LATTICE, node_lo[0] + i as i64, node_lo[1] + j as i64);
                    values.push(amplitude * rng.random::<f64>());
                }
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (FieldData::Lattice { node_lo, nodes, spacing: *spacing, values }, lo, hi)
        }
    };
    Ok(RandomField { model: model.clone(), seed, window, data, raw_min, raw_max })
}

impl RandomField {
    /// Underlying medium value at `y` (no window check).
    pub fn raw_unchecked(&self, y: Vec2) -> f64 {
        let dim = self.model.dimension;
        match &self.data {
            FieldData::Constant(c) => *c,
            FieldData::Periodic(a) => {
                let s: f64 = (0..dim).map(|k| (std::f64::consts::PI * y[k]).sin().powi(2)).sum();
                a * s / dim as f64
            }
            FieldData::QuasiPeriodic(a) => {
                let tau = 2.0 * std::f64::consts::PI;
                let s: f64 = (0..dim)
                    .map(|k| 2.0 + (tau * y[k]).sin() + (tau * std::f64::consts::SQRT_2 * y[k]).sin())
                    .sum();
                a * s / (4.0 * dim as f64)
            }
            FieldData::Bumps(b) => b
                .iter()
                .map(|b| {
                    let d = dist(y, b.center) / b.radius;
                    b.height * bump_shape(d * d)
                })
                .sum(),
            FieldData::Poisson { cell_lo, cells, points, height, radius } => {
                let ci = y[0].floor() as i64 - cell_lo[0];
                let cj = if dim == 2 { y[1].floor() as i64 - cell_lo[1] } else { 0 };
                let inv_r2 = 1.0 / (radius * radius);
                let mut s = 0.0;
                let jr = if dim == 2 { -1..=1 } else { 0..=0 };
                for dj in jr {
                    let nj = cj + dj;
                    if nj < 0 || nj as usize >= cells[1] {
                        continue;
                    }
                    for di in -1..=1 {
                        let ni = ci + di;
                        if ni < 0 || ni as usize >= cells[0] {
                            continue;
                        }
                        for x in &points[nj as usize * cells[0] + ni as usize] {
                            let dx = y[0] - x[0];
                            let dy = y[1] - x[1];
                            s += bump_shape((dx * dx + dy * dy) * inv_r2);
                        }
                    }
                }
                height * s
            }
            FieldData::Lattice { node_lo, nodes, spacing, values } => {
                // Weights come from global lattice coordinates so that the value
                // does not depend on where the window starts.
                let locate = |s: f64, lo: i64, n: usize| -> (usize, f64) {
                    let k = (s.floor() as i64 - lo).clamp(0, n as i64 - 2);
                    (k as usize, s - (k + lo) as f64)
                };
                let (i, a) = locate(y[0] / spacing, node_lo[0], nodes[0]);
                if dim == 1 {
                    return values[i] * (1.0 - a) + values[i + 1] * a;
                }
                let (j, b) = locate(y[1] / spacing, node_lo[1], nodes[1]);
                let at = |ii: usize, jj: usize| values[jj * nodes[0] + ii];
                (1.0 - b) * ((1.0 - a) * at(i, j) + a * at(i + 1, j)) + b * ((1.0 - a) * at(i, j + 1) + a * at(i + 1, j + 1))
            }
        }
    }

    pub fn raw(&self, y: Vec2) -> Result<f64> {
        if !self.window.contains(y) {
            return Err(Error::OutOfWindow { x: y[0], y: y[1] });
        }
        Ok(self.raw_unchecked(y))
    }

    /// Hamiltonian coefficient (`W` or `a`) at `y`.
    pub fn coefficient(&self, y: Vec2) -> Result<f64> {
        self.raw(y).map(|r| self.model.map.apply(r))
    }

    #[inline]
    pub fn coefficient_unchecked(&self, y: Vec2) -> f64 {
        self.model.map.apply(self.raw_unchecked(y))
    }

    /// Lower and upper bounds on the coefficient over the sampled window.
    pub fn coefficient_bounds(&self) -> (f64, f64) {
        let a = self.model.map.apply(self.raw_min);
        let b = self.model.map.apply(self.raw_max);
        if self.model.map.is_decreasing() {
            (b, a)
        } else {
            (a, b)
        }
    }

    /// Per-realization bound on the potential `sup W` (quadratic profile).
    pub fn v_max(&self) -> f64 {
        self.coefficient_bounds().1.max(0.0)
    }

    /// Coefficient values at every node of `grid`.
    pub fn sample_on(&self, grid: &Grid) -> Result<Vec<f64>> {
        let w = grid.window();
        if !self.window.contains(w.lo) || !self.window.contains(w.hi) {
            return Err(Error::OutOfWindow { x: w.hi[0], y: w.hi[1] });
        }
        Ok((0..grid.len()).map(|k| self.coefficient_unchecked(grid.point(k))).collect())
    }

    /// `inf_y H(p, y)` and `sup_y H(p, y)` over the window, from coefficient bounds.
    pub fn h_range(&self, p: Vec2) -> (f64, f64) {
        let (cmin, cmax) = self.coefficient_bounds();
        let r = norm(p);
        let a = self.model.radial(r, cmin);
        let b = self.model.radial(r, cmax);
        (a.min(b), a.max(b))
    }
}

/// `H(p, y)` for the realization `field`.
pub fn eval_h(field: &RandomField, p: Vec2, y: Vec2) -> Result<f64> {
    Ok(field.model.h(p, field.coefficient(y)?))
}

/// Outcome of probing the structural hypotheses on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub level_set_convex: bool,
    pub coercive: bool,
    pub lipschitz: bool,
    pub bottom_at_zero: bool,
    pub zero_level: bool,
    pub potential_infimum_zero: bool,
    pub failures: Vec<String>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Probes convexity of sublevel sets, coercivity, local Lipschitz bounds and
/// the normalisation `H(p, y) >= H(0, y)`, `sup_y H(0, y) = 0` at random points.
pub fn check_assumptions(field: &RandomField, probes: usize, seed: u64) -> AssumptionReport {
    let model = &field.model;
    let dim = model.dimension;
    let mut rng = cell_rng(seed, 0xa55e, 0, 0);
    let w = field.window;
    let rand_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec2 {
        let mut y = [0.0; 2];
        for k in 0..dim {
            y[k] = w.lo[k] + (w.hi[k] - w.lo[k]) * rng.random::<f64>();
        }
        y
    };
    let rand_p = |rng: &mut rand_chacha::ChaCha8Rng, r: f64| -> Vec2 {
        let mut p = [0.0; 2];
        for k in 0..dim {
            p[k] = r * (2.0 * rng.random::<f64>() - 1.0);
        }
        p
    };
    let mut failures = Vec::new();
    let (mut convex, mut coercive, mut lip, mut bottom) = (true, true, true, true);
    let mut sup_h0 = f64::NEG_INFINITY;
    let mut min_coef = f64::INFINITY;
    let tol = 1e-9;
    for _ in 0..probes {
        let y = rand_point(&mut rng);
        let c = field.coefficient_unchecked(y);
        min_coef = min_coef.min(c);
        let h0 = model.h([0.0, 0.0], c);
        sup_h0 = sup_h0.max(h0);
        let p = rand_p(&mut rng, 3.0);
        let q = rand_p(&mut rng, 3.0);
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let (hp, hq) = (model.h(p, c), model.h(q, c));
        if model.h(mid, c) > hp.max(hq) + tol {
            convex = false;
        }
        if hp < h0 - tol {
            bottom = false;
        }
        let far = [p[0] * 100.0, p[1] * 100.0];
        if norm(p) > 0.1 && model.h(far, c) <= hp {
            coercive = false;
        }
        // Local Lipschitz in p on B_3: compare with the radial slope bound.
        let slope = model.radial_slope(3.0 * std::f64::consts::SQRT_2, c).abs();
        if (hp - hq).abs() > slope * norm([p[0] - q[0], p[1] - q[1]]) + tol {
            lip = false;
        }
    }
    let zero_level = sup_h0 <= tol;
    let potential_infimum_zero = match model.profile {
        Profile::Quadratic => min_coef >= -tol && min_coef <= 0.05 * model.v_max.max(1e-12) + tol,
        Profile::Linear => true,
    };
    if !convex {
        failures.push("level-set convexity".into());
    }
    if !coercive {
        failures.push("coercivity".into());
    }
    if !lip {
        failures.push("local Lipschitz bound in p".into());
    }
    if !bottom {
        failures.push("H(p, y) >= H(0, y)".into());
    }
    if !zero_level {
        failures.push(format!("sup_y H(0, y) = {sup_h0:e} > 0"));
    }
    if !potential_infimum_zero {
        failures.push(format!("potential infimum {min_coef:e} is not 0"));
    }
    AssumptionReport {
        level_set_convex: convex,
        coercive,
        lipschitz: lip,
        bottom_at_zero: bottom,
        zero_level,
        potential_infimum_zero,
        failures,
    }
}

/// Empirical law of `H(0, 0)`: `P[H(0, 0) > -lambda]` for each `lambda`,
/// from `n` independent realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub lambdas: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub n: usize,
    /// Fitted exponent `theta` in `P ~ lambda^theta`.
    pub theta: f64,
}

pub fn estimate_tail(model: &HamiltonianModel, lambdas: &[f64], n: usize, base_seed: u64) -> Result<TailEstimate> {
    if lambdas.is_empty() || n == 0 {
        return Err(invalid("lambdas", "need at least one level and one sample"));
    }
    let window = Window::centered(model.dimension, [0.0, 0.0], 0.5);
    let mut counts = vec![0usize; lambdas.len()];
    for i in 0..n {
        let seed = crate::seeds::replica_seed(base_seed, "tail", i as u64);
        let field = sample_field(model, window, seed)?;
        let h0 = eval_h(&field, [0.0, 0.0], [0.0, 0.0])?;
        for (k, &l) in lambdas.iter().enumerate() {
            if h0 > -l {
                counts[k] += 1;
            }
        }
    }
    let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let pts: Vec<(f64, f64)> = lambdas
        .iter()
        .zip(&probabilities)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&l, &p)| (l, p))
        .collect();
    let theta = if pts.len() >= 2 {
        crate::stats::log_log_slope(&pts).0
    } else {
        f64::NAN
    };
    Ok(TailEstimate { lambdas: lambdas.to_vec(), probabilities, n, theta })
}
