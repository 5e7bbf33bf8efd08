//! Declarative experiment configuration.
//!
//! A config file is TOML with four sections, `[model]`, `[solver]`,
//! `[experiment]` and `[output]`, plus an optional top-level `subcommand`.
//! Every key is optional: the file is overlaid key by key on the defaults of
//! the chosen subcommand, and the fully resolved result is what gets written
//! to `manifest.toml`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use hjh_core::environment::{build_model, HamiltonianModel, ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubcommandName {
    Metric,
    Cell,
    Hbar,
    Fluct,
    Bias,
    Gsigma,
    Flatspot,
    Subrate,
    Homog,
    Aprate,
}

impl SubcommandName {
    pub const ALL: [SubcommandName; 10] = [
        SubcommandName::Metric,
        SubcommandName::Cell,
        SubcommandName::Hbar,
        SubcommandName::Fluct,
        SubcommandName::Bias,
        SubcommandName::Gsigma,
        SubcommandName::Flatspot,
        SubcommandName::Subrate,
        SubcommandName::Homog,
        SubcommandName::Aprate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubcommandName::Metric => "metric",
            SubcommandName::Cell => "cell",
            SubcommandName::Hbar => "hbar",
            SubcommandName::Fluct => "fluct",
            SubcommandName::Bias => "bias",
            SubcommandName::Gsigma => "gsigma",
            SubcommandName::Flatspot => "flatspot",
            SubcommandName::Subrate => "subrate",
            SubcommandName::Homog => "homog",
            SubcommandName::Aprate => "aprate",
        }
    }
}

impl fmt::Display for SubcommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubcommandName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SubcommandName::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown subcommand `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `h1`, `h2`, `deterministic`, `periodic`, `quasi_periodic` or `slow_rate`.
    pub kind: String,
    pub dimension: usize,
    /// `poisson` or `lattice` (random kinds).
    pub medium: String,
    pub intensity: f64,
    pub bump_height: f64,
    pub bump_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    pub a_min: f64,
    pub a_max: f64,
    pub amplitude: f64,
    pub lattice_spacing: f64,
    pub rho_exponent: f64,
    /// `quadratic` or `linear` (deterministic kind).
    pub profile: String,
}

impl Default for ModelSection {
    fn default() -> ModelSection {
        let s = ModelSpec::default();
        ModelSection {
            kind: "h1".into(),
            dimension: s.dimension,
            medium: s.medium,
            intensity: s.intensity,
            bump_height: s.bump_height,
            bump_radius: s.bump_radius,
            v_max: s.v_max,
            a_min: s.a_min,
            a_max: s.a_max,
            amplitude: s.amplitude,
            lattice_spacing: s.lattice_spacing,
            rho_exponent: s.rho_exponent,
            profile: s.profile,
        }
    }
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec, String> {
        Ok(ModelSpec {
            kind: ModelKind::parse(&self.kind).map_err(|e| e.to_string())?,
            dimension: self.dimension,
            medium: self.medium.clone(),
            intensity: self.intensity,
            bump_height: self.bump_height,
            bump_radius: self.bump_radius,
            v_max: self.v_max,
            a_min: self.a_min,
            a_max: self.a_max,
            amplitude: self.amplitude,
            lattice_spacing: self.lattice_spacing,
            rho_exponent: self.rho_exponent,
            profile: self.profile.clone(),
        })
    }

    pub fn build(&self) -> Result<HamiltonianModel, String> {
        build_model(&self.spec()?).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Grid spacing. Absent for `homog` and for the time solver of `aprate`,
    /// which then use `eps / 8`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Fixed window half-width; absent selects the automatic rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// `upwind` or `lax_friedrichs`.
    pub scheme: String,
    /// Relative residual tolerance of the cell solver.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Metric window as a multiple of the farthest target.
    pub window_factor: f64,
    pub max_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence_tol: Option<f64>,
    pub cfl: f64,
    pub frames: usize,
    /// Accuracy of the time solver, used as the allowance of rate envelopes.
    pub solver_tol: f64,
}

impl Default for SolverSection {
    fn default() -> SolverSection {
        SolverSection {
            h: Some(0.125),
            half_width: None,
            scheme: "upwind".into(),
            tol: 1e-8,
            max_sweeps: 100_000,
            window_factor: 1.25,
            max_nodes: 9_000_000,
            influence_tol: None,
            cfl: 0.9,
            frames: 4,
            solver_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub base_seed: u64,
    /// Number of replicas (realizations).
    pub n: usize,
    pub mu: f64,
    pub direction: Vec<f64>,
    /// Distance scale: metric grid radius, `hbar` metric-route horizon,
    /// `gsigma` plane distance.
    pub t: f64,
    pub t_ladder: Vec<f64>,
    /// Slopes `|p|` along `direction`.
    pub slopes: Vec<f64>,
    pub delta: f64,
    pub delta_ladder: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    /// Final time of the time-dependent problem.
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_radius: Option<f64>,
    pub radii: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub tail_lambdas: Vec<f64>,
    /// `[lo, hi]`; empty selects a bracket from the a.s. bounds of the model.
    pub mu_bracket: Vec<f64>,
    pub n_directions: usize,
    /// `metric`, `cell` or `both`.
    pub route: String,
    /// `quad`, `cone` or `plane`.
    pub initial: String,
    pub initial_k: f64,
    /// `auto`, `exact`, `one_dimensional` or `metric`.
    pub hbar_source: String,
    pub hbar_levels: usize,
    pub hbar_t: f64,
    pub hbar_seeds: usize,
    pub hbar_length: f64,
    pub hbar_spacing: f64,
    pub rho_h: f64,
    pub rho_n_y: usize,
    pub rho_y_range: f64,
    pub rho_n_x: usize,
    pub rho_x_range: f64,
    /// Tolerance of the oscillation check.
    pub osc_tol: f64,
}

impl ExperimentSection {
    pub fn defaults(sub: SubcommandName) -> ExperimentSection {
        use SubcommandName::*;
        let n = match sub {
            Metric | Cell | Aprate => 1,
            Hbar | Homog => 8,
            Fluct | Bias => 100,
            Gsigma | Subrate => 16,
            Flatspot => 20,
        };
        let delta_ladder = match sub {
            Flatspot => vec![0.1, 0.05],
            Subrate => vec![0.2, 0.1, 0.05, 0.025],
            _ => vec![0.2, 0.1, 0.05],
        };
        let t = match sub {
            Hbar => 16.0,
            _ => 8.0,
        };
        ExperimentSection {
            base_seed: 2024,
            n,
            mu: 1.0,
            direction: vec![1.0, 0.0],
            t,
            t_ladder: vec![8.0, 16.0, 32.0],
            slopes: vec![0.0, 0.5, 1.0],
            delta: 0.1,
            delta_ladder,
            eps_ladder: vec![0.4, 0.2, 0.1],
            time: 1.0,
            region_radius: None,
            radii: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            sigmas: vec![0.25, 0.5, 1.0],
            tail_lambdas: vec![0.05, 0.1, 0.2, 0.4],
            mu_bracket: Vec::new(),
            n_directions: 16,
            route: "both".into(),
            initial: "quad".into(),
            initial_k: 2.0,
            hbar_source: "auto".into(),
            hbar_levels: 24,
            hbar_t: 32.0,
            hbar_seeds: 8,
            hbar_length: 2000.0,
            hbar_spacing: 1.0 / 64.0,
            rho_h: 1.0 / 32.0,
            rho_n_y: 128,
            rho_y_range: 200.0,
            rho_n_x: 256,
            rho_x_range: 20.0,
            osc_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    /// Any of `csv` (records) and `plot` (`x, y, yerr` triples).
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> OutputSection {
        OutputSection { directory: "out".into(), formats: vec!["csv".into(), "plot".into()] }
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: SubcommandName,
    pub model: ModelSection,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn err(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn defaults(sub: SubcommandName) -> ExperimentConfig {
        let mut solver = SolverSection::default();
        if matches!(sub, SubcommandName::Homog) {
            solver.h = None;
        }
        if matches!(sub, SubcommandName::Aprate) {
            solver.h = Some(1.0 / 32.0);
        }
        let mut model = ModelSection::default();
        if matches!(sub, SubcommandName::Aprate) {
            model.kind = "periodic".into();
            model.dimension = 1;
        }
        ExperimentConfig {
            subcommand: sub,
            model,
            solver,
            experiment: ExperimentSection::defaults(sub),
            output: OutputSection::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic checks, reported field by field.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let m = &self.model;
        if let Err(e) = ModelKind::parse(&m.kind) {
            out.push(err("model.kind", e.to_string()));
        }
        if m.dimension != 1 && m.dimension != 2 {
            out.push(err("model.dimension", "must be 1 or 2"));
        }
        if !matches!(m.medium.as_str(), "poisson" | "lattice" | "uniform") {
            out.push(err("model.medium", format!("unknown medium `{}` (poisson, lattice)", m.medium)));
        }
        if !matches!(m.profile.as_str(), "quadratic" | "linear") {
            out.push(err("model.profile", format!("unknown profile `{}` (quadratic, linear)", m.profile)));
        }
        for (name, v) in [
            ("model.intensity", m.intensity),
            ("model.bump_height", m.bump_height),
            ("model.bump_radius", m.bump_radius),
            ("model.a_min", m.a_min),
            ("model.a_max", m.a_max),
            ("model.amplitude", m.amplitude),
            ("model.lattice_spacing", m.lattice_spacing),
            ("model.rho_exponent", m.rho_exponent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(err(name, "must be positive and finite"));
            }
        }
        if out.is_empty() {
            if let Err(e) = m.build() {
                out.push(err("model", e));
            }
        }

        let s = &self.solver;
        for (name, v) in [("solver.h", s.h), ("solver.half_width", s.half_width), ("solver.influence_tol", s.influence_tol)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(err(name, "must be positive and finite"));
                }
            }
        }
        if hjh_core::cell::Scheme::parse(&s.scheme).is_err() {
            out.push(err("solver.scheme", format!("unknown scheme `{}` (upwind, lax_friedrichs)", s.scheme)));
        }
        if !(s.tol > 0.0) {
            out.push(err("solver.tol", "must be positive"));
        }
        if s.max_sweeps == 0 {
            out.push(err("solver.max_sweeps", "must be positive"));
        }
        if !(s.window_factor >= 1.0) {
            out.push(err("solver.window_factor", "must be at least 1"));
        }
        if s.max_nodes < 16 {
            out.push(err("solver.max_nodes", "must be at least 16"));
        }
        if !(s.cfl > 0.0 && s.cfl <= 1.0) {
            out.push(err("solver.cfl", "must lie in (0, 1]"));
        }
        if s.frames == 0 {
            out.push(err("solver.frames", "must be positive"));
        }
        if !(s.solver_tol >= 0.0) {
            out.push(err("solver.solver_tol", "must be nonnegative"));
        }
        if s.h.is_none() && !matches!(self.subcommand, SubcommandName::Homog) {
            out.push(err("solver.h", format!("required by `{}`", self.subcommand)));
        }

        let e = &self.experiment;
        use SubcommandName::*;
        let sub = self.subcommand;
        if e.base_seed > i64::MAX as u64 {
            out.push(err("experiment.base_seed", "must fit in a signed 64-bit TOML integer"));
        }
        if e.n == 0 {
            out.push(err("experiment.n", "must be positive"));
        }
        if matches!(sub, Fluct) && e.n < 4 {
            out.push(err("experiment.n", "fluct needs at least 4 replicas"));
        }
        if !(e.mu > 0.0) {
            out.push(err("experiment.mu", "must be positive"));
        }
        if e.direction.len() != 2 || !e.direction.iter().all(|x| x.is_finite()) || e.direction.iter().all(|&x| x == 0.0) {
            out.push(err("experiment.direction", "must be a nonzero pair [e1, e2]"));
        }
        for (name, v) in [
            ("experiment.t", e.t),
            ("experiment.delta", e.delta),
            ("experiment.time", e.time),
            ("experiment.initial_k", e.initial_k),
            ("experiment.hbar_t", e.hbar_t),
            ("experiment.hbar_length", e.hbar_length),
            ("experiment.hbar_spacing", e.hbar_spacing),
            ("experiment.rho_h", e.rho_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(err(name, "must be positive and finite"));
            }
        }
        if !(e.delta < 1.0) {
            out.push(err("experiment.delta", "must lie in (0, 1)"));
        }
        if let Some(r) = e.region_radius {
            if !(r > 0.0) {
                out.push(err("experiment.region_radius", "must be positive"));
            }
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
        if matches!(sub, Fluct | Bias) && (e.t_ladder.len() < 2 || !increasing(&e.t_ladder) || e.t_ladder[0] <= 0.0) {
            out.push(err("experiment.t_ladder", "need at least two positive increasing horizons"));
        }
        let unit = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x < 1.0);
        if matches!(sub, Hbar | Flatspot | Subrate | Aprate) && (e.delta_ladder.is_empty() || !decreasing(&e.delta_ladder) || !unit(&e.delta_ladder)) {
            out.push(err("experiment.delta_ladder", "need decreasing discounts in (0, 1)"));
        }
        if matches!(sub, Hbar | Subrate) && e.delta_ladder.len() < 2 {
            out.push(err("experiment.delta_ladder", "need at least two discounts"));
        }
        if matches!(sub, Homog | Aprate) && (e.eps_ladder.is_empty() || !decreasing(&e.eps_ladder) || !unit(&e.eps_ladder)) {
            out.push(err("experiment.eps_ladder", "need decreasing scales in (0, 1)"));
        }
        if e.slopes.is_empty() || e.slopes.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            out.push(err("experiment.slopes", "need nonnegative slopes"));
        }
        if e.radii.is_empty() || e.radii.iter().any(|&x| !(x > 0.0)) {
            out.push(err("experiment.radii", "need positive radii"));
        }
        if matches!(sub, Gsigma) && (e.sigmas.is_empty() || e.sigmas.iter().any(|&x| !(x > 0.0 && x <= 1.0))) {
            out.push(err("experiment.sigmas", "need values in (0, 1]"));
        }
        if matches!(sub, Subrate) && (e.tail_lambdas.len() < 2 || !increasing(&e.tail_lambdas) || !unit(&e.tail_lambdas)) {
            out.push(err("experiment.tail_lambdas", "need at least two increasing levels in (0, 1)"));
        }
        if !(e.mu_bracket.is_empty() || (e.mu_bracket.len() == 2 && e.mu_bracket[1] > e.mu_bracket[0] && e.mu_bracket[0] >= 0.0)) {
            out.push(err("experiment.mu_bracket", "must be empty or [lo, hi] with 0 <= lo < hi"));
        }
        if e.n_directions < 4 {
            out.push(err("experiment.n_directions", "must be at least 4"));
        }
        if !matches!(e.route.as_str(), "metric" | "cell" | "both") {
            out.push(err("experiment.route", format!("unknown route `{}` (metric, cell, both)", e.route)));
        }
        if !matches!(e.initial.as_str(), "quad" | "cone" | "plane") {
            out.push(err("experiment.initial", format!("unknown initial datum `{}` (quad, cone, plane)", e.initial)));
        }
        if !matches!(e.hbar_source.as_str(), "auto" | "exact" | "one_dimensional" | "metric") {
            out.push(err("experiment.hbar_source", format!("unknown source `{}` (auto, exact, one_dimensional, metric)", e.hbar_source)));
        }
        if e.hbar_levels < 2 || e.hbar_seeds == 0 {
            out.push(err("experiment.hbar_levels", "need at least two levels and one seed"));
        }
        if e.rho_n_y == 0 || e.rho_n_x == 0 || !(e.rho_y_range >= 0.0) || !(e.rho_x_range >= 0.0) {
            out.push(err("experiment.rho_n_y", "probe counts must be positive and ranges nonnegative"));
        }
        if !(e.osc_tol >= 0.0) {
            out.push(err("experiment.osc_tol", "must be nonnegative"));
        }

        let o = &self.output;
        if o.directory.is_empty() {
            out.push(err("output.directory", "must not be empty"));
        }
        if o.formats.is_empty() || o.formats.iter().any(|f| !matches!(f.as_str(), "csv" | "plot")) {
            out.push(err("output.formats", "entries must be `csv` or `plot`"));
        }
        out
    }
}

fn type_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

/// Overlays `user` on `base` key by key. Unknown keys and type mismatches are
/// reported per key rather than stopping at the first.
fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: &T, user: Option<&toml::Value>, out: &mut Vec<FieldError>) -> T {
    let base_table = match toml::Value::try_from(base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("sections serialize to tables"),
    };
    let Some(user) = user else {
        return toml::Value::Table(base_table).try_into().expect("defaults deserialize");
    };
    let Some(user) = user.as_table() else {
        out.push(err(section, format!("expected a table, found {}", type_name(user))));
        return toml::Value::Table(base_table).try_into().expect("defaults deserialize");
    };
    let mut merged = base_table.clone();
    for (k, v) in user {
        let mut probe = base_table.clone();
        probe.insert(k.clone(), v.clone());
        match toml::Value::Table(probe).try_into::<T>() {
            Ok(_) => {
                merged.insert(k.clone(), v.clone());
            }
            Err(e) => {
                let msg = e.message().trim().to_string();
                out.push(err(format!("{section}.{k}"), msg));
            }
        }
    }
    toml::Value::Table(merged).try_into().expect("per-key checked overlay deserializes")
}

/// Parses a config or manifest document and resolves it against the defaults
/// of its subcommand. `cli_sub` must agree with the file when both are given.
/// A `[meta]` table, as written to manifests, is ignored.
pub fn resolve(text: Option<&str>, cli_sub: Option<SubcommandName>) -> Result<ExperimentConfig, Vec<FieldError>> {
    let mut errors = Vec::new();
    let mut doc = match text {
        Some(t) => match t.parse::<toml::Table>() {
            Ok(d) => d,
            Err(e) => return Err(vec![err("config", e.message().trim().to_string())]),
        },
        None => toml::Table::new(),
    };
    doc.remove("meta");
    let file_sub = match doc.remove("subcommand") {
        None => None,
        Some(toml::Value::String(s)) => match s.parse::<SubcommandName>() {
            Ok(c) => Some(c),
            Err(m) => {
                errors.push(err("subcommand", m));
                None
            }
        },
        Some(v) => {
            errors.push(err("subcommand", format!("expected a string, found {}", type_name(&v))));
            None
        }
    };
    let sub = match (cli_sub, file_sub) {
        (Some(a), Some(b)) if a != b => {
            errors.push(err("subcommand", format!("command line says `{a}` but the file says `{b}`")));
            a
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            if errors.is_empty() {
                errors.push(err("subcommand", "no subcommand given on the command line or in the file"));
            }
            return Err(errors);
        }
    };
    let base = ExperimentConfig::defaults(sub);
    let model = overlay("model", &base.model, doc.get("model"), &mut errors);
    let solver = overlay("solver", &base.solver, doc.get("solver"), &mut errors);
    let experiment = overlay("experiment", &base.experiment, doc.get("experiment"), &mut errors);
    let output = overlay("output", &base.output, doc.get("output"), &mut errors);
    for k in doc.keys() {
        if !matches!(k.as_str(), "model" | "solver" | "experiment" | "output") {
            errors.push(err(k.clone(), "unknown section"));
        }
    }
    let cfg = ExperimentConfig { subcommand: sub, model, solver, experiment, output };
    errors.extend(cfg.validate());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_subcommand() {
        for sub in SubcommandName::ALL {
            let cfg = ExperimentConfig::defaults(sub);
            assert!(cfg.validate().is_empty(), "{sub}: {:?}", cfg.validate());
        }
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let text = "subcommand = \"homog\"\n[model]\ndimension = 1\n[experiment]\nn = 3\n";
        let cfg = resolve(Some(text), None).unwrap();
        assert_eq!(cfg.experiment.n, 3);
        assert_eq!(cfg.solver.h, None);
        let again = resolve(Some(&cfg.to_toml()), None).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn errors_are_listed_field_by_field() {
        let text = "[model]\ndimension = 3\nbogus = 1\n[experiment]\nn = \"many\"\nmu = -1.0\n[extra]\n";
        let errs = resolve(Some(text), Some(SubcommandName::Metric)).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        for f in ["model.bogus", "experiment.n", "extra", "model.dimension", "experiment.mu"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn subcommand_conflict_is_rejected() {
        let errs = resolve(Some("subcommand = \"cell\""), Some(SubcommandName::Metric)).unwrap_err();
        assert_eq!(errs[0].field, "subcommand");
        assert!(resolve(None, None).is_err());
    }

    #[test]
    fn meta_table_is_ignored() {
        let text = "subcommand = \"metric\"\n[meta]\nwall_clock_seconds = 1.5\n";
        assert!(resolve(Some(text), None).is_ok());
    }
}
