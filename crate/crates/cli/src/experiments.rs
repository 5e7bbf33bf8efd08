//! One runner per subcommand. Each returns its tables in memory; nothing is
//! written until the whole experiment has succeeded.

use std::time::Instant;

use hjh_core::almost_periodic::{ap_rate_check, ApOptions, RhoOptions};
use hjh_core::cell::{solve_cell, Boundary, CellOptions, Scheme};
use hjh_core::effective::{hbar_from_cell, hbar_from_metric, sample_for_cell, HbarEstimate, MetricOptions};
use hjh_core::environment::{sample_field, HamiltonianModel, ModelKind, Profile};
use hjh_core::grid::{norm, scale, Grid, Vec2, Window};
use hjh_core::hj_time::{homogenization_error, HbarSource, HbarTable, HomogOptions, InitialData, TimeOptions};
use hjh_core::metric::{solve_metric, Source};
use hjh_core::output::{Cell, Table};
use hjh_core::seeds::replica_seed;
use hjh_core::stats::{
    bias_experiment, fluctuation_experiment, g_sigma_estimate, g_sigma_sandwich, mean, std_error, subballistic_rate,
    flat_spot_sandwich,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SubcommandName};

/// Everything a run produces. `tables` are deterministic; `timing` is not.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    /// `(file stem, table)`; the first entry is the main record table.
    pub tables: Vec<(String, Table)>,
    /// `(series, x, y, yerr)`.
    pub plot: Vec<(String, f64, f64, f64)>,
    pub summary: Vec<(String, Cell)>,
    /// `(stage, seconds)`.
    pub timing: Vec<(String, f64)>,
}

impl Artifacts {
    fn table(&mut self, stem: &str, t: Table) {
        self.tables.push((stem.to_string(), t));
    }

    fn sum(&mut self, key: &str, v: impl Into<Cell>) {
        self.summary.push((key.to_string(), v.into()));
    }
}

pub type RunResult = Result<Artifacts, String>;

fn core<T>(r: hjh_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn flag(b: bool) -> Cell {
    Cell::Int(b as i64)
}

fn direction(cfg: &ExperimentConfig, model: &HamiltonianModel) -> Vec2 {
    let d = &cfg.experiment.direction;
    let e = if model.dimension == 1 { [d[0], 0.0] } else { [d[0], d[1]] };
    let r = norm(e);
    if r > 0.0 {
        scale(e, 1.0 / r)
    } else {
        [1.0, 0.0]
    }
}

fn metric_options(cfg: &ExperimentConfig) -> MetricOptions {
    MetricOptions {
        h: cfg.solver.h.unwrap_or(0.125),
        window_factor: cfg.solver.window_factor,
        max_nodes: cfg.solver.max_nodes,
    }
}

fn cell_options(cfg: &ExperimentConfig) -> CellOptions {
    let s = &cfg.solver;
    CellOptions {
        h: s.h.unwrap_or(0.125),
        half_width: s.half_width,
        scheme: Scheme::parse(&s.scheme).unwrap_or(Scheme::Upwind),
        boundary: Boundary::Barrier,
        tol: s.tol,
        max_sweeps: s.max_sweeps,
        max_nodes: s.max_nodes,
        influence_tol: s.influence_tol,
    }
}

fn time_options(cfg: &ExperimentConfig, h: Option<f64>) -> TimeOptions {
    let s = &cfg.solver;
    TimeOptions {
        h,
        cfl: s.cfl,
        scheme: Scheme::parse(&s.scheme).unwrap_or(Scheme::Upwind),
        frames: s.frames,
        region_radius: cfg.experiment.region_radius,
        half_width: s.half_width,
        max_nodes: s.max_nodes,
    }
}

fn initial_data(cfg: &ExperimentConfig, model: &HamiltonianModel) -> Result<InitialData, String> {
    let e = &cfg.experiment;
    core(InitialData::parse(&e.initial, e.initial_k, direction(cfg, model)))
}

pub fn run(cfg: &ExperimentConfig) -> RunResult {
    let model = cfg.model.build()?;
    let start = Instant::now();
    let mut a = match cfg.subcommand {
        SubcommandName::Metric => metric(cfg, &model),
        SubcommandName::Cell => cell(cfg, &model),
        SubcommandName::Hbar => hbar(cfg, &model),
        SubcommandName::Fluct => fluct(cfg, &model),
        SubcommandName::Bias => bias(cfg, &model),
        SubcommandName::Gsigma => gsigma(cfg, &model),
        SubcommandName::Flatspot => flatspot(cfg, &model),
        SubcommandName::Subrate => subrate(cfg, &model),
        SubcommandName::Homog => homog(cfg, &model),
        SubcommandName::Aprate => aprate(cfg, &model),
    }?;
    a.timing.push(("total".into(), start.elapsed().as_secs_f64()));
    Ok(a)
}

fn metric(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let h = cfg.solver.h.unwrap_or(0.125);
    let hw = cfg.solver.half_width.unwrap_or(e.t);
    let dim = model.dimension;
    let grid = core(Grid::centered(dim, hw, h))?;
    if grid.len() > cfg.solver.max_nodes {
        return Err(format!("grid of {} nodes exceeds solver.max_nodes = {}", grid.len(), cfg.solver.max_nodes));
    }
    let dir = direction(cfg, model);
    let reach = grid.window().depth([0.0, 0.0]);
    let n_ray = (reach / h).floor() as usize;
    let seeds: Vec<u64> = (0..e.n as u64).map(|i| replica_seed(e.base_seed, "metric", i)).collect();
    let sols = seeds
        .par_iter()
        .map(|&s| {
            let t0 = Instant::now();
            let field = sample_field(model, Window::centered(dim, [0.0, 0.0], hw + 2.0 * h), s)?;
            let sol = solve_metric(&field, e.mu, &Source::Point([0.0, 0.0]), &grid)?;
            let ray = (0..=n_ray).map(|k| sol.at(scale(dir, k as f64 * h))).collect::<hjh_core::Result<Vec<f64>>>()?;
            Ok((sol, ray, t0.elapsed().as_secs_f64()))
        })
        .collect::<hjh_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["seed_index", "seed", "x", "y", "m"]);
    for (i, (sol, _, _)) in sols.iter().enumerate() {
        for k in 0..grid.len() {
            let p = grid.point(k);
            t.push(vec![i.into(), seeds[i].into(), p[0].into(), p[1].into(), sol.values[k].into()]);
        }
    }
    out.table("metric", t);
    for k in 0..=n_ray {
        let col: Vec<f64> = sols.iter().map(|s| s.1[k]).collect();
        out.plot.push(("m_along_direction".into(), k as f64 * h, mean(&col), std_error(&col)));
    }
    out.sum("nodes", grid.len());
    out.sum("f_min", sols.iter().map(|s| s.0.f_min).fold(f64::INFINITY, f64::min));
    out.sum("f_max", sols.iter().map(|s| s.0.f_max).fold(0.0, f64::max));
    for (i, s) in sols.iter().enumerate() {
        out.timing.push((format!("replica_{i}"), s.2));
    }
    Ok(out)
}

fn cell(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let opts = cell_options(cfg);
    let dir = direction(cfg, model);
    let seeds: Vec<u64> = (0..e.n as u64).map(|i| replica_seed(e.base_seed, "cell", i)).collect();
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|i| (0..e.slopes.len()).map(move |k| (i, k))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, k)| {
            let t0 = Instant::now();
            let p = scale(dir, e.slopes[k]);
            let (field, _) = sample_for_cell(model, seeds[i], p, e.delta, &opts)?;
            let sol = solve_cell(&field, p, e.delta, &opts)?;
            let value = sol.hbar_proxy([0.0, 0.0])?;
            Ok((i, p, value, sol, t0.elapsed().as_secs_f64()))
        })
        .collect::<hjh_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["seed_index", "seed", "p1", "p2", "delta", "value", "residual", "sweeps", "kp", "h_inf", "h_sup"]);
    for (i, p, value, sol, _) in &rows {
        t.push(vec![
            (*i).into(),
            seeds[*i].into(),
            p[0].into(),
            p[1].into(),
            e.delta.into(),
            (*value).into(),
            sol.residual.into(),
            sol.sweeps.into(),
            sol.kp.into(),
            sol.h_inf.into(),
            sol.h_sup.into(),
        ]);
    }
    out.table("cell", t);
    for (k, &s) in e.slopes.iter().enumerate() {
        let col: Vec<f64> = rows.iter().enumerate().filter(|(j, _)| j % e.slopes.len() == k).map(|(_, r)| r.2).collect();
        out.plot.push(("minus_delta_v".into(), s, mean(&col), std_error(&col)));
    }
    for (j, r) in rows.iter().enumerate() {
        out.timing.push((format!("replica_{}_slope_{}", r.0, j % e.slopes.len()), r.4));
    }
    Ok(out)
}

/// `[0, 1.1 sup H(p, .) + 0.1]`: `Hbar(p) <= sup_y H(p, y)` almost surely.
fn auto_bracket(model: &HamiltonianModel, p: Vec2) -> (f64, f64) {
    let r = norm(p);
    let top = match model.profile {
        Profile::Quadratic => 0.5 * r * r,
        Profile::Linear => model.a_max * r,
    };
    (0.0, 1.1 * top + 0.1)
}

fn exact_hbar(model: &HamiltonianModel, r: f64) -> f64 {
    match model.kind {
        ModelKind::Deterministic => HbarTable::exact(model).map(|t| t.eval(r)).unwrap_or(f64::NAN),
        _ => f64::NAN,
    }
}

fn hbar(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let dir = direction(cfg, model);
    let mut out = Artifacts::default();
    let mut t = Table::new(["route", "p1", "p2", "value", "se", "ci_low", "ci_high", "systematic", "flat_spot", "exact"]);
    let routes: Vec<&str> = match e.route.as_str() {
        "both" => vec!["metric", "cell"],
        r => vec![r],
    };
    for route in routes {
        for &s in &e.slopes {
            let p = scale(dir, s);
            let t0 = Instant::now();
            let est: HbarEstimate = if route == "metric" {
                let bracket = if e.mu_bracket.len() == 2 { (e.mu_bracket[0], e.mu_bracket[1]) } else { auto_bracket(model, p) };
                core(hbar_from_metric(model, p, bracket, e.n_directions, e.t, e.n, e.base_seed, &metric_options(cfg)))?
            } else {
                core(hbar_from_cell(model, p, &e.delta_ladder, e.n, e.base_seed, &cell_options(cfg)))?
            };
            out.timing.push((format!("{route}_slope_{s}"), t0.elapsed().as_secs_f64()));
            t.push(vec![
                route.into(),
                p[0].into(),
                p[1].into(),
                est.value.into(),
                est.se.into(),
                est.ci_low.into(),
                est.ci_high.into(),
                est.systematic.into(),
                flag(est.flat_spot),
                exact_hbar(model, s).into(),
            ]);
            out.plot.push((route.to_string(), s, est.value, est.se));
        }
    }
    out.table("hbar", t);
    Ok(out)
}

fn fluct(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let rep = core(fluctuation_experiment(model, e.mu, direction(cfg, model), &e.t_ladder, e.n, e.base_seed, &metric_options(cfg)))?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["t", "seed_index", "seed", "m"]);
    for r in &rep.records {
        for (i, &m) in r.samples.iter().enumerate() {
            t.push(vec![r.t.into(), i.into(), rep.seeds[i].into(), m.into()]);
        }
    }
    out.table("fluct", t);
    let mut s = Table::new(["t", "mean", "variance", "variance_se", "bound", "dominated"]);
    for (k, r) in rep.records.iter().enumerate() {
        s.push(vec![
            r.t.into(),
            r.mean.into(),
            r.variance.into(),
            r.variance_se.into(),
            rep.variance_envelope.bounds[k].into(),
            flag(rep.variance_envelope.dominated[k]),
        ]);
        out.plot.push(("variance".into(), r.t, r.variance, r.variance_se));
    }
    out.table("fluct_moments", s);
    let mut tail = Table::new(["t", "lambda", "exceedance", "bound", "allowance", "ok"]);
    for c in &rep.tail_checks {
        tail.push(vec![c.t.into(), c.lambda.into(), c.exceedance.into(), c.bound.into(), c.allowance.into(), flag(c.ok)]);
    }
    out.table("fluct_tail", tail);
    out.sum("variance_constant", rep.variance_envelope.constant);
    out.sum("variance_envelope_holds", flag(rep.variance_envelope.holds));
    out.sum("tail_constant", rep.tail_constant);
    out.sum("tail_holds", flag(rep.tail_holds));
    out.sum("variance_exponent", rep.fit.as_ref().map_or(f64::NAN, |f| f.exponent));
    Ok(out)
}

fn bias(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let rep = core(bias_experiment(model, e.mu, direction(cfg, model), &e.t_ladder, e.n, e.base_seed, &metric_options(cfg)))?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["t", "mean", "se", "bias", "one_sided"]);
    for r in &rep.records {
        t.push(vec![r.t.into(), r.mean.into(), r.se.into(), r.bias.into(), flag(r.one_sided)]);
        out.plot.push(("bias".into(), r.t, r.bias, r.se * r.t));
    }
    out.table("bias", t);
    out.sum("mbar_reference", rep.mbar_ref);
    out.sum("one_sided_holds", flag(rep.one_sided_holds));
    out.sum("bias_exponent", rep.fit.as_ref().map_or(f64::NAN, |f| f.exponent));
    Ok(out)
}

fn gsigma(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let opts = metric_options(cfg);
    let mut estimates = Vec::new();
    let mut out = Artifacts::default();
    for &sigma in &e.sigmas {
        let t0 = Instant::now();
        estimates.push(core(g_sigma_estimate(model, e.mu, sigma, e.t, e.n, e.base_seed, &opts))?);
        out.timing.push((format!("sigma_{sigma}"), t0.elapsed().as_secs_f64()));
    }
    let sw = g_sigma_sandwich(estimates);
    let mut t = Table::new(["sigma", "t", "g_big", "g_hat", "plane_mean", "plane_se", "upper_constant", "upper_ok", "lower_ok"]);
    for (k, g) in sw.estimates.iter().enumerate() {
        t.push(vec![
            g.sigma.into(),
            g.t.into(),
            g.g_big.into(),
            g.g_hat.into(),
            g.plane_mean.into(),
            g.plane_se.into(),
            g.upper_constant.into(),
            flag(g.upper_ok),
            flag(sw.lower_ok[k]),
        ]);
        out.plot.push(("g_hat".into(), g.sigma, g.g_hat, 0.0));
        out.plot.push(("plane_mean".into(), g.sigma, g.plane_mean, g.plane_se));
    }
    out.table("gsigma", t);
    out.sum("lower_constant", sw.lower_constant);
    out.sum("holds", flag(sw.holds));
    Ok(out)
}

fn flatspot(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let opts = cell_options(cfg);
    let small = *e.delta_ladder.last().unwrap();
    let seeds: Vec<u64> = (0..e.n as u64).map(|i| replica_seed(e.base_seed, "flatspot", i)).collect();
    let reports = seeds
        .par_iter()
        .map(|&s| {
            let t0 = Instant::now();
            let (field, _) = sample_for_cell(model, s, [0.0, 0.0], small, &opts)?;
            let r = e
                .delta_ladder
                .iter()
                .map(|&d| flat_spot_sandwich(&field, d, &e.radii, &opts))
                .collect::<hjh_core::Result<Vec<_>>>()?;
            Ok((r, t0.elapsed().as_secs_f64()))
        })
        .collect::<hjh_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut out = Artifacts::default();
    let mut t = Table::new([
        "seed_index", "seed", "delta", "measured", "lower", "lower_radius", "upper", "upper_radius", "constant", "tol", "lower_ok", "upper_ok",
    ]);
    let mut all = true;
    for (i, (rs, secs)) in reports.iter().enumerate() {
        for r in rs {
            all &= r.holds();
            t.push(vec![
                i.into(),
                seeds[i].into(),
                r.delta.into(),
                r.measured.into(),
                r.lower.into(),
                r.lower_radius.into(),
                r.upper.into(),
                r.upper_radius.into(),
                r.constant.into(),
                r.tol.into(),
                flag(r.lower_ok),
                flag(r.upper_ok),
            ]);
        }
        out.timing.push((format!("replica_{i}"), *secs));
    }
    out.table("flatspot", t);
    for (k, &d) in e.delta_ladder.iter().enumerate() {
        let col: Vec<f64> = reports.iter().map(|r| r.0[k].measured).collect();
        out.plot.push(("minus_delta_v".into(), d, mean(&col), std_error(&col)));
    }
    out.sum("holds", flag(all));
    Ok(out)
}

fn subrate(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let rep = core(subballistic_rate(model, &e.delta_ladder, e.n, e.base_seed, &e.tail_lambdas, &cell_options(cfg)))?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["seed_index", "seed", "delta", "value"]);
    for (i, row) in rep.values.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            t.push(vec![i.into(), rep.seeds[i].into(), e.delta_ladder[k].into(), v.into()]);
        }
    }
    out.table("subrate", t);
    let mut tail = Table::new(["lambda", "probability"]);
    for (l, p) in rep.tail.lambdas.iter().zip(&rep.tail.probabilities) {
        tail.push(vec![(*l).into(), (*p).into()]);
    }
    out.table("subrate_tail", tail);
    for &(d, m, se) in &rep.ladder {
        out.plot.push(("minus_delta_v".into(), d, m, se));
    }
    out.sum("theta", rep.tail.theta);
    out.sum("alpha", rep.alpha);
    out.sum("beta", rep.beta);
    out.sum("exponent", rep.fit.as_ref().map_or(f64::NAN, |f| f.exponent));
    out.sum("envelope_holds", flag(rep.envelope.as_ref().is_some_and(|c| c.holds)));
    Ok(out)
}

fn hbar_source(cfg: &ExperimentConfig, model: &HamiltonianModel) -> HbarSource {
    let e = &cfg.experiment;
    let metric = || HbarSource::Metric {
        n_levels: e.hbar_levels,
        t: e.hbar_t,
        n_seeds: e.hbar_seeds,
        opts: MetricOptions { h: 0.125, window_factor: cfg.solver.window_factor, max_nodes: cfg.solver.max_nodes },
    };
    match e.hbar_source.as_str() {
        "exact" => HbarSource::Exact,
        "one_dimensional" => HbarSource::OneDimensional { length: e.hbar_length, spacing: e.hbar_spacing },
        "metric" => metric(),
        _ if model.kind == ModelKind::Deterministic => HbarSource::Exact,
        _ if model.dimension == 1 => HbarSource::OneDimensional { length: e.hbar_length, spacing: e.hbar_spacing },
        _ => metric(),
    }
}

fn homog(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let u0 = initial_data(cfg, model)?;
    let opts = HomogOptions {
        time: time_options(cfg, cfg.solver.h),
        hbar: hbar_source(cfg, model),
        solver_tol: cfg.solver.solver_tol,
        ..HomogOptions::default()
    };
    let rep = core(homogenization_error(model, &u0, &e.eps_ladder, e.time, e.n, e.base_seed, &opts))?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["eps", "seed_index", "seed", "sup_error"]);
    for r in &rep.records {
        t.push(vec![r.epsilon.into(), r.replica.into(), r.seed.into(), r.sup_error.into()]);
        out.timing.push((format!("eps_{}_replica_{}", r.epsilon, r.replica), r.runtime));
    }
    out.table("homog", t);
    for k in 0..rep.ladder.len() {
        out.plot.push(("sup_error".into(), rep.ladder[k], rep.means[k], rep.ses[k]));
    }
    out.sum("strictly_decreasing", flag(rep.strictly_decreasing));
    out.sum("envelope_constant", rep.envelope_constant);
    out.sum("envelope_holds", flag(rep.envelope_holds));
    out.sum("exponent", rep.fit.as_ref().map_or(f64::NAN, |f| f.exponent));
    Ok(out)
}

fn aprate(cfg: &ExperimentConfig, model: &HamiltonianModel) -> RunResult {
    let e = &cfg.experiment;
    let u0 = initial_data(cfg, model)?;
    let opts = ApOptions {
        rho: RhoOptions { h: e.rho_h, y_range: e.rho_y_range, n_y: e.rho_n_y, x_range: e.rho_x_range, n_x: e.rho_n_x },
        deltas: e.delta_ladder.clone(),
        slopes: e.slopes.clone(),
        cell: CellOptions { half_width: None, ..cell_options(cfg) },
        osc_tol: e.osc_tol,
        time: time_options(cfg, None),
        hbar_spacing: e.hbar_spacing,
        hbar_length: e.hbar_length,
        ..ApOptions::default()
    };
    let rep = core(ap_rate_check(model, &u0, &e.eps_ladder, e.time, &opts))?;
    let mut out = Artifacts::default();
    let mut t = Table::new(["eps", "sup_error", "envelope", "cube_root_bound"]);
    for (k, r) in rep.records.iter().enumerate() {
        t.push(vec![r.epsilon.into(), r.sup_error.into(), rep.envelope_values[k].into(), rep.cube_root_envelope.bounds[k].into()]);
        out.plot.push(("sup_error".into(), r.epsilon, r.sup_error, 0.0));
        out.timing.push((format!("eps_{}", r.epsilon), r.runtime));
    }
    out.table("aprate", t);
    let mut rho = Table::new(["r", "rho", "rho_raw"]);
    let m = &rep.modulus;
    for k in 0..m.rho.radii.len() {
        rho.push(vec![m.rho.radii[k].into(), m.rho.values[k].into(), m.rho.raw[k].into()]);
    }
    out.table("aprate_rho", rho);
    let mut eta = Table::new(["delta", "eta", "table_limited"]);
    for en in &m.eta {
        eta.push(vec![en.delta.into(), en.eta.into(), flag(en.table_limited)]);
    }
    out.table("aprate_eta", eta);
    let mut osc = Table::new(["slope", "delta", "osc", "eta", "l", "table_limited", "ok"]);
    for c in &rep.osc_checks {
        osc.push(vec![c.slope.into(), c.delta.into(), c.osc.into(), c.eta.into(), c.l.into(), flag(c.table_limited), flag(c.ok)]);
    }
    out.table("aprate_osc", osc);
    out.sum("k", m.k);
    out.sum("l", m.l);
    out.sum("osc_holds", flag(rep.osc_holds));
    out.sum("envelope_holds", flag(rep.envelope.holds));
    out.sum("cube_root_constant", rep.cube_root_envelope.constant);
    out.sum("cube_root_holds", flag(rep.cube_root_envelope.holds));
    out.sum("exponent", rep.fit.as_ref().map_or(f64::NAN, |f| f.exponent));
    Ok(out)
}
