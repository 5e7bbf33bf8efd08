use hjh_core::environment::{sample_field, HamiltonianModel, Medium};
use hjh_core::grid::{Grid, Window};
use hjh_core::hj_time::{hopf_lax_check, solve_hj_eps, solve_hj_hbar, HbarTable, InitialData, TimeOptions};
use hjh_core::metric::{solve_metric, Source};
use proptest::prelude::*;

fn poisson() -> Medium {
    Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 }
}

fn worst(errs: &[(f64, f64)]) -> f64 {
    errs.iter().map(|e| e.1).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn ordered_initial_data_stay_ordered(seed in 0u64..1000, k in 1.0f64..3.0, eps in 0.3f64..0.6) {
        // |x|^2/2 capped at slope k lies below k |x|, with the same Lipschitz constant.
        let model = HamiltonianModel::h1(1, poisson(), None).unwrap();
        let field = sample_field(&model, Window::centered(1, [0.0, 0.0], 200.0), seed).unwrap();
        let opts = TimeOptions { h: Some(eps / 8.0), region_radius: Some(1.0), ..TimeOptions::default() };
        let low = solve_hj_eps(&field, eps, &InitialData::Quad { k }, 1.0, &opts).unwrap();
        let high = solve_hj_eps(&field, eps, &InitialData::Cone { slope: k }, 1.0, &opts).unwrap();
        prop_assert_eq!(low.grid, high.grid);
        prop_assert_eq!(&low.times, &high.times);
        for (a, b) in low.frames.iter().zip(&high.frames) {
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x <= *y + 1e-12));
        }
    }
}

#[test]
fn upwind_error_halves_against_hopf_lax() {
    let table = HbarTable::from_fn(6.0, 601, |r| 0.5 * r * r).unwrap();
    let u0 = InitialData::Quad { k: 2.0 };
    let errs: Vec<f64> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
        .iter()
        .map(|&h| {
            let opts = TimeOptions { h: Some(h), region_radius: Some(1.0), ..TimeOptions::default() };
            let sol = solve_hj_hbar(&table, 1, &u0, 0.5, &opts).unwrap();
            worst(&hopf_lax_check(&sol, &table, &u0, 41).unwrap())
        })
        .collect();
    for w in errs.windows(2) {
        let r = w[0] / w[1];
        assert!((1.7..=2.3).contains(&r), "{errs:?}");
    }
}

#[test]
fn tabulated_poisson_hamiltonian_agrees_with_hopf_lax() {
    let model = HamiltonianModel::h1(1, poisson(), None).unwrap();
    let long = sample_field(&model, Window::centered(1, [0.0, 0.0], 2000.0), 4).unwrap();
    let g = Grid::centered(1, 2000.0, 1.0 / 16.0).unwrap();
    let coef = long.sample_on(&g).unwrap();
    let table = HbarTable::one_dimensional(&model, &coef, 6.0, 241).unwrap();
    let u0 = InitialData::Quad { k: 2.0 };
    let h = 1.0 / 32.0;
    let opts = TimeOptions { h: Some(h), region_radius: Some(1.0), ..TimeOptions::default() };
    let sol = solve_hj_hbar(&table, 1, &u0, 1.0, &opts).unwrap();
    let e = worst(&hopf_lax_check(&sol, &table, &u0, 41).unwrap());
    assert!(e <= 4.0 * h, "{e}");
}

/// Outermost radius along `e` at which `inside` still holds, scanned in steps of `step`.
fn front(g: &Grid, e: [f64; 2], step: f64, inside: &dyn Fn(usize) -> bool) -> f64 {
    let mut r = 0.0;
    while r < 3.0 {
        match g.nearest([r * e[0], r * e[1]]) {
            Ok(node) if inside(node) => r += step,
            _ => break,
        }
    }
    r
}

/// Largest gap between the zero set of `u(., t)` for `u0 = |x|` and the
/// reachable set `{m_1 <= t}` of the metric, over `directions`.
fn front_gap(dim: usize, h: f64, seed: u64, directions: &[[f64; 2]]) -> f64 {
    let model = HamiltonianModel::h2(dim, 1.0, 2.0, poisson()).unwrap();
    let field = sample_field(&model, Window::centered(dim, [0.0, 0.0], 12.0), seed).unwrap();
    let t = 1.0;
    let opts = TimeOptions { h: Some(h), region_radius: Some(3.0), frames: 1, ..TimeOptions::default() };
    let sol = solve_hj_eps(&field, 1.0, &InitialData::Cone { slope: 1.0 }, t, &opts).unwrap();
    let g = sol.grid;
    let m = solve_metric(&field, 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
    let u = &sol.frames.last().unwrap().values;
    directions
        .iter()
        .map(|&e| {
            let r_u = front(&g, e, 0.25 * h, &|n| u[n] <= 0.5 * h);
            let r_m = front(&g, e, 0.25 * h, &|n| m.values[n] <= t);
            (r_u - r_m).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn speed_model_front_follows_the_metric() {
    // For H = a(y)|p| and u0 = |x|, {u(., t) = 0} is the reachable set {m_1 <= t}.
    // The monotone scheme smears the kink at the front over a width O(sqrt(h t)).
    let axis = [[1.0, 0.0], [-1.0, 0.0]];
    let dirs: Vec<[f64; 2]> = (0..16)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / 16.0;
            [th.cos(), th.sin()]
        })
        .collect();
    for (dim, dirs) in [(1, &axis[..]), (2, &dirs[..])] {
        let coarse = front_gap(dim, 1.0 / 16.0, 21, dirs);
        let h = 1.0 / 64.0;
        let fine = front_gap(dim, h, 21, dirs);
        assert!(fine <= 2.0 * h + h.sqrt(), "d = {dim}: {fine}");
        assert!(fine < coarse, "d = {dim}: {fine} vs {coarse}");
    }
}
