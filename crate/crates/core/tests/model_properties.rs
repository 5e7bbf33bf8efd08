use hjh_core::effective::hbar_1d;
use hjh_core::environment::{check_assumptions, eval_h, sample_field, HamiltonianModel, Medium};
use hjh_core::grid::{Grid, Window};
use hjh_core::output::fmt_f64;
use hjh_core::seeds::replica_seed;
use hjh_core::stats::rate_fit;
use proptest::prelude::*;
use std::sync::OnceLock;

fn models(dim: usize) -> &'static [HamiltonianModel] {
    static CACHE: [OnceLock<Vec<HamiltonianModel>>; 2] = [OnceLock::new(), OnceLock::new()];
    CACHE[dim - 1].get_or_init(|| build_models(dim))
}

fn build_models(dim: usize) -> Vec<HamiltonianModel> {
    let poisson = Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 };
    let lattice = Medium::Lattice { spacing: 1.0 / 3.0, amplitude: 1.0 };
    vec![
        HamiltonianModel::h1(dim, poisson.clone(), None).unwrap(),
        HamiltonianModel::h1(dim, lattice.clone(), None).unwrap(),
        HamiltonianModel::h2(dim, 1.0, 2.0, poisson).unwrap(),
        HamiltonianModel::h2(dim, 0.5, 3.0, lattice).unwrap(),
        HamiltonianModel::periodic(dim, 1.0).unwrap(),
        HamiltonianModel::quasi_periodic(dim, 1.0).unwrap(),
        HamiltonianModel::slow_rate(dim, HamiltonianModel::power_rho(1.0), 1.0 / 3.0).unwrap(),
    ]
}

proptest! {
    #[test]
    fn eikonal_speed_solves_the_level_equation(which in 0usize..7, seed in 0u64..1000, y in (-5.0f64..5.0, -5.0f64..5.0), angle in 0.0f64..6.3, mu in 0.01f64..4.0) {
        let model = &models(2)[which];
        let field = sample_field(model, Window::centered(2, [0.0, 0.0], 6.0), seed).unwrap();
        let c = field.coefficient([y.0, y.1]).unwrap();
        let f = model.speed(c, mu);
        let p = [f * angle.cos(), f * angle.sin()];
        let h = eval_h(&field, p, [y.0, y.1]).unwrap();
        prop_assert!((h - mu).abs() <= 1e-10 * mu.max(1.0), "{h} vs {mu}");
    }

    #[test]
    fn realizations_are_pure_functions_of_seed_and_point(which in 0usize..7, seed in 0u64..1000, y in (-3.0f64..3.0, -3.0f64..3.0), grow in 0.0f64..20.0) {
        let model = &models(2)[which];
        let a = sample_field(model, Window::centered(2, [0.0, 0.0], 4.0), seed).unwrap();
        let b = sample_field(model, Window::centered(2, [1.0, -1.0], 4.0 + grow), seed).unwrap();
        prop_assert_eq!(a.coefficient([y.0, y.1]).unwrap().to_bits(), b.coefficient([y.0, y.1]).unwrap().to_bits());
    }

    #[test]
    fn floats_survive_the_csv_format(x in any::<f64>()) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        if x.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn replica_seeds_do_not_depend_on_the_replica_count(base in any::<u64>(), n in 1u64..50, extra in 1u64..50) {
        let short: Vec<u64> = (0..n).map(|i| replica_seed(base, "fluct", i)).collect();
        let long: Vec<u64> = (0..n + extra).map(|i| replica_seed(base, "fluct", i)).collect();
        prop_assert_eq!(&short[..], &long[..n as usize]);
    }

    #[test]
    fn rate_fit_recovers_power_laws(exponent in -2.0f64..2.0, constant in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05].iter().map(|&s: &f64| (s, constant * s.powf(exponent))).collect();
        let fit = rate_fit(&pts, None).unwrap();
        prop_assert!((fit.exponent - exponent).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_hbar_is_even_nonnegative_and_quasiconvex(which in 0usize..7, seed in 0u64..100, p in -3.0f64..3.0, q in -3.0f64..3.0) {
        let model = &models(1)[which];
        let field = sample_field(model, Window::centered(1, [0.0, 0.0], 50.0), seed).unwrap();
        let coef = field.sample_on(&Grid::centered(1, 50.0, 1.0 / 16.0).unwrap()).unwrap();
        let hp = hbar_1d(model, p, &coef);
        let hq = hbar_1d(model, q, &coef);
        let mid = hbar_1d(model, 0.5 * (p + q), &coef);
        prop_assert!(hp >= -1e-12);
        prop_assert!((hp - hbar_1d(model, -p, &coef)).abs() <= 1e-9 * (1.0 + hp));
        prop_assert!(mid <= hp.max(hq) + 1e-9 * (1.0 + hp.max(hq)));
    }
}

#[test]
fn shipped_models_pass_the_assumption_probes() {
    for dim in [1, 2] {
        for model in models(dim) {
            let field = sample_field(model, Window::centered(dim, [0.0, 0.0], 5.0), 17).unwrap();
            let report = check_assumptions(&field, 200, 3);
            assert!(report.level_set_convex && report.coercive && report.lipschitz, "{:?}: {:?}", model.kind, report.failures);
        }
    }
}

#[test]
fn speed_hbar_is_positively_homogeneous() {
    let model = HamiltonianModel::h2(1, 1.0, 2.0, Medium::Poisson { intensity: 1.0, height: 1.0, radius: 0.4 }).unwrap();
    let field = sample_field(&model, Window::centered(1, [0.0, 0.0], 500.0), 2).unwrap();
    let coef = field.sample_on(&Grid::centered(1, 500.0, 1.0 / 16.0).unwrap()).unwrap();
    for p in [0.3, 1.0, 2.5] {
        let base = hbar_1d(&model, p, &coef);
        for t in [0.5, 2.0] {
            assert!((hbar_1d(&model, t * p, &coef) - t * base).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
