use hjh_core::environment::{sample_field, HamiltonianModel, Medium, RandomField};
use hjh_core::grid::{dist, Grid, Window};
use hjh_core::metric::{fast_march, reachable_set, solve_metric, MetricSolution, Source, Stencil};
use proptest::prelude::*;

const H: f64 = 1.0 / 8.0;
const HW: f64 = 2.0;

fn lattice_field(seed: u64, speed_kind: bool) -> RandomField {
    let medium = Medium::Lattice { spacing: 0.5, amplitude: 1.0 };
    let model = if speed_kind {
        HamiltonianModel::h2(2, 1.0, 3.0, medium).unwrap()
    } else {
        HamiltonianModel::h1(2, medium, None).unwrap()
    };
    sample_field(&model, Window::centered(2, [0.0, 0.0], HW + 0.5), seed).unwrap()
}

fn grid() -> Grid {
    Grid::centered(2, HW, H).unwrap()
}

fn node(g: &Grid, i: usize, j: usize) -> usize {
    g.index(i.min(g.n[0] - 1), j.min(g.n[1] - 1))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn nonnegative_and_zero_exactly_on_the_source(seed in 0u64..1000, kind in any::<bool>(), mu in 0.2f64..3.0) {
        let g = grid();
        let sol = solve_metric(&lattice_field(seed, kind), mu, &Source::Point([0.0, 0.0]), &g).unwrap();
        prop_assert!(sol.values.iter().all(|&v| v >= 0.0));
        for &s in &sol.source_nodes {
            prop_assert_eq!(sol.values[s], 0.0);
        }
    }

    #[test]
    fn subadditive_up_to_discretization(seed in 0u64..1000, kind in any::<bool>(), a in (0usize..33, 0usize..33), b in (0usize..33, 0usize..33), c in (0usize..33, 0usize..33)) {
        let g = grid();
        let field = lattice_field(seed, kind);
        let (x, y, z) = (node(&g, a.0, a.1), node(&g, b.0, b.1), node(&g, c.0, c.1));
        let from_x = solve_metric(&field, 1.0, &Source::Point(g.point(x)), &g).unwrap();
        let from_z = from_x.resolve(z);
        let slack = 4.0 * H * from_x.f_max;
        prop_assert!(from_x.values[y] <= from_z.values[y] + from_x.values[z] + slack);
    }

    #[test]
    fn symmetric_for_even_hamiltonians(seed in 0u64..1000, kind in any::<bool>(), a in (4usize..29, 4usize..29), b in (4usize..29, 4usize..29)) {
        let g = grid();
        let field = lattice_field(seed, kind);
        let (x, y) = (node(&g, a.0, a.1), node(&g, b.0, b.1));
        let from_x = solve_metric(&field, 1.0, &Source::Point(g.point(x)), &g).unwrap();
        let from_y = from_x.resolve(y);
        let tol = 4.0 * H * from_x.f_max;
        prop_assert!((from_x.values[y] - from_y.values[x]).abs() <= tol);
    }

    #[test]
    fn faster_media_give_smaller_metrics(seed in 0u64..1000, scale in 1.0f64..2.0) {
        // Discrete comparison: raising the slowness pointwise raises every value.
        let g = grid();
        let sol = solve_metric(&lattice_field(seed, false), 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
        let heavier: Vec<f64> = sol.speeds.iter().enumerate().map(|(k, f)| f * (1.0 + (scale - 1.0) * ((k % 7) as f64 / 6.0))).collect();
        let other = fast_march(&g, &heavier, &sol.source_nodes);
        let plain = fast_march(&g, &sol.speeds, &sol.source_nodes);
        prop_assert!(plain.iter().zip(&other).all(|(a, b)| *a <= *b + 1e-12));
    }

    #[test]
    fn reachable_sets_are_nested(seed in 0u64..1000, t1 in 0.0f64..2.0, dt in 0.0f64..2.0) {
        let g = grid();
        let sol = solve_metric(&lattice_field(seed, true), 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
        let small = reachable_set(&sol, t1);
        let big = reachable_set(&sol, t1 + dt);
        prop_assert!(small.iter().zip(&big).all(|(s, b)| !*s || *b));
        prop_assert!(sol.source_nodes.iter().all(|&k| small[k]));
    }

    #[test]
    fn fast_marching_tracks_the_sixteen_neighbour_oracle(seed in 0u64..1000, kind in any::<bool>()) {
        let g = grid();
        let sol = solve_metric(&lattice_field(seed, kind), 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
        let oracle = sol.oracle(Stencil::Sixteen);
        let c = Stencil::Sixteen.metrication_constant(2);
        // Within a few cells of the source the ray initialisation dominates.
        for k in 0..g.len() {
            let r = dist(g.point(k), [0.0, 0.0]);
            if r >= 8.0 * H {
                prop_assert!((sol.values[k] - oracle[k]).abs() <= (c + 0.1) * oracle[k], "node {k}: {} vs {}", sol.values[k], oracle[k]);
            }
        }
    }
}

#[test]
fn raising_mu_adds_a_linear_margin() {
    let g = grid();
    for seed in 0..6 {
        let field = lattice_field(seed, seed % 2 == 0);
        let high = solve_metric(&field, 1.5, &Source::Point([0.0, 0.0]), &g).unwrap();
        let low = solve_metric(&field, 0.75, &Source::Point([0.0, 0.0]), &g).unwrap();
        let gap = high.speeds.iter().zip(&low.speeds).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
        assert!(gap > 0.0);
        let tol = 2.0 * H * high.f_max + high.snapping_error();
        for k in 0..g.len() {
            let d = dist(g.point(k), [0.0, 0.0]);
            assert!(high.values[k] - low.values[k] >= gap * d - tol, "seed {seed} node {k}");
        }
    }
}

#[test]
fn one_dimensional_error_halves_with_h() {
    // V(y) = sin^2(pi y) at level 1: m(1) = int_0^1 sqrt(2 (1 + sin^2(pi s))) ds.
    let exact = 1.719_693_2;
    let model = HamiltonianModel::periodic(1, 1.0).unwrap();
    let field = sample_field(&model, Window::centered(1, [0.0, 0.0], 2.0), 0).unwrap();
    let errs: Vec<f64> = [128usize, 256, 512]
        .iter()
        .map(|&cells| {
            let g = Grid::cell_centered(1, [-0.5, 0.0], [1.5, 0.0], cells).unwrap();
            let sol = solve_metric(&field, 1.0, &Source::Point([0.0, 0.0]), &g).unwrap();
            (sol.at([1.0, 0.0]).unwrap() - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let r = w[0] / w[1];
        assert!((1.7..=2.3).contains(&r), "{errs:?}");
    }
}

#[test]
fn ball_sources_match_the_minimum_over_points() {
    let g = grid();
    let field = lattice_field(3, true);
    let ball = solve_metric(&field, 1.0, &Source::Ball { center: [0.0, 0.0], radius: 0.5 }, &g).unwrap();
    let direct = MetricSolution::from_speeds(g, ball.speeds.clone(), 1.0, ball.source_nodes.clone(), false);
    assert_eq!(ball.values, direct.values);
    for &s in &ball.source_nodes {
        assert!(dist(g.point(s), [0.0, 0.0]) <= 0.5 + 1e-12);
        assert_eq!(ball.values[s], 0.0);
    }
}
