use hjh_core::cell::{compute_kp, solve_cell_on, CellOptions};
use hjh_core::environment::{sample_field, Bump, HamiltonianModel, Medium, RandomField};
use hjh_core::grid::{dot, norm, sub, Grid, Vec2, Window};
use proptest::prelude::*;

const HW: f64 = 6.0;

fn opts() -> CellOptions {
    CellOptions { h: 0.125, half_width: Some(HW), ..CellOptions::default() }
}

fn bumps_field(bumps: &[Bump]) -> RandomField {
    let model = HamiltonianModel::h1(2, Medium::Bumps(bumps.to_vec()), None).unwrap();
    sample_field(&model, Window::centered(2, [0.0, 0.0], HW + 1.0), 0).unwrap()
}

fn bump() -> impl Strategy<Value = Bump> {
    ((-4.0f64..4.0), (-4.0f64..4.0), (0.1f64..1.0), (0.3f64..1.5))
        .prop_map(|(x, y, height, radius)| Bump { center: [x, y], height, radius })
}

fn slope() -> impl Strategy<Value = Vec2> {
    ((-1.0f64..1.0), (-1.0f64..1.0)).prop_map(|(a, b)| [a, b])
}

fn interior(g: &Grid) -> impl Iterator<Item = usize> + '_ {
    (0..g.len()).filter(|&k| norm(g.point(k)) <= HW / 3.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn larger_potentials_raise_the_discounted_solution(
        bumps in prop::collection::vec(bump(), 1..6),
        keep in 0usize..6,
        p in slope(),
        delta in 0.3f64..1.0,
    ) {
        // V_a >= V_b pointwise, so H_a <= H_b and delta v_a >= delta v_b.
        let keep = keep.min(bumps.len() - 1);
        let a = bumps_field(&bumps);
        let b = bumps_field(&bumps[..keep]);
        let g = Grid::centered(2, HW, 0.125).unwrap();
        let va = solve_cell_on(&a, p, delta, g, &opts()).unwrap();
        let vb = solve_cell_on(&b, p, delta, g, &opts()).unwrap();
        for k in 0..g.len() {
            prop_assert!(va.values[k] >= vb.values[k] - 1e-6, "node {k}: {} < {}", va.values[k], vb.values[k]);
        }
    }

    #[test]
    fn continuous_in_the_slope(bumps in prop::collection::vec(bump(), 1..4), p in slope(), q in slope(), delta in 0.3f64..1.0) {
        let field = bumps_field(&bumps);
        let g = Grid::centered(2, HW, 0.125).unwrap();
        let vp = solve_cell_on(&field, p, delta, g, &opts()).unwrap();
        let vq = solve_cell_on(&field, q, delta, g, &opts()).unwrap();
        // sup over |z| <= K of |H(p + z) - H(q + z)| for H = |.|^2 / 2 - V
        let k = compute_kp(&field, p).max(compute_kp(&field, q));
        let pq = sub(p, q);
        let bound = 0.5 * (dot(pq, [p[0] + q[0], p[1] + q[1]]).abs() + 2.0 * k * norm(pq));
        let tol = 1e-6 + 0.125 * k;
        for n in interior(&g) {
            let gap = delta * (vp.values[n] - vq.values[n]).abs();
            prop_assert!(gap <= bound + tol, "{gap} > {bound}");
        }
    }
}

#[test]
fn speed_model_scales_with_the_slope() {
    // For H = a(y) |p| the discounted problem is positively homogeneous in p.
    let model = HamiltonianModel::h2(1, 1.0, 2.0, Medium::Lattice { spacing: 0.5, amplitude: 1.0 }).unwrap();
    let field = sample_field(&model, Window::centered(1, [0.0, 0.0], 40.0), 9).unwrap();
    let o = CellOptions { h: 1.0 / 16.0, half_width: Some(30.0), ..CellOptions::default() };
    let g = Grid::centered(1, 30.0, 1.0 / 16.0).unwrap();
    let one = solve_cell_on(&field, [0.5, 0.0], 0.5, g, &o).unwrap();
    let two = solve_cell_on(&field, [1.0, 0.0], 0.5, g, &o).unwrap();
    for k in 0..g.len() {
        if g.point(k)[0].abs() <= 10.0 {
            assert!((two.values[k] - 2.0 * one.values[k]).abs() <= 1e-6 * (1.0 + two.values[k].abs()));
        }
    }
}
