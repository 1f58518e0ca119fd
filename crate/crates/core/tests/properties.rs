//! Exact inequalities checked on random inputs.

use std::sync::Arc;

use homlab_core::kernels::{
    cutoff, cutoff_field, gaussian_step, holder_quotient, scaled_holder_norm, solve_localized,
    solve_quenched,
};
use homlab_core::renorm::FourierField;
use homlab_core::rng::{hash_words, unit_f64};
use homlab_core::environment::sample_environment;
use homlab_core::{Cube, EnvironmentSpec, Grid, GridField, SolverParams};
use proptest::prelude::*;

const SLACK: f64 = 1e-9;

fn rough_field(grid: &Grid, amp: f64, seed: u64) -> GridField {
    let mut k = 0u64;
    GridField::from_fn(grid.clone(), |_| {
        k += 1;
        amp * (2.0 * unit_f64(hash_words(seed, &[k])) - 1.0)
    })
}

fn smooth_field(grid: &Grid, length: f64, seed: u64) -> GridField {
    FourierField::sample(grid.dim(), 12, length, seed).on_grid(grid)
}

fn random_field(grid: &Grid, rough: bool, seed: u64) -> GridField {
    if rough {
        rough_field(grid, 1.0, seed)
    } else {
        smooth_field(grid, 1.5, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quenched_solve_contracts_sup_norm(seed in any::<u64>(), eta in 0.0f64..0.15, t in 0.1f64..1.5, rough: bool) {
        let spec = Arc::new(EnvironmentSpec::new(2, eta, 1));
        let env = sample_environment(&spec, seed, Cube::centered(2, 14.0)).unwrap();
        let grid = Grid::cube(vec![0.0, 0.0], 10.0, 0.5).unwrap();
        let f = random_field(&grid, rough, seed ^ 7);
        let params = SolverParams::new(0.5);
        let u = solve_quenched(&env, &f, t, &params).unwrap();
        prop_assert!(u.sup_norm() <= f.sup_norm());
        prop_assert!(u.max() <= f.max() && u.min() >= f.min());
        let loc = solve_localized(&env, &f, t, 3.0, &[0.0, 0.0], &params).unwrap();
        prop_assert!(loc.sup_norm() <= f.sup_norm());
    }

    #[test]
    fn holder_norm_of_product(seed in any::<u64>(), l in 0.5f64..3.0, beta in 0.01f64..0.5, rough: bool) {
        let grid = Grid::cube(vec![0.0, 0.0], 4.0, 0.25).unwrap();
        let f = random_field(&grid, rough, seed);
        let g = random_field(&grid, !rough, seed.wrapping_add(1));
        let fg = f.mul(&g).unwrap();
        let lhs = scaled_holder_norm(&fg, l, beta);
        let rhs = scaled_holder_norm(&f, l, beta) * scaled_holder_norm(&g, l, beta);
        prop_assert!(lhs <= rhs * (1.0 + SLACK), "{lhs} > {rhs}");
    }

    #[test]
    fn holder_norm_of_patched_field(seed in any::<u64>(), beta in 0.01f64..0.5, patches in 1usize..5) {
        // f = φ·χ supported in the union of balls B(x_i, 10 L); g_i agrees with
        // f on B(x_i, 20 L) and vanishes further out
        let l = 1.0;
        let grid = Grid::cube(vec![0.0], 70.0, 0.5).unwrap();
        let phi = random_field(&grid, seed % 2 == 0, seed);
        let centers: Vec<f64> = (0..patches).map(|i| -18.0 + 12.0 * i as f64).collect();
        let (lo, hi) = (centers[0] - 8.0, centers[patches - 1] + 8.0);
        let f = GridField::from_fn(grid.clone(), |y| {
            let inside = (y[0] - lo).min(hi - y[0]);
            phi.at(y).unwrap() * (inside / 4.0).clamp(0.0, 1.0)
        });
        let mut worst: f64 = 0.0;
        for &c in &centers {
            let g = GridField::from_fn(grid.clone(), |y| {
                if (y[0] - c).abs() <= 20.0 * l { f.at(y).unwrap() } else { 0.0 }
            });
            worst = worst.max(scaled_holder_norm(&g, l, beta));
        }
        prop_assert!(scaled_holder_norm(&f, l, beta) <= 3.0 * worst * (1.0 + SLACK));
    }

    #[test]
    fn gaussian_step_preserves_constants_and_contracts(seed in any::<u64>(), s in 0.05f64..2.0, beta in 0.01f64..0.5, rough: bool, c in -3.0f64..3.0) {
        let grid = Grid::cube(vec![0.0, 0.0], 10.0, 0.25).unwrap();
        let l = s.sqrt();
        let k = gaussian_step(&GridField::constant(grid.clone(), c), s).unwrap();
        prop_assert!(k.values.iter().all(|v| (v - c).abs() <= SLACK * c.abs().max(1.0)));
        let f = random_field(&grid, rough, seed);
        let g = gaussian_step(&f, s).unwrap();
        let lhs = scaled_holder_norm(&g, l, beta);
        let rhs = scaled_holder_norm(&f, l, beta);
        prop_assert!(lhs <= rhs + SLACK, "{lhs} > {rhs}");
        prop_assert!(holder_quotient(&g, l, beta) <= holder_quotient(&f, l, beta) + SLACK);
    }

    #[test]
    fn cutoff_values_lie_in_unit_interval(v in 0.1f64..10.0, x in -5.0f64..5.0, y in -5.0f64..5.0, r in -1.0f64..100.0) {
        let c = cutoff(r);
        prop_assert!((0.0..=1.0).contains(&c));
        let grid = Grid::cube(vec![0.0, 0.0], 6.0, 0.5).unwrap();
        let chi = cutoff_field(v, &[x, y], &grid).unwrap();
        prop_assert!(chi.values.iter().all(|w| (0.0..=1.0).contains(w)));
        for (n, w) in chi.values.iter().enumerate() {
            let p = grid.point(n);
            let dist = ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt();
            if dist <= v { prop_assert_eq!(*w, 1.0); }
            if dist >= 2.0 * v { prop_assert_eq!(*w, 0.0); }
        }
    }
}

#[test]
fn cutoff_ramp_values() {
    let grid = Grid::cube(vec![0.0], 4.0, 0.5).unwrap();
    let chi = cutoff_field(1.0, &[0.0], &grid).unwrap();
    assert_eq!(chi.at(&[0.0]).unwrap(), 1.0);
    assert_eq!(chi.at(&[1.5]).unwrap(), 0.5);
    assert_eq!(chi.at(&[2.0]).unwrap(), 0.0);
}
