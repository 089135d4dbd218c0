//! Property tests for the discrete operators, the solvers and the file
//! formats.

mod common;

use cdii::field::{divergence, gradient, BoundaryTrace, Grid, ScalarField, Shape, VectorField};
use cdii::forward::{solve_forward, solve_limit, Contrast, ForwardProblem};
use cdii::io::{field_from_cdf, field_to_cdf, geometry_from_cdf, geometry_to_cdf};
use cdii::least_gradient::{
    minimize_weighted_gradient, reconstruct, truncate, weighted_tv, ComponentLabel, SolverParams,
    Thresholds,
};
use cdii::synthesis::example_phantom;
use cdii::verify::{coarea_check, level_set_area};
use common::{full_square, random_pair, reference_tv, rng, serial};
use proptest::prelude::*;
use rand::Rng;

fn grid_and_values() -> impl Strategy<Value = (usize, usize, Vec<Option<f64>>)> {
    (3usize..10, 3usize..10).prop_flat_map(|(nx, ny)| {
        (
            Just(nx),
            Just(ny),
            prop::collection::vec(prop::option::weighted(0.8, -5.0f64..5.0), nx * ny),
        )
    })
}

fn field(nx: usize, ny: usize, h: f64, vals: &[Option<f64>]) -> ScalarField {
    let g = Grid::new(nx, ny, h, (0.0, 0.0)).unwrap();
    ScalarField::from_values(g, vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_and_divergence_are_adjoint((nx, ny, vals) in grid_and_values(), h in 0.01f64..1.0, seed in any::<u64>()) {
        let u = field(nx, ny, h, &vals);
        let du = gradient(&u);
        let mut p = VectorField::zeros(u.grid);
        p.x_active.clone_from(&du.x_active);
        p.y_active.clone_from(&du.y_active);
        let mut r = rng(seed);
        p.fx.iter_mut().for_each(|v| *v = r.gen_range(-3.0..3.0));
        p.fy.iter_mut().for_each(|v| *v = r.gen_range(-3.0..3.0));
        let lhs = du.dot(&p);
        let rhs = -u.dot(&divergence(&p));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn truncation_lands_in_the_unit_interval_and_is_monotone(
        (nx, ny, vals) in grid_and_values(), lambda in -5.0f64..5.0, eps in 1e-3f64..3.0,
    ) {
        let u = field(nx, ny, 0.1, &vals);
        let t = truncate(&u, lambda, eps);
        prop_assert_eq!(&t.defined, &u.defined);
        for k in 0..u.grid.len() {
            if let Some(x) = t.get(k) {
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert_eq!(x == 0.0, u.values[k] <= lambda);
                prop_assert_eq!(x == 1.0, u.values[k] >= lambda + eps);
            }
        }
        for k in 0..u.grid.len() {
            for m in 0..u.grid.len() {
                if u.defined[k] && u.defined[m] && u.values[k] <= u.values[m] {
                    prop_assert!(t.values[k] <= t.values[m]);
                }
            }
        }
    }

    #[test]
    fn weighted_tv_is_homogeneous_and_blind_to_constants(
        n in 3usize..9, c in -4.0f64..4.0, shift in -10.0f64..10.0, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let geo = full_square(n);
        let g = geo.grid;
        let a = ScalarField::from_values(g, (0..g.len()).map(|_| r.gen_range(0.0..2.0)).collect()).unwrap();
        let v = ScalarField::from_values(g, (0..g.len()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let base = weighted_tv(&a, &v, &geo.omega);
        prop_assert!((base - reference_tv(&a.values, &v.values, n, g.h)).abs() <= 1e-12 * (1.0 + base));
        let scaled = ScalarField::from_values(g, v.values.iter().map(|x| c * x).collect()).unwrap();
        prop_assert!((weighted_tv(&a, &scaled, &geo.omega) - c.abs() * base).abs() <= 1e-12 * (1.0 + base));
        let shifted = ScalarField::from_values(g, v.values.iter().map(|x| x + shift).collect()).unwrap();
        prop_assert!((weighted_tv(&a, &shifted, &geo.omega) - base).abs() <= 1e-10 * (1.0 + base));
        let doubled = ScalarField::from_values(g, a.values.iter().map(|x| 2.0 * x).collect()).unwrap();
        prop_assert!((weighted_tv(&doubled, &v, &geo.omega) - 2.0 * base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn cdf_round_trip_is_exact((nx, ny, vals) in grid_and_values(), h in 1e-4f64..10.0, ox in -5.0f64..5.0) {
        let g = Grid::new(nx, ny, h, (ox, -ox)).unwrap();
        let u = ScalarField::from_values(g, vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).unwrap();
        let text = field_to_cdf(&u);
        let back = field_from_cdf(&text).unwrap();
        prop_assert_eq!(back.grid, g);
        prop_assert_eq!(&back.defined, &u.defined);
        for k in 0..g.len() {
            prop_assert!(!u.defined[k] || back.values[k].to_bits() == u.values[k].to_bits());
        }
        prop_assert_eq!(field_to_cdf(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Marching squares only sees which side of the level each node is on:
    /// a strictly increasing reparameterisation cuts the same cells, and an
    /// affine one also reproduces the crossing points.
    #[test]
    fn level_sets_follow_monotone_reparameterisation(seed in any::<u64>(), t in 0.1f64..0.9) {
        let mut r = rng(seed);
        let (kx, ky, ph) = (r.gen_range(0.5..2.0), r.gen_range(0.5..2.0), r.gen_range(0.0..1.0));
        let g = Grid::new(41, 41, 0.025, (0.0, 0.0)).unwrap();
        let a = ScalarField::from_fn(g, |x, y| 1.0 + x * y);
        let u = ScalarField::from_fn(g, |x, y| (kx * x + ph).sin() + (ky * y).cos() * 0.5 + 0.01 * x * y);
        let (lo, hi) = u.range().unwrap();
        let lambda = lo + t * (hi - lo);
        let base = level_set_area(&a, &u, lambda).unwrap();

        let phi = |s: f64| s * s * s + 2.0 * s;
        let warped = ScalarField::from_values(g, u.values.iter().map(|&s| phi(s)).collect()).unwrap();
        let w = level_set_area(&a, &warped, phi(lambda)).unwrap();
        prop_assert_eq!(w.segments.len(), base.segments.len());
        prop_assert!((w.length() - base.length()).abs() <= 0.01 * base.length());

        let affine = ScalarField::from_values(g, u.values.iter().map(|&s| 3.0 * s - 7.0).collect()).unwrap();
        let f = level_set_area(&a, &affine, 3.0 * lambda - 7.0).unwrap();
        prop_assert_eq!(f.segments.len(), base.segments.len());
        prop_assert!((f.area - base.area).abs() <= 1e-9 * base.area.max(1.0));
    }

    #[test]
    fn geometry_round_trip(n in 9usize..40, cx in -0.3f64..0.3, r1 in 0.1f64..0.3) {
        let geo = cdii::field::build_geometry(
            &Shape::Disc { center: (0.0, 0.0), radius: 1.0 },
            &[
                cdii::field::InclusionSpec::perfect(Shape::Disc { center: (cx, 0.4), radius: r1 }),
                cdii::field::InclusionSpec::insulating(Shape::Disc { center: (cx, -0.45), radius: 0.2 }),
            ],
            n,
        );
        if let Ok(geo) = geo {
            let back = geometry_from_cdf(&geometry_to_cdf(&geo)).unwrap();
            prop_assert_eq!(back, geo);
        }
    }

    /// Forward solutions respect the extreme values of the trace.
    #[test]
    fn forward_solutions_obey_the_maximum_principle(seed in any::<u64>(), n in 6usize..16, contrast in prop::option::of(1.0f64..1e4)) {
        let mut r = rng(seed);
        let geo = cdii::field::build_geometry(
            &Shape::Rect { min: (0.0, 0.0), max: (1.0, 1.0) },
            &[cdii::field::InclusionSpec::perfect(Shape::Rect { min: (0.35, 0.35), max: (0.65, 0.65) })],
            n,
        ).unwrap();
        let g = geo.grid;
        let sigma = ScalarField::from_values(g, (0..g.len()).map(|_| r.gen_range(0.1..10.0)).collect()).unwrap().restricted(&geo.background());
        let sigma1 = ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0);
        let vals: Vec<f64> = (0..g.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = BoundaryTrace::from_field(&geo, &ScalarField::from_values(g, vals).unwrap()).unwrap();
        let contrast = contrast.map_or(Contrast::Infinite, Contrast::Finite);
        let p = ForwardProblem::new(geo.clone(), sigma, sigma1, contrast, f.clone()).unwrap();
        let sol = if contrast.is_infinite() { solve_limit(&p) } else { solve_forward(&p) }.unwrap();
        let (lo, hi) = f.range();
        for k in 0..g.len() {
            if let Some(v) = sol.u.get(k) {
                prop_assert!(v >= lo - 1e-8 && v <= hi + 1e-8, "u = {v} outside [{lo}, {hi}]");
            }
        }
    }
}

/// The minimiser beats random perturbations that keep its trace.
#[test]
fn minimiser_beats_perturbations_with_the_same_trace() {
    let _g = serial();
    let mut r = rng(31);
    for _ in 0..3 {
        let pair = random_pair(8, &mut r);
        let gap_tol = 1e-7;
        let res = minimize_weighted_gradient(
            &pair,
            &SolverParams {
                gap_tol,
                ..Default::default()
            },
        )
        .unwrap();
        let omega = &pair.geometry.omega;
        let best = weighted_tv(&pair.a, &res.u, omega);
        let g = pair.geometry.grid;
        for _ in 0..20 {
            let scale = r.gen_range(1e-3..0.5);
            let v: Vec<f64> = (0..g.len())
                .map(|k| {
                    res.u.values[k]
                        + if g.on_edge(k) {
                            0.0
                        } else {
                            scale * r.gen_range(-1.0..1.0)
                        }
                })
                .collect();
            let v = ScalarField::from_values(g, v).unwrap();
            let other = weighted_tv(&pair.a, &v, omega);
            assert!(
                best <= other + gap_tol * best,
                "F(u*) = {best} > F(v) = {other}"
            );
        }
    }
}

/// Truncations of the minimiser are minimisers for their own trace, so a
/// perturbation vanishing on the boundary cannot lower their functional.
#[test]
fn truncations_of_the_minimiser_stay_minimal() {
    let _g = serial();
    let mut r = rng(32);
    let pair = random_pair(8, &mut r);
    let res = minimize_weighted_gradient(
        &pair,
        &SolverParams {
            gap_tol: 1e-9,
            max_iters: 2_000_000,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(res.converged);
    let omega = &pair.geometry.omega;
    let g = pair.geometry.grid;
    let (lo, hi) = res.u.range().unwrap();
    let total = weighted_tv(&pair.a, &res.u, omega);
    for _ in 0..30 {
        let lambda = r.gen_range(lo..hi);
        let eps = r.gen_range(0.02..0.5) * (hi - lo);
        let t = truncate(&res.u, lambda, eps);
        let base = weighted_tv(&pair.a, &t, omega);
        let w: Vec<f64> = (0..g.len())
            .map(|k| {
                res.u.values[k]
                    + if g.on_edge(k) {
                        0.0
                    } else {
                        0.2 * r.gen_range(-1.0..1.0)
                    }
            })
            .collect();
        let perturbed = truncate(&ScalarField::from_values(g, w).unwrap(), lambda, eps);
        let other = weighted_tv(&pair.a, &perturbed, omega);
        // The truncation inherits the gap of the full minimiser, scaled by 1/ε.
        let tol = 1e-9 * total / eps;
        assert!(
            base <= other + tol,
            "λ={lambda} ε={eps}: {base} > {other} + {tol}"
        );
    }
}

/// On every component labelled perfect the recovered potential is flat.
#[test]
fn perfect_components_are_flat() {
    let _g = serial();
    let ph = example_phantom(101).unwrap();
    let th = Thresholds::defaults(&ph.pair);
    let (res, _) = reconstruct(&ph.pair, &SolverParams::default(), &th).unwrap();
    let perfect: Vec<_> = res
        .decomposition
        .components
        .iter()
        .filter(|c| c.label == ComponentLabel::Perfect)
        .collect();
    assert!(!perfect.is_empty());
    for c in perfect {
        let vals: Vec<f64> = c.nodes.iter().map(|&k| res.u.values[k]).collect();
        let spread = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread <= th.eps_u, "spread {spread} > eps_u {}", th.eps_u);
    }
}

/// The primal energy oscillates while the dual catches up; smoothed over 200
/// iterations it decreases, and over the last tenth of the run it rises by
/// no more than the stopping gap allows.
#[test]
fn energy_history_settles() {
    let _g = serial();
    let ph = example_phantom(101).unwrap();
    let params = SolverParams::default();
    let res = minimize_weighted_gradient(&ph.pair, &params).unwrap();
    assert!(res.converged);
    let per_sample = params.check_every;
    assert!(res.energy_smoothly_decreasing(200 / per_sample, 1e-4));
    let e = &res.energy_history;
    let tail = &e[e.len() - e.len() / 10..];
    let rise = tail
        .windows(2)
        .map(|w| (w[1] - w[0]) / e[0])
        .fold(0.0, f64::max);
    assert!(rise <= 10.0 * params.gap_tol, "late rise {rise:e}");
}

/// The co-area residual of a smooth field shrinks as the lattice is refined
/// (each step may lag the previous one by at most 10%).
#[test]
fn coarea_residual_shrinks_under_refinement() {
    let _g = serial();
    let residuals: Vec<f64> = [101usize, 201, 401]
        .iter()
        .map(|&n| {
            let g = Grid::new(n, n, 2.0 / (n - 1) as f64, (-1.0, -1.0)).unwrap();
            let a = ScalarField::from_fn(g, |x, y| 1.0 + 0.5 * (x * y).sin());
            let u = ScalarField::from_fn(g, |x, y| x * x + 0.5 * y * y + 0.3 * x * y);
            coarea_check(&a, &u, 200).unwrap().residual
        })
        .collect();
    for w in residuals.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "residuals {residuals:?}");
    }
}
