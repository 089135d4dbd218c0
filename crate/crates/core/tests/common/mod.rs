//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use cdii::field::{build_geometry, BoundaryTrace, Grid, InclusionGeometry, ScalarField, Shape};
use cdii::forward::{Contrast, ForwardProblem};
use cdii::least_gradient::{reconstruct, ReconstructionResult, SolverParams, Thresholds};
use cdii::synthesis::{example_phantom, AdmissiblePair, ExamplePhantom, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Serialises tests that time themselves or share the machine's one core.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct ExampleRun {
    pub phantom: ExamplePhantom,
    pub thresholds: Thresholds,
    pub result: ReconstructionResult,
    pub clipped: usize,
    /// Wall time of minimisation, decomposition, labelling and recovery.
    pub seconds: f64,
}

/// The disc example at n = 201 with gap tolerance 1e-7, computed once.
pub fn example_run() -> &'static ExampleRun {
    static RUN: OnceLock<ExampleRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let phantom = example_phantom(201).unwrap();
        let thresholds = Thresholds::defaults(&phantom.pair);
        let params = SolverParams {
            gap_tol: 1e-7,
            ..Default::default()
        };
        let start = Instant::now();
        let (result, clipped) = reconstruct(&phantom.pair, &params, &thresholds).unwrap();
        let seconds = start.elapsed().as_secs_f64();
        ExampleRun {
            phantom,
            thresholds,
            result,
            clipped,
            seconds,
        }
    })
}

/// `n × n` lattice on the unit square, every node in Ω.
pub fn full_square(n: usize) -> InclusionGeometry {
    let g = Grid::new(n, n, 1.0 / (n - 1) as f64, (0.0, 0.0)).unwrap();
    InclusionGeometry::plain(g, vec![true; n * n]).unwrap()
}

/// Random instance on the full square: `a ∈ [0.1, 2]`, edge values in `[-1, 1]`.
pub fn random_pair(n: usize, rng: &mut ChaCha8Rng) -> AdmissiblePair {
    let geo = full_square(n);
    let g = geo.grid;
    let a: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.1..2.0)).collect();
    let f: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let trace = BoundaryTrace::from_field(&geo, &ScalarField::from_values(g, f).unwrap()).unwrap();
    AdmissiblePair::new(
        trace,
        ScalarField::from_values(g, a).unwrap(),
        geo,
        Provenance::Loaded,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference value of the discrete functional on the full `n × n` square,
/// written out independently: `h/2 Σ a_k (|Δ⁺v_k| + |Δ⁻v_k|)` with one-sided
/// differences that would leave the square set to zero.
pub fn reference_tv(a: &[f64], v: &[f64], n: usize, h: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let fx = if i + 1 < n { v[k + 1] - v[k] } else { 0.0 };
            let fy = if j + 1 < n { v[k + n] - v[k] } else { 0.0 };
            let bx = if i > 0 { v[k] - v[k - 1] } else { 0.0 };
            let by = if j > 0 { v[k] - v[k - n] } else { 0.0 };
            acc += a[k] * (fx.hypot(fy) + bx.hypot(by));
        }
    }
    0.5 * h * acc
}

fn reference_subgradient(a: &[f64], v: &[f64], n: usize, g: &mut [f64]) {
    g.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let fx = if i + 1 < n { v[k + 1] - v[k] } else { 0.0 };
            let fy = if j + 1 < n { v[k + n] - v[k] } else { 0.0 };
            let r = fx.hypot(fy);
            if r > 0.0 {
                let (cx, cy) = (a[k] * fx / r, a[k] * fy / r);
                if i + 1 < n {
                    g[k + 1] += cx;
                    g[k] -= cx;
                }
                if j + 1 < n {
                    g[k + n] += cy;
                    g[k] -= cy;
                }
            }
            let bx = if i > 0 { v[k] - v[k - 1] } else { 0.0 };
            let by = if j > 0 { v[k] - v[k - n] } else { 0.0 };
            let r = bx.hypot(by);
            if r > 0.0 {
                let (cx, cy) = (a[k] * bx / r, a[k] * by / r);
                if i > 0 {
                    g[k] += cx;
                    g[k - 1] -= cx;
                }
                if j > 0 {
                    g[k] += cy;
                    g[k - n] -= cy;
                }
            }
        }
    }
}

/// Projected subgradient descent on the interior values with normalised
/// steps decaying geometrically from 0.5 to 1e-9; returns the best value.
pub fn subgradient_oracle(pair: &AdmissiblePair, iterations: usize) -> f64 {
    let g = pair.geometry.grid;
    let n = g.nx;
    assert_eq!(g.ny, n);
    let a = &pair.a.values;
    let edge: Vec<bool> = (0..g.len()).map(|k| g.on_edge(k)).collect();
    let mut v: Vec<f64> = (0..g.len())
        .map(|k| pair.f.value_at(k).unwrap_or(0.0))
        .collect();
    let mut best = reference_tv(a, &v, n, g.h);
    let mut grad = vec![0.0; g.len()];
    let (t0, t1): (f64, f64) = (0.5, 1e-9);
    for it in 0..iterations {
        reference_subgradient(a, &v, n, &mut grad);
        for k in 0..g.len() {
            if edge[k] {
                grad[k] = 0.0;
            }
        }
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let t = t0 * (t1 / t0).powf(it as f64 / iterations as f64);
        for k in 0..g.len() {
            v[k] -= t * grad[k] / norm;
        }
        best = best.min(reference_tv(a, &v, n, g.h));
    }
    best
}

/// Fills undefined background nodes of `sigma` by repeated averaging of
/// defined neighbours.
pub fn fill_holes(sigma: &ScalarField, background: &[bool]) -> ScalarField {
    let g = sigma.grid;
    let mut out = sigma.clone();
    loop {
        let mut changed = false;
        let snapshot = out.clone();
        for k in 0..g.len() {
            if !background[k] || snapshot.defined[k] {
                continue;
            }
            let vals: Vec<f64> = g.neighbors8(k).filter_map(|m| snapshot.get(m)).collect();
            if !vals.is_empty() {
                out.values[k] = vals.iter().sum::<f64>() / vals.len() as f64;
                out.defined[k] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    out
}

/// Unit square, conductivity `lower` below `y0` and 1 above, with the
/// boundary values of the one-dimensional potential that equals `y` above
/// `y0`. The current is `(0, 1)` for every choice of `lower`; with `y0` half
/// way between lattice rows the harmonic-mean face at the interface is exact,
/// so this holds for the discrete solution too.
pub fn layered_problem(n: usize, y0: f64, lower: f64) -> ForwardProblem {
    let geo = build_geometry(
        &Shape::Rect {
            min: (0.0, 0.0),
            max: (1.0, 1.0),
        },
        &[],
        n,
    )
    .unwrap();
    let g = geo.grid;
    let sigma = ScalarField::from_fn_masked(g, &geo.background(), |_, y| {
        if y < y0 - 1e-12 {
            lower
        } else {
            1.0
        }
    });
    let sigma1 = ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0);
    let f = BoundaryTrace::from_fn(&geo, |_, y| if y < y0 { y0 + (y - y0) / lower } else { y });
    ForwardProblem::new(geo, sigma, sigma1, Contrast::Infinite, f).unwrap()
}
