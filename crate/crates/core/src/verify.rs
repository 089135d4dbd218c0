//! Level-set geometry checks and reconstruction from the full current field.
//!
//! Level sets are extracted by marching squares on the bilinear interpolant;
//! areas are `Σ a(midpoint) · length` over the resulting segments.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CdiiError, Result};
use crate::field::{
    dilate, erode, BoundaryTrace, Grid, InclusionGeometry, ScalarField, VectorField,
};
use crate::least_gradient::truncate;

pub type Point = (f64, f64);

#[derive(Debug, Clone)]
pub struct LevelSetSample {
    /// Level actually used (nudged off exact node ties).
    pub lambda: f64,
    pub segments: Vec<(Point, Point)>,
    /// `∫_Σ a dS`.
    pub area: f64,
}

impl LevelSetSample {
    pub fn length(&self) -> f64 {
        self.segments
            .iter()
            .map(|(p, q)| (q.0 - p.0).hypot(q.1 - p.1))
            .sum()
    }
}

/// Marching squares on cells whose four corners are defined.
pub fn level_set_area(a: &ScalarField, u: &ScalarField, lambda: f64) -> Result<LevelSetSample> {
    let g = u.grid;
    let (lo, hi) = u.range().ok_or(CdiiError::EmptyLevelSet(lambda))?;
    if !(lambda >= lo && lambda <= hi) {
        return Err(CdiiError::EmptyLevelSet(lambda));
    }
    let tie = 1e-9 * lambda.abs().max(1.0);
    // Nudge off exact ties, towards the interior of the range.
    let lambda = if u.defined_values().any(|v| (v - lambda).abs() <= tie) {
        if lambda + tie <= hi {
            lambda + tie
        } else {
            lambda - tie
        }
    } else {
        lambda
    };

    let mut segments = Vec::new();
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let c = [
                g.idx(i, j),
                g.idx(i + 1, j),
                g.idx(i + 1, j + 1),
                g.idx(i, j + 1),
            ];
            let Some(v) = corner_values(u, &c) else {
                continue;
            };
            let above = v.map(|x| x > lambda);
            if above.iter().all(|&b| b) || above.iter().all(|&b| !b) {
                continue;
            }
            let p = c.map(|k| g.node_coords(k));
            let cross = |e: usize| -> Point {
                let (s, t) = (e, (e + 1) % 4);
                let w = ((lambda - v[s]) / (v[t] - v[s])).clamp(0.0, 1.0);
                (
                    p[s].0 + w * (p[t].0 - p[s].0),
                    p[s].1 + w * (p[t].1 - p[s].1),
                )
            };
            let edges: Vec<usize> = (0..4).filter(|&e| above[e] != above[(e + 1) % 4]).collect();
            if edges.len() == 2 {
                segments.push((cross(edges[0]), cross(edges[1])));
            } else {
                // Saddle: the centre value decides which corners connect.
                let centre = v.iter().sum::<f64>() / 4.0 > lambda;
                if centre == above[0] {
                    segments.push((cross(0), cross(1)));
                    segments.push((cross(2), cross(3)));
                } else {
                    segments.push((cross(3), cross(0)));
                    segments.push((cross(1), cross(2)));
                }
            }
        }
    }
    let area = segments
        .iter()
        .map(|&(p, q)| {
            let w = a
                .sample(0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1))
                .unwrap_or(0.0)
                .max(0.0);
            w * (q.0 - p.0).hypot(q.1 - p.1)
        })
        .sum();
    Ok(LevelSetSample {
        lambda,
        segments,
        area,
    })
}

fn corner_values(u: &ScalarField, c: &[usize; 4]) -> Option<[f64; 4]> {
    Some([u.get(c[0])?, u.get(c[1])?, u.get(c[2])?, u.get(c[3])?])
}

/// `∫ a |∇u|` over the cells where `u` is fully defined, using the bilinear
/// gradient and the mean of `a` at the cell centre.
pub fn cell_weighted_variation(a: &ScalarField, u: &ScalarField) -> f64 {
    let g = u.grid;
    let mut acc = 0.0;
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let c = [
                g.idx(i, j),
                g.idx(i + 1, j),
                g.idx(i + 1, j + 1),
                g.idx(i, j + 1),
            ];
            let Some(v) = corner_values(u, &c) else {
                continue;
            };
            let gx = 0.5 * (v[1] - v[0] + v[2] - v[3]) / g.h;
            let gy = 0.5 * (v[3] - v[0] + v[2] - v[1]) / g.h;
            let (sum, cnt) = c
                .iter()
                .filter_map(|&k| a.get(k))
                .fold((0.0, 0), |(s, n), x| (s + x, n + 1));
            if cnt > 0 {
                acc += sum / cnt as f64 * gx.hypot(gy) * g.h * g.h;
            }
        }
    }
    acc
}

fn max_cell_gradient(u: &ScalarField) -> f64 {
    let g = u.grid;
    let mut m: f64 = 0.0;
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let c = [
                g.idx(i, j),
                g.idx(i + 1, j),
                g.idx(i + 1, j + 1),
                g.idx(i, j + 1),
            ];
            if let Some(v) = corner_values(u, &c) {
                let gx = 0.5 * (v[1] - v[0] + v[2] - v[3]) / g.h;
                let gy = 0.5 * (v[3] - v[0] + v[2] - v[1]) / g.h;
                m = m.max(gx.hypot(gy));
            }
        }
    }
    m
}

/// One spot check of the truncation lemma at level `lambda`.
#[derive(Debug, Clone)]
pub struct LemmaSample {
    pub lambda: f64,
    pub area: f64,
    /// `|F(truncate(u, λ, ε)) - A(λ)|` for `ε = 4δ, 2δ, δ`, where `δ = h max|∇u|`
    /// is the smallest ramp the lattice resolves everywhere.
    pub deviations: [f64; 3],
}

impl LemmaSample {
    /// Shrinking `ε` does not move the truncated energy away from the area
    /// (up to `10⁻³ A` of discretisation noise).
    pub fn holds(&self) -> bool {
        let slack = 1e-3 * self.area.max(f64::MIN_POSITIVE);
        self.deviations[1] <= self.deviations[0] + slack
            && self.deviations[2] <= self.deviations[1] + slack
    }
}

#[derive(Debug, Clone)]
pub struct CoareaReport {
    /// `|∫ a|∇u| − ∫ A(λ) dλ| / ∫ a|∇u|`.
    pub residual: f64,
    pub variation: f64,
    pub level_integral: f64,
    pub lemma: Vec<LemmaSample>,
}

impl CoareaReport {
    pub fn lemma_holds(&self) -> bool {
        self.lemma.iter().all(LemmaSample::holds)
    }
}

/// Levels for the lemma spot checks are drawn with this seed.
const LEMMA_SEED: u64 = 0x5eed;

/// Compares `∫ a|∇u|` with the trapezoid rule over `n_levels` uniform levels
/// of `∫ A(λ) dλ`, and spot-checks the truncation lemma at 5 random levels.
pub fn coarea_check(a: &ScalarField, u: &ScalarField, n_levels: usize) -> Result<CoareaReport> {
    if n_levels < 2 {
        return Err(CdiiError::InvalidProblem(format!(
            "need at least 2 levels, got {n_levels}"
        )));
    }
    let variation = cell_weighted_variation(a, u);
    if !(variation > 0.0) {
        return Err(CdiiError::DegenerateField);
    }
    let (lo, hi) = u.range().ok_or(CdiiError::DegenerateField)?;
    let area_at = |l: f64| -> Result<f64> {
        match level_set_area(a, u, l) {
            Ok(s) => Ok(s.area),
            Err(CdiiError::EmptyLevelSet(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let dl = (hi - lo) / (n_levels - 1) as f64;
    let mut level_integral = 0.0;
    for i in 0..n_levels {
        let w = if i == 0 || i + 1 == n_levels {
            0.5
        } else {
            1.0
        };
        level_integral += w * area_at(lo + i as f64 * dl)?;
    }
    level_integral *= dl;

    let delta = u.grid.h * max_cell_gradient(u);
    let mut rng = ChaCha8Rng::seed_from_u64(LEMMA_SEED);
    let mut lemma = Vec::new();
    for _ in 0..5 {
        let lambda = lo + (hi - lo) * rng.gen_range(0.1..0.9);
        let area = area_at(lambda)?;
        let deviations = [4.0 * delta, 2.0 * delta, delta]
            .map(|eps| (cell_weighted_variation(a, &truncate(u, lambda, eps)) - area).abs());
        lemma.push(LemmaSample {
            lambda,
            area,
            deviations,
        });
    }
    Ok(CoareaReport {
        residual: (variation - level_integral).abs() / variation,
        variation,
        level_integral,
        lemma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityRow {
    pub lambda: f64,
    pub area_u: f64,
    pub area_v: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct MinimalityReport {
    pub rows: Vec<MinimalityRow>,
    /// Nodes where the trial function is flat (`|∇v| < eps_g`) yet `a ≥ eps_a`;
    /// the comparison assumes there are none.
    pub hypothesis_violations: usize,
}

impl MinimalityReport {
    pub fn fraction_holding(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.rows.iter().filter(|r| r.holds).count() as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,area_u,area_v,holds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.lambda, r.area_u, r.area_v, r.holds);
        }
        s
    }
}

/// Nodes of `u`'s support that carry Dirichlet data: defined nodes on the
/// lattice edge or next to an undefined node.
pub fn support_boundary(u: &ScalarField) -> Vec<bool> {
    let g = u.grid;
    (0..g.len())
        .map(|k| u.defined[k] && (g.on_edge(k) || g.neighbors4(k).any(|m| !u.defined[m])))
        .collect()
}

/// Per-level comparison `A(u*⁻¹(λ)) ≤ A(v⁻¹(λ)) + tol_rel · A(u*⁻¹(λ))`.
pub fn minimality_test(
    a: &ScalarField,
    u_star: &ScalarField,
    v: &ScalarField,
    lambdas: &[f64],
    tol_rel: f64,
    eps: (f64, f64),
) -> Result<MinimalityReport> {
    let boundary = support_boundary(u_star);
    let mut worst: f64 = 0.0;
    for k in 0..boundary.len() {
        if boundary[k] {
            match v.get(k) {
                Some(x) => worst = worst.max((x - u_star.values[k]).abs()),
                None => worst = f64::INFINITY,
            }
        }
    }
    if worst > 1e-10 {
        return Err(CdiiError::TraceMismatch(worst));
    }
    let (eps_a, eps_g) = eps;
    let grad = crate::field::nodal_gradient_norm(v);
    let hypothesis_violations = (0..v.grid.len())
        .filter(|&k| {
            grad.defined[k] && grad.values[k] < eps_g && a.get(k).is_some_and(|x| x >= eps_a)
        })
        .count();
    let area = |f: &ScalarField, l: f64| match level_set_area(a, f, l) {
        Ok(s) => Ok(s.area),
        Err(CdiiError::EmptyLevelSet(_)) => Ok(0.0),
        Err(e) => Err(e),
    };
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let area_u = area(u_star, lambda)?;
        let area_v = area(v, lambda)?;
        rows.push(MinimalityRow {
            lambda,
            area_u,
            area_v,
            holds: area_u <= area_v + tol_rel * area_u,
        });
    }
    Ok(MinimalityReport {
        rows,
        hypothesis_violations,
    })
}

/// `count` levels in the open range of `u` from the golden-ratio sequence,
/// skipping anything within `eps_u` of the values in `avoid`.
pub fn sample_levels(u: &ScalarField, count: usize, avoid: &[f64], eps_u: f64) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_8;
    let Some((lo, hi)) = u.range() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(count);
    let mut j = 0usize;
    while out.len() < count && j < 100 * count.max(1) {
        j += 1;
        let t = (j as f64 * PHI).fract();
        let l = lo + (hi - lo) * (0.01 + 0.98 * t);
        if avoid.iter().all(|&c| (l - c).abs() > eps_u) {
            out.push(l);
        }
    }
    out
}

/// Mean of `u` over each node set (the plateau values of flat components).
pub fn plateau_levels(u: &ScalarField, components: &[Vec<usize>]) -> Vec<f64> {
    components
        .iter()
        .filter_map(|c| {
            let vals: Vec<f64> = c.iter().filter_map(|&k| u.get(k)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// `u + amplitude · (1 − s²)²` with `s = |x − centre| / radius`, kept equal
/// to `u` on the Dirichlet nodes.
pub fn bump_perturbation(
    geo: &InclusionGeometry,
    u: &ScalarField,
    centre: Point,
    amplitude: f64,
    radius: f64,
) -> ScalarField {
    let g = geo.grid;
    let mut v = u.clone();
    for k in 0..g.len() {
        if !u.defined[k] || geo.boundary[k] {
            continue;
        }
        let (x, y) = g.node_coords(k);
        let s2 = ((x - centre.0).powi(2) + (y - centre.1).powi(2)) / (radius * radius);
        if s2 < 1.0 {
            v.values[k] += amplitude * (1.0 - s2).powi(2);
        }
    }
    v
}

/// `count` seeded bump centres at Ω nodes at least `radius` from ∂Ω, so the
/// bumps vanish on the boundary.
pub fn bump_centres(geo: &InclusionGeometry, count: usize, radius: f64, seed: u64) -> Vec<Point> {
    let g = geo.grid;
    let bnodes = geo.boundary_nodes();
    let eligible: Vec<usize> = (0..g.len())
        .filter(|&k| {
            let (x, y) = g.node_coords(k);
            geo.omega[k]
                && bnodes.iter().all(|&b| {
                    let (bx, by) = g.node_coords(b);
                    (x - bx).hypot(y - by) >= radius
                })
        })
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| g.node_coords(eligible[rng.gen_range(0..eligible.len())]))
        .collect()
}

/// CSV polylines `lambda,seg_id,x0,y0,x1,y1`.
pub fn level_sets_csv(samples: &[LevelSetSample]) -> String {
    let mut s = String::from("lambda,seg_id,x0,y0,x1,y1\n");
    for smp in samples {
        for (i, (p, q)) in smp.segments.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{}", smp.lambda, i, p.0, p.1, q.0, q.1);
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct PartialRegion {
    pub alpha: f64,
    pub beta: f64,
    /// Nodes with `α < u < β`.
    pub region_mask: Vec<bool>,
    /// Dirichlet nodes with `α < f < β`.
    pub gamma_boundary: Vec<usize>,
}

/// Output of [`reconstruct_from_full_j`]; also carried by the stall error.
#[derive(Debug, Clone)]
pub struct PartialReconstruction {
    pub region: PartialRegion,
    /// Potential on the region.
    pub u: ScalarField,
    /// `|J| / |∇u|` two nodes inside the region, away from `{|J| < eps_a}`.
    pub sigma: ScalarField,
    /// Nodes within reach of at least one traced curve.
    pub coverage: Vec<bool>,
    pub curves: usize,
    pub stalled: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Step length in units of `h`.
    pub step: f64,
    pub max_steps: usize,
    /// Curves stop where `|J|` falls below this.
    pub eps_a: f64,
    /// Inverse-distance weighting over this many nearest samples.
    pub neighbours: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            max_steps: 100_000,
            eps_a: 0.0,
            neighbours: 8,
        }
    }
}

enum TraceEnd {
    Boundary,
    Stalled,
    /// Left Ω straight away: the seed points the other way.
    Outward,
}

/// Recovers `u` on `{α < u < β}` from the current field and the boundary
/// voltage there: the level curves of `u` are the integral curves of
/// `J⊥ = (−J_y, J_x)`, each carrying the value of its boundary seed.
pub fn reconstruct_from_full_j(
    j: &VectorField,
    geo: &InclusionGeometry,
    f: &BoundaryTrace,
    alpha: f64,
    beta: f64,
    opts: TraceOptions,
) -> Result<PartialReconstruction> {
    let g = geo.grid;
    if j.grid != g {
        return Err(CdiiError::InconsistentGeometry(
            "current field on a different grid".into(),
        ));
    }
    f.check(geo)?;
    let gamma_boundary: Vec<usize> = f
        .nodes
        .iter()
        .zip(&f.values)
        .filter(|&(_, &v)| v > alpha && v < beta)
        .map(|(&k, _)| k)
        .collect();
    if gamma_boundary.is_empty() {
        return Err(CdiiError::NoSeed { alpha, beta });
    }
    let eps_a = if opts.eps_a > 0.0 {
        opts.eps_a
    } else {
        1e-3 * max_node_magnitude(j, geo)
    };

    // Seeds: Γ nodes plus midpoints between neighbouring Γ nodes until there
    // are about 4 per lattice row.
    let mut seeds: Vec<(Point, f64)> = gamma_boundary
        .iter()
        .map(|&k| (g.node_coords(k), f.value_at(k).unwrap()))
        .collect();
    let target = 4 * g.nx.max(g.ny);
    if seeds.len() < target {
        let on_gamma: Vec<bool> = {
            let mut m = vec![false; g.len()];
            gamma_boundary.iter().for_each(|&k| m[k] = true);
            m
        };
        for &k in &gamma_boundary {
            for m in g.neighbors8(k) {
                if m > k && on_gamma[m] {
                    let (p, q) = (g.node_coords(k), g.node_coords(m));
                    let val = 0.5 * (f.value_at(k).unwrap() + f.value_at(m).unwrap());
                    seeds.push((((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0), val));
                }
            }
        }
    }

    let mut samples: Vec<Sample> = Vec::new();
    let mut stalled = 0;
    for (curve, &(seed, value)) in seeds.iter().enumerate() {
        let mut reached = false;
        let mut any_inward = false;
        for dir in [1.0, -1.0] {
            let (pts, end) = trace_curve(j, geo, seed, dir, eps_a, &opts);
            match end {
                TraceEnd::Outward => {}
                TraceEnd::Boundary => {
                    reached = true;
                    any_inward = true;
                }
                TraceEnd::Stalled => any_inward = true,
            }
            samples.extend(pts.into_iter().map(|p| (p, value, curve)));
        }
        samples.push((seed, value, curve));
        if any_inward && !reached {
            stalled += 1;
        }
    }

    // Scattered values to nodes.
    let index = SampleIndex::new(&g, &samples);
    let mut u = ScalarField::from_fn_masked(g, &vec![false; g.len()], |_, _| 0.0);
    let mut coverage = vec![false; g.len()];
    for k in 0..g.len() {
        if !geo.omega[k] {
            continue;
        }
        let p = g.node_coords(k);
        if let Some(v) = index.idw(p, opts.neighbours, g.h) {
            coverage[k] = true;
            u.values[k] = v;
            u.defined[k] = true;
        }
    }
    let region_mask: Vec<bool> = (0..g.len())
        .map(|k| coverage[k] && u.values[k] > alpha && u.values[k] < beta)
        .collect();
    for k in 0..g.len() {
        if !region_mask[k] {
            u.defined[k] = false;
            u.values[k] = f64::NAN;
        }
    }

    let mag = j.node_magnitude(&geo.omega);
    let weak: Vec<bool> = (0..g.len())
        .map(|k| geo.omega[k] && mag.get(k).is_none_or(|m| m < eps_a))
        .collect();
    let collar = dilate(&g, &weak, 1);
    // Values on the rim of the region are one-sided extrapolations; the
    // gradient only uses nodes at least one step inside.
    let inner = erode(&g, &region_mask);
    let mut sigma = ScalarField::from_fn_masked(g, &vec![false; g.len()], |_, _| 0.0);
    for k in 0..g.len() {
        if !inner[k] || collar[k] || g.on_edge(k) || !g.neighbors4(k).all(|m| inner[m]) {
            continue;
        }
        let gx = (u.values[k + 1] - u.values[k - 1]) / (2.0 * g.h);
        let gy = (u.values[k + g.nx] - u.values[k - g.nx]) / (2.0 * g.h);
        let gn = gx.hypot(gy);
        if let (true, Some(m)) = (gn > 0.0, mag.get(k)) {
            sigma.values[k] = m / gn;
            sigma.defined[k] = true;
        }
    }

    let out = PartialReconstruction {
        region: PartialRegion {
            alpha,
            beta,
            region_mask,
            gamma_boundary,
        },
        u,
        sigma,
        coverage,
        curves: seeds.len(),
        stalled,
    };
    if 2 * stalled > seeds.len() {
        return Err(CdiiError::Stall {
            stalled,
            total: seeds.len(),
            partial: Box::new(out),
        });
    }
    Ok(out)
}

fn max_node_magnitude(j: &VectorField, geo: &InclusionGeometry) -> f64 {
    j.node_magnitude(&geo.omega)
        .defined_values()
        .fold(0.0, f64::max)
}

fn inside(geo: &InclusionGeometry, p: Point) -> Option<usize> {
    let g = geo.grid;
    let (x, y) = p;
    let (x0, y0) = g.origin;
    let (x1, y1) = (x0 + (g.nx - 1) as f64 * g.h, y0 + (g.ny - 1) as f64 * g.h);
    let slack = 0.5 * g.h;
    if x < x0 - slack || y < y0 - slack || x > x1 + slack || y > y1 + slack {
        return None;
    }
    let k = g.nearest_node(x, y);
    geo.omega[k].then_some(k)
}

fn trace_curve(
    j: &VectorField,
    geo: &InclusionGeometry,
    seed: Point,
    dir: f64,
    eps_a: f64,
    opts: &TraceOptions,
) -> (Vec<Point>, TraceEnd) {
    let g = geo.grid;
    let step = opts.step * g.h;
    // Steps needed to clear the seed's own boundary neighbourhood.
    let clear = (2.0 / opts.step).ceil() as usize;
    let exit = |n: usize| {
        if n < clear {
            TraceEnd::Outward
        } else {
            TraceEnd::Boundary
        }
    };
    // `Err(true)`: left Ω; `Err(false)`: dead zone.
    let field = |p: Point| -> std::result::Result<Point, bool> {
        inside(geo, p).ok_or(true)?;
        let (jx, jy) = j.sample(p.0, p.1).ok_or(true)?;
        let m = jx.hypot(jy);
        if m < eps_a || m == 0.0 {
            return Err(false);
        }
        Ok((-jy * dir / m, jx * dir / m))
    };
    let mut pts = Vec::new();
    let mut p = seed;
    for n in 0..opts.max_steps {
        let rk = (|| {
            let k1 = field(p)?;
            let k2 = field((p.0 + 0.5 * step * k1.0, p.1 + 0.5 * step * k1.1))?;
            let k3 = field((p.0 + 0.5 * step * k2.0, p.1 + 0.5 * step * k2.1))?;
            let k4 = field((p.0 + step * k3.0, p.1 + step * k3.1))?;
            Ok((
                p.0 + step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                p.1 + step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            ))
        })();
        p = match rk {
            Ok(q) => q,
            Err(true) => return (pts, exit(n)),
            Err(false) => return (pts, TraceEnd::Stalled),
        };
        let Some(k) = inside(geo, p) else {
            return (pts, exit(n));
        };
        pts.push(p);
        if n >= clear && geo.boundary[k] {
            return (pts, TraceEnd::Boundary);
        }
    }
    (pts, TraceEnd::Stalled)
}

/// Bucketed curve samples for nearest-curve queries.
struct SampleIndex<'a> {
    samples: &'a [Sample],
    buckets: Vec<Vec<usize>>,
    grid: Grid,
}

/// Position, carried value and curve id.
type Sample = (Point, f64, usize);

impl<'a> SampleIndex<'a> {
    /// Search radius in lattice cells.
    const RINGS: isize = 3;

    fn new(grid: &Grid, samples: &'a [Sample]) -> Self {
        let mut buckets = vec![Vec::new(); grid.len()];
        for (i, &(p, _, _)) in samples.iter().enumerate() {
            let fx = ((p.0 - grid.origin.0) / grid.h).round();
            let fy = ((p.1 - grid.origin.1) / grid.h).round();
            if fx >= 0.0 && fy >= 0.0 && fx < grid.nx as f64 && fy < grid.ny as f64 {
                buckets[grid.idx(fx as usize, fy as usize)].push(i);
            }
        }
        Self {
            samples,
            buckets,
            grid: *grid,
        }
    }

    /// Inverse-distance weighting over the closest sample of each of the `k`
    /// nearest curves, provided the nearest lies within `reach`.
    fn idw(&self, p: Point, k: usize, reach: f64) -> Option<f64> {
        let g = &self.grid;
        let ci = ((p.0 - g.origin.0) / g.h).round() as isize;
        let cj = ((p.1 - g.origin.1) / g.h).round() as isize;
        let mut found: Vec<(usize, f64, f64)> = Vec::new();
        for dj in -Self::RINGS..=Self::RINGS {
            for di in -Self::RINGS..=Self::RINGS {
                let (i, j) = (ci + di, cj + dj);
                if i < 0 || j < 0 || i as usize >= g.nx || j as usize >= g.ny {
                    continue;
                }
                for &s in &self.buckets[g.idx(i as usize, j as usize)] {
                    let (q, v, c) = self.samples[s];
                    found.push((c, (q.0 - p.0).hypot(q.1 - p.1), v));
                }
            }
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        found.dedup_by_key(|e| e.0);
        found.sort_by(|a, b| a.1.total_cmp(&b.1));
        let nearest = found.first()?;
        if nearest.1 > reach {
            return None;
        }
        if nearest.1 < 1e-12 * g.h {
            return Some(nearest.2);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(_, d, v) in found.iter().take(k) {
            let w = 1.0 / (d * d);
            num += w * v;
            den += w;
        }
        Some(num / den)
    }
}
