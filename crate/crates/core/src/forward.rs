//! Forward conductivity problem with perfectly conducting and insulating
//! inclusions.
//!
//! Finite contrast: the conductivity is `K σ₁` in U and `σ` elsewhere, V is
//! cut out of the unknowns (its faces carry no current) and `f` is imposed on
//! ∂Ω. The five-point finite-volume equations use face conductances equal to
//! the harmonic mean of the nodal conductivities.
//!
//! Limit problem (`K = ∞`): each connected component of U becomes a single
//! unknown. Its row is the sum of the conservation equations over the
//! component, so the potential is constant on the component and the net
//! current through its boundary vanishes. A face between U and the background
//! carries `2σ`, the limit of the harmonic mean.

use std::fmt::Write as _;

use crate::error::{CdiiError, Result};
use crate::field::{harmonic_mean, BoundaryTrace, InclusionGeometry, ScalarField, VectorField};
use crate::linalg::{pcg, CgOptions, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contrast {
    Finite(f64),
    Infinite,
}

impl Contrast {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Contrast::Infinite)
    }
}

impl std::fmt::Display for Contrast {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Contrast::Finite(k) => write!(f, "{k}"),
            Contrast::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Contrast {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" => Ok(Contrast::Infinite),
            other => {
                let k: f64 = other
                    .parse()
                    .map_err(|_| format!("invalid contrast '{s}'"))?;
                if k > 1.0 && k.is_finite() {
                    Ok(Contrast::Finite(k))
                } else {
                    Err(format!("contrast must exceed 1 or be 'inf', got {s}"))
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub geometry: InclusionGeometry,
    /// Conductivity on Ω ∖ (U ∪ V).
    pub sigma: ScalarField,
    /// Conductivity on U (before the contrast multiplier).
    pub sigma1: ScalarField,
    pub contrast: Contrast,
    pub f: BoundaryTrace,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl ForwardProblem {
    /// Validates the data and records the ellipticity bounds of `σ` and `σ₁`.
    pub fn new(
        geometry: InclusionGeometry,
        sigma: ScalarField,
        sigma1: ScalarField,
        contrast: Contrast,
        f: BoundaryTrace,
    ) -> Result<Self> {
        let g = geometry.grid;
        if sigma.grid != g || sigma1.grid != g {
            return Err(CdiiError::InconsistentGeometry(
                "conductivity grid differs from geometry grid".into(),
            ));
        }
        if let Contrast::Finite(k) = contrast {
            if !(k > 1.0 && k.is_finite()) {
                return Err(CdiiError::InvalidProblem(format!(
                    "contrast must exceed 1, got {k}"
                )));
            }
        }
        f.check(&geometry)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..g.len() {
            let s = if geometry.u_mask[k] {
                sigma1.get(k)
            } else if geometry.omega[k] && !geometry.v_mask[k] {
                sigma.get(k)
            } else {
                continue;
            };
            let s = s.ok_or_else(|| {
                CdiiError::InvalidProblem(format!("conductivity undefined at node {k}"))
            })?;
            if !(s > 0.0 && s.is_finite()) {
                return Err(CdiiError::InvalidProblem(format!(
                    "conductivity {s} at node {k} is not in (0, inf)"
                )));
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        Ok(Self {
            geometry,
            sigma,
            sigma1,
            contrast,
            f,
            lambda_lo: lo,
            lambda_hi: hi,
        })
    }

    pub fn with_contrast(&self, contrast: Contrast) -> Self {
        Self {
            contrast,
            ..self.clone()
        }
    }

    /// Conductivity used at node `k`; `None` on V, outside Ω and on U in the
    /// limit problem.
    pub fn node_conductivity(&self, k: usize) -> Option<f64> {
        let geo = &self.geometry;
        if !geo.omega[k] || geo.v_mask[k] {
            return None;
        }
        if geo.u_mask[k] {
            return match self.contrast {
                Contrast::Finite(kk) => self.sigma1.get(k).map(|s| kk * s),
                Contrast::Infinite => None,
            };
        }
        self.sigma.get(k)
    }

    /// Conductance of the face between 4-adjacent nodes `a` and `b`, `None`
    /// when the face carries no current or lies inside a perfect conductor.
    pub fn face_conductance(&self, a: usize, b: usize) -> Option<f64> {
        let geo = &self.geometry;
        if !geo.omega[a] || !geo.omega[b] || geo.v_mask[a] || geo.v_mask[b] {
            return None;
        }
        match (self.node_conductivity(a), self.node_conductivity(b)) {
            (Some(sa), Some(sb)) => Some(harmonic_mean(sa, sb)),
            (None, Some(s)) | (Some(s), None) => Some(2.0 * s),
            (None, None) => None,
        }
    }

    /// Face conductivities as a staggered field; faces touching V carry zero.
    pub fn face_conductivity_field(&self) -> VectorField {
        let g = self.geometry.grid;
        let mut out = VectorField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                if i + 1 < g.nx {
                    let f = g.xface(i, j);
                    let (active, c) = self.face_state(k, k + 1);
                    out.x_active[f] = active;
                    out.fx[f] = c;
                }
                if j + 1 < g.ny {
                    let f = g.yface(i, j);
                    let (active, c) = self.face_state(k, k + g.nx);
                    out.y_active[f] = active;
                    out.fy[f] = c;
                }
            }
        }
        out
    }

    fn face_state(&self, a: usize, b: usize) -> (bool, f64) {
        let geo = &self.geometry;
        if !geo.omega[a] || !geo.omega[b] {
            return (false, 0.0);
        }
        if geo.v_mask[a] || geo.v_mask[b] {
            return (true, 0.0);
        }
        match self.face_conductance(a, b) {
            Some(c) => (true, c),
            None => (false, 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Potential on Ω ∖ V.
    pub u: ScalarField,
    pub energy: f64,
    /// Net outward current `∫ σ ∂u/∂ν` through each U-component boundary.
    pub per_component_flux: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Options shared by both solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub cg: CgOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            cg: CgOptions {
                rel_tol: 1e-12,
                max_iter: None,
                remove_mean: false,
            },
        }
    }
}

struct Assembly {
    unknown_of: Vec<Option<usize>>,
    matrix: CsrMatrix,
    rhs: Vec<f64>,
}

fn assemble(p: &ForwardProblem) -> Result<Assembly> {
    let geo = &p.geometry;
    let g = geo.grid;
    let n = g.len();
    let mut unknown_of = vec![None; n];
    let mut count = 0;
    if p.contrast.is_infinite() {
        for comp in &geo.u_components {
            for &k in comp {
                unknown_of[k] = Some(count);
            }
            count += 1;
        }
    }
    for k in 0..n {
        if geo.omega[k] && !geo.v_mask[k] && !geo.boundary[k] && unknown_of[k].is_none() {
            unknown_of[k] = Some(count);
            count += 1;
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
    let mut rhs = vec![0.0; count];
    let dirichlet = p.f.to_field(g);

    let mut couple = |a: usize, b: usize| -> Result<()> {
        let Some(c) = p.face_conductance(a, b) else {
            return Ok(());
        };
        match (unknown_of[a], unknown_of[b]) {
            (Some(ia), Some(ib)) if ia == ib => {}
            (Some(ia), Some(ib)) => {
                rows[ia].push((ia, c));
                rows[ia].push((ib, -c));
                rows[ib].push((ib, c));
                rows[ib].push((ia, -c));
            }
            (Some(ia), None) => {
                let fb = dirichlet
                    .get(b)
                    .ok_or_else(|| CdiiError::SingularSystem(format!("node {b} has no data")))?;
                rows[ia].push((ia, c));
                rhs[ia] += c * fb;
            }
            (None, Some(ib)) => {
                let fa = dirichlet
                    .get(a)
                    .ok_or_else(|| CdiiError::SingularSystem(format!("node {a} has no data")))?;
                rows[ib].push((ib, c));
                rhs[ib] += c * fa;
            }
            (None, None) => {}
        }
        Ok(())
    };
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if i + 1 < g.nx {
                couple(k, k + 1)?;
            }
            if j + 1 < g.ny {
                couple(k, k + g.nx)?;
            }
        }
    }
    if let Some(r) = rows.iter().position(|r| r.is_empty()) {
        return Err(CdiiError::SingularSystem(format!(
            "unknown {r} is not coupled to anything"
        )));
    }
    Ok(Assembly {
        unknown_of,
        matrix: CsrMatrix::from_rows(rows),
        rhs,
    })
}

fn solve(p: &ForwardProblem, opts: SolveOptions) -> Result<ForwardSolution> {
    let asm = assemble(p)?;
    let (flo, fhi) = p.f.range();
    let mut x = vec![0.5 * (flo + fhi); asm.rhs.len()];
    let mut stats = pcg(&asm.matrix, &asm.rhs, &mut x, opts.cg)?;
    if !p.contrast.is_infinite() {
        // High contrast: K ∇u on U is read off tiny differences, so polish
        // with a few rounds of iterative refinement.
        let mut ax = vec![0.0; x.len()];
        for _ in 0..3 {
            asm.matrix.mul(&x, &mut ax);
            let r: Vec<f64> = asm.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let mut d = vec![0.0; x.len()];
            let refine = CgOptions {
                rel_tol: 1e-6,
                ..opts.cg
            };
            let Ok(s) = pcg(&asm.matrix, &r, &mut d, refine) else {
                break;
            };
            x.iter_mut().zip(&d).for_each(|(x, d)| *x += d);
            stats.iterations += s.iterations;
            if s.iterations == 0 {
                break;
            }
        }
    }

    let geo = &p.geometry;
    let g = geo.grid;
    let conducting = geo.conducting();
    let mut u = ScalarField::from_fn_masked(g, &conducting, |_, _| 0.0);
    for k in 0..g.len() {
        if !conducting[k] {
            continue;
        }
        u.values[k] = match asm.unknown_of[k] {
            Some(i) => x[i],
            None => p.f.value_at(k).unwrap_or(f64::NAN),
        };
    }

    if p.contrast.is_infinite() {
        // One block Gauss-Seidel sweep over the aggregated rows zeroes each
        // component's net current to rounding.
        for comp in &geo.u_components {
            let (mut flux, mut total) = (0.0, 0.0);
            let value = u.values[comp[0]];
            for (k, m) in crossing_faces(geo, comp) {
                if let Some(c) = p.face_conductance(k, m) {
                    flux += c * (u.values[m] - value);
                    total += c;
                }
            }
            if total > 0.0 {
                let shift = flux / total;
                for &k in comp {
                    u.values[k] = value + shift;
                }
            }
        }
    }

    let per_component_flux = geo
        .u_components
        .iter()
        .map(|comp| component_flux(p, &u, comp))
        .collect();
    Ok(ForwardSolution {
        energy: energy(p, &u),
        u,
        per_component_flux,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// Solves the finite-contrast problem.
pub fn solve_finite_contrast(p: &ForwardProblem) -> Result<ForwardSolution> {
    solve_finite_contrast_with(p, SolveOptions::default())
}

pub fn solve_finite_contrast_with(
    p: &ForwardProblem,
    opts: SolveOptions,
) -> Result<ForwardSolution> {
    if p.contrast.is_infinite() {
        return Err(CdiiError::InvalidProblem(
            "finite-contrast solver called with K = inf".into(),
        ));
    }
    solve(p, opts)
}

/// Solves the limit problem with perfectly conducting U.
pub fn solve_limit(p: &ForwardProblem) -> Result<ForwardSolution> {
    solve_limit_with(p, SolveOptions::default())
}

pub fn solve_limit_with(p: &ForwardProblem, opts: SolveOptions) -> Result<ForwardSolution> {
    if !p.contrast.is_infinite() {
        return Err(CdiiError::InvalidProblem(
            "limit solver called with finite K".into(),
        ));
    }
    solve(p, opts)
}

/// Dispatches on the problem's contrast.
pub fn solve_forward(p: &ForwardProblem) -> Result<ForwardSolution> {
    solve(p, SolveOptions::default())
}

/// Faces `(inside, outside)` leaving a node set.
pub fn crossing_faces<'a>(
    geo: &'a InclusionGeometry,
    comp: &'a [usize],
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let mut inside = vec![false; geo.grid.len()];
    for &k in comp {
        inside[k] = true;
    }
    comp.iter()
        .flat_map(move |&k| geo.grid.neighbors4(k).map(move |m| (k, m)))
        .filter(move |&(_, m)| !inside[m])
}

fn component_flux(p: &ForwardProblem, u: &ScalarField, comp: &[usize]) -> f64 {
    crossing_faces(&p.geometry, comp)
        .filter_map(|(k, m)| {
            let c = p.face_conductance(k, m)?;
            Some(c * (u.get(m)? - u.get(k)?))
        })
        .sum()
}

/// Discrete energy `½ Σ σ_face (Δu)²`. Faces joining two boundary nodes lie
/// on ∂Ω and get half weight.
pub fn energy(p: &ForwardProblem, u: &ScalarField) -> f64 {
    let geo = &p.geometry;
    let g = geo.grid;
    let mut acc = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let mut add = |m: usize| {
                if let (Some(c), Some(a), Some(b)) = (p.face_conductance(k, m), u.get(k), u.get(m))
                {
                    let w = if geo.boundary[k] && geo.boundary[m] {
                        0.5
                    } else {
                        1.0
                    };
                    acc += w * c * (b - a) * (b - a);
                }
            };
            if i + 1 < g.nx {
                add(k + 1);
            }
            if j + 1 < g.ny {
                add(k + g.nx);
            }
        }
    }
    0.5 * acc
}

/// `Σ |Δu|²` over faces of Ω ∖ V (the discrete `‖∇u‖²` with `h² / h²`
/// cancelled), with the same half weight on boundary faces.
pub fn gradient_norm_sq(geo: &InclusionGeometry, u: &ScalarField) -> f64 {
    let g = geo.grid;
    let mut acc = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let mut add = |m: usize| {
                if geo.omega[k] && geo.omega[m] && !geo.v_mask[k] && !geo.v_mask[m] {
                    if let (Some(a), Some(b)) = (u.get(k), u.get(m)) {
                        let w = if geo.boundary[k] && geo.boundary[m] {
                            0.5
                        } else {
                            1.0
                        };
                        acc += w * (b - a) * (b - a);
                    }
                }
            };
            if i + 1 < g.nx {
                add(k + 1);
            }
            if j + 1 < g.ny {
                add(k + g.nx);
            }
        }
    }
    acc
}

/// Current density `J = σ_face Δu / h` on faces. Faces touching V carry zero;
/// faces inside a perfect conductor of the limit problem are inactive.
pub fn current_density(p: &ForwardProblem, u: &ScalarField) -> VectorField {
    let mut j = p.face_conductivity_field();
    let g = j.grid;
    for jj in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, jj);
            if i + 1 < g.nx {
                let f = g.xface(i, jj);
                if j.x_active[f] {
                    j.fx[f] *= match (u.get(k), u.get(k + 1)) {
                        (Some(a), Some(b)) => (b - a) / g.h,
                        _ => 0.0,
                    };
                }
            }
            if jj + 1 < g.ny {
                let f = g.yface(i, jj);
                if j.y_active[f] {
                    j.fy[f] *= match (u.get(k), u.get(k + g.nx)) {
                        (Some(a), Some(b)) => (b - a) / g.h,
                        _ => 0.0,
                    };
                }
            }
        }
    }
    j
}

/// Harmonic extension of `f` into Ω (unit conductivity, inclusions ignored).
pub fn harmonic_extension(geometry: &InclusionGeometry, f: &BoundaryTrace) -> Result<ScalarField> {
    let geo = geometry.without_inclusions();
    let g = geo.grid;
    let p = ForwardProblem::new(
        geo.clone(),
        ScalarField::from_fn_masked(g, &geo.omega, |_, _| 1.0),
        ScalarField::from_fn_masked(g, &vec![false; g.len()], |_, _| 1.0),
        Contrast::Infinite,
        f.clone(),
    )?;
    Ok(solve_limit(&p)?.u)
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub contrast: f64,
    pub u: ScalarField,
    pub energy: f64,
    /// `‖u_K - u₀‖₂ / ‖u₀‖₂` over Ω ∖ V.
    pub distance: f64,
    /// `|I_K[u_K] - I₀[u₀]|`.
    pub energy_gap: f64,
    /// `‖∇u_K‖² / ‖∇u₀‖²`.
    pub grad_norm_ratio: f64,
    /// Net boundary current of each U-component for this contrast.
    pub flux: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub limit: ForwardSolution,
    pub rows: Vec<ConvergenceRow>,
    /// `Λ / λ`.
    pub bound: f64,
}

impl ConvergenceReport {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.grad_norm_ratio <= self.bound)
    }

    /// Distances strictly decrease with increasing contrast.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].distance < w[0].distance)
    }

    /// `K,distance,energy_gap,grad_norm_ratio` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("K,distance,energy_gap,grad_norm_ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.contrast, r.distance, r.energy_gap, r.grad_norm_ratio
            );
        }
        s
    }
}

/// Solves the limit problem and each finite contrast, comparing the two.
pub fn convergence_study(p: &ForwardProblem, contrasts: &[f64]) -> Result<ConvergenceReport> {
    if contrasts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CdiiError::InvalidProblem(
            "contrasts must be strictly ascending".into(),
        ));
    }
    if let Some(k) = contrasts.iter().find(|k| !(k.is_finite() && **k > 1.0)) {
        return Err(CdiiError::InvalidProblem(format!(
            "contrast {k} must be finite and exceed 1"
        )));
    }
    let limit = solve_limit(&p.with_contrast(Contrast::Infinite))?;
    let geo = &p.geometry;
    let u0 = &limit.u;
    let norm0 = u0.dot(u0).sqrt();
    let grad0 = gradient_norm_sq(geo, u0);
    let mut rows = Vec::with_capacity(contrasts.len());
    for &kk in contrasts {
        let sol = solve_finite_contrast(&p.with_contrast(Contrast::Finite(kk)))?;
        let mut diff = 0.0;
        for k in 0..geo.grid.len() {
            if let (Some(a), Some(b)) = (sol.u.get(k), u0.get(k)) {
                diff += (a - b) * (a - b);
            }
        }
        let diff = (diff * geo.grid.h * geo.grid.h).sqrt();
        let grad = gradient_norm_sq(geo, &sol.u);
        rows.push(ConvergenceRow {
            contrast: kk,
            distance: if norm0 > 0.0 { diff / norm0 } else { diff },
            energy_gap: (sol.energy - limit.energy).abs(),
            grad_norm_ratio: if grad0 > 0.0 { grad / grad0 } else { 0.0 },
            energy: sol.energy,
            flux: sol.per_component_flux.clone(),
            u: sol.u,
        });
    }
    Ok(ConvergenceReport {
        bound: p.lambda_hi / p.lambda_lo,
        limit,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_geometry, InclusionSpec, Shape};

    fn square_problem(n: usize, f: impl Fn(f64, f64) -> f64) -> ForwardProblem {
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
        let sigma = ScalarField::from_fn_masked(g, &geo.omega, |_, _| 1.0);
        let sigma1 = ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0);
        let trace = BoundaryTrace::from_fn(&geo, f);
        ForwardProblem::new(geo, sigma, sigma1, Contrast::Finite(10.0), trace).unwrap()
    }

    #[test]
    fn linear_solution_and_energy() {
        let p = square_problem(11, |x, _| x);
        let sol = solve_finite_contrast(&p).unwrap();
        for k in 0..p.geometry.grid.len() {
            let (x, _) = p.geometry.grid.node_coords(k);
            assert!((sol.u.values[k] - x).abs() < 1e-10);
        }
        assert!((sol.energy - 0.5).abs() < 1e-10, "{}", sol.energy);
    }

    #[test]
    fn limit_without_inclusions_matches_finite() {
        let p = square_problem(15, |x, y| x * x - y + 0.3 * x * y);
        let a = solve_finite_contrast(&p).unwrap();
        let b = solve_limit(&p.with_contrast(Contrast::Infinite)).unwrap();
        for k in 0..a.u.values.len() {
            assert!((a.u.values[k] - b.u.values[k]).abs() < 1e-10);
        }
        assert!(b.per_component_flux.is_empty());
    }

    #[test]
    fn wrong_solver_is_rejected() {
        let p = square_problem(7, |x, _| x);
        assert!(solve_limit(&p).is_err());
        assert!(solve_finite_contrast(&p.with_contrast(Contrast::Infinite)).is_err());
    }

    #[test]
    fn annulus_matches_radial_solution() {
        // Annulus r0 <= r <= 1 with data on both rims; exact u = log(r/r0) / log(1/r0).
        let r0 = 0.3;
        let n = 161;
        let geo0 = build_geometry(
            &Shape::Disc {
                center: (0.0, 0.0),
                radius: 1.0,
            },
            &[],
            n,
        )
        .unwrap();
        let g = geo0.grid;
        // Remove the inner disc from Ω so its rim becomes Dirichlet boundary.
        let omega: Vec<bool> = (0..g.len())
            .map(|k| {
                let (x, y) = g.node_coords(k);
                geo0.omega[k] && x.hypot(y) >= r0
            })
            .collect();
        let geo = InclusionGeometry::plain(g, omega).unwrap();
        let exact = |x: f64, y: f64| (x.hypot(y) / r0).ln() / (1.0 / r0).ln();
        let trace = BoundaryTrace::from_fn(&geo, exact);
        let p = ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.omega, |_, _| 1.0),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
            Contrast::Infinite,
            trace,
        )
        .unwrap();
        let sol = solve_limit(&p).unwrap();
        let mut err: f64 = 0.0;
        for k in 0..g.len() {
            if let Some(v) = sol.u.get(k) {
                let (x, y) = g.node_coords(k);
                err = err.max((v - exact(x, y)).abs());
            }
        }
        // Staircase boundaries carry exact data, so the error is the O(h²)
        // truncation error of the five-point stencil.
        assert!(err < 5e-3, "max error {err}");
    }

    #[test]
    fn perfect_disc_is_equipotential_with_zero_flux() {
        let geo = build_geometry(
            &Shape::Rect {
                min: (-1.0, -1.0),
                max: (1.0, 1.0),
            },
            &[InclusionSpec::perfect(Shape::Disc {
                center: (0.2, -0.1),
                radius: 0.35,
            })],
            61,
        )
        .unwrap();
        let g = geo.grid;
        let p = ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.background(), |x, _| 1.0 + 0.5 * x),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 2.0),
            Contrast::Infinite,
            BoundaryTrace::from_fn(&geo, |x, y| x + 0.3 * y),
        )
        .unwrap();
        let sol = solve_limit(&p).unwrap();
        let comp = &geo.u_components[0];
        let v0 = sol.u.values[comp[0]];
        assert!(comp.iter().all(|&k| sol.u.values[k] == v0));
        assert!(sol.per_component_flux[0].abs() < 1e-10);
    }

    #[test]
    fn contrast_parsing() {
        assert_eq!("inf".parse::<Contrast>().unwrap(), Contrast::Infinite);
        assert_eq!("1e3".parse::<Contrast>().unwrap(), Contrast::Finite(1000.0));
        assert!("0.5".parse::<Contrast>().is_err());
        assert!("banana".parse::<Contrast>().is_err());
    }

    #[test]
    fn unsorted_contrasts_are_rejected() {
        let p = square_problem(7, |x, _| x);
        assert!(convergence_study(&p, &[100.0, 10.0]).is_err());
    }
}
