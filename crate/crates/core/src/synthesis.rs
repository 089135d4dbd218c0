//! Interior data `a = |J|`, admissibility of `(f, a)` and the disc/square
//! phantom whose minimiser is known in closed form.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{CdiiError, Result};
use crate::field::{
    build_geometry, dilate, label_components, open, BoundaryTrace, InclusionGeometry, ScalarField,
    Shape, VectorField,
};
use crate::forward::{
    current_density, solve_finite_contrast, Contrast, ForwardProblem, ForwardSolution,
};
use crate::linalg::{pcg, CgOptions, CsrMatrix};

/// How `a` is filled in on perfect conductors, where Ohm's law says nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extension {
    /// `|K σ₁ ∇u_K|` from a finite-contrast solve.
    FiniteContrast(f64),
    /// The unit circulating field of the disc/square phantom.
    AnalyticExample,
    /// Zero. Generally violates the flux-extension condition.
    None,
}

impl std::fmt::Display for Extension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extension::FiniteContrast(k) => write!(f, "finite:{k}"),
            Extension::AnalyticExample => f.write_str("analytic"),
            Extension::None => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for Extension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "analytic" | "analytic_example" => Ok(Extension::AnalyticExample),
            "none" => Ok(Extension::None),
            _ => {
                let k = s
                    .strip_prefix("finite:")
                    .or_else(|| s.strip_prefix("finite_contrast:"))
                    .ok_or_else(|| {
                        format!("unknown extension '{s}' (finite:<K>, analytic, none)")
                    })?;
                let k: f64 = k
                    .parse()
                    .map_err(|_| format!("invalid contrast in '{s}'"))?;
                if k > 1.0 && k.is_finite() {
                    Ok(Extension::FiniteContrast(k))
                } else {
                    Err(format!("contrast must exceed 1 in '{s}'"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthesized(Extension),
    Loaded,
}

/// Boundary voltage and interior current magnitude.
#[derive(Debug, Clone)]
pub struct AdmissiblePair {
    pub f: BoundaryTrace,
    /// `|J|` on Ω.
    pub a: ScalarField,
    pub geometry: InclusionGeometry,
    pub provenance: Provenance,
}

impl AdmissiblePair {
    /// Checks `a ≥ 0` on Ω and `a = 0` on V.
    pub fn new(
        f: BoundaryTrace,
        a: ScalarField,
        geometry: InclusionGeometry,
        provenance: Provenance,
    ) -> Result<Self> {
        f.check(&geometry)?;
        if a.grid != geometry.grid {
            return Err(CdiiError::InconsistentGeometry(
                "data grid differs from geometry grid".into(),
            ));
        }
        for k in 0..a.grid.len() {
            if !geometry.omega[k] {
                continue;
            }
            let v = a
                .get(k)
                .ok_or_else(|| CdiiError::InvalidField(format!("a undefined at node {k}")))?;
            if v < 0.0 {
                return Err(CdiiError::InvalidField(format!("a = {v} < 0 at node {k}")));
            }
            if geometry.v_mask[k] && v != 0.0 {
                return Err(CdiiError::InvalidField(format!(
                    "a = {v} on insulating node {k}"
                )));
            }
        }
        Ok(Self {
            f,
            a,
            geometry,
            provenance,
        })
    }

    pub fn max_a(&self) -> f64 {
        self.a.max_abs()
    }
}

/// Builds `(f, a)` from a limit solution.
pub fn synthesize_magnitude(
    sol: &ForwardSolution,
    p: &ForwardProblem,
    extension: Extension,
) -> Result<AdmissiblePair> {
    if !p.contrast.is_infinite() {
        return Err(CdiiError::InvalidProblem(
            "synthesis expects a limit-problem solution".into(),
        ));
    }
    let geo = &p.geometry;
    let g = geo.grid;
    if sol.u.grid != g {
        return Err(CdiiError::InconsistentGeometry(
            "solution grid differs from problem grid".into(),
        ));
    }
    let j = current_density(p, &sol.u);
    let mut a = j.node_magnitude(&geo.omega);
    for k in 0..g.len() {
        if geo.v_mask[k] {
            a.values[k] = 0.0;
        }
    }
    match extension {
        Extension::FiniteContrast(kk) => {
            let pk = p.with_contrast(Contrast::Finite(kk));
            let solk = solve_finite_contrast(&pk)?;
            let ak = certified_extension(p, sol, &pk, &solk)?;
            for k in 0..g.len() {
                if geo.u_mask[k] {
                    a.values[k] = ak.values[k];
                }
            }
        }
        Extension::AnalyticExample => {
            if !is_example_geometry(geo) {
                return Err(CdiiError::ModeMismatch(
                    "analytic extension needs the disc/square phantom".into(),
                ));
            }
            for k in 0..g.len() {
                if geo.u_mask[k] {
                    let (x, y) = g.node_coords(k);
                    let (jx, jy) = example_current(x, y);
                    a.values[k] = jx.hypot(jy);
                }
            }
        }
        Extension::None => {
            for k in 0..g.len() {
                if geo.u_mask[k] {
                    a.values[k] = 0.0;
                }
            }
        }
    }
    AdmissiblePair::new(
        p.f.clone(),
        a,
        geo.clone(),
        Provenance::Synthesized(extension),
    )
}

/// `|J|` on U from a finite-contrast solve. The finite-contrast current inside
/// each component is nudged by the smallest gradient correction that makes
/// its normal trace match the limit currents exactly (the mismatch is
/// O(1/K)), so the result certifies the flux-extension condition for the
/// limit data without any slack.
fn certified_extension(
    p: &ForwardProblem,
    sol: &ForwardSolution,
    pk: &ForwardProblem,
    solk: &ForwardSolution,
) -> Result<ScalarField> {
    let geo = &p.geometry;
    let g = geo.grid;
    let mut j = current_density(pk, &solk.u);
    for comp in &geo.u_components {
        let faces = interior_faces(&g, comp);
        if faces.is_empty() {
            continue;
        }
        let mut local = vec![usize::MAX; g.len()];
        for (i, &k) in comp.iter().enumerate() {
            local[k] = i;
        }
        let mut mismatch = vec![0.0; comp.len()];
        for (k, q) in component_boundary_flux(p, &sol.u, comp) {
            mismatch[local[k]] += q;
        }
        for (k, m) in crate::forward::crossing_faces(geo, comp) {
            if let (Some(c), Some(um), Some(uk)) =
                (pk.face_conductance(k, m), solk.u.get(m), solk.u.get(k))
            {
                mismatch[local[k]] -= c * (um - uk);
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); comp.len()];
        for &(k, m) in &faces {
            let (a, b) = (local[k], local[m]);
            rows[a].extend([(a, 1.0), (b, -1.0)]);
            rows[b].extend([(b, 1.0), (a, -1.0)]);
        }
        let lap = CsrMatrix::from_rows(rows);
        let rhs: Vec<f64> = mismatch.iter().map(|d| -d).collect();
        let mut psi = vec![0.0; comp.len()];
        pcg(
            &lap,
            &rhs,
            &mut psi,
            CgOptions {
                rel_tol: 1e-12,
                max_iter: None,
                remove_mean: true,
            },
        )?;
        for &(k, m) in &faces {
            let corr = (psi[local[k]] - psi[local[m]]) / g.h;
            let (i, jj) = g.ij(k);
            if m == k + 1 {
                j.fx[g.xface(i, jj)] += corr;
            } else {
                j.fy[g.yface(i, jj)] += corr;
            }
        }
    }
    Ok(dominating_magnitude(&j, &geo.u_mask))
}

/// Faces `(k, m)` with both ends in the node set, `m` to the right of or
/// above `k`.
fn interior_faces(grid: &crate::field::Grid, comp: &[usize]) -> Vec<(usize, usize)> {
    let mut inside = vec![false; grid.len()];
    for &k in comp {
        inside[k] = true;
    }
    let mut faces = Vec::new();
    for &k in comp {
        let (i, j) = grid.ij(k);
        let right = (i + 1 < grid.nx).then(|| k + 1);
        let up = (j + 1 < grid.ny).then(|| k + grid.nx);
        faces.extend(
            [right, up]
                .into_iter()
                .flatten()
                .filter(|&m| inside[m])
                .map(|m| (k, m)),
        );
    }
    faces
}

/// Nodal `|J|` built from the largest adjacent face current along each axis.
/// Consistent to first order for smooth fields, and never below the current
/// on any face touching the node, so the field it came from satisfies the
/// face bounds it induces.
fn dominating_magnitude(j: &VectorField, mask: &[bool]) -> ScalarField {
    let g = j.grid;
    let mut out = ScalarField::from_fn_masked(g, mask, |_, _| 0.0);
    for k in 0..g.len() {
        if !mask[k] {
            continue;
        }
        let (i, jj) = g.ij(k);
        let mut mx: f64 = 0.0;
        let mut my: f64 = 0.0;
        let xfaces = [
            (i > 0).then(|| g.xface(i - 1, jj)),
            (i + 1 < g.nx).then(|| g.xface(i, jj)),
        ];
        let yfaces = [
            (jj > 0).then(|| g.yface(i, jj - 1)),
            (jj + 1 < g.ny).then(|| g.yface(i, jj)),
        ];
        for f in xfaces.into_iter().flatten().filter(|&f| j.x_active[f]) {
            mx = mx.max(j.fx[f].abs());
        }
        for f in yfaces.into_iter().flatten().filter(|&f| j.y_active[f]) {
            my = my.max(j.fy[f].abs());
        }
        out.values[k] = mx.hypot(my);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Admissible,
    Inadmissible,
    Undecided,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Admissible => "admissible",
            Verdict::Inadmissible => "inadmissible",
            Verdict::Undecided => "undecided",
        })
    }
}

/// Zeros of `a` outside the closure of U, split into an open part and a
/// residual set.
#[derive(Debug, Clone, Default)]
pub struct ZeroPartition {
    pub open_components: Vec<Vec<usize>>,
    pub gamma_nodes: Vec<usize>,
    /// Every V node lies in the open part.
    pub covers_v: bool,
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// `max |a - σ|∇u_σ||` off a one-node collar of U ∪ V.
    pub cond_i_residual: f64,
    /// `max a` on V (must be 0).
    pub max_a_on_v: f64,
    pub per_component_net_flux: Vec<f64>,
    /// Largest violation of the face bounds by the best certifying flux
    /// found; `≤ feasibility tolerance` means a certificate exists.
    pub cond_ii_slack: f64,
    pub cond_ii_iterations: Vec<usize>,
    /// The face bound `|q_face| ≤ a` admits vectors up to this factor longer
    /// than the Euclidean bound `|q| ≤ a`.
    pub face_bound_relaxation: f64,
    pub cond_iii: ZeroPartition,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityOptions {
    /// Tolerance on `cond_i_residual`, relative to `max a`.
    pub cond_i_rel_tol: f64,
    /// Absolute tolerance on each component's net flux.
    pub flux_tol: f64,
    /// Feasibility declared when slack ≤ this times `max a`.
    pub feasibility_rel_tol: f64,
    pub max_iters: usize,
    /// Zero threshold for `a`, relative to `max a`.
    pub eps_a_rel: f64,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        Self {
            cond_i_rel_tol: 0.25,
            flux_tol: 1e-10,
            feasibility_rel_tol: 1e-6,
            max_iters: 10_000,
            eps_a_rel: 1e-3,
        }
    }
}

/// Checks the three admissibility conditions against a generating
/// conductivity `sigma` (on Ω ∖ (U ∪ V)) and potential `u_sigma`.
pub fn check_admissibility(
    pair: &AdmissiblePair,
    sigma: &ScalarField,
    u_sigma: &ScalarField,
) -> Result<AdmissibilityReport> {
    check_admissibility_with(pair, sigma, u_sigma, AdmissibilityOptions::default())
}

pub fn check_admissibility_with(
    pair: &AdmissiblePair,
    sigma: &ScalarField,
    u_sigma: &ScalarField,
    opts: AdmissibilityOptions,
) -> Result<AdmissibilityReport> {
    let geo = &pair.geometry;
    let g = geo.grid;
    if sigma.grid != g || u_sigma.grid != g || pair.a.grid != g {
        return Err(CdiiError::InconsistentGeometry(
            "fields live on different grids".into(),
        ));
    }
    for k in 0..g.len() {
        if geo.omega[k] && !geo.u_mask[k] && !geo.v_mask[k] && sigma.get(k).is_none() {
            return Err(CdiiError::InconsistentGeometry(format!(
                "sigma undefined at background node {k}"
            )));
        }
        if geo.omega[k] && !geo.v_mask[k] && u_sigma.get(k).is_none() {
            return Err(CdiiError::InconsistentGeometry(format!(
                "potential undefined at node {k}"
            )));
        }
    }
    // The limit problem with this σ supplies the face conductances.
    let sigma_bg = sigma.restricted(&geo.background());
    let limit = ForwardProblem {
        geometry: geo.clone(),
        sigma: sigma_bg,
        sigma1: ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
        contrast: Contrast::Infinite,
        f: pair.f.clone(),
        lambda_lo: 0.0,
        lambda_hi: 0.0,
    };
    let max_a = pair.max_a();

    // (i)
    let j = current_density(&limit, u_sigma);
    let magnitude = j.node_magnitude(&geo.omega);
    let inclusions: Vec<bool> = (0..g.len())
        .map(|k| geo.u_mask[k] || geo.v_mask[k])
        .collect();
    let collar = dilate(&g, &inclusions, 1);
    let mut cond_i_residual: f64 = 0.0;
    let mut max_a_on_v: f64 = 0.0;
    for k in 0..g.len() {
        if !geo.omega[k] {
            continue;
        }
        let ak = pair.a.values[k];
        if geo.v_mask[k] {
            max_a_on_v = max_a_on_v.max(ak.abs());
        } else if !collar[k] {
            cond_i_residual = cond_i_residual.max((ak - magnitude.values[k]).abs());
        }
    }

    // (ii)
    let mut per_component_net_flux = Vec::new();
    let mut cond_ii_slack: f64 = 0.0;
    let mut cond_ii_iterations = Vec::new();
    let feas_tol = opts.feasibility_rel_tol * max_a;
    for comp in &geo.u_components {
        let boundary = component_boundary_flux(&limit, u_sigma, comp);
        let net: f64 = boundary.iter().map(|(_, q)| q).sum();
        per_component_net_flux.push(net);
        if net.abs() > opts.flux_tol {
            // The functional is unbounded below along constants; no flux
            // certificate can exist.
            cond_ii_slack = f64::INFINITY;
            cond_ii_iterations.push(0);
            continue;
        }
        let (slack, iters) =
            flux_extension_slack(&g, comp, &boundary, &pair.a, feas_tol, opts.max_iters)?;
        cond_ii_slack = cond_ii_slack.max(slack);
        cond_ii_iterations.push(iters);
    }

    // (iii)
    let eps_a = opts.eps_a_rel * max_a;
    let u_closure = dilate(&g, &geo.u_mask, 1);
    let flagged: Vec<bool> = (0..g.len())
        .map(|k| geo.omega[k] && !u_closure[k] && pair.a.values[k] < eps_a)
        .collect();
    let opened = open(&g, &flagged);
    let open_components = label_components(&g, &opened);
    let gamma_nodes: Vec<usize> = (0..g.len()).filter(|&k| flagged[k] && !opened[k]).collect();
    let covers_v = (0..g.len()).all(|k| !geo.v_mask[k] || opened[k]);

    let verdict = if max_a_on_v > 0.0
        || per_component_net_flux
            .iter()
            .any(|q| q.abs() > opts.flux_tol)
        || cond_ii_slack > feas_tol
    {
        Verdict::Inadmissible
    } else if cond_i_residual > opts.cond_i_rel_tol * max_a {
        Verdict::Undecided
    } else {
        Verdict::Admissible
    };

    Ok(AdmissibilityReport {
        cond_i_residual,
        max_a_on_v,
        per_component_net_flux,
        cond_ii_slack,
        cond_ii_iterations,
        face_bound_relaxation: std::f64::consts::SQRT_2,
        cond_iii: ZeroPartition {
            open_components,
            gamma_nodes,
            covers_v,
        },
        verdict,
    })
}

/// Outward normal currents `σ ∂u/∂ν` through the faces leaving a component,
/// keyed by the inner node.
///
/// Each outside node `m` passes on what it receives from the component, so
/// the current through its inclusion faces is read off its other faces
/// (split evenly when it touches the component more than once). For a
/// discrete solution this equals the face current exactly; for a sampled
/// closed-form potential it avoids the O(1) error of differencing across the
/// interface. Dirichlet nodes and nodes touching two components fall back to
/// the face current itself.
fn component_boundary_flux(
    p: &ForwardProblem,
    u: &ScalarField,
    comp: &[usize],
) -> Vec<(usize, f64)> {
    let geo = &p.geometry;
    let g = geo.grid;
    let mut inside = vec![false; g.len()];
    for &k in comp {
        inside[k] = true;
    }
    crate::forward::crossing_faces(geo, comp)
        .filter_map(|(k, m)| {
            let c = p.face_conductance(k, m)?;
            let (uk, um) = (u.get(k)?, u.get(m)?);
            let direct = c * (um - uk);
            if geo.u_mask[m] {
                return Some((k, direct));
            }
            let mut touches = 0usize;
            let mut rest = 0.0;
            for q in g.neighbors4(m) {
                if inside[q] {
                    touches += 1;
                } else if geo.u_mask[q] {
                    return Some((k, direct));
                } else if let (Some(cq), Some(uq)) = (p.face_conductance(m, q), u.get(q)) {
                    rest += cq * (uq - um);
                }
            }
            Some((k, rest / touches as f64))
        })
        .collect()
}

/// Smallest uniform relaxation `t ≥ 0` (current-density units) such that a
/// conservative face flux inside the component matches the boundary currents
/// with `|q_face| ≤ (a_face + t) h` on every interior face.
///
/// By the circulation theorem this is a max-flow question: the supplies are
/// routed through the face graph with symmetric capacities. `t` is found by
/// bisection to within `tol`. Returns `t` and the number of max-flow solves.
fn flux_extension_slack(
    grid: &crate::field::Grid,
    comp: &[usize],
    boundary: &[(usize, f64)],
    a: &ScalarField,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, usize)> {
    let h = grid.h;
    let mut local = vec![usize::MAX; grid.len()];
    for (i, &k) in comp.iter().enumerate() {
        local[k] = i;
    }
    let n = comp.len();
    let mut supply = vec![0.0; n];
    for &(k, q) in boundary {
        supply[local[k]] += q;
    }
    let (faces, caps): (Vec<_>, Vec<_>) = interior_faces(grid, comp)
        .into_iter()
        .map(|(k, m)| ((local[k], local[m]), 0.5 * (a.values[k] + a.values[m])))
        .unzip();
    let total: f64 = supply.iter().filter(|&&s| s > 0.0).sum();
    if total == 0.0 {
        return Ok((0.0, 0));
    }
    let solves = std::cell::Cell::new(0usize);
    let deficit = |t: f64| {
        solves.set(solves.get() + 1);
        let mut net = FlowNetwork::new(n + 2);
        let (src, sink) = (n, n + 1);
        for (&(u, v), &c) in faces.iter().zip(&caps) {
            net.add_undirected(u, v, (c + t) * h);
        }
        for (k, &s) in supply.iter().enumerate() {
            if s > 0.0 {
                net.add_edge(src, k, s);
            } else if s < 0.0 {
                net.add_edge(k, sink, -s);
            }
        }
        total - net.max_flow(src, sink)
    };
    // Routing error allowed at a given `t`; the flow is exact up to rounding.
    let accept = 1e-9 * total;
    if deficit(0.0) <= accept {
        return Ok((0.0, solves.get()));
    }
    let mut lo = 0.0;
    let mut hi = caps
        .iter()
        .chain(supply.iter())
        .fold(tol.max(1e-12), |m, v| m.max(v.abs() / h));
    while deficit(hi) > accept {
        lo = hi;
        hi *= 2.0;
        if solves.get() > max_iters {
            return Err(CdiiError::NoConvergence {
                iterations: solves.get(),
                residual: hi,
            });
        }
    }
    while hi - lo > tol && solves.get() < max_iters {
        let mid = 0.5 * (lo + hi);
        if deficit(mid) <= accept {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, solves.get()))
}

/// Dinic's algorithm on a small residual graph with real capacities.
struct FlowNetwork {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self {
            head: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn push_pair(&mut self, u: usize, v: usize, cuv: f64, cvu: f64) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(cuv);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(cvu);
    }

    fn add_edge(&mut self, u: usize, v: usize, c: f64) {
        self.push_pair(u, v, c, 0.0);
    }

    fn add_undirected(&mut self, u: usize, v: usize, c: f64) {
        self.push_pair(u, v, c, c);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.head.len();
        let eps = 1e-15 * self.cap.iter().fold(0.0f64, |m, &c| m.max(c));
        let mut flow = 0.0;
        let mut level = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        loop {
            level.iter_mut().for_each(|l| *l = usize::MAX);
            level[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if self.cap[e] > eps && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                return flow;
            }
            let mut next = vec![0usize; n];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next, eps);
                if pushed <= eps {
                    break;
                }
                flow += pushed;
            }
        }
    }

    /// Iterative blocking-flow search along level-increasing edges.
    fn augment(
        &mut self,
        s: usize,
        t: usize,
        limit: f64,
        level: &[usize],
        next: &mut [usize],
        eps: f64,
    ) -> f64 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().fold(limit, |m, &e| m.min(self.cap[e]));
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                return f;
            }
            let mut advanced = false;
            while next[u] < self.head[u].len() {
                let e = self.head[u][next[u]];
                let v = self.to[e];
                if self.cap[e] > eps && level[v] == level[u] + 1 {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                // Dead end: retreat and skip the edge that led here.
                let Some(e) = path.pop() else {
                    return 0.0;
                };
                u = self.to[e ^ 1];
                next[u] += 1;
            }
        }
    }
}

/// Half side of the square perfect conductor, `1/√2`.
pub const EXAMPLE_HALF_SIDE: f64 = FRAC_1_SQRT_2;

fn in_example_square(x: f64, y: f64) -> bool {
    x.abs() < EXAMPLE_HALF_SIDE && y.abs() < EXAMPLE_HALF_SIDE
}

/// Closed-form potential of the phantom: `2x² - 1` on the left/right lobes,
/// `0` on the square, `1 - 2y²` on the top/bottom lobes.
pub fn example_potential(x: f64, y: f64) -> f64 {
    if in_example_square(x, y) {
        0.0
    } else if x.abs() >= y.abs() {
        2.0 * x * x - 1.0
    } else {
        1.0 - 2.0 * y * y
    }
}

/// Generating conductivity `1 / (4 max(|x|, |y|))` outside the square.
pub fn example_conductivity(x: f64, y: f64) -> Option<f64> {
    (!in_example_square(x, y)).then(|| 0.25 / x.abs().max(y.abs()))
}

/// Unit current field: `σ∇u` outside the square, the four-triangle
/// circulating field inside.
pub fn example_current(x: f64, y: f64) -> (f64, f64) {
    if in_example_square(x, y) {
        if y >= x.abs() {
            (0.0, -1.0)
        } else if -y >= x.abs() {
            (0.0, 1.0)
        } else if x > y.abs() {
            (1.0, 0.0)
        } else {
            (-1.0, 0.0)
        }
    } else if x.abs() >= y.abs() {
        (x.signum(), 0.0)
    } else {
        (0.0, -y.signum())
    }
}

/// Boundary voltage `cos 2θ` on the unit circle.
pub fn example_trace_angle(theta: f64) -> f64 {
    (2.0 * theta).cos()
}

/// The unit disc with the square conductor. Where the square's corners meet
/// the circle, nodes that end up on ∂Ω are handed to the background.
pub fn example_geometry(n: usize) -> Result<InclusionGeometry> {
    let disc = build_geometry(
        &Shape::Disc {
            center: (0.0, 0.0),
            radius: 1.0,
        },
        &[],
        n,
    )?;
    let g = disc.grid;
    let u_mask = (0..g.len())
        .map(|k| {
            let (x, y) = g.node_coords(k);
            disc.omega[k] && !disc.boundary[k] && in_example_square(x, y)
        })
        .collect();
    InclusionGeometry::from_masks(g, disc.omega, u_mask, vec![false; g.len()])
}

fn is_example_geometry(geo: &InclusionGeometry) -> bool {
    let g = geo.grid;
    if g.nx != g.ny || g.origin != (-1.0, -1.0) {
        return false;
    }
    match example_geometry(g.nx) {
        Ok(e) => {
            e.grid == g && e.omega == geo.omega && e.u_mask == geo.u_mask && e.v_mask == geo.v_mask
        }
        Err(_) => false,
    }
}

#[derive(Debug, Clone)]
pub struct ExamplePhantom {
    /// Limit problem with the generating conductivity and `σ₁ = 1` on U.
    pub problem: ForwardProblem,
    /// `a ≡ 1` on the disc.
    pub pair: AdmissiblePair,
    pub exact_u: ScalarField,
    /// Generating conductivity, undefined on U.
    pub exact_sigma: ScalarField,
}

/// The unit disc with the inscribed square conductor and `f = x² - y²`.
///
/// Boundary nodes sit slightly inside the circle; they carry the closed-form
/// potential, which equals `x² - y²` on the circle itself.
pub fn example_phantom(n: usize) -> Result<ExamplePhantom> {
    if n < 51 || n % 2 == 0 {
        return Err(CdiiError::InvalidGrid(format!(
            "phantom resolution must be odd and >= 51, got {n}"
        )));
    }
    let geo = example_geometry(n)?;
    let g = geo.grid;
    let background = geo.background();
    let exact_sigma =
        ScalarField::from_fn_masked(g, &background, |x, y| 0.25 / x.abs().max(y.abs()));
    let sigma1 = ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0);
    let f = BoundaryTrace::from_fn(&geo, example_potential);
    let problem = ForwardProblem::new(
        geo.clone(),
        exact_sigma.clone(),
        sigma1,
        Contrast::Infinite,
        f.clone(),
    )?;
    let exact_u = ScalarField::from_fn_masked(g, &geo.omega, example_potential);
    let a = ScalarField::from_fn_masked(g, &geo.omega, |x, y| {
        let (jx, jy) = example_current(x, y);
        jx.hypot(jy)
    });
    let pair = AdmissiblePair::new(
        f,
        a,
        geo,
        Provenance::Synthesized(Extension::AnalyticExample),
    )?;
    Ok(ExamplePhantom {
        problem,
        pair,
        exact_u,
        exact_sigma,
    })
}

/// Example current sampled on faces (outside the square only).
pub fn example_current_field(geo: &InclusionGeometry) -> VectorField {
    let bg = geo.background();
    VectorField::from_fn_masked(geo.grid, &bg, example_current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_limit;

    #[test]
    fn phantom_values() {
        assert!((example_potential(0.8, 0.0) - 0.28).abs() < 1e-12);
        assert!((example_potential(0.0, 0.9) + 0.62).abs() < 1e-12);
        assert_eq!(example_potential(0.3, 0.2), 0.0);
        assert!((example_conductivity(0.8, 0.0).unwrap() - 0.3125).abs() < 1e-12);
        assert!((example_conductivity(0.0, 0.9).unwrap() - 1.0 / 3.6).abs() < 1e-12);
        assert!(example_conductivity(0.1, 0.1).is_none());
        for t in 0..32 {
            let th = t as f64 * 0.2;
            assert!(
                (example_potential(th.cos(), th.sin()) - example_trace_angle(th)).abs() < 1e-12
            );
        }
    }

    #[test]
    fn phantom_fields_on_grid() {
        let ph = example_phantom(201).unwrap();
        let g = ph.problem.geometry.grid;
        let k = g.nearest_node(0.8, 0.0);
        assert!((ph.exact_u.values[k] - 0.28).abs() < 1e-12);
        assert!((ph.exact_sigma.values[k] - 0.3125).abs() < 1e-12);
        assert!(ph.pair.a.defined_values().all(|v| v == 1.0));
        assert!(example_phantom(50).is_err());
        assert!(example_phantom(49).is_err());
    }

    #[test]
    fn sigma_times_gradient_is_one_off_the_square() {
        // Centred differences of the closed form; exact for the quadratic
        // pieces, O(h) next to the square.
        let ph = example_phantom(101).unwrap();
        let geo = &ph.problem.geometry;
        let g = geo.grid;
        let collar = dilate(&g, &geo.u_mask, 2);
        let grad = crate::field::nodal_gradient_norm(&ph.exact_u);
        for k in 0..g.len() {
            if geo.omega[k] && !geo.boundary[k] && !collar[k] {
                let (x, y) = g.node_coords(k);
                if (x.abs() - y.abs()).abs() < 2.0 * g.h {
                    continue;
                }
                let v = ph.exact_sigma.values[k] * grad.values[k];
                assert!((v - 1.0).abs() < 1e-12, "{v} at ({x}, {y})");
            }
        }
    }

    #[test]
    fn no_inclusion_linear_data_is_unit() {
        let geo = build_geometry(
            &Shape::Rect {
                min: (0.0, 0.0),
                max: (1.0, 1.0),
            },
            &[],
            21,
        )
        .unwrap();
        let g = geo.grid;
        let p = ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.omega, |_, _| 1.0),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
            Contrast::Infinite,
            BoundaryTrace::from_fn(&geo, |x, _| x),
        )
        .unwrap();
        let sol = solve_limit(&p).unwrap();
        let pair = synthesize_magnitude(&sol, &p, Extension::None).unwrap();
        assert!(pair.a.defined_values().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn analytic_extension_requires_the_phantom() {
        let geo = build_geometry(
            &Shape::Disc {
                center: (0.0, 0.0),
                radius: 1.0,
            },
            &[],
            51,
        )
        .unwrap();
        let g = geo.grid;
        let p = ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.omega, |_, _| 1.0),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
            Contrast::Infinite,
            BoundaryTrace::from_fn(&geo, |x, _| x),
        )
        .unwrap();
        let sol = solve_limit(&p).unwrap();
        assert!(matches!(
            synthesize_magnitude(&sol, &p, Extension::AnalyticExample),
            Err(CdiiError::ModeMismatch(_))
        ));
    }

    #[test]
    fn extension_parsing() {
        assert_eq!(
            "finite:1e4".parse::<Extension>().unwrap(),
            Extension::FiniteContrast(1e4)
        );
        assert_eq!(
            "analytic".parse::<Extension>().unwrap(),
            Extension::AnalyticExample
        );
        assert_eq!("none".parse::<Extension>().unwrap(), Extension::None);
        assert!("finite:0.5".parse::<Extension>().is_err());
        assert!("bogus".parse::<Extension>().is_err());
    }

    fn disc_inclusion_problem(n: usize) -> ForwardProblem {
        use crate::field::InclusionSpec;
        let geo = build_geometry(
            &Shape::Rect {
                min: (-1.0, -1.0),
                max: (1.0, 1.0),
            },
            &[InclusionSpec::perfect(Shape::Disc {
                center: (0.0, 0.0),
                radius: 0.4,
            })],
            n,
        )
        .unwrap();
        let g = geo.grid;
        ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.background(), |_, _| 1.0),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
            Contrast::Infinite,
            BoundaryTrace::from_fn(&geo, |x, _| x),
        )
        .unwrap()
    }

    #[test]
    fn phantom_pair_is_admissible() {
        let ph = example_phantom(101).unwrap();
        let sol = solve_limit(&ph.problem).unwrap();
        let rep = check_admissibility(&ph.pair, &ph.exact_sigma, &ph.exact_u).unwrap();
        assert_eq!(rep.verdict, Verdict::Admissible, "{rep:?}");
        // The discrete limit potential certifies the same pair.
        let rep = check_admissibility(&ph.pair, &ph.exact_sigma, &sol.u).unwrap();
        assert!(rep.cond_ii_slack <= 1e-6);
        assert!(rep.per_component_net_flux[0].abs() < 1e-10);
        assert!(rep.cond_iii.open_components.is_empty());
    }

    #[test]
    fn zero_extension_is_rejected() {
        let p = disc_inclusion_problem(41);
        let sol = solve_limit(&p).unwrap();
        let pair = synthesize_magnitude(&sol, &p, Extension::None).unwrap();
        let rep = check_admissibility(&pair, &p.sigma, &sol.u).unwrap();
        assert_eq!(rep.verdict, Verdict::Inadmissible);
        assert!(rep.cond_ii_slack > 0.1);
    }

    #[test]
    fn finite_contrast_extension_is_admissible() {
        let p = disc_inclusion_problem(41);
        let sol = solve_limit(&p).unwrap();
        for k in [1e3, 1e4] {
            let pair = synthesize_magnitude(&sol, &p, Extension::FiniteContrast(k)).unwrap();
            let rep = check_admissibility(&pair, &p.sigma, &sol.u).unwrap();
            assert_eq!(rep.verdict, Verdict::Admissible, "{rep:?}");
            assert!(rep.cond_ii_slack <= 10.0 / k);
        }
    }

    #[test]
    fn net_outflow_is_inadmissible() {
        let p = disc_inclusion_problem(41);
        let sol = solve_limit(&p).unwrap();
        let pair = synthesize_magnitude(&sol, &p, Extension::FiniteContrast(1e4)).unwrap();
        // r² grows away from the inclusion on every side.
        let g = p.geometry.grid;
        let u = ScalarField::from_fn_masked(g, &p.geometry.omega, |x, y| x * x + y * y);
        let rep = check_admissibility(&pair, &p.sigma, &u).unwrap();
        assert!(rep.per_component_net_flux[0] > 1e-3);
        assert_eq!(rep.verdict, Verdict::Inadmissible);
    }

    #[test]
    fn insulator_zero_set_is_open() {
        use crate::field::InclusionSpec;
        let geo = build_geometry(
            &Shape::Rect {
                min: (-1.0, -1.0),
                max: (1.0, 1.0),
            },
            &[InclusionSpec::insulating(Shape::Disc {
                center: (0.0, 0.0),
                radius: 0.3,
            })],
            41,
        )
        .unwrap();
        let g = geo.grid;
        let p = ForwardProblem::new(
            geo.clone(),
            ScalarField::from_fn_masked(g, &geo.background(), |_, _| 1.0),
            ScalarField::from_fn_masked(g, &geo.u_mask, |_, _| 1.0),
            Contrast::Infinite,
            BoundaryTrace::from_fn(&geo, |x, _| x),
        )
        .unwrap();
        let sol = solve_limit(&p).unwrap();
        let pair = synthesize_magnitude(&sol, &p, Extension::None).unwrap();
        let rep = check_admissibility(&pair, &p.sigma, &sol.u).unwrap();
        assert_eq!(rep.verdict, Verdict::Admissible);
        assert_eq!(rep.cond_iii.open_components.len(), 1);
        assert!(rep.cond_iii.covers_v);
    }
}
