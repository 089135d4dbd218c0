//! Weighted least-gradient reconstruction: minimise `∫ a|∇v|` with `v = f` on
//! ∂Ω, then split the degenerate set and read off `σ = a / |∇u|`.

use crate::error::{CdiiError, Result};
use crate::field::{
    dilate, erode, label_components, nodal_gradient_norm, open, outer_ring, Grid, ScalarField,
};
use crate::forward::harmonic_extension;
use crate::synthesis::AdmissiblePair;

/// Starting point of the primal iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Harmonic extension of `f`.
    Harmonic,
    /// `f` on ∂Ω, the midpoint of its range inside.
    MidRange,
    /// A given field (values off Ω and on ∂Ω are ignored).
    Field(ScalarField),
}

#[derive(Debug, Clone)]
pub struct SolverParams {
    pub max_iters: usize,
    /// Stop once `(primal - dual) / primal ≤ gap_tol`.
    pub gap_tol: f64,
    /// Over-relaxation in `[0, 1]`.
    pub theta: f64,
    /// Primal step; derived from `s` (or from the data scales) when unset.
    pub tau: Option<f64>,
    /// Dual step; derived from `tau` (or from the data scales) when unset.
    pub s: Option<f64>,
    pub init: Init,
    /// Gap evaluation period (iterations).
    pub check_every: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            gap_tol: 1e-7,
            theta: 1.0,
            tau: None,
            s: None,
            init: Init::Harmonic,
            check_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentLabel {
    Perfect,
    Insulating,
    SingularOrPerfect,
    Indeterminate,
    FlatUnknown,
}

impl std::fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ComponentLabel::Perfect => "perfect",
            ComponentLabel::Insulating => "insulating",
            ComponentLabel::SingularOrPerfect => "singular_or_perfect",
            ComponentLabel::Indeterminate => "indeterminate",
            ComponentLabel::FlatUnknown => "flat_unknown",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ZeroComponent {
    pub nodes: Vec<usize>,
    pub label: ComponentLabel,
}

#[derive(Debug, Clone, Default)]
pub struct ZeroSetDecomposition {
    pub components: Vec<ZeroComponent>,
    pub gamma_nodes: Vec<usize>,
    pub z_mask: Vec<bool>,
}

impl ZeroSetDecomposition {
    /// `z_mask ∪ Γ`.
    pub fn degenerate_mask(&self) -> Vec<bool> {
        let mut m = self.z_mask.clone();
        for &k in &self.gamma_nodes {
            m[k] = true;
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub u: ScalarField,
    /// Filled by [`recover_conductivity`]; undefined until then.
    pub sigma: ScalarField,
    pub decomposition: ZeroSetDecomposition,
    /// Primal objective, sampled every `check_every` iterations.
    pub energy_history: Vec<f64>,
    pub final_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max(min f - u, u - max f, 0)` over Ω.
    pub max_principle_violation: f64,
}

impl ReconstructionResult {
    /// `Err(NoConvergence)` when the gap target was missed.
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(CdiiError::NoConvergence {
                iterations: self.iterations,
                residual: self.final_gap,
            })
        }
    }

    /// Moving-average smoothing of the energy history, checked for monotone
    /// decrease up to `rel_tol` of the first smoothed value.
    pub fn energy_smoothly_decreasing(&self, window: usize, rel_tol: f64) -> bool {
        let e = &self.energy_history;
        if e.len() <= window {
            return true;
        }
        let mut sum: f64 = e[..window].iter().sum();
        let mut prev = sum / window as f64;
        let scale = prev.abs().max(f64::MIN_POSITIVE);
        for i in window..e.len() {
            sum += e[i] - e[i - window];
            let cur = sum / window as f64;
            if cur > prev + rel_tol * scale {
                return false;
            }
            prev = cur;
        }
        true
    }
}

/// One-sided difference pairs `(forward in x, forward in y)`. The discrete
/// functional averages the forward and the backward stencil; a single
/// one-sided stencil smears kinks on one side of an inclusion only.
const STENCILS: [(bool, bool); 2] = [(true, true), (false, false)];

/// Node-paired one-sided differences restricted to Ω.
struct Differences<'a> {
    omega: &'a [bool],
    nx: usize,
    /// `k` and `k + 1` both in Ω.
    has_x: Vec<bool>,
    /// `k` and `k + nx` both in Ω.
    has_y: Vec<bool>,
}

impl<'a> Differences<'a> {
    fn new(grid: &Grid, omega: &'a [bool]) -> Self {
        let n = grid.len();
        let has_x = (0..n)
            .map(|k| omega[k] && grid.ij(k).0 + 1 < grid.nx && omega[k + 1])
            .collect();
        let has_y = (0..n)
            .map(|k| omega[k] && k + grid.nx < n && omega[k + grid.nx])
            .collect();
        Self {
            omega,
            nx: grid.nx,
            has_x,
            has_y,
        }
    }

    /// Face index (left/lower node) of the x and y differences used at `k`.
    #[inline]
    fn faces(&self, k: usize, fwd: (bool, bool)) -> (Option<usize>, Option<usize>) {
        let fx = if fwd.0 { Some(k) } else { k.checked_sub(1) };
        let fy = if fwd.1 {
            Some(k)
        } else {
            k.checked_sub(self.nx)
        };
        (fx.filter(|&f| self.has_x[f]), fy.filter(|&f| self.has_y[f]))
    }

    #[inline]
    fn diff(&self, v: &[f64], k: usize, fwd: (bool, bool)) -> (f64, f64) {
        let (fx, fy) = self.faces(k, fwd);
        (
            fx.map_or(0.0, |f| v[f + 1] - v[f]),
            fy.map_or(0.0, |f| v[f + self.nx] - v[f]),
        )
    }

    /// `h Σ_k a_k · mean over stencils |Δv|`.
    fn tv(&self, a: &[f64], v: &[f64], h: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..a.len() {
            if self.omega[k] && a[k] > 0.0 {
                let s: f64 = STENCILS
                    .iter()
                    .map(|&st| {
                        let (dx, dy) = self.diff(v, k, st);
                        dx.hypot(dy)
                    })
                    .sum();
                acc += a[k] * s;
            }
        }
        acc * h / STENCILS.len() as f64
    }
}

/// Discrete `∫ a|∇v|`: at every node the Euclidean norm of the one-sided
/// differences, averaged over the forward and backward stencils and
/// weighted by `h²`. Differences reaching outside Ω are dropped.
pub fn weighted_tv(a: &ScalarField, v: &ScalarField, omega: &[bool]) -> f64 {
    let g = a.grid;
    let av: Vec<f64> = (0..g.len())
        .map(|k| {
            if omega[k] && a.defined[k] {
                a.values[k].max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let vv: Vec<f64> = v
        .values
        .iter()
        .map(|x| if x.is_finite() { *x } else { 0.0 })
        .collect();
    Differences::new(&g, omega).tv(&av, &vv, g.h)
}

/// `τ/s` at unit scales. Tuned on the disc example; the default symmetric
/// choice needs about a third more iterations there.
const STEP_RATIO: f64 = 0.005;

/// Steps with `τ s = h²/8`. When neither is given the ratio follows
/// `osc f / max a`, which makes the iteration invariant under rescaling
/// either datum.
fn step_sizes(pair: &AdmissiblePair, params: &SolverParams) -> (f64, f64) {
    let h = pair.geometry.grid.h;
    let product = h * h / 8.0;
    match (params.tau, params.s) {
        (Some(t), Some(s)) => (t, s),
        (Some(t), None) => (t, product / t),
        (None, Some(s)) => (product / s, s),
        (None, None) => {
            let (lo, hi) = pair.f.range();
            let (osc, amax) = (hi - lo, pair.max_a());
            let unit = if osc > 0.0 && amax > 0.0 {
                osc / amax
            } else {
                1.0
            };
            let ratio = STEP_RATIO * unit;
            (product.sqrt() * ratio.sqrt(), product.sqrt() / ratio.sqrt())
        }
    }
}

/// Chambolle–Pock saddle-point iteration for `min_v max_{|p| ≤ a} ⟨∇v, p⟩`
/// with `v = f` on ∂Ω.
pub fn minimize_weighted_gradient(
    pair: &AdmissiblePair,
    params: &SolverParams,
) -> Result<ReconstructionResult> {
    let geo = &pair.geometry;
    let g = geo.grid;
    let h = g.h;
    let n = g.len();
    let (tau, s) = step_sizes(pair, params);
    if !(tau > 0.0 && s > 0.0) || tau * s * 8.0 / (h * h) > 1.0 + 1e-12 {
        return Err(CdiiError::InvalidProblem(format!(
            "steps tau={tau}, s={s} violate tau*s*8/h^2 <= 1"
        )));
    }
    if !(0.0..=1.0).contains(&params.theta) {
        return Err(CdiiError::InvalidProblem(format!(
            "theta = {} outside [0, 1]",
            params.theta
        )));
    }
    if params.max_iters == 0 || params.check_every == 0 {
        return Err(CdiiError::InvalidProblem(
            "iteration counts must be positive".into(),
        ));
    }
    pair.f.check(geo)?;

    let omega = &geo.omega;
    let ops = Differences::new(&g, omega);
    let free: Vec<bool> = (0..n).map(|k| omega[k] && !geo.boundary[k]).collect();
    let a: Vec<f64> = (0..n)
        .map(|k| {
            if omega[k] {
                pair.a.values[k].max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let (fmin, fmax) = pair.f.range();
    let fb: Vec<f64> = (0..n)
        .map(|k| {
            if geo.boundary[k] {
                pair.f.value_at(k).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();

    let mut v = match &params.init {
        Init::Harmonic => harmonic_extension(geo, &pair.f)?.values,
        Init::MidRange => vec![0.5 * (fmin + fmax); n],
        Init::Field(u0) => {
            if u0.grid != g {
                return Err(CdiiError::InconsistentGeometry(
                    "initial field on a different grid".into(),
                ));
            }
            u0.values.clone()
        }
    };
    for k in 0..n {
        if !omega[k] {
            v[k] = 0.0;
        } else if geo.boundary[k] {
            v[k] = fb[k];
        } else if !v[k].is_finite() {
            v[k] = 0.5 * (fmin + fmax);
        }
    }

    // With Q stencils the operator is K_q = Δ_q / (h √Q) and the dual ball
    // has radius a / √Q, so ‖K‖ ≤ √8 / h and Σ_q (a/√Q)|K_q v| h² = F(v).
    let q = STENCILS.len();
    let root_q = (q as f64).sqrt();
    let scale = 1.0 / (h * root_q);
    let radius: Vec<f64> = a.iter().map(|x| x / root_q).collect();
    let nx = g.nx;

    // Node arrays padded by a row and a node on either side so that every
    // neighbour read is in bounds; masks zero the differences leaving Ω.
    let off = nx + 1;
    let pad = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n + 2 * off];
        out[off..off + n].copy_from_slice(x);
        out
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mxf: Vec<f64> = (0..n).map(|k| flag(ops.has_x[k])).collect();
    let myf: Vec<f64> = (0..n).map(|k| flag(ops.has_y[k])).collect();
    let mxb: Vec<f64> = (0..n).map(|k| flag(k >= 1 && ops.has_x[k - 1])).collect();
    let myb: Vec<f64> = (0..n).map(|k| flag(k >= nx && ops.has_y[k - nx])).collect();
    let step: Vec<f64> = (0..n).map(|k| if free[k] { tau } else { 0.0 }).collect();
    let mut vbar = pad(&v);
    let mut vp = pad(&v);
    // Dual variables of the forward and the backward stencil.
    let (mut pfx, mut pfy, mut pbx, mut pby) = (
        vec![0.0; n + 2 * off],
        vec![0.0; n + 2 * off],
        vec![0.0; n + 2 * off],
        vec![0.0; n + 2 * off],
    );
    let mut div = vec![0.0; n];

    // Dual objective over the box [min f, max f], which contains a minimiser;
    // `h²` weighted like the primal.
    let dual = |div: &[f64]| -> f64 {
        let mut acc = 0.0;
        for k in 0..n {
            if geo.boundary[k] {
                acc += fb[k] * div[k];
            } else if free[k] {
                acc += (fmin * div[k]).min(fmax * div[k]);
            }
        }
        acc * h * h
    };

    let mut history = Vec::new();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let ss = s * scale;
    let theta = params.theta;
    while iterations < params.max_iters {
        iterations += 1;
        // Dual ascent and projection onto the balls.
        {
            let vb = &vbar[off..off + n];
            let (vr, vu) = (&vbar[off + 1..off + n + 1], &vbar[off + nx..off + n + nx]);
            let (vl, vd) = (&vbar[off - 1..off + n - 1], &vbar[off - nx..off + n - nx]);
            let (pfx, pfy) = (&mut pfx[off..off + n], &mut pfy[off..off + n]);
            let (pbx, pby) = (&mut pbx[off..off + n], &mut pby[off..off + n]);
            for k in 0..n {
                let r = radius[k];
                let c = vb[k];
                let qx = pfx[k] + ss * mxf[k] * (vr[k] - c);
                let qy = pfy[k] + ss * myf[k] * (vu[k] - c);
                let t = r / (qx * qx + qy * qy).sqrt().max(r).max(f64::MIN_POSITIVE);
                pfx[k] = qx * t;
                pfy[k] = qy * t;
                let qx = pbx[k] + ss * mxb[k] * (c - vl[k]);
                let qy = pby[k] + ss * myb[k] * (c - vd[k]);
                let t = r / (qx * qx + qy * qy).sqrt().max(r).max(f64::MIN_POSITIVE);
                pbx[k] = qx * t;
                pby[k] = qy * t;
            }
        }
        // K^T p, gathered per node.
        for k in 0..n {
            let i = k + off;
            div[k] = scale
                * (pfx[i - 1] - pfx[i] + pfy[i - nx] - pfy[i] + pbx[i] - pbx[i + 1] + pby[i]
                    - pby[i + nx]);
        }
        // Primal descent and extrapolation.
        {
            let (vp, vbar) = (&mut vp[off..off + n], &mut vbar[off..off + n]);
            for k in 0..n {
                let old = vp[k];
                let new = old - step[k] * div[k];
                vp[k] = new;
                vbar[k] = new + theta * (new - old);
            }
        }
        if iterations % params.check_every == 0 || iterations == params.max_iters {
            v.copy_from_slice(&vp[off..off + n]);
            let primal = ops.tv(&a, &v, h);
            history.push(primal);
            // `div` holds K^T p for the current dual iterate.
            let d = dual(&div);
            gap = if primal > 0.0 {
                (primal - d) / primal
            } else {
                (primal - d).abs()
            };
            if gap <= params.gap_tol {
                converged = true;
                break;
            }
        }
    }

    let u = ScalarField::from_values(
        g,
        (0..n)
            .map(|k| if omega[k] { v[k] } else { f64::NAN })
            .collect(),
    )?;
    let max_principle_violation = u
        .defined_values()
        .map(|x| (fmin - x).max(x - fmax).max(0.0))
        .fold(0.0, f64::max);
    Ok(ReconstructionResult {
        u,
        sigma: ScalarField::from_fn_masked(g, &vec![false; n], |_, _| 0.0),
        decomposition: ZeroSetDecomposition {
            z_mask: vec![false; n],
            ..Default::default()
        },
        energy_history: history,
        final_gap: gap,
        iterations,
        converged,
        max_principle_violation,
    })
}

/// `(1/ε) min{ε, max{u - λ, 0}}` nodewise.
pub fn truncate(u: &ScalarField, lambda: f64, epsilon: f64) -> ScalarField {
    let mut out = u.clone();
    for (v, &d) in out.values.iter_mut().zip(&u.defined) {
        if d {
            *v = (*v - lambda).max(0.0).min(epsilon) / epsilon;
        }
    }
    out
}

/// Degeneracy thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// `a` counts as zero below this.
    pub eps_a: f64,
    /// `|∇u|` counts as zero below this.
    pub eps_g: f64,
    /// Oscillation of `u` treated as constant.
    pub eps_u: f64,
}

impl Thresholds {
    /// Scale-invariant defaults: `10⁻³ max a`, `10⁻² osc f / diam Ω`,
    /// `10⁻² osc f`.
    pub fn defaults(pair: &AdmissiblePair) -> Self {
        let (lo, hi) = pair.f.range();
        let osc = (hi - lo).max(f64::MIN_POSITIVE);
        let g = pair.geometry.grid;
        let bnodes = pair.geometry.boundary_nodes();
        let mut diam: f64 = 0.0;
        for (i, &p) in bnodes.iter().enumerate() {
            let (x0, y0) = g.node_coords(p);
            for &q in &bnodes[i + 1..] {
                let (x1, y1) = g.node_coords(q);
                diam = diam.max((x1 - x0).hypot(y1 - y0));
            }
        }
        Self {
            eps_a: 1e-3 * pair.max_a(),
            eps_g: 1e-2 * osc / diam.max(g.h),
            eps_u: 1e-2 * osc,
        }
    }
}

fn restricted_gradient(u: &ScalarField, omega: &[bool]) -> ScalarField {
    nodal_gradient_norm(&u.restricted(omega))
}

/// Flags `a < eps_a` or `|∇u| < eps_g`, opens the flagged set with the 3×3
/// square and splits the result into 4-connected components (unlabelled).
pub fn zero_set_decomposition(
    pair: &AdmissiblePair,
    u: &ScalarField,
    th: &Thresholds,
) -> ZeroSetDecomposition {
    let geo = &pair.geometry;
    let g = geo.grid;
    let grad = restricted_gradient(u, &geo.omega);
    let flagged: Vec<bool> = (0..g.len())
        .map(|k| geo.omega[k] && (pair.a.values[k] < th.eps_a || grad.values[k] < th.eps_g))
        .collect();
    let z_mask = open(&g, &flagged);
    let components = label_components(&g, &z_mask)
        .into_iter()
        .map(|nodes| ZeroComponent {
            nodes,
            label: ComponentLabel::Indeterminate,
        })
        .collect();
    let gamma_nodes = (0..g.len()).filter(|&k| flagged[k] && !z_mask[k]).collect();
    ZeroSetDecomposition {
        components,
        gamma_nodes,
        z_mask,
    }
}

/// Labels each component from the data on it and around it.
pub fn classify_inclusions(
    pair: &AdmissiblePair,
    u: &ScalarField,
    d: &ZeroSetDecomposition,
    th: &Thresholds,
) -> ZeroSetDecomposition {
    let geo = &pair.geometry;
    let g = geo.grid;
    let grad = restricted_gradient(u, &geo.omega);
    let degenerate = d.degenerate_mask();
    let outside: Vec<bool> = (0..g.len())
        .map(|k| geo.omega[k] && !degenerate[k])
        .collect();
    let jump_scale = jump_threshold(pair, &outside, th);

    let mut out = d.clone();
    for comp in &mut out.components {
        comp.label = classify_one(&g, pair, u, &grad, &comp.nodes, th, jump_scale);
    }
    out
}

/// `10 h · median |∇a|` over the regular part, floored at `eps_a`.
fn jump_threshold(pair: &AdmissiblePair, outside: &[bool], th: &Thresholds) -> f64 {
    let grad_a = nodal_gradient_norm(&pair.a.restricted(&pair.geometry.omega));
    let mut vals: Vec<f64> = (0..outside.len())
        .filter(|&k| outside[k])
        .map(|k| grad_a.values[k])
        .collect();
    let median = if vals.is_empty() {
        0.0
    } else {
        let mid = vals.len() / 2;
        *vals.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    (10.0 * pair.a.grid.h * median).max(th.eps_a)
}

fn classify_one(
    g: &Grid,
    pair: &AdmissiblePair,
    u: &ScalarField,
    grad: &ScalarField,
    nodes: &[usize],
    th: &Thresholds,
    jump_scale: f64,
) -> ComponentLabel {
    let omega = &pair.geometry.omega;
    // Judge on the interior; the rim mixes in the surrounding values.
    let mut mask = vec![false; g.len()];
    for &k in nodes {
        mask[k] = true;
    }
    let core_mask = erode(g, &mask);
    let mut core: Vec<usize> = nodes.iter().copied().filter(|&k| core_mask[k]).collect();
    if core.is_empty() {
        core = nodes.to_vec();
    }
    let max_a = core.iter().map(|&k| pair.a.values[k]).fold(0.0, f64::max);
    let flat = core.iter().all(|&k| grad.values[k] < th.eps_g);
    if max_a > th.eps_a {
        return if flat {
            ComponentLabel::Perfect
        } else {
            ComponentLabel::FlatUnknown
        };
    }
    let ring = outer_ring(g, nodes, omega);
    let (lo, hi) = ring
        .iter()
        .filter_map(|&k| u.get(k))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if ring.is_empty() {
        return ComponentLabel::Indeterminate;
    }
    if hi - lo > th.eps_u {
        return ComponentLabel::Insulating;
    }
    // One-sided jumps of a across the component boundary.
    let mut jumps: Vec<f64> = Vec::new();
    for &m in &ring {
        for k in g.neighbors4(m) {
            if mask[k] {
                jumps.push((pair.a.values[m] - pair.a.values[k]).abs());
            }
        }
    }
    let mid = jumps.len() / 2;
    let median_jump = if jumps.is_empty() {
        0.0
    } else {
        *jumps.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    if median_jump > jump_scale {
        ComponentLabel::SingularOrPerfect
    } else {
        ComponentLabel::Indeterminate
    }
}

/// Recovered conductivity and the number of values clipped to
/// `[1e-6, 1e6]`.
#[derive(Debug, Clone)]
pub struct ConductivityRecovery {
    pub sigma: ScalarField,
    pub clipped: usize,
}

pub const SIGMA_MIN: f64 = 1e-6;
pub const SIGMA_MAX: f64 = 1e6;

/// `σ = a / |∇u|` at nodes two or more nodes away from `Z ∪ Γ`.
pub fn recover_conductivity(
    pair: &AdmissiblePair,
    u: &ScalarField,
    d: &ZeroSetDecomposition,
) -> ConductivityRecovery {
    let geo = &pair.geometry;
    let g = geo.grid;
    let grad = restricted_gradient(u, &geo.omega);
    let collar = dilate(&g, &d.degenerate_mask(), 1);
    let keep: Vec<bool> = (0..g.len())
        .map(|k| geo.omega[k] && !geo.v_mask[k] && !collar[k])
        .collect();
    let mut clipped = 0;
    let sigma = ScalarField::from_fn_masked(g, &keep, |_, _| 0.0);
    let mut sigma = sigma;
    for k in 0..g.len() {
        if !keep[k] {
            continue;
        }
        let raw = pair.a.values[k] / grad.values[k];
        let v = if raw.is_nan() {
            SIGMA_MIN
        } else {
            raw.clamp(SIGMA_MIN, SIGMA_MAX)
        };
        if v != raw {
            clipped += 1;
        }
        sigma.values[k] = v;
    }
    ConductivityRecovery { sigma, clipped }
}

/// Minimisation, decomposition, classification and conductivity in one go.
pub fn reconstruct(
    pair: &AdmissiblePair,
    params: &SolverParams,
    th: &Thresholds,
) -> Result<(ReconstructionResult, usize)> {
    let mut res = minimize_weighted_gradient(pair, params)?;
    let d = zero_set_decomposition(pair, &res.u, th);
    res.decomposition = classify_inclusions(pair, &res.u, &d, th);
    let rec = recover_conductivity(pair, &res.u, &res.decomposition);
    res.sigma = rec.sigma;
    Ok((res, rec.clipped))
}
