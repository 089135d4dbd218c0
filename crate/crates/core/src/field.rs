//! Grids, masks, nodal scalar fields and staggered vector fields.
//!
//! Scalars live on nodes, vector components live on faces: an x-face joins
//! node `(i, j)` to `(i + 1, j)`, a y-face joins `(i, j)` to `(i, j + 1)`.
//! The discrete gradient is the forward difference across a face and the
//! discrete divergence is its exact negative adjoint for the inner products
//! `<u, v> = h² Σ u v` on nodes and `<p, q> = h² Σ p q` on faces.

use std::collections::VecDeque;

use crate::error::{CdiiError, Result};

/// Uniform node lattice. Node `(i, j)` sits at `origin + (i h, j h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(CdiiError::InvalidGrid(format!(
                "need nx, ny >= 3, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(CdiiError::InvalidGrid(format!(
                "spacing must be positive, got {h}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(CdiiError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, origin })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + i as f64 * self.h,
            self.origin.1 + j as f64 * self.h,
        )
    }

    #[inline]
    pub fn node_coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.ij(k);
        self.coords(i, j)
    }

    /// Number of x-faces, `(nx - 1) * ny`.
    #[inline]
    pub fn n_xfaces(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    /// Number of y-faces, `nx * (ny - 1)`.
    #[inline]
    pub fn n_yfaces(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    /// Index of the x-face between `(i, j)` and `(i + 1, j)`.
    #[inline]
    pub fn xface(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + i
    }

    /// Index of the y-face between `(i, j)` and `(i, j + 1)`.
    #[inline]
    pub fn yface(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// The 4-neighbours of node `k` that exist on the lattice.
    pub fn neighbors4(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(k);
        let nx = self.nx;
        let ny = self.ny;
        [
            (i > 0).then(|| k - 1),
            (i + 1 < nx).then(|| k + 1),
            (j > 0).then(|| k - nx),
            (j + 1 < ny).then(|| k + nx),
        ]
        .into_iter()
        .flatten()
    }

    /// The 8-neighbours of node `k` that exist on the lattice.
    pub fn neighbors8(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(k);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let (i, j) = (i as isize, j as isize);
        (-1isize..=1)
            .flat_map(move |dj| (-1isize..=1).map(move |di| (di, dj)))
            .filter(|&(di, dj)| di != 0 || dj != 0)
            .filter_map(move |(di, dj)| {
                let (a, b) = (i + di, j + dj);
                (a >= 0 && b >= 0 && a < nx && b < ny).then(|| (b * nx + a) as usize)
            })
    }

    /// True when node `k` lies on the outer edge of the lattice.
    #[inline]
    pub fn on_edge(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Nearest node to a point, clamped to the lattice.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let fi = ((x - self.origin.0) / self.h)
            .round()
            .clamp(0.0, (self.nx - 1) as f64);
        let fj = ((y - self.origin.1) / self.h)
            .round()
            .clamp(0.0, (self.ny - 1) as f64);
        self.idx(fi as usize, fj as usize)
    }
}

/// Nodal scalar field. Values outside `defined` are meaningless (stored as NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl ScalarField {
    /// Field defined everywhere with a constant value.
    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            defined: vec![true; grid.len()],
        }
    }

    /// Field defined on `mask`, NaN elsewhere.
    pub fn from_fn_masked(grid: Grid, mask: &[bool], f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                if mask[k] {
                    let (x, y) = grid.node_coords(k);
                    f(x, y)
                } else {
                    f64::NAN
                }
            })
            .collect();
        Self {
            grid,
            values,
            defined: mask.to_vec(),
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn_masked(grid, &vec![true; grid.len()], f)
    }

    /// Builds a field from raw values; non-finite entries become undefined.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CdiiError::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let defined: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Ok(Self {
            grid,
            values,
            defined,
        })
    }

    #[inline]
    pub fn get(&self, k: usize) -> Option<f64> {
        self.defined[k].then(|| self.values[k])
    }

    /// Restricts the field to `mask` (intersection with the current support).
    pub fn restricted(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        for k in 0..out.values.len() {
            if !mask[k] {
                out.defined[k] = false;
                out.values[k] = f64::NAN;
            }
        }
        out
    }

    pub fn defined_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.defined)
            .filter(|(_, &d)| d)
            .map(|(v, _)| *v)
    }

    /// `(min, max)` over defined nodes, `None` when nothing is defined.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.defined_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.defined_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete inner product `h² Σ u v` over nodes defined in both fields.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        let mut acc = 0.0;
        for k in 0..self.values.len() {
            if self.defined[k] && other.defined[k] {
                acc += self.values[k] * other.values[k];
            }
        }
        acc * h2
    }

    /// Value at a point by bilinear interpolation, `None` if a corner is undefined.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let g = &self.grid;
        let fx = (x - g.origin.0) / g.h;
        let fy = (y - g.origin.1) / g.h;
        if fx < 0.0 || fy < 0.0 || fx > (g.nx - 1) as f64 || fy > (g.ny - 1) as f64 {
            return None;
        }
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let c = [
            g.idx(i, j),
            g.idx(i + 1, j),
            g.idx(i, j + 1),
            g.idx(i + 1, j + 1),
        ];
        let w = [
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        ];
        let mut acc = 0.0;
        for (k, wk) in c.iter().zip(w) {
            if wk > 0.0 {
                acc += wk * self.get(*k)?;
            }
        }
        Some(acc)
    }
}

/// Face-staggered vector field. `x_active` / `y_active` mark faces whose
/// components carry meaning; inactive faces hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub x_active: Vec<bool>,
    pub y_active: Vec<bool>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            fx: vec![0.0; grid.n_xfaces()],
            fy: vec![0.0; grid.n_yfaces()],
            x_active: vec![true; grid.n_xfaces()],
            y_active: vec![true; grid.n_yfaces()],
        }
    }

    /// Samples a continuous field at face midpoints on every face whose two
    /// endpoint nodes are in `mask`.
    pub fn from_fn_masked(grid: Grid, mask: &[bool], f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut v = Self::zeros(grid);
        let h = grid.h;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let (x, y) = grid.coords(i, j);
                if i + 1 < grid.nx {
                    let f_id = grid.xface(i, j);
                    let on = mask[k] && mask[k + 1];
                    v.x_active[f_id] = on;
                    if on {
                        v.fx[f_id] = f(x + 0.5 * h, y).0;
                    }
                }
                if j + 1 < grid.ny {
                    let f_id = grid.yface(i, j);
                    let on = mask[k] && mask[k + grid.nx];
                    v.y_active[f_id] = on;
                    if on {
                        v.fy[f_id] = f(x, y + 0.5 * h).1;
                    }
                }
            }
        }
        v
    }

    /// Discrete inner product `h² Σ p q` over faces active in both fields.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        let sx: f64 = (0..self.fx.len())
            .filter(|&f| self.x_active[f] && other.x_active[f])
            .map(|f| self.fx[f] * other.fx[f])
            .sum();
        let sy: f64 = (0..self.fy.len())
            .filter(|&f| self.y_active[f] && other.y_active[f])
            .map(|f| self.fy[f] * other.fy[f])
            .sum();
        (sx + sy) * h2
    }

    /// Node-averaged Euclidean magnitude: each component is the mean of the
    /// active faces touching the node along that axis.
    pub fn node_magnitude(&self, mask: &[bool]) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::from_fn_masked(g, mask, |_, _| 0.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                if !mask[k] {
                    continue;
                }
                let (mut sx, mut cx, mut sy, mut cy) = (0.0, 0usize, 0.0, 0usize);
                if i > 0 && self.x_active[g.xface(i - 1, j)] {
                    sx += self.fx[g.xface(i - 1, j)];
                    cx += 1;
                }
                if i + 1 < g.nx && self.x_active[g.xface(i, j)] {
                    sx += self.fx[g.xface(i, j)];
                    cx += 1;
                }
                if j > 0 && self.y_active[g.yface(i, j - 1)] {
                    sy += self.fy[g.yface(i, j - 1)];
                    cy += 1;
                }
                if j + 1 < g.ny && self.y_active[g.yface(i, j)] {
                    sy += self.fy[g.yface(i, j)];
                    cy += 1;
                }
                let mx = if cx > 0 { sx / cx as f64 } else { 0.0 };
                let my = if cy > 0 { sy / cy as f64 } else { 0.0 };
                out.values[k] = mx.hypot(my);
            }
        }
        out
    }

    /// Bilinear sample of both components at a point, using only active faces
    /// (weights renormalised). `None` if no active face contributes.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let g = &self.grid;
        let fx = (x - g.origin.0) / g.h;
        let fy = (y - g.origin.1) / g.h;
        let jx = sample_staggered(fx - 0.5, fy, g.nx - 1, g.ny, |i, j| {
            let f = g.xface(i, j);
            self.x_active[f].then(|| self.fx[f])
        })?;
        let jy = sample_staggered(fx, fy - 0.5, g.nx, g.ny - 1, |i, j| {
            let f = g.yface(i, j);
            self.y_active[f].then(|| self.fy[f])
        })?;
        Some((jx, jy))
    }
}

fn sample_staggered(
    fx: f64,
    fy: f64,
    mx: usize,
    my: usize,
    value: impl Fn(usize, usize) -> Option<f64>,
) -> Option<f64> {
    let cx = fx.clamp(0.0, (mx - 1) as f64);
    let cy = fy.clamp(0.0, (my - 1) as f64);
    let i = (cx.floor() as usize).min(mx.saturating_sub(2));
    let j = (cy.floor() as usize).min(my.saturating_sub(2));
    let (tx, ty) = (
        (cx - i as f64).clamp(0.0, 1.0),
        (cy - j as f64).clamp(0.0, 1.0),
    );
    let corners = [
        (i, j, (1.0 - tx) * (1.0 - ty)),
        (i + 1, j, tx * (1.0 - ty)),
        (i, j + 1, (1.0 - tx) * ty),
        (i + 1, j + 1, tx * ty),
    ];
    let (mut acc, mut wsum) = (0.0, 0.0);
    for (a, b, w) in corners {
        if a < mx && b < my {
            if let Some(v) = value(a, b) {
                acc += w * v;
                wsum += w;
            }
        }
    }
    (wsum > 1e-12).then(|| acc / wsum)
}

/// Forward-difference gradient on faces whose two endpoints are defined.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid;
    let mut out = VectorField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if i + 1 < g.nx {
                let f = g.xface(i, j);
                let on = u.defined[k] && u.defined[k + 1];
                out.x_active[f] = on;
                if on {
                    out.fx[f] = (u.values[k + 1] - u.values[k]) / g.h;
                }
            }
            if j + 1 < g.ny {
                let f = g.yface(i, j);
                let on = u.defined[k] && u.defined[k + g.nx];
                out.y_active[f] = on;
                if on {
                    out.fy[f] = (u.values[k + g.nx] - u.values[k]) / g.h;
                }
            }
        }
    }
    out
}

/// Negative adjoint of [`gradient`]: inactive faces contribute nothing.
/// The result is defined on every node.
pub fn divergence(p: &VectorField) -> ScalarField {
    let g = p.grid;
    let mut d = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if i + 1 < g.nx {
                let f = g.xface(i, j);
                if p.x_active[f] {
                    d[k] += p.fx[f];
                    d[k + 1] -= p.fx[f];
                }
            }
            if j + 1 < g.ny {
                let f = g.yface(i, j);
                if p.y_active[f] {
                    d[k] += p.fy[f];
                    d[k + g.nx] -= p.fy[f];
                }
            }
        }
    }
    for v in &mut d {
        *v /= g.h;
    }
    ScalarField {
        grid: g,
        values: d,
        defined: vec![true; g.len()],
    }
}

/// Nodal gradient magnitude from centred differences, falling back to a
/// one-sided difference where a neighbour is outside `u.defined`.
pub fn nodal_gradient_norm(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let mut out = ScalarField::from_fn_masked(g, &u.defined, |_, _| 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if !u.defined[k] {
                continue;
            }
            let left = (i > 0).then(|| k - 1).filter(|&m| u.defined[m]);
            let right = (i + 1 < g.nx).then(|| k + 1).filter(|&m| u.defined[m]);
            let down = (j > 0).then(|| k - g.nx).filter(|&m| u.defined[m]);
            let up = (j + 1 < g.ny).then(|| k + g.nx).filter(|&m| u.defined[m]);
            let d = |lo: Option<usize>, hi: Option<usize>| match (lo, hi) {
                (Some(a), Some(b)) => (u.values[b] - u.values[a]) / (2.0 * g.h),
                (None, Some(b)) => (u.values[b] - u.values[k]) / g.h,
                (Some(a), None) => (u.values[k] - u.values[a]) / g.h,
                (None, None) => 0.0,
            };
            out.values[k] = d(left, right).hypot(d(down, up));
        }
    }
    out
}

/// Continuous shape descriptors used for rasterisation.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc {
        center: (f64, f64),
        radius: f64,
    },
    Rect {
        min: (f64, f64),
        max: (f64, f64),
    },
    Annulus {
        center: (f64, f64),
        inner: f64,
        outer: f64,
    },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    pub fn bbox(&self) -> ((f64, f64), (f64, f64)) {
        match self {
            Shape::Disc {
                center: c,
                radius: r,
            } => ((c.0 - r, c.1 - r), (c.0 + r, c.1 + r)),
            Shape::Rect { min, max } => (*min, *max),
            Shape::Annulus {
                center: c,
                outer: r,
                ..
            } => ((c.0 - r, c.1 - r), (c.0 + r, c.1 + r)),
            Shape::Polygon(pts) => pts.iter().fold(
                (
                    (f64::INFINITY, f64::INFINITY),
                    (f64::NEG_INFINITY, f64::NEG_INFINITY),
                ),
                |(lo, hi), p| {
                    (
                        (lo.0.min(p.0), lo.1.min(p.1)),
                        (hi.0.max(p.0), hi.1.max(p.1)),
                    )
                },
            ),
        }
    }

    /// Point membership. `slack > 0` grows the shape (closed-set test with
    /// tolerance), `slack = 0` is the strict open-set test.
    pub fn contains(&self, x: f64, y: f64, slack: f64) -> bool {
        match self {
            Shape::Disc {
                center: c,
                radius: r,
            } => {
                let d = (x - c.0).hypot(y - c.1);
                if slack > 0.0 {
                    d <= r + slack
                } else {
                    d < *r
                }
            }
            Shape::Rect { min, max } => {
                if slack > 0.0 {
                    x >= min.0 - slack
                        && x <= max.0 + slack
                        && y >= min.1 - slack
                        && y <= max.1 + slack
                } else {
                    x > min.0 && x < max.0 && y > min.1 && y < max.1
                }
            }
            Shape::Annulus {
                center: c,
                inner,
                outer,
            } => {
                let d = (x - c.0).hypot(y - c.1);
                if slack > 0.0 {
                    d >= inner - slack && d <= outer + slack
                } else {
                    d > *inner && d < *outer
                }
            }
            Shape::Polygon(pts) => {
                if point_in_polygon(pts, x, y) {
                    return true;
                }
                slack > 0.0 && polygon_edge_distance(pts, x, y) <= slack
            }
        }
    }
}

fn point_in_polygon(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = pts.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn polygon_edge_distance(pts: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (ax, ay) = pts[i];
            let (bx, by) = pts[(i + 1) % n];
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (x - ax - t * dx).hypot(y - ay - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionKind {
    Perfect,
    Insulating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionSpec {
    pub shape: Shape,
    pub kind: InclusionKind,
}

impl InclusionSpec {
    pub fn perfect(shape: Shape) -> Self {
        Self {
            shape,
            kind: InclusionKind::Perfect,
        }
    }

    pub fn insulating(shape: Shape) -> Self {
        Self {
            shape,
            kind: InclusionKind::Insulating,
        }
    }
}

/// Raster codes used by the geometry file.
pub const CODE_EXTERIOR: u8 = 0;
pub const CODE_OMEGA: u8 = 1;
pub const CODE_PERFECT: u8 = 2;
pub const CODE_INSULATING: u8 = 3;

/// Domain and inclusion masks with their connected components.
///
/// `boundary` marks the nodes of Ω carrying Dirichlet data: those on the
/// lattice edge or with a 4-neighbour outside Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionGeometry {
    pub grid: Grid,
    pub omega: Vec<bool>,
    pub boundary: Vec<bool>,
    pub u_mask: Vec<bool>,
    pub v_mask: Vec<bool>,
    pub u_components: Vec<Vec<usize>>,
    pub v_components: Vec<Vec<usize>>,
}

impl InclusionGeometry {
    /// Validates raw masks and labels components.
    pub fn from_masks(
        grid: Grid,
        omega: Vec<bool>,
        u_mask: Vec<bool>,
        v_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = grid.len();
        if omega.len() != n || u_mask.len() != n || v_mask.len() != n {
            return Err(CdiiError::InvalidField(
                "mask length does not match grid".into(),
            ));
        }
        let boundary: Vec<bool> = (0..n)
            .map(|k| omega[k] && (grid.on_edge(k) || grid.neighbors4(k).any(|m| !omega[m])))
            .collect();

        for k in 0..n {
            if u_mask[k] && v_mask[k] {
                return Err(CdiiError::Overlap(format!("node {k} is in both U and V")));
            }
            if u_mask[k] || v_mask[k] {
                if !omega[k] || boundary[k] {
                    return Err(CdiiError::Overlap(format!(
                        "inclusion node {k} touches the outer boundary"
                    )));
                }
                if grid.neighbors4(k).any(|m| !omega[m]) {
                    return Err(CdiiError::Overlap(format!(
                        "inclusion node {k} is not interior to the domain"
                    )));
                }
            }
            if u_mask[k] && grid.neighbors8(k).any(|m| v_mask[m]) {
                return Err(CdiiError::Overlap(format!(
                    "closures of U and V meet at node {k}"
                )));
            }
        }

        // Every piece of the conducting exterior must reach the outer boundary.
        let exterior: Vec<bool> = (0..n)
            .map(|k| omega[k] && !u_mask[k] && !v_mask[k])
            .collect();
        for comp in label_components(&grid, &exterior) {
            if !comp.iter().any(|&k| boundary[k]) {
                return Err(CdiiError::Disconnected(format!(
                    "a region of {} nodes outside the inclusions is cut off from the boundary",
                    comp.len()
                )));
            }
        }

        let u_components = label_components(&grid, &u_mask);
        let v_components = label_components(&grid, &v_mask);
        Ok(Self {
            grid,
            omega,
            boundary,
            u_mask,
            v_mask,
            u_components,
            v_components,
        })
    }

    /// Geometry with no inclusions.
    pub fn plain(grid: Grid, omega: Vec<bool>) -> Result<Self> {
        let n = grid.len();
        Self::from_masks(grid, omega, vec![false; n], vec![false; n])
    }

    /// Same domain, inclusions dropped.
    pub fn without_inclusions(&self) -> Self {
        let n = self.grid.len();
        Self {
            grid: self.grid,
            omega: self.omega.clone(),
            boundary: self.boundary.clone(),
            u_mask: vec![false; n],
            v_mask: vec![false; n],
            u_components: Vec::new(),
            v_components: Vec::new(),
        }
    }

    /// Nodes of Ω ∖ V, where the potential lives.
    pub fn conducting(&self) -> Vec<bool> {
        (0..self.grid.len())
            .map(|k| self.omega[k] && !self.v_mask[k])
            .collect()
    }

    /// Nodes of Ω ∖ (U ∪ V).
    pub fn background(&self) -> Vec<bool> {
        (0..self.grid.len())
            .map(|k| self.omega[k] && !self.u_mask[k] && !self.v_mask[k])
            .collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&k| self.boundary[k]).collect()
    }

    /// Geometry raster codes (0 exterior, 1 Ω, 2 U, 3 V).
    pub fn codes(&self) -> Vec<u8> {
        (0..self.grid.len())
            .map(|k| {
                if !self.omega[k] {
                    CODE_EXTERIOR
                } else if self.u_mask[k] {
                    CODE_PERFECT
                } else if self.v_mask[k] {
                    CODE_INSULATING
                } else {
                    CODE_OMEGA
                }
            })
            .collect()
    }

    pub fn from_codes(grid: Grid, codes: &[u8]) -> Result<Self> {
        if codes.len() != grid.len() {
            return Err(CdiiError::InvalidField(
                "geometry raster size mismatch".into(),
            ));
        }
        if let Some(c) = codes.iter().find(|&&c| c > CODE_INSULATING) {
            return Err(CdiiError::InvalidField(format!(
                "unknown geometry code {c}"
            )));
        }
        let omega = codes.iter().map(|&c| c != CODE_EXTERIOR).collect();
        let u = codes.iter().map(|&c| c == CODE_PERFECT).collect();
        let v = codes.iter().map(|&c| c == CODE_INSULATING).collect();
        Self::from_masks(grid, omega, u, v)
    }

    /// Id of the U-component containing node `k`.
    pub fn u_component_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.grid.len()];
        for (c, nodes) in self.u_components.iter().enumerate() {
            for &k in nodes {
                out[k] = Some(c);
            }
        }
        out
    }
}

/// Rasterises a domain and its inclusions on an `n`-node lattice spanning the
/// domain's bounding box along its longer side.
pub fn build_geometry(
    domain: &Shape,
    inclusions: &[InclusionSpec],
    n: usize,
) -> Result<InclusionGeometry> {
    if n < 3 {
        return Err(CdiiError::InvalidGrid(format!(
            "resolution must be >= 3, got {n}"
        )));
    }
    let (lo, hi) = domain.bbox();
    let (w, ht) = (hi.0 - lo.0, hi.1 - lo.1);
    if !(w > 0.0 && ht > 0.0) {
        return Err(CdiiError::InvalidGrid("degenerate domain".into()));
    }
    let h = w.max(ht) / (n - 1) as f64;
    let nx = (w / h).round() as usize + 1;
    let ny = (ht / h).round() as usize + 1;
    let grid = Grid::new(nx.max(3), ny.max(3), h, lo)?;
    let tol = 1e-9 * h;

    let omega: Vec<bool> = (0..grid.len())
        .map(|k| {
            let (x, y) = grid.node_coords(k);
            domain.contains(x, y, tol)
        })
        .collect();
    let mut u_mask = vec![false; grid.len()];
    let mut v_mask = vec![false; grid.len()];
    for inc in inclusions {
        for k in 0..grid.len() {
            let (x, y) = grid.node_coords(k);
            if inc.shape.contains(x, y, 0.0) {
                match inc.kind {
                    InclusionKind::Perfect => u_mask[k] = true,
                    InclusionKind::Insulating => v_mask[k] = true,
                }
            }
        }
    }
    prune_spurs(&grid, &mut u_mask);
    prune_spurs(&grid, &mut v_mask);
    InclusionGeometry::from_masks(grid, omega, u_mask, v_mask)
}

/// Drops rasterisation spurs: nodes with at most one 4-neighbour in the
/// mask, repeated until none remain (isolated nodes are kept).
fn prune_spurs(grid: &Grid, mask: &mut [bool]) {
    loop {
        let spurs: Vec<usize> = (0..grid.len())
            .filter(|&k| mask[k] && grid.neighbors4(k).filter(|&m| mask[m]).count() == 1)
            .collect();
        if spurs.is_empty() {
            return;
        }
        for k in spurs {
            mask[k] = false;
        }
    }
}

/// 4-connected components of `mask`, ids ordered by smallest node index.
pub fn label_components(grid: &Grid, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            comp.push(k);
            for m in grid.neighbors4(k) {
                if mask[m] && !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Chebyshev dilation of `mask` by `radius` nodes.
pub fn dilate(grid: &Grid, mask: &[bool], radius: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..radius {
        let mut next = cur.clone();
        for k in 0..grid.len() {
            if cur[k] {
                for m in grid.neighbors8(k) {
                    next[m] = true;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Erosion by the 3x3 square; nodes on the lattice edge never survive.
pub fn erode(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    (0..grid.len())
        .map(|k| mask[k] && !grid.on_edge(k) && grid.neighbors8(k).all(|m| mask[m]))
        .collect()
}

/// Morphological opening by the 3x3 square.
pub fn open(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    let eroded = erode(grid, mask);
    let dilated = dilate(grid, &eroded, 1);
    dilated.iter().zip(mask).map(|(&d, &m)| d && m).collect()
}

/// Nodes outside `set` that are 4-adjacent to it.
pub fn outer_ring(grid: &Grid, set: &[usize], within: &[bool]) -> Vec<usize> {
    let mut inside = vec![false; grid.len()];
    for &k in set {
        inside[k] = true;
    }
    let mut ring = vec![false; grid.len()];
    for &k in set {
        for m in grid.neighbors4(k) {
            if !inside[m] && within[m] {
                ring[m] = true;
            }
        }
    }
    (0..grid.len()).filter(|&k| ring[k]).collect()
}

/// Harmonic mean of two conductivities.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Discrete outward line integral of `σ ∂u/∂ν` over the boundary of a node set.
///
/// Faces crossing the set's boundary contribute `σ_face (u_out - u_in)` with
/// `σ_face` the harmonic mean of the nodal values. If the inner node has no
/// conductivity (a perfect conductor in the limit problem) the face carries
/// `2 σ_out`, the limit of the harmonic mean. Faces with an undefined
/// potential or outer conductivity contribute nothing.
pub fn boundary_flux(sigma: &ScalarField, u: &ScalarField, component: &[usize]) -> Result<f64> {
    if component.is_empty() {
        return Err(CdiiError::EmptyComponent);
    }
    let g = &u.grid;
    let mut inside = vec![false; g.len()];
    for &k in component {
        inside[k] = true;
    }
    let mut flux = 0.0;
    for &k in component {
        for m in g.neighbors4(k) {
            if inside[m] {
                continue;
            }
            let (Some(u_in), Some(u_out), Some(s_out)) = (u.get(k), u.get(m), sigma.get(m)) else {
                continue;
            };
            let s_face = match sigma.get(k) {
                Some(s_in) => harmonic_mean(s_in, s_out),
                None => 2.0 * s_out,
            };
            flux += s_face * (u_out - u_in);
        }
    }
    Ok(flux)
}

/// Dirichlet data on the boundary nodes of Ω, sorted by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn from_fn(geometry: &InclusionGeometry, f: impl Fn(f64, f64) -> f64) -> Self {
        let nodes = geometry.boundary_nodes();
        let values = nodes
            .iter()
            .map(|&k| {
                let (x, y) = geometry.grid.node_coords(k);
                f(x, y)
            })
            .collect();
        Self { nodes, values }
    }

    /// Reads the trace off a field at the geometry's boundary nodes.
    pub fn from_field(geometry: &InclusionGeometry, u: &ScalarField) -> Result<Self> {
        let nodes = geometry.boundary_nodes();
        let values = nodes
            .iter()
            .map(|&k| {
                u.get(k).ok_or_else(|| {
                    CdiiError::InvalidField(format!("field undefined at boundary node {k}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, values })
    }

    /// Checks that the trace covers exactly the boundary nodes of `geometry`.
    pub fn check(&self, geometry: &InclusionGeometry) -> Result<()> {
        if self.nodes != geometry.boundary_nodes() || self.values.len() != self.nodes.len() {
            return Err(CdiiError::InconsistentGeometry(
                "boundary trace does not match the domain boundary".into(),
            ));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(CdiiError::InvalidField(
                "boundary trace has non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at node `k`, if `k` is a trace node.
    pub fn value_at(&self, k: usize) -> Option<f64> {
        self.nodes.binary_search(&k).ok().map(|i| self.values[i])
    }

    /// Scatters the trace into a nodal vector (NaN off the boundary).
    pub fn to_field(&self, grid: Grid) -> ScalarField {
        let mut values = vec![f64::NAN; grid.len()];
        let mut defined = vec![false; grid.len()];
        for (&k, &v) in self.nodes.iter().zip(&self.values) {
            values[k] = v;
            defined[k] = true;
        }
        ScalarField {
            grid,
            values,
            defined,
        }
    }
}
