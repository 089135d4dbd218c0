//! Sparse symmetric matrices and Jacobi-preconditioned conjugate gradients.

use crate::error::{CdiiError, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from per-row `(col, value)` lists; duplicates are summed.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[e] * x[self.cols[e]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&e| self.cols[e] == r)
                    .map_or(0.0, |e| self.vals[e])
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Stop when `‖b - Ax‖ ≤ rel_tol ‖b‖`.
    pub rel_tol: f64,
    /// Iteration cap; `None` means `500 √n`.
    pub max_iter: Option<usize>,
    /// Project iterates onto the mean-zero subspace (singular Neumann systems).
    pub remove_mean: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: None,
            remove_mean: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting from
/// the contents of `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<CgStats> {
    let n = a.n;
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    if n == 0 {
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let diag = a.diagonal();
    if let Some(r) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(CdiiError::SingularSystem(format!(
            "non-positive diagonal in row {r}"
        )));
    }
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| (500.0 * (n as f64).sqrt()).ceil() as usize)
        .max(10);

    let mut rhs = b.to_vec();
    if opts.remove_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut ax = vec![0.0; n];
    a.mul(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    if opts.remove_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while res > opts.rel_tol && it < max_iter {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CdiiError::SingularSystem(format!(
                "p·Ap = {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        // Recompute the true residual now and then to limit drift.
        if it % 50 == 0 {
            a.mul(x, &mut ax);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
        }
        res = dot(&r, &r).sqrt() / bnorm;
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        if opts.remove_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if opts.remove_mean {
        remove_mean(x);
    }
    a.mul(x, &mut ax);
    let true_res = rhs
        .iter()
        .zip(&ax)
        .map(|(b, a)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    if true_res > opts.rel_tol.max(1e-14) * 10.0 && it >= max_iter {
        return Err(CdiiError::NoConvergence {
            iterations: it,
            residual: true_res,
        });
    }
    Ok(CgStats {
        iterations: it,
        residual: true_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn solves_tridiagonal_system() {
        let a = laplacian_1d(50);
        let exact: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.mul(&exact, &mut b);
        let mut x = vec![0.0; 50];
        let stats = pcg(&a, &b, &mut x, CgOptions::default()).unwrap();
        assert!(stats.residual <= 1e-12);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 4.0)]]);
        assert_eq!(m.diagonal(), vec![3.0, 4.0]);
    }

    #[test]
    fn zero_diagonal_is_singular() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 0.0)]]);
        let mut x = vec![0.0];
        assert!(matches!(
            pcg(&m, &[1.0], &mut x, CgOptions::default()),
            Err(CdiiError::SingularSystem(_))
        ));
    }

    #[test]
    fn neumann_system_with_mean_removal() {
        // Path-graph Laplacian is singular; a mean-zero right side is consistent.
        let n = 20;
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                let mut d = 0.0;
                if i > 0 {
                    r.push((i - 1, -1.0));
                    d += 1.0;
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                    d += 1.0;
                }
                r.push((i, d));
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let m = b.iter().sum::<f64>() / n as f64;
        b.iter_mut().for_each(|v| *v -= m);
        let mut x = vec![0.0; n];
        let stats = pcg(
            &a,
            &b,
            &mut x,
            CgOptions {
                remove_mean: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(stats.residual < 1e-10);
    }
}
