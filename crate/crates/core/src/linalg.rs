//! Real and complex dense linear algebra helpers.
//!
//! Complex vectors are "realified" by stacking real parts on top of
//! imaginary parts, so that independence is measured over the reals.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Dyn, SVD};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Lower bound on the scale used by relative rank thresholds; keeps a
/// collection of uniformly tiny vectors from being promoted to full rank.
pub const SCALE_FLOOR: f64 = 1e-3;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn realify(v: &CVec) -> RVec {
    let n = v.len();
    RVec::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

pub fn unrealify(v: &RVec) -> CVec {
    let n = v.len() / 2;
    CVec::from_fn(n, |i, _| c(v[i], v[i + n]))
}

/// Column-major realification of a matrix into a single real vector.
pub fn realify_mat(m: &CMat) -> RVec {
    let n = m.len();
    let s = m.as_slice();
    RVec::from_fn(2 * n, |i, _| if i < n { s[i].re } else { s[i - n].im })
}

pub fn unrealify_mat(v: &RVec, rows: usize, cols: usize) -> CMat {
    let n = rows * cols;
    CMat::from_fn(rows, cols, |r, cc| {
        let k = cc * rows + r;
        c(v[k], v[k + n])
    })
}

/// Stack realified vectors as the columns of a real matrix.
pub fn realified_columns(vectors: &[CVec]) -> RMat {
    if vectors.is_empty() {
        return RMat::zeros(0, 0);
    }
    let m = 2 * vectors[0].len();
    let mut out = RMat::zeros(m, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        out.set_column(j, &realify(v));
    }
    out
}

fn threshold(sigma: &[f64], tol: f64) -> f64 {
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    tol * smax.max(SCALE_FLOOR)
}

/// Full SVD, checked by reconstruction. nalgebra's default stopping rule can
/// settle on an inaccurate factorization (seen on orthogonal projectors),
/// so a few convergence thresholds are tried.
pub fn svd(m: &RMat) -> SVD<f64, Dyn, Dyn> {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, SVD<f64, Dyn, Dyn>)> = None;
    for eps in [f64::EPSILON, 1e-15, 4e-15, 1e-14] {
        let Some(f) = SVD::try_new(m.clone(), true, true, eps, 0) else {
            continue;
        };
        let err = match f.clone().recompose() {
            Ok(r) => (r - m).norm() / scale,
            Err(_) => f64::INFINITY,
        };
        if err < 1e-12 {
            return f;
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, f));
        }
    }
    best.expect("svd converges").1
}

/// Singular values of `m` in non-increasing order.
pub fn singular_values(m: &RMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = svd(m).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    s
}

/// Numerical rank with threshold `tol * max(sigma_max, SCALE_FLOOR)`.
pub fn rank(m: &RMat, tol: f64) -> usize {
    let s = singular_values(m);
    let t = threshold(&s, tol);
    s.iter().filter(|&&x| x > t).count()
}

/// Rank over the reals of a family of complex vectors.
pub fn realified_rank(vectors: &[CVec], tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    rank(&realified_columns(vectors), tol)
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space(m: &RMat, tol: f64) -> RMat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return RMat::zeros(m.nrows(), 0);
    }
    let f = svd(m);
    let u = f.u.expect("svd u");
    let s: Vec<f64> = f.singular_values.iter().cloned().collect();
    let t = threshold(&s, tol);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > t).collect();
    let mut out = RMat::zeros(m.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &RMat, tol: f64) -> RMat {
    let n = m.ncols();
    if m.nrows() == 0 {
        return RMat::identity(n, n);
    }
    let rows = column_space(&m.transpose(), tol);
    complement(&rows)
}

/// Orthonormal completion: columns spanning the orthocomplement of the
/// orthonormal columns of `basis`.
pub fn complement(basis: &RMat) -> RMat {
    let n = basis.nrows();
    let projector = RMat::identity(n, n) - basis * basis.transpose();
    // Eigenvalues of the projector are 0 or 1.
    column_space(&projector, 0.5)
}

/// Relative residual of `v` against the column space of the orthonormal
/// columns of `q`.
pub fn residual_against(q: &RMat, v: &RVec) -> f64 {
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    if q.ncols() == 0 {
        return 1.0;
    }
    let p = q * (q.transpose() * v);
    (v - p).norm() / nv
}

/// Incrementally grown orthonormal basis of a real subspace, stored as
/// contiguous columns for fast projection.
#[derive(Clone, Debug)]
pub struct OrthoSpan {
    len: usize,
    dim: usize,
    flat: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

impl OrthoSpan {
    pub fn new(len: usize) -> Self {
        OrthoSpan {
            len,
            dim: 0,
            flat: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ambient(&self) -> usize {
        self.len
    }

    fn q(&self) -> nalgebra::DMatrixView<'_, f64> {
        nalgebra::DMatrixView::from_slice(&self.flat, self.len, self.dim)
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.flat[j * self.len..(j + 1) * self.len]
    }

    fn push_orthonormal(&mut self, v: Vec<f64>) {
        self.flat.extend_from_slice(&v);
        self.dim += 1;
    }

    /// Component of `v` orthogonal to the span (two passes of classical
    /// Gram–Schmidt).
    pub fn reject(&self, v: &[f64]) -> Vec<f64> {
        let mut w = RVec::from_column_slice(v);
        if self.dim > 0 {
            let q = self.q();
            for _ in 0..2 {
                let coeffs = q.tr_mul(&w);
                w.gemv(-1.0, &q, &coeffs, 1.0);
            }
        }
        w.as_slice().to_vec()
    }

    /// Relative distance of `v` from the span; zero vectors are members.
    pub fn residual(&self, v: &[f64]) -> f64 {
        let nv = norm(v);
        if nv == 0.0 {
            return 0.0;
        }
        norm(&self.reject(v)) / nv
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.residual(v) <= tol
    }

    /// Adds `v` when its relative residual exceeds `tol`; returns whether
    /// the span grew.
    pub fn try_add(&mut self, v: &[f64], tol: f64) -> bool {
        let nv = norm(v);
        if nv == 0.0 || self.dim >= self.len {
            return false;
        }
        let w = self.reject(v);
        let nw = norm(&w);
        if nw <= tol * nv {
            return false;
        }
        self.push_orthonormal(w.iter().map(|x| x / nw).collect());
        true
    }

    /// Same as calling [`OrthoSpan::try_add`] on each column in order, with
    /// the projection onto the existing basis done as one matrix product.
    pub fn try_add_batch(&mut self, vs: &RMat, tol: f64) -> Vec<bool> {
        let start = self.dim;
        let norms: Vec<f64> = vs.column_iter().map(|c| c.norm()).collect();
        let mut w = vs.clone_owned();
        if start > 0 {
            // one projection decides rejection; survivors get a second one
            let q = self.q();
            let coeffs = q.transpose() * &w;
            w.gemm(-1.0, &q, &coeffs, 1.0);
            let keep: Vec<usize> = (0..w.ncols())
                .filter(|&j| w.column(j).norm() > 0.5 * tol * norms[j])
                .collect();
            if !keep.is_empty() {
                let sub = w.select_columns(keep.iter());
                let coeffs = q.transpose() * &sub;
                let mut sub = sub;
                sub.gemm(-1.0, &q, &coeffs, 1.0);
                for (k, &j) in keep.iter().enumerate() {
                    w.set_column(j, &sub.column(k));
                }
            }
        }
        let mut out = Vec::with_capacity(vs.ncols());
        for j in 0..vs.ncols() {
            if norms[j] == 0.0 || self.dim >= self.len {
                out.push(false);
                continue;
            }
            let mut r: Vec<f64> = w.column(j).iter().cloned().collect();
            for _ in 0..2 {
                for k in start..self.dim {
                    let b = self.column(k);
                    let d = dot(b, &r);
                    r.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let nr = norm(&r);
            if nr <= tol * norms[j] {
                out.push(false);
                continue;
            }
            self.push_orthonormal(r.iter().map(|x| x / nr).collect());
            out.push(true);
        }
        out
    }

    /// [`OrthoSpan::residual`] for every column of `vs`.
    pub fn residual_batch(&self, vs: &RMat) -> Vec<f64> {
        let mut w = vs.clone_owned();
        if self.dim > 0 {
            let q = self.q();
            for _ in 0..2 {
                let coeffs = q.transpose() * &w;
                w.gemm(-1.0, &q, &coeffs, 1.0);
            }
        }
        (0..vs.ncols())
            .map(|j| {
                let nv = vs.column(j).norm();
                if nv == 0.0 {
                    0.0
                } else {
                    w.column(j).norm() / nv
                }
            })
            .collect()
    }

    pub fn to_matrix(&self) -> RMat {
        self.q().into_owned()
    }
}

/// Least-squares solution of `a x = b` through the SVD pseudo-inverse,
/// returning the solution and the relative residual.
pub fn lstsq(a: &RMat, b: &RVec, tol: f64) -> (RVec, f64) {
    if a.ncols() == 0 {
        let nb = b.norm();
        return (RVec::zeros(0), if nb == 0.0 { 0.0 } else { 1.0 });
    }
    let f = svd(a);
    let s: Vec<f64> = f.singular_values.iter().cloned().collect();
    let t = threshold(&s, tol);
    let x = f.solve(b, t).expect("svd solve");
    let nb = b.norm();
    let r = if nb == 0.0 { 0.0 } else { (a * &x - b).norm() / nb };
    (x, r)
}

/// 2-norm condition number of a square matrix (infinite when singular).
pub fn condition_number(m: &RMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        _ => f64::INFINITY,
    }
}

/// Frobenius norm of a complex matrix.
pub fn fro(m: &CMat) -> f64 {
    libm::sqrt(m.iter().map(|z| z.norm_sqr()).sum())
}

/// Real part of the Frobenius inner product `tr(a^† b)`.
pub fn fro_inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}
