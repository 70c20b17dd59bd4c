//! Operators on tensor-product Hilbert spaces.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{c, fro, realify_mat, CMat, CVec, OrthoSpan, C64, I};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpace {
    factors: Vec<(String, usize)>,
}

impl HilbertSpace {
    pub fn new(factors: &[(&str, usize)]) -> Result<Self> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for &(label, dim) in factors {
            if out.iter().any(|(l, _)| l == label) {
                return Err(Error::DuplicateLabel(label.to_string()));
            }
            if dim == 0 {
                return Err(Error::InvalidParameter("factor dimension must be positive"));
            }
            out.push((label.to_string(), dim));
        }
        Ok(HilbertSpace { factors: out })
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|f| f.1).product()
    }

    pub fn position(&self, slot: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|(l, _)| l == slot)
            .ok_or_else(|| Error::UnknownSlot(slot.to_string()))
    }

    pub fn factor_dim(&self, slot: &str) -> Result<usize> {
        Ok(self.factors[self.position(slot)?].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Hermitian,
    SkewHermitian,
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMat,
    kind: OperatorKind,
}

/// Hermiticity defect `‖M ∓ M†‖_F`, relative to `max(‖M‖_F, 1)`.
fn defect(m: &CMat, sign: f64) -> f64 {
    let adj = m.adjoint();
    let d = m - adj * c(sign, 0.0);
    fro(&d) / fro(m).max(1.0)
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMat, kind: OperatorKind) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows(),
            });
        }
        match kind {
            OperatorKind::Hermitian if defect(&matrix, 1.0) > DEFAULT_TOL => return Err(Error::WrongKind("hermitian")),
            OperatorKind::SkewHermitian if defect(&matrix, -1.0) > DEFAULT_TOL => {
                return Err(Error::WrongKind("skew-hermitian"))
            }
            _ => {}
        }
        Ok(Operator { space, matrix, kind })
    }

    pub fn hermitian(space: HilbertSpace, matrix: CMat) -> Result<Self> {
        Self::new(space, matrix, OperatorKind::Hermitian)
    }

    pub fn skew(space: HilbertSpace, matrix: CMat) -> Result<Self> {
        Self::new(space, matrix, OperatorKind::SkewHermitian)
    }

    pub fn general(space: HilbertSpace, matrix: CMat) -> Self {
        Operator {
            space,
            matrix,
            kind: OperatorKind::General,
        }
    }

    /// Re-derives the kind from the matrix entries.
    pub fn classified(space: HilbertSpace, matrix: CMat) -> Self {
        let kind = if defect(&matrix, 1.0) <= DEFAULT_TOL {
            OperatorKind::Hermitian
        } else if defect(&matrix, -1.0) <= DEFAULT_TOL {
            OperatorKind::SkewHermitian
        } else {
            OperatorKind::General
        };
        Operator { space, matrix, kind }
    }

    pub fn zero(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Operator {
            space: space.clone(),
            matrix: CMat::zeros(n, n),
            kind: OperatorKind::Hermitian,
        }
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Operator {
            space: space.clone(),
            matrix: CMat::identity(n, n),
            kind: OperatorKind::Hermitian,
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn norm(&self) -> f64 {
        fro(&self.matrix)
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            kind: self.kind,
        }
    }

    /// Skew-hermitian generator `−iH` of a hermitian `H`.
    pub fn to_generator(&self) -> Result<Operator> {
        if self.kind != OperatorKind::Hermitian {
            return Err(Error::WrongKind("hermitian"));
        }
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix * (-I),
            kind: OperatorKind::SkewHermitian,
        })
    }

    /// Hermitian `H = iA` of a skew-hermitian generator `A`.
    pub fn to_hamiltonian(&self) -> Result<Operator> {
        if self.kind != OperatorKind::SkewHermitian {
            return Err(Error::WrongKind("skew-hermitian"));
        }
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix * I,
            kind: OperatorKind::Hermitian,
        })
    }

    pub fn scale(&self, s: f64) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix * c(s, 0.0),
            kind: self.kind,
        }
    }

    pub fn scale_complex(&self, s: C64) -> Operator {
        Operator::classified(self.space.clone(), &self.matrix * s)
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        let kind = if self.kind == other.kind {
            self.kind
        } else {
            OperatorKind::General
        };
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &other.matrix,
            kind,
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        Ok(Operator::classified(self.space.clone(), &self.matrix * &other.matrix))
    }

    pub fn apply(&self, v: &CVec) -> CVec {
        &self.matrix * v
    }

    fn same_space(&self, other: &Operator) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }
}

/// Real linear combination `Σ c_k A_k` of operators on a common space.
pub fn linear_combination(space: &HilbertSpace, coeffs: &[f64], ops: &[Operator]) -> Operator {
    let n = space.total_dim();
    let mut m = CMat::zeros(n, n);
    let mut kind = ops.first().map(|o| o.kind).unwrap_or(OperatorKind::Hermitian);
    for (a, op) in coeffs.iter().zip(ops) {
        m += op.matrix() * c(*a, 0.0);
        if op.kind != kind {
            kind = OperatorKind::General;
        }
    }
    Operator {
        space: space.clone(),
        matrix: m,
        kind,
    }
}

pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.same_space(b)?;
    let m = &a.matrix * &b.matrix - &b.matrix * &a.matrix;
    let kind = match (a.kind, b.kind) {
        (OperatorKind::SkewHermitian, OperatorKind::SkewHermitian) => OperatorKind::SkewHermitian,
        (OperatorKind::Hermitian, OperatorKind::Hermitian) => OperatorKind::SkewHermitian,
        _ => OperatorKind::General,
    };
    Ok(Operator {
        space: a.space.clone(),
        matrix: m,
        kind,
    })
}

pub fn commutator_mat(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Embeds single-factor matrices into the full space, padding the other
/// factors with identities.
pub fn embed_product(parts: &[(&str, &CMat)], space: &HilbertSpace) -> Result<CMat> {
    let mut pieces: Vec<Option<&CMat>> = alloc::vec![None; space.factors().len()];
    for &(slot, m) in parts {
        let k = space.position(slot)?;
        let d = space.factors()[k].1;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.nrows(),
            });
        }
        pieces[k] = Some(m);
    }
    let mut out = CMat::identity(1, 1);
    for (k, (_, d)) in space.factors().iter().enumerate() {
        out = match pieces[k] {
            Some(m) => kron(&out, m),
            None => kron(&out, &CMat::identity(*d, *d)),
        };
    }
    Ok(out)
}

/// Partial trace over `slot`; the result acts on the remaining factors in
/// their original order.
pub fn partial_trace(m: &CMat, space: &HilbertSpace, slot: &str) -> Result<CMat> {
    let (pre, d, post) = split_dims(space, slot)?;
    let n = space.total_dim();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.nrows(),
        });
    }
    let idx = |a: usize, s: usize, b: usize| (a * d + s) * post + b;
    let r = pre * post;
    Ok(CMat::from_fn(r, r, |i, j| {
        let (a, b) = (i / post, i % post);
        let (a2, b2) = (j / post, j % post);
        (0..d).map(|s| m[(idx(a, s, b), idx(a2, s, b2))]).sum()
    }))
}

/// Relative distance of `m` from `(Tr_slot m / d) ⊗ I_slot`: zero exactly
/// when `m` acts as the identity on that factor.
pub fn factor_identity_deviation(m: &CMat, space: &HilbertSpace, slot: &str) -> Result<f64> {
    let (_, d, post) = split_dims(space, slot)?;
    let r = partial_trace(m, space, slot)? * c(1.0 / d as f64, 0.0);
    let back = CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let (a, s, b) = (i / (d * post), (i / post) % d, i % post);
        let (a2, s2, b2) = (j / (d * post), (j / post) % d, j % post);
        if s == s2 {
            r[(a * post + b, a2 * post + b2)]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let nm = crate::linalg::fro(m);
    Ok(if nm == 0.0 {
        0.0
    } else {
        crate::linalg::fro(&(m - back)) / nm
    })
}

fn split_dims(space: &HilbertSpace, slot: &str) -> Result<(usize, usize, usize)> {
    let k = space.position(slot)?;
    let f = space.factors();
    let pre = f[..k].iter().map(|x| x.1).product();
    let post = f[k + 1..].iter().map(|x| x.1).product();
    Ok((pre, f[k].1, post))
}

pub fn tensor_embed(op: &CMat, kind: OperatorKind, slot: &str, space: &HilbertSpace) -> Result<Operator> {
    let m = embed_product(&[(slot, op)], space)?;
    Ok(Operator {
        space: space.clone(),
        matrix: m,
        kind,
    })
}

pub mod pauli {
    use super::*;

    /// `σ_z = |1⟩⟨1| − |0⟩⟨0|`.
    pub fn z() -> CMat {
        CMat::from_row_slice(2, 2, &[c(-1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
    }

    pub fn x() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
    }

    /// Completes `[σ_x, σ_y] = 2iσ_z` with the `σ_z` above.
    pub fn y() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)])
    }

    pub fn id() -> CMat {
        CMat::identity(2, 2)
    }

    /// `|i⟩⟨j|` on a `d`-level factor.
    pub fn ket_bra(d: usize, i: usize, j: usize) -> CMat {
        let mut m = CMat::zeros(d, d);
        m[(i, j)] = c(1.0, 0.0);
        m
    }
}

/// Truncated lowering and raising operators on `n` levels.
pub fn ladder_pair(n: usize) -> Result<(CMat, CMat)> {
    if n < 2 {
        return Err(Error::EnvTooSmall(n));
    }
    let mut b = CMat::zeros(n, n);
    for k in 1..n {
        b[(k - 1, k)] = c(libm::sqrt(k as f64), 0.0);
    }
    let bd = b.adjoint();
    Ok((b, bd))
}

/// `w b† + w̄ b` on an `n`-level truncation.
pub fn field_quadrature(w: C64, n: usize) -> Result<CMat> {
    let (b, bd) = ladder_pair(n)?;
    Ok(bd * w + b * w.conj())
}

/// `b† b` on an `n`-level truncation.
pub fn number_operator(n: usize) -> Result<CMat> {
    let (b, bd) = ladder_pair(n)?;
    Ok(bd * b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    space: HilbertSpace,
    amplitudes: CVec,
}

impl StateVector {
    pub fn new(space: HilbertSpace, amplitudes: CVec) -> Result<Self> {
        let n = space.total_dim();
        if amplitudes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: amplitudes.len(),
            });
        }
        let nrm = amplitudes.norm();
        if (nrm - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized(nrm));
        }
        Ok(StateVector { space, amplitudes })
    }

    /// Normalizes `amplitudes` before construction.
    pub fn normalized(space: HilbertSpace, amplitudes: CVec) -> Result<Self> {
        let nrm = amplitudes.norm();
        if nrm == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Self::new(space, amplitudes / c(nrm, 0.0))
    }

    pub fn basis(space: &HilbertSpace, index: usize) -> Result<Self> {
        let n = space.total_dim();
        if index >= n {
            return Err(Error::InvalidIndex(index));
        }
        let mut v = CVec::zeros(n);
        v[index] = c(1.0, 0.0);
        Ok(StateVector {
            space: space.clone(),
            amplitudes: v,
        })
    }

    /// Haar-distributed pure state.
    pub fn random<R: Rng + ?Sized>(space: &HilbertSpace, rng: &mut R) -> Self {
        let n = space.total_dim();
        let v = CVec::from_fn(n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re, im)
        });
        let nrm = v.norm();
        StateVector {
            space: space.clone(),
            amplitudes: v / c(nrm, 0.0),
        }
    }

    /// Tensor product of normalized factor states in factor order.
    pub fn product(space: &HilbertSpace, parts: &[CVec]) -> Result<Self> {
        if parts.len() != space.factors().len() {
            return Err(Error::DimensionMismatch {
                expected: space.factors().len(),
                found: parts.len(),
            });
        }
        let mut v = CVec::from_element(1, c(1.0, 0.0));
        for (p, (_, d)) in parts.iter().zip(space.factors()) {
            if p.len() != *d {
                return Err(Error::DimensionMismatch {
                    expected: *d,
                    found: p.len(),
                });
            }
            v = v.kronecker(p);
        }
        Self::normalized(space.clone(), v)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Reconstruction without a norm check, for internal propagation.
    pub(crate) fn from_raw(space: HilbertSpace, amplitudes: CVec) -> Self {
        StateVector { space, amplitudes }
    }
}

/// Spectral data of a skew-hermitian generator `A = −iH`.
#[derive(Clone, Debug)]
pub struct SkewSpectrum {
    vectors: CMat,
    energies: Vec<f64>,
}

impl SkewSpectrum {
    pub fn new(a: &Operator) -> Result<Self> {
        if a.kind() != OperatorKind::SkewHermitian && defect(a.matrix(), -1.0) > DEFAULT_TOL {
            return Err(Error::WrongKind("skew-hermitian"));
        }
        let h = a.matrix() * I;
        let h = (&h + h.adjoint()) * c(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        Ok(SkewSpectrum {
            vectors: eig.eigenvectors,
            energies: eig.eigenvalues.iter().cloned().collect(),
        })
    }

    /// `exp(tA)` as a dense matrix.
    pub fn propagator(&self, t: f64) -> CMat {
        let n = self.energies.len();
        let mut scaled = self.vectors.clone();
        for k in 0..n {
            let ph = phase(-t * self.energies[k]);
            for r in 0..n {
                scaled[(r, k)] *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(tA) v` without forming the propagator.
    pub fn apply(&self, t: f64, v: &CVec) -> CVec {
        let mut coeffs = self.vectors.adjoint() * v;
        for (k, z) in coeffs.iter_mut().enumerate() {
            *z *= phase(-t * self.energies[k]);
        }
        &self.vectors * coeffs
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> &CMat {
        &self.vectors
    }
}

fn phase(theta: f64) -> C64 {
    c(libm::cos(theta), libm::sin(theta))
}

pub fn matrix_exp_apply(a: &Operator, t: f64, xi: &StateVector) -> Result<StateVector> {
    if a.space() != xi.space() {
        return Err(Error::SpaceMismatch);
    }
    let sp = SkewSpectrum::new(a)?;
    Ok(StateVector::from_raw(xi.space.clone(), sp.apply(t, xi.amplitudes())))
}

pub fn expm_skew(a: &Operator, t: f64) -> Result<CMat> {
    Ok(SkewSpectrum::new(a)?.propagator(t))
}

/// Real-linear basis of the smallest commutator-closed real span that
/// contains `generators`.
pub fn lie_closure(generators: &[Operator], max_dim: usize, tol: f64) -> Result<Vec<Operator>> {
    let Some(first) = generators.first() else {
        return Ok(Vec::new());
    };
    let space = first.space().clone();
    let n = first.dim();
    let mut span = OrthoSpan::new(2 * n * n);
    let mut basis: Vec<Operator> = Vec::new();
    let admit = |op: Operator, span: &mut OrthoSpan, basis: &mut Vec<Operator>| -> Result<bool> {
        if op.space() != &space {
            return Err(Error::SpaceMismatch);
        }
        let grew = span.try_add(realify_mat(op.matrix()).as_slice(), tol);
        if grew {
            basis.push(op);
            if basis.len() > max_dim {
                return Err(Error::ClosureBlowup { max_dim });
            }
        }
        Ok(grew)
    };
    for g in generators {
        admit(g.clone(), &mut span, &mut basis)?;
    }
    let mut frontier_start = 0;
    while frontier_start < basis.len() {
        let frontier_end = basis.len();
        for i in frontier_start..frontier_end {
            for j in 0..frontier_end {
                if j >= frontier_start && j <= i {
                    continue;
                }
                let b = commutator(&basis[i], &basis[j])?;
                admit(b, &mut span, &mut basis)?;
            }
        }
        frontier_start = frontier_end;
    }
    Ok(basis)
}
