//! Pointwise tangent-space machinery: linear vector fields, the output
//! kernel, invariant distributions and controlled invariance.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{commutator, HilbertSpace, Operator, OperatorKind, SkewSpectrum, StateVector};
use crate::error::{Error, Result};
use crate::linalg::{
    c, column_space, complement, null_space, realify, unrealify, CMat, CVec, OrthoSpan, RMat, RVec, I,
};
use crate::models::ControlSystem;
use crate::observation::{BracketScope, Verdict, Witness};

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub components: CVec,
}

impl TangentVector {
    pub fn realified(&self) -> RVec {
        realify(&self.components)
    }
}

/// Field `ξ ↦ Aξ` evaluated at `ξ`.
pub fn eval_field(a: &Operator, xi: &StateVector) -> Result<TangentVector> {
    if a.space() != xi.space() {
        return Err(Error::SpaceMismatch);
    }
    Ok(TangentVector {
        components: a.apply(xi.amplitudes()),
    })
}

/// Generator of the Lie bracket of the linear fields `Aξ` and `Bξ`: `BA − AB`.
pub fn bracket_linear_fields(a: &Operator, b: &Operator) -> Result<Operator> {
    commutator(b, a)
}

/// Finite-difference Lie bracket `[X, Y](ξ) = DY·X − DX·Y` of two fields
/// on the realified state, central differences with step `h`.
pub fn fd_bracket<F, G>(x: F, y: G, xi: &CVec, h: f64) -> CVec
where
    F: Fn(&CVec) -> CVec,
    G: Fn(&CVec) -> CVec,
{
    let xv = x(xi);
    let yv = y(xi);
    let dy_x = (y(&(xi + &xv * c(h, 0.0))) - y(&(xi - &xv * c(h, 0.0)))) / c(2.0 * h, 0.0);
    let dx_y = (x(&(xi + &yv * c(h, 0.0))) - x(&(xi - &yv * c(h, 0.0)))) / c(2.0 * h, 0.0);
    dy_x - dx_y
}

/// Real and imaginary parts of the output operator as hermitian matrices.
pub fn output_quadratics(c_op: &Operator) -> (CMat, CMat) {
    let m = c_op.matrix();
    let adj = m.adjoint();
    let re = (m + &adj) * c(0.5, 0.0);
    let im = (m - &adj) * c(0.0, -0.5);
    (re, im)
}

/// Realified differential of `ξ ↦ ξ†Qξ` for hermitian `Q`.
pub fn quadratic_covector(q: &CMat, xi: &CVec) -> RVec {
    realify(&(q * xi)) * 2.0
}

/// Real coordinates of a hermitian matrix (isometric up to a factor).
fn herm_coords(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n);
    let s = libm::sqrt(2.0);
    for i in 0..n {
        v.push(m[(i, i)].re);
        for j in i + 1..n {
            v.push(s * m[(i, j)].re);
            v.push(s * m[(i, j)].im);
        }
    }
    v
}

#[derive(Clone, Debug)]
pub struct DistributionBasis {
    pub base: StateVector,
    pub vectors: Vec<TangentVector>,
    pub generating_ops: Option<Vec<Operator>>,
    ortho: RMat,
}

impl DistributionBasis {
    /// Builds a basis from arbitrary spanning vectors (orthonormalized over
    /// the reals with the given tolerance).
    pub fn from_vectors(base: &StateVector, vectors: &[CVec], tol: f64) -> Self {
        let n = base.dim();
        let mut m = RMat::zeros(2 * n, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            m.set_column(j, &realify(v));
        }
        Self::from_realified(base, &m, tol)
    }

    fn from_realified(base: &StateVector, m: &RMat, tol: f64) -> Self {
        let ortho = column_space(m, tol);
        Self::from_orthonormal(base, ortho)
    }

    fn from_orthonormal(base: &StateVector, ortho: RMat) -> Self {
        let vectors = (0..ortho.ncols())
            .map(|j| TangentVector {
                components: unrealify(&ortho.column(j).into_owned()),
            })
            .collect();
        DistributionBasis {
            base: base.clone(),
            vectors,
            generating_ops: None,
            ortho,
        }
    }

    /// Span of the linear fields of `ops` at `xi`, remembering the operators.
    pub fn from_linear_fields(xi: &StateVector, ops: &[Operator], tol: f64) -> Result<Self> {
        let vs: Vec<CVec> = ops
            .iter()
            .map(|a| eval_field(a, xi).map(|t| t.components))
            .collect::<Result<_>>()?;
        let mut d = Self::from_vectors(xi, &vs, tol);
        d.generating_ops = Some(ops.to_vec());
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.ortho.ncols()
    }

    /// Orthonormal realified basis as columns.
    pub fn realified(&self) -> &RMat {
        &self.ortho
    }

    /// Relative residual of `v` against the span.
    pub fn residual(&self, v: &CVec) -> f64 {
        crate::linalg::residual_against(&self.ortho, &realify(v))
    }

    /// Largest relative residual of any of `other`'s basis vectors here.
    pub fn containment_residual(&self, other: &DistributionBasis) -> f64 {
        (0..other.ortho.ncols())
            .map(|j| crate::linalg::residual_against(&self.ortho, &other.ortho.column(j).into_owned()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct CodistributionBasis {
    pub base: StateVector,
    pub quadratic_generators: Vec<Operator>,
    pub realized_covectors: Vec<RVec>,
}

impl CodistributionBasis {
    fn build(base: &StateVector, space: &HilbertSpace, ops: &[CMat]) -> Self {
        let xi = base.amplitudes();
        let realized_covectors = ops.iter().map(|q| quadratic_covector(q, xi)).collect();
        let quadratic_generators = ops
            .iter()
            .map(|q| {
                Operator::new(space.clone(), q.clone(), OperatorKind::Hermitian)
                    .unwrap_or_else(|_| Operator::general(space.clone(), q.clone()))
            })
            .collect();
        CodistributionBasis {
            base: base.clone(),
            quadratic_generators,
            realized_covectors,
        }
    }

    fn covector_matrix(&self) -> RMat {
        let n = self.base.dim();
        let mut m = RMat::zeros(self.realized_covectors.len(), 2 * n);
        for (i, w) in self.realized_covectors.iter().enumerate() {
            m.set_row(i, &w.transpose());
        }
        m
    }

    /// Real rank of the realized covectors.
    pub fn rank(&self, tol: f64) -> usize {
        if self.realized_covectors.is_empty() {
            return 0;
        }
        crate::linalg::rank(&self.covector_matrix(), tol)
    }

    /// Common kernel of the realized covectors.
    pub fn annihilator(&self, tol: f64) -> DistributionBasis {
        let n = self.base.dim();
        if self.realized_covectors.is_empty() {
            return DistributionBasis::from_orthonormal(&self.base, RMat::identity(2 * n, 2 * n));
        }
        DistributionBasis::from_orthonormal(&self.base, null_space(&self.covector_matrix(), tol))
    }
}

/// `ker(dy)` at `ξ`, with `y` read as two real outputs.
pub fn kernel_dy(xi: &StateVector, c_op: &Operator, tol: f64) -> DistributionBasis {
    let (qr, qi) = output_quadratics(c_op);
    let zero = c_op.norm() == 0.0;
    let ops = if zero { Vec::new() } else { alloc::vec![qr, qi] };
    CodistributionBasis::build(xi, c_op.space(), &ops).annihilator(tol)
}

/// Growth record of a closure: one entry per round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundInfo {
    pub generators: usize,
    pub covector_rank: usize,
    pub intersection_dim: usize,
}

/// State-independent part of the open-loop observation closure: the real
/// span of hermitian operators obtained from `Re C`, `Im C` under
/// `M ↦ MA + A†M` for the drift and the controls.
#[derive(Clone, Debug)]
pub struct ObservationClosure {
    space: HilbertSpace,
    ops: Vec<CMat>,
    round_sizes: Vec<usize>,
}

impl ObservationClosure {
    pub fn new(sys: &ControlSystem, max_dim: usize, tol: f64) -> Result<Self> {
        let n = sys.dim();
        let (qr, qi) = output_quadratics(&sys.output_op);
        let mut span = OrthoSpan::new(n * n);
        let mut ops: Vec<CMat> = Vec::new();
        for q in [qr, qi] {
            if span.try_add(&herm_coords(&q), tol) {
                ops.push(q);
            }
        }
        let gens: Vec<CMat> = sys.generators().iter().map(|g| g.matrix().clone()).collect();
        let mut round_sizes = alloc::vec![ops.len()];
        let mut start = 0;
        while start < ops.len() {
            let end = ops.len();
            for k in start..end {
                for a in &gens {
                    if span.dim() == span.ambient() {
                        break;
                    }
                    let m = &ops[k] * a + a.adjoint() * &ops[k];
                    if span.try_add(&herm_coords(&m), tol) {
                        ops.push(m);
                        if ops.len() > max_dim {
                            return Err(Error::ClosureBlowup { max_dim });
                        }
                    }
                }
            }
            start = end;
            round_sizes.push(ops.len());
        }
        Ok(ObservationClosure {
            space: sys.space.clone(),
            ops,
            round_sizes,
        })
    }

    pub fn dim(&self) -> usize {
        self.ops.len()
    }

    pub fn operators(&self) -> &[CMat] {
        &self.ops
    }

    /// Ω* realized at `ξ`.
    pub fn at(&self, xi: &StateVector) -> CodistributionBasis {
        CodistributionBasis::build(xi, &self.space, &self.ops)
    }

    /// Per-round growth, with the pointwise rank of the first `k` operators.
    pub fn rounds(&self, xi: &StateVector, tol: f64) -> Vec<RoundInfo> {
        let cod = self.at(xi);
        self.round_sizes
            .iter()
            .map(|&k| {
                let part = CodistributionBasis {
                    base: xi.clone(),
                    quadratic_generators: Vec::new(),
                    realized_covectors: cod.realized_covectors[..k].to_vec(),
                };
                RoundInfo {
                    generators: k,
                    covector_rank: part.rank(tol),
                    intersection_dim: 0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ClosureResult {
    pub omega: CodistributionBasis,
    pub delta: DistributionBasis,
    pub rounds: Vec<RoundInfo>,
    /// The pointwise intersection was larger than its constant-coefficient
    /// part somewhere, so `delta` may over-approximate.
    pub state_dependent_intersection: bool,
}

/// Open-loop codistribution closure and its annihilator `Δ*`.
pub fn omega_closure_open(sys: &ControlSystem, xi: &StateVector, max_dim: usize, tol: f64) -> Result<ClosureResult> {
    let closure = ObservationClosure::new(sys, max_dim, tol)?;
    Ok(open_result(&closure, xi, tol))
}

pub fn open_result(closure: &ObservationClosure, xi: &StateVector, tol: f64) -> ClosureResult {
    let omega = closure.at(xi);
    let delta = omega.annihilator(tol);
    ClosureResult {
        rounds: closure.rounds(xi, tol),
        omega,
        delta,
        state_dependent_intersection: false,
    }
}

/// Settings of the flow-sampling removal oracle.
#[derive(Clone, Copy, Debug)]
pub struct RemovalOptions {
    pub seed: u64,
    pub word_length: usize,
    pub max_time: f64,
    /// Consecutive non-removing samples required before stopping.
    pub patience: usize,
    pub max_samples: usize,
}

impl Default for RemovalOptions {
    fn default() -> Self {
        RemovalOptions {
            seed: 7,
            word_length: 24,
            max_time: 2.0,
            patience: 40,
            max_samples: 5000,
        }
    }
}

/// Maximal invariant distribution inside `ker(dy)` by iterative removal:
/// starting from `ker(dy)`, every direction that some flow of the drift and
/// controls carries out of the output kernel is removed. A sampled flow
/// `Φ = e^{t_L A_L}⋯e^{t_1 A_1}` removes the covectors of `Φ†QΦ` for
/// `Q ∈ {Re C, Im C}`; sampling stops after `patience` consecutive flows
/// remove nothing.
pub fn bruteforce_invariant_distribution(
    sys: &ControlSystem,
    xi: &StateVector,
    opts: RemovalOptions,
    tol: f64,
) -> Result<DistributionBasis> {
    let n = sys.dim();
    let x = xi.amplitudes();
    let (qr, qi) = output_quadratics(&sys.output_op);
    let mut removed: Vec<RVec> = alloc::vec![quadratic_covector(&qr, x), quadratic_covector(&qi, x)];
    let stack = |rows: &[RVec]| {
        let mut m = RMat::zeros(rows.len(), 2 * n);
        for (i, r) in rows.iter().enumerate() {
            m.set_row(i, &r.transpose());
        }
        m
    };
    let mut keep = null_space(&stack(&removed), tol);
    let spectra: Vec<SkewSpectrum> = sys.generators().iter().map(SkewSpectrum::new).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut quiet = 0;
    let mut samples = 0;
    while quiet < opts.patience && samples < opts.max_samples && keep.ncols() > 0 {
        samples += 1;
        let mut phi = CMat::identity(n, n);
        for _ in 0..opts.word_length {
            let k = rng.random_range(0..spectra.len());
            let t = rng.random_range(-opts.max_time..opts.max_time);
            phi = spectra[k].propagator(t) * phi;
        }
        let mut hit = false;
        for q in [&qr, &qi] {
            let moved = phi.adjoint() * q * &phi;
            let w = quadratic_covector(&moved, x);
            let p = keep.transpose() * &w;
            if p.norm() > tol * w.norm().max(crate::linalg::SCALE_FLOOR) {
                removed.push(w);
                keep = null_space(&stack(&removed), tol);
                hit = true;
            }
        }
        quiet = if hit { 0 } else { quiet + 1 };
    }
    Ok(DistributionBasis::from_orthonormal(xi, keep))
}

pub(crate) fn skew_coords(m: &CMat) -> Vec<f64> {
    herm_coords(&(m * I))
}

/// Skew-hermitian operator with the given coordinates (inverse of the
/// coordinate map used by the operator-level algorithms).
pub(crate) fn skew_from_coords(v: &[f64], n: usize) -> CMat {
    let mut h = CMat::zeros(n, n);
    let s = libm::sqrt(0.5);
    let mut k = 0;
    for i in 0..n {
        h[(i, i)] = c(v[k], 0.0);
        k += 1;
        for j in i + 1..n {
            let z = c(v[k] * s, v[k + 1] * s);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
            k += 2;
        }
    }
    h * (-I)
}

/// Largest subspace `𝒟` of skew-hermitian operators commuting with `C`
/// such that `[B, A] ∈ 𝒟 + 𝒢` for every `B ∈ 𝒟` and every `A` in `gens`.
/// With `extra` empty this is the linear-field invariant core, whose
/// fields form a subdistribution of the open-loop `Δ*`.
pub fn linear_field_core(
    sys: &ControlSystem,
    gens: &[Operator],
    extra: &[Operator],
    tol: f64,
) -> Result<Vec<Operator>> {
    let n = sys.dim();
    let dim = n * n;
    let basis_op = |k: usize| {
        let mut e = alloc::vec![0.0; dim];
        e[k] = 1.0;
        skew_from_coords(&e, n)
    };
    let cm = sys.output_op.matrix();
    // realified commutator with C on the coordinate basis
    let mut m = RMat::zeros(2 * n * n, dim);
    for k in 0..dim {
        let b = basis_op(k);
        m.set_column(k, &crate::linalg::realify_mat(&(cm * &b - &b * cm)));
    }
    let mut d = null_space(&m, tol);
    let g_cols: Vec<Vec<f64>> = extra.iter().map(|g| skew_coords(g.matrix())).collect();
    let gen_mats: Vec<CMat> = gens.iter().map(|g| g.matrix().clone()).collect();
    loop {
        if d.ncols() == 0 {
            return Ok(Vec::new());
        }
        let mut w = RMat::zeros(dim, d.ncols() + g_cols.len());
        w.columns_mut(0, d.ncols()).copy_from(&d);
        for (j, g) in g_cols.iter().enumerate() {
            w.set_column(d.ncols() + j, &RVec::from_column_slice(g));
        }
        let w = column_space(&w, tol);
        let mut rows = RMat::zeros(gen_mats.len() * dim, d.ncols());
        let ops: Vec<CMat> = (0..d.ncols())
            .map(|j| skew_from_coords(d.column(j).as_slice(), n))
            .collect();
        for (gi, a) in gen_mats.iter().enumerate() {
            for (j, b) in ops.iter().enumerate() {
                let img = RVec::from_vec(skew_coords(&(b * a - a * b)));
                let r = &img - &w * (w.transpose() * &img);
                rows.view_mut((gi * dim, j), (dim, 1)).copy_from(&r);
            }
        }
        let k = null_space(&rows, tol);
        if k.ncols() == d.ncols() {
            break;
        }
        d = column_space(&(&d * k), tol);
    }
    let space = sys.space.clone();
    Ok((0..d.ncols())
        .map(|j| {
            Operator::new(
                space.clone(),
                skew_from_coords(d.column(j).as_slice(), n),
                OperatorKind::SkewHermitian,
            )
            .expect("skew by construction")
        })
        .collect())
}

/// Settings of the closed-loop closure's regularity probe.
#[derive(Clone, Copy, Debug)]
pub struct ClosedLoopOptions {
    pub probes: usize,
    pub radius: f64,
    pub seed: u64,
    pub max_dim: usize,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        ClosedLoopOptions {
            probes: 8,
            radius: 1e-3,
            seed: 11,
            max_dim: 4096,
        }
    }
}

fn perturbed(xi: &StateVector, k: usize, opts: &ClosedLoopOptions) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
    let n = xi.dim();
    let d = CVec::from_fn(n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let v = xi.amplitudes() + d * c(opts.radius / libm::sqrt(n as f64), 0.0);
    let nv = v.norm();
    v / c(nv, 0.0)
}

/// Closed-loop closure `Ω_{i+1} = Ω_i + Σ_A L_{K_A}(Ω_i ∩ G^⊥)` with the
/// intersection taken over constant-coefficient combinations of the current
/// generators that annihilate the controls at `ξ` and at nearby probes.
pub fn omega_closure_closed(
    sys: &ControlSystem,
    g_ops: &[Operator],
    xi: &StateVector,
    opts: ClosedLoopOptions,
    tol: f64,
) -> Result<ClosureResult> {
    let n = sys.dim();
    let (qr, qi) = output_quadratics(&sys.output_op);
    let mut shadow = OrthoSpan::new(n * n);
    let mut gens: Vec<CMat> = Vec::new();
    for q in [qr, qi] {
        if shadow.try_add(&herm_coords(&q), tol) {
            gens.push(q);
        }
    }
    let mut points: Vec<CVec> = alloc::vec![xi.amplitudes().clone()];
    for k in 0..opts.probes {
        points.push(perturbed(xi, k, &opts));
    }
    let gen_mats: Vec<CMat> = sys.generators().iter().map(|g| g.matrix().clone()).collect();
    let g_mats: Vec<CMat> = g_ops.iter().map(|g| g.matrix().clone()).collect();
    let mut rounds = Vec::new();
    let mut state_dependent = false;
    loop {
        let p = gens.len();
        // pairing of each generator's covector with each control field, per point
        let mut stacked = RMat::zeros(points.len() * g_mats.len(), p);
        let mut dims = Vec::new();
        for (pi, x) in points.iter().enumerate() {
            let mut cov = RMat::zeros(2 * n, p);
            for (k, q) in gens.iter().enumerate() {
                cov.set_column(k, &quadratic_covector(q, x));
            }
            let mut fields = RMat::zeros(2 * n, g_mats.len());
            for (gi, g) in g_mats.iter().enumerate() {
                fields.set_column(gi, &realify(&(g * x)));
            }
            let block = fields.transpose() * &cov;
            let span = column_space(&cov, tol);
            dims.push(if g_mats.is_empty() {
                span.ncols()
            } else {
                null_space(&(fields.transpose() * &span), tol).ncols()
            });
            stacked
                .view_mut((pi * g_mats.len(), 0), (g_mats.len(), p))
                .copy_from(&block);
        }
        let low = *dims.iter().min().unwrap_or(&0);
        let high = *dims.iter().max().unwrap_or(&0);
        if low != high {
            return Err(Error::NonRegularPoint { low, high });
        }
        let kernel = if g_mats.is_empty() {
            RMat::identity(p, p)
        } else {
            null_space(&stacked, tol)
        };
        let constant: Vec<CMat> = (0..kernel.ncols())
            .map(|j| {
                let mut m = CMat::zeros(n, n);
                for k in 0..p {
                    m += &gens[k] * c(kernel[(k, j)], 0.0);
                }
                m
            })
            .collect();
        let const_dim = CodistributionBasis::build(xi, &sys.space, &constant).rank(tol);
        if const_dim < dims[0] {
            state_dependent = true;
        }
        let before = gens.len();
        for m in &constant {
            for a in &gen_mats {
                let l = m * a + a.adjoint() * m;
                if shadow.try_add(&herm_coords(&l), tol) {
                    gens.push(l);
                    if gens.len() > opts.max_dim {
                        return Err(Error::ClosureBlowup { max_dim: opts.max_dim });
                    }
                }
            }
        }
        let omega = CodistributionBasis::build(xi, &sys.space, &gens);
        rounds.push(RoundInfo {
            generators: gens.len(),
            covector_rank: omega.rank(tol),
            intersection_dim: dims[0],
        });
        if gens.len() == before {
            let delta = omega.annihilator(tol);
            return Ok(ClosureResult {
                omega,
                delta,
                rounds,
                state_dependent_intersection: state_dependent,
            });
        }
    }
}

/// `[K_A, Δ] ⊂ Δ + G` at `Δ`'s base point, for `A` in the controls (and the
/// drift, in the wider scope). `g_ops` generates `G`.
pub fn check_controlled_invariance(
    delta: &DistributionBasis,
    sys: &ControlSystem,
    g_ops: &[Operator],
    scope: BracketScope,
    tol: f64,
) -> Result<Verdict> {
    let cond = match scope {
        BracketScope::Controls => "[K_i, Delta] in Delta + G",
        BracketScope::ControlsAndDrift => "[K_0, Delta], [K_i, Delta] in Delta + G",
    };
    let Some(ops) = &delta.generating_ops else {
        return Err(Error::InvalidParameter("distribution has no generating operators"));
    };
    let xi = &delta.base;
    let mut vs: Vec<CVec> = delta.vectors.iter().map(|v| v.components.clone()).collect();
    for g in g_ops {
        vs.push(eval_field(g, xi)?.components);
    }
    let target = DistributionBasis::from_vectors(xi, &vs, tol);
    let mut probes: Vec<(alloc::string::String, &Operator)> = Vec::new();
    if scope == BracketScope::ControlsAndDrift {
        probes.push(("K_0".into(), &sys.drift));
    }
    for (a, l) in sys.controls.iter().zip(&sys.control_labels) {
        probes.push((alloc::format!("K[{l}]"), a));
    }
    let mut worst = 0.0f64;
    for (k, d) in ops.iter().enumerate() {
        for (name, a) in &probes {
            let v = eval_field(&bracket_linear_fields(d, a)?, xi)?.components;
            let res = target.residual(&v);
            if res > tol {
                return Ok(Verdict {
                    condition: cond.into(),
                    passed: false,
                    witness: Some(Witness {
                        description: alloc::format!("[{name}, Delta[{k}]] not in Delta + G"),
                        magnitude: res,
                    }),
                    residual: res,
                });
            }
            worst = worst.max(res);
        }
    }
    Ok(Verdict {
        condition: cond.into(),
        passed: true,
        witness: None,
        residual: worst,
    })
}

/// Orthonormal realified complement of `d` inside the full tangent space.
pub fn orthocomplement(d: &DistributionBasis) -> RMat {
    complement(d.realified())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{pauli, HilbertSpace};
    use crate::models::*;

    const TOL: f64 = 1e-9;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_skew(space: &HilbertSpace, r: &mut ChaCha8Rng) -> Operator {
        let n = space.total_dim();
        let m = CMat::from_fn(n, n, |_, _| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        Operator::skew(space.clone(), (&m - m.adjoint()) * c(0.5, 0.0)).unwrap()
    }

    #[test]
    fn single_qubit_tangent_rank_at_basis_state() {
        let sp = HilbertSpace::new(&[("q", 2)]).unwrap();
        let xi = StateVector::basis(&sp, 0).unwrap();
        let ops = [
            CMat::identity(2, 2) * c(0.0, 1.0),
            pauli::z() * c(0.0, -1.0),
            pauli::x() * c(0.0, -1.0),
            pauli::y() * c(0.0, -1.0),
        ];
        let vs: Vec<CVec> = ops.iter().map(|m| m * xi.amplitudes()).collect();
        assert_eq!(crate::linalg::realified_rank(&vs, TOL), 3);
    }

    #[test]
    fn bracket_matches_finite_differences() {
        let sp = HilbertSpace::new(&[("a", 2), ("b", 2)]).unwrap();
        let mut r = rng(3);
        for _ in 0..10 {
            let a = random_skew(&sp, &mut r);
            let b = random_skew(&sp, &mut r);
            let xi = StateVector::random(&sp, &mut r);
            let exact = eval_field(&bracket_linear_fields(&a, &b).unwrap(), &xi)
                .unwrap()
                .components;
            let fd = fd_bracket(|v| a.apply(v), |v| b.apply(v), xi.amplitudes(), 1e-5);
            assert!((exact - fd).norm() < 1e-6);
            let cc = random_skew(&sp, &mut r);
            let j = |x: &Operator, y: &Operator, z: &Operator| {
                bracket_linear_fields(x, &bracket_linear_fields(y, z).unwrap()).unwrap()
            };
            let sum = j(&a, &b, &cc)
                .add(&j(&b, &cc, &a))
                .unwrap()
                .add(&j(&cc, &a, &b))
                .unwrap();
            assert!(sum.norm() < 1e-12);
            assert!(bracket_linear_fields(&a, &a).unwrap().norm() == 0.0);
        }
    }

    #[test]
    fn kernel_dy_examples() {
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let zero = Operator::zero(&sys.space);
        let mut r = rng(5);
        let xi = StateVector::random(&sys.space, &mut r);
        assert_eq!(kernel_dy(&xi, &zero, TOL).dim(), 24);
        let mut v = CVec::zeros(12);
        v[3] = c(1.0, 0.0);
        v[6] = c(1.0, 0.0);
        let dfs = StateVector::normalized(sys.space.clone(), v).unwrap();
        for x in [&dfs, &xi] {
            let k = kernel_dy(x, &sys.output_op, TOL);
            assert_eq!(k.dim(), 22);
            assert!(k.residual(&eval_field(&sys.interaction, x).unwrap().components) < 1e-12);
            let f = crate::algebra::field_quadrature(c(0.1, 0.0), 3).unwrap();
            let mut fp = CMat::identity(3, 3);
            for _ in 0..3 {
                fp = &fp * &f;
                let env = crate::algebra::embed_product(&[("env", &fp)], &sys.space).unwrap();
                let z = crate::algebra::embed_product(&[("q1", &pauli::z())], &sys.space).unwrap()
                    + crate::algebra::embed_product(&[("q2", &pauli::z())], &sys.space).unwrap();
                for h in [env.clone(), &z * &env] {
                    let v = (h * c(0.0, -1.0)) * x.amplitudes();
                    assert!(k.residual(&v) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn duality_and_oracle_small_systems() {
        let p = ScenarioParams::default();
        for sys in [build_single_qubit(&p).unwrap(), build_two_qubit(&p).unwrap()] {
            let closure = ObservationClosure::new(&sys, 10_000, TOL).unwrap();
            let mut r = rng(9);
            for _ in 0..5 {
                let xi = StateVector::random(&sys.space, &mut r);
                let res = open_result(&closure, &xi, TOL);
                assert_eq!(res.delta.dim() + res.omega.rank(TOL), 2 * sys.dim());
                let ranks: Vec<usize> = res.rounds.iter().map(|r| r.covector_rank).collect();
                assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
                let oracle = bruteforce_invariant_distribution(&sys, &xi, RemovalOptions::default(), TOL).unwrap();
                assert_eq!(oracle.dim(), res.delta.dim());
                assert!(oracle.containment_residual(&res.delta) < TOL);
                assert!(res.delta.containment_residual(&oracle) < TOL);
                // the interaction field leaves Δ* in both systems
                assert!(
                    res.delta
                        .residual(&eval_field(&sys.interaction, &xi).unwrap().components)
                        > 1e-3
                );
            }
        }
    }

    #[test]
    fn closure_pairs_reproduce_lie_derivatives() {
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let closure = ObservationClosure::new(&sys, 10_000, TOL).unwrap();
        let xi = StateVector::random(&sys.space, &mut rng(1));
        let x = xi.amplitudes();
        for q in closure.operators() {
            let w = quadratic_covector(q, x);
            for a in sys.generators() {
                let lhs = w.dot(&realify(&a.apply(x)));
                let m = q * a.matrix() + a.matrix().adjoint() * q;
                let rhs = x.dotc(&(&m * x)).re;
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_field_core_lies_in_delta_and_is_invariant() {
        let p = ScenarioParams::default();
        for sys in [build_single_qubit(&p).unwrap(), build_two_qubit(&p).unwrap()] {
            let core = linear_field_core(&sys, &sys.generators(), &[], TOL).unwrap();
            let closure = ObservationClosure::new(&sys, 10_000, TOL).unwrap();
            let xi = StateVector::random(&sys.space, &mut rng(2));
            let res = open_result(&closure, &xi, TOL);
            for b in &core {
                assert!(res.delta.residual(&eval_field(b, &xi).unwrap().components) < 1e-8);
                for a in sys.generators() {
                    let v = eval_field(&bracket_linear_fields(b, &a).unwrap(), &xi)
                        .unwrap()
                        .components;
                    let rv = realify(&v);
                    for w in &res.omega.realized_covectors {
                        assert!(w.dot(&rv).abs() < 1e-8 * (1.0 + rv.norm() * w.norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn closed_loop_closure_examples() {
        let p = ScenarioParams::default();
        let two = build_two_qubit(&p).unwrap();
        let xi = StateVector::random(&two.space, &mut rng(4));
        let open = omega_closure_open(&two, &xi, 10_000, TOL).unwrap();
        let closed = omega_closure_closed(&two, &[], &xi, ClosedLoopOptions::default(), TOL).unwrap();
        assert_eq!(open.delta.dim(), closed.delta.dim());
        assert!(open.delta.containment_residual(&closed.delta) < 1e-8);

        let r = build_restructured(&p, 5).unwrap();
        let xi = StateVector::random(&r.space, &mut rng(6));
        let res = omega_closure_closed(&r, &r.controls, &xi, ClosedLoopOptions::default(), TOL).unwrap();
        assert_eq!(res.rounds.len(), 1);
        assert_eq!(res.rounds[0].intersection_dim, 0);
        let k = kernel_dy(&xi, &r.output_op, TOL);
        assert_eq!(res.delta.dim(), k.dim());
        assert!(k.containment_residual(&res.delta) < 1e-9);
    }

    #[test]
    fn controlled_invariance_examples() {
        let p = ScenarioParams::default();
        let r = build_restructured(&p, 5).unwrap();
        let xi = StateVector::random(&r.space, &mut rng(8));
        let delta = DistributionBasis::from_linear_fields(&xi, core::slice::from_ref(&r.interaction), TOL).unwrap();
        assert!(
            check_controlled_invariance(&delta, &r, &r.controls, BracketScope::Controls, TOL)
                .unwrap()
                .passed
        );

        let two = build_two_qubit(&p).unwrap();
        let xi = StateVector::random(&two.space, &mut rng(8));
        let delta = DistributionBasis::from_linear_fields(&xi, core::slice::from_ref(&two.interaction), TOL).unwrap();
        let v = check_controlled_invariance(&delta, &two, &two.controls, BracketScope::Controls, TOL).unwrap();
        assert!(!v.passed);
        assert!(v.witness.unwrap().description.starts_with("[K[sx(q1)]"));

        let empty = DistributionBasis::from_linear_fields(&xi, &[], TOL).unwrap();
        assert!(
            check_controlled_invariance(&empty, &two, &two.controls, BracketScope::ControlsAndDrift, TOL)
                .unwrap()
                .passed
        );
    }
}
