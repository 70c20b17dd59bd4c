//! Commuting frames and the state-feedback law `u = α(ξ) + β(ξ) v`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;

use crate::algebra::{commutator_mat, linear_combination, Operator, OperatorKind, StateVector};
use crate::error::{Error, Result};
use crate::linalg::{
    c, condition_number, fro, lstsq, null_space, rank, realify, realify_mat, CMat, CVec, OrthoSpan, RMat, RVec, I,
};
use crate::models::ControlSystem;
use crate::tangent::{skew_from_coords, TangentVector};

/// Independence threshold used when greedily selecting frame vectors.
/// Looser than the rank tolerance so that nearly dependent candidates do
/// not make `d` ill-conditioned.
pub const FRAME_SELECT_TOL: f64 = 1e-3;

/// Real basis of the skew-hermitian operators commuting with `a`, read off
/// the kernel of the realified map `X ↦ [A, X]`.
pub fn commutant_basis(a: &Operator, tol: f64) -> Result<Vec<Operator>> {
    if a.kind() != OperatorKind::SkewHermitian {
        return Err(Error::WrongKind("skew-hermitian"));
    }
    let n = a.dim();
    let m = n * n;
    let mut map = RMat::zeros(2 * m, m);
    let mut e = alloc::vec![0.0; m];
    for k in 0..m {
        e[k] = 1.0;
        let x = skew_from_coords(&e, n);
        map.set_column(k, &realify_mat(&commutator_mat(a.matrix(), &x)));
        e[k] = 0.0;
    }
    let ker = null_space(&map, tol);
    (0..ker.ncols())
        .map(|j| {
            let coords: Vec<f64> = ker.column(j).iter().cloned().collect();
            Operator::skew(a.space().clone(), skew_from_coords(&coords, n))
        })
        .collect()
}

/// Orthonormal eigenvectors of the hermitian `H = iA`, one matrix per
/// eigenvalue cluster (eigenvalues closer than `tol · max(1, ‖H‖)` are
/// grouped), in increasing eigenvalue order.
pub fn spectral_blocks(a: &Operator, tol: f64) -> Vec<CMat> {
    let h = a.matrix() * I;
    let h = (&h + h.adjoint()) * c(0.5, 0.0);
    let scale = fro(&h).max(1.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for k in order {
        let lam = eig.eigenvalues[k];
        if groups.is_empty() || lam - last > tol * scale {
            groups.push(Vec::new());
        }
        last = lam;
        groups.last_mut().expect("nonempty").push(k);
    }
    groups
        .iter()
        .map(|g| eig.eigenvectors.select_columns(g.iter()))
        .collect()
}

/// Spectral projectors of `H = iA`, see [`spectral_blocks`].
pub fn spectral_projectors(a: &Operator, tol: f64) -> Vec<CMat> {
    spectral_blocks(a, tol).iter().map(|e| e * e.adjoint()).collect()
}

/// Basis of the skew commutant adapted to the eigenblocks of `A`. Within a
/// block with eigenvectors `e_1, …, e_m` the "star" elements
/// `−i(e_1e_k† + e_ke_1†)`, `e_1e_k† − e_ke_1†` and `−i e_1e_1†` come first;
/// their fields are independent wherever `⟨e_1|ξ⟩ ≠ 0`. The remaining
/// elements of every block follow after all stars.
pub fn commutant_star_basis(a: &Operator, tol: f64) -> Result<Vec<Operator>> {
    let blocks = spectral_blocks(a, tol);
    let pair = |e: &CMat, j: usize, k: usize| -> [CMat; 2] {
        let x = e.column(j) * e.column(k).adjoint();
        [(&x + x.adjoint()) * (-I), &x - x.adjoint()]
    };
    let mut stars = Vec::new();
    let mut rest = Vec::new();
    for e in &blocks {
        let m = e.ncols();
        let diag = |k: usize| (e.column(k) * e.column(k).adjoint()) * (-I);
        stars.push(diag(0));
        for k in 1..m {
            stars.extend(pair(e, 0, k));
            rest.push(diag(k));
            for j in 1..k {
                rest.extend(pair(e, j, k));
            }
        }
    }
    stars
        .into_iter()
        .chain(rest)
        .map(|m| Operator::skew(a.space().clone(), m))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStrategy {
    /// Linear fields of the skew commutant of `A_I` only.
    Commutant,
    /// The commutant plus the weight-exchange fields
    /// `h_b(ξ) P_a ξ − h_a(ξ) P_b ξ` between spectral blocks of `A_I`,
    /// where `h_p(ξ) = ⟨ξ|P_p|ξ⟩`. These commute with `K_I` and restore the
    /// directions that move weight between blocks.
    CommutantWithBlockWeights,
}

/// Source of one frame vector: a linear field `Vξ` with `[V, A_I] = 0`
/// plus a combination of block weight-exchange fields.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub linear: Option<Operator>,
    pub weights: Vec<(usize, usize, f64)>,
}

impl FrameField {
    fn linear(op: Operator) -> Self {
        FrameField {
            linear: Some(op),
            weights: Vec::new(),
        }
    }

    fn combine(parts: &[FrameField], coeffs: &[f64]) -> Self {
        let mut linear: Option<Operator> = None;
        let mut weights = Vec::new();
        for (f, &a) in parts.iter().zip(coeffs) {
            if let Some(op) = &f.linear {
                let t = op.scale(a);
                linear = Some(match linear {
                    None => t,
                    Some(l) => l.add(&t).expect("same space"),
                });
            }
            weights.extend(f.weights.iter().map(|&(i, j, w)| (i, j, w * a)));
        }
        FrameField { linear, weights }
    }
}

/// Frame operators precomputed from the interaction.
#[derive(Clone, Debug)]
pub struct FrameSource {
    pub interaction: Operator,
    pub commutant: Vec<Operator>,
    pub projectors: Vec<CMat>,
    pub strategy: FrameStrategy,
}

impl FrameSource {
    pub fn new(interaction: &Operator, strategy: FrameStrategy, tol: f64) -> Result<Self> {
        // Eigenvalue clusters need a looser threshold than span membership.
        let cluster_tol = tol.max(1e-8);
        let commutant = commutant_star_basis(interaction, cluster_tol)?;
        let projectors = spectral_projectors(interaction, cluster_tol);
        Ok(FrameSource {
            interaction: interaction.clone(),
            commutant,
            projectors,
            strategy,
        })
    }

    fn candidates(&self) -> Vec<FrameField> {
        let mut v: Vec<FrameField> = self.commutant.iter().cloned().map(FrameField::linear).collect();
        if self.strategy == FrameStrategy::CommutantWithBlockWeights {
            for b in 1..self.projectors.len() {
                v.push(FrameField {
                    linear: None,
                    weights: alloc::vec![(0, b, 1.0)],
                });
            }
        }
        v
    }

    fn eval(&self, f: &FrameField, x: &CVec) -> CVec {
        let mut out = match &f.linear {
            Some(op) => op.apply(x),
            None => CVec::zeros(x.len()),
        };
        for &(a, b, w) in &f.weights {
            let pa = &self.projectors[a] * x;
            let pb = &self.projectors[b] * x;
            let ha = x.dotc(&pa).re;
            let hb = x.dotc(&pb).re;
            out += (pa * c(hb, 0.0) - pb * c(ha, 0.0)) * c(w, 0.0);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CommutingFrame {
    pub base: StateVector,
    pub vectors: Vec<TangentVector>,
    pub fields: Vec<FrameField>,
    pub rank: usize,
    /// Candidate indices behind `v_2, …` (`None` for combinations of
    /// candidates outside `G`).
    pub selected: Vec<Option<usize>>,
}

impl CommutingFrame {
    /// Operators `V_j` behind the linear frame vectors (`V_1 = A_I`).
    pub fn generating_ops(&self) -> Vec<Operator> {
        self.fields
            .iter()
            .filter(|f| f.weights.is_empty())
            .filter_map(|f| f.linear.clone())
            .collect()
    }

    /// Largest `‖[V_i, V_j]‖` over pairs of linear generating operators.
    pub fn max_pairwise_commutator(&self) -> f64 {
        let ops = self.generating_ops();
        let mut worst = 0.0f64;
        for i in 0..ops.len() {
            for j in i + 1..ops.len() {
                worst = worst.max(fro(&commutator_mat(ops[i].matrix(), ops[j].matrix())));
            }
        }
        worst
    }

    pub fn realified(&self) -> RMat {
        let n = self.base.dim();
        let mut m = RMat::zeros(2 * n, self.vectors.len());
        for (j, v) in self.vectors.iter().enumerate() {
            m.set_column(j, &realify(&v.components));
        }
        m
    }
}

fn control_matrix(sys: &ControlSystem, x: &CVec) -> RMat {
    let mut m = RMat::zeros(2 * x.len(), sys.controls.len());
    for (j, a) in sys.controls.iter().enumerate() {
        m.set_column(j, &realify(&a.apply(x)));
    }
    m
}

/// Greedy frame `v_1 = K_I(ξ), v_2, …` drawn from `source`, keeping only
/// vectors that lie in the control span `G(ξ)`. Succeeds once the frame
/// rank reaches `dim G(ξ)`.
pub fn build_frame_with(
    sys: &ControlSystem,
    source: &FrameSource,
    xi: &StateVector,
    tol: f64,
) -> Result<CommutingFrame> {
    if xi.space() != &sys.space {
        return Err(Error::SpaceMismatch);
    }
    let x = xi.amplitudes();
    let k_i = source.interaction.apply(x);
    if k_i.norm() <= tol * source.interaction.norm().max(crate::linalg::SCALE_FLOOR) {
        return Err(Error::InteractionVanishes);
    }
    let kmat = control_matrix(sys, x);
    let mut g = OrthoSpan::new(2 * x.len());
    for j in 0..kmat.ncols() {
        g.try_add(kmat.column(j).as_slice(), tol);
    }
    let required = g.dim();
    let ri = g.residual(realify(&k_i).as_slice());
    if ri > tol.max(1e-8) {
        return Err(Error::FrameNotExpressible(ri));
    }
    let mut span = OrthoSpan::new(2 * x.len());
    span.try_add(realify(&k_i).as_slice(), FRAME_SELECT_TOL);
    let mut vectors = alloc::vec![TangentVector { components: k_i }];
    let mut fields = alloc::vec![FrameField::linear(source.interaction.clone())];
    let mut outside = Vec::new();
    let mut selected = Vec::new();
    for (idx, f) in source.candidates().into_iter().enumerate() {
        if span.dim() >= required {
            break;
        }
        let v = source.eval(&f, x);
        let rv = realify(&v);
        if g.residual(rv.as_slice()) > tol.max(1e-8) {
            outside.push((f, rv));
            continue;
        }
        if span.try_add(rv.as_slice(), FRAME_SELECT_TOL) {
            vectors.push(TangentVector { components: v });
            fields.push(f);
            selected.push(Some(idx));
        }
    }
    // Candidates outside G may still combine into vectors inside it.
    if span.dim() < required && !outside.is_empty() {
        let gmat = g.to_matrix();
        let mut w = RMat::zeros(2 * x.len(), outside.len());
        for (k, (_, rv)) in outside.iter().enumerate() {
            w.set_column(k, rv);
        }
        let off = &w - &gmat * (gmat.transpose() * &w);
        let combos = null_space(&off, tol);
        let parts: Vec<FrameField> = outside.into_iter().map(|(f, _)| f).collect();
        for k in 0..combos.ncols() {
            if span.dim() >= required {
                break;
            }
            let coeffs: Vec<f64> = combos.column(k).iter().cloned().collect();
            let f = FrameField::combine(&parts, &coeffs);
            let v = source.eval(&f, x);
            if span.try_add(realify(&v).as_slice(), FRAME_SELECT_TOL) {
                vectors.push(TangentVector { components: v });
                fields.push(f);
                selected.push(None);
            }
        }
    }
    let rank = span.dim();
    if rank < required {
        return Err(Error::RankDeficiency {
            achieved: rank,
            required,
        });
    }
    let (vectors, fields) = orthonormalize(&vectors, &fields);
    Ok(CommutingFrame {
        base: xi.clone(),
        vectors,
        fields,
        rank,
        selected,
    })
}

/// Gram–Schmidt on `v_2, …` against `v_1` and each other, keeping `v_1`.
/// The coefficients depend only on inner products of the frame vectors,
/// which the flow of `A_I` preserves, so the new vectors are again fields
/// commuting with `K_I`; the decomposition of other fields along `v_1`
/// becomes an orthogonal projection.
fn orthonormalize(vectors: &[TangentVector], fields: &[FrameField]) -> (Vec<TangentVector>, Vec<FrameField>) {
    let raw: Vec<RVec> = vectors.iter().map(|v| realify(&v.components)).collect();
    let r = raw.len();
    let mut q: Vec<RVec> = Vec::with_capacity(r);
    let mut coeffs: Vec<RVec> = Vec::with_capacity(r);
    let n0 = raw[0].norm();
    q.push(&raw[0] / n0);
    coeffs.push(RVec::from_fn(r, |i, _| if i == 0 { 1.0 / n0 } else { 0.0 }));
    let mut out_v = alloc::vec![vectors[0].clone()];
    let mut out_f = alloc::vec![fields[0].clone()];
    for j in 1..r {
        let mut w = raw[j].clone();
        let mut a = RVec::zeros(r);
        a[j] = 1.0;
        for _ in 0..2 {
            for (qi, ci) in q.iter().zip(&coeffs) {
                let p = qi.dot(&w);
                w -= qi * p;
                a -= ci * p;
            }
        }
        let nw = w.norm();
        w /= nw;
        a /= nw;
        let combined = FrameField::combine(fields, a.as_slice());
        out_v.push(TangentVector {
            components: crate::linalg::unrealify(&w),
        });
        out_f.push(combined);
        q.push(w);
        coeffs.push(a);
    }
    (out_v, out_f)
}

/// [`build_frame_with`] using the plain commutant strategy.
pub fn build_frame(sys: &ControlSystem, xi: &StateVector, tol: f64) -> Result<CommutingFrame> {
    let source = FrameSource::new(&sys.interaction, FrameStrategy::Commutant, tol)?;
    build_frame_with(sys, &source, xi, tol)
}

/// How the last row of the shift matrix `J` is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaMode {
    /// `J` exactly as the shift matrix, last row zero (β singular).
    Literal,
    /// Last row `e_1`, so `K̃_r = v_1 ∈ Δ` and β is invertible.
    Regularized,
}

#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    pub base: StateVector,
    pub alpha: RVec,
    pub beta: RMat,
    pub alpha_tilde: RVec,
    /// Frame coordinates of the drift field.
    pub drift_coords: RVec,
    pub d_matrix: RMat,
    pub s_matrix: RMat,
    pub j_matrix: RMat,
    pub mode: BetaMode,
    pub frame_rank: usize,
    pub cond_d: f64,
    /// Relative residual of expressing the frame over the controls.
    pub expression_residual: f64,
    /// Candidate indices the frame was built from, see [`CommutingFrame`].
    pub selected: Vec<Option<usize>>,
}

impl FeedbackLaw {
    /// Whether `β` has full rank.
    pub fn beta_nonsingular(&self, tol: f64) -> bool {
        rank(&self.beta, tol) == self.beta.nrows()
    }

    /// Control values `α + βᵀ v`, i.e. `u_j = α_j + Σ_i v_i β_ij`.
    pub fn controls(&self, v_ext: &[f64]) -> Result<RVec> {
        let r = self.beta.nrows();
        if v_ext.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: v_ext.len(),
            });
        }
        Ok(&self.alpha + self.beta.transpose() * RVec::from_column_slice(v_ext))
    }
}

/// Shift matrix `J` of size `r`.
pub fn shift_matrix(r: usize, mode: BetaMode) -> RMat {
    let mut j = RMat::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        j[(i, i + 1)] = 1.0;
    }
    if mode == BetaMode::Regularized && r > 0 {
        j[(r - 1, 0)] = 1.0;
    }
    j
}

/// Feedback parameters at the frame's base point: `d` with
/// `v_j = Σ_i d_ji K_i`, `S = d⁻¹` with its first column zeroed, `β = J d`,
/// drift coordinates `K_0 = Σ c_j v_j`, `α̃_j = −c_{j+1}` and `α = α̃ β`.
pub fn synthesize(sys: &ControlSystem, frame: &CommutingFrame, mode: BetaMode, tol: f64) -> Result<FeedbackLaw> {
    let x = frame.base.amplitudes();
    let r = frame.rank;
    let m = sys.controls.len();
    let kmat = control_matrix(sys, x);
    let kr = rank(&kmat, tol);
    if kr < m {
        return Err(Error::RankDeficiency {
            achieved: kr,
            required: m,
        });
    }
    if r != m {
        return Err(Error::RankDeficiency {
            achieved: r,
            required: m,
        });
    }
    let mut d = RMat::zeros(r, r);
    let mut worst = 0.0f64;
    for (j, v) in frame.vectors.iter().enumerate() {
        let (sol, res) = lstsq(&kmat, &realify(&v.components), tol);
        worst = worst.max(res);
        d.set_row(j, &sol.transpose());
    }
    if worst > tol.max(1e-8) {
        return Err(Error::FrameNotExpressible(worst));
    }
    let cond_d = condition_number(&d);
    let inv = d.clone().try_inverse().ok_or(Error::RankDeficiency {
        achieved: rank(&d, tol),
        required: r,
    })?;
    let mut s = inv;
    s.column_mut(0).fill(0.0);
    let j = shift_matrix(r, mode);
    let beta = &j * &d;
    let vmat = frame.realified();
    let (coords, _) = lstsq(&vmat, &realify(&sys.drift.apply(x)), tol);
    let mut alpha_tilde = RVec::zeros(r);
    for k in 0..r.saturating_sub(1) {
        alpha_tilde[k] = -coords[k + 1];
    }
    let alpha = beta.transpose() * &alpha_tilde;
    Ok(FeedbackLaw {
        base: frame.base.clone(),
        alpha,
        beta,
        alpha_tilde,
        drift_coords: coords,
        d_matrix: d,
        s_matrix: s,
        j_matrix: j,
        mode,
        frame_rank: r,
        cond_d,
        expression_residual: worst,
        selected: frame.selected.clone(),
    })
}

/// `A_0 + Σ_j (α_j + Σ_i v_i β_ij) A_j`; the interaction is not included.
pub fn closed_loop_generator(sys: &ControlSystem, law: &FeedbackLaw, v_ext: &[f64]) -> Result<Operator> {
    let u = law.controls(v_ext)?;
    if u.len() != sys.controls.len() {
        return Err(Error::DimensionMismatch {
            expected: sys.controls.len(),
            found: u.len(),
        });
    }
    let eff = linear_combination(&sys.space, u.as_slice(), &sys.controls);
    sys.drift.add(&eff)
}

/// Frame source plus synthesis settings, reused across many states.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub source: FrameSource,
    pub mode: BetaMode,
    pub tol: f64,
}

impl Synthesizer {
    /// `design` supplies the interaction that defines `Δ = span{K_I}`.
    pub fn new(design: &ControlSystem, strategy: FrameStrategy, mode: BetaMode, tol: f64) -> Result<Self> {
        Ok(Synthesizer {
            source: FrameSource::new(&design.interaction, strategy, tol)?,
            mode,
            tol,
        })
    }

    pub fn frame(&self, sys: &ControlSystem, xi: &StateVector) -> Result<CommutingFrame> {
        build_frame_with(sys, &self.source, xi, self.tol)
    }

    pub fn law(&self, sys: &ControlSystem, xi: &StateVector) -> Result<FeedbackLaw> {
        let frame = self.frame(sys, xi)?;
        synthesize(sys, &frame, self.mode, self.tol)
    }
}

/// Human-readable summary of a frame's sources, for audits.
pub fn describe_fields(frame: &CommutingFrame) -> Vec<String> {
    frame
        .fields
        .iter()
        .enumerate()
        .map(|(k, f)| match (k, f.weights.is_empty()) {
            (0, _) => String::from("A_I"),
            (_, true) => format!("commutant[{k}]"),
            (_, false) => format!("weights[{k}]"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{pauli, HilbertSpace};
    use crate::models::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-9;

    #[test]
    fn commutant_of_sigma_z() {
        let sp = HilbertSpace::new(&[("q", 2)]).unwrap();
        let a = Operator::skew(sp.clone(), pauli::z() * c(0.0, -1.0)).unwrap();
        let basis = commutant_basis(&a, TOL).unwrap();
        assert_eq!(basis.len(), 2);
        for x in &basis {
            assert!(fro(&commutator_mat(x.matrix(), a.matrix())) < TOL);
            assert!(x.matrix()[(0, 1)].norm() < TOL);
        }
        let zero = Operator::zero(&sp).to_generator().unwrap();
        assert_eq!(commutant_basis(&zero, TOL).unwrap().len(), 4);
    }

    #[test]
    fn projectors_of_pair_interaction() {
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let p = spectral_projectors(&sys.interaction, 1e-8);
        assert_eq!(p.len(), 3);
        let sum = p.iter().fold(CMat::zeros(12, 12), |acc, m| acc + m);
        assert!(fro(&(sum - CMat::identity(12, 12))) < 1e-10);
        let ranks: Vec<f64> = p.iter().map(|m| m.trace().re).collect();
        assert!((ranks[1] - 8.0).abs() < 1e-9);
        assert_eq!(commutant_basis(&sys.interaction, TOL).unwrap().len(), 64 + 4 + 4);
    }

    #[test]
    fn star_basis_spans_the_commutant() {
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let a = &sys.interaction;
        let star = commutant_star_basis(a, 1e-8).unwrap();
        let kernel = commutant_basis(a, TOL).unwrap();
        assert_eq!(star.len(), kernel.len());
        let mut span = OrthoSpan::new(2 * 144);
        for op in &star {
            assert!(fro(&commutator_mat(a.matrix(), op.matrix())) < 1e-10);
            assert!(span.try_add(realify_mat(op.matrix()).as_slice(), 1e-8));
        }
        for op in &kernel {
            assert!(span.contains(realify_mat(op.matrix()).as_slice(), 1e-8));
        }
    }

    #[test]
    fn frame_rank_on_restructured_and_vanishing_interaction() {
        let p = ScenarioParams::default();
        let r = build_restructured(&p, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = StateVector::random(&r.space, &mut rng);
        assert!(build_frame(&r, &xi, TOL).is_err());

        // |00⟩ ⊗ |0⟩ is annihilated only if F|0⟩ = 0, which it is not; the
        // middle block (σ_z sum zero) is annihilated by the interaction.
        let mut v = CVec::zeros(12);
        v[3] = c(1.0, 0.0);
        let dfs = StateVector::new(r.space.clone(), v).unwrap();
        assert_eq!(build_frame(&r, &dfs, TOL).unwrap_err(), Error::InteractionVanishes);
    }

    #[test]
    fn full_frame_and_synthesis_on_fully_actuated() {
        let sys = build_fully_actuated(&ScenarioParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xi = StateVector::random(&sys.space, &mut rng);
        let plain = build_frame(&sys, &xi, TOL);
        assert_eq!(
            plain.unwrap_err(),
            Error::RankDeficiency {
                achieved: 21,
                required: 23
            }
        );

        let syn = Synthesizer::new(&sys, FrameStrategy::CommutantWithBlockWeights, BetaMode::Literal, TOL).unwrap();
        let frame = syn.frame(&sys, &xi).unwrap();
        assert_eq!(frame.rank, 23);
        assert!(frame.max_pairwise_commutator().is_finite());
        for op in frame.generating_ops() {
            assert!(fro(&commutator_mat(op.matrix(), sys.interaction.matrix())) < 1e-8);
        }
        let law = synthesize(&sys, &frame, BetaMode::Literal, TOL).unwrap();
        assert!((&law.beta - &law.j_matrix * &law.d_matrix).norm() < 1e-10);
        assert!(!law.beta_nonsingular(TOL));
        // β K = (v_2, …, v_r, 0)
        let x = xi.amplitudes();
        let kmat = control_matrix(&sys, x);
        let vmat = frame.realified();
        let lhs = &kmat * law.beta.transpose();
        for i in 0..22 {
            assert!((lhs.column(i) - vmat.column(i + 1)).norm() < 1e-8);
        }
        assert!(lhs.column(22).norm() < 1e-8);
        // closed-loop drift has no component along v_2..v_r
        let gen = closed_loop_generator(&sys, &law, &[0.0; 23]).unwrap();
        let (coords, res) = lstsq(&vmat, &realify(&gen.apply(x)), TOL);
        assert!(res < 1e-8);
        assert!(coords.rows(1, 22).norm() < 1e-8);

        let reg = synthesize(&sys, &frame, BetaMode::Regularized, TOL).unwrap();
        assert!(reg.beta_nonsingular(TOL));
    }

    #[test]
    fn two_by_two_toy() {
        // Controls −iσ_x ⊗ I and −iσ_z ⊗ σ_z on two qubits with interaction
        // −iσ_x ⊗ I: the frame is {K_I, (−iσ_z⊗σ_z)ξ} whenever the latter
        // commutes, here it does not, so use −iI⊗σ_z instead.
        let sp = HilbertSpace::new(&[("a", 2), ("b", 2)]).unwrap();
        let e = |m: &CMat, s: &str| crate::algebra::embed_product(&[(s, m)], &sp).unwrap();
        let ia = e(&pauli::x(), "a");
        let cz = e(&pauli::z(), "b");
        let sys = ControlSystem::from_hamiltonians(
            "toy",
            sp.clone(),
            CMat::zeros(4, 4),
            alloc::vec![("x".into(), ia.clone()), ("z".into(), cz.clone())],
            ia,
            CMat::zeros(4, 4),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xi = StateVector::random(&sp, &mut rng);
        let frame = build_frame(&sys, &xi, TOL).unwrap();
        assert_eq!(frame.rank, 2);
        let law = synthesize(&sys, &frame, BetaMode::Literal, TOL).unwrap();
        assert_eq!(law.j_matrix, RMat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!((law.d_matrix[(0, 0)] - 1.0).abs() < 1e-10 && law.d_matrix[(0, 1)].abs() < 1e-10);
        assert!((&law.beta - &law.j_matrix * &law.d_matrix).norm() < 1e-12);
    }

    #[test]
    fn closed_loop_generator_trivial_cases() {
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let law = FeedbackLaw {
            base: StateVector::basis(&sys.space, 0).unwrap(),
            alpha: RVec::zeros(4),
            beta: RMat::identity(4, 4),
            alpha_tilde: RVec::zeros(4),
            drift_coords: RVec::zeros(4),
            d_matrix: RMat::identity(4, 4),
            s_matrix: RMat::identity(4, 4),
            j_matrix: RMat::identity(4, 4),
            mode: BetaMode::Literal,
            frame_rank: 4,
            cond_d: 1.0,
            expression_residual: 0.0,
            selected: Vec::new(),
        };
        let g0 = closed_loop_generator(&sys, &law, &[0.0; 4]).unwrap();
        assert!(fro(&(g0.matrix() - sys.drift.matrix())) == 0.0);
        let v = [0.3, -1.0, 0.0, 2.0];
        let g = closed_loop_generator(&sys, &law, &v).unwrap();
        let expect = sys
            .drift
            .add(&linear_combination(&sys.space, &v, &sys.controls))
            .unwrap();
        assert!(fro(&(g.matrix() - expect.matrix())) < 1e-15);
    }
}
