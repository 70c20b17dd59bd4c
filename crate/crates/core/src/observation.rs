//! Operator-level decouplability conditions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::algebra::{commutator, commutator_mat, lie_closure, HilbertSpace, Operator};
use crate::error::{Error, Result};
use crate::linalg::{c, fro, lstsq, realify_mat, CMat, CVec, OrthoSpan, RMat};
use crate::models::ControlSystem;

/// Real span of operators with an orthonormal realified shadow used for
/// membership tests.
#[derive(Clone, Debug)]
pub struct OperatorSpan {
    pub space: HilbertSpace,
    pub basis: Vec<Operator>,
    pub labels: Vec<String>,
    pub closed: bool,
    shadow: OrthoSpan,
    tol: f64,
}

impl OperatorSpan {
    pub fn new(space: &HilbertSpace, tol: f64) -> Self {
        let n = space.total_dim();
        OperatorSpan {
            space: space.clone(),
            basis: Vec::new(),
            labels: Vec::new(),
            closed: false,
            shadow: OrthoSpan::new(2 * n * n),
            tol,
        }
    }

    pub fn from_operators(space: &HilbertSpace, ops: &[Operator], tol: f64) -> Self {
        let mut s = Self::new(space, tol);
        for (k, op) in ops.iter().enumerate() {
            s.try_add(op.clone(), format!("op{k}"));
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_full(&self) -> bool {
        self.shadow.dim() == self.shadow.ambient()
    }

    pub fn try_add(&mut self, op: Operator, label: String) -> bool {
        if self.shadow.try_add(realify_mat(op.matrix()).as_slice(), self.tol) {
            self.basis.push(op);
            self.labels.push(label);
            true
        } else {
            false
        }
    }

    /// Adds each operator in turn when it is independent of the span so far.
    pub fn try_add_batch(&mut self, ops: Vec<(Operator, String)>) -> usize {
        if ops.is_empty() {
            return 0;
        }
        let n = self.space.total_dim();
        let mut m = RMat::zeros(2 * n * n, ops.len());
        for (j, (op, _)) in ops.iter().enumerate() {
            m.set_column(j, &realify_mat(op.matrix()));
        }
        let added = self.shadow.try_add_batch(&m, self.tol);
        let mut count = 0;
        for ((op, label), keep) in ops.into_iter().zip(added) {
            if keep {
                self.basis.push(op);
                self.labels.push(label);
                count += 1;
            }
        }
        count
    }

    /// [`OperatorSpan::residual`] of each operator.
    pub fn residuals(&self, ops: &[Operator]) -> Vec<f64> {
        let n = self.space.total_dim();
        let mut m = RMat::zeros(2 * n * n, ops.len());
        for (j, op) in ops.iter().enumerate() {
            m.set_column(j, &realify_mat(op.matrix()));
        }
        self.shadow.residual_batch(&m)
    }

    /// Relative least-squares residual of `op` against the span.
    pub fn residual(&self, op: &Operator) -> f64 {
        self.shadow.residual(realify_mat(op.matrix()).as_slice())
    }

    pub fn contains(&self, op: &Operator) -> bool {
        self.residual(op) <= self.tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosureOrder {
    ControlsFirst,
    DriftFirst,
}

/// Adds brackets `[A, X]` for every `A` in `gens` until the span is stable.
/// `*start` marks the first element not yet bracketed with `gens`; elements
/// before it are never revisited.
fn ad_close(span: &mut OperatorSpan, gens: &[(String, Operator)], start: &mut usize, max_dim: usize) -> Result<bool> {
    const CHUNK: usize = 16;
    let mut grew = false;
    while *start < span.dim() {
        if span.is_full() {
            *start = span.dim();
            break;
        }
        let end = (*start + CHUNK).min(span.dim());
        let mut batch = Vec::with_capacity((end - *start) * gens.len());
        for k in *start..end {
            for (name, a) in gens {
                batch.push((commutator(a, &span.basis[k])?, format!("ad[{name}] {}", span.labels[k])));
            }
        }
        *start = end;
        if span.try_add_batch(batch) > 0 {
            grew = true;
            if span.dim() > max_dim {
                return Err(Error::ClosureBlowup { max_dim });
            }
        }
    }
    Ok(grew)
}

/// The span `C̃` generated from the output operator by alternating
/// ad-closures under the controls and the drift.
pub fn build_c_tilde(sys: &ControlSystem, max_dim: usize, order: ClosureOrder, tol: f64) -> Result<OperatorSpan> {
    let mut span = OperatorSpan::new(&sys.space, tol);
    span.try_add(sys.output_op.clone(), "C".to_string());
    let controls: Vec<(String, Operator)> = sys
        .control_labels
        .iter()
        .cloned()
        .zip(sys.controls.iter().cloned())
        .collect();
    let drift = alloc::vec![("drift".to_string(), sys.drift.clone())];
    let (first, second) = match order {
        ClosureOrder::ControlsFirst => (&controls, &drift),
        ClosureOrder::DriftFirst => (&drift, &controls),
    };
    let (mut s1, mut s2) = (0, 0);
    loop {
        let a = ad_close(&mut span, first, &mut s1, max_dim)?;
        let b = ad_close(&mut span, second, &mut s2, max_dim)?;
        if !a && !b {
            break;
        }
    }
    span.closed = true;
    Ok(span)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub description: String,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub condition: String,
    pub passed: bool,
    pub witness: Option<Witness>,
    /// Largest residual examined; the witness magnitude on failure.
    pub residual: f64,
}

impl Verdict {
    fn pass(condition: &str, residual: f64) -> Self {
        Verdict {
            condition: condition.to_string(),
            passed: true,
            witness: None,
            residual,
        }
    }

    fn fail(condition: &str, description: String, magnitude: f64) -> Self {
        Verdict {
            condition: condition.to_string(),
            passed: false,
            witness: Some(Witness { description, magnitude }),
            residual: magnitude,
        }
    }
}

fn rel_commutator_norm(a: &Operator, b: &Operator) -> Result<f64> {
    let scale = (a.norm() * b.norm()).max(f64::MIN_POSITIVE);
    Ok(commutator(a, b)?.norm() / scale)
}

/// Every element of `C̃` commutes with the interaction.
pub fn check_open_loop(sys: &ControlSystem, c_tilde: &OperatorSpan, tol: f64) -> Result<Verdict> {
    let cond = "[C~, H_SB] = 0";
    if sys.interaction.norm() == 0.0 {
        return Ok(Verdict::pass(cond, 0.0));
    }
    let mut worst = 0.0f64;
    for (op, label) in c_tilde.basis.iter().zip(&c_tilde.labels) {
        let r = rel_commutator_norm(op, &sys.interaction)?;
        if r > tol {
            return Ok(Verdict::fail(cond, format!("[{label}, H_SB] != 0"), r));
        }
        worst = worst.max(r);
    }
    Ok(Verdict::pass(cond, worst))
}

/// `[C, H_SB] = 0` and `[C̃, H_SB] ⊂ C̃`.
pub fn check_closed_loop_necessary(sys: &ControlSystem, c_tilde: &OperatorSpan, tol: f64) -> Result<Verdict> {
    let cond = "[C, H_SB] = 0 and [C~, H_SB] in C~";
    if sys.interaction.norm() == 0.0 {
        return Ok(Verdict::pass(cond, 0.0));
    }
    let r = rel_commutator_norm(&sys.output_op, &sys.interaction)?;
    if r > tol {
        return Ok(Verdict::fail(cond, "[C, H_SB] != 0".to_string(), r));
    }
    let mut worst = r;
    let brackets: Vec<Operator> = c_tilde
        .basis
        .iter()
        .map(|op| commutator(op, &sys.interaction))
        .collect::<Result<_>>()?;
    let residuals = c_tilde.residuals(&brackets);
    for (label, res) in c_tilde.labels.iter().zip(residuals) {
        if res > tol {
            return Ok(Verdict::fail(cond, format!("[{label}, H_SB] not in C~"), res));
        }
        worst = worst.max(res);
    }
    Ok(Verdict::pass(cond, worst))
}

/// Which brackets the control-algebra lemma examines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BracketScope {
    /// Brackets with the control algebra only.
    Controls,
    /// Brackets with the control algebra and with `ad^j_{A_i} A_0`.
    ControlsAndDrift,
}

/// `[Δ, 𝒢] ⊂ Δ ⊕ 𝒢` and, in the wider scope, `[Δ, 𝒞] ⊂ Δ ⊕ 𝒢`.
pub fn check_control_algebra(
    sys: &ControlSystem,
    delta: &[Operator],
    scope: BracketScope,
    max_dim: usize,
    tol: f64,
) -> Result<Verdict> {
    let cond = match scope {
        BracketScope::Controls => "[Delta, G] in Delta + G",
        BracketScope::ControlsAndDrift => "[Delta, G] and [Delta, ad^j K_0] in Delta + G",
    };
    let algebra = lie_closure(&sys.controls, max_dim, tol)?;
    let mut target = OperatorSpan::from_operators(&sys.space, delta, tol);
    for g in &algebra {
        target.try_add(g.clone(), String::new());
    }
    let mut probes: Vec<(String, Operator)> = algebra
        .iter()
        .enumerate()
        .map(|(k, g)| (format!("G[{k}]"), g.clone()))
        .collect();
    if scope == BracketScope::ControlsAndDrift {
        let mut drift_terms = OperatorSpan::new(&sys.space, tol);
        drift_terms.try_add(sys.drift.clone(), "K_0".to_string());
        for (a, name) in sys.controls.iter().zip(&sys.control_labels) {
            let mut cur = sys.drift.clone();
            let mut label = "K_0".to_string();
            loop {
                cur = commutator(a, &cur)?;
                label = format!("ad[{name}] {label}");
                if !drift_terms.try_add(cur.clone(), label.clone()) {
                    break;
                }
            }
        }
        probes.extend(drift_terms.labels.into_iter().zip(drift_terms.basis));
    }
    let mut worst = 0.0f64;
    for (k, d) in delta.iter().enumerate() {
        for (name, p) in &probes {
            let b = commutator(d, p)?;
            let res = target.residual(&b);
            if res > tol {
                return Ok(Verdict::fail(
                    cond,
                    format!("[Delta[{k}], {name}] not in Delta + G"),
                    res,
                ));
            }
            worst = worst.max(res);
        }
    }
    Ok(Verdict::pass(cond, worst))
}

/// Operator form of the feedback conditions `K_I ∈ Δ ⊂ ker(dy)` and
/// `[K_I, K_i] ∈ Δ + G` for linear-field `Δ`: a linear field lies in
/// `ker(dy)` identically exactly when its operator commutes with `C`, so the
/// test is `[C, H_SB] = 0` and `[C, [H_SB, H_i] − g_i] = 0` for some `g_i` in
/// the control span.
pub fn check_interaction_brackets(sys: &ControlSystem, tol: f64) -> Result<Verdict> {
    let cond = "[H_SB, H_i] in comm(C) + G";
    let a_i = &sys.interaction;
    if a_i.norm() == 0.0 {
        return Ok(Verdict::pass(cond, 0.0));
    }
    let cm = sys.output_op.matrix();
    let with_c = |m: &CMat| commutator_mat(cm, m);
    let r = fro(&with_c(a_i.matrix())) / (fro(cm) * a_i.norm()).max(f64::MIN_POSITIVE);
    if r > tol {
        return Ok(Verdict::fail(cond, "[C, H_SB] != 0".to_string(), r));
    }
    let mut worst = r;
    let n = sys.dim();
    let mut g = RMat::zeros(2 * n * n, sys.controls.len());
    for (j, a) in sys.controls.iter().enumerate() {
        g.set_column(j, &realify_mat(&with_c(a.matrix())));
    }
    for (a, label) in sys.controls.iter().zip(&sys.control_labels) {
        let b = commutator_mat(a_i.matrix(), a.matrix());
        let target = realify_mat(&with_c(&b));
        let scale = (fro(cm) * fro(&b)).max(f64::MIN_POSITIVE);
        if target.norm() <= tol * scale {
            continue;
        }
        let (_, rel) = lstsq(&g, &target, tol);
        if rel > tol {
            return Ok(Verdict::fail(cond, format!("[H_SB, {label}] not in comm(C) + G"), rel));
        }
        worst = worst.max(rel);
    }
    Ok(Verdict::pass(cond, worst))
}

/// Collective-dephasing DFS test: the interaction annihilates every
/// `s ⊗ |k⟩_env`. The subspace vectors live on all factors except `env`.
pub fn verify_dfs(sys: &ControlSystem, subspace: &[CVec], tol: f64) -> Result<Verdict> {
    let env = sys.space.factor_dim("env")?;
    let sys_dim = sys.dim() / env;
    for (i, a) in subspace.iter().enumerate() {
        if a.len() != sys_dim {
            return Err(Error::DimensionMismatch {
                expected: sys_dim,
                found: a.len(),
            });
        }
        for (j, b) in subspace.iter().enumerate() {
            let ip = a.dotc(b);
            let want = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
            if (ip - want).norm() > 1e-9 {
                return Err(Error::NotOrthonormal);
            }
        }
    }
    let cond = "H_SB annihilates subspace (x) env";
    let mut worst = 0.0f64;
    for (i, s) in subspace.iter().enumerate() {
        for k in 0..env {
            let mut e = CVec::zeros(env);
            e[k] = c(1.0, 0.0);
            let v = s.kronecker(&e);
            let r = sys.interaction.apply(&v).norm();
            if r > tol {
                return Ok(Verdict::fail(cond, format!("H_SB (s{i} (x) |{k}>) != 0"), r));
            }
            worst = worst.max(r);
        }
    }
    Ok(Verdict::pass(cond, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{embed_product, pauli};
    use crate::models::*;

    const TOL: f64 = 1e-9;

    fn params() -> ScenarioParams {
        ScenarioParams::default()
    }

    #[test]
    fn c_tilde_is_bracket_stable() {
        for sys in [
            build_single_qubit(&params()).unwrap(),
            build_two_qubit(&params()).unwrap(),
        ] {
            let span = build_c_tilde(&sys, 10_000, ClosureOrder::ControlsFirst, TOL).unwrap();
            for a in sys.generators() {
                for x in &span.basis {
                    assert!(span.residual(&commutator(&a, x).unwrap()) < 1e-8);
                }
            }
            let other = build_c_tilde(&sys, 10_000, ClosureOrder::DriftFirst, TOL).unwrap();
            assert_eq!(other.dim(), span.dim());
        }
    }

    #[test]
    fn case_one_and_two_verdicts() {
        let single = build_single_qubit(&params()).unwrap();
        let ct = build_c_tilde(&single, 10_000, ClosureOrder::ControlsFirst, TOL).unwrap();
        assert!(!check_open_loop(&single, &ct, TOL).unwrap().passed);
        let v = check_closed_loop_necessary(&single, &ct, TOL).unwrap();
        assert_eq!(v.witness.unwrap().description, "[C, H_SB] != 0");

        let two = build_two_qubit(&params()).unwrap();
        let ct = build_c_tilde(&two, 10_000, ClosureOrder::ControlsFirst, TOL).unwrap();
        assert!(!check_open_loop(&two, &ct, TOL).unwrap().passed);
        let v = check_closed_loop_necessary(&two, &ct, TOL).unwrap();
        assert!(!v.passed);
        assert!(v.witness.unwrap().description.ends_with("not in C~"));
    }

    #[test]
    fn zero_interaction_is_open_loop_decoupled() {
        let mut p = params();
        p.g = c(0.0, 0.0);
        for sys in [build_single_qubit(&p).unwrap(), build_two_qubit(&p).unwrap()] {
            let ct = build_c_tilde(&sys, 10_000, ClosureOrder::ControlsFirst, TOL).unwrap();
            assert!(check_open_loop(&sys, &ct, TOL).unwrap().passed);
            assert!(check_closed_loop_necessary(&sys, &ct, TOL).unwrap().passed);
        }
    }

    #[test]
    fn control_algebra_lemma() {
        let r = build_restructured(&params(), 2).unwrap();
        let v = check_control_algebra(&r, core::slice::from_ref(&r.interaction), BracketScope::Controls, 2000, TOL).unwrap();
        assert!(v.passed);
        let single = build_single_qubit(&params()).unwrap();
        // −iσ_z ∈ 𝒢 = su(2) passes; the interaction −iσ_z⊗F does not commute with C and fails
        let z = Operator::hermitian(
            single.space.clone(),
            embed_product(&[("q", &pauli::z())], &single.space).unwrap(),
        )
        .unwrap()
        .to_generator()
        .unwrap();
        assert!(
            check_control_algebra(&single, &[z], BracketScope::Controls, 2000, TOL)
                .unwrap()
                .passed
        );
        let v = check_control_algebra(
            &single,
            core::slice::from_ref(&single.interaction),
            BracketScope::Controls,
            2000,
            TOL,
        )
        .unwrap();
        assert!(!v.passed);
        assert!(
            check_control_algebra(&single, &[], BracketScope::ControlsAndDrift, 2000, TOL)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn dfs_examples() {
        let two = build_two_qubit(&params()).unwrap();
        let e = |i: usize| {
            let mut v = CVec::zeros(4);
            v[i] = c(1.0, 0.0);
            v
        };
        assert!(verify_dfs(&two, &[e(1), e(2)], TOL).unwrap().passed);
        assert!(!verify_dfs(&two, &[e(0), e(3)], TOL).unwrap().passed);
        assert!(matches!(
            verify_dfs(&two, &[e(1), e(1)], TOL),
            Err(Error::NotOrthonormal)
        ));
        let mut p = params();
        p.g = c(0.0, 0.0);
        let free = build_two_qubit(&p).unwrap();
        assert!(verify_dfs(&free, &[e(0), e(3)], TOL).unwrap().passed);
    }
}
