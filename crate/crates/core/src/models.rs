//! Benchmark control systems and the coherence output.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::algebra::{embed_product, field_quadrature, number_operator, pauli, HilbertSpace, Operator, StateVector};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioParams {
    pub omega0: f64,
    pub omega_env: f64,
    pub g: C64,
    pub w: C64,
    pub j1: f64,
    pub j2: f64,
    pub n_env: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let g = c(0.1, 0.0);
        ScenarioParams {
            omega0: 1.0,
            omega_env: 1.0,
            g,
            w: g,
            j1: 1.0,
            j2: 1.0,
            n_env: 3,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_env < 2 {
            return Err(Error::EnvTooSmall(self.n_env));
        }
        let finite = [
            self.omega0,
            self.omega_env,
            self.g.re,
            self.g.im,
            self.w.re,
            self.w.im,
            self.j1,
            self.j2,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("parameters must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    SingleQubit,
    TwoQubit,
    Bait,
    Restructured { max_power: usize },
    FullyActuated,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SingleQubit => "single_qubit",
            Scenario::TwoQubit => "two_qubit",
            Scenario::Bait => "bait",
            Scenario::Restructured { .. } => "restructured",
            Scenario::FullyActuated => "fully_actuated",
        }
    }

    pub fn build(&self, p: &ScenarioParams) -> Result<ControlSystem> {
        match *self {
            Scenario::SingleQubit => build_single_qubit(p),
            Scenario::TwoQubit => build_two_qubit(p),
            Scenario::Bait => build_bait(p),
            Scenario::Restructured { max_power } => build_restructured(p, max_power),
            Scenario::FullyActuated => build_fully_actuated(p),
        }
    }
}

/// Bilinear system `ξ' = (A_0 + Σ u_j A_j + A_I) ξ` with output `⟨ξ|C|ξ⟩`.
/// Generators are stored skew-hermitian.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    pub space: HilbertSpace,
    pub drift: Operator,
    pub controls: Vec<Operator>,
    pub control_labels: Vec<String>,
    pub interaction: Operator,
    pub output_op: Operator,
    pub scenario: String,
}

impl ControlSystem {
    /// Assembles a system from hermitian Hamiltonians.
    pub fn from_hamiltonians(
        scenario: &str,
        space: HilbertSpace,
        drift: CMat,
        controls: Vec<(String, CMat)>,
        interaction: CMat,
        output: CMat,
    ) -> Result<Self> {
        let gen = |m: CMat| -> Result<Operator> { Operator::hermitian(space.clone(), m)?.to_generator() };
        let mut ops = Vec::new();
        let mut labels = Vec::new();
        for (l, m) in controls {
            ops.push(gen(m)?);
            labels.push(l);
        }
        Ok(ControlSystem {
            drift: gen(drift)?,
            controls: ops,
            control_labels: labels,
            interaction: gen(interaction)?,
            output_op: Operator::general(space.clone(), output),
            space,
            scenario: scenario.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    /// Drift followed by the controls.
    pub fn generators(&self) -> Vec<Operator> {
        let mut v = Vec::with_capacity(self.controls.len() + 1);
        v.push(self.drift.clone());
        v.extend(self.controls.iter().cloned());
        v
    }

    /// Copy with the interaction replaced by zero.
    pub fn without_interaction(&self) -> Self {
        let mut s = self.clone();
        s.interaction = Operator::zero(&self.space).to_generator().expect("zero is hermitian");
        s
    }

    /// Copy with a different control set.
    pub fn with_controls(&self, controls: Vec<Operator>, labels: Vec<String>) -> Self {
        let mut s = self.clone();
        s.controls = controls;
        s.control_labels = labels;
        s
    }

    pub fn coherence(&self, xi: &StateVector) -> Result<C64> {
        coherence(xi, &self.output_op)
    }
}

pub fn coherence(xi: &StateVector, c_op: &Operator) -> Result<C64> {
    if xi.space() != c_op.space() {
        return Err(Error::SpaceMismatch);
    }
    Ok(xi.amplitudes().dotc(&c_op.apply(xi.amplitudes())))
}

fn env_parts(p: &ScenarioParams) -> Result<(CMat, CMat, CMat)> {
    p.validate()?;
    Ok((
        number_operator(p.n_env)?,
        field_quadrature(p.g, p.n_env)?,
        field_quadrature(p.w, p.n_env)?,
    ))
}

fn half(m: CMat, s: f64) -> CMat {
    m * c(s, 0.0)
}

pub fn build_single_qubit(p: &ScenarioParams) -> Result<ControlSystem> {
    let (num, fg, _) = env_parts(p)?;
    let sp = HilbertSpace::new(&[("q", 2), ("env", p.n_env)])?;
    let e = |parts: &[(&str, &CMat)]| embed_product(parts, &sp);
    let drift = half(e(&[("q", &pauli::z())])?, p.omega0 / 2.0) + half(e(&[("env", &num)])?, p.omega_env);
    let controls = alloc::vec![
        ("sx".to_string(), e(&[("q", &pauli::x())])?),
        ("sy".to_string(), e(&[("q", &pauli::y())])?),
    ];
    let interaction = e(&[("q", &pauli::z()), ("env", &fg)])?;
    let output = e(&[("q", &pauli::ket_bra(2, 0, 1))])?;
    ControlSystem::from_hamiltonians("single_qubit", sp, drift, controls, interaction, output)
}

fn pair_drift(p: &ScenarioParams, sp: &HilbertSpace, num: &CMat) -> Result<CMat> {
    let e = |parts: &[(&str, &CMat)]| embed_product(parts, sp);
    let z = pauli::z();
    Ok(half(e(&[("q1", &z)])? + e(&[("q2", &z)])?, p.omega0 / 2.0) + half(e(&[("env", num)])?, p.omega_env))
}

fn pair_interaction(sp: &HilbertSpace, fg: &CMat) -> Result<CMat> {
    let z = pauli::z();
    Ok(embed_product(&[("q1", &z), ("env", fg)], sp)? + embed_product(&[("q2", &z), ("env", fg)], sp)?)
}

/// `|01⟩⟨10|` on the two system qubits.
fn pair_output(sp: &HilbertSpace) -> Result<CMat> {
    embed_product(
        &[("q1", &pauli::ket_bra(2, 0, 1)), ("q2", &pauli::ket_bra(2, 1, 0))],
        sp,
    )
}

fn local_controls(sp: &HilbertSpace) -> Result<Vec<(String, CMat)>> {
    let mut v = Vec::new();
    for q in ["q1", "q2"] {
        v.push((format!("sx({q})"), embed_product(&[(q, &pauli::x())], sp)?));
        v.push((format!("sy({q})"), embed_product(&[(q, &pauli::y())], sp)?));
    }
    Ok(v)
}

pub fn build_two_qubit(p: &ScenarioParams) -> Result<ControlSystem> {
    let (num, fg, _) = env_parts(p)?;
    let sp = HilbertSpace::new(&[("q1", 2), ("q2", 2), ("env", p.n_env)])?;
    let drift = pair_drift(p, &sp, &num)?;
    let controls = local_controls(&sp)?;
    let interaction = pair_interaction(&sp, &fg)?;
    let output = pair_output(&sp)?;
    ControlSystem::from_hamiltonians("two_qubit", sp, drift, controls, interaction, output)
}

/// Two qubits, a bait qubit and the environment. Controls `H_1..H_9`:
/// `σ_x¹, σ_y¹, σ_x², σ_y², σ_x^b, σ_y^b, J_1σ_z¹σ_z^b, J_2σ_z²σ_z^b, σ_z^b F(w)`.
pub fn build_bait(p: &ScenarioParams) -> Result<ControlSystem> {
    let (num, fg, fw) = env_parts(p)?;
    let sp = HilbertSpace::new(&[("q1", 2), ("q2", 2), ("bait", 2), ("env", p.n_env)])?;
    let e = |parts: &[(&str, &CMat)]| embed_product(parts, &sp);
    let (x, y, z) = (pauli::x(), pauli::y(), pauli::z());
    let drift = pair_drift(p, &sp, &num)? + half(e(&[("bait", &z)])?, p.omega0 / 2.0);
    let mut controls = local_controls(&sp)?;
    controls.push(("sx(b)".to_string(), e(&[("bait", &x)])?));
    controls.push(("sy(b)".to_string(), e(&[("bait", &y)])?));
    controls.push((
        "J1 sz(q1)sz(b)".to_string(),
        half(e(&[("q1", &z), ("bait", &z)])?, p.j1),
    ));
    controls.push((
        "J2 sz(q2)sz(b)".to_string(),
        half(e(&[("q2", &z), ("bait", &z)])?, p.j2),
    ));
    controls.push(("sz(b)F(w)".to_string(), e(&[("bait", &z), ("env", &fw)])?));
    let interaction = pair_interaction(&sp, &fg)?;
    let output = pair_output(&sp)?;
    ControlSystem::from_hamiltonians("bait", sp, drift, controls, interaction, output)
}

/// Bait-free system whose controls are `σ_{x|y}^{(1|2)} ⊗ F(w)^i`, `0 ≤ i ≤ max_power`.
pub fn build_restructured(p: &ScenarioParams, max_power: usize) -> Result<ControlSystem> {
    let (num, fg, fw) = env_parts(p)?;
    let sp = HilbertSpace::new(&[("q1", 2), ("q2", 2), ("env", p.n_env)])?;
    let mut powers = alloc::vec![CMat::identity(p.n_env, p.n_env)];
    for i in 1..=max_power {
        let next = &powers[i - 1] * &fw;
        powers.push(next);
    }
    let mut controls = Vec::new();
    for (q, name, s) in [
        ("q1", "x", pauli::x()),
        ("q1", "y", pauli::y()),
        ("q2", "x", pauli::x()),
        ("q2", "y", pauli::y()),
    ] {
        for (i, f) in powers.iter().enumerate() {
            controls.push((
                format!("s{name}({q})F^{i}"),
                embed_product(&[(q, &s), ("env", f)], &sp)?,
            ));
        }
    }
    let drift = pair_drift(p, &sp, &num)?;
    let interaction = pair_interaction(&sp, &fg)?;
    let output = pair_output(&sp)?;
    ControlSystem::from_hamiltonians("restructured", sp, drift, controls, interaction, output)
}

/// Two-qubit system whose controls couple the basis state `|0⟩` to every
/// other basis state (`2n−1` generators), so that the control fields span
/// the whole tangent space of the unit sphere at generic states.
pub fn build_fully_actuated(p: &ScenarioParams) -> Result<ControlSystem> {
    let base = build_two_qubit(p)?;
    let n = base.dim();
    let mut controls = Vec::new();
    for k in 1..n {
        let mut x = CMat::zeros(n, n);
        x[(0, k)] = c(1.0, 0.0);
        x[(k, 0)] = c(1.0, 0.0);
        let mut y = CMat::zeros(n, n);
        y[(0, k)] = c(0.0, -1.0);
        y[(k, 0)] = c(0.0, 1.0);
        controls.push((format!("X(0,{k})"), x));
        controls.push((format!("Y(0,{k})"), y));
    }
    let mut d = CMat::zeros(n, n);
    d[(0, 0)] = c(1.0, 0.0);
    controls.push(("P(0)".to_string(), d));
    let h = |o: &Operator| o.to_hamiltonian().map(|x| x.matrix().clone());
    ControlSystem::from_hamiltonians(
        "fully_actuated",
        base.space.clone(),
        h(&base.drift)?,
        controls,
        h(&base.interaction)?,
        base.output_op.matrix().clone(),
    )
}
