//! Propagation, closed-loop runs, CBH maneuvers and commutator checks.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{
    commutator_mat, embed_product, factor_identity_deviation, field_quadrature, linear_combination, pauli, Operator,
    SkewSpectrum, StateVector,
};
use crate::error::{Error, Result};
use crate::feedback::{BetaMode, FeedbackLaw, FrameStrategy, Synthesizer};
use crate::linalg::{c, fro, fro_inner_re, realify, residual_against, CMat, CVec, OrthoSpan, RMat, C64, I};
use crate::models::{build_restructured, coherence, ControlSystem, ScenarioParams};
use crate::tangent::{bracket_linear_fields, eval_field};

/// Largest accepted `|‖ξ‖ − 1|`.
pub const NORM_DRIFT_LIMIT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub controls: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
}

impl PulseSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let width = segments.first().map(|s| s.controls.len()).unwrap_or(0);
        for s in &segments {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(Error::InvalidSchedule("segment durations must be positive and finite"));
            }
            if s.controls.len() != width {
                return Err(Error::InvalidSchedule("segments disagree on the number of controls"));
            }
        }
        Ok(PulseSchedule { segments })
    }

    /// One segment of constant controls.
    pub fn constant(duration: f64, controls: Vec<f64>) -> Result<Self> {
        Self::new(alloc::vec![Segment { duration, controls }])
    }

    pub fn width(&self) -> usize {
        self.segments.first().map(|s| s.controls.len()).unwrap_or(0)
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn then(&self, other: &PulseSchedule) -> Result<PulseSchedule> {
        let mut segs = self.segments.clone();
        segs.extend(other.segments.iter().cloned());
        Self::new(segs)
    }

    /// Controls active at time `t` (zero past the end).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut start = 0.0;
        for s in &self.segments {
            if t < start + s.duration {
                return s.controls.clone();
            }
            start += s.duration;
        }
        alloc::vec![0.0; self.width()]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceMeta {
    pub scenario: String,
    pub coupling: f64,
    pub seed: u64,
    pub mode: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub y_values: Vec<C64>,
    /// `|‖ξ‖ − 1|` at each sample.
    pub drifts: Vec<f64>,
    pub states: Vec<CVec>,
    pub norm_drift: f64,
    pub meta: TraceMeta,
}

impl Trace {
    fn start(sys: &ControlSystem, xi: &CVec) -> Self {
        let mut t = Trace {
            times: Vec::new(),
            y_values: Vec::new(),
            drifts: Vec::new(),
            states: Vec::new(),
            norm_drift: 0.0,
            meta: TraceMeta {
                scenario: sys.scenario.clone(),
                coupling: sys.interaction.norm(),
                ..Default::default()
            },
        };
        t.push(sys, 0.0, xi.clone());
        t
    }

    fn push(&mut self, sys: &ControlSystem, t: f64, xi: CVec) -> f64 {
        let drift = libm::fabs(xi.norm() - 1.0);
        self.times.push(t);
        self.y_values.push(xi.dotc(&sys.output_op.apply(&xi)));
        self.drifts.push(drift);
        self.states.push(xi);
        self.norm_drift = self.norm_drift.max(drift);
        drift
    }

    pub fn final_state(&self) -> &CVec {
        self.states.last().expect("traces hold the initial state")
    }

    /// Largest `|y_a(t) − y_b(t)|` over common samples.
    pub fn max_deviation(&self, other: &Trace) -> f64 {
        self.y_values
            .iter()
            .zip(&other.y_values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `||y_a(t)| − |y_b(t)||` over common samples.
    pub fn max_abs_deviation(&self, other: &Trace) -> f64 {
        self.y_values
            .iter()
            .zip(&other.y_values)
            .map(|(a, b)| libm::fabs(a.norm() - b.norm()))
            .fold(0.0, f64::max)
    }
}

fn check_controls(sys: &ControlSystem, width: usize) -> Result<()> {
    if width != sys.controls.len() {
        return Err(Error::DimensionMismatch {
            expected: sys.controls.len(),
            found: width,
        });
    }
    Ok(())
}

/// Open-loop generator `A_0 + Σ u_j A_j + A_I`.
pub fn open_loop_generator(sys: &ControlSystem, u: &[f64]) -> Result<Operator> {
    check_controls(sys, u.len())?;
    sys.drift
        .add(&linear_combination(&sys.space, u, &sys.controls))?
        .add(&sys.interaction)
}

/// Piecewise-constant propagation with exact exponentials; every segment
/// is subdivided so that samples are at most `dt_max` apart.
pub fn propagate(sys: &ControlSystem, sched: &PulseSchedule, xi0: &StateVector, dt_max: f64) -> Result<Trace> {
    if xi0.space() != &sys.space {
        return Err(Error::SpaceMismatch);
    }
    if !(dt_max > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    if !sched.segments.is_empty() {
        check_controls(sys, sched.width())?;
    }
    let mut trace = Trace::start(sys, xi0.amplitudes());
    let mut x = xi0.amplitudes().clone();
    let mut t0 = 0.0;
    for seg in &sched.segments {
        let spec = SkewSpectrum::new(&open_loop_generator(sys, &seg.controls)?)?;
        let k = libm::ceil(seg.duration / dt_max).max(1.0) as usize;
        let h = seg.duration / k as f64;
        for i in 0..k {
            x = spec.apply(h, &x);
            let drift = trace.push(sys, t0 + (i + 1) as f64 * h, x.clone());
            if drift > NORM_DRIFT_LIMIT {
                return Err(Error::NormDrift(drift));
            }
        }
        t0 += seg.duration;
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Synthesized law with `J` taken literally.
    Literal,
    /// Synthesized law with `J`'s last row set to `e_1`.
    Regularized,
    /// Reference harness: an extra actuator cancels the plant's interaction
    /// exactly, using knowledge of the coupling.
    OracleCancel,
    /// `u = v`.
    OpenLoop,
}

impl FeedbackMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeedbackMode::Literal => "literal",
            FeedbackMode::Regularized => "regularized",
            FeedbackMode::OracleCancel => "oracle_cancel",
            FeedbackMode::OpenLoop => "open_loop",
        }
    }
}

/// What to do when the law cannot be synthesized at some state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankPolicy {
    Abort,
    FreezeLastLaw,
    OpenLoopFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    /// Fourth-order commutator-free Lie group scheme driven by the
    /// closed-loop field, with the law re-synthesized at every stage. Every
    /// stage is a product of unitary exponentials, so the norm is kept to
    /// round-off.
    CommutatorFree4,
    /// Classical Runge–Kutta on the closed-loop field.
    Rk4,
    /// Law held over each step, exact exponential of the frozen generator.
    ZeroOrderHold,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosedLoopSettings {
    pub mode: FeedbackMode,
    pub policy: RankPolicy,
    pub integrator: Integrator,
    pub strategy: FrameStrategy,
    pub dt: f64,
    pub tol: f64,
}

impl Default for ClosedLoopSettings {
    fn default() -> Self {
        ClosedLoopSettings {
            mode: FeedbackMode::Literal,
            policy: RankPolicy::Abort,
            integrator: Integrator::CommutatorFree4,
            strategy: FrameStrategy::CommutantWithBlockWeights,
            dt: 1e-2,
            tol: crate::algebra::DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Synthesized,
    Frozen,
    OpenLoop,
    Failed,
}

impl StepStatus {
    pub fn name(&self) -> &'static str {
        match self {
            StepStatus::Synthesized => "synthesized",
            StepStatus::Frozen => "frozen",
            StepStatus::OpenLoop => "open_loop",
            StepStatus::Failed => "failed",
        }
    }
}

/// Per-step synthesis record (taken at the start of the step).
#[derive(Clone, Debug)]
pub struct AuditRecord {
    pub step: usize,
    pub t: f64,
    pub status: StepStatus,
    pub error: Option<Error>,
    pub law: Option<FeedbackLaw>,
    pub controls: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub trace: Trace,
    pub audit: Vec<AuditRecord>,
    /// Set when the run stopped early.
    pub aborted: Option<Error>,
    pub steps_synthesized: usize,
    pub steps_total: usize,
}

impl ClosedLoopRun {
    /// Number of refresh steps at which the frame was built from a different
    /// set of candidates than at the previous synthesized step.
    pub fn frame_switches(&self) -> usize {
        let mut prev: Option<&Vec<Option<usize>>> = None;
        let mut n = 0;
        for law in self.audit.iter().filter_map(|r| r.law.as_ref()) {
            if prev.is_some_and(|p| p != &law.selected) {
                n += 1;
            }
            prev = Some(&law.selected);
        }
        n
    }

    /// Largest condition number of `d` over the synthesized steps.
    pub fn worst_condition(&self) -> f64 {
        self.audit
            .iter()
            .filter_map(|r| r.law.as_ref())
            .map(|l| l.cond_d)
            .fold(0.0, f64::max)
    }
}

struct Controller<'a> {
    plant: &'a ControlSystem,
    design: &'a ControlSystem,
    synth: Option<Synthesizer>,
    settings: ClosedLoopSettings,
    last: Option<FeedbackLaw>,
}

struct Decision {
    u: Vec<f64>,
    status: StepStatus,
    law: Option<FeedbackLaw>,
    error: Option<Error>,
}

impl<'a> Controller<'a> {
    fn decide(&mut self, x: &CVec, v: &[f64]) -> Result<Decision> {
        let open = |status, error| Decision {
            u: v.to_vec(),
            status,
            law: None,
            error,
        };
        let Some(synth) = &self.synth else {
            return Ok(open(StepStatus::OpenLoop, None));
        };
        let xi = StateVector::from_raw(self.design.space.clone(), x.clone());
        match synth.law(self.design, &xi) {
            Ok(law) => {
                let u = law.controls(v)?.iter().cloned().collect();
                self.last = Some(law.clone());
                Ok(Decision {
                    u,
                    status: StepStatus::Synthesized,
                    law: Some(law),
                    error: None,
                })
            }
            Err(e @ (Error::RankDeficiency { .. } | Error::FrameNotExpressible(_) | Error::InteractionVanishes)) => {
                match (self.settings.policy, &self.last) {
                    (RankPolicy::FreezeLastLaw, Some(law)) => {
                        let u = law.controls(v)?.iter().cloned().collect();
                        Ok(Decision {
                            u,
                            status: StepStatus::Frozen,
                            law: None,
                            error: Some(e),
                        })
                    }
                    (RankPolicy::OpenLoopFallback, _) => Ok(open(StepStatus::OpenLoop, Some(e))),
                    _ => Err(e),
                }
            }
            Err(e) => Err(e),
        }
    }

    fn generator(&self, u: &[f64]) -> Result<Operator> {
        let g = open_loop_generator(self.plant, u)?;
        if self.settings.mode == FeedbackMode::OracleCancel {
            g.add(&self.plant.interaction.scale(-1.0))
        } else {
            Ok(g)
        }
    }
}

/// Closed-loop run under `u = α(ξ) + β(ξ) v`. The law is synthesized from
/// `design` (whose interaction defines `Δ = span{K_I}`) and applied to
/// `plant`, which shares the drift and controls but may carry a different
/// coupling, in particular none. `v_ext` has one column per control.
pub fn propagate_closed_loop(
    plant: &ControlSystem,
    design: &ControlSystem,
    v_ext: &PulseSchedule,
    xi0: &StateVector,
    settings: ClosedLoopSettings,
) -> Result<ClosedLoopRun> {
    if xi0.space() != &plant.space || design.space != plant.space {
        return Err(Error::SpaceMismatch);
    }
    check_controls(plant, v_ext.width())?;
    check_controls(design, v_ext.width())?;
    if !(settings.dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    let synth = match settings.mode {
        FeedbackMode::Literal => Some(Synthesizer::new(
            design,
            settings.strategy,
            BetaMode::Literal,
            settings.tol,
        )?),
        FeedbackMode::Regularized => Some(Synthesizer::new(
            design,
            settings.strategy,
            BetaMode::Regularized,
            settings.tol,
        )?),
        FeedbackMode::OracleCancel | FeedbackMode::OpenLoop => None,
    };
    let state_dependent = synth.is_some();
    let mut ctl = Controller {
        plant,
        design,
        synth,
        settings,
        last: None,
    };
    let horizon = v_ext.total_duration();
    let steps = libm::ceil(horizon / settings.dt - 1e-9).max(0.0) as usize;
    let h = settings.dt;
    let mut trace = Trace::start(plant, xi0.amplitudes());
    trace.meta.mode = String::from(settings.mode.name());
    let mut x = xi0.amplitudes().clone();
    let mut audit = Vec::with_capacity(steps);
    let mut aborted = None;
    let mut synthesized = 0;
    for s in 0..steps {
        let t = s as f64 * h;
        let v = v_ext.value_at(t + 0.5 * h);
        let first = match ctl.decide(&x, &v) {
            Ok(d) => d,
            Err(e) => {
                audit.push(AuditRecord {
                    step: s,
                    t,
                    status: StepStatus::Failed,
                    error: Some(e.clone()),
                    law: None,
                    controls: Vec::new(),
                });
                aborted = Some(e);
                break;
            }
        };
        if first.status == StepStatus::Synthesized {
            synthesized += 1;
        }
        let g1 = ctl.generator(&first.u)?;
        audit.push(AuditRecord {
            step: s,
            t,
            status: first.status,
            error: first.error,
            law: first.law,
            controls: first.u,
        });
        x = if !state_dependent || settings.integrator == Integrator::ZeroOrderHold {
            SkewSpectrum::new(&g1)?.apply(h, &x)
        } else {
            let step = integrate_interval(&mut ctl, &g1, &x, &v, h, settings.integrator);
            match step {
                Ok(y) => y,
                Err(e) => {
                    if let Some(last) = audit.last_mut() {
                        last.status = StepStatus::Failed;
                        last.error = Some(e.clone());
                    }
                    aborted = Some(e);
                    break;
                }
            }
        };
        let drift = trace.push(plant, (s + 1) as f64 * h, x.clone());
        if drift > NORM_DRIFT_LIMIT {
            aborted = Some(Error::NormDrift(drift));
            break;
        }
    }
    Ok(ClosedLoopRun {
        trace,
        audit,
        aborted,
        steps_synthesized: synthesized,
        steps_total: steps,
    })
}

/// Largest arc length on the unit sphere covered by one substep of the
/// state-dependent integrators.
pub const MAX_SUBSTEP_ARC: f64 = 0.02;
const MAX_SUBSTEPS: usize = 1 << 14;

/// Advances over one refresh interval, splitting it into substeps sized by
/// the local speed `|f(x)|`.
fn integrate_interval(
    ctl: &mut Controller<'_>,
    g1: &Operator,
    x: &CVec,
    v: &[f64],
    h: f64,
    integrator: Integrator,
) -> Result<CVec> {
    let speed = g1.apply(x).norm();
    let n = (libm::ceil(speed * h / MAX_SUBSTEP_ARC) as usize).clamp(1, MAX_SUBSTEPS);
    let dh = h / n as f64;
    let mut y = x.clone();
    for k in 0..n {
        let g = if k == 0 {
            g1.clone()
        } else {
            let d = ctl.decide(&y, v)?;
            ctl.generator(&d.u)?
        };
        y = match integrator {
            Integrator::Rk4 => rk4_step(ctl, &g, &y, v, dh)?,
            _ => cf4_step(ctl, &g, &y, v, dh)?,
        };
    }
    Ok(y)
}

fn rk4_step(ctl: &mut Controller<'_>, g1: &Operator, x: &CVec, v: &[f64], h: f64) -> Result<CVec> {
    let mut field = |y: CVec| -> Result<CVec> {
        let d = ctl.decide(&y, v)?;
        Ok(ctl.generator(&d.u)?.apply(&y))
    };
    let k1 = g1.apply(x);
    let k2 = field(x + &k1 * c(0.5 * h, 0.0))?;
    let k3 = field(x + &k2 * c(0.5 * h, 0.0))?;
    let k4 = field(x + &k3 * c(h, 0.0))?;
    Ok(x + (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0))
}

/// Skew generator `W = f y† − y f† − (y†f) y y†` with `W y = f` for a unit
/// `y` and a tangent `f`.
fn field_generator(space: &crate::algebra::HilbertSpace, y: &CVec, f: &CVec) -> Result<Operator> {
    let a = y.dotc(f);
    let m = f * y.adjoint() - y * f.adjoint() - (y * y.adjoint()) * a;
    Operator::skew(space.clone(), (&m - m.adjoint()) * c(0.5, 0.0))
}

/// One step of the order-4 commutator-free Lie group integrator:
/// `Y_2 = e^{hF_1/2} y`, `Y_3 = e^{hF_2/2} y`, `Y_4 = e^{h(F_3 − F_1/2)} Y_2`,
/// `y' = e^{h(−F_1/12 + F_2/6 + F_3/6 + F_4/4)} e^{h(F_1/4 + F_2/6 + F_3/6 − F_4/12)} y`,
/// where `F_i` is the rank-two skew generator reproducing the closed-loop
/// field at `Y_i`.
fn cf4_step(ctl: &mut Controller<'_>, g1: &Operator, x: &CVec, v: &[f64], h: f64) -> Result<CVec> {
    let space = g1.space().clone();
    let f1 = field_generator(&space, x, &g1.apply(x))?;
    let mut gen_at = |y: &CVec| -> Result<Operator> {
        let d = ctl.decide(y, v)?;
        field_generator(&space, y, &ctl.generator(&d.u)?.apply(y))
    };
    let exp = |a: &Operator, y: &CVec| -> Result<CVec> { Ok(SkewSpectrum::new(a)?.apply(h, y)) };
    let y2 = exp(&f1.scale(0.5), x)?;
    let f2 = gen_at(&y2)?;
    let y3 = exp(&f2.scale(0.5), x)?;
    let f3 = gen_at(&y3)?;
    let y4 = exp(&f3.add(&f1.scale(-0.5))?, &y2)?;
    let f4 = gen_at(&y4)?;
    let fs = [f1, f2, f3, f4];
    let inner = linear_combination(&space, &[0.25, 1.0 / 6.0, 1.0 / 6.0, -1.0 / 12.0], &fs);
    let outer = linear_combination(&space, &[-1.0 / 12.0, 1.0 / 6.0, 1.0 / 6.0, 0.25], &fs);
    exp(&outer, &exp(&inner, x)?)
}

/// The four-segment maneuver `(+i, +j, −i, −j)`, each of duration `t`,
/// over `m` controls.
pub fn maneuver_schedule(m: usize, i: usize, j: usize, t: f64) -> Result<PulseSchedule> {
    for k in [i, j] {
        if k >= m {
            return Err(Error::InvalidIndex(k));
        }
    }
    if !(t > 0.0) {
        return Err(Error::InvalidSchedule("maneuver time must be positive"));
    }
    let seg = |k: usize, s: f64| {
        let mut u = alloc::vec![0.0; m];
        u[k] = s;
        Segment {
            duration: t,
            controls: u,
        }
    };
    PulseSchedule::new(alloc::vec![seg(i, 1.0), seg(j, 1.0), seg(i, -1.0), seg(j, -1.0)])
}

/// Net propagator of the maneuver: `e^{−Bt} e^{−At} e^{Bt} e^{At}`.
pub fn maneuver_propagator(a: &Operator, b: &Operator, t: f64) -> Result<CMat> {
    let sa = SkewSpectrum::new(a)?;
    let sb = SkewSpectrum::new(b)?;
    Ok(sb.propagator(-t) * sa.propagator(-t) * sb.propagator(t) * sa.propagator(t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbhFit {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Log-log slope of residual against `t`; `None` when exact.
    pub slope: Option<f64>,
    pub exact: bool,
}

/// Residual `‖U(4t) − exp(t² [B, A])‖` of the second-order maneuver
/// approximation and its fitted order in `t`.
pub fn cbh_order_check(a: &Operator, b: &Operator, times: &[f64]) -> Result<CbhFit> {
    if times.len() < 4 || times.windows(2).any(|w| !(w[1] < w[0])) || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidSchedule("need at least four decreasing positive times"));
    }
    let br = bracket_linear_fields(a, b)?;
    let spec = SkewSpectrum::new(&br)?;
    let mut residuals = Vec::new();
    for &t in times {
        let u = maneuver_propagator(a, b, t)?;
        residuals.push(fro(&(u - spec.propagator(t * t))));
    }
    let exact = residuals.iter().all(|&r| r < 1e-13);
    let slope = if exact {
        None
    } else {
        Some(loglog_slope(times, &residuals))
    };
    Ok(CbhFit {
        times: times.to_vec(),
        residuals,
        slope,
        exact,
    })
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (libm::log(x), libm::log(y)))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Skew part of the maneuver propagator divided by `t²`, an estimate of the
/// generated direction.
pub fn effective_generator(a: &Operator, b: &Operator, t: f64) -> Result<CMat> {
    let u = maneuver_propagator(a, b, t)?;
    Ok((&u - u.adjoint()) * c(0.5 / (t * t), 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionMatch {
    /// `|⟨G, D⟩| / (‖G‖ ‖D‖)` in the real Frobenius product.
    pub overlap: f64,
    /// Least-squares constant in `G ≈ c D`.
    pub constant: f64,
}

pub fn direction_match(g: &CMat, target: &CMat) -> DirectionMatch {
    let ip = fro_inner_re(target, g);
    let (ng, nt) = (fro(g), fro(target));
    let overlap = if ng == 0.0 || nt == 0.0 {
        0.0
    } else {
        libm::fabs(ip) / (ng * nt)
    };
    DirectionMatch {
        overlap,
        constant: if nt == 0.0 { 0.0 } else { ip / (nt * nt) },
    }
}

/// Proportionality `X ≈ c T` with complex `c`, returning `c` and the
/// relative residual (zero for `X = 0`).
pub fn proportionality(x: &CMat, target: &CMat) -> (C64, f64) {
    let tt: f64 = target.iter().map(|z| z.norm_sqr()).sum();
    if tt == 0.0 {
        return (c(0.0, 0.0), if fro(x) == 0.0 { 0.0 } else { 1.0 });
    }
    let cst: C64 = target.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum::<C64>() / tt;
    let nx = fro(x);
    let res = if nx == 0.0 { 0.0 } else { fro(&(x - target * cst)) / nx };
    (cst, res)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainEntry {
    pub name: &'static str,
    pub expression: &'static str,
    pub target: &'static str,
    pub constant: C64,
    pub residual: f64,
    pub norm: f64,
    /// Distance from acting as the identity on the bait factor.
    pub bait_identity_deviation: Option<f64>,
}

/// Checks the bait-system commutator chain with skew generators `A_k`
/// against skew targets `−iT`.
pub fn verify_commutator_chain(sys: &ControlSystem, p: &ScenarioParams) -> Result<Vec<ChainEntry>> {
    if sys.controls.len() != 9 || sys.space.position("bait").is_err() {
        return Err(Error::InvalidParameter("commutator chain needs the bait system"));
    }
    let sp = &sys.space;
    let a = |k: usize| sys.controls[k - 1].matrix().clone();
    let br = commutator_mat;
    let f = field_quadrature(p.w, p.n_env)?;
    let (x, y, z) = (pauli::x(), pauli::y(), pauli::z());
    let t = |parts: &[(&str, &CMat)]| -> Result<CMat> { Ok(embed_product(parts, sp)? * (-I)) };
    let zz_f1 = br(&br(&a(7), &a(5)), &br(&a(6), &a(9)));
    let zz_f2 = br(&br(&a(8), &a(5)), &br(&a(6), &a(9)));
    let items: Vec<(&'static str, &'static str, &'static str, CMat, CMat, bool)> = alloc::vec![
        (
            "comm1",
            "[[A8,A5],[A6,A9]]",
            "sz(q2) sz(b) F",
            zz_f2.clone(),
            t(&[("q2", &z), ("bait", &z), ("env", &f)])?,
            false
        ),
        (
            "comm2",
            "[A4,A8]",
            "sx(q2) sz(b)",
            br(&a(4), &a(8)),
            t(&[("q2", &x), ("bait", &z)])?,
            false
        ),
        (
            "comm3",
            "[[A4,A8],[[A8,A5],[A6,A9]]]",
            "sy(q2) I(b) F",
            br(&br(&a(4), &a(8)), &zz_f2),
            t(&[("q2", &y), ("env", &f)])?,
            true
        ),
        (
            "comm4",
            "[[A3,A8],[[A8,A5],[A6,A9]]]",
            "sx(q2) I(b) F",
            br(&br(&a(3), &a(8)), &zz_f2),
            t(&[("q2", &x), ("env", &f)])?,
            true
        ),
        (
            "comm5",
            "[[A2,A7],[[A7,A5],[A6,A9]]]",
            "sy(q1) I(b) F",
            br(&br(&a(2), &a(7)), &zz_f1),
            t(&[("q1", &y), ("env", &f)])?,
            true
        ),
        (
            "comm6",
            "[[A1,A7],[[A7,A5],[A6,A9]]]",
            "sx(q1) I(b) F",
            br(&br(&a(1), &a(7)), &zz_f1),
            t(&[("q1", &x), ("env", &f)])?,
            true
        ),
    ];
    items
        .into_iter()
        .map(|(name, expression, target, m, tgt, bait)| {
            let (constant, residual) = proportionality(&m, &tgt);
            let dev = if bait {
                Some(factor_identity_deviation(&m, sp, "bait")?)
            } else {
                None
            };
            Ok(ChainEntry {
                name,
                expression,
                target,
                constant,
                residual,
                norm: fro(&m),
                bait_identity_deviation: dev,
            })
        })
        .collect()
}

/// Nested commutator of control generators (1-based labels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BracketWord {
    Gen(usize),
    Br(Box<BracketWord>, Box<BracketWord>),
}

impl BracketWord {
    pub fn size(&self) -> usize {
        match self {
            BracketWord::Gen(_) => 1,
            BracketWord::Br(a, b) => a.size() + b.size(),
        }
    }

    /// Matrix of the word over the given generators.
    pub fn eval(&self, gens: &[Operator]) -> CMat {
        match self {
            BracketWord::Gen(k) => gens[*k - 1].matrix().clone(),
            BracketWord::Br(a, b) => commutator_mat(&a.eval(gens), &b.eval(gens)),
        }
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketWord::Gen(k) => write!(f, "H{k}"),
            BracketWord::Br(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

/// Pauli string on (q1, q2, bait) times a power of `F`: the shape of every
/// bracket of bait-system controls, up to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Monomial {
    paulis: [u8; 3],
    power: u8,
}

impl Monomial {
    fn bracket(&self, o: &Monomial) -> Option<Monomial> {
        let mut anti = 0;
        let mut paulis = [0u8; 3];
        for k in 0..3 {
            let (a, b) = (self.paulis[k], o.paulis[k]);
            if a != 0 && b != 0 && a != b {
                anti += 1;
            }
            paulis[k] = match (a, b) {
                (0, _) => b,
                (_, 0) => a,
                _ if a == b => 0,
                _ => 6 - a - b,
            };
        }
        (anti % 2 == 1).then_some(Monomial {
            paulis,
            power: self.power + o.power,
        })
    }
}

fn bait_monomials() -> [Monomial; 9] {
    let m = |a, b, bait, power| Monomial {
        paulis: [a, b, bait],
        power,
    };
    [
        m(1, 0, 0, 0),
        m(2, 0, 0, 0),
        m(0, 1, 0, 0),
        m(0, 2, 0, 0),
        m(0, 0, 1, 0),
        m(0, 0, 2, 0),
        m(3, 0, 3, 0),
        m(0, 3, 3, 0),
        m(0, 0, 3, 1),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordMatch {
    pub target: String,
    pub word: Option<BracketWord>,
    pub constant: C64,
    pub residual: f64,
}

/// Exhaustive search, by increasing word size up to `max_size`, for
/// shortest bracket words of the bait controls proportional to
/// `σ_z^{(j)} ⊗ I_b ⊗ F(w)`, `j = 1, 2`. Found words are checked
/// numerically.
pub fn search_interaction_words(sys: &ControlSystem, p: &ScenarioParams, max_size: usize) -> Result<Vec<WordMatch>> {
    let targets = [
        (
            "sz(q1) I(b) F".to_string(),
            Monomial {
                paulis: [3, 0, 0],
                power: 1,
            },
        ),
        (
            "sz(q2) I(b) F".to_string(),
            Monomial {
                paulis: [0, 3, 0],
                power: 1,
            },
        ),
    ];
    search_words(sys, p, &targets, max_size, 3)
}

/// Bracket words of the bait controls realizing each control of the
/// restructured system, `σ_{x|y}^{(j)} ⊗ I_b ⊗ F(w)^i` for `i ≤ max_power`.
pub fn realize_restructured_controls(
    sys: &ControlSystem,
    p: &ScenarioParams,
    max_power: usize,
    max_size: usize,
) -> Result<Vec<WordMatch>> {
    let mut targets = Vec::new();
    for (q, name, code) in [(0, "x", 1u8), (0, "y", 2), (1, "x", 1), (1, "y", 2)] {
        for i in 0..=max_power {
            let mut paulis = [0u8; 3];
            paulis[q] = code;
            targets.push((format!("s{name}(q{})F^{i}", q + 1), Monomial { paulis, power: i as u8 }));
        }
    }
    search_words(sys, p, &targets, max_size, max_power)
}

fn search_words(
    sys: &ControlSystem,
    p: &ScenarioParams,
    targets: &[(String, Monomial)],
    max_size: usize,
    max_power: usize,
) -> Result<Vec<WordMatch>> {
    if sys.controls.len() != 9 || sys.space.position("bait").is_err() {
        return Err(Error::InvalidParameter("word search needs the bait system"));
    }
    if max_power > u8::MAX as usize {
        return Err(Error::InvalidParameter("power too large"));
    }
    let mut found: BTreeMap<Monomial, BracketWord> = BTreeMap::new();
    let mut by_size: Vec<Vec<Monomial>> = alloc::vec![Vec::new(); max_size + 1];
    for (k, m) in bait_monomials().into_iter().enumerate() {
        if let alloc::collections::btree_map::Entry::Vacant(e) = found.entry(m) {
            e.insert(BracketWord::Gen(k + 1));
            by_size[1].push(m);
        }
    }
    for s in 2..=max_size {
        if targets.iter().all(|(_, t)| found.contains_key(t)) {
            break;
        }
        let mut fresh = Vec::new();
        for a in 1..=s / 2 {
            for x in &by_size[a] {
                for y in &by_size[s - a] {
                    if let Some(m) = x.bracket(y) {
                        if m.power as usize <= max_power && !found.contains_key(&m) {
                            let w = BracketWord::Br(Box::new(found[x].clone()), Box::new(found[y].clone()));
                            found.insert(m, w);
                            fresh.push(m);
                        }
                    }
                }
            }
        }
        by_size[s] = fresh;
    }
    let f = field_quadrature(p.w, p.n_env)?;
    let paulis = [pauli::id(), pauli::x(), pauli::y(), pauli::z()];
    targets
        .iter()
        .map(|(label, mono)| {
            let mut fk = CMat::identity(p.n_env, p.n_env);
            for _ in 0..mono.power {
                fk = &fk * &f;
            }
            let mut parts: Vec<(&str, &CMat)> = Vec::new();
            for (slot, &code) in ["q1", "q2", "bait"].iter().zip(&mono.paulis) {
                if code != 0 {
                    parts.push((slot, &paulis[code as usize]));
                }
            }
            parts.push(("env", &fk));
            let tgt = embed_product(&parts, &sys.space)? * (-I);
            Ok(match found.get(mono) {
                Some(w) => {
                    let (constant, residual) = proportionality(&w.eval(&sys.controls), &tgt);
                    WordMatch {
                        target: label.clone(),
                        word: Some(w.clone()),
                        constant,
                        residual,
                    }
                }
                None => WordMatch {
                    target: label.clone(),
                    word: None,
                    constant: c(0.0, 0.0),
                    residual: 1.0,
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSample {
    pub rank: usize,
    pub interaction_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSurvey {
    pub samples: Vec<RankSample>,
    /// `(rank, count)` pairs in increasing rank.
    pub histogram: Vec<(usize, usize)>,
    /// Fraction of states with `K_I(ξ) ∈ G(ξ)` within `tol`.
    pub member_fraction: f64,
}

/// Realified rank of the control fields and membership of `K_I` at
/// `states` random states.
pub fn rank_survey(sys: &ControlSystem, states: usize, seed: u64, tol: f64) -> Result<RankSurvey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(states);
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for _ in 0..states {
        let xi = StateVector::random(&sys.space, &mut rng);
        samples.push(rank_at(sys, &xi, tol)?);
        *hist.entry(samples.last().expect("pushed").rank).or_default() += 1;
    }
    let members = samples.iter().filter(|s| s.interaction_residual < tol).count();
    let member_fraction = if states == 0 {
        0.0
    } else {
        members as f64 / states as f64
    };
    Ok(RankSurvey {
        samples,
        histogram: hist.into_iter().collect(),
        member_fraction,
    })
}

pub fn rank_at(sys: &ControlSystem, xi: &StateVector, tol: f64) -> Result<RankSample> {
    let g = control_span(sys, xi, tol)?;
    let k = realify(&eval_field(&sys.interaction, xi)?.components);
    Ok(RankSample {
        rank: g.ncols(),
        interaction_residual: residual_against(&g, &k),
    })
}

fn control_span(sys: &ControlSystem, xi: &StateVector, tol: f64) -> Result<RMat> {
    let mut span = OrthoSpan::new(2 * sys.dim());
    for a in &sys.controls {
        span.try_add(realify(&eval_field(a, xi)?.components).as_slice(), tol);
    }
    Ok(span.to_matrix())
}

/// Relative residual of `[K_I, K]` at `ξ`, with `K` the `σ_x^{(1)} F`
/// control field, against `G(ξ)` of the restructured system truncated at
/// `max_power`.
pub fn escalation_residual(p: &ScenarioParams, max_power: usize, xi: &StateVector, tol: f64) -> Result<f64> {
    if max_power < 1 {
        return Err(Error::InvalidParameter("escalation needs the first power of F"));
    }
    let sys = build_restructured(p, max_power)?;
    let idx = sys
        .control_labels
        .iter()
        .position(|l| l == "sx(q1)F^1")
        .ok_or(Error::InvalidIndex(1))?;
    let br = bracket_linear_fields(&sys.interaction, &sys.controls[idx])?;
    let v = realify(&eval_field(&br, xi)?.components);
    Ok(residual_against(&control_span(&sys, xi, tol)?, &v))
}

/// State reached from `(c_1|01⟩ + c_2|10⟩)|0⟩` after time `t` under
/// `H = σ_x^{(1)}` alone.
pub fn leave_dfs_reference(sys: &ControlSystem, c1: C64, c2: C64, t: f64) -> Result<CVec> {
    let (ct, st) = (c(libm::cos(t), 0.0), c(0.0, -libm::sin(t)));
    let q1a = CVec::from_vec(alloc::vec![ct, st]);
    let q1b = CVec::from_vec(alloc::vec![st, ct]);
    let n_env = sys.space.factor_dim("env")?;
    let mut vac = CVec::zeros(n_env);
    vac[0] = c(1.0, 0.0);
    let one = CVec::from_vec(alloc::vec![c(0.0, 0.0), c(1.0, 0.0)]);
    let zero = CVec::from_vec(alloc::vec![c(1.0, 0.0), c(0.0, 0.0)]);
    let a = q1a.kronecker(&one).kronecker(&vac);
    let b = q1b.kronecker(&zero).kronecker(&vac);
    Ok(CVec::from_iterator(
        a.len(),
        a.iter().zip(b.iter()).map(|(x, y)| c1 * x + c2 * y),
    ))
}

/// `(c_1|01⟩ + c_2|10⟩) ⊗ |0⟩_env` on the two-qubit space.
pub fn dfs_state(sys: &ControlSystem, c1: C64, c2: C64) -> Result<StateVector> {
    let n_env = sys.space.factor_dim("env")?;
    let mut v = CVec::zeros(sys.dim());
    v[n_env] = c1;
    v[2 * n_env] = c2;
    StateVector::normalized(sys.space.clone(), v)
}

/// `y(ξ)` shorthand for callers holding raw amplitudes.
pub fn output_of(sys: &ControlSystem, x: &CVec) -> Result<C64> {
    coherence(&StateVector::from_raw(sys.space.clone(), x.clone()), &sys.output_op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_bait, build_fully_actuated, build_single_qubit, build_two_qubit};
    use rand::Rng;

    fn params(omega0: f64, g: f64) -> ScenarioParams {
        ScenarioParams {
            omega0,
            g: c(g, 0.0),
            ..ScenarioParams::default()
        }
    }

    #[test]
    fn schedules_validate_and_compose() {
        assert!(PulseSchedule::constant(0.0, alloc::vec![1.0]).is_err());
        assert!(PulseSchedule::constant(f64::NAN, alloc::vec![1.0]).is_err());
        let bad = alloc::vec![
            Segment {
                duration: 1.0,
                controls: alloc::vec![1.0]
            },
            Segment {
                duration: 1.0,
                controls: alloc::vec![1.0, 2.0]
            },
        ];
        assert!(PulseSchedule::new(bad).is_err());
        let a = PulseSchedule::constant(0.3, alloc::vec![1.0, 0.0]).unwrap();
        let b = PulseSchedule::constant(0.45, alloc::vec![0.0, -1.0]).unwrap();
        let ab = a.then(&b).unwrap();
        assert!((ab.total_duration() - 0.75).abs() < 1e-10);
        assert_eq!(ab.value_at(0.1), alloc::vec![1.0, 0.0]);
        assert_eq!(ab.value_at(0.5), alloc::vec![0.0, -1.0]);
        assert_eq!(ab.value_at(2.0), alloc::vec![0.0, 0.0]);
        assert!(a
            .then(&PulseSchedule::constant(1.0, alloc::vec![1.0]).unwrap())
            .is_err());
    }

    #[test]
    fn zero_generator_gives_constant_trace() {
        let p = ScenarioParams {
            omega0: 0.0,
            omega_env: 0.0,
            g: c(0.0, 0.0),
            ..ScenarioParams::default()
        };
        let sys = build_single_qubit(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = StateVector::random(&sys.space, &mut rng);
        let tr = propagate(
            &sys,
            &PulseSchedule::constant(2.0, alloc::vec![0.0; 2]).unwrap(),
            &xi,
            0.1,
        )
        .unwrap();
        assert_eq!(tr.times.len(), 21);
        for x in &tr.states {
            assert!((x - xi.amplitudes()).norm() < 1e-12);
        }
        assert!(tr.norm_drift < 1e-12);
    }

    #[test]
    fn single_qubit_coherence_decays_only_with_coupling() {
        let run = |g: f64| {
            let sys = build_single_qubit(&params(1.0, g)).unwrap();
            let h = core::f64::consts::FRAC_1_SQRT_2;
            let xi = StateVector::product(
                &sys.space,
                &[
                    CVec::from_vec(alloc::vec![c(h, 0.0), c(h, 0.0)]),
                    CVec::from_vec(alloc::vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
                ],
            )
            .unwrap();
            propagate(
                &sys,
                &PulseSchedule::constant(20.0, alloc::vec![0.0; 2]).unwrap(),
                &xi,
                0.01,
            )
            .unwrap()
        };
        let free = run(0.0);
        assert!((free.y_values[0].norm() - 0.5).abs() < 1e-12);
        assert!(free.y_values.iter().all(|y| (y.norm() - 0.5).abs() < 1e-10));
        let coupled = run(0.2);
        let low = coupled.y_values.iter().map(|y| y.norm()).fold(1.0, f64::min);
        assert!(low < 0.45, "{low}");
        assert!(coupled.norm_drift < NORM_DRIFT_LIMIT);
    }

    #[test]
    fn dfs_state_keeps_coherence_and_leaving_matches_reference() {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let (c1, c2) = (c(h, 0.0), c(0.0, h));
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let xi = dfs_state(&sys, c1, c2).unwrap();
        let tr = propagate(
            &sys,
            &PulseSchedule::constant(20.0, alloc::vec![0.0; 4]).unwrap(),
            &xi,
            0.05,
        )
        .unwrap();
        let y0 = tr.y_values[0].norm();
        assert!(tr.y_values.iter().all(|y| (y.norm() - y0).abs() < 1e-10));

        let free = build_two_qubit(&params(0.0, 0.0)).unwrap();
        let xi = dfs_state(&free, c1, c2).unwrap();
        let sched = PulseSchedule::constant(5.0, alloc::vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let tr = propagate(&free, &sched, &xi, 0.05).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert!((x - leave_dfs_reference(&free, c1, c2, *t).unwrap()).norm() < 1e-10);
        }
        let coupled = build_two_qubit(&params(0.0, 0.2)).unwrap();
        let exposed = propagate(&coupled, &sched, &xi, 0.05).unwrap();
        assert!(exposed.max_abs_deviation(&tr) > 1e-2);
    }

    #[test]
    fn maneuver_shape_and_trivial_pair() {
        let s = maneuver_schedule(3, 0, 2, 0.25).unwrap();
        assert_eq!(s.segments.len(), 4);
        assert!((s.total_duration() - 1.0).abs() < 1e-12);
        assert_eq!(s.segments[2].controls, alloc::vec![-1.0, 0.0, 0.0]);
        assert!(maneuver_schedule(3, 0, 3, 0.1).is_err());
        assert!(maneuver_schedule(3, 0, 1, 0.0).is_err());
        let sys = build_two_qubit(&ScenarioParams::default()).unwrap();
        let u = maneuver_propagator(&sys.controls[0], &sys.controls[0], 0.7).unwrap();
        assert!(fro(&(u - CMat::identity(sys.dim(), sys.dim()))) < 1e-12);
    }

    #[test]
    fn maneuver_propagation_matches_product_formula() {
        let p = ScenarioParams {
            omega_env: 0.0,
            ..params(0.0, 0.0)
        };
        let sys = build_two_qubit(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xi = StateVector::random(&sys.space, &mut rng);
        let sched = maneuver_schedule(4, 0, 3, 0.2).unwrap();
        let tr = propagate(&sys, &sched, &xi, 0.2).unwrap();
        let want = maneuver_propagator(&sys.controls[0], &sys.controls[3], 0.2).unwrap() * xi.amplitudes();
        assert!((tr.final_state() - want).norm() < 1e-12);
    }

    #[test]
    fn cbh_residual_is_third_order() {
        let sp = crate::algebra::HilbertSpace::new(&[("q", 2)]).unwrap();
        let a = Operator::skew(sp.clone(), pauli::x() * (-I)).unwrap();
        let b = Operator::skew(sp.clone(), pauli::y() * (-I)).unwrap();
        let fit = cbh_order_check(&a, &b, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        assert!(!fit.exact);
        assert!((fit.slope.unwrap() - 3.0).abs() < 0.1, "{:?}", fit.slope);
        let z = Operator::skew(sp, pauli::z() * (-I)).unwrap();
        let fit = cbh_order_check(&z, &z.scale(2.0), &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        assert!(fit.exact && fit.slope.is_none());
        assert!(cbh_order_check(&a, &b, &[0.1, 0.2, 0.05, 0.01]).is_err());
    }

    #[test]
    fn bait_maneuver_generates_bait_field_direction() {
        let p = ScenarioParams::default();
        let sys = build_bait(&p).unwrap();
        let g = effective_generator(&sys.controls[5], &sys.controls[8], 1e-3).unwrap();
        let f = field_quadrature(p.w, p.n_env).unwrap();
        let target = embed_product(&[("bait", &pauli::x()), ("env", &f)], &sys.space).unwrap() * (-I);
        let m = direction_match(&g, &target);
        assert!(m.overlap > 0.9999, "{m:?}");
        assert!((m.constant + 2.0).abs() < 1e-2, "{m:?}");
    }

    #[test]
    fn commutator_chain_is_exact() {
        let p = ScenarioParams::default();
        let sys = build_bait(&p).unwrap();
        let chain = verify_commutator_chain(&sys, &p).unwrap();
        assert_eq!(chain.len(), 6);
        for e in &chain {
            assert!(e.residual < 1e-12, "{e:?}");
            assert!(e.constant.norm() > 0.5, "{e:?}");
            if let Some(d) = e.bait_identity_deviation {
                assert!(d < 1e-12, "{e:?}");
            }
        }
        let q = ScenarioParams { w: c(0.0, 0.0), ..p };
        let zero = verify_commutator_chain(&build_bait(&q).unwrap(), &q).unwrap();
        for e in zero.iter().filter(|e| e.name != "comm2") {
            assert!(e.norm == 0.0, "{e:?}");
        }
        assert!(verify_commutator_chain(&build_two_qubit(&p).unwrap(), &p).is_err());
    }

    #[test]
    fn word_search_finds_both_interaction_terms() {
        let p = ScenarioParams::default();
        let sys = build_bait(&p).unwrap();
        let found = search_interaction_words(&sys, &p, 12).unwrap();
        assert_eq!(found.len(), 2);
        for m in &found {
            let w = m.word.as_ref().expect("word found");
            assert!(w.size() <= 7, "{w}");
            assert!(m.residual < 1e-12 && m.constant.norm() > 0.5, "{m:?}");
        }
        let none = search_interaction_words(&sys, &p, 3).unwrap();
        assert!(none.iter().all(|m| m.word.is_none() && m.residual == 1.0));
    }

    #[test]
    fn every_restructured_control_is_a_bait_word() {
        let p = ScenarioParams::default();
        let sys = build_bait(&p).unwrap();
        let found = realize_restructured_controls(&sys, &p, 5, 12).unwrap();
        assert_eq!(found.len(), 24);
        for m in &found {
            let w = m.word.as_ref().expect("word found");
            let power: usize = m.target.rsplit('^').next().unwrap().parse().unwrap();
            assert!(w.size() == if power == 0 { 1 } else { power + 5 }, "{} {w}", m.target);
            assert!(m.residual < 1e-12, "{m:?}");
        }
        let short = realize_restructured_controls(&sys, &p, 5, 6).unwrap();
        assert_eq!(short.iter().filter(|m| m.word.is_some()).count(), 8);
        assert!(realize_restructured_controls(&build_two_qubit(&p).unwrap(), &p, 1, 8).is_err());
    }

    #[test]
    fn escalation_needs_the_second_power() {
        let p = ScenarioParams::default();
        let sys = build_restructured(&p, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xi = StateVector::random(&sys.space, &mut rng);
        assert!(escalation_residual(&p, 1, &xi, 1e-9).unwrap() > 0.1);
        assert!(escalation_residual(&p, 2, &xi, 1e-9).unwrap() < 1e-10);
        assert!(escalation_residual(&p, 0, &xi, 1e-9).is_err());
    }

    #[test]
    fn rank_survey_is_deterministic() {
        let sys = build_restructured(&ScenarioParams::default(), 5).unwrap();
        let a = rank_survey(&sys, 8, 9, 1e-9).unwrap();
        let b = rank_survey(&sys, 8, 9, 1e-9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.histogram.iter().map(|h| h.1).sum::<usize>(), 8);
    }

    fn fully_actuated_pair(mode: FeedbackMode, seed: u64, t: f64) -> (ClosedLoopRun, ClosedLoopRun) {
        let sys = build_fully_actuated(&ScenarioParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = StateVector::random(&sys.space, &mut rng);
        let v: Vec<f64> = (0..sys.controls.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let sched = PulseSchedule::constant(t, v).unwrap();
        let st = ClosedLoopSettings {
            mode,
            ..ClosedLoopSettings::default()
        };
        let a = propagate_closed_loop(&sys, &sys, &sched, &xi, st).unwrap();
        let b = propagate_closed_loop(&sys.without_interaction(), &sys, &sched, &xi, st).unwrap();
        (a, b)
    }

    #[test]
    fn oracle_cancellation_decouples_exactly() {
        let (a, b) = fully_actuated_pair(FeedbackMode::OracleCancel, 0, 1.0);
        assert!(a.aborted.is_none() && b.aborted.is_none());
        assert!(a.trace.max_deviation(&b.trace) < 1e-10);
    }

    #[test]
    fn literal_feedback_decouples_over_a_short_run() {
        let (a, b) = fully_actuated_pair(FeedbackMode::Literal, 4, 0.3);
        assert!(a.aborted.is_none() && b.aborted.is_none());
        assert_eq!(a.steps_synthesized, a.steps_total);
        assert!(a.trace.max_deviation(&b.trace) < 1e-6);
        assert!(a.trace.norm_drift < NORM_DRIFT_LIMIT);
        let (open, _) = fully_actuated_pair(FeedbackMode::OpenLoop, 4, 0.3);
        assert!(open.trace.max_deviation(&b.trace) > 1e-4);
    }

    #[test]
    fn vanishing_interaction_is_reported() {
        let sys = build_fully_actuated(&params(1.0, 0.0)).unwrap();
        let xi = StateVector::basis(&sys.space, 1).unwrap();
        let sched = PulseSchedule::constant(0.1, alloc::vec![0.0; sys.controls.len()]).unwrap();
        let run = propagate_closed_loop(&sys, &sys, &sched, &xi, ClosedLoopSettings::default()).unwrap();
        assert!(run.aborted.is_some());
        assert_eq!(run.audit[0].status, StepStatus::Failed);
        assert_eq!(run.steps_synthesized, 0);
    }
}
