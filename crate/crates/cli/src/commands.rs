use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use qdd_core::algebra::StateVector;
use qdd_core::feedback::{BetaMode, FrameStrategy, Synthesizer};
use qdd_core::linalg::c;
use qdd_core::models::{ControlSystem, Scenario};
use qdd_core::simulation::{
    cbh_order_check, dfs_state, direction_match, effective_generator, leave_dfs_reference, maneuver_schedule,
    propagate, propagate_closed_loop, rank_at, rank_survey, search_interaction_words, verify_commutator_chain,
    FeedbackMode, PulseSchedule, RankPolicy,
};
use qdd_core::tangent::bracket_linear_fields;
use qdd_core::verdict::{decouplability_row, render_table, Table, TableOptions};
use qdd_core::Error;

use crate::config::{Config, InitialState, ScenarioName};
use crate::report::{self, Outputs};
use crate::Failure;

fn base_report(cfg: &Config, command: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("config".into(), cfg.to_json());
    m
}

fn config_error(m: impl Into<String>) -> Failure {
    Failure::Config(m.into())
}

pub fn check(cfg: &Config, out: &Outputs) -> Result<i32, Failure> {
    let p = cfg.params.to_core();
    let scenarios: Vec<Scenario> = match cfg.scenario {
        Some(n) => vec![cfg.scenario_of(n)],
        None => [ScenarioName::SingleQubit, ScenarioName::TwoQubit, ScenarioName::Bait]
            .into_iter()
            .map(|n| cfg.scenario_of(n))
            .collect(),
    };
    let opts = TableOptions {
        max_power: cfg.max_power,
        word_max_size: cfg.word_max_size,
        states: cfg.table_states,
        seed: cfg.seed,
        tol: cfg.tol,
    };
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|&sc| s.spawn(move || decouplability_row(sc, &p, &opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let table = Table::from_rows(rows);
    out.text("table.txt", &render_table(&table))?;
    let mut rep = base_report(cfg, "check");
    rep.insert("table_rows".into(), table.rows.iter().map(report::table_row).collect());
    rep.insert("footnote".into(), json!(table.footnote));
    rep.insert(
        "diagnostics".into(),
        table.rows.iter().map(report::row_diagnostics).collect(),
    );
    out.json("report.json", &Value::Object(rep))?;
    Ok(0)
}

fn initial_state(cfg: &Config, sys: &ControlSystem, rng: &mut ChaCha8Rng) -> Result<StateVector, Failure> {
    match &cfg.initial_state {
        InitialState::Random => Ok(StateVector::random(&sys.space, rng)),
        InitialState::Basis { index } => {
            StateVector::basis(&sys.space, *index).map_err(|e| config_error(format!("initial_state: {e}")))
        }
        InitialState::Dfs { c1, c2 } => {
            if sys.space.position("q2").is_err() || sys.space.position("bait").is_ok() {
                return Err(config_error("initial_state dfs needs a two-qubit layout"));
            }
            dfs_state(sys, c(c1[0], c1[1]), c(c2[0], c2[1])).map_err(|e| config_error(format!("initial_state: {e}")))
        }
    }
}

fn input_values(cfg: &Config, m: usize, rng: &mut ChaCha8Rng, random: bool) -> Result<Vec<f64>, Failure> {
    match &cfg.controls {
        Some(u) if u.len() != m => Err(config_error(format!(
            "controls: expected {m} values, found {}",
            u.len()
        ))),
        Some(u) => Ok(u.clone()),
        None if random => Ok((0..m)
            .map(|_| rng.random_range(-cfg.v_amplitude..=cfg.v_amplitude))
            .collect()),
        None => Ok(vec![0.0; m]),
    }
}

fn is_synthesis_error(e: &Error) -> bool {
    matches!(
        e,
        Error::RankDeficiency { .. } | Error::FrameNotExpressible(_) | Error::InteractionVanishes
    )
}

pub fn simulate(cfg: &Config, out: &Outputs, audit: bool) -> Result<i32, Failure> {
    let p = cfg.params.to_core();
    let sys = cfg.scenario_or(ScenarioName::TwoQubit).build(&p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xi = initial_state(cfg, &sys, &mut rng)?;
    let uncoupled = sys.without_interaction();
    let mode: FeedbackMode = cfg.feedback_mode.into();
    let feedback = mode != FeedbackMode::OpenLoop;
    let u = input_values(cfg, sys.controls.len(), &mut rng, feedback)?;
    let sched = PulseSchedule::constant(cfg.horizon, u.clone())?;
    let mut rep = base_report(cfg, "simulate");
    rep.insert("scenario".into(), json!(sys.scenario));
    rep.insert("inputs".into(), json!(u));
    let mut code = 0;
    let (a, b) = if feedback {
        let settings = cfg.closed_loop_settings();
        let ra = propagate_closed_loop(&sys, &sys, &sched, &xi, settings)?;
        let rb = propagate_closed_loop(&uncoupled, &sys, &sched, &xi, settings)?;
        if audit {
            out.jsonl("audit_coupled.jsonl", ra.audit.iter().map(report::audit_record))?;
            out.jsonl("audit_uncoupled.jsonl", rb.audit.iter().map(report::audit_record))?;
        }
        rep.insert("coupled_run".into(), report::run_summary(&ra));
        rep.insert("uncoupled_run".into(), report::run_summary(&rb));
        for e in [&ra.aborted, &rb.aborted].into_iter().flatten() {
            let c = if is_synthesis_error(e) { 4 } else { 3 };
            code = code.max(c);
        }
        (ra.trace, rb.trace)
    } else {
        (
            propagate(&sys, &sched, &xi, cfg.dt)?,
            propagate(&uncoupled, &sched, &xi, cfg.dt)?,
        )
    };
    out.trace("trace_coupled.csv", &a)?;
    out.trace("trace_uncoupled.csv", &b)?;
    rep.insert("coupled".into(), report::trace_summary(&a));
    rep.insert("uncoupled".into(), report::trace_summary(&b));
    let common = a.times.len().min(b.times.len());
    rep.insert(
        "comparison".into(),
        json!({
            "common_samples": common,
            "compared_until": a.times.get(common.saturating_sub(1)),
            "max_deviation": a.max_deviation(&b),
            "max_abs_deviation": a.max_abs_deviation(&b),
        }),
    );
    if let (InitialState::Dfs { c1, c2 }, false) = (&cfg.initial_state, feedback) {
        rep.insert(
            "leave_dfs_reference_error".into(),
            leave_dfs_error(&sys, &a, *c1, *c2, &u)?,
        );
    }
    out.json("report.json", &Value::Object(rep))?;
    Ok(code)
}

/// Distance of the coupled trace from the closed-form evolution under
/// `u = (1, 0, 0, 0)` alone; `null` for other inputs or when drift or
/// coupling is present.
fn leave_dfs_error(
    sys: &ControlSystem,
    t: &qdd_core::simulation::Trace,
    c1: [f64; 2],
    c2: [f64; 2],
    u: &[f64],
) -> Result<Value, Failure> {
    let only_first = u.first() == Some(&1.0) && u[1..].iter().all(|&x| x == 0.0);
    if !only_first || sys.drift.norm() != 0.0 || sys.interaction.norm() != 0.0 {
        return Ok(Value::Null);
    }
    let norm = (c1[0] * c1[0] + c1[1] * c1[1] + c2[0] * c2[0] + c2[1] * c2[1]).sqrt();
    let (a, b) = (c(c1[0] / norm, c1[1] / norm), c(c2[0] / norm, c2[1] / norm));
    let mut worst = 0.0f64;
    for (&time, x) in t.times.iter().zip(&t.states) {
        worst = worst.max((x - leave_dfs_reference(sys, a, b, time)?).norm());
    }
    Ok(json!(worst))
}

pub fn rank(cfg: &Config, out: &Outputs) -> Result<i32, Failure> {
    let p = cfg.params.to_core();
    let sys = cfg.scenario_or(ScenarioName::Restructured).build(&p)?;
    let survey = rank_survey(&sys, cfg.states, cfg.seed, cfg.tol)?;
    let generic = survey.histogram.last().map(|h| h.0).unwrap_or(0);
    let basis = rank_at(&sys, &StateVector::basis(&sys.space, 0)?, cfg.tol)?;
    let mut rep = base_report(cfg, "rank");
    rep.insert("scenario".into(), json!(sys.scenario));
    rep.insert("controls".into(), json!(sys.controls.len()));
    rep.insert("tangent_dim".into(), json!(2 * sys.dim() - 1));
    rep.insert(
        "histogram".into(),
        survey
            .histogram
            .iter()
            .map(|(r, n)| json!({"rank": r, "count": n}))
            .collect(),
    );
    rep.insert("generic_rank".into(), json!(generic));
    rep.insert("member_fraction".into(), json!(survey.member_fraction));
    rep.insert(
        "samples".into(),
        survey
            .samples
            .iter()
            .map(|s| json!({"rank": s.rank, "interaction_residual": s.interaction_residual}))
            .collect(),
    );
    rep.insert(
        "product_basis_state".into(),
        json!({
            "rank": basis.rank,
            "interaction_residual": basis.interaction_residual,
            "degenerate": basis.rank < generic,
        }),
    );
    out.json("report.json", &Value::Object(rep))?;
    Ok(0)
}

pub fn maneuver(cfg: &Config, out: &Outputs, i: usize, j: usize, chain: bool) -> Result<i32, Failure> {
    let p = cfg.params.to_core();
    let sys = cfg.scenario_or(ScenarioName::Bait).build(&p)?;
    let m = sys.controls.len();
    for k in [i, j] {
        if k == 0 || k > m {
            return Err(config_error(format!("control index {k} outside 1..={m}")));
        }
    }
    let (a, b) = (&sys.controls[i - 1], &sys.controls[j - 1]);
    let t = cfg.maneuver.direction_time;
    let sched = maneuver_schedule(m, i - 1, j - 1, t).map_err(|e| config_error(format!("maneuver: {e}")))?;
    let fit = cbh_order_check(a, b, &cfg.maneuver.times).map_err(|e| config_error(format!("maneuver: {e}")))?;
    let bracket = bracket_linear_fields(a, b)?;
    let mut rep = base_report(cfg, "maneuver");
    rep.insert("scenario".into(), json!(sys.scenario));
    rep.insert(
        "pair".into(),
        json!({"i": i, "j": j, "labels": [sys.control_labels[i - 1], sys.control_labels[j - 1]]}),
    );
    rep.insert(
        "schedule".into(),
        sched
            .segments
            .iter()
            .map(|s| json!({"duration": s.duration, "controls": s.controls}))
            .collect(),
    );
    rep.insert("bracket_norm".into(), json!(bracket.norm()));
    rep.insert("exact_zero".into(), json!(bracket.norm() == 0.0));
    rep.insert(
        "cbh".into(),
        json!({"times": fit.times, "residuals": fit.residuals, "slope": fit.slope, "exact": fit.exact}),
    );
    let dm = direction_match(&effective_generator(a, b, t)?, bracket.matrix());
    rep.insert(
        "direction".into(),
        json!({"time": t, "overlap": dm.overlap, "constant": dm.constant}),
    );
    if chain {
        let entries = verify_commutator_chain(&sys, &p)?;
        rep.insert(
            "chain".into(),
            entries
                .iter()
                .map(|e| {
                    json!({
                        "name": e.name,
                        "expression": e.expression,
                        "target": e.target,
                        "constant": report::complex(e.constant),
                        "residual": e.residual,
                        "norm": e.norm,
                        "bait_identity_deviation": e.bait_identity_deviation,
                    })
                })
                .collect(),
        );
        let words = search_interaction_words(&sys, &p, cfg.word_max_size)?;
        rep.insert(
            "interaction_words".into(),
            words
                .iter()
                .map(|w| {
                    json!({
                        "target": w.target,
                        "word": w.word.as_ref().map(|x| x.to_string()),
                        "size": w.word.as_ref().map(|x| x.size()),
                        "constant": report::complex(w.constant),
                        "residual": w.residual,
                    })
                })
                .collect(),
        );
    }
    out.json("report.json", &Value::Object(rep))?;
    Ok(0)
}

pub fn synthesize_audit(cfg: &Config, out: &Outputs) -> Result<i32, Failure> {
    let p = cfg.params.to_core();
    let sys = cfg.scenario_or(ScenarioName::FullyActuated).build(&p)?;
    let settings = cfg.closed_loop_settings();
    let beta = match settings.mode {
        FeedbackMode::Literal => BetaMode::Literal,
        FeedbackMode::Regularized => BetaMode::Regularized,
        _ => {
            return Err(config_error(
                "synthesize-audit needs feedback_mode literal or regularized",
            ))
        }
    };
    let synth = Synthesizer::new(&sys, FrameStrategy::CommutantWithBlockWeights, beta, cfg.tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.states);
    let (mut ok, mut failed) = (0usize, 0usize);
    for k in 0..cfg.states {
        let xi = StateVector::random(&sys.space, &mut rng);
        let rec = match synth.law(&sys, &xi) {
            Ok(l) => {
                ok += 1;
                json!({
                    "state": k,
                    "status": "synthesized",
                    "frame_rank": l.frame_rank,
                    "cond_d": l.cond_d,
                    "expression_residual": l.expression_residual,
                    "beta_nonsingular": l.beta_nonsingular(cfg.tol),
                    "selected": l.selected,
                })
            }
            Err(e) if is_synthesis_error(&e) => {
                failed += 1;
                json!({"state": k, "status": "failed", "error": report::error(&e)})
            }
            Err(e) => return Err(e.into()),
        };
        records.push(rec);
    }
    out.jsonl("audit_synthesis.jsonl", records)?;
    let mut rep = base_report(cfg, "synthesize-audit");
    rep.insert("scenario".into(), json!(sys.scenario));
    rep.insert("states".into(), json!(cfg.states));
    rep.insert("synthesized".into(), json!(ok));
    rep.insert("failed".into(), json!(failed));
    out.json("report.json", &Value::Object(rep))?;
    Ok(if failed > 0 && settings.policy == RankPolicy::Abort {
        4
    } else {
        0
    })
}
