//! The three-column decouplability table: open loop, closed loop, and
//! closed loop after restructuring the controls.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{lie_closure, StateVector};
use crate::error::Result;
use crate::models::{build_restructured, ControlSystem, Scenario, ScenarioParams};
use crate::observation::{
    build_c_tilde, check_closed_loop_necessary, check_interaction_brackets, check_open_loop, BracketScope,
    ClosureOrder, OperatorSpan, Verdict, Witness,
};
use crate::simulation::{escalation_residual, realize_restructured_controls};
use crate::tangent::{check_controlled_invariance, DistributionBasis};

pub const FINITE_ENV_FOOTNOTE: &str = "* under the additional assumption of a finite dimensional environment";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Answer {
    No,
    Yes,
    /// Yes, for a finite-dimensional environment only.
    YesFinite,
    NotApplicable,
}

impl Answer {
    pub fn symbol(&self) -> &'static str {
        match self {
            Answer::No => "NO",
            Answer::Yes => "YES",
            Answer::YesFinite => "YES*",
            Answer::NotApplicable => "-",
        }
    }

    pub fn is_yes(&self) -> bool {
        matches!(self, Answer::Yes | Answer::YesFinite)
    }
}

/// One table entry and the checks that decided it, in evaluation order.
#[derive(Clone, Debug)]
pub struct Cell {
    pub answer: Answer,
    pub evidence: Vec<Verdict>,
}

impl Cell {
    fn from_checks(evidence: Vec<Verdict>, yes: Answer) -> Self {
        let answer = if evidence.iter().all(|v| v.passed) {
            yes
        } else {
            Answer::No
        };
        Cell { answer, evidence }
    }

    /// Witness of the first failed check.
    pub fn witness(&self) -> Option<&Witness> {
        self.evidence
            .iter()
            .find(|v| !v.passed)
            .and_then(|v| v.witness.as_ref())
    }
}

/// How one restructured control is obtained from the scenario's controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub target: String,
    pub word: Option<String>,
    pub residual: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RowDiagnostics {
    pub c_tilde_dim: usize,
    /// Pointwise `[K_i, span{K_I}] ⊂ span{K_I} + G` at the sampled states.
    pub pointwise: Vec<bool>,
    pub realizations: Vec<Realization>,
    /// The same pointwise test on the restructured system.
    pub restructured_pointwise: Vec<bool>,
    /// Membership residual of `[K_I, σ_x^{(1)}F]` in `G` at powers 1 and 2.
    pub escalation: Option<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct TableRow {
    pub scenario: &'static str,
    pub open_loop: Cell,
    pub closed_loop: Cell,
    pub restructured: Cell,
    pub diagnostics: RowDiagnostics,
}

impl TableRow {
    pub fn answers(&self) -> [Answer; 3] {
        [self.open_loop.answer, self.closed_loop.answer, self.restructured.answer]
    }

    /// Whether the pointwise tests agree with the operator-level answers.
    pub fn stable(&self) -> bool {
        let agrees = |v: &[bool], a: Answer| v.iter().all(|&p| p == a.is_yes());
        agrees(&self.diagnostics.pointwise, self.closed_loop.answer)
            && (self.diagnostics.restructured_pointwise.is_empty()
                || agrees(&self.diagnostics.restructured_pointwise, self.restructured.answer))
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub rows: Vec<TableRow>,
    pub footnote: Option<&'static str>,
}

impl Table {
    /// Attaches the footnote when any entry holds only for a finite
    /// environment.
    pub fn from_rows(rows: Vec<TableRow>) -> Self {
        let finite = rows.iter().any(|r| r.answers().contains(&Answer::YesFinite));
        Table {
            rows,
            footnote: finite.then_some(FINITE_ENV_FOOTNOTE),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableOptions {
    pub max_power: usize,
    pub word_max_size: usize,
    pub states: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            max_power: 5,
            word_max_size: 12,
            states: 5,
            seed: 0,
            tol: 1e-9,
        }
    }
}

fn checked(condition: &str, description: String, magnitude: f64, tol: f64) -> Verdict {
    let passed = magnitude <= tol;
    Verdict {
        condition: condition.to_string(),
        passed,
        witness: (!passed).then_some(Witness { description, magnitude }),
        residual: magnitude,
    }
}

fn pointwise(sys: &ControlSystem, states: &[StateVector], tol: f64) -> Result<Vec<bool>> {
    states
        .iter()
        .map(|xi| {
            let d = DistributionBasis::from_linear_fields(xi, core::slice::from_ref(&sys.interaction), tol)?;
            Ok(check_controlled_invariance(&d, sys, &sys.controls, BracketScope::Controls, tol)?.passed)
        })
        .collect()
}

fn sample_states(sys: &ControlSystem, n: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StateVector::random(&sys.space, &mut rng)).collect()
}

/// Restructured controls expressed through the scenario's own controls:
/// bracket words for the bait system, control-algebra membership otherwise.
/// `None` when the scenario has no second qubit to restructure.
fn realize(
    sys: &ControlSystem,
    scenario: Scenario,
    p: &ScenarioParams,
    opts: &TableOptions,
) -> Result<Option<Vec<Realization>>> {
    if scenario == Scenario::Bait {
        let found = realize_restructured_controls(sys, p, opts.max_power, opts.word_max_size)?;
        return Ok(Some(
            found
                .into_iter()
                .map(|m| Realization {
                    target: m.target,
                    word: m.word.map(|w| w.to_string()),
                    residual: m.residual,
                })
                .collect(),
        ));
    }
    if sys.space.position("q2").is_err() || sys.space.position("bait").is_ok() {
        return Ok(None);
    }
    let n = sys.dim();
    let algebra = lie_closure(&sys.controls, 2 * n * n, opts.tol)?;
    let span = OperatorSpan::from_operators(&sys.space, &algebra, opts.tol);
    let target_sys = build_restructured(p, opts.max_power)?;
    let mut out = Vec::new();
    for (label, op) in target_sys.control_labels.iter().zip(&target_sys.controls) {
        let residual = span.residual(op);
        out.push(Realization {
            target: label.clone(),
            word: None,
            residual,
        });
    }
    Ok(Some(out))
}

/// Decides one row of the table. `Restructured` and `FullyActuated` have no
/// restructured column.
pub fn decouplability_row(scenario: Scenario, p: &ScenarioParams, opts: &TableOptions) -> Result<TableRow> {
    let sys = scenario.build(p)?;
    let tol = opts.tol;
    let n = sys.dim();
    let c_tilde = build_c_tilde(&sys, 2 * n * n, ClosureOrder::ControlsFirst, tol)?;
    let mut diagnostics = RowDiagnostics {
        c_tilde_dim: c_tilde.dim(),
        ..RowDiagnostics::default()
    };

    let open = check_open_loop(&sys, &c_tilde, tol)?;
    let open_loop = Cell::from_checks(alloc::vec![open.clone()], Answer::Yes);

    let mut closed = alloc::vec![check_closed_loop_necessary(&sys, &c_tilde, tol)?];
    if closed[0].passed && !open.passed {
        closed.push(check_interaction_brackets(&sys, tol)?);
    }
    let closed_loop = Cell::from_checks(closed.clone(), Answer::Yes);

    let states = sample_states(&sys, opts.states, opts.seed);
    diagnostics.pointwise = pointwise(&sys, &states, tol)?;

    let restructured = if matches!(scenario, Scenario::Restructured { .. } | Scenario::FullyActuated) {
        Cell {
            answer: Answer::NotApplicable,
            evidence: Vec::new(),
        }
    } else if closed_loop.answer.is_yes() {
        closed_loop.clone()
    } else {
        let mut evidence = alloc::vec![closed[0].clone()];
        if closed[0].passed {
            evidence.extend(restructured_checks(&sys, scenario, p, opts, &mut diagnostics)?);
        } else if let Some(found) = realize(&sys, scenario, p, opts)? {
            evidence.push(realizability_verdict(&found, tol));
            diagnostics.realizations = found;
        }
        Cell::from_checks(evidence, Answer::YesFinite)
    };

    Ok(TableRow {
        scenario: scenario.name(),
        open_loop,
        closed_loop,
        restructured,
        diagnostics,
    })
}

fn realizability_verdict(found: &[Realization], tol: f64) -> Verdict {
    let cond = "restructured controls realizable";
    let worst = found.iter().fold(None::<&Realization>, |acc, r| match acc {
        Some(a) if a.residual >= r.residual => acc,
        _ => Some(r),
    });
    match worst {
        Some(r) => checked(
            cond,
            format!("{} not generated by the controls", r.target),
            r.residual,
            tol,
        ),
        None => checked(cond, String::new(), 0.0, tol),
    }
}

fn restructured_checks(
    sys: &ControlSystem,
    scenario: Scenario,
    p: &ScenarioParams,
    opts: &TableOptions,
    diagnostics: &mut RowDiagnostics,
) -> Result<Vec<Verdict>> {
    let mut evidence = Vec::new();
    let Some(found) = realize(sys, scenario, p, opts)? else {
        return Ok(evidence);
    };
    evidence.push(realizability_verdict(&found, opts.tol));
    diagnostics.realizations = found;
    if !evidence[0].passed {
        return Ok(evidence);
    }
    let target = build_restructured(p, opts.max_power)?;
    evidence.push(check_interaction_brackets(&target, opts.tol)?);
    let states = sample_states(&target, opts.states, opts.seed);
    diagnostics.restructured_pointwise = pointwise(&target, &states, opts.tol)?;
    if opts.max_power >= 2 {
        if let Some(xi) = states.first() {
            diagnostics.escalation = Some([
                escalation_residual(p, 1, xi, opts.tol)?,
                escalation_residual(p, 2, xi, opts.tol)?,
            ]);
        }
    }
    Ok(evidence)
}

pub fn decouplability_table(scenarios: &[Scenario], p: &ScenarioParams, opts: &TableOptions) -> Result<Table> {
    let rows = scenarios
        .iter()
        .map(|&s| decouplability_row(s, p, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Table::from_rows(rows))
}

/// Plain-text table followed by the witness of every NO.
pub fn render_table(table: &Table) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16}{:<12}{:<14}restructured",
        "scenario", "open loop", "closed loop"
    );
    for r in &table.rows {
        let [a, b, c] = r.answers();
        let _ = writeln!(
            s,
            "{:<16}{:<12}{:<14}{}",
            r.scenario,
            a.symbol(),
            b.symbol(),
            c.symbol()
        );
    }
    if let Some(f) = table.footnote {
        let _ = writeln!(s, "{f}");
    }
    let _ = writeln!(s);
    for r in &table.rows {
        for (name, cell) in [
            ("open loop", &r.open_loop),
            ("closed loop", &r.closed_loop),
            ("restructured", &r.restructured),
        ] {
            if let Some(w) = cell.witness() {
                let _ = writeln!(s, "{} / {}: {} ({:.3e})", r.scenario, name, w.description, w.magnitude);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn single_qubit_row_fails_on_the_output_commutator() {
        let row = decouplability_row(
            Scenario::SingleQubit,
            &ScenarioParams::default(),
            &TableOptions::default(),
        )
        .unwrap();
        assert_eq!(row.answers(), [Answer::No; 3]);
        for cell in [&row.open_loop, &row.closed_loop, &row.restructured] {
            assert_eq!(cell.witness().unwrap().description, "[C, H_SB] != 0");
        }
        assert!(row.diagnostics.realizations.is_empty());
        assert!(row.stable());
    }

    #[test]
    fn two_qubit_controls_cannot_reach_the_environment() {
        let row = decouplability_row(Scenario::TwoQubit, &ScenarioParams::default(), &TableOptions::default()).unwrap();
        assert_eq!(row.answers(), [Answer::No; 3]);
        assert!(row.closed_loop.witness().unwrap().description.ends_with("not in C~"));
        let r = &row.diagnostics.realizations;
        assert_eq!(r.len(), 24);
        assert!(r
            .iter()
            .filter(|x| x.target.ends_with("F^0"))
            .all(|x| x.residual < 1e-12));
        assert!(r
            .iter()
            .filter(|x| !x.target.ends_with("F^0"))
            .all(|x| x.residual > 0.1));
        assert!(!row.restructured.evidence[1].passed);
    }

    #[test]
    fn no_interaction_means_yes_everywhere() {
        let p = ScenarioParams {
            g: c(0.0, 0.0),
            ..ScenarioParams::default()
        };
        let t = decouplability_table(
            &[Scenario::SingleQubit, Scenario::TwoQubit],
            &p,
            &TableOptions::default(),
        )
        .unwrap();
        assert!(t.rows.iter().all(|r| r.answers() == [Answer::Yes; 3]));
        assert!(t.footnote.is_none());
        let text = render_table(&t);
        assert!(text.contains("two_qubit") && !text.contains("NO"));
    }

    #[test]
    fn symbols() {
        let s: Vec<_> = [Answer::No, Answer::Yes, Answer::YesFinite, Answer::NotApplicable]
            .iter()
            .map(|a| a.symbol())
            .collect();
        assert_eq!(s, ["NO", "YES", "YES*", "-"]);
        assert!(Answer::YesFinite.is_yes() && !Answer::NotApplicable.is_yes());
    }
}
