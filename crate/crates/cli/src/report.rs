//! JSON views of core results and the output directory writer.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qdd_core::linalg::C64;
use qdd_core::observation::Verdict;
use qdd_core::simulation::{AuditRecord, ClosedLoopRun, Trace};
use qdd_core::verdict::{Cell, TableRow};
use qdd_core::Error;

use crate::Failure;

pub fn complex(z: C64) -> Value {
    json!([z.re, z.im])
}

pub fn verdict(v: &Verdict) -> Value {
    json!({
        "condition": v.condition,
        "passed": v.passed,
        "residual": v.residual,
        "witness": v.witness.as_ref().map(|w| json!({"description": w.description, "magnitude": w.magnitude})),
    })
}

fn cell(c: &Cell) -> Value {
    json!({
        "answer": c.answer.symbol(),
        "evidence": c.evidence.iter().map(verdict).collect::<Vec<_>>(),
    })
}

pub fn table_row(r: &TableRow) -> Value {
    json!({
        "scenario": r.scenario,
        "open_loop": cell(&r.open_loop),
        "closed_loop": cell(&r.closed_loop),
        "closed_loop_restructured": cell(&r.restructured),
    })
}

pub fn row_diagnostics(r: &TableRow) -> Value {
    let d = &r.diagnostics;
    json!({
        "scenario": r.scenario,
        "c_tilde_dim": d.c_tilde_dim,
        "pointwise_closed_loop": d.pointwise,
        "pointwise_restructured": d.restructured_pointwise,
        "stable_across_states": r.stable(),
        "realizations": d.realizations.iter().map(|x| json!({
            "target": x.target,
            "word": x.word,
            "residual": x.residual,
        })).collect::<Vec<_>>(),
        "escalation_residuals": d.escalation.map(|[a, b]| json!({"max_power_1": a, "max_power_2": b})),
    })
}

/// Error with the achieved and required ranks spelled out when present.
pub fn error(e: &Error) -> Value {
    match e {
        Error::RankDeficiency { achieved, required } => json!({
            "message": e.to_string(),
            "achieved_rank": achieved,
            "required_rank": required,
        }),
        _ => json!({ "message": e.to_string() }),
    }
}

pub fn audit_record(r: &AuditRecord) -> Value {
    let law = r.law.as_ref().map(|l| {
        json!({
            "frame_rank": l.frame_rank,
            "cond_d": l.cond_d,
            "expression_residual": l.expression_residual,
            "beta_nonsingular": l.beta_nonsingular(1e-9),
            "selected": l.selected,
            "alpha": l.alpha.as_slice(),
            "beta": (0..l.beta.nrows()).map(|i| l.beta.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        })
    });
    json!({
        "step": r.step,
        "t": r.t,
        "status": r.status.name(),
        "error": r.error.as_ref().map(error),
        "controls": r.controls,
        "law": law,
    })
}

pub fn run_summary(run: &ClosedLoopRun) -> Value {
    json!({
        "mode": run.trace.meta.mode,
        "steps_total": run.steps_total,
        "steps_synthesized": run.steps_synthesized,
        "samples": run.trace.times.len(),
        "norm_drift": run.trace.norm_drift,
        "frame_switches": run.frame_switches(),
        "worst_condition": run.worst_condition(),
        "aborted": run.aborted.as_ref().map(error),
    })
}

pub fn trace_summary(t: &Trace) -> Value {
    let abs: Vec<f64> = t.y_values.iter().map(|y| y.norm()).collect();
    let hi = abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = abs.iter().copied().fold(f64::INFINITY, f64::min);
    json!({
        "samples": t.times.len(),
        "final_y": complex(*t.y_values.last().expect("traces hold the initial sample")),
        "abs_y_variation": hi - lo,
        "norm_drift": t.norm_drift,
    })
}

/// Seventeen significant digits, locale independent.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn io(&self, name: &str, e: impl std::fmt::Display) -> Failure {
        Failure::Io(format!("{}: {e}", self.path(name).display()))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), Failure> {
        fs::write(self.path(name), body).map_err(|e| self.io(name, e))
    }

    pub fn json(&self, name: &str, v: &Value) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(v).expect("values serialize");
        s.push('\n');
        self.text(name, &s)
    }

    pub fn trace(&self, name: &str, t: &Trace) -> Result<(), Failure> {
        let mut w = csv::Writer::from_path(self.path(name)).map_err(|e| self.io(name, e))?;
        let rows = std::iter::once(["t", "re_y", "im_y", "abs_y", "norm_drift"].map(String::from)).chain(
            t.times
                .iter()
                .zip(&t.y_values)
                .zip(&t.drifts)
                .map(|((&time, y), &d)| [num(time), num(y.re), num(y.im), num(y.norm()), num(d)]),
        );
        for row in rows {
            w.write_record(&row).map_err(|e| self.io(name, e))?;
        }
        w.flush().map_err(|e| self.io(name, e))
    }

    pub fn jsonl(&self, name: &str, records: impl IntoIterator<Item = Value>) -> Result<(), Failure> {
        let mut f = fs::File::create(self.path(name)).map_err(|e| self.io(name, e))?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(&r).expect("values serialize")).map_err(|e| self.io(name, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn rank_errors_report_both_ranks() {
        let v = error(&Error::RankDeficiency {
            achieved: 22,
            required: 23,
        });
        assert_eq!(v["achieved_rank"], 22);
        assert_eq!(v["required_rank"], 23);
        assert!(error(&Error::SpaceMismatch).get("achieved_rank").is_none());
    }
}
