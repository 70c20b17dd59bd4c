//! Run configuration: a versioned JSON document. Every field has a default,
//! and the resolved configuration is echoed into each report.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use qdd_core::linalg::c;
use qdd_core::models::{Scenario, ScenarioParams};
use qdd_core::simulation::{ClosedLoopSettings, FeedbackMode, Integrator, RankPolicy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    SingleQubit,
    TwoQubit,
    Bait,
    Restructured,
    FullyActuated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Literal,
    Regularized,
    #[value(name = "oracle_cancel")]
    OracleCancel,
    #[value(name = "open_loop")]
    OpenLoop,
}

impl From<ModeName> for FeedbackMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Literal => FeedbackMode::Literal,
            ModeName::Regularized => FeedbackMode::Regularized,
            ModeName::OracleCancel => FeedbackMode::OracleCancel,
            ModeName::OpenLoop => FeedbackMode::OpenLoop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Abort,
    FreezeLastLaw,
    OpenLoopFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorName {
    CommutatorFree4,
    Rk4,
    ZeroOrderHold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Haar-random state drawn from the run seed.
    Random,
    /// `(c_1|01⟩ + c_2|10⟩)|0⟩`, normalized; two-qubit layouts only.
    Dfs {
        c1: [f64; 2],
        c2: [f64; 2],
    },
    Basis {
        index: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub omega0: f64,
    pub omega_env: f64,
    /// Coupling `[re, im]`.
    pub g: [f64; 2],
    /// Bait-field amplitude `[re, im]`.
    pub w: [f64; 2],
    pub j1: f64,
    pub j2: f64,
    pub n_env: usize,
}

impl Default for Params {
    fn default() -> Self {
        let p = ScenarioParams::default();
        Params {
            omega0: p.omega0,
            omega_env: p.omega_env,
            g: [p.g.re, p.g.im],
            w: [p.w.re, p.w.im],
            j1: p.j1,
            j2: p.j2,
            n_env: p.n_env,
        }
    }
}

impl Params {
    pub fn to_core(&self) -> ScenarioParams {
        ScenarioParams {
            omega0: self.omega0,
            omega_env: self.omega_env,
            g: c(self.g[0], self.g[1]),
            w: c(self.w[0], self.w[1]),
            j1: self.j1,
            j2: self.j2,
            n_env: self.n_env,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverConfig {
    /// 1-based control indices.
    pub i: usize,
    pub j: usize,
    /// Decreasing segment times for the order fit.
    pub times: Vec<f64>,
    /// Segment time at which the generated direction is compared.
    pub direction_time: f64,
    /// Also report the bait commutator chain and the interaction words.
    pub chain: bool,
}

impl Default for ManeuverConfig {
    fn default() -> Self {
        ManeuverConfig {
            i: 6,
            j: 9,
            times: vec![0.1, 0.05, 0.025, 0.0125],
            direction_time: 1e-3,
            chain: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Unset: `check` tabulates single_qubit, two_qubit and bait; the other
    /// commands use their own default scenario.
    pub scenario: Option<ScenarioName>,
    pub params: Params,
    /// Highest power of `F(w)` in the restructured controls.
    pub max_power: usize,
    pub tol: f64,
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub feedback_mode: ModeName,
    pub rank_policy: PolicyName,
    pub integrator: IntegratorName,
    /// Constant controls (open loop) or external inputs (feedback). Unset:
    /// zeros in open loop, uniform in `±v_amplitude` under feedback.
    pub controls: Option<Vec<f64>>,
    pub v_amplitude: f64,
    pub initial_state: InitialState,
    /// Sampled states for `rank` and `synthesize-audit`.
    pub states: usize,
    /// Sampled states for the pointwise stability check of `check`.
    pub table_states: usize,
    pub word_max_size: usize,
    pub maneuver: ManeuverConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            scenario: None,
            params: Params::default(),
            max_power: 5,
            tol: 1e-9,
            seed: 0,
            horizon: 0.5,
            dt: 0.01,
            feedback_mode: ModeName::Literal,
            rank_policy: PolicyName::Abort,
            integrator: IntegratorName::CommutatorFree4,
            controls: None,
            v_amplitude: 0.5,
            initial_state: InitialState::Random,
            states: 100,
            table_states: 5,
            word_max_size: 12,
            maneuver: ManeuverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                Config::parse(&text)?
            }
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return err("tol must lie in (0, 1e-3]");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return err("horizon must be positive");
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return err("dt must be positive and at most the horizon");
        }
        if !(self.v_amplitude >= 0.0 && self.v_amplitude.is_finite()) {
            return err("v_amplitude must be non-negative");
        }
        if self.states == 0 || self.table_states == 0 {
            return err("state counts must be positive");
        }
        if self.maneuver.i == 0 || self.maneuver.j == 0 {
            return err("maneuver indices are 1-based");
        }
        self.params
            .to_core()
            .validate()
            .map_err(|e| ConfigError(format!("params: {e}")))
    }

    pub fn scenario_or(&self, fallback: ScenarioName) -> Scenario {
        self.scenario_of(self.scenario.unwrap_or(fallback))
    }

    pub fn scenario_of(&self, name: ScenarioName) -> Scenario {
        match name {
            ScenarioName::SingleQubit => Scenario::SingleQubit,
            ScenarioName::TwoQubit => Scenario::TwoQubit,
            ScenarioName::Bait => Scenario::Bait,
            ScenarioName::Restructured => Scenario::Restructured {
                max_power: self.max_power,
            },
            ScenarioName::FullyActuated => Scenario::FullyActuated,
        }
    }

    pub fn closed_loop_settings(&self) -> ClosedLoopSettings {
        ClosedLoopSettings {
            mode: self.feedback_mode.into(),
            policy: match self.rank_policy {
                PolicyName::Abort => RankPolicy::Abort,
                PolicyName::FreezeLastLaw => RankPolicy::FreezeLastLaw,
                PolicyName::OpenLoopFallback => RankPolicy::OpenLoopFallback,
            },
            integrator: match self.integrator {
                IntegratorName::CommutatorFree4 => Integrator::CommutatorFree4,
                IntegratorName::Rk4 => Integrator::Rk4,
                IntegratorName::ZeroOrderHold => Integrator::ZeroOrderHold,
            },
            dt: self.dt,
            tol: self.tol,
            ..ClosedLoopSettings::default()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(Config::parse("{}").unwrap(), Config::default());
        Config::default().validate().unwrap();
    }

    #[test]
    fn defaults_roundtrip() {
        let text = serde_json::to_string(&Config::default()).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }

    #[test]
    fn partial_documents_fill_in() {
        let cfg = Config::parse(
            r#"{"scenario": "two_qubit", "params": {"g": [0.2, 0]}, "initial_state": {"kind": "dfs", "c1": [1, 0], "c2": [0, 1]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario, Some(ScenarioName::TwoQubit));
        assert_eq!(cfg.params.g, [0.2, 0.0]);
        assert_eq!(cfg.params.n_env, 3);
        assert!(matches!(cfg.initial_state, InitialState::Dfs { .. }));
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(Config::parse(r#"{"scenraio": "bait"}"#).is_err());
        assert!(Config::parse(r#"{"scenario": "three_qubit"}"#).is_err());
        assert!(Config::parse("{").is_err());
        for doc in [
            r#"{"schema_version": 2}"#,
            r#"{"tol": 0.1}"#,
            r#"{"tol": 0}"#,
            r#"{"horizon": -1}"#,
            r#"{"dt": 0}"#,
            r#"{"params": {"n_env": 1}}"#,
            r#"{"maneuver": {"i": 0}}"#,
        ] {
            assert!(Config::parse(doc).unwrap().validate().is_err(), "{doc}");
        }
    }

    #[test]
    fn restructured_picks_up_the_power() {
        let cfg = Config {
            max_power: 2,
            ..Config::default()
        };
        assert_eq!(
            cfg.scenario_of(ScenarioName::Restructured),
            Scenario::Restructured { max_power: 2 }
        );
        assert_eq!(cfg.scenario_or(ScenarioName::Bait), Scenario::Bait);
    }
}
