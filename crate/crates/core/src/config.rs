//! TOML scenario files.
//!
//! ```toml
//! name = "exp2"
//! duration = 2.0
//! dt = 1e-5          # optional, default 1e-5
//! decimate = 10      # optional, default 10
//!
//! [bank]
//! inductance = [2.83e-3, 1.3e-3]
//! capacitance = 22e-3
//! load = 20.0
//! source = [24.0, 24.0]
//! esr = [0.1, 0.1]   # optional
//!
//! [controller]
//! kind = "robust"    # robust | known_load | open_loop
//! k_d = 1.0
//! k_i = 10.0
//! k_lambda = 0.1     # scalar (times identity) or matrix rows
//! q_ref = 0.264
//!
//! [cost]
//! kind = "quadratic"
//! k1 = [0.1623e5, 1.8343e5]
//! k2 = [130.7, 27.7]
//!
//! [[event]]
//! t = 1.0
//! action = "set_load"
//! value = 5.0
//!
//! [[check]]
//! kind = "q_regulation"
//! at = 1.0
//! tolerance = 0.005
//! ```
//!
//! Optional sections: `[design]` (`e_tilde`, `e_eq`; default mean source
//! voltage), `[plant]` (`esr`, `pre_feedback`, `controller_esr`), `[mode]`
//! (`kind = "continuous"` or `kind = "sampled"` with `rate`), `[initial]`
//! (`phi`, `q`, `xi`; default zero).

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::controllers::RobustConfig;
use crate::coordinates::DesignVoltages;
use crate::costs::Cost;
use crate::model::BankParams;
use crate::presets::{DEFAULT_DECIMATE, DEFAULT_DT};
use crate::sim::{
    ControlMode, ControllerSpec, Event, InitialState, MuProfile, PlantOptions, Scenario, TimedEvent,
};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    /// Syntax or schema error; `line` is 1-based when known.
    Parse {
        line: Option<usize>,
        message: String,
    },
    Invalid {
        field: String,
        reason: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse {
                line: Some(l),
                message,
            } => write!(f, "parse error at line {l}: {message}"),
            ConfigError::Parse {
                line: None,
                message,
            } => write!(f, "parse error: {message}"),
            ConfigError::Invalid { field, reason } => write!(f, "invalid `{field}`: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<crate::Error> for ConfigError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::InvalidParameter { field, reason } => {
                ConfigError::Invalid { field, reason }
            }
            other => ConfigError::Invalid {
                field: "scenario".into(),
                reason: other.to_string(),
            },
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl GainSpec {
    fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            GainSpec::Scalar(k) => Ok(DMatrix::identity(n, n) * *k),
            GainSpec::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(invalid(
                        "controller.k_lambda",
                        format!("expected a {n}x{n} matrix"),
                    ));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    pub inductance: Vec<f64>,
    pub capacitance: f64,
    pub load: f64,
    pub source: Vec<f64>,
    pub esr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub e_tilde: Vec<f64>,
    pub e_eq: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSection {
    Robust {
        k_d: f64,
        k_i: f64,
        k_lambda: GainSpec,
        q_ref: f64,
    },
    KnownLoad {
        k_mu: f64,
        k_lambda: GainSpec,
        q_ref: f64,
        /// Fixed load assumed by the controller; omitted means the
        /// controller is told the true load, including its steps.
        assumed_load: Option<f64>,
    },
    OpenLoop {
        mu_offset: f64,
        #[serde(default)]
        mu_amplitude: f64,
        #[serde(default)]
        mu_frequency: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default)]
    pub esr: bool,
    #[serde(default)]
    pub pre_feedback: bool,
    pub controller_esr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeSection {
    Continuous,
    Sampled { rate: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub phi: Option<Vec<f64>>,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    SetLoad,
    SetReference,
    SetCostParam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub t: f64,
    pub action: EventAction,
    pub value: f64,
    /// Cost parameter name for `set_cost_param`.
    pub name: Option<String>,
}

/// Pass/fail assertions evaluated after a run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// `|Q(at) − Q_r| ≤ tolerance · |Q_r|`.
    QRegulation { at: f64, tolerance: f64 },
    /// `max |C_k(t) − C_k(start)|` over `start ≤ t < end` is at most
    /// `tolerance` (Wb).
    CasimirHold {
        start: f64,
        end: f64,
        tolerance: f64,
    },
    /// `max |Q(t) − Q_r|` over `start ≤ t ≤ end` is at most `tolerance` (C).
    QDeviation {
        start: f64,
        end: f64,
        tolerance: f64,
    },
    /// Reruns the scenario without event `event` (1-based) and bounds
    /// `max |Q − Q'|` over `start ≤ t ≤ end` by `tolerance` (C).
    Decoupling {
        event: usize,
        start: f64,
        end: f64,
        tolerance: f64,
    },
    /// Fluxes at `at` within `tolerance` (relative, per component) of the
    /// optimal repartition for the conditions in force just before `at`.
    OracleArgmin { at: f64, tolerance: f64 },
    /// No duty cycle ever hit its limits.
    NoSaturation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub dt: Option<f64>,
    pub decimate: Option<usize>,
    pub bank: BankSection,
    pub design: Option<DesignSection>,
    pub controller: ControllerSection,
    pub cost: Cost,
    #[serde(default)]
    pub plant: PlantSection,
    pub mode: Option<ModeSection>,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default, rename = "event")]
    pub events: Vec<EventSection>,
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckSpec>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds and validates the scenario.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let b = &self.bank;
        let m = b.inductance.len();
        if m < 2 {
            return Err(invalid(
                "bank.inductance",
                "at least two converters are required",
            ));
        }
        let mut bank = BankParams::new(
            b.inductance.clone(),
            b.capacitance,
            b.load,
            b.source.clone(),
        );
        if let Some(esr) = &b.esr {
            bank = bank.with_esr(esr.clone());
        }
        bank.validate()?;

        let design = match &self.design {
            Some(d) => DesignVoltages {
                e_tilde: d.e_tilde.clone(),
                e_eq: d.e_eq,
            },
            None => DesignVoltages::mean_of(&bank),
        };

        let controller = match &self.controller {
            ControllerSection::Robust {
                k_d,
                k_i,
                k_lambda,
                q_ref,
            } => ControllerSpec::Robust(RobustConfig {
                k_d: *k_d,
                k_i: *k_i,
                k_lambda: k_lambda.to_matrix(m - 1)?,
                q_ref: *q_ref,
            }),
            ControllerSection::KnownLoad {
                k_mu,
                k_lambda,
                q_ref,
                assumed_load,
            } => ControllerSpec::KnownLoad {
                k_mu: *k_mu,
                k_lambda: k_lambda.to_matrix(m - 1)?,
                q_ref: *q_ref,
                assumed_load: *assumed_load,
            },
            ControllerSection::OpenLoop {
                mu_offset,
                mu_amplitude,
                mu_frequency,
            } => ControllerSpec::OpenLoop(MuProfile {
                offset: *mu_offset,
                amplitude: *mu_amplitude,
                frequency: *mu_frequency,
            }),
        };

        let mode = match self.mode {
            None | Some(ModeSection::Continuous) => ControlMode::Continuous,
            Some(ModeSection::Sampled { rate }) => ControlMode::Sampled { rate },
        };

        let initial = InitialState {
            phi: self.initial.phi.clone().unwrap_or_else(|| vec![0.0; m]),
            q: self.initial.q,
            xi: self.initial.xi,
        };

        let events = self
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let event = match e.action {
                    EventAction::SetLoad => Event::SetLoad(e.value),
                    EventAction::SetReference => Event::SetReference(e.value),
                    EventAction::SetCostParam => Event::SetCostParam {
                        name: e.name.clone().ok_or_else(|| {
                            invalid(format!("event[{i}].name"), "required for set_cost_param")
                        })?,
                        value: e.value,
                    },
                };
                Ok(TimedEvent { t: e.t, event })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let scenario = Scenario {
            name: self.name.clone(),
            duration: self.duration,
            dt: self.dt.unwrap_or(DEFAULT_DT),
            decimate: self.decimate.unwrap_or(DEFAULT_DECIMATE),
            bank,
            design,
            controller,
            cost: self.cost.clone(),
            plant: PlantOptions {
                esr: self.plant.esr,
                pre_feedback: self.plant.pre_feedback,
                controller_esr: self.plant.controller_esr.clone(),
            },
            mode,
            initial,
            events,
        };
        scenario.validate()?;
        self.validate_checks(&scenario)?;
        Ok(scenario)
    }

    fn validate_checks(&self, s: &Scenario) -> Result<(), ConfigError> {
        let in_span = |t: f64| t.is_finite() && (0.0..=s.duration).contains(&t);
        for (i, c) in self.checks.iter().enumerate() {
            let field = format!("check[{i}]");
            let (times, tol): (Vec<f64>, Option<f64>) = match c {
                CheckSpec::QRegulation { at, tolerance } => (vec![*at], Some(*tolerance)),
                CheckSpec::OracleArgmin { at, tolerance } => (vec![*at], Some(*tolerance)),
                CheckSpec::CasimirHold {
                    start,
                    end,
                    tolerance,
                }
                | CheckSpec::QDeviation {
                    start,
                    end,
                    tolerance,
                } => (vec![*start, *end], Some(*tolerance)),
                CheckSpec::Decoupling {
                    event,
                    start,
                    end,
                    tolerance,
                } => {
                    if *event == 0 || *event > s.events.len() {
                        return Err(invalid(
                            format!("{field}.event"),
                            format!("expected 1..={}", s.events.len()),
                        ));
                    }
                    (vec![*start, *end], Some(*tolerance))
                }
                CheckSpec::NoSaturation => (vec![], None),
            };
            if times.iter().any(|t| !in_span(*t)) {
                return Err(invalid(
                    field,
                    format!("times must lie in [0, {}]", s.duration),
                ));
            }
            if times.len() == 2 && times[1] < times[0] {
                return Err(invalid(field, "window end precedes start"));
            }
            if let Some(t) = tol {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(invalid(format!("{field}.tolerance"), "must be >= 0"));
                }
            }
            if matches!(
                c,
                CheckSpec::QRegulation { .. } | CheckSpec::QDeviation { .. }
            ) && s.controller.q_ref().is_none()
            {
                return Err(invalid(field, "needs a closed-loop controller"));
            }
        }
        Ok(())
    }
}
