//! Averaged model, decoupling coordinates and passivity-based control of
//! parallel buck converters feeding a shared resistive load.

pub mod checks;
pub mod config;
pub mod controllers;
pub mod coordinates;
pub mod costs;
pub mod error;
pub mod integrator;
pub mod model;
pub mod presets;
pub mod sim;
pub mod trace_io;
pub mod verify;

pub use checks::{evaluate as evaluate_check, oracle_distance, CheckOutcome, OracleDistance};
pub use config::{CheckSpec, ConfigError, ScenarioConfig};
pub use controllers::{DutyCommand, KnownLoadConfig, RobustConfig, RobustState};
pub use coordinates::{build_maps, CoordinateMaps, DesignVoltages, ZState};
pub use costs::{argmin_oracle, Cost, CostFunction, OracleSolution, QuadraticCost, TrackingCost};
pub use error::{Error, Result};
pub use model::{build_pch, BankParams, PchState, PchSystem};
pub use sim::{
    run, steady_state_metrics, ControlMode, ControllerSpec, Event, InitialState, MuProfile,
    PlantOptions, Scenario, SimError, SteadyStateMetrics, TimedEvent, Trace, TraceRecord,
};
pub use verify::{run_verify, VerifyOptions, VerifyReport};
