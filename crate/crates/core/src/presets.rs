//! Bench parameters and the two reference scenarios.

use nalgebra::DMatrix;

use crate::controllers::RobustConfig;
use crate::coordinates::DesignVoltages;
use crate::costs::{Cost, QuadraticCost, TrackingCost};
use crate::model::BankParams;
use crate::sim::{
    ControlMode, ControllerSpec, Event, InitialState, PlantOptions, Scenario, TimedEvent,
};

pub const Q_REF: f64 = 0.264;
pub const INITIAL_LOAD: f64 = 20.0;
pub const STEPPED_LOAD: f64 = 5.0;
pub const LOAD_STEP_TIME: f64 = 1.0;
pub const C_STAR_STEP_TIME: f64 = 2.0;
pub const C_STAR_TARGET: f64 = 5e-3;
pub const DEFAULT_DT: f64 = 1e-5;
pub const DEFAULT_DECIMATE: usize = 10;
pub const BENCH_ESR: [f64; 2] = [0.1, 0.1];

/// Two-converter test bench: L = [2.83, 1.3] mH, C = 22 mF, E = 24 V.
pub fn bench_params() -> BankParams {
    BankParams::new(vec![2.83e-3, 1.3e-3], 22e-3, INITIAL_LOAD, vec![24.0, 24.0])
}

/// Loss-minimizing cost fitted on the bench.
pub fn loss_cost() -> QuadraticCost {
    QuadraticCost {
        k1: vec![0.1623e5, 1.8343e5],
        k2: vec![130.7, 27.7],
    }
}

pub fn robust_gains() -> RobustConfig {
    RobustConfig {
        k_d: 1.0,
        k_i: 10.0,
        k_lambda: DMatrix::from_element(1, 1, 0.1),
        q_ref: Q_REF,
    }
}

fn base(name: &str, duration: f64, cost: Cost, events: Vec<TimedEvent>) -> Scenario {
    let bank = bench_params();
    Scenario {
        name: name.to_string(),
        duration,
        dt: DEFAULT_DT,
        decimate: DEFAULT_DECIMATE,
        design: DesignVoltages::mean_of(&bank),
        initial: InitialState::zeros(bank.m()),
        bank,
        controller: ControllerSpec::Robust(robust_gains()),
        cost,
        plant: PlantOptions::default(),
        mode: ControlMode::Continuous,
        events,
    }
}

/// Flux repartition tracking: load step at 1 s, `C*` step at 2 s.
pub fn exp1() -> Scenario {
    base(
        "exp1",
        3.0,
        Cost::Tracking(TrackingCost { c_star: 0.0 }),
        vec![
            TimedEvent {
                t: LOAD_STEP_TIME,
                event: Event::SetLoad(STEPPED_LOAD),
            },
            TimedEvent {
                t: C_STAR_STEP_TIME,
                event: Event::SetCostParam {
                    name: "c_star".into(),
                    value: C_STAR_TARGET,
                },
            },
        ],
    )
}

/// Loss minimization under an unknown load step at 1 s.
pub fn exp2() -> Scenario {
    base(
        "exp2",
        2.0,
        Cost::Quadratic(loss_cost()),
        vec![TimedEvent {
            t: LOAD_STEP_TIME,
            event: Event::SetLoad(STEPPED_LOAD),
        }],
    )
}

/// [`exp2`] on a plant with inductor ESR and no pre-feedback.
pub fn exp2_esr() -> Scenario {
    let mut s = exp2();
    s.name = "exp2_esr".into();
    s.bank.esr = BENCH_ESR.to_vec();
    s.plant.esr = true;
    s
}
