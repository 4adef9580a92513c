//! Evaluation of post-run assertions.

use crate::config::CheckSpec;
use crate::coordinates::build_maps;
use crate::costs::argmin_oracle;
use crate::error::Error;
use crate::sim::{max_abs_difference, run, Scenario, SimError, Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub label: String,
    pub passed: bool,
    /// Measured quantity compared against `limit`.
    pub value: f64,
    pub limit: f64,
}

/// Distance of the fluxes at `at` to the optimal repartition.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDistance {
    pub at: f64,
    pub phi: Vec<f64>,
    pub oracle_phi: Vec<f64>,
    /// `max_k |φ_k − φ_k^opt| / |φ_k^opt|`.
    pub max_relative_error: f64,
}

pub fn oracle_distance(
    scenario: &Scenario,
    trace: &Trace,
    at: f64,
) -> Result<OracleDistance, Error> {
    let cond = scenario.conditions_before(at);
    let q_ref = cond
        .q_ref
        .ok_or_else(|| Error::UnsupportedOracle("open-loop scenario has no reference".into()))?;
    let maps = build_maps(&scenario.bank, &scenario.design)?;
    let phi_t_star = maps.total_inductance() * q_ref / (cond.load * maps.capacitance);
    let oracle = argmin_oracle(&cond.cost, &maps, phi_t_star)?;
    let rec = record_at(trace, at)?;
    let max_relative_error = rec
        .phi
        .iter()
        .zip(oracle.phi.iter())
        .map(|(p, o)| (p - o).abs() / o.abs())
        .fold(0.0, f64::max);
    Ok(OracleDistance {
        at,
        phi: rec.phi.clone(),
        oracle_phi: oracle.phi.as_slice().to_vec(),
        max_relative_error,
    })
}

fn record_at(trace: &Trace, at: f64) -> Result<&TraceRecord, Error> {
    trace
        .at_or_before(at + 1e-12 * at.abs().max(1.0))
        .ok_or(Error::EmptyWindow { start: at, end: at })
}

fn records_in(
    trace: &Trace,
    start: f64,
    end: f64,
    include_end: bool,
) -> impl Iterator<Item = &TraceRecord> {
    trace
        .records
        .iter()
        .filter(move |r| r.t >= start && (r.t < end || (include_end && r.t <= end)))
}

fn outcome(label: String, value: f64, limit: f64) -> CheckOutcome {
    CheckOutcome {
        label,
        passed: value <= limit,
        value,
        limit,
    }
}

pub fn evaluate(
    scenario: &Scenario,
    trace: &Trace,
    check: &CheckSpec,
) -> Result<CheckOutcome, SimError> {
    let q_ref_before = |t: f64| scenario.conditions_before(t).q_ref.unwrap_or(f64::NAN);
    Ok(match check {
        CheckSpec::QRegulation { at, tolerance } => {
            let q_ref = q_ref_before(*at);
            let rec = record_at(trace, *at)?;
            outcome(
                format!("Q within {}% of Q_r at t={at}", tolerance * 100.0),
                (rec.q - q_ref).abs() / q_ref.abs(),
                *tolerance,
            )
        }
        CheckSpec::CasimirHold {
            start,
            end,
            tolerance,
        } => {
            let base = record_at(trace, *start)?.casimir.clone();
            let dev = records_in(trace, *start, *end, false)
                .flat_map(|r| r.casimir.iter().zip(&base).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            outcome(
                format!("max|C - C({start})| on [{start},{end})"),
                dev,
                *tolerance,
            )
        }
        CheckSpec::QDeviation {
            start,
            end,
            tolerance,
        } => {
            let dev = records_in(trace, *start, *end, true)
                .map(|r| (r.q - scenario.conditions_at(r.t).q_ref.unwrap_or(f64::NAN)).abs())
                .fold(0.0, f64::max);
            outcome(format!("max|Q - Q_r| on [{start},{end}]"), dev, *tolerance)
        }
        CheckSpec::Decoupling {
            event,
            start,
            end,
            tolerance,
        } => {
            let counterfactual = run(&scenario.without_event(event - 1))?;
            let window = |t: &Trace| Trace {
                m: t.m,
                records: records_in(t, *start, *end, true).cloned().collect(),
                steps: t.steps,
                saturated_steps: t.saturated_steps,
            };
            let dev = max_abs_difference(&window(trace), &window(&counterfactual), |r| r.q);
            outcome(
                format!("max|Q - Q without event {event}| on [{start},{end}]"),
                dev,
                *tolerance,
            )
        }
        CheckSpec::OracleArgmin { at, tolerance } => {
            let d = oracle_distance(scenario, trace, *at)?;
            outcome(
                format!("phi within {}% of optimum at t={at}", tolerance * 100.0),
                d.max_relative_error,
                *tolerance,
            )
        }
        CheckSpec::NoSaturation => outcome(
            "saturated steps".to_string(),
            trace.saturated_steps as f64,
            0.0,
        ),
    })
}
