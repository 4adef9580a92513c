//! Closed-loop scenario simulation.
//!
//! Plant and controller are integrated together with fixed-step RK4. Timed
//! events (load steps, reference changes, cost updates) are applied exactly
//! at their instants by splitting the step that contains them. A run is
//! deterministic: the same scenario always yields a bit-identical trace.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::{
    assemble_duty, chi_transform, desired_energy, ida_pbc_mu, known_lambda, known_load_energy,
    pre_feedback, robust_lambda, robust_mu, DutyCommand, KnownLoadConfig, RobustConfig,
    RobustState,
};
use crate::coordinates::{build_maps, CoordinateMaps, DesignVoltages};
use crate::costs::{Cost, CostFunction};
use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::model::{build_pch, BankParams, PchState, PchSystem};

/// `μ(t) = offset + amplitude · sin(2π f t)`, with `λ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuProfile {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl MuProfile {
    pub fn at(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    /// IDA-PBC with the load known to the controller. With
    /// `assumed_load = None` the controller follows the true load, events
    /// included.
    KnownLoad {
        k_mu: f64,
        k_lambda: DMatrix<f64>,
        q_ref: f64,
        assumed_load: Option<f64>,
    },
    /// Load-independent PI-like law.
    Robust(RobustConfig),
    /// Open loop: `λ = 0`, `μ = μ(t)`.
    OpenLoop(MuProfile),
}

impl ControllerSpec {
    pub fn q_ref(&self) -> Option<f64> {
        match self {
            ControllerSpec::KnownLoad { q_ref, .. } => Some(*q_ref),
            ControllerSpec::Robust(cfg) => Some(cfg.q_ref),
            ControllerSpec::OpenLoop(_) => None,
        }
    }

    fn k_lambda(&self) -> Option<&DMatrix<f64>> {
        match self {
            ControllerSpec::KnownLoad { k_lambda, .. } => Some(k_lambda),
            ControllerSpec::Robust(cfg) => Some(&cfg.k_lambda),
            ControllerSpec::OpenLoop(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum ControlMode {
    #[default]
    Continuous,
    /// Zero-order hold at `rate` Hz; the integrator is advanced by forward
    /// Euler at each sample.
    Sampled { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantOptions {
    /// Include the bank's inductor ESR in the plant.
    pub esr: bool,
    /// Apply ESR pre-feedback on the commanded duty cycles.
    pub pre_feedback: bool,
    /// ESR assumed by the pre-feedback; defaults to the plant's.
    pub controller_esr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub phi: Vec<f64>,
    pub q: f64,
    pub xi: f64,
}

impl InitialState {
    pub fn zeros(m: usize) -> Self {
        Self {
            phi: vec![0.0; m],
            q: 0.0,
            xi: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    SetLoad(f64),
    SetReference(f64),
    SetCostParam { name: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: f64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    /// Record every `decimate`-th step (initial and final states always).
    pub decimate: usize,
    /// Plant parameters; `load` is the initial load.
    pub bank: BankParams,
    pub design: DesignVoltages,
    pub controller: ControllerSpec,
    pub cost: Cost,
    pub plant: PlantOptions,
    pub mode: ControlMode,
    pub initial: InitialState,
    /// Sorted by time.
    pub events: Vec<TimedEvent>,
}

impl Scenario {
    pub fn m(&self) -> usize {
        self.bank.m()
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        let m = self.m();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::invalid(
                "duration",
                format!("must be >= 0, got {}", self.duration),
            ));
        }
        if self.decimate == 0 {
            return Err(Error::invalid("decimate", "must be >= 1"));
        }
        build_maps(&self.bank, &self.design)?;
        self.cost.validate(m)?;

        match &self.controller {
            ControllerSpec::KnownLoad {
                k_mu,
                k_lambda,
                q_ref,
                assumed_load,
            } => KnownLoadConfig {
                k_mu: *k_mu,
                k_lambda: k_lambda.clone(),
                q_ref: *q_ref,
                load: assumed_load.unwrap_or(self.bank.load),
            }
            .validate()?,
            ControllerSpec::Robust(cfg) => cfg.validate()?,
            ControllerSpec::OpenLoop(p) => {
                if !(p.offset.is_finite() && p.amplitude.is_finite() && p.frequency.is_finite()) {
                    return Err(Error::invalid("mu", "profile must be finite"));
                }
            }
        }
        if let Some(k) = self.controller.k_lambda() {
            if k.nrows() != m - 1 {
                return Err(Error::invalid(
                    "k_lambda",
                    format!("expected {0}x{0}, got {1}x{2}", m - 1, k.nrows(), k.ncols()),
                ));
            }
        }

        if let Some(r) = &self.plant.controller_esr {
            if r.len() != m || r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(
                    "controller_esr",
                    format!("expected {m} finite non-negative entries"),
                ));
            }
        }

        if let ControlMode::Sampled { rate } = self.mode {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::invalid("rate", "sampling rate must be > 0"));
            }
            let ratio = 1.0 / (rate * self.dt);
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 * ratio {
                return Err(Error::invalid(
                    "rate",
                    "sampling period must be an integer multiple of dt",
                ));
            }
        }

        if self.initial.phi.len() != m {
            return Err(Error::invalid(
                "initial.phi",
                format!("expected {m} entries, got {}", self.initial.phi.len()),
            ));
        }
        if !(self.initial.q.is_finite()
            && self.initial.xi.is_finite()
            && self.initial.phi.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid("initial", "must be finite"));
        }

        let mut prev = 0.0;
        let mut cost = self.cost.clone();
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.t.is_finite() && ev.t >= 0.0 && ev.t <= self.duration) {
                return Err(Error::invalid(
                    format!("event[{i}].t"),
                    format!("must lie in [0, {}], got {}", self.duration, ev.t),
                ));
            }
            if ev.t < prev {
                return Err(Error::invalid(
                    format!("event[{i}].t"),
                    "events must be time-sorted",
                ));
            }
            prev = ev.t;
            match &ev.event {
                Event::SetLoad(r) if !(r.is_finite() && *r > 0.0) => {
                    return Err(Error::invalid(
                        format!("event[{i}].value"),
                        format!("load must be > 0, got {r}"),
                    ))
                }
                Event::SetReference(q) if !q.is_finite() => {
                    return Err(Error::invalid(
                        format!("event[{i}].value"),
                        "must be finite",
                    ))
                }
                Event::SetCostParam { name, value } => cost
                    .set_param(name, *value)
                    .map_err(|e| Error::invalid(format!("event[{i}]"), e.to_string()))?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Load, reference and cost in force at time `t` (events at `t`
    /// included).
    pub fn conditions_at(&self, t: f64) -> Conditions {
        self.conditions_after(|e| e.t <= t)
    }

    /// Conditions in force just before `t` (events at `t` excluded).
    pub fn conditions_before(&self, t: f64) -> Conditions {
        self.conditions_after(|e| e.t < t)
    }

    fn conditions_after(&self, applied: impl Fn(&TimedEvent) -> bool) -> Conditions {
        let mut c = Conditions {
            load: self.bank.load,
            q_ref: self.controller.q_ref(),
            cost: self.cost.clone(),
        };
        for ev in self.events.iter().filter(|e| applied(e)) {
            match &ev.event {
                Event::SetLoad(r) => c.load = *r,
                Event::SetReference(q) => c.q_ref = Some(*q),
                Event::SetCostParam { name, value } => {
                    // validated beforehand
                    let _ = c.cost.set_param(name, *value);
                }
            }
        }
        c
    }

    /// Same scenario with event `index` removed.
    pub fn without_event(&self, index: usize) -> Scenario {
        let mut s = self.clone();
        s.events.remove(index);
        s
    }
}

/// Operating conditions at a given instant of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditions {
    pub load: f64,
    pub q_ref: Option<f64>,
    pub cost: Cost,
}

/// One logged sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub phi: Vec<f64>,
    pub q: f64,
    /// Output voltage `Q/C` (V).
    pub v: f64,
    pub casimir: Vec<f64>,
    pub phi_t: f64,
    pub duty: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub xi: f64,
    /// Stored energy (J).
    pub h: f64,
    /// Closed-loop storage function (J); NaN in open loop.
    pub h_d: f64,
    /// Flux-repartition cost.
    pub cost: f64,
    pub saturated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub m: usize,
    pub records: Vec<TraceRecord>,
    pub steps: usize,
    /// Steps whose command (evaluated at step start) hit a duty limit.
    pub saturated_steps: usize,
}

impl Trace {
    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("trace always holds the initial record")
    }

    /// Latest record with `t <= time`.
    pub fn at_or_before(&self, time: f64) -> Option<&TraceRecord> {
        let idx = self.records.partition_point(|r| r.t <= time);
        idx.checked_sub(1).map(|i| &self.records[i])
    }

    /// Records with `start <= t <= end`.
    pub fn window(&self, start: f64, end: f64) -> &[TraceRecord] {
        let lo = self.records.partition_point(|r| r.t < start);
        let hi = self.records.partition_point(|r| r.t <= end);
        &self.records[lo..hi.max(lo)]
    }
}

/// Run aborted on a non-finite state.
#[derive(Debug, Clone)]
pub struct NonFiniteState {
    pub t: f64,
    pub state: Vec<f64>,
    pub partial: Trace,
}

#[derive(Debug, Clone)]
pub enum SimError {
    Invalid(Error),
    NonFinite(Box<NonFiniteState>),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Invalid(e) => write!(f, "invalid scenario: {e}"),
            SimError::NonFinite(nf) => write!(
                f,
                "non-finite state at t = {} s after {} steps: {:?}",
                nf.t, nf.partial.steps, nf.state
            ),
        }
    }
}

impl std::error::Error for SimError {}

impl From<Error> for SimError {
    fn from(e: Error) -> Self {
        SimError::Invalid(e)
    }
}

enum Law {
    Known {
        cfg: KnownLoadConfig,
        track_load: bool,
    },
    Robust(RobustConfig),
    Open(MuProfile),
}

struct Command {
    lambda: DVector<f64>,
    mu: f64,
    xi_dot: f64,
    duty: DutyCommand,
}

struct Runtime {
    m: usize,
    maps: CoordinateMaps,
    plant: PchSystem,
    law: Law,
    cost: Cost,
    load: f64,
    pre_feedback: Option<BankParams>,
}

impl Runtime {
    fn new(s: &Scenario) -> Result<Self> {
        let maps = build_maps(&s.bank, &s.design)?;
        let ideal = build_pch(&s.bank)?;
        let plant = if s.plant.esr {
            ideal.with_esr(&s.bank)
        } else {
            ideal
        };
        let law = match &s.controller {
            ControllerSpec::KnownLoad {
                k_mu,
                k_lambda,
                q_ref,
                assumed_load,
            } => Law::Known {
                cfg: KnownLoadConfig {
                    k_mu: *k_mu,
                    k_lambda: k_lambda.clone(),
                    q_ref: *q_ref,
                    load: assumed_load.unwrap_or(s.bank.load),
                },
                track_load: assumed_load.is_none(),
            },
            ControllerSpec::Robust(cfg) => Law::Robust(cfg.clone()),
            ControllerSpec::OpenLoop(p) => Law::Open(p.clone()),
        };
        let pre_feedback = s.plant.pre_feedback.then(|| {
            let esr = s
                .plant
                .controller_esr
                .clone()
                .unwrap_or_else(|| s.bank.esr.clone());
            s.bank.clone().with_esr(esr)
        });
        Ok(Self {
            m: s.m(),
            maps,
            plant,
            law,
            cost: s.cost.clone(),
            load: s.bank.load,
            pre_feedback,
        })
    }

    fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::SetLoad(r) => {
                self.plant.set_load(*r)?;
                self.load = *r;
                if let Law::Known {
                    cfg,
                    track_load: true,
                } = &mut self.law
                {
                    cfg.load = *r;
                }
            }
            Event::SetReference(q) => match &mut self.law {
                Law::Known { cfg, .. } => cfg.q_ref = *q,
                Law::Robust(cfg) => cfg.q_ref = *q,
                Law::Open(_) => {}
            },
            Event::SetCostParam { name, value } => self.cost.set_param(name, *value)?,
        }
        Ok(())
    }

    fn state(&self, y: &[f64]) -> PchState {
        PchState::new(DVector::from_column_slice(&y[..self.m]), y[self.m])
    }

    fn command(&self, t: f64, x: &PchState, xi: f64) -> Command {
        let z = self.maps.to_z(x);
        let (lambda, mu, xi_dot) = match &self.law {
            Law::Known { cfg, .. } => {
                let mu = ida_pbc_mu(cfg, z.phi_t, &self.maps);
                let lambda = known_lambda(
                    cfg,
                    &z.casimir,
                    cfg.phi_t_star(&self.maps),
                    &self.cost,
                    &self.maps,
                );
                (lambda, mu, 0.0)
            }
            Law::Robust(cfg) => {
                let (mu, xi_dot) = robust_mu(cfg, &RobustState { xi }, z.phi_t, z.q, &self.maps);
                let lambda = robust_lambda(cfg, &z.casimir, z.phi_t, &self.cost, &self.maps);
                (lambda, mu, xi_dot)
            }
            Law::Open(p) => (DVector::zeros(self.m - 1), p.at(t), 0.0),
        };
        let duty = match &self.pre_feedback {
            Some(assumed) => {
                let d_tilde = self.maps.input_to_d(&lambda, mu);
                DutyCommand::clamp(pre_feedback(assumed, &x.phi, &d_tilde))
            }
            None => assemble_duty(&self.maps, &lambda, mu),
        };
        Command {
            lambda,
            mu,
            xi_dot,
            duty,
        }
    }

    fn derivative(&self, x: &PchState, duty: &DVector<f64>, xi_dot: f64, dy: &mut [f64]) {
        let dx = self
            .plant
            .open_loop_rhs(x, duty)
            .expect("dimensions fixed at construction");
        dy[..=self.m].copy_from_slice(dx.as_slice());
        dy[self.m + 1] = xi_dot;
    }

    fn record(&self, t: f64, y: &[f64], cmd: &Command) -> TraceRecord {
        let x = self.state(y);
        let xi = y[self.m + 1];
        let z = self.maps.to_z(&x);
        let h_d = match &self.law {
            Law::Known { cfg, .. } => known_load_energy(cfg, z.phi_t, z.q, &self.maps),
            Law::Robust(cfg) => {
                let chi = chi_transform(cfg, z.phi_t, z.q, xi, self.load, &self.maps);
                desired_energy(cfg, &chi, &self.maps)
            }
            Law::Open(_) => f64::NAN,
        };
        TraceRecord {
            t,
            phi: x.phi.as_slice().to_vec(),
            q: x.q,
            v: x.q / self.maps.capacitance,
            casimir: z.casimir.as_slice().to_vec(),
            phi_t: z.phi_t,
            duty: cmd.duty.duty.as_slice().to_vec(),
            lambda: cmd.lambda.as_slice().to_vec(),
            mu: cmd.mu,
            xi,
            h: self.plant.hamiltonian(&x),
            h_d,
            cost: self.cost.evaluate(&x.phi),
            saturated: cmd.duty.saturated.clone(),
        }
    }
}

/// Runs the scenario to completion.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    let mut rt = Runtime::new(scenario)?;
    let m = rt.m;
    let dt = scenario.dt;
    let eps = 1e-6 * dt;

    let mut y: Vec<f64> = scenario.initial.phi.clone();
    y.push(scenario.initial.q);
    y.push(scenario.initial.xi);
    let mut rk = Rk4::new(m + 2);

    let sample_steps = match scenario.mode {
        ControlMode::Continuous => None,
        ControlMode::Sampled { rate } => Some(((1.0 / (rate * dt)).round() as usize).max(1)),
    };
    let sample_period = sample_steps.map(|k| k as f64 * dt);

    let mut trace = Trace {
        m,
        records: Vec::new(),
        steps: 0,
        saturated_steps: 0,
    };

    let mut next_event = 0;
    let events = &scenario.events;
    let apply_due = |rt: &mut Runtime, t: f64, next_event: &mut usize| -> Result<()> {
        while *next_event < events.len() && events[*next_event].t <= t + eps {
            rt.apply(&events[*next_event].event)?;
            *next_event += 1;
        }
        Ok(())
    };

    // Held command and pending integrator increment for sampled mode.
    let mut held: Option<Command> = None;
    let mut pending_xi_dot = 0.0;

    let full_steps = ((scenario.duration / dt) + 1e-6).floor() as usize;
    let tail = scenario.duration - full_steps as f64 * dt;
    let total_steps = full_steps + usize::from(tail > eps);

    let mut t = 0.0;
    for n in 0..=total_steps {
        apply_due(&mut rt, t, &mut next_event)?;

        if let Some(k) = sample_steps {
            if n % k == 0 || held.is_none() {
                if held.is_some() {
                    y[m + 1] += sample_period.unwrap() * pending_xi_dot;
                }
                let cmd = rt.command(t, &rt.state(&y), y[m + 1]);
                pending_xi_dot = cmd.xi_dot;
                held = Some(cmd);
            }
        }

        let cmd_now = match &held {
            Some(c) => Command {
                lambda: c.lambda.clone(),
                mu: c.mu,
                xi_dot: c.xi_dot,
                duty: c.duty.clone(),
            },
            None => rt.command(t, &rt.state(&y), y[m + 1]),
        };
        let is_last = n == total_steps;
        if n % scenario.decimate == 0 || is_last {
            trace.records.push(rt.record(t, &y, &cmd_now));
        }
        if is_last {
            break;
        }
        if cmd_now.duty.any_saturated() {
            trace.saturated_steps += 1;
        }

        let t_next = if n + 1 == total_steps {
            scenario.duration
        } else {
            (n + 1) as f64 * dt
        };

        // Split the step at any event strictly inside it.
        let mut t_seg = t;
        loop {
            let boundary = match events.get(next_event) {
                Some(ev) if ev.t > t_seg + eps && ev.t < t_next - eps => ev.t,
                _ => t_next,
            };
            let h = boundary - t_seg;
            match &held {
                Some(c) => {
                    let duty = c.duty.duty.clone();
                    rk.step(&mut y, t_seg, h, |_, yy, dy| {
                        rt.derivative(&rt.state(yy), &duty, 0.0, dy)
                    });
                }
                None => {
                    rk.step(&mut y, t_seg, h, |tt, yy, dy| {
                        let x = rt.state(yy);
                        let c = rt.command(tt, &x, yy[m + 1]);
                        rt.derivative(&x, &c.duty.duty, c.xi_dot, dy)
                    });
                }
            }
            trace.steps += 1;
            t_seg = boundary;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite(Box::new(NonFiniteState {
                    t: t_seg,
                    state: y.clone(),
                    partial: trace,
                })));
            }
            if boundary >= t_next {
                break;
            }
            apply_due(&mut rt, t_seg, &mut next_event)?;
        }
        t = t_next;
    }
    Ok(trace)
}

/// Aggregates over a trace window.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMetrics {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
    pub mean_phi: Vec<f64>,
    pub mean_q: f64,
    pub mean_casimir: Vec<f64>,
    pub mean_phi_t: f64,
    pub final_phi: Vec<f64>,
    pub final_q: f64,
    pub final_casimir: Vec<f64>,
    pub final_phi_t: f64,
    /// Time after `start` from which `Q` stays within ±1 % of the
    /// reference until `end`; `None` if it never settles.
    pub q_settling_time: Option<f64>,
    /// `max |C_k(t) − C_k(start)|` over the window.
    pub max_casimir_deviation: f64,
}

/// Relative half-width of the settling band on `Q`.
pub const SETTLING_BAND: f64 = 0.01;

pub fn steady_state_metrics(
    trace: &Trace,
    start: f64,
    end: f64,
    q_ref: f64,
) -> Result<SteadyStateMetrics> {
    let w = trace.window(start, end);
    if w.is_empty() || end < start {
        return Err(Error::EmptyWindow { start, end });
    }
    let n = w.len() as f64;
    let mean_vec = |f: &dyn Fn(&TraceRecord) -> &[f64]| -> Vec<f64> {
        let k = f(&w[0]).len();
        (0..k)
            .map(|i| w.iter().map(|r| f(r)[i]).sum::<f64>() / n)
            .collect()
    };
    let first = &w[0];
    let last = &w[w.len() - 1];

    let band = SETTLING_BAND * q_ref.abs();
    let settle_idx = w
        .iter()
        .rposition(|r| (r.q - q_ref).abs() > band)
        .map(|i| i + 1)
        .unwrap_or(0);
    let q_settling_time = w.get(settle_idx).map(|r| r.t - first.t);

    let max_casimir_deviation = w
        .iter()
        .flat_map(|r| {
            r.casimir
                .iter()
                .zip(&first.casimir)
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max);

    Ok(SteadyStateMetrics {
        start,
        end,
        samples: w.len(),
        mean_phi: mean_vec(&|r| &r.phi),
        mean_q: w.iter().map(|r| r.q).sum::<f64>() / n,
        mean_casimir: mean_vec(&|r| &r.casimir),
        mean_phi_t: w.iter().map(|r| r.phi_t).sum::<f64>() / n,
        final_phi: last.phi.clone(),
        final_q: last.q,
        final_casimir: last.casimir.clone(),
        final_phi_t: last.phi_t,
        q_settling_time,
        max_casimir_deviation,
    })
}

/// `max |f(a_i) − f(b_i)|` over records sampled at identical times.
pub fn max_abs_difference(a: &Trace, b: &Trace, f: impl Fn(&TraceRecord) -> f64) -> f64 {
    assert_eq!(
        a.records.len(),
        b.records.len(),
        "traces sampled differently"
    );
    a.records
        .iter()
        .zip(&b.records)
        .map(|(ra, rb)| {
            debug_assert_eq!(ra.t, rb.t);
            (f(ra) - f(rb)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn short(mut s: Scenario, duration: f64) -> Scenario {
        s.duration = duration;
        s.events.retain(|e| e.t <= duration);
        s
    }

    #[test]
    fn zero_duration_keeps_initial_record() {
        let s = short(presets::exp1(), 0.0);
        let trace = run(&s).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].t, 0.0);
        assert_eq!(trace.steps, 0);
    }

    #[test]
    fn deterministic() {
        let s = short(presets::exp2(), 0.05);
        assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    }

    #[test]
    fn decimation_and_final_record() {
        let mut s = short(presets::exp2(), 0.0105);
        s.dt = 1e-4;
        s.decimate = 10;
        let trace = run(&s).unwrap();
        let times: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
        assert_eq!(times.len(), 12);
        assert_eq!(times[1], 10.0 * 1e-4);
        assert_eq!(*times.last().unwrap(), 0.0105);
        assert_eq!(trace.steps, 105);
    }

    #[test]
    fn event_inside_step_is_split() {
        let mut s = short(presets::exp2(), 0.01);
        s.dt = 1e-4;
        s.events = vec![TimedEvent {
            t: 0.00455,
            event: Event::SetLoad(5.0),
        }];
        let split = run(&s).unwrap();
        assert_eq!(split.steps, 101);

        // Reference: dt aligned with the event.
        let mut aligned = s.clone();
        aligned.dt = 5e-5;
        aligned.decimate = 2;
        let fine = run(&aligned).unwrap();
        // Both runs see the same discontinuity, so they agree to RK4 accuracy.
        let a = split.last();
        let b = fine.last();
        assert!((a.q - b.q).abs() < 1e-6, "{} vs {}", a.q, b.q);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = presets::exp1();
        s.dt = 0.0;
        assert!(matches!(run(&s), Err(SimError::Invalid(_))));

        let mut s = presets::exp1();
        s.events.swap(0, 1);
        assert!(s.validate().is_err());

        let mut s = presets::exp1();
        s.events[0].event = Event::SetLoad(-5.0);
        assert!(s.validate().is_err());

        let mut s = presets::exp1();
        s.events[0].t = 10.0;
        assert!(s.validate().is_err());

        let mut s = presets::exp1();
        s.events[1].event = Event::SetCostParam {
            name: "k1.1".into(),
            value: 1.0,
        };
        assert!(s.validate().is_err());

        let mut s = presets::exp1();
        s.mode = ControlMode::Sampled { rate: 3e4 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn non_finite_state_aborts_with_partial_trace() {
        let mut s = short(presets::exp2(), 1.0);
        s.decimate = 1;
        // Energy overflows on the first stage.
        s.initial.phi = vec![1e308, -1e308];
        match run(&s) {
            Err(SimError::NonFinite(nf)) => {
                assert!(!nf.partial.records.is_empty());
                assert!(nf.state.iter().any(|v| !v.is_finite()));
                assert!(nf.t > 0.0);
            }
            other => panic!("expected abort, got {:?}", other.map(|t| t.steps)),
        }
    }

    #[test]
    fn sampled_mode_regulates() {
        let mut s = short(presets::exp2(), 0.8);
        s.mode = ControlMode::Sampled { rate: 1e4 };
        let trace = run(&s).unwrap();
        let q = trace.last().q;
        assert!((q - 0.264).abs() < 0.005 * 0.264, "{q}");
    }

    #[test]
    fn metrics_on_constant_trace() {
        let rec = |t: f64| TraceRecord {
            t,
            phi: vec![1.0, 2.0],
            q: 0.264,
            v: 12.0,
            casimir: vec![-1.0],
            phi_t: 1.5,
            duty: vec![0.5, 0.5],
            lambda: vec![0.0],
            mu: 0.5,
            xi: 0.0,
            h: 1.0,
            h_d: 0.0,
            cost: 0.0,
            saturated: vec![false, false],
        };
        let trace = Trace {
            m: 2,
            records: (0..10).map(|i| rec(i as f64 * 0.1)).collect(),
            steps: 9,
            saturated_steps: 0,
        };
        let mt = steady_state_metrics(&trace, 0.0, 1.0, 0.264).unwrap();
        assert_eq!(mt.mean_phi, vec![1.0, 2.0]);
        assert!((mt.mean_q - 0.264).abs() < 1e-15);
        assert_eq!(mt.mean_casimir, vec![-1.0]);
        assert_eq!(mt.q_settling_time, Some(0.0));
        assert_eq!(mt.max_casimir_deviation, 0.0);
        assert!(matches!(
            steady_state_metrics(&trace, 2.0, 3.0, 0.264),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn conditions_follow_events() {
        let s = presets::exp1();
        assert_eq!(s.conditions_at(0.5).load, 20.0);
        assert_eq!(s.conditions_at(1.0).load, 5.0);
        assert_eq!(
            s.conditions_at(2.5).cost,
            Cost::Tracking(crate::costs::TrackingCost { c_star: 5e-3 })
        );
    }
}
