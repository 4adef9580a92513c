//! Command implementations behind the `parabuck` binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use parabuck::checks::{evaluate, oracle_distance, CheckOutcome, OracleDistance};
use parabuck::config::{ConfigError, ScenarioConfig};
use parabuck::costs::CostFunction;
use parabuck::sim::{run, steady_state_metrics, ControllerSpec, Event, Scenario, SimError, Trace};
use parabuck::trace_io::write_trace;
use parabuck::verify::{Expect, VerifyOptions, VerifyReport};

pub const BUNDLED: [(&str, &str); 3] = [
    ("exp1", include_str!("../configs/exp1.toml")),
    ("exp2", include_str!("../configs/exp2.toml")),
    ("exp2_esr", include_str!("../configs/exp2_esr.toml")),
];

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    CheckFailed = 1,
    ConfigError = 2,
    RuntimeError = 3,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Config(_) | CliError::Usage(_) => Status::ConfigError,
            CliError::Runtime(_) => Status::RuntimeError,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Usage(e) => write!(f, "usage error: {e}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Loads `spec` as a file path, or as a bundled config name when no such
/// file exists.
pub fn load_config(spec: &str) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == spec) {
            return Ok(ScenarioConfig::parse(text)?);
        }
    }
    Ok(ScenarioConfig::load(path)?)
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub decimate: Option<usize>,
}

pub fn build_scenario(cfg: &ScenarioConfig, ov: &Overrides) -> Result<Scenario, CliError> {
    let mut cfg = cfg.clone();
    if ov.dt.is_some() {
        cfg.dt = ov.dt;
    }
    if ov.decimate.is_some() {
        cfg.decimate = ov.decimate;
    }
    Ok(cfg.to_scenario()?)
}

/// Renders rows as a left-aligned text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            s.push_str(c);
            s.extend(std::iter::repeat_n(' ', w - c.chars().count()));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

/// Metrics over the interval between consecutive events.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSummary {
    pub start: f64,
    pub end: f64,
    pub load: f64,
    pub q_ref: f64,
    pub final_q: f64,
    pub settling: Option<f64>,
    pub final_casimir: Vec<f64>,
    pub final_phi: Vec<f64>,
    pub max_casimir_deviation: f64,
    pub oracle: Option<OracleDistance>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub checks: Vec<CheckOutcome>,
    pub phases: Vec<PhaseSummary>,
    pub steps: usize,
    pub saturated_steps: usize,
    pub artifacts: Vec<PathBuf>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(
            s,
            "steps: {}  saturated steps: {}\n",
            self.steps, self.saturated_steps
        );
        let rows: Vec<Vec<String>> = self
            .phases
            .iter()
            .map(|p| {
                vec![
                    format!("[{}, {}]", p.start, p.end),
                    format!("{}", p.load),
                    format!("{:.6}", p.final_q),
                    sci((p.final_q - p.q_ref) / p.q_ref),
                    p.settling.map_or("-".into(), |t| format!("{t:.4}")),
                    p.final_phi
                        .iter()
                        .map(|v| sci(*v))
                        .collect::<Vec<_>>()
                        .join(" "),
                    p.final_casimir
                        .iter()
                        .map(|v| sci(*v))
                        .collect::<Vec<_>>()
                        .join(" "),
                    sci(p.max_casimir_deviation),
                    p.oracle
                        .as_ref()
                        .map_or("-".into(), |o| sci(o.max_relative_error)),
                ]
            })
            .collect();
        s.push_str(&table(
            &[
                "phase (s)",
                "R (ohm)",
                "Q final (C)",
                "Q rel err",
                "Q settle (s)",
                "phi final (Wb)",
                "C final (Wb)",
                "max |dC| (Wb)",
                "oracle rel dist",
            ],
            &rows,
        ));
        if !self.checks.is_empty() {
            s.push('\n');
            let rows: Vec<Vec<String>> = self
                .checks
                .iter()
                .map(|c| {
                    vec![
                        if c.passed { "PASS" } else { "FAIL" }.into(),
                        c.label.clone(),
                        sci(c.value),
                        sci(c.limit),
                    ]
                })
                .collect();
            s.push_str(&table(&["status", "check", "value", "limit"], &rows));
        }
        for a in &self.artifacts {
            let _ = writeln!(s, "\nwrote {}", a.display());
        }
        s
    }
}

/// Phase boundaries at event times.
fn phase_bounds(s: &Scenario) -> Vec<f64> {
    let mut b = vec![0.0];
    for e in &s.events {
        if e.t > *b.last().unwrap() && e.t < s.duration {
            b.push(e.t);
        }
    }
    b.push(s.duration);
    b
}

pub fn summarize(s: &Scenario, trace: &Trace) -> Vec<PhaseSummary> {
    let Some(_) = s.controller.q_ref() else {
        return Vec::new();
    };
    let bounds = phase_bounds(s);
    bounds
        .windows(2)
        .filter_map(|w| {
            let (start, end) = (w[0], w[1]);
            let cond = s.conditions_before(end);
            let q_ref = cond.q_ref?;
            let m = steady_state_metrics(trace, start, end, q_ref).ok()?;
            let oracle = cond
                .cost
                .declared_convex()
                .then(|| oracle_distance(s, trace, end).ok())
                .flatten();
            Some(PhaseSummary {
                start,
                end,
                load: cond.load,
                q_ref,
                final_q: m.final_q,
                settling: m.q_settling_time,
                final_casimir: m.final_casimir,
                final_phi: m.final_phi,
                max_casimir_deviation: m.max_casimir_deviation,
                oracle,
            })
        })
        .collect()
}

fn write_csv(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    write_trace(BufWriter::new(file), trace.m, &trace.records).map_err(runtime)
}

pub fn cmd_run(
    cfg: &ScenarioConfig,
    ov: &Overrides,
    out: Option<&Path>,
) -> Result<RunReport, CliError> {
    let scenario = build_scenario(cfg, ov)?;
    let trace = match run(&scenario) {
        Ok(t) => t,
        Err(SimError::NonFinite(nf)) => {
            if let Some(dir) = out {
                fs::create_dir_all(dir).map_err(runtime)?;
                write_csv(
                    &dir.join(format!("{}_partial.csv", scenario.name)),
                    &nf.partial,
                )?;
            }
            return Err(runtime(SimError::NonFinite(nf)));
        }
        Err(e) => return Err(runtime(e)),
    };
    let checks = cfg
        .checks
        .iter()
        .map(|c| evaluate(&scenario, &trace, c).map_err(runtime))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        checks,
        phases: summarize(&scenario, &trace),
        steps: trace.steps,
        saturated_steps: trace.saturated_steps,
        artifacts: Vec::new(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(runtime)?;
        let csv = dir.join(format!("{}.csv", scenario.name));
        write_csv(&csv, &trace)?;
        let summary = dir.join(format!("{}_summary.txt", scenario.name));
        report.artifacts = vec![csv, summary.clone()];
        fs::write(&summary, report.render()).map_err(runtime)?;
    }
    Ok(report)
}

pub fn render_verify(r: &VerifyReport) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            let (op, tol) = match row.expect {
                Expect::AtMost(t) => ("<=", t),
                Expect::Above(t) => (">", t),
            };
            vec![
                if row.passed() { "PASS" } else { "FAIL" }.into(),
                row.check.into(),
                sci(row.worst),
                format!("{op} {}", sci(tol)),
                format!("{}/{}", row.failures, r.draws),
            ]
        })
        .collect();
    format!(
        "seed: {}  draws: {}\n\n{}",
        r.seed,
        r.draws,
        table(&["status", "check", "worst", "expect", "failures"], &rows)
    )
}

pub fn cmd_verify(opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    parabuck::verify::run_verify(opts).map_err(runtime)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Load,
    KD,
    KI,
    KLambda,
    EsrScale,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "R" | "load" => SweepParam::Load,
            "k_d" => SweepParam::KD,
            "k_i" => SweepParam::KI,
            "k_lambda" => SweepParam::KLambda,
            "r_scale" => SweepParam::EsrScale,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown sweep parameter `{s}` (expected R, k_d, k_i, k_lambda, r_scale)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Load => "R",
            SweepParam::KD => "k_d",
            SweepParam::KI => "k_i",
            SweepParam::KLambda => "k_lambda",
            SweepParam::EsrScale => "r_scale",
        }
    }
}

/// Applies one sweep value. Sweeping `R` fixes the load for the whole run
/// (load steps are dropped).
pub fn apply_sweep(base: &Scenario, p: SweepParam, v: f64) -> Result<Scenario, CliError> {
    let mut s = base.clone();
    let robust_only = || CliError::Usage(format!("`{}` needs the robust controller", p.name()));
    match p {
        SweepParam::Load => {
            s.bank.load = v;
            s.events.retain(|e| !matches!(e.event, Event::SetLoad(_)));
        }
        SweepParam::KD => match &mut s.controller {
            ControllerSpec::Robust(c) => c.k_d = v,
            _ => return Err(robust_only()),
        },
        SweepParam::KI => match &mut s.controller {
            ControllerSpec::Robust(c) => c.k_i = v,
            _ => return Err(robust_only()),
        },
        SweepParam::KLambda => {
            let n = s.m() - 1;
            let k = nalgebra::DMatrix::identity(n, n) * v;
            match &mut s.controller {
                ControllerSpec::Robust(c) => c.k_lambda = k,
                ControllerSpec::KnownLoad { k_lambda, .. } => *k_lambda = k,
                ControllerSpec::OpenLoop(_) => {
                    return Err(CliError::Usage("open loop has no k_lambda".into()))
                }
            }
        }
        SweepParam::EsrScale => {
            if !s.plant.esr {
                return Err(CliError::Usage("r_scale needs `plant.esr = true`".into()));
            }
            s.bank.esr.iter_mut().for_each(|r| *r *= v);
        }
    }
    s.name = format!("{}_{}={v}", base.name, p.name());
    s.validate().map_err(|e| CliError::Config(e.into()))?;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub final_q: f64,
    pub q_rel_error: f64,
    pub final_phi_t: f64,
    pub final_phi: Vec<f64>,
    pub final_casimir: Vec<f64>,
    pub oracle_rel_distance: Option<f64>,
    pub saturated_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub artifact: Option<PathBuf>,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.value),
                    format!("{:.6}", r.final_q),
                    sci(r.q_rel_error),
                    r.final_phi
                        .iter()
                        .map(|v| sci(*v))
                        .collect::<Vec<_>>()
                        .join(" "),
                    r.final_casimir
                        .iter()
                        .map(|v| sci(*v))
                        .collect::<Vec<_>>()
                        .join(" "),
                    r.oracle_rel_distance.map_or("-".into(), sci),
                    r.saturated_steps.to_string(),
                ]
            })
            .collect();
        let mut s = table(
            &[
                self.param.name(),
                "Q final (C)",
                "Q rel err",
                "phi final (Wb)",
                "C final (Wb)",
                "oracle rel dist",
                "sat steps",
            ],
            &rows,
        );
        if let Some(a) = &self.artifact {
            let _ = writeln!(s, "\nwrote {}", a.display());
        }
        s
    }
}

pub fn cmd_sweep(
    cfg: &ScenarioConfig,
    ov: &Overrides,
    param: &str,
    values: &[f64],
    out: Option<&Path>,
) -> Result<SweepReport, CliError> {
    let param = SweepParam::parse(param)?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let base = build_scenario(cfg, ov)?;
    let scenarios = values
        .iter()
        .map(|v| apply_sweep(&base, param, *v))
        .collect::<Result<Vec<_>, _>>()?;

    let rows = scenarios
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            let trace = run(s).map_err(runtime)?;
            let last = trace.last();
            let q_ref = s.conditions_at(s.duration).q_ref.unwrap_or(f64::NAN);
            let oracle = oracle_distance(s, &trace, s.duration)
                .ok()
                .map(|d| d.max_relative_error);
            Ok(SweepRow {
                value: *v,
                final_q: last.q,
                q_rel_error: (last.q - q_ref) / q_ref,
                final_phi_t: last.phi_t,
                final_phi: last.phi.clone(),
                final_casimir: last.casimir.clone(),
                oracle_rel_distance: oracle,
                saturated_steps: trace.saturated_steps,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut report = SweepReport {
        param,
        rows,
        artifact: None,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(runtime)?;
        let path = dir.join(format!("{}_sweep_{}.csv", base.name, param.name()));
        write_sweep_csv(&path, &report, base.m()).map_err(runtime)?;
        report.artifact = Some(path);
    }
    Ok(report)
}

fn write_sweep_csv(path: &Path, r: &SweepReport, m: usize) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        r.param.name().to_string(),
        "Q_final".into(),
        "Q_rel_err".into(),
        "phi_T_final".into(),
    ];
    header.extend((1..=m).map(|k| format!("phi_{k}_final")));
    header.extend((1..m).map(|k| format!("C_{k}_final")));
    header.push("oracle_rel_dist".into());
    header.push("saturated_steps".into());
    w.write_record(&header)?;
    for row in &r.rows {
        let mut rec = vec![
            row.value.to_string(),
            row.final_q.to_string(),
            row.q_rel_error.to_string(),
            row.final_phi_t.to_string(),
        ];
        rec.extend(row.final_phi.iter().map(f64::to_string));
        rec.extend(row.final_casimir.iter().map(f64::to_string));
        rec.push(
            row.oracle_rel_distance
                .map_or(String::new(), |v| v.to_string()),
        );
        rec.push(row.saturated_steps.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
