//! Randomized structural checks over bank parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coordinates::{
    build_maps, identity_residual, transform_system, verify_casimir, CoordinateMaps,
    DesignVoltages, COMPOSED_TOLERANCE, EXACT_TOLERANCE,
};
use crate::costs::{grad_z, CostFunction, QuadraticCost};
use crate::error::Error;
use crate::model::{build_pch, BankParams, PchState, PchSystem};

pub const DEFAULT_SEED: u64 = 0x5eed;
pub const DEFAULT_DRAWS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub draws: usize,
    pub min_m: usize,
    pub max_m: usize,
    /// Perturbs one entry of `Γᵀ` after the maps are built, so the
    /// Casimir check must fail.
    pub corrupt_gamma: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            draws: DEFAULT_DRAWS,
            min_m: 2,
            max_m: 8,
            corrupt_gamma: false,
        }
    }
}

/// How a residual is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expect {
    AtMost(f64),
    Above(f64),
}

impl Expect {
    fn ok(self, v: f64) -> bool {
        match self {
            Expect::AtMost(t) => v <= t,
            Expect::Above(t) => v > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub check: &'static str,
    pub expect: Expect,
    /// Worst residual over all draws (the smallest one for `Above`).
    pub worst: f64,
    pub failures: usize,
}

impl VerifyRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub draws: usize,
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(VerifyRow::passed)
    }
}

const CHECKS: [(&str, Expect); 9] = [
    ("skew-symmetry of J", Expect::AtMost(0.0)),
    ("dissipation PSD (min eigenvalue)", Expect::Above(-1e-14)),
    ("Gamma^T 1 = 0", Expect::AtMost(EXACT_TOLERANCE)),
    ("Phi Phi^-1 = I", Expect::AtMost(EXACT_TOLERANCE)),
    ("transformed pattern", Expect::AtMost(COMPOSED_TOLERANCE)),
    ("Casimir residual, ideal", Expect::AtMost(EXACT_TOLERANCE)),
    ("Casimir residual, ESR", Expect::Above(EXACT_TOLERANCE)),
    ("H_z = H round trip (rel)", Expect::AtMost(EXACT_TOLERANCE)),
    (
        "cost gradient vs FD (rel)",
        Expect::AtMost(GRADIENT_TOLERANCE),
    ),
];

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Random bank with `m` converters in the ranges used by the suite.
pub fn random_bank(rng: &mut ChaCha8Rng, m: usize) -> BankParams {
    let inductance = (0..m).map(|_| log_uniform(rng, 0.5e-3, 5e-3)).collect();
    let source = (0..m).map(|_| rng.gen_range(12.0..48.0)).collect();
    let esr = (0..m).map(|_| rng.gen_range(0.01..0.5)).collect();
    BankParams::new(
        inductance,
        log_uniform(rng, 1e-3, 5e-2),
        rng.gen_range(1.0..100.0),
        source,
    )
    .with_esr(esr)
}

pub fn random_quadratic(rng: &mut ChaCha8Rng, m: usize) -> QuadraticCost {
    QuadraticCost {
        k1: (0..m).map(|_| log_uniform(rng, 1e3, 1e6)).collect(),
        k2: (0..m).map(|_| rng.gen_range(-100.0..100.0)).collect(),
    }
}

fn structure_residual(result: Result<f64, Error>) -> f64 {
    match result {
        Ok(r) => r,
        Err(Error::Structure { residual, .. }) => residual,
        Err(_) => f64::INFINITY,
    }
}

/// Norm-wise relative error of `∇_C J_z` against central differences.
fn gradient_fd_error(
    cost: &QuadraticCost,
    maps: &CoordinateMaps,
    casimir: &DVector<f64>,
    phi_t: f64,
) -> f64 {
    let analytic = grad_z(cost, maps, casimir, phi_t);
    let mut fd = DVector::zeros(casimir.len());
    for i in 0..casimir.len() {
        let h = 1e-4 * casimir[i].abs().max(1e-3);
        let mut up = casimir.clone();
        let mut dn = casimir.clone();
        up[i] += h;
        dn[i] -= h;
        let eval = |c: &DVector<f64>| cost.evaluate(&maps.flux_from(c, phi_t));
        fd[i] = (eval(&up) - eval(&dn)) / (2.0 * h);
    }
    let phi = maps.flux_from(casimir, phi_t);
    let grad_phi = cost.gradient_phi(&phi);
    let mut fd_phi = DVector::zeros(phi.len());
    for i in 0..phi.len() {
        let h = 1e-4 * phi[i].abs().max(1e-3);
        let mut up = phi.clone();
        let mut dn = phi.clone();
        up[i] += h;
        dn[i] -= h;
        fd_phi[i] = (cost.evaluate(&up) - cost.evaluate(&dn)) / (2.0 * h);
    }
    let rel = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm() / a.norm().max(f64::MIN_POSITIVE);
    rel(&analytic, &fd).max(rel(&grad_phi, &fd_phi))
}

fn residuals(
    rng: &mut ChaCha8Rng,
    m: usize,
    corrupt_gamma: bool,
) -> Result<[f64; CHECKS.len()], Error> {
    let bank = random_bank(rng, m);
    let design = DesignVoltages::mean_of(&bank);
    let sys: PchSystem = build_pch(&bank)?;
    let mut maps = build_maps(&bank, &design)?;
    if corrupt_gamma {
        let col = rng.gen_range(0..m);
        maps.gamma_t[(0, col)] += 1e-3;
    }

    let skew = (&sys.interconnection + sys.interconnection.transpose()).amax();
    let with_esr = sys.with_esr(&bank);
    let sym = |d: &DMatrix<f64>| (d + d.transpose()) * 0.5;
    let psd = SymmetricEigen::new(sym(&sys.dissipation))
        .eigenvalues
        .min()
        .min(
            SymmetricEigen::new(sym(&with_esr.dissipation))
                .eigenvalues
                .min(),
        );
    let gamma_one = (&maps.gamma_t * DVector::from_element(m, 1.0)).amax();
    let round_trip = identity_residual(&(&maps.phi * &maps.phi_inv))
        .max(identity_residual(&(&maps.phi_inv * &maps.phi)));
    let transformed = transform_system(&sys, &maps);
    let pattern = structure_residual(
        transformed
            .as_ref()
            .map(|t| t.pattern_residual)
            .map_err(Clone::clone),
    );
    let casimir_ideal = verify_casimir(&sys, &maps).residual;
    let casimir_esr = verify_casimir(&with_esr, &maps).residual;

    let x = PchState::new(
        DVector::from_fn(m, |_, _| rng.gen_range(-5e-3..5e-3)),
        rng.gen_range(0.0..0.5),
    );
    let z = maps.to_z(&x);
    let h = sys.hamiltonian(&x);
    let energy = match &transformed {
        Ok(t) => (t.hamiltonian(&z) - h).abs() / h,
        Err(_) => f64::INFINITY,
    };
    let back = maps.to_x(&z).to_vector();
    let state = (&back - x.to_vector()).amax() / x.to_vector().amax();

    let cost = random_quadratic(rng, m);
    let gradient = gradient_fd_error(&cost, &maps, &z.casimir, z.phi_t);

    Ok([
        skew,
        psd,
        gamma_one,
        round_trip,
        pattern,
        casimir_ideal,
        casimir_esr,
        energy.max(state),
        gradient,
    ])
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport, Error> {
    if opts.min_m < 2 || opts.max_m < opts.min_m {
        return Err(Error::invalid("m", "range must satisfy 2 <= min <= max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows: Vec<VerifyRow> = CHECKS
        .iter()
        .map(|(check, expect)| VerifyRow {
            check,
            expect: *expect,
            worst: match expect {
                Expect::AtMost(_) => 0.0,
                Expect::Above(_) => f64::INFINITY,
            },
            failures: 0,
        })
        .collect();
    for _ in 0..opts.draws {
        let m = rng.gen_range(opts.min_m..=opts.max_m);
        let values = residuals(&mut rng, m, opts.corrupt_gamma)?;
        for (row, v) in rows.iter_mut().zip(values) {
            row.worst = match row.expect {
                Expect::AtMost(_) => row.worst.max(v),
                Expect::Above(_) => row.worst.min(v),
            };
            if !row.expect.ok(v) {
                row.failures += 1;
            }
        }
    }
    Ok(VerifyReport {
        seed: opts.seed,
        draws: opts.draws,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_suite_passes() {
        let report = run_verify(&VerifyOptions::default()).unwrap();
        for row in &report.rows {
            assert!(row.passed(), "{row:?}");
        }
    }

    #[test]
    fn seeded_reproducible() {
        let opts = VerifyOptions {
            draws: 10,
            ..Default::default()
        };
        assert_eq!(run_verify(&opts).unwrap(), run_verify(&opts).unwrap());
    }

    #[test]
    fn corrupt_gamma_turns_casimir_red() {
        let report = run_verify(&VerifyOptions {
            draws: 5,
            corrupt_gamma: true,
            ..Default::default()
        })
        .unwrap();
        let row = report
            .rows
            .iter()
            .find(|r| r.check == "Casimir residual, ideal")
            .unwrap();
        assert_eq!(row.failures, 5);
        assert!(!report.passed());
    }
}
