//! Average port-Hamiltonian model of `m` buck converters sharing one
//! output capacitor and one resistive load.
//!
//! State is `x = [φ; Q]` (inductor fluxes, capacitor charge) and the
//! dynamics read
//!
//! ```text
//! ẋ = (J − R) ∇H(x) + B d,     H(x) = ½ xᵀ diag(L, C)⁻¹ x
//! ```
//!
//! with `J = [[0, −1ₘ], [1ₘᵀ, 0]]`, `R = diag(0ₘ, 1/R_load)` and
//! `B = [diag(E); 0ᵀ]`. Inductor series resistance is kept out of the ideal
//! system and folded in with [`PchSystem::with_esr`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SKEW_TOLERANCE: f64 = 1e-14;

/// Physical parameters of the converter bank (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankParams {
    /// Inductances `L_k` (H).
    pub inductance: Vec<f64>,
    /// Output capacitance (F).
    pub capacitance: f64,
    /// Load resistance (Ω).
    pub load: f64,
    /// Source voltages `E_k` (V).
    pub source: Vec<f64>,
    /// Inductor equivalent series resistances `r_k` (Ω).
    pub esr: Vec<f64>,
}

impl BankParams {
    /// Ideal bank (zero ESR). Call [`BankParams::validate`] or go through
    /// [`build_pch`] before trusting the values.
    pub fn new(inductance: Vec<f64>, capacitance: f64, load: f64, source: Vec<f64>) -> Self {
        let m = inductance.len();
        Self {
            inductance,
            capacitance,
            load,
            source,
            esr: vec![0.0; m],
        }
    }

    pub fn with_esr(mut self, esr: Vec<f64>) -> Self {
        self.esr = esr;
        self
    }

    /// Number of converters.
    pub fn m(&self) -> usize {
        self.inductance.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m < 2 {
            return Err(Error::invalid(
                "inductance",
                format!("at least 2 converters required, got {m}"),
            ));
        }
        if self.source.len() != m {
            return Err(Error::invalid(
                "source",
                format!("expected {m} entries, got {}", self.source.len()),
            ));
        }
        if self.esr.len() != m {
            return Err(Error::invalid(
                "esr",
                format!("expected {m} entries, got {}", self.esr.len()),
            ));
        }
        positive_entries("inductance", &self.inductance)?;
        positive_entries("source", &self.source)?;
        positive_scalar("capacitance", self.capacitance)?;
        positive_scalar("load", self.load)?;
        for (k, r) in self.esr.iter().enumerate() {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::invalid(
                    format!("esr[{k}]"),
                    format!("must be finite and >= 0, got {r}"),
                ));
            }
        }
        Ok(())
    }

    pub fn has_esr(&self) -> bool {
        self.esr.iter().any(|r| *r != 0.0)
    }
}

fn positive_entries(field: &str, values: &[f64]) -> Result<()> {
    for (k, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(
                format!("{field}[{k}]"),
                format!("must be finite and > 0, got {v}"),
            ));
        }
    }
    Ok(())
}

fn positive_scalar(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

/// Energy variables of the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PchState {
    /// Inductor fluxes (Wb).
    pub phi: DVector<f64>,
    /// Capacitor charge (C).
    pub q: f64,
}

impl PchState {
    pub fn new(phi: DVector<f64>, q: f64) -> Self {
        Self { phi, q }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            phi: DVector::zeros(m),
            q: 0.0,
        }
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let m = x.len() - 1;
        Self {
            phi: x.rows(0, m).into_owned(),
            q: x[m],
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let m = self.phi.len();
        DVector::from_fn(m + 1, |i, _| if i < m { self.phi[i] } else { self.q })
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.phi.iter().all(|v| v.is_finite())
    }
}

/// Matrices of the linear port-Hamiltonian system.
#[derive(Debug, Clone, PartialEq)]
pub struct PchSystem {
    /// Interconnection matrix `J`, skew-symmetric.
    pub interconnection: DMatrix<f64>,
    /// Dissipation matrix `R`, symmetric positive semi-definite.
    pub dissipation: DMatrix<f64>,
    /// Input matrix `B`, `(m+1) × m`.
    pub input: DMatrix<f64>,
    /// Hamiltonian quadratic form `diag(L, C)⁻¹`.
    pub energy_form: DMatrix<f64>,
}

/// Builds the ideal (ESR-free) system for `params`.
pub fn build_pch(params: &BankParams) -> Result<PchSystem> {
    params.validate()?;
    let m = params.m();
    let n = m + 1;

    let mut interconnection = DMatrix::zeros(n, n);
    for k in 0..m {
        interconnection[(k, m)] = -1.0;
        interconnection[(m, k)] = 1.0;
    }
    let skew = (&interconnection + interconnection.transpose()).amax();
    if skew > SKEW_TOLERANCE {
        return Err(Error::Structure {
            what: "interconnection skew-symmetry",
            residual: skew,
            tolerance: SKEW_TOLERANCE,
        });
    }

    let mut dissipation = DMatrix::zeros(n, n);
    dissipation[(m, m)] = 1.0 / params.load;

    let mut input = DMatrix::zeros(n, m);
    for k in 0..m {
        input[(k, k)] = params.source[k];
    }

    let mut energy_form = DMatrix::zeros(n, n);
    for k in 0..m {
        energy_form[(k, k)] = 1.0 / params.inductance[k];
    }
    energy_form[(m, m)] = 1.0 / params.capacitance;

    Ok(PchSystem {
        interconnection,
        dissipation,
        input,
        energy_form,
    })
}

impl PchSystem {
    /// Number of converters.
    pub fn m(&self) -> usize {
        self.input.ncols()
    }

    /// `J − R`.
    pub fn structure(&self) -> DMatrix<f64> {
        &self.interconnection - &self.dissipation
    }

    /// Replaces the load resistance. ESR entries of the flux block are kept.
    pub fn set_load(&mut self, load: f64) -> Result<()> {
        positive_scalar("load", load)?;
        let m = self.m();
        self.dissipation[(m, m)] = 1.0 / load;
        Ok(())
    }

    pub fn load(&self) -> f64 {
        let m = self.m();
        1.0 / self.dissipation[(m, m)]
    }

    pub fn grad_hamiltonian(&self, x: &PchState) -> DVector<f64> {
        &self.energy_form * x.to_vector()
    }

    pub fn hamiltonian(&self, x: &PchState) -> f64 {
        let v = x.to_vector();
        0.5 * v.dot(&(&self.energy_form * &v))
    }

    /// `(J − R)∇H(x) + B d`.
    pub fn open_loop_rhs(&self, x: &PchState, d: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.m();
        if x.phi.len() != m {
            return Err(Error::DimensionMismatch {
                what: "flux vector",
                expected: m,
                got: x.phi.len(),
            });
        }
        if d.len() != m {
            return Err(Error::DimensionMismatch {
                what: "duty vector",
                expected: m,
                got: d.len(),
            });
        }
        Ok(self.structure() * self.grad_hamiltonian(x) + &self.input * d)
    }

    /// Power flowing through the interconnection and dissipation,
    /// `∇Hᵀ(J − R)∇H`. Never positive.
    pub fn internal_power(&self, x: &PchState) -> f64 {
        let g = self.grad_hamiltonian(x);
        g.dot(&(self.structure() * &g))
    }

    /// Power supplied through the input port, `∇Hᵀ B d`.
    pub fn supplied_power(&self, x: &PchState, d: &DVector<f64>) -> f64 {
        self.grad_hamiltonian(x).dot(&(&self.input * d))
    }

    /// Adds the inductor series resistances of `params` to the flux block
    /// of the dissipation matrix, giving an extra `−r_k φ_k / L_k` on each
    /// flux derivative.
    pub fn with_esr(&self, params: &BankParams) -> PchSystem {
        let mut sys = self.clone();
        for (k, r) in params.esr.iter().enumerate() {
            sys.dissipation[(k, k)] += r;
        }
        sys
    }
}

/// Free-function form of [`PchSystem::with_esr`].
pub fn apply_esr(sys: &PchSystem, params: &BankParams) -> PchSystem {
    sys.with_esr(params)
}
