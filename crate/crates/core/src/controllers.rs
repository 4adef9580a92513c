//! Control laws in decoupled coordinates.
//!
//! The equivalent buck `(φ_T, Q)` is driven by `μ`, the Casimir coordinates
//! by `λ`, and the physical duty cycles are `d = U [λ; μ]`.
//!
//! * Known load: IDA-PBC on `(φ_T, Q)` shaping the closed loop to
//!   `H_Q^d = (φ_T − φ_T*)²/(2 L_eq) + (Q − Q_r)²/(2C)` with damping
//!   `diag(k_μ, 1/R)`.
//! * Unknown load: PI-like law with integral action on the non-passive
//!   output `Q`. It never reads the load resistance.
//! * Repartition: gradient flow `Ċ = −K_λ ∇_C J_z`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::coordinates::CoordinateMaps;
use crate::costs::{grad_z, CostFunction};
use crate::error::{Error, Result};
use crate::model::BankParams;

fn check_gain(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

/// Checks `K = Kᵀ ≻ 0`.
pub fn check_gain_matrix(k_lambda: &DMatrix<f64>) -> Result<()> {
    if !k_lambda.is_square() {
        return Err(Error::invalid("k_lambda", "must be square"));
    }
    let asym = (k_lambda - k_lambda.transpose()).amax();
    if asym > 1e-12 * k_lambda.amax().max(1.0) {
        return Err(Error::invalid(
            "k_lambda",
            format!("must be symmetric, asymmetry {asym:e}"),
        ));
    }
    let min_eig = k_lambda
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return Err(Error::invalid(
            "k_lambda",
            format!("must be positive definite, smallest eigenvalue {min_eig:e}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownLoadConfig {
    pub k_mu: f64,
    pub k_lambda: DMatrix<f64>,
    /// Charge reference (C).
    pub q_ref: f64,
    /// Load resistance assumed by the controller (Ω).
    pub load: f64,
}

impl KnownLoadConfig {
    pub fn validate(&self) -> Result<()> {
        check_gain("k_mu", self.k_mu)?;
        check_gain("load", self.load)?;
        if !self.q_ref.is_finite() {
            return Err(Error::invalid("q_ref", "must be finite"));
        }
        check_gain_matrix(&self.k_lambda)
    }

    /// `φ_T* = L_eq,m Q_r / (R C)`.
    pub fn phi_t_star(&self, maps: &CoordinateMaps) -> f64 {
        maps.total_inductance() * self.q_ref / (self.load * maps.capacitance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub k_d: f64,
    pub k_i: f64,
    pub k_lambda: DMatrix<f64>,
    /// Charge reference (C).
    pub q_ref: f64,
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        check_gain("k_d", self.k_d)?;
        check_gain("k_i", self.k_i)?;
        if !self.q_ref.is_finite() {
            return Err(Error::invalid("q_ref", "must be finite"));
        }
        check_gain_matrix(&self.k_lambda)
    }

    /// Integrator value at the equilibrium for a given load,
    /// `ξ* = −(1/k_d + 1/R) Q_r / C`.
    pub fn xi_star(&self, load: f64, capacitance: f64) -> f64 {
        -(1.0 / self.k_d + 1.0 / load) * self.q_ref / capacitance
    }
}

/// Integrator state of the unknown-load law.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RobustState {
    /// `ξ` (A), with `ξ̇ = k_i (Q − Q_r)/C`.
    pub xi: f64,
}

/// Known-load IDA-PBC law for the equivalent buck:
///
/// `μ = (1/E_eq) [ −(k_μ / L_eq,m)(φ_T − φ_T*) + Q_r/C ]`.
///
/// At `φ_T = φ_T*` this yields `E_eq μ = v_r`, i.e. the steady duty cycle.
pub fn ida_pbc_mu(cfg: &KnownLoadConfig, phi_t: f64, maps: &CoordinateMaps) -> f64 {
    let l_eq = maps.total_inductance();
    let err = phi_t - cfg.phi_t_star(maps);
    (-(cfg.k_mu / l_eq) * err + cfg.q_ref / maps.capacitance) / maps.e_eq
}

/// `λ = −diag(Ẽ)⁻¹ K_λ ∇_C J_z(C, φ_T)`.
pub fn gradient_flow_lambda(
    k_lambda: &DMatrix<f64>,
    casimir: &DVector<f64>,
    phi_t: f64,
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
) -> DVector<f64> {
    let g = grad_z(cost, maps, casimir, phi_t);
    let mut lambda = -(k_lambda * g);
    lambda.component_div_assign(&maps.e_tilde);
    lambda
}

/// Repartition law evaluated at the known equilibrium total flux `φ_T*`.
pub fn known_lambda(
    cfg: &KnownLoadConfig,
    casimir: &DVector<f64>,
    phi_t_star: f64,
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
) -> DVector<f64> {
    gradient_flow_lambda(&cfg.k_lambda, casimir, phi_t_star, cost, maps)
}

/// Repartition law evaluated at the measured total flux.
pub fn robust_lambda(
    cfg: &RobustConfig,
    casimir: &DVector<f64>,
    phi_t: f64,
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
) -> DVector<f64> {
    gradient_flow_lambda(&cfg.k_lambda, casimir, phi_t, cost, maps)
}

/// Load-independent law for the equivalent buck. Returns `(μ, ξ̇)` with
///
/// ```text
/// ξ̇ = k_i (Q − Q_r)/C
/// μ = −(1/E_eq) (k_d φ_T / L_eq,m + k_d ξ + L_eq,m k_i (Q − Q_r)/C)
/// ```
pub fn robust_mu(
    cfg: &RobustConfig,
    state: &RobustState,
    phi_t: f64,
    q: f64,
    maps: &CoordinateMaps,
) -> (f64, f64) {
    let l_eq = maps.total_inductance();
    let v_err = (q - cfg.q_ref) / maps.capacitance;
    let xi_dot = cfg.k_i * v_err;
    let mu = -(cfg.k_d * phi_t / l_eq + cfg.k_d * state.xi + l_eq * cfg.k_i * v_err) / maps.e_eq;
    (mu, xi_dot)
}

/// Error coordinates in which the unknown-load closed loop is a
/// port-Hamiltonian system with energy [`desired_energy`]. Needs the true
/// load, so it is a diagnostic only.
pub fn chi_transform(
    cfg: &RobustConfig,
    phi_t: f64,
    q: f64,
    xi: f64,
    load: f64,
    maps: &CoordinateMaps,
) -> Vector3<f64> {
    let l_eq = maps.total_inductance();
    let c = maps.capacitance;
    let e1 = phi_t - l_eq * cfg.q_ref / (load * c);
    let e2 = q - cfg.q_ref;
    let e3 = xi - cfg.xi_star(load, c);
    Vector3::new(e1 + l_eq * e3, e2, e3)
}

fn chi_energy_weights(cfg: &RobustConfig, maps: &CoordinateMaps) -> Vector3<f64> {
    Vector3::new(
        1.0 / maps.total_inductance(),
        1.0 / maps.capacitance,
        1.0 / cfg.k_i,
    )
}

/// `H_d(χ) = ½ χᵀ diag(L_eq,m, C, k_i)⁻¹ χ`.
pub fn desired_energy(cfg: &RobustConfig, chi: &Vector3<f64>, maps: &CoordinateMaps) -> f64 {
    0.5 * chi.dot(&chi.component_mul(&chi_energy_weights(cfg, maps)))
}

/// `χ̇ = [[−k_d, −1, 0], [1, −1/R, −k_i], [0, k_i, 0]] ∇H_d(χ)`.
pub fn chi_rhs(
    cfg: &RobustConfig,
    chi: &Vector3<f64>,
    load: f64,
    maps: &CoordinateMaps,
) -> Vector3<f64> {
    let structure = Matrix3::new(
        -cfg.k_d,
        -1.0,
        0.0, //
        1.0,
        -1.0 / load,
        -cfg.k_i, //
        0.0,
        cfg.k_i,
        0.0,
    );
    structure * chi.component_mul(&chi_energy_weights(cfg, maps))
}

/// `H_Q^d` of the known-load closed loop.
pub fn known_load_energy(cfg: &KnownLoadConfig, phi_t: f64, q: f64, maps: &CoordinateMaps) -> f64 {
    let e1 = phi_t - cfg.phi_t_star(maps);
    let e2 = q - cfg.q_ref;
    0.5 * e1 * e1 / maps.total_inductance() + 0.5 * e2 * e2 / maps.capacitance
}

/// Physical duty cycles, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCommand {
    pub duty: DVector<f64>,
    pub requested: DVector<f64>,
    pub saturated: Vec<bool>,
}

impl DutyCommand {
    pub fn clamp(requested: DVector<f64>) -> Self {
        let saturated = requested.iter().map(|d| !(0.0..=1.0).contains(d)).collect();
        let duty = requested.map(|d| d.clamp(0.0, 1.0));
        Self {
            duty,
            requested,
            saturated,
        }
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|s| *s)
    }
}

/// `d = U [λ; μ]`, clamped.
pub fn assemble_duty(maps: &CoordinateMaps, lambda: &DVector<f64>, mu: f64) -> DutyCommand {
    DutyCommand::clamp(maps.input_to_d(lambda, mu))
}

/// ESR compensation `d_k = r_k φ_k / (L_k E_k) + d̃_k`, using the ESR the
/// controller believes in (`assumed.esr`).
pub fn pre_feedback(
    assumed: &BankParams,
    phi: &DVector<f64>,
    d_tilde: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(d_tilde.len(), |k, _| {
        assumed.esr[k] * phi[k] / (assumed.inductance[k] * assumed.source[k]) + d_tilde[k]
    })
}
