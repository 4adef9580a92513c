//! Casimir-based change of coordinates.
//!
//! The state `x = [φ; Q]` is mapped to `z = [C; φ_T; Q] = Φ⁻¹ x` where
//! `C = Γᵀφ` collects `m − 1` Casimir functions (flux repartition) and
//! `φ_T = L_eq,m Σ φ_k / L_k` is the total flux. The input `d` is mapped to
//! `[λ; μ] = U⁻¹ d`. In these coordinates the repartition dynamics
//! `Ċ = diag(Ẽ) λ` are fully disconnected from the `(φ_T, Q)` equivalent
//! buck converter driven by `μ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BankParams, PchState, PchSystem};

/// Exact-structure tolerance (entries that must vanish identically).
pub const EXACT_TOLERANCE: f64 = 1e-12;
/// Tolerance for composed matrix algebra.
pub const COMPOSED_TOLERANCE: f64 = 1e-10;

/// Free positive design voltages `Ẽ` (one per Casimir) and `E_eq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVoltages {
    pub e_tilde: Vec<f64>,
    pub e_eq: f64,
}

impl DesignVoltages {
    /// Every design voltage set to the mean source voltage.
    pub fn mean_of(params: &BankParams) -> Self {
        let m = params.m();
        let mean = params.source.iter().sum::<f64>() / m as f64;
        Self {
            e_tilde: vec![mean; m.saturating_sub(1)],
            e_eq: mean,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.e_tilde.len() + 1 != m {
            return Err(Error::invalid(
                "e_tilde",
                format!("expected {} entries, got {}", m - 1, self.e_tilde.len()),
            ));
        }
        for (k, e) in self.e_tilde.iter().enumerate() {
            if !(e.is_finite() && *e > 0.0) {
                return Err(Error::invalid(
                    format!("e_tilde[{k}]"),
                    format!("must be finite and > 0, got {e}"),
                ));
            }
        }
        if !(self.e_eq.is_finite() && self.e_eq > 0.0) {
            return Err(Error::invalid(
                "e_eq",
                format!("must be finite and > 0, got {}", self.e_eq),
            ));
        }
        Ok(())
    }
}

/// State in decoupled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ZState {
    /// Casimir coordinates `C` (Wb), `m − 1` entries.
    pub casimir: DVector<f64>,
    /// Total flux `φ_T` (Wb).
    pub phi_t: f64,
    /// Capacitor charge (C).
    pub q: f64,
}

impl ZState {
    pub fn to_vector(&self) -> DVector<f64> {
        let k = self.casimir.len();
        DVector::from_fn(k + 2, |i, _| match i {
            i if i < k => self.casimir[i],
            i if i == k => self.phi_t,
            _ => self.q,
        })
    }

    pub fn from_vector(z: &DVector<f64>) -> Self {
        let k = z.len() - 2;
        Self {
            casimir: z.rows(0, k).into_owned(),
            phi_t: z[k],
            q: z[k + 1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi_t.is_finite() && self.q.is_finite() && self.casimir.iter().all(|v| v.is_finite())
    }
}

/// Cumulative parallel inductances `L_eq,k = (Σ_{j≤k} 1/L_j)⁻¹`.
pub fn equivalent_inductances(inductance: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    inductance
        .iter()
        .map(|l| {
            acc += 1.0 / l;
            1.0 / acc
        })
        .collect()
}

/// Casimir generator `Γᵀ`, `(m − 1) × m`. Row `k` is `G_k − e_{k+1}ᵀ` with
/// `G_k = L_eq,k [1/L_1, …, 1/L_k, 0, …, 0]`.
pub fn build_gamma(inductance: &[f64]) -> Result<DMatrix<f64>> {
    let m = inductance.len();
    if m < 2 {
        return Err(Error::invalid(
            "inductance",
            format!("at least 2 converters required, got {m}"),
        ));
    }
    for (k, l) in inductance.iter().enumerate() {
        if !(l.is_finite() && *l > 0.0) {
            return Err(Error::invalid(
                format!("inductance[{k}]"),
                format!("must be finite and > 0, got {l}"),
            ));
        }
    }
    let l_eq = equivalent_inductances(inductance);
    let mut gamma_t = DMatrix::zeros(m - 1, m);
    for k in 0..m - 1 {
        for j in 0..=k {
            gamma_t[(k, j)] = l_eq[k] / inductance[j];
        }
        gamma_t[(k, k + 1)] = -1.0;
    }
    Ok(gamma_t)
}

/// All matrices of the state and input changes of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMaps {
    pub gamma_t: DMatrix<f64>,
    /// Right inverse `Γ⁺` of `Γᵀ`, `m × (m − 1)`.
    pub gamma_plus: DMatrix<f64>,
    pub phi_inv: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub u_inv: DMatrix<f64>,
    pub l_eq: DVector<f64>,
    /// Virtual inductances `L_C,k = L_eq,k + L_{k+1}`.
    pub l_c: DVector<f64>,
    pub e_tilde: DVector<f64>,
    pub e_eq: f64,
    pub capacitance: f64,
}

impl CoordinateMaps {
    pub fn m(&self) -> usize {
        self.gamma_t.ncols()
    }

    /// `L_eq,m`, the inductance of all coils in parallel.
    pub fn total_inductance(&self) -> f64 {
        self.l_eq[self.m() - 1]
    }

    pub fn to_z(&self, x: &PchState) -> ZState {
        ZState::from_vector(&(&self.phi_inv * x.to_vector()))
    }

    pub fn to_x(&self, z: &ZState) -> PchState {
        PchState::from_vector(&(&self.phi * z.to_vector()))
    }

    /// Fluxes `Γ⁺ C + 1ₘ φ_T` (the first `m` rows of `Φ z`; independent of `Q`).
    pub fn flux_from(&self, casimir: &DVector<f64>, phi_t: f64) -> DVector<f64> {
        let mut phi = &self.gamma_plus * casimir;
        phi.add_scalar_mut(phi_t);
        phi
    }

    /// `d = U [λ; μ]`.
    pub fn input_to_d(&self, lambda: &DVector<f64>, mu: f64) -> DVector<f64> {
        let m = self.m();
        let v = DVector::from_fn(m, |i, _| if i + 1 < m { lambda[i] } else { mu });
        &self.u * v
    }

    /// `[λ; μ] = U⁻¹ d`.
    pub fn d_to_input(&self, d: &DVector<f64>) -> (DVector<f64>, f64) {
        let m = self.m();
        let v = &self.u_inv * d;
        (v.rows(0, m - 1).into_owned(), v[m - 1])
    }
}

/// Builds `Φ⁻¹`, `Φ`, `U`, `U⁻¹` for the bank. `Φ` is obtained by numeric
/// inversion and cross-checked against the closed form
/// `Φ = [[Γ⁺, 1ₘ, 0], [0ᵀ, 0, 1]]`.
pub fn build_maps(params: &BankParams, design: &DesignVoltages) -> Result<CoordinateMaps> {
    params.validate()?;
    let m = params.m();
    design.validate(m)?;
    let n = m + 1;
    let l = &params.inductance;

    let gamma_t = build_gamma(l)?;
    let l_eq_vec = equivalent_inductances(l);
    let l_eq_m = l_eq_vec[m - 1];

    // Upper-left m×m block of Φ⁻¹: [Γᵀ; L_eq,m 1ᵀ diag(L)⁻¹].
    let mut p = DMatrix::zeros(m, m);
    p.rows_mut(0, m - 1).copy_from(&gamma_t);
    for j in 0..m {
        p[(m - 1, j)] = l_eq_m / l[j];
    }
    let mut phi_inv = DMatrix::zeros(n, n);
    phi_inv.view_mut((0, 0), (m, m)).copy_from(&p);
    phi_inv[(m, m)] = 1.0;

    let phi = phi_inv
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("state change of coordinates"))?;

    // Γ⁺ = D Γ (Γᵀ D Γ)⁻¹ with D = diag(L)/L_eq,m.
    let d_scaled =
        DMatrix::from_diagonal(&DVector::from_iterator(m, l.iter().map(|lk| lk / l_eq_m)));
    let gamma = gamma_t.transpose();
    let inner = &gamma_t * &d_scaled * &gamma;
    let inner_inv = inner
        .cholesky()
        .ok_or(Error::Singular("Γᵀ diag(L) Γ"))?
        .inverse();
    let gamma_plus = &d_scaled * &gamma * inner_inv;

    let mut phi_closed = DMatrix::zeros(n, n);
    phi_closed
        .view_mut((0, 0), (m, m - 1))
        .copy_from(&gamma_plus);
    for i in 0..m {
        phi_closed[(i, m - 1)] = 1.0;
    }
    phi_closed[(m, m)] = 1.0;
    let mismatch = (&phi - &phi_closed).amax();
    if mismatch > COMPOSED_TOLERANCE {
        return Err(Error::Structure {
            what: "closed-form Φ",
            residual: mismatch,
            tolerance: COMPOSED_TOLERANCE,
        });
    }

    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("input change of coordinates"))?;
    let e_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        params.source.iter().map(|e| 1.0 / e),
    ));
    let e = DMatrix::from_diagonal(&DVector::from_column_slice(&params.source));
    let design_diag = DVector::from_fn(m, |i, _| {
        if i + 1 < m {
            design.e_tilde[i]
        } else {
            design.e_eq
        }
    });
    let u = &e_inv * p_inv * DMatrix::from_diagonal(&design_diag);
    let u_inv = DMatrix::from_diagonal(&design_diag.map(|v| 1.0 / v)) * &p * e;

    let maps = CoordinateMaps {
        gamma_t,
        gamma_plus,
        phi_inv,
        phi,
        u,
        u_inv,
        l_eq: DVector::from_vec(l_eq_vec.clone()),
        l_c: DVector::from_fn(m - 1, |k, _| l_eq_vec[k] + l[k + 1]),
        e_tilde: DVector::from_column_slice(&design.e_tilde),
        e_eq: design.e_eq,
        capacitance: params.capacitance,
    };

    let phi_residual = identity_residual(&(&maps.phi * &maps.phi_inv));
    if phi_residual > EXACT_TOLERANCE {
        return Err(Error::Structure {
            what: "Φ Φ⁻¹ = I",
            residual: phi_residual,
            tolerance: EXACT_TOLERANCE,
        });
    }
    let u_residual = identity_residual(&(&maps.u * &maps.u_inv));
    if u_residual > EXACT_TOLERANCE {
        return Err(Error::Structure {
            what: "U U⁻¹ = I",
            residual: u_residual,
            tolerance: EXACT_TOLERANCE,
        });
    }
    Ok(maps)
}

/// `max |A − I|`.
pub fn identity_residual(a: &DMatrix<f64>) -> f64 {
    (a - DMatrix::identity(a.nrows(), a.ncols())).amax()
}

/// System matrices in `z` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSystem {
    /// `J_z − R_z = Φ⁻¹(J − R)Φ⁻ᵀ`.
    pub structure: DMatrix<f64>,
    /// `Φ⁻¹ B U`.
    pub input: DMatrix<f64>,
    /// `diag(L_C, L_eq,m, C)⁻¹`.
    pub energy_form: DMatrix<f64>,
    /// Largest deviation from the decoupled pattern found while checking.
    pub pattern_residual: f64,
}

impl TransformedSystem {
    pub fn hamiltonian(&self, z: &ZState) -> f64 {
        let v = z.to_vector();
        0.5 * v.dot(&(&self.energy_form * &v))
    }
}

/// Transforms `sys` and asserts the decoupled sparsity pattern:
///
/// ```text
/// J_z − R_z = [[0, 0, 0], [0ᵀ, 0, −1], [0ᵀ, 1, −1/R]],
/// Φ⁻¹ B U   = [[diag(Ẽ), 0], [0ᵀ, E_eq], [0ᵀ, 0]].
/// ```
///
/// Fails with [`Error::Structure`] when the pattern is broken, e.g. when
/// `sys` carries inductor ESR.
pub fn transform_system(sys: &PchSystem, maps: &CoordinateMaps) -> Result<TransformedSystem> {
    let m = maps.m();
    if sys.m() != m {
        return Err(Error::DimensionMismatch {
            what: "system size",
            expected: m,
            got: sys.m(),
        });
    }
    let n = m + 1;
    let structure = &maps.phi_inv * sys.structure() * maps.phi_inv.transpose();
    let input = &maps.phi_inv * &sys.input * &maps.u;
    let energy_form = maps.phi.transpose() * &sys.energy_form * &maps.phi;

    let top_left = structure.view((0, 0), (m - 1, m - 1)).amax();
    if top_left > EXACT_TOLERANCE {
        return Err(Error::Structure {
            what: "Casimir block of J_z − R_z",
            residual: top_left,
            tolerance: EXACT_TOLERANCE,
        });
    }

    let mut expected_structure = DMatrix::zeros(n, n);
    expected_structure[(m - 1, m)] = -1.0;
    expected_structure[(m, m - 1)] = 1.0;
    expected_structure[(m, m)] = -sys.dissipation[(m, m)];
    let structure_residual = (&structure - &expected_structure).amax();

    let mut expected_input = DMatrix::zeros(n, m);
    for k in 0..m - 1 {
        expected_input[(k, k)] = maps.e_tilde[k];
    }
    expected_input[(m - 1, m - 1)] = maps.e_eq;
    let input_scale = expected_input.amax().max(1.0);
    let input_residual = (&input - &expected_input).amax() / input_scale;

    let mut expected_energy = DVector::zeros(n);
    for k in 0..m - 1 {
        expected_energy[k] = 1.0 / maps.l_c[k];
    }
    expected_energy[m - 1] = 1.0 / maps.total_inductance();
    expected_energy[m] = 1.0 / maps.capacitance;
    let expected_energy = DMatrix::from_diagonal(&expected_energy);
    let energy_scale = expected_energy.amax().max(1.0);
    let energy_residual = (&energy_form - &expected_energy).amax() / energy_scale;

    let pattern_residual = structure_residual
        .max(input_residual)
        .max(energy_residual)
        .max(top_left);
    if pattern_residual > COMPOSED_TOLERANCE {
        return Err(Error::Structure {
            what: "decoupled pattern of the transformed system",
            residual: pattern_residual,
            tolerance: COMPOSED_TOLERANCE,
        });
    }

    Ok(TransformedSystem {
        structure,
        input,
        energy_form,
        pattern_residual,
    })
}

/// Outcome of the Casimir test `[Γᵀ, 0](J − R) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasimirReport {
    pub residual: f64,
    pub holds: bool,
}

pub fn verify_casimir(sys: &PchSystem, maps: &CoordinateMaps) -> CasimirReport {
    let m = maps.m();
    let mut gradient = DMatrix::zeros(m - 1, m + 1);
    gradient
        .view_mut((0, 0), (m - 1, m))
        .copy_from(&maps.gamma_t);
    let residual = (gradient * sys.structure()).amax();
    CasimirReport {
        residual,
        holds: residual <= EXACT_TOLERANCE,
    }
}
