//! Flux-repartition cost functions.
//!
//! A cost `J(φ)` is restricted to the Casimir coordinates through
//! `J_z(C, φ_T) = J(Γ⁺C + 1ₘ φ_T)`, so `∇_C J_z = Γ⁺ᵀ ∇_φ J`. Costs depend on
//! fluxes only; the charge is pinned to its reference on the admissible set.
//!
//! The gradient-flow controllers assume `J_z(·, φ_T)` is strictly convex and
//! bounded below for every `φ_T > 0`. Robustness to inductor ESR further
//! benefits from `∇_C J_z` not depending on `C`; this is not enforced.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coordinates::CoordinateMaps;
use crate::error::{Error, Result};

/// A differentiable, strictly convex cost over inductor fluxes.
pub trait CostFunction: fmt::Debug + Send + Sync {
    fn evaluate(&self, phi: &DVector<f64>) -> f64;

    fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64>;

    fn declared_convex(&self) -> bool {
        true
    }

    /// `(H, g)` such that `J(φ) = ½ φᵀHφ + gᵀφ + const`, when the cost is
    /// quadratic.
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }

    /// Exact minimiser over `C` for a given `φ_T`, when known in closed form.
    fn known_argmin_z(&self, _maps: &CoordinateMaps, _phi_t: f64) -> Option<DVector<f64>> {
        None
    }
}

/// `J(φ) = φᵀ diag(k1) φ + k2ᵀ φ`, e.g. conduction and switching losses
/// expressed in fluxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(k1: Vec<f64>, k2: Vec<f64>) -> Result<Self> {
        let cost = Self { k1, k2 };
        cost.validate()?;
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1.len() != self.k2.len() {
            return Err(Error::invalid(
                "k2",
                format!("expected {} entries, got {}", self.k1.len(), self.k2.len()),
            ));
        }
        for (k, v) in self.k1.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::invalid(
                    format!("k1[{k}]"),
                    format!("must be finite and > 0 for strict convexity, got {v}"),
                ));
            }
        }
        for (k, v) in self.k2.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("k2[{k}]"), "must be finite"));
            }
        }
        Ok(())
    }

    /// Cost coefficients from per-converter loss coefficients
    /// `p_k(i) = r1_k i² + r2_k i`: `k1 = r1 / L²`, `k2 = r2 / L`.
    pub fn from_losses(r1: &[f64], r2: &[f64], inductance: &[f64]) -> Result<Self> {
        let k1 = r1
            .iter()
            .zip(inductance)
            .map(|(r, l)| r / (l * l))
            .collect();
        let k2 = r2.iter().zip(inductance).map(|(r, l)| r / l).collect();
        Self::new(k1, k2)
    }
}

impl CostFunction for QuadraticCost {
    fn evaluate(&self, phi: &DVector<f64>) -> f64 {
        phi.iter()
            .zip(self.k1.iter().zip(&self.k2))
            .map(|(p, (a, b))| a * p * p + b * p)
            .sum()
    }

    fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(phi.len(), |k, _| 2.0 * self.k1[k] * phi[k] + self.k2[k])
    }

    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let h = DMatrix::from_diagonal(&DVector::from_iterator(
            self.k1.len(),
            self.k1.iter().map(|v| 2.0 * v),
        ));
        Some((h, DVector::from_column_slice(&self.k2)))
    }
}

/// `J(φ) = ½ (φ₁ − φ₂ − C*)²` for two converters. Its restriction is
/// `J_z(C) = ½ (C − C*)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingCost {
    pub c_star: f64,
}

impl CostFunction for TrackingCost {
    fn evaluate(&self, phi: &DVector<f64>) -> f64 {
        let e = phi[0] - phi[1] - self.c_star;
        0.5 * e * e
    }

    fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
        let e = phi[0] - phi[1] - self.c_star;
        DVector::from_vec(vec![e, -e])
    }

    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let a = DVector::from_vec(vec![1.0, -1.0]);
        Some((&a * a.transpose(), -self.c_star * a))
    }

    fn known_argmin_z(&self, _maps: &CoordinateMaps, _phi_t: f64) -> Option<DVector<f64>> {
        Some(DVector::from_element(1, self.c_star))
    }
}

/// Cost selection used by scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cost {
    Quadratic(QuadraticCost),
    Tracking(TrackingCost),
}

impl Cost {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Cost::Quadratic(c) => {
                c.validate()?;
                if c.k1.len() != m {
                    return Err(Error::invalid(
                        "k1",
                        format!("expected {m} entries, got {}", c.k1.len()),
                    ));
                }
            }
            Cost::Tracking(c) => {
                if m != 2 {
                    return Err(Error::invalid(
                        "kind",
                        format!("tracking cost needs exactly 2 converters, got {m}"),
                    ));
                }
                if !c.c_star.is_finite() {
                    return Err(Error::invalid("c_star", "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Updates a named coefficient: `c_star` for the tracking cost,
    /// `k1.<k>` / `k2.<k>` (1-based) for the quadratic cost.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(name, "must be finite"));
        }
        match self {
            Cost::Tracking(c) if name == "c_star" => {
                c.c_star = value;
                Ok(())
            }
            Cost::Quadratic(c) => {
                let (vec, field) = match name.split_once('.') {
                    Some(("k1", idx)) => (&mut c.k1, idx),
                    Some(("k2", idx)) => (&mut c.k2, idx),
                    _ => return Err(Error::invalid(name, "unknown quadratic cost parameter")),
                };
                let k: usize = field
                    .parse()
                    .ok()
                    .filter(|k| *k >= 1 && *k <= vec.len())
                    .ok_or_else(|| Error::invalid(name, "index out of range"))?;
                let old = vec[k - 1];
                vec[k - 1] = value;
                if let Err(e) = c.validate() {
                    let vec = if name.starts_with("k1") {
                        &mut c.k1
                    } else {
                        &mut c.k2
                    };
                    vec[k - 1] = old;
                    return Err(e);
                }
                Ok(())
            }
            Cost::Tracking(_) => Err(Error::invalid(name, "unknown tracking cost parameter")),
        }
    }

    fn inner(&self) -> &dyn CostFunction {
        match self {
            Cost::Quadratic(c) => c,
            Cost::Tracking(c) => c,
        }
    }
}

impl CostFunction for Cost {
    fn evaluate(&self, phi: &DVector<f64>) -> f64 {
        self.inner().evaluate(phi)
    }
    fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.inner().gradient_phi(phi)
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        self.inner().quadratic_form()
    }
    fn known_argmin_z(&self, maps: &CoordinateMaps, phi_t: f64) -> Option<DVector<f64>> {
        self.inner().known_argmin_z(maps, phi_t)
    }
}

/// `J_z(C, φ_T)`.
pub fn eval_z(
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
    casimir: &DVector<f64>,
    phi_t: f64,
) -> f64 {
    cost.evaluate(&maps.flux_from(casimir, phi_t))
}

/// `∇_C J_z(C, φ_T) = Γ⁺ᵀ ∇_φ J(Γ⁺C + 1ₘ φ_T)`.
pub fn grad_z(
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
    casimir: &DVector<f64>,
    phi_t: f64,
) -> DVector<f64> {
    let phi = maps.flux_from(casimir, phi_t);
    maps.gamma_plus.tr_mul(&cost.gradient_phi(&phi))
}

/// Optimal repartition for a given total flux.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub casimir: DVector<f64>,
    pub phi: DVector<f64>,
}

/// `argmin_C J_z(C, φ_T*)`. Quadratic costs are solved exactly through the
/// stationarity system `Γ⁺ᵀ H Γ⁺ C = −Γ⁺ᵀ(H 1 φ_T* + g)`; other costs are
/// only supported for two converters (golden-section search on the scalar
/// Casimir).
pub fn argmin_oracle(
    cost: &dyn CostFunction,
    maps: &CoordinateMaps,
    phi_t_star: f64,
) -> Result<OracleSolution> {
    let m = maps.m();
    let casimir = if let Some(c) = cost.known_argmin_z(maps, phi_t_star) {
        c
    } else if let Some((h, g)) = cost.quadratic_form() {
        let gp = &maps.gamma_plus;
        let hessian = gp.transpose() * &h * gp;
        let rhs = -(gp.transpose() * (&h * DVector::from_element(m, phi_t_star) + g));
        hessian
            .cholesky()
            .ok_or_else(|| {
                Error::UnsupportedOracle("restricted cost is not strictly convex".into())
            })?
            .solve(&rhs)
    } else if m == 2 {
        let c = golden_section(
            |c| eval_z(cost, maps, &DVector::from_element(1, c), phi_t_star),
            phi_t_star,
        )?;
        DVector::from_element(1, c)
    } else {
        return Err(Error::UnsupportedOracle(format!(
            "non-quadratic cost with {m} converters"
        )));
    };
    let phi = maps.flux_from(&casimir, phi_t_star);
    Ok(OracleSolution { casimir, phi })
}

fn golden_section(f: impl Fn(f64) -> f64, scale_hint: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    // Expand a symmetric bracket until both ends rise above the centre.
    let f0 = f(0.0);
    let mut half = scale_hint.abs().max(1e-6);
    let mut tries = 0;
    while f(-half) <= f0 || f(half) <= f0 {
        half *= 2.0;
        tries += 1;
        if tries > 200 || !half.is_finite() {
            return Err(Error::UnsupportedOracle(
                "could not bracket the minimum; cost may not be convex".into(),
            ));
        }
    }
    let (mut a, mut b) = (-half, half);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Samples random pairs and checks `J((a+b)/2) ≤ (J(a)+J(b))/2`. Returns the
/// number of violations.
pub fn midpoint_convexity_violations(
    cost: &dyn CostFunction,
    samples: &[(DVector<f64>, DVector<f64>)],
) -> usize {
    samples
        .iter()
        .filter(|(a, b)| {
            let mid = (a + b) * 0.5;
            let lhs = cost.evaluate(&mid);
            let rhs = 0.5 * (cost.evaluate(a) + cost.evaluate(b));
            lhs > rhs + 1e-12 * rhs.abs().max(1.0)
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinates::{build_maps, DesignVoltages};
    use crate::model::BankParams;

    fn bench_maps() -> CoordinateMaps {
        let p = BankParams::new(vec![2.83e-3, 1.3e-3], 22e-3, 20.0, vec![24.0, 24.0]);
        build_maps(&p, &DesignVoltages::mean_of(&p)).unwrap()
    }

    fn exp2_cost() -> QuadraticCost {
        QuadraticCost::new(vec![0.1623e5, 1.8343e5], vec![130.7, 27.7]).unwrap()
    }

    fn fd_grad(
        cost: &dyn CostFunction,
        maps: &CoordinateMaps,
        c: &DVector<f64>,
        phi_t: f64,
    ) -> DVector<f64> {
        let h = 1e-7;
        DVector::from_fn(c.len(), |i, _| {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[i] += h;
            cm[i] -= h;
            (eval_z(cost, maps, &cp, phi_t) - eval_z(cost, maps, &cm, phi_t)) / (2.0 * h)
        })
    }

    #[test]
    fn tracking_gradient_is_offset() {
        let maps = bench_maps();
        let cost = TrackingCost { c_star: 2e-3 };
        for (c, phi_t) in [(0.0, 1e-3), (5e-3, -2e-3), (-1e-2, 4e-3)] {
            let g = grad_z(&cost, &maps, &DVector::from_element(1, c), phi_t);
            assert!((g[0] - (c - 2e-3)).abs() < 1e-15);
        }
    }

    #[test]
    fn exp2_gradient_matches_finite_differences() {
        let maps = bench_maps();
        let cost = exp2_cost();
        for (c, phi_t) in [(1e-3, 5e-4), (-2e-3, 1e-3), (4e-4, 2e-3)] {
            let c = DVector::from_element(1, c);
            let g = grad_z(&cost, &maps, &c, phi_t);
            let fd = fd_grad(&cost, &maps, &c, phi_t);
            assert!((&g - &fd).norm() <= 1e-6 * g.norm(), "{g} vs {fd}");
        }
    }

    #[test]
    fn gradient_vanishes_at_unconstrained_minimum() {
        let maps = bench_maps();
        let cost = exp2_cost();
        // unconstrained φ-minimiser: φ_k = −k2_k / (2 k1_k)
        let phi_min = DVector::from_fn(2, |k, _| -cost.k2[k] / (2.0 * cost.k1[k]));
        let z = maps.to_z(&crate::model::PchState::new(phi_min, 0.0));
        let g = grad_z(&cost, &maps, &z.casimir, z.phi_t);
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn tracking_oracle_is_verbatim() {
        let maps = bench_maps();
        let sol = argmin_oracle(&TrackingCost { c_star: 5e-3 }, &maps, 5.3e-4).unwrap();
        assert_eq!(sol.casimir[0], 5e-3);
    }

    #[test]
    fn quadratic_oracle_is_stationary() {
        let maps = bench_maps();
        let cost = exp2_cost();
        for load in [20.0, 5.0] {
            let phi_t = maps.total_inductance() * 0.264 / (load * 22e-3);
            let sol = argmin_oracle(&cost, &maps, phi_t).unwrap();
            let g = grad_z(&cost, &maps, &sol.casimir, phi_t);
            assert!(g.amax() < 1e-9, "{g}");
        }
    }

    #[derive(Debug)]
    struct Quartic;

    impl CostFunction for Quartic {
        fn evaluate(&self, phi: &DVector<f64>) -> f64 {
            let a = phi[0] - 1e-3;
            let b = phi[1] + 2e-3;
            1e9 * a.powi(4) + b * b
        }
        fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
            let a = phi[0] - 1e-3;
            let b = phi[1] + 2e-3;
            DVector::from_vec(vec![4e9 * a.powi(3), 2.0 * b])
        }
    }

    #[test]
    fn golden_section_fallback() {
        let maps = bench_maps();
        let sol = argmin_oracle(&Quartic, &maps, 1e-3).unwrap();
        let g = grad_z(&Quartic, &maps, &sol.casimir, 1e-3);
        assert!(g.amax() < 1e-8, "{g}");
        let f = |c: f64| eval_z(&Quartic, &maps, &DVector::from_element(1, c), 1e-3);
        let c = sol.casimir[0];
        assert!(f(c) <= f(c + 1e-6) && f(c) <= f(c - 1e-6));
    }

    #[test]
    fn non_quadratic_oracle_unsupported_beyond_two() {
        #[derive(Debug)]
        struct Quartic3;
        impl CostFunction for Quartic3 {
            fn evaluate(&self, phi: &DVector<f64>) -> f64 {
                phi.iter().map(|p| p.powi(4) + p * p).sum()
            }
            fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
                phi.map(|p| 4.0 * p.powi(3) + 2.0 * p)
            }
        }
        let p = BankParams::new(vec![1e-3, 2e-3, 3e-3], 1e-2, 10.0, vec![24.0; 3]);
        let maps = build_maps(&p, &DesignVoltages::mean_of(&p)).unwrap();
        assert!(matches!(
            argmin_oracle(&Quartic3, &maps, 1e-3),
            Err(Error::UnsupportedOracle(_))
        ));
    }

    #[test]
    fn rejects_nonconvex_quadratic() {
        assert!(QuadraticCost::new(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(QuadraticCost::new(vec![1.0, -1.0], vec![0.0, 0.0]).is_err());
        assert!(QuadraticCost::new(vec![1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn loss_coefficients() {
        let c =
            QuadraticCost::from_losses(&[0.13, 0.31], &[0.37, 0.036], &[2.83e-3, 1.3e-3]).unwrap();
        assert!((c.k1[0] - 0.13 / (2.83e-3f64).powi(2)).abs() < 1e-9);
        assert!((c.k2[1] - 0.036 / 1.3e-3).abs() < 1e-12);
    }

    #[test]
    fn set_param_names() {
        let mut cost = Cost::Tracking(TrackingCost { c_star: 0.0 });
        cost.set_param("c_star", 5e-3).unwrap();
        assert_eq!(cost, Cost::Tracking(TrackingCost { c_star: 5e-3 }));
        assert!(cost.set_param("k1.1", 1.0).is_err());

        let mut cost = Cost::Quadratic(exp2_cost());
        cost.set_param("k2.2", 10.0).unwrap();
        cost.set_param("k1.1", 2.0).unwrap();
        let Cost::Quadratic(q) = &cost else {
            unreachable!()
        };
        assert_eq!(q.k2[1], 10.0);
        assert_eq!(q.k1[0], 2.0);
        assert!(cost.set_param("k1.3", 1.0).is_err());
        assert!(cost.set_param("k1.1", -1.0).is_err());
        let Cost::Quadratic(q) = &cost else {
            unreachable!()
        };
        assert_eq!(q.k1[0], 2.0);
    }

    #[test]
    fn midpoint_convexity_sampling() {
        let samples: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64 * 1e-4;
                (
                    DVector::from_vec(vec![t, -2.0 * t]),
                    DVector::from_vec(vec![-3.0 * t, t + 1e-3]),
                )
            })
            .collect();
        assert_eq!(midpoint_convexity_violations(&exp2_cost(), &samples), 0);
        assert_eq!(midpoint_convexity_violations(&Quartic, &samples), 0);

        #[derive(Debug)]
        struct Concave;
        impl CostFunction for Concave {
            fn evaluate(&self, phi: &DVector<f64>) -> f64 {
                -phi.norm_squared()
            }
            fn gradient_phi(&self, phi: &DVector<f64>) -> DVector<f64> {
                -2.0 * phi
            }
        }
        assert!(midpoint_convexity_violations(&Concave, &samples) > 0);
    }
}
