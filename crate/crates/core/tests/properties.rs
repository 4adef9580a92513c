use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use parabuck::controllers::DutyCommand;
use parabuck::coordinates::{build_gamma, build_maps, equivalent_inductances, transform_system};
use parabuck::costs::{grad_z, CostFunction, QuadraticCost};
use parabuck::{build_pch, BankParams, DesignVoltages, PchState};

fn bank_strategy() -> impl Strategy<Value = BankParams> {
    (2usize..=8).prop_flat_map(|m| {
        (
            prop::collection::vec(0.5e-3f64..5e-3, m),
            1e-3f64..5e-2,
            1.0f64..100.0,
            prop::collection::vec(12.0f64..48.0, m),
        )
            .prop_map(|(l, c, r, e)| BankParams::new(l, c, r, e))
    })
}

fn bank_and_state() -> impl Strategy<Value = (BankParams, PchState)> {
    bank_strategy().prop_flat_map(|b| {
        let m = b.m();
        (
            Just(b),
            prop::collection::vec(-5e-3f64..5e-3, m),
            0.0f64..0.5,
        )
            .prop_map(|(b, phi, q)| (b, PchState::new(DVector::from_vec(phi), q)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gamma_annihilates_ones(b in bank_strategy()) {
        let g = build_gamma(&b.inductance).unwrap();
        let r = g * DVector::from_element(b.m(), 1.0);
        prop_assert!(r.amax() <= 1e-12, "{}", r.amax());
    }

    #[test]
    fn casimir_inductances(b in bank_strategy()) {
        let maps = build_maps(&b, &DesignVoltages::mean_of(&b)).unwrap();
        let inv_l = DMatrix::from_diagonal(&DVector::from_iterator(
            b.m(),
            b.inductance.iter().map(|l| 1.0 / l),
        ));
        let lhs = maps.gamma_plus.transpose() * inv_l * &maps.gamma_plus;
        let rhs = DMatrix::from_diagonal(&maps.l_c.map(|l| 1.0 / l));
        let scale = rhs.amax();
        prop_assert!((lhs - rhs).amax() <= 1e-10 * scale);
    }

    /// Each Casimir entry is the flux of the first `k` coils in parallel
    /// minus the flux of coil `k + 1`.
    #[test]
    fn casimir_physical_meaning((b, x) in bank_and_state()) {
        let maps = build_maps(&b, &DesignVoltages::mean_of(&b)).unwrap();
        let z = maps.to_z(&x);
        let l = &b.inductance;
        for k in 0..b.m() - 1 {
            let inv_sum: f64 = l[..=k].iter().map(|v| 1.0 / v).sum();
            let parallel: f64 = (0..=k).map(|j| x.phi[j] / l[j]).sum::<f64>() / inv_sum;
            let expected = parallel - x.phi[k + 1];
            prop_assert!((z.casimir[k] - expected).abs() <= 1e-12 * x.phi.amax().max(1e-6));
        }
        let total: f64 = (0..b.m()).map(|j| x.phi[j] / l[j]).sum::<f64>() * equivalent_inductances(l)[b.m() - 1];
        prop_assert!((z.phi_t - total).abs() <= 1e-12 * x.phi.amax().max(1e-6));
        prop_assert_eq!(z.q, x.q);
    }

    #[test]
    fn energy_invariant_under_change_of_coordinates((b, x) in bank_and_state()) {
        let sys = build_pch(&b).unwrap();
        let maps = build_maps(&b, &DesignVoltages::mean_of(&b)).unwrap();
        let t = transform_system(&sys, &maps).unwrap();
        let z = maps.to_z(&x);
        let h = sys.hamiltonian(&x);
        prop_assert!((t.hamiltonian(&z) - h).abs() <= 1e-12 * h);
        let back = maps.to_x(&z);
        prop_assert!((back.to_vector() - x.to_vector()).amax() <= 1e-12 * x.to_vector().amax());
    }

    /// `Ḣ = ∇Hᵀ(J − R)∇H + ∇HᵀBd` with a non-positive internal term, ESR
    /// included.
    #[test]
    fn passivity((b, x) in bank_and_state(), duty in prop::collection::vec(0.0f64..1.0, 8), r in 0.0f64..0.5) {
        let m = b.m();
        let b = b.clone().with_esr(vec![r; m]);
        let d = DVector::from_column_slice(&duty[..m]);
        for sys in [build_pch(&b).unwrap(), build_pch(&b).unwrap().with_esr(&b)] {
            let xdot = sys.open_loop_rhs(&x, &d).unwrap();
            let hdot = sys.grad_hamiltonian(&x).dot(&xdot);
            let internal = sys.internal_power(&x);
            let supplied = sys.supplied_power(&x, &d);
            prop_assert!(internal <= 1e-12 * supplied.abs().max(1.0));
            prop_assert!((hdot - internal - supplied).abs() <= 1e-9 * (internal.abs() + supplied.abs()).max(1e-12));
        }
    }

    #[test]
    fn duty_input_round_trip(b in bank_strategy(), duty in prop::collection::vec(0.0f64..1.0, 8)) {
        let maps = build_maps(&b, &DesignVoltages::mean_of(&b)).unwrap();
        let d = DVector::from_column_slice(&duty[..b.m()]);
        let (lambda, mu) = maps.d_to_input(&d);
        prop_assert!((maps.input_to_d(&lambda, mu) - &d).amax() <= 1e-12);
    }

    #[test]
    fn clamp_stays_in_unit_interval(req in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let cmd = DutyCommand::clamp(DVector::from_vec(req.clone()));
        for (k, r) in req.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&cmd.duty[k]));
            prop_assert_eq!(cmd.saturated[k], !(0.0..=1.0).contains(r));
            if !cmd.saturated[k] {
                prop_assert_eq!(cmd.duty[k], *r);
            }
        }
    }

    #[test]
    fn cost_gradient_matches_finite_differences(
        (b, x) in bank_and_state(),
        k1 in prop::collection::vec(1e3f64..1e6, 8),
        k2 in prop::collection::vec(-100.0f64..100.0, 8),
    ) {
        let m = b.m();
        let cost = QuadraticCost::new(k1[..m].to_vec(), k2[..m].to_vec()).unwrap();
        let maps = build_maps(&b, &DesignVoltages::mean_of(&b)).unwrap();
        let z = maps.to_z(&x);
        let g = grad_z(&cost, &maps, &z.casimir, z.phi_t);
        let mut fd = DVector::zeros(m - 1);
        for i in 0..m - 1 {
            let h = 1e-6;
            let mut up = z.casimir.clone();
            let mut dn = z.casimir.clone();
            up[i] += h;
            dn[i] -= h;
            fd[i] = (cost.evaluate(&maps.flux_from(&up, z.phi_t))
                - cost.evaluate(&maps.flux_from(&dn, z.phi_t)))
                / (2.0 * h);
        }
        prop_assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1e-9), "{} vs {}", g, fd);
    }
}
