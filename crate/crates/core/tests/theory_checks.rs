use fedstale::objectives::{global_loss, Objective};
use fedstale::participation::{make_two_group_profile, stats};
use fedstale::theory::{
    beta_star, check_lr_constraints, deterministic_schedule, frontier_bound,
    frontier_gradient_floor, lower_bound_curve, theorem1_bound, track_frontier, BoundInputs,
    HardInstance,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn inputs() -> BoundInputs {
    BoundInputs {
        smoothness: 2.0,
        sigma_sq: 0.5,
        sg_sq: 1.5,
        stats: stats(&make_two_group_profile(10, 0.25, 5, 1).unwrap()),
        n_clients: 10,
        local_steps: 4,
        client_lr: 0.01,
        server_lr: 0.05,
        rounds: 200,
        beta: 0.4,
        f_init_gap: 3.0,
        h_init: 2.0,
        a1: 1.0,
        a2: 1.0,
    }
}

#[test]
fn hard_instance_optimum_matches_closed_form() {
    for (horizon, l) in [(3usize, 1.0), (7, 4.0)] {
        let inst = HardInstance::new(2 * horizon + 5, horizon, l, 3).unwrap();
        let m = 2 * horizon + 1;
        // F(w) = L/8 (w' A w - 2 w_1) on the first m coordinates, solved directly
        let a = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let mut e1 = DVector::zeros(m);
        e1[0] = 1.0;
        let x = a.clone().lu().solve(&e1).unwrap();
        let f_star = l / 8.0 * (x.dot(&(&a * &x)) - 2.0 * x[0]);
        assert!((inst.optimal_value() - f_star).abs() < 1e-12);
        assert!((inst.optimal_value() + l / 8.0 * (1.0 - 1.0 / (m as f64 + 1.0))).abs() < 1e-12);
        let mut w = vec![0.0; 2 * horizon + 5];
        w[..m].copy_from_slice(x.as_slice());
        assert!((global_loss(&inst, &w) - f_star).abs() < 1e-12);
    }
}

#[test]
fn floor_minimizer_attains_the_floor() {
    let inst = HardInstance::new(31, 15, 3.0, 2).unwrap();
    for k in 1..=15 {
        let floor = frontier_gradient_floor(&inst, k).unwrap();
        assert!(floor.minimizer[k - 1..].iter().all(|&v| v == 0.0));
        let g = inst.global_grad(&floor.minimizer);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        assert!((g2 - floor.value).abs() < 1e-12, "k={k}");
    }
    assert!(frontier_gradient_floor(&inst, 0).is_err());
    assert!(frontier_gradient_floor(&inst, 16).is_err());
}

#[test]
fn only_active_clients_carry_the_objective() {
    let inst = HardInstance::new(11, 5, 1.0, 4).unwrap();
    let w: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
    for i in 2..4 {
        assert_eq!(Objective::<f64>::client_loss(&inst, i, &w), 0.0);
    }
}

#[test]
fn bound_terms_scale_as_documented() {
    let base = theorem1_bound(&inputs(), false).unwrap();
    let longer = theorem1_bound(
        &BoundInputs {
            rounds: 400,
            ..inputs()
        },
        false,
    )
    .unwrap();
    assert!((longer.iterate_init_term * 2.0 - base.iterate_init_term).abs() < 1e-12);
    assert!((longer.memory_init_term * 2.0 - base.memory_init_term).abs() < 1e-15);
    assert_eq!(longer.stochastic_term, base.stochastic_term);
    let fresh_only = theorem1_bound(
        &BoundInputs {
            beta: 0.0,
            ..inputs()
        },
        false,
    )
    .unwrap();
    assert_eq!(fresh_only.memory_init_term, 0.0);
    let sum = base.iterate_init_term
        + base.memory_init_term
        + base.stochastic_term
        + base.heterogeneity_term;
    assert!((base.total - sum).abs() < 1e-12);
}

#[test]
fn rate_conditions_gate_the_bound() {
    let too_fast = BoundInputs {
        client_lr: 1.0,
        ..inputs()
    };
    assert!(!check_lr_constraints(&too_fast).ok());
    assert!(theorem1_bound(&too_fast, false).is_err());
    assert!(
        theorem1_bound(&too_fast, true)
            .unwrap()
            .constraints_violated
    );
    let check = check_lr_constraints(&inputs());
    assert!((check.client_limit - 1.0 / 64.0).abs() < 1e-15);
}

#[test]
fn beta_star_reference_value() {
    let inp = inputs();
    let s = inp.stats;
    let ratio = s.p_avg / s.p_min;
    let drift = 0.01f64.powi(2) * 4.0 * 4.0 * 3.0;
    let expected = (1.5 / 10.0) / (ratio * 0.5 / 4.0 + (0.1 + ratio * drift) * 1.5);
    let got = beta_star(&inp).unwrap();
    assert!((got.unclamped - expected).abs() < 1e-14);
    assert_eq!(got.beta, expected.clamp(0.0, 1.0));
}

proptest! {
    #[test]
    fn beta_star_stays_in_unit_interval(sigma in 0.0f64..10.0, sg in 0.001f64..10.0, k in 1usize..20) {
        let b = beta_star(&BoundInputs { sigma_sq: sigma, sg_sq: sg, local_steps: k, ..inputs() }).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.beta));
    }

    #[test]
    fn frontier_never_exceeds_closed_form(tau in 2usize..12, t in 0usize..200) {
        let inst = HardInstance::new(2 * 210 + 1, 210, 1.0, 2).unwrap();
        let sched = deterministic_schedule(&inst, tau, t + 1).unwrap();
        let front = track_frontier(&inst, &sched).unwrap();
        prop_assert!(front.windows(2).all(|w| w[1].k >= w[0].k && w[1].k <= w[0].k + 1));
        prop_assert_eq!(front[t].k as i64, frontier_bound(t, tau));
    }

    #[test]
    fn envelope_is_decreasing(p in 0.01f64..=1.0, gap in 0.0f64..10.0) {
        let c = lower_bound_curve(p, 50, gap, 2.0).unwrap();
        prop_assert_eq!(c.len(), 51);
        prop_assert!(c.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn beta_star_minimizes_the_evaluated_bound() {
    // the closed form drops the O(1/T) memory initialization term, so use a long horizon
    for (sigma, sg) in [(0.5, 1.5), (2.0, 0.3), (0.01, 5.0)] {
        let inp = BoundInputs {
            sigma_sq: sigma,
            sg_sq: sg,
            rounds: 5000,
            ..inputs()
        };
        let best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|&a, &b| {
                let ta = theorem1_bound(&BoundInputs { beta: a, ..inp }, true)
                    .unwrap()
                    .total;
                let tb = theorem1_bound(&BoundInputs { beta: b, ..inp }, true)
                    .unwrap()
                    .total;
                ta.total_cmp(&tb)
            })
            .unwrap();
        let star = beta_star(&inp).unwrap().beta;
        assert!((best - star).abs() <= 0.05, "grid {best} vs beta* {star}");
    }
}

#[test]
fn split_matches_the_global_objective_on_random_probes() {
    let inst = HardInstance::new(41, 20, 2.0, 5).unwrap();
    inst.verify_split(1000, 9).unwrap();
}

proptest! {
    #[test]
    fn bound_terms_are_nonnegative(
        beta in 0.0f64..=1.0,
        sigma in 0.0f64..5.0,
        sg in 0.0f64..5.0,
        h in 0.0f64..5.0,
    ) {
        let b = theorem1_bound(&BoundInputs { beta, sigma_sq: sigma, sg_sq: sg, h_init: h, ..inputs() }, true).unwrap();
        for term in [b.iterate_init_term, b.memory_init_term, b.stochastic_term, b.heterogeneity_term] {
            prop_assert!(term >= 0.0);
        }
    }
}
