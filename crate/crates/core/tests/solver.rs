use rsma_core::beamstruct::kkt_residuals;
use rsma_core::fp::surrogate_rates;
use rsma_core::model::{evaluate, generate_channel};
use rsma_core::solver::{initialize_beamformers, solve_with, OuterTrace, SolveOptions};
use rsma_core::{solve, solve_sdma, AuxiliaryState, SystemConfig};

#[test]
fn solution_is_feasible_and_beats_its_starting_point() {
    for (l, k, p) in [(2, 2, 10.0), (4, 4, 100.0), (2, 4, 30.0), (6, 3, 5.0)] {
        let cfg = SystemConfig::new(l, k, p);
        for s in 0..10 {
            let h = generate_channel(&cfg, s);
            let sol = solve(&h, &cfg).unwrap();
            let start = evaluate(&initialize_beamformers(&h, &cfg).unwrap(), &h, &cfg).unwrap();
            assert!(sol.w.power() <= p * (1.0 + 1e-6));
            assert!(sol.report.wsr >= start.wsr - 1e-9, "L={l} K={k} seed {s}");
            assert_eq!(sol.report, evaluate(&sol.w, &h, &cfg).unwrap());
        }
    }
}

#[test]
fn weighted_problems_respect_the_weights() {
    let cfg = SystemConfig::new(3, 3, 20.0).with_weights(vec![0.5, 2.0, 1.0]);
    for s in 0..10 {
        let h = generate_channel(&cfg, 40 + s);
        let sol = solve(&h, &cfg).unwrap();
        assert!(sol.converged);
        // The common rate is credited to the heaviest user only.
        assert_eq!(sol.report.c[0], 0.0);
        assert_eq!(sol.report.c[2], 0.0);
        assert_eq!(sol.report.c[1], sol.report.y);
        let direct: f64 = (0..3).map(|u| cfg.weights[u] * sol.report.rp[u]).sum::<f64>() + 2.0 * sol.report.y;
        assert!((sol.report.wsr - direct).abs() < 1e-12);
    }
}

#[test]
fn converged_runs_satisfy_the_inner_kkt_system() {
    let cfg = SystemConfig::reference();
    for s in 0..20 {
        let sol = solve(&generate_channel(&cfg, 70 + s), &cfg).unwrap();
        assert!(sol.converged);
        let k = sol.kkt.expect("kkt residuals are reported");
        assert!(k.max() < 1e-3, "seed {s}: {k:?}");
    }
}

#[test]
fn kkt_residuals_match_a_recomputation() {
    let cfg = SystemConfig::new(3, 3, 30.0);
    let h = generate_channel(&cfg, 8);
    let sol = solve(&h, &cfg).unwrap();
    // The reported residuals refer to the auxiliaries of the last outer
    // iteration, which were computed from the previous beamformer; here we
    // only check that the helper is consistent on a fresh state.
    let aux = AuxiliaryState::optimal(&sol.w, &h, &cfg.sigma2).unwrap();
    let g = surrogate_rates(&sol.w, &h, &cfg.sigma2, &aux).unwrap();
    let r = kkt_residuals(
        &sol.w,
        g.worst_common(),
        &sol.duals.lambda,
        sol.duals.mu,
        &aux,
        &h,
        &cfg,
    )
    .unwrap();
    assert!(r.rate_violation < 1e-12);
    assert!((r.multiplier_sum).abs() < 1e-12);
    assert!(r.power_violation <= cfg.power * 1e-6);
}

#[test]
fn accepted_outer_steps_ascend_to_the_reported_wsr() {
    let cfg = SystemConfig::new(3, 3, 50.0);
    let h = generate_channel(&cfg, 12);
    let mut wsr = Vec::new();
    let mut on_outer = |t: &OuterTrace| {
        if t.accepted {
            wsr.push(t.wsr);
        }
    };
    let sol = solve_with(
        &h,
        &cfg,
        SolveOptions {
            on_outer: Some(&mut on_outer),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!wsr.is_empty());
    assert_eq!(*wsr.last().unwrap(), sol.report.wsr);
    for pair in wsr.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-7);
    }
}

#[test]
fn sdma_has_no_common_stream() {
    let cfg = SystemConfig::new(4, 4, 100.0);
    for s in 0..10 {
        let h = generate_channel(&cfg, 90 + s);
        let sol = solve_sdma(&h, &cfg).unwrap();
        assert!(sol.w.matrix().column(0).iter().all(|z| z.norm() == 0.0));
        assert!(sol.w.power() <= cfg.power * (1.0 + 1e-6));
        assert!(sol.report.c.iter().all(|c| *c == 0.0) || sol.report.y == 0.0);
    }
}

#[test]
fn rsma_dominates_sdma_once_both_are_tightly_converged() {
    // At loose tolerance both local methods stop up to ~1e-3 nats short of
    // their limits, which is larger than the margin being tested.
    let mut cfg = SystemConfig::reference().with_tolerance(1e-8);
    cfg.max_outer = 20_000;
    let trials = 20;
    let mut not_worse = 0;
    for t in 0..trials {
        let h = generate_channel(&cfg, rsma_core::montecarlo::derive_seed(1, t));
        let r = solve(&h, &cfg).unwrap().report.wsr;
        let s = solve_sdma(&h, &cfg).unwrap().report.wsr;
        not_worse += usize::from(r >= s - 1e-6);
    }
    assert!(not_worse * 100 >= 95 * trials as usize, "{not_worse}/{trials}");
}
