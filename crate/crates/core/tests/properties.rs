//! Randomized invariants of the rate model, the surrogate and the dual update.

use proptest::prelude::*;
use rsma_core::beamstruct::{hfpi_step, MU_FLOOR};
use rsma_core::fp::surrogate_rates;
use rsma_core::model::{evaluate, generate_channel};
use rsma_core::nalgebra::DMatrix;
use rsma_core::num_complex::Complex64;
use rsma_core::oracle::{lp_allocate, random_feasible_beams};
use rsma_core::solver::allocate_common_rate;
use rsma_core::{AuxiliaryState, BeamformingMatrix, ChannelMatrix, SystemConfig};

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=4)
}

fn unitary(l: usize, seed: u64) -> DMatrix<Complex64> {
    let g = generate_channel(&SystemConfig::new(l, l, 1.0), seed).matrix().clone();
    g.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rates_ignore_per_beam_phase((l, k) in dims(), seed in any::<u64>(), phases in prop::collection::vec(0.0..std::f64::consts::TAU, 5)) {
        let cfg = SystemConfig::new(l, k, 10.0);
        let h = generate_channel(&cfg, seed);
        let w = random_feasible_beams(&cfg, seed ^ 0x55);
        let mut rotated = w.matrix().clone();
        for j in 0..=k {
            let p = Complex64::from_polar(1.0, phases[j % phases.len()]);
            rotated.column_mut(j).iter_mut().for_each(|z| *z *= p);
        }
        let a = evaluate(&w, &h, &cfg).unwrap();
        let b = evaluate(&BeamformingMatrix::new(rotated).unwrap(), &h, &cfg).unwrap();
        prop_assert!((a.wsr - b.wsr).abs() < 1e-9);
        for u in 0..k {
            prop_assert!((a.r0[u] - b.r0[u]).abs() < 1e-9);
            prop_assert!((a.rp[u] - b.rp[u]).abs() < 1e-9);
        }
    }

    #[test]
    fn rates_ignore_a_common_unitary_rotation((l, k) in dims(), seed in any::<u64>()) {
        let cfg = SystemConfig::new(l, k, 10.0);
        let h = generate_channel(&cfg, seed);
        let w = random_feasible_beams(&cfg, seed.wrapping_add(1));
        let u = unitary(l, seed.wrapping_add(2));
        let h2 = ChannelMatrix::new(&u * h.matrix()).unwrap();
        let w2 = BeamformingMatrix::new(&u * w.matrix()).unwrap();
        let a = evaluate(&w, &h, &cfg).unwrap();
        let b = evaluate(&w2, &h2, &cfg).unwrap();
        prop_assert!((a.wsr - b.wsr).abs() < 1e-8 * a.wsr.max(1.0));
    }

    #[test]
    fn surrogate_never_exceeds_the_rate((l, k) in dims(), seed in any::<u64>()) {
        let cfg = SystemConfig::new(l, k, 20.0);
        let h = generate_channel(&cfg, seed);
        let at = random_feasible_beams(&cfg, seed.wrapping_add(3));
        let w = random_feasible_beams(&cfg, seed.wrapping_add(4));
        let aux = AuxiliaryState::optimal(&at, &h, &cfg.sigma2).unwrap();
        let g = surrogate_rates(&w, &h, &cfg.sigma2, &aux).unwrap();
        let r = evaluate(&w, &h, &cfg).unwrap();
        for u in 0..k {
            prop_assert!(g.common[u] <= r.r0[u] + 1e-10);
            prop_assert!(g.private[u] <= r.rp[u] + 1e-10);
        }
    }

    #[test]
    fn dual_step_conserves_multiplier_mass(
        raw in prop::collection::vec(0.0f64..1.0, 1..8),
        g0 in prop::collection::vec(-0.4f64..5.0, 8),
        mu in 1e-13f64..10.0,
        trace in 0.0f64..200.0,
        top in 0.1f64..4.0,
    ) {
        let k = raw.len();
        let s: f64 = raw.iter().sum::<f64>().max(1e-9);
        let lambda: Vec<f64> = raw.iter().map(|x| if s > 1e-9 { x / s * top } else { top / k as f64 }).collect();
        let total: f64 = lambda.iter().sum();
        let next = hfpi_step(&lambda, mu, &g0[..k], trace, 100.0, 0.5);
        prop_assert!(next.lambda.iter().all(|l| *l >= 0.0));
        prop_assert!((next.lambda.iter().sum::<f64>() - total).abs() < 1e-12);
        prop_assert!(next.mu >= MU_FLOOR);
        // No multiplier other than the worst user's can grow.
        for (j, (new, old)) in next.lambda.iter().zip(&lambda).enumerate() {
            if j != next.worst_user {
                prop_assert!(new <= old);
            }
        }
    }

    #[test]
    fn allocation_is_the_lp_vertex(weights in prop::collection::vec(0.0f64..3.0, 1..7), scale in 0.0f64..10.0) {
        let r0: Vec<f64> = weights.iter().enumerate().map(|(i, w)| scale * (1.0 + (i as f64 + w).sin().abs())).collect();
        let c = allocate_common_rate(&weights, &r0).unwrap();
        prop_assert_eq!(c, lp_allocate(&weights, &r0).0);
    }
}
