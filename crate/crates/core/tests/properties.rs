use std::f64::consts::PI;

use dsdsim_core::detect::{select_taps, tap_statistics, DetectorConfig};
use dsdsim_core::eval::{nmse, run_detection, NmseKind, TrialConfig};
use dsdsim_core::model::{sample_channel, steering_vector, SystemConfig};
use dsdsim_core::probing::{build_frame, random_probe, steering_probe, FrameKind, PhaseSet, RxTrace};
use dsdsim_core::recover::{group_size, iteration_bound, omp, DenseOperator};
use dsdsim_core::{CMatrix, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(bits: u32, n_tx: usize, n_rx: usize) -> SystemConfig {
    SystemConfig {
        n_tx,
        n_rx,
        g_tx: 2 * n_tx,
        g_rx: 2 * n_rx,
        n_taps: 4,
        aps_bits: bits,
        ..SystemConfig::default()
    }
}

fn on_phase_grid(v: C64, n: usize, ps: &PhaseSet) -> bool {
    let ang = v.arg().rem_euclid(2.0 * PI);
    (v.norm() * (n as f64).sqrt() - 1.0).abs() < 1e-12
        && ps.angles().iter().any(|a| {
            let d = (ang - a).rem_euclid(2.0 * PI);
            d < 1e-9 || 2.0 * PI - d < 1e-9
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probes_have_unit_modulus_entries_on_the_phase_grid(
        bits in 1u32..6, n_tx in 1usize..24, n_rx in 1usize..24, seed in any::<u64>(),
        aod in 0.0f64..1.0, aoa in 0.0f64..1.0,
    ) {
        let cfg = small(bits, n_tx, n_rx);
        let ps = PhaseSet::new(bits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in [random_probe(&cfg, &mut rng), steering_probe(&cfg, aod, aoa)] {
            prop_assert_eq!(p.tx.len(), n_tx);
            prop_assert_eq!(p.rx.len(), n_rx);
            prop_assert!(p.tx.iter().all(|&v| on_phase_grid(v, n_tx, &ps)));
            prop_assert!(p.rx.iter().all(|&v| on_phase_grid(v, n_rx, &ps)));
        }
    }

    #[test]
    fn steering_vectors_are_unit_norm(n in 1usize..64, y in -2.0f64..2.0) {
        let a = steering_vector(n, y);
        let e: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proposed_frame_is_nonzero_only_at_subframe_starts(n_taps in 1usize..20, l in 1usize..12) {
        let f = build_frame(FrameKind::Proposed, n_taps, l).unwrap();
        prop_assert_eq!(f.len(), n_taps * l);
        for (i, s) in f.symbols.iter().enumerate() {
            prop_assert_eq!(s.norm() > 0.0, i % n_taps == 0);
        }
    }

    #[test]
    fn tap_statistics_are_normalized(seed in any::<u64>(), n_taps in 1usize..10, subframes in 1usize..8, s2 in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<C64> = (0..n_taps * subframes)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let tr = RxTrace { samples, noise_var: s2, t0: 0 };
        let st = tap_statistics(&[tr], n_taps, s2).unwrap();
        prop_assert!(st.ts.iter().all(|&y| y >= 0.0));
        prop_assert!(st.nts.iter().all(|&y| y <= 1.0 + 1e-12));
        if st.ts.iter().any(|&y| y > s2) {
            prop_assert!(st.nts.iter().any(|&y| (y - 1.0).abs() < 1e-12));
        }
        let det = DetectorConfig::default();
        let sel = select_taps(&st, &det);
        prop_assert!(sel.len() <= det.cap);
    }

    #[test]
    fn omp_residuals_never_grow(seed in any::<u64>(), rows in 4usize..20, cols in 2usize..30, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let op = DenseOperator::from_row_major(rows, cols, data).unwrap();
        let y: Vec<C64> = (0..rows).map(|_| C64::new(rng.random(), rng.random())).collect();
        let res = omp(&y, &op, k, 0.0).unwrap();
        prop_assert!(res.support.len() <= k);
        for w in res.residual_norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nmse_trivial_values(seed in any::<u64>(), r in 1usize..5, c in 1usize..5, taps in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<CMatrix> = (0..taps)
            .map(|_| CMatrix::from_fn(r, c, |_, _| C64::new(rng.random::<f64>() + 0.1, rng.random::<f64>())))
            .collect();
        let zero: Vec<CMatrix> = h.iter().map(|_| CMatrix::zeros(r, c)).collect();
        let twice: Vec<CMatrix> = h.iter().map(|m| m * C64::new(2.0, 0.0)).collect();
        for kind in [NmseKind::Frobenius, NmseKind::Squared] {
            prop_assert_eq!(nmse(&h, &h, kind).unwrap(), 0.0);
            prop_assert!((nmse(&h, &zero, kind).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((nmse(&h, &twice, kind).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_size_stays_in_range(w in 0.0f64..0.1, n_taps in 1usize..32, tau in 0.0f64..1.0, rows in 1usize..500) {
        let s = group_size(w, n_taps, tau, rows);
        prop_assert!(s >= 1 && s <= rows);
        if w == 0.0 {
            prop_assert_eq!(s, rows);
        }
    }

    #[test]
    fn iteration_bound_stays_within_the_tap_count(d in 1usize..16, n_taps in 2usize..256) {
        let k = iteration_bound(d, n_taps, 1e-3);
        prop_assert!(k >= 1 && k <= d);
    }

    #[test]
    fn static_channel_is_time_invariant(seed in any::<u64>(), n in -5000i64..5000) {
        let cfg = small(2, 4, 4);
        let ch = sample_channel(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for d in 0..cfg.n_taps {
            prop_assert_eq!(ch.tap_matrix(d, n).unwrap(), ch.tap_matrix(d, 0).unwrap());
        }
    }
}

#[test]
fn seeded_detection_repeats() {
    let cfg = TrialConfig {
        random_frames: 8,
        ..TrialConfig::default()
    };
    let ch = sample_channel(&cfg.effective_system(), 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let a = run_detection(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = run_detection(&ch, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}
