//! Channel reconstruction, the NMSE metric, a ridge LS baseline and the
//! single-trial pipeline.

mod ls;
mod trial;

pub use ls::{ls_baseline, Observation};
pub use trial::{
    run_detection, run_dsa_on, run_ls_on, run_trial, DetectionOutcome, DsaRun, Method, SupportMode, TrialConfig,
    TrialOutcome,
};

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{steering_vector, ChannelRealization};
use crate::prelude::*;

/// One recovered beam of a tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamComponent {
    pub aoa_freq: f64,
    pub aod_freq: f64,
    /// Gain at `reference_instant`.
    pub gain: C64,
    /// Rad/sample.
    pub doppler: f64,
    pub reference_instant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TapEstimate {
    /// Tap not selected: estimated as zero.
    Empty,
    Beams(Vec<BeamComponent>),
    /// Unstructured, time-invariant estimate.
    Dense(#[serde(with = "dense_serde")] CMatrix),
}

/// Column-major `(rows, cols, data)` form of a dense matrix.
mod dense_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> core::result::Result<S::Ok, S::Error> {
        (m.nrows(), m.ncols(), m.as_slice()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<CMatrix, D::Error> {
        let (r, c, data) = <(usize, usize, Vec<C64>)>::deserialize(d)?;
        if data.len() != r * c {
            return Err(serde::de::Error::custom("matrix data length does not match its shape"));
        }
        Ok(DMatrix::from_vec(r, c, data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedChannel {
    pub n_tx: usize,
    pub n_rx: usize,
    pub taps: Vec<TapEstimate>,
    /// Absolute instant at which training ended.
    pub training_end: i64,
}

impl EstimatedChannel {
    pub fn empty(n_tx: usize, n_rx: usize, n_taps: usize, training_end: i64) -> Self {
        Self {
            n_tx,
            n_rx,
            taps: (0..n_taps).map(|_| TapEstimate::Empty).collect(),
            training_end,
        }
    }
}

/// Per-tap matrices at absolute instant `n`. Without compensation each beam
/// keeps its gain at the reference instant.
pub fn reconstruct(est: &EstimatedChannel, n: i64, compensate: bool) -> Vec<CMatrix> {
    est.taps
        .iter()
        .map(|t| match t {
            TapEstimate::Empty => DMatrix::zeros(est.n_rx, est.n_tx),
            TapEstimate::Dense(m) => m.clone(),
            TapEstimate::Beams(beams) => {
                let mut h = DMatrix::zeros(est.n_rx, est.n_tx);
                for b in beams {
                    let g = if compensate {
                        let ph = b.doppler * (n as f64 - b.reference_instant);
                        b.gain * C64::new(ph.cos(), ph.sin())
                    } else {
                        b.gain
                    };
                    let ar = steering_vector(est.n_rx, b.aoa_freq);
                    let at = steering_vector(est.n_tx, b.aod_freq);
                    for c in 0..est.n_tx {
                        let w = g * at[c].conj();
                        for r in 0..est.n_rx {
                            h[(r, c)] += ar[r] * w;
                        }
                    }
                }
                h
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseKind {
    /// `sum_d ||H_d - Hhat_d||_F / sum_d ||H_d||_F`.
    #[default]
    Frobenius,
    /// `sum_d ||H_d - Hhat_d||_F^2 / sum_d ||H_d||_F^2`.
    Squared,
}

/// Normalized error between tap lists.
pub fn nmse(truth: &[CMatrix], est: &[CMatrix], kind: NmseKind) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: est.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (h, e) in truth.iter().zip(est) {
        if h.shape() != e.shape() {
            return Err(Error::ShapeMismatch {
                expected: h.shape(),
                got: e.shape(),
            });
        }
        let diff: f64 = h.iter().zip(e.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let energy: f64 = h.iter().map(|a| a.norm_sqr()).sum();
        match kind {
            NmseKind::Frobenius => {
                num += diff.sqrt();
                den += energy.sqrt();
            }
            NmseKind::Squared => {
                num += diff;
                den += energy;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroChannel);
    }
    Ok(num / den)
}

/// NMSE of an estimate against the true channel at instant `n`.
pub fn nmse_at(ch: &ChannelRealization, est: &EstimatedChannel, n: i64, compensate: bool, kind: NmseKind) -> Result<f64> {
    nmse(&ch.tap_matrices(n), &reconstruct(est, n, compensate), kind)
}

/// How an SNR figure maps to the noise variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrConvention {
    /// Training energy averaged over a conventional frame's payload:
    /// `snr = L / (N s2)`.
    #[default]
    AveragedTsnr,
    /// Per non-zero training symbol: `snr = 1 / s2`.
    PerSymbol,
}

/// Noise variance for `snr_db`, with `subframes` non-zero symbols per frame
/// and `payload` symbols in a conventional frame.
pub fn noise_var_for_snr(snr_db: f64, conv: SnrConvention, subframes: usize, payload: usize) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    match conv {
        SnrConvention::AveragedTsnr => subframes as f64 / (payload as f64 * snr),
        SnrConvention::PerSymbol => 1.0 / snr,
    }
}

/// `10 log10(x)`.
pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{on_grid_path, SystemConfig};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_taps(rng: &mut ChaCha8Rng, n: usize, taps: usize) -> Vec<CMatrix> {
        (0..taps)
            .map(|_| DMatrix::from_fn(n, n, |_, _| crate::model::complex_gaussian(rng, 1.0)))
            .collect()
    }

    #[test]
    fn nmse_trivial_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_taps(&mut rng, 3, 4);
        let zero: Vec<CMatrix> = h.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        let twice: Vec<CMatrix> = h.iter().map(|m| m * C64::new(2.0, 0.0)).collect();
        for kind in [NmseKind::Frobenius, NmseKind::Squared] {
            assert_eq!(nmse(&h, &h, kind).unwrap(), 0.0);
            assert!((nmse(&h, &zero, kind).unwrap() - 1.0).abs() < 1e-15);
            assert!((nmse(&h, &twice, kind).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(matches!(nmse(&zero, &h, NmseKind::Frobenius), Err(Error::ZeroChannel)));
    }

    #[test]
    fn nmse_is_unsquared_by_default() {
        // two taps with energies 1 and 4, errors on the first only
        let a = vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0)), DMatrix::from_element(1, 1, C64::new(2.0, 0.0))];
        let b = vec![DMatrix::from_element(1, 1, C64::new(0.0, 0.0)), DMatrix::from_element(1, 1, C64::new(2.0, 0.0))];
        assert!((nmse(&a, &b, NmseKind::Frobenius).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((nmse(&a, &b, NmseKind::Squared).unwrap() - 1.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn empty_taps_reconstruct_to_zero() {
        let est = EstimatedChannel::empty(4, 3, 2, 0);
        for m in reconstruct(&est, 10, true) {
            assert_eq!(m.shape(), (3, 4));
            assert!(m.iter().all(|v| *v == C64::new(0.0, 0.0)));
        }
    }

    #[test]
    fn static_beams_reconstruct_constant_in_time() {
        let mut est = EstimatedChannel::empty(4, 4, 1, 0);
        est.taps[0] = TapEstimate::Beams(vec![BeamComponent {
            aoa_freq: 0.2,
            aod_freq: 0.7,
            gain: C64::new(1.0, -1.0),
            doppler: 0.0,
            reference_instant: 3.5,
        }]);
        assert_eq!(reconstruct(&est, 0, true), reconstruct(&est, 1000, true));
    }

    #[test]
    fn perfect_estimate_matches_truth_over_time() {
        let cfg = SystemConfig {
            n_tx: 8,
            n_rx: 8,
            n_taps: 4,
            g_tx: 16,
            g_rx: 16,
            ..SystemConfig::default()
        }
        .with_speed_kmh(120.0);
        let path = on_grid_path(&cfg, C64::new(0.4, 0.9), 2, 3, 12);
        let ch = ChannelRealization::from_paths(&cfg, vec![path.clone()]).unwrap();
        let mut est = EstimatedChannel::empty(8, 8, 4, 0);
        est.taps[2] = TapEstimate::Beams(vec![BeamComponent {
            aoa_freq: path.aoa_freq(),
            aod_freq: path.aod_freq(),
            gain: ch.gain(2, 0, 17),
            doppler: path.doppler_rad_per_sample,
            reference_instant: 17.0,
        }]);
        for n in [0, 100, 5000] {
            let e = nmse_at(&ch, &est, n, true, NmseKind::Frobenius).unwrap();
            assert!(db(e) < -40.0, "n={n}: {e}");
        }
        assert!(nmse_at(&ch, &est, 5000, false, NmseKind::Frobenius).unwrap() > 0.1);
    }

    #[test]
    fn snr_conventions() {
        assert!((noise_var_for_snr(0.0, SnrConvention::AveragedTsnr, 5, 64) - 5.0 / 64.0).abs() < 1e-15);
        assert!((noise_var_for_snr(10.0, SnrConvention::PerSymbol, 5, 64) - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nmse_is_invariant_under_common_unitary_rotation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_taps(&mut rng, 4, 3);
            let e = random_taps(&mut rng, 4, 3);
            let base = nmse(&h, &e, NmseKind::Frobenius).unwrap();
            let q = |rng: &mut ChaCha8Rng| {
                let g = DMatrix::from_fn(4, 4, |_, _| crate::model::complex_gaussian(rng, 1.0));
                g.qr().q()
            };
            let hr: Vec<CMatrix> = h.iter().map(|m| {
                let (u, v) = (q(&mut rng), q(&mut rng));
                (u * m * v).clone()
            }).collect();
            // re-draw the same rotations for the estimate
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            let _ = random_taps(&mut rng2, 4, 3);
            let _ = random_taps(&mut rng2, 4, 3);
            let er: Vec<CMatrix> = e.iter().map(|m| {
                let (u, v) = (q(&mut rng2), q(&mut rng2));
                (u * m * v).clone()
            }).collect();
            let rotated = nmse(&hr, &er, NmseKind::Frobenius).unwrap();
            prop_assert!((base - rotated).abs() < 1e-10 * (1.0 + base));
        }
    }
}
