//! Steering-probing stage: polling of the recovered beams, per-poll LS gain
//! estimates and WNALP gain/Doppler estimation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, inner};
use crate::model::{steering_vector, SystemConfig};
use crate::probing::{steering_probe, ProbePair, ProbeSchedule, ProbeStage};
use crate::recover::SupportEstimate;
use crate::prelude::*;

/// One beam of the polling union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolledBeam {
    /// `(Rx, Tx)` indices on the fine grids, the deduplication key.
    pub key: (usize, usize),
    pub aoa_freq: f64,
    pub aod_freq: f64,
}

/// Union of the recovered supports and the periodic steering order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollingPlan {
    pub beams: Vec<PolledBeam>,
    /// For every tap with a non-empty support: the tap and the positions of
    /// its own beams in `beams`, in support order.
    pub native: Vec<(usize, Vec<usize>)>,
    pub polls: usize,
    pub n_taps: usize,
    /// Steering probe of every beam of the union.
    pub probes: Vec<ProbePair>,
}

/// Deduplicates the supports into one polling union.
pub fn build_polling_plan(cfg: &SystemConfig, supports: &[SupportEstimate], polls: usize) -> Result<PollingPlan> {
    if polls == 0 {
        return Err(Error::InvalidConfig("at least one poll is required".into()));
    }
    let mut beams: Vec<PolledBeam> = Vec::new();
    let mut native = Vec::new();
    for s in supports.iter().filter(|s| !s.is_empty()) {
        let mut own = Vec::with_capacity(s.len());
        for (&key, &(aoa, aod)) in s.refined_idx.iter().zip(&s.refined_freqs) {
            let pos = match beams.iter().position(|b| b.key == key) {
                Some(p) => p,
                None => {
                    beams.push(PolledBeam {
                        key,
                        aoa_freq: aoa,
                        aod_freq: aod,
                    });
                    beams.len() - 1
                }
            };
            if !own.contains(&pos) {
                own.push(pos);
            }
        }
        native.push((s.tap, own));
    }
    if beams.is_empty() {
        return Err(Error::EmptySupport);
    }
    let probes = beams
        .iter()
        .map(|b| steering_probe(cfg, b.aod_freq, b.aoa_freq))
        .collect();
    Ok(PollingPlan {
        beams,
        native,
        polls,
        n_taps: cfg.n_taps,
        probes,
    })
}

impl PollingPlan {
    /// `|I|`.
    pub fn period(&self) -> usize {
        self.beams.len()
    }

    /// Subframes the `R` polls occupy.
    pub fn subframes(&self) -> usize {
        self.period() * self.polls
    }

    /// Instants between successive polls of the same beam, `N_c |I|`.
    pub fn spacing(&self) -> usize {
        self.n_taps * self.period()
    }

    /// Steering schedule over `subframes` subframes; subframe `s` steers
    /// beam `s mod |I|`.
    pub fn schedule(&self, subframes: usize) -> ProbeSchedule {
        ProbeSchedule {
            stage: ProbeStage::Steering,
            hold: self.n_taps,
            probes: (0..subframes)
                .map(|s| self.probes[s % self.period()].clone())
                .collect(),
        }
    }

    /// Instant, relative to the stage start, that poll `i` of tap `d` is
    /// attributed to: the middle of the poll, `i |I| N_c + (|I| - 1) N_c / 2 + d`.
    pub fn poll_instant(&self, d: usize, i: usize) -> f64 {
        (i * self.spacing()) as f64 + ((self.period() - 1) * self.n_taps) as f64 / 2.0 + d as f64
    }

    fn native_of(&self, d: usize) -> Option<&[usize]> {
        self.native.iter().find(|(t, _)| *t == d).map(|(_, v)| v.as_slice())
    }

    /// `M[j, b] = (p_r(j)^H a_r(b)) (a_t(b)^H p_t(j))` over the polling rows
    /// `j` and the native beams `b` of tap `d`.
    pub fn measurement_matrix(&self, d: usize) -> Result<CMatrix> {
        let own = self.native_of(d).ok_or(Error::EmptySupport)?;
        let n_tx = self.probes[0].tx.len();
        let n_rx = self.probes[0].rx.len();
        let cols: Vec<Vec<C64>> = own
            .iter()
            .map(|&b| {
                let at = steering_vector(n_tx, self.beams[b].aod_freq);
                let ar = steering_vector(n_rx, self.beams[b].aoa_freq);
                self.probes
                    .iter()
                    .map(|pp| inner(&pp.rx, &ar) * inner(&at, &pp.tx))
                    .collect()
            })
            .collect();
        Ok(linalg::from_columns(self.period(), &cols))
    }
}

/// LS estimate of the native-beam gains of tap `d` at poll `i`.
///
/// `samples` are the steering-stage samples starting at the stage start.
/// The flag reports a regularized solve of a rank-deficient system.
pub fn ls_gains(samples: &[C64], plan: &PollingPlan, d: usize, i: usize) -> Result<(Vec<C64>, bool)> {
    let m = plan.measurement_matrix(d)?;
    ls_gains_with(samples, plan, &m, d, i)
}

fn ls_gains_with(samples: &[C64], plan: &PollingPlan, m: &CMatrix, d: usize, i: usize) -> Result<(Vec<C64>, bool)> {
    if d >= plan.n_taps {
        return Err(Error::TapOutOfRange {
            tap: d,
            n_taps: plan.n_taps,
        });
    }
    let start = i * plan.spacing();
    let last = start + (plan.period() - 1) * plan.n_taps + d;
    if last >= samples.len() {
        return Err(Error::LengthMismatch {
            expected: last + 1,
            got: samples.len(),
        });
    }
    let y: Vec<C64> = (0..plan.period())
        .map(|j| samples[start + j * plan.n_taps + d])
        .collect();
    Ok(linalg::lstsq(m, &y))
}

/// Equally spaced gain estimates of one beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSeries {
    pub tap: usize,
    /// Position in the polling union.
    pub beam: usize,
    pub values: Vec<C64>,
    /// Instants between samples, `N_c |I|`.
    pub spacing: usize,
    /// Absolute instant of `values[0]`.
    pub first_instant: f64,
    pub flagged: bool,
}

/// Gain series of every native beam of tap `d`. `t_start` is the absolute
/// instant of `samples[0]`.
pub fn gain_series(samples: &[C64], plan: &PollingPlan, d: usize, t_start: i64) -> Result<Vec<GainSeries>> {
    let own = plan.native_of(d).ok_or(Error::EmptySupport)?.to_vec();
    let m = plan.measurement_matrix(d)?;
    let mut out: Vec<GainSeries> = own
        .iter()
        .map(|&b| GainSeries {
            tap: d,
            beam: b,
            values: Vec::with_capacity(plan.polls),
            spacing: plan.spacing(),
            first_instant: t_start as f64 + plan.poll_instant(d, 0),
            flagged: false,
        })
        .collect();
    for i in 0..plan.polls {
        let (g, flagged) = ls_gains_with(samples, plan, &m, d, i)?;
        for (s, v) in out.iter_mut().zip(g) {
            s.values.push(v);
            s.flagged |= flagged;
        }
    }
    Ok(out)
}

/// Gain and Doppler of one beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEstimate {
    pub tap: usize,
    pub beam: usize,
    /// Gain at `reference_instant`.
    pub gain: C64,
    /// Rad/sample.
    pub doppler: f64,
    /// Absolute instant the gain refers to: half a spacing before the
    /// first sample of the series.
    pub reference_instant: f64,
    pub flagged: bool,
}

/// Smoothing weights `w_1..w_M0`,
/// `3((2M0 - m)(2M0 - m + 1) - M0^2) / (M0 (4 M0^2 - 1))`.
pub fn wnalp_weights(m0: usize) -> Vec<f64> {
    let m0f = m0 as f64;
    let den = m0f * (4.0 * m0f * m0f - 1.0);
    (1..=m0)
        .map(|m| {
            let a = 2.0 * m0f - m as f64;
            3.0 * (a * (a + 1.0) - m0f * m0f) / den
        })
        .collect()
}

/// Frequency (rad per sample of the series) and gain at half a sample
/// before the first one. Fewer than two samples give frequency 0, the mean
/// gain, and `true` in the flag.
pub fn wnalp_tone(values: &[C64]) -> (f64, C64, bool) {
    let r = values.len();
    if r == 0 {
        return (0.0, C64::new(0.0, 0.0), true);
    }
    if r < 2 {
        return (0.0, values[0], true);
    }
    let m0 = r / 2;
    // autocorrelation with 1-based sample indices i = m+1 ..= 2 M0
    let acf: Vec<C64> = (0..=m0)
        .map(|m| {
            let s: C64 = (m + 1..=2 * m0).map(|i| values[i - 1] * values[i - 1 - m].conj()).sum();
            s / (r - m) as f64
        })
        .collect();
    let w = wnalp_weights(m0);
    let step: f64 = (1..=m0).map(|m| w[m - 1] * (acf[m] * acf[m - 1].conj()).arg()).sum();
    let gain = values
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let ph = -step * (i as f64 + 0.5);
            g * C64::new(ph.cos(), ph.sin())
        })
        .sum::<C64>()
        / r as f64;
    (step, gain, false)
}

/// WNALP estimate of a beam's Doppler shift and gain.
pub fn wnalp(series: &GainSeries) -> BeamEstimate {
    let (step, gain, flagged) = wnalp_tone(&series.values);
    let spacing = series.spacing.max(1) as f64;
    BeamEstimate {
        tap: series.tap,
        beam: series.beam,
        gain,
        doppler: step / spacing,
        reference_instant: series.first_instant - spacing / 2.0,
        flagged: flagged || series.flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::model::{complex_gaussian, on_grid_path, ChannelRealization};
    use crate::probing::{build_frame, simulate_rx, FrameKind, PhaseSet, Quantizer};
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn support(tap: usize, pairs: &[(usize, usize)], g: usize) -> SupportEstimate {
        let mut s = SupportEstimate::empty(tap, g, g);
        for &(m, n) in pairs {
            s.coarse_pairs.push((m, n));
            s.refined_idx.push((m * g, n * g));
            s.refined_freqs.push((m as f64 / g as f64, n as f64 / g as f64));
        }
        s.iterations_used = pairs.len();
        s
    }

    fn cfg(n: usize) -> SystemConfig {
        SystemConfig {
            n_tx: n,
            n_rx: n,
            n_taps: 4,
            g_tx: 2 * n,
            g_rx: 2 * n,
            noise_var: 0.0,
            aps_bits: 20,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn union_deduplicates_shared_beams() {
        let c = cfg(8);
        let a = support(0, &[(1, 2), (3, 4)], 16);
        let b = support(2, &[(3, 4), (7, 9), (10, 1)], 16);
        let plan = build_polling_plan(&c, &[a, b], 4).unwrap();
        assert_eq!(plan.period(), 2 + 3 - 1);
        assert_eq!(plan.native[1], (2, vec![1, 2, 3]));
        assert_eq!(plan.subframes(), 16);
        let single = build_polling_plan(&c, &[support(1, &[(5, 5)], 16)], 3).unwrap();
        let sched = single.schedule(7);
        assert!(sched.probes.iter().all(|p| *p == single.probes[0]));
        assert!(matches!(
            build_polling_plan(&c, &[SupportEstimate::empty(0, 16, 16)], 2),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn four_beams_four_polls_use_sixteen_subframes() {
        let c = cfg(8);
        let s = support(0, &[(1, 1), (4, 4), (8, 8), (12, 12)], 16);
        let plan = build_polling_plan(&c, &[s], 4).unwrap();
        assert_eq!(plan.subframes(), 16);
        let sched = plan.schedule(plan.subframes());
        for (k, p) in sched.probes.iter().enumerate() {
            assert_eq!(*p, plan.probes[k % 4]);
        }
    }

    #[test]
    fn poll_instants_are_equally_spaced() {
        let c = cfg(8);
        let plan = build_polling_plan(&c, &[support(0, &[(1, 1), (5, 9), (9, 3)], 16)], 6).unwrap();
        for i in 0..5 {
            assert_eq!(plan.poll_instant(2, i + 1) - plan.poll_instant(2, i), (4 * 3) as f64);
        }
        // middle of the first poll: (0 + (|I|-1) N_c) / 2 + d
        assert_eq!(plan.poll_instant(2, 0), 4.0 + 2.0);
    }

    fn steering_samples(c: &SystemConfig, ch: &ChannelRealization, plan: &PollingPlan, rng: &mut ChaCha8Rng, t0: i64) -> Vec<C64> {
        let frame = build_frame(FrameKind::Proposed, c.n_taps, plan.subframes()).unwrap();
        let sched = plan.schedule(plan.subframes());
        simulate_rx(ch, &frame, &sched, c, rng, t0).unwrap().samples
    }

    #[test]
    fn noiseless_static_gains_are_exact() {
        let c = cfg(16);
        let paths = vec![
            on_grid_path(&c, C64::new(0.8, -0.4), 1, 3, 20),
            on_grid_path(&c, C64::new(-0.2, 1.1), 1, 17, 6),
            on_grid_path(&c, C64::new(0.5, 0.5), 3, 25, 11),
        ];
        let ch = ChannelRealization::from_paths(&c, paths).unwrap();
        let s1 = support(1, &[(3, 20), (17, 6)], 32);
        let s3 = support(3, &[(25, 11)], 32);
        let plan = build_polling_plan(&c, &[s1, s3], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = steering_samples(&c, &ch, &plan, &mut rng, 0);
        for i in 0..3 {
            let (g, flagged) = ls_gains(&y, &plan, 1, i).unwrap();
            assert!(!flagged);
            assert!((g[0] - ch.tap_gain_vectors[1][0]).norm() < 1e-8);
            assert!((g[1] - ch.tap_gain_vectors[1][1]).norm() < 1e-8);
            let (g3, _) = ls_gains(&y, &plan, 3, i).unwrap();
            assert!((g3[0] - ch.tap_gain_vectors[3][2]).norm() < 1e-8);
        }
    }

    #[test]
    fn square_system_is_solved_exactly() {
        let c = cfg(8);
        let paths = vec![
            on_grid_path(&c, C64::new(1.0, 0.0), 2, 2, 5),
            on_grid_path(&c, C64::new(0.0, -1.0), 2, 9, 13),
        ];
        let ch = ChannelRealization::from_paths(&c, paths).unwrap();
        let plan = build_polling_plan(&c, &[support(2, &[(2, 5), (9, 13)], 16)], 1).unwrap();
        assert_eq!(plan.measurement_matrix(2).unwrap().shape(), (2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = steering_samples(&c, &ch, &plan, &mut rng, 0);
        let (g, _) = ls_gains(&y, &plan, 2, 0).unwrap();
        assert!((g[0] - ch.tap_gain_vectors[2][0]).norm() < 1e-10);
        assert!((g[1] - ch.tap_gain_vectors[2][1]).norm() < 1e-10);
    }

    #[test]
    fn relative_gain_error_shrinks_with_array_size() {
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let c = SystemConfig {
                aps_bits: 2,
                noise_var: 1.0,
                quantizer: Quantizer::AsWritten,
                ..cfg(n)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let mut acc = 0.0;
            for _ in 0..300 {
                let ch = ChannelRealization::from_paths(&c, vec![on_grid_path(&c, C64::new(1.0, 0.0), 0, 3, 5)]).unwrap();
                let plan = build_polling_plan(&c, &[support(0, &[(3, 5)], 2 * n)], 1).unwrap();
                let y = steering_samples(&c, &ch, &plan, &mut rng, 0);
                let (g, _) = ls_gains(&y, &plan, 0, 0).unwrap();
                let truth = ch.tap_gain_vectors[0][0];
                acc += (g[0] - truth).norm_sqr() / truth.norm_sqr();
            }
            errs.push(acc / 300.0);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn weights_sum_to_one() {
        for m0 in 1..=10 {
            let w = wnalp_weights(m0);
            // independent evaluation in exact integer arithmetic
            let num: i64 = (1..=m0 as i64)
                .map(|m| 3 * ((2 * m0 as i64 - m) * (2 * m0 as i64 - m + 1) - (m0 * m0) as i64))
                .sum();
            let den = m0 as i64 * (4 * (m0 * m0) as i64 - 1);
            assert_eq!(num, den, "m0={m0}");
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn noiseless_tone_is_recovered() {
        let a = C64::new(0.6, -1.3);
        let wd: f64 = 0.1;
        let values: Vec<C64> = (1..=16)
            .map(|i| {
                let ph = wd * (i as f64 - 0.5);
                a * C64::new(ph.cos(), ph.sin())
            })
            .collect();
        let (step, gain, flagged) = wnalp_tone(&values);
        assert!(!flagged);
        assert!((step - wd).abs() < 1e-10);
        assert!((gain - a).norm() < 1e-10);
    }

    #[test]
    fn zero_frequency_gives_the_mean() {
        let values = vec![C64::new(1.0, 2.0); 7];
        let (step, gain, _) = wnalp_tone(&values);
        assert_eq!(step, 0.0);
        assert!((gain - C64::new(1.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn short_series_is_flagged() {
        let (step, gain, flagged) = wnalp_tone(&[C64::new(2.0, 0.0)]);
        assert!(flagged && step == 0.0 && gain == C64::new(2.0, 0.0));
    }

    #[test]
    fn noisy_tone_median_error_at_ten_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut errs: Vec<f64> = (0..500)
            .map(|_| {
                let wd = (rand::Rng::random::<f64>(&mut rng) - 0.5) * 1.0;
                let values: Vec<C64> = (1..=16)
                    .map(|i| {
                        let ph = wd * (i as f64 - 0.5);
                        C64::new(ph.cos(), ph.sin()) + complex_gaussian(&mut rng, 0.1)
                    })
                    .collect();
                (wnalp_tone(&values).0 - wd).abs()
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(errs[250] < 1e-2, "median {}", errs[250]);
    }

    #[test]
    fn beam_estimate_refers_half_a_spacing_early() {
        let s = GainSeries {
            tap: 1,
            beam: 0,
            values: vec![C64::new(1.0, 0.0); 4],
            spacing: 48,
            first_instant: 430.0,
            flagged: false,
        };
        let e = wnalp(&s);
        assert_eq!(e.reference_instant, 406.0);
        assert_eq!(e.doppler, 0.0);
    }

    #[test]
    fn steering_probe_phases_stay_in_phase_set() {
        let c = SystemConfig { aps_bits: 2, ..cfg(8) };
        let plan = build_polling_plan(&c, &[support(0, &[(3, 7)], 16)], 1).unwrap();
        let ps = PhaseSet::new(2);
        for v in plan.probes[0].tx.iter().chain(&plan.probes[0].rx) {
            let ph = v.arg().rem_euclid(2.0 * PI);
            assert!(ps.angles().iter().any(|a| (a - ph).abs() < 1e-12 || (a - ph).abs() > 2.0 * PI - 1e-12));
        }
    }

    proptest! {
        #[test]
        fn wnalp_is_phase_and_scale_equivariant(seed in any::<u64>(), phi in -PI..PI, scale in 0.1f64..10.0, r in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<C64> = (0..r).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let rot = C64::new(phi.cos(), phi.sin()) * scale;
            let moved: Vec<C64> = values.iter().map(|v| v * rot).collect();
            let (w0, g0, _) = wnalp_tone(&values);
            let (w1, g1, _) = wnalp_tone(&moved);
            prop_assert!((w0 - w1).abs() < 1e-9);
            prop_assert!((g0 * rot - g1).norm() < 1e-9 * (1.0 + g1.norm()));
        }

        #[test]
        fn doppler_estimate_stays_below_alias_limit(seed in any::<u64>(), r in 2usize..20, spacing in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = GainSeries {
                tap: 0,
                beam: 0,
                values: (0..r).map(|_| complex_gaussian(&mut rng, 1.0)).collect(),
                spacing,
                first_instant: 0.0,
                flagged: false,
            };
            prop_assert!(wnalp(&s).doppler.abs() <= PI / spacing as f64 + 1e-15);
        }
    }
}
