//! Analog probing: phase quantization, probe vectors, training frames and
//! the received-sample simulator.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{complex_gaussian, wrap_unit, ChannelRealization, SystemConfig};
use crate::linalg;
use crate::prelude::*;

/// Phase quantizer rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantizer {
    /// `argmin_i mod(x - B(i), 2 pi)`: the largest grid phase not above `x`.
    #[default]
    AsWritten,
    /// Nearest grid phase on the circle.
    Nearest,
}

/// The `2^b` phases `2 pi k / 2^b` reachable by a `b`-bit phase shifter.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSet {
    bits: u32,
    step: f64,
}

impl PhaseSet {
    pub fn new(bits: u32) -> Self {
        assert!((1..=30).contains(&bits), "phase shifter bits must be in 1..=30");
        Self {
            bits,
            step: 2.0 * PI / (1u64 << bits) as f64,
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        1usize << self.bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.angle(k)).collect()
    }

    /// Index of the quantized phase of `x`.
    pub fn quantize_index(&self, x: f64, rule: Quantizer) -> usize {
        let two_pi = 2.0 * PI;
        let r = x - two_pi * (x / two_pi).floor();
        let m = self.len();
        match rule {
            Quantizer::AsWritten => {
                let mut k = ((r / self.step).floor() as usize).min(m - 1);
                while k + 1 < m && self.angle(k + 1) <= r {
                    k += 1;
                }
                while k > 0 && self.angle(k) > r {
                    k -= 1;
                }
                k
            }
            Quantizer::Nearest => ((r / self.step).round() as usize) % m,
        }
    }
}

pub fn quantize_phase(x: f64, ps: &PhaseSet, rule: Quantizer) -> f64 {
    ps.angle(ps.quantize_index(x, rule))
}

#[inline]
fn unit_entry(scale: f64, phase: f64) -> C64 {
    C64::new(scale * phase.cos(), scale * phase.sin())
}

/// Transmit and receive analog weights for one subframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub tx: Vec<C64>,
    pub rx: Vec<C64>,
}

fn random_vector<R: Rng + ?Sized>(n: usize, ps: &PhaseSet, rng: &mut R) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|_| unit_entry(scale, ps.angle(rng.random_range(0..ps.len()))))
        .collect()
}

/// Random probe: every phase drawn uniformly from the phase set.
pub fn random_probe<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ProbePair {
    let ps = PhaseSet::new(cfg.aps_bits);
    let tx = random_vector(cfg.n_tx, &ps, rng);
    let rx = random_vector(cfg.n_rx, &ps, rng);
    ProbePair { tx, rx }
}

/// Quantized beam steering towards normalized frequency `y`: entry `k` has
/// phase `Q(2 pi k y)`.
pub fn steering_weights(n: usize, y: f64, ps: &PhaseSet, rule: Quantizer) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let psi = 2.0 * PI * wrap_unit(k as f64 * y);
            unit_entry(scale, quantize_phase(psi, ps, rule))
        })
        .collect()
}

/// Steering probe towards an (AoD, AoA) pair given as spatial frequencies.
pub fn steering_probe(cfg: &SystemConfig, aod_freq: f64, aoa_freq: f64) -> ProbePair {
    let ps = PhaseSet::new(cfg.aps_bits);
    ProbePair {
        tx: steering_weights(cfg.n_tx, aod_freq, &ps, cfg.quantizer),
        rx: steering_weights(cfg.n_rx, aoa_freq, &ps, cfg.quantizer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeStage {
    Random,
    Steering,
}

/// Probe vectors over a frame. Instant `n` uses `probes[n / hold]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    pub stage: ProbeStage,
    /// Instants each probe stays in place: `N_c` for the zero-padded pattern
    /// (reconfiguration in every guard interval), the frame length for the
    /// conventional one.
    pub hold: usize,
    pub probes: Vec<ProbePair>,
}

impl ProbeSchedule {
    pub fn subframes(&self) -> usize {
        self.probes.len()
    }

    pub fn covered(&self) -> usize {
        self.hold * self.probes.len()
    }

    #[inline]
    pub fn index_at(&self, n: usize) -> usize {
        n / self.hold
    }

    pub fn at(&self, n: usize) -> &ProbePair {
        &self.probes[n / self.hold]
    }
}

/// One random probe per subframe of `frame`.
pub fn random_schedule<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    frame: &TrainingFrame,
    rng: &mut R,
) -> ProbeSchedule {
    let (hold, count) = match frame.kind {
        FrameKind::Proposed => (frame.n_zp, frame.n_payload),
        FrameKind::Conventional => (frame.len(), 1),
    };
    ProbeSchedule {
        stage: ProbeStage::Random,
        hold,
        probes: (0..count).map(|_| random_probe(cfg, rng)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameKind {
    /// `N` payload symbols followed by `N_c` zeros.
    Conventional,
    /// `L` subframes, each a single unit symbol followed by `N_c - 1` zeros.
    Proposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFrame {
    pub kind: FrameKind,
    pub symbols: Vec<C64>,
    /// `N` for the conventional frame, `L` for the proposed one.
    pub n_payload: usize,
    pub n_zp: usize,
}

impl TrainingFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Subframes per frame (`L`) for the proposed pattern.
    pub fn subframes(&self) -> usize {
        match self.kind {
            FrameKind::Proposed => self.n_payload,
            FrameKind::Conventional => 1,
        }
    }
}

/// Builds a training frame with unit training symbols. `count` is `L` for
/// [`FrameKind::Proposed`] and `N` for [`FrameKind::Conventional`].
pub fn build_frame(kind: FrameKind, n_taps: usize, count: usize) -> Result<TrainingFrame> {
    if n_taps == 0 || count == 0 {
        return Err(Error::InvalidConfig("frame needs n_taps >= 1 and a non-empty payload".into()));
    }
    let one = C64::new(1.0, 0.0);
    let symbols = match kind {
        FrameKind::Proposed => {
            let mut s = vec![C64::new(0.0, 0.0); count * n_taps];
            for l in 0..count {
                s[l * n_taps] = one;
            }
            s
        }
        FrameKind::Conventional => {
            let mut s = vec![one; count];
            s.resize(count + n_taps, C64::new(0.0, 0.0));
            s
        }
    };
    Ok(TrainingFrame {
        kind,
        symbols,
        n_payload: count,
        n_zp: n_taps,
    })
}

/// Proposed-pattern frame of total length `frame_len`, which must be a
/// multiple of `n_taps`.
pub fn proposed_frame_for_length(frame_len: usize, n_taps: usize) -> Result<TrainingFrame> {
    if n_taps == 0 || frame_len % n_taps != 0 || frame_len == 0 {
        return Err(Error::NonIntegerSubframes { frame_len, n_taps });
    }
    build_frame(FrameKind::Proposed, n_taps, frame_len / n_taps)
}

/// Received scalar samples of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxTrace {
    pub samples: Vec<C64>,
    pub noise_var: f64,
    /// Absolute instant of `samples[0]`.
    pub t0: i64,
}

/// Simulates
/// `y(n) = sum_d p_r(n)^H H_d(t0 + n) p_t(n - d) s(n - d) + xi(n)`
/// over one frame, with `xi ~ CN(0, noise_var)`. Symbols before the frame
/// start are zero (the previous frame ends in a guard interval).
pub fn simulate_rx<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    frame: &TrainingFrame,
    sched: &ProbeSchedule,
    cfg: &SystemConfig,
    rng: &mut R,
    t0: i64,
) -> Result<RxTrace> {
    let nf = frame.len();
    if sched.covered() < nf {
        return Err(Error::ScheduleTooShort {
            covered: sched.covered(),
            needed: nf,
        });
    }
    for p in &sched.probes {
        if p.tx.len() != ch.n_tx {
            return Err(Error::LengthMismatch {
                expected: ch.n_tx,
                got: p.tx.len(),
            });
        }
        if p.rx.len() != ch.n_rx {
            return Err(Error::LengthMismatch {
                expected: ch.n_rx,
                got: p.rx.len(),
            });
        }
    }
    let np = ch.path_count();
    // per probe: p_r^H a_r(theta_p) and a_t(phi_p)^H p_t
    let rx_proj: Vec<Vec<C64>> = sched
        .probes
        .iter()
        .map(|pp| (0..np).map(|p| linalg::inner(&pp.rx, &ch.steering_rx[p])).collect())
        .collect();
    let tx_proj: Vec<Vec<C64>> = sched
        .probes
        .iter()
        .map(|pp| (0..np).map(|p| linalg::inner(&ch.steering_tx[p], &pp.tx)).collect())
        .collect();
    let zero = C64::new(0.0, 0.0);
    let mut samples = Vec::with_capacity(nf);
    for n in 0..nf {
        let qr = sched.index_at(n);
        let t = t0 + n as i64;
        let mut acc = zero;
        for d in 0..ch.n_taps.min(n + 1) {
            let s = frame.symbols[n - d];
            if s == zero {
                continue;
            }
            let qt = sched.index_at(n - d);
            let mut v = zero;
            for p in 0..np {
                v += ch.gain(d, p, t) * rx_proj[qr][p] * tx_proj[qt][p];
            }
            acc += v * s;
        }
        acc += complex_gaussian(rng, cfg.noise_var);
        samples.push(acc);
    }
    Ok(RxTrace {
        samples,
        noise_var: cfg.noise_var,
        t0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{on_grid_path, sample_channel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(x: f64, ps: &PhaseSet) -> f64 {
        let two_pi = 2.0 * PI;
        let modp = |v: f64| v - two_pi * (v / two_pi).floor();
        let mut best = 0;
        for i in 0..ps.len() {
            if modp(x - ps.angle(i)) < modp(x - ps.angle(best)) {
                best = i;
            }
        }
        ps.angle(best)
    }

    #[test]
    fn phase_set_layout() {
        let ps = PhaseSet::new(3);
        let a = ps.angles();
        assert_eq!(a.len(), 8);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&x| (0.0..2.0 * PI).contains(&x)));
    }

    #[test]
    fn quantizer_examples() {
        let q = |x: f64, b: u32| quantize_phase(x, &PhaseSet::new(b), Quantizer::AsWritten);
        assert_eq!(q(0.0, 2), 0.0);
        assert_eq!(q(0.8 * PI, 1), 0.0);
        assert!((q(1.6 * PI, 2) - 1.5 * PI).abs() < 1e-15);
        let n = |x: f64, b: u32| quantize_phase(x, &PhaseSet::new(b), Quantizer::Nearest);
        assert!((n(0.8 * PI, 1) - PI).abs() < 1e-15);
        assert_eq!(n(1.9 * PI, 2), 0.0);
    }

    #[test]
    fn quantizer_matches_formula_by_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in 1..=5 {
            let ps = PhaseSet::new(b);
            for _ in 0..2000 {
                let x = (rng.random::<f64>() - 0.5) * 40.0;
                assert_eq!(quantize_phase(x, &ps, Quantizer::AsWritten), brute_force(x, &ps), "x={x} b={b}");
            }
            for k in 0..ps.len() {
                assert_eq!(quantize_phase(ps.angle(k), &ps, Quantizer::AsWritten), ps.angle(k));
            }
        }
    }

    #[test]
    fn one_bit_random_probes_are_real() {
        let cfg = SystemConfig {
            aps_bits: 1,
            n_tx: 8,
            n_rx: 4,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_probe(&cfg, &mut rng);
        let s = 1.0 / 8f64.sqrt();
        for x in &p.tx {
            assert!(x.im.abs() < 1e-15 && (x.re.abs() - s).abs() < 1e-15);
        }
    }

    #[test]
    fn random_probes_are_zero_mean() {
        let cfg = SystemConfig {
            n_tx: 1,
            n_rx: 1,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut sum = C64::new(0.0, 0.0);
        for _ in 0..n {
            sum += random_probe(&cfg, &mut rng).tx[0];
        }
        let mean = sum / n as f64;
        // |entry| = 1, so the standard error of the mean is 1/sqrt(n)
        assert!(mean.norm() < 3.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn random_probes_are_reproducible() {
        let cfg = SystemConfig::default();
        let a = random_probe(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let b = random_probe(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn flat_steering_probe() {
        let cfg = SystemConfig::default();
        let p = steering_probe(&cfg, 0.0, 0.0);
        let s = 1.0 / 32f64.sqrt();
        assert!(p.tx.iter().all(|x| (x - C64::new(s, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn two_bit_steering_phases_stay_on_grid() {
        let cfg = SystemConfig::default();
        // electrical angle pi/4 per antenna
        let p = steering_probe(&cfg, 0.125, 0.3);
        let ps = PhaseSet::new(2);
        for x in p.tx.iter().chain(&p.rx) {
            let ph = x.arg().rem_euclid(2.0 * PI);
            assert!(
                ps.angles().iter().any(|a| (a - ph).abs() < 1e-9 || (a - ph).abs() > 2.0 * PI - 1e-9),
                "phase {ph}"
            );
        }
    }

    #[test]
    fn fine_steering_gives_full_beamforming_gain() {
        let cfg = SystemConfig {
            aps_bits: 24,
            ..SystemConfig::default()
        };
        let y = 0.2371;
        let p = steering_probe(&cfg, y, y);
        let a = crate::model::steering_vector(32, y);
        assert!((linalg::inner(&a, &p.tx).norm() - 1.0).abs() < 1e-9);
        assert!((linalg::inner(&p.rx, &a).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frame_layouts() {
        let f = build_frame(FrameKind::Proposed, 16, 4).unwrap();
        assert_eq!(f.len(), 64);
        let nz: Vec<usize> = (0..64).filter(|&i| f.symbols[i] != C64::new(0.0, 0.0)).collect();
        assert_eq!(nz, vec![0, 16, 32, 48]);
        let c = build_frame(FrameKind::Conventional, 16, 64).unwrap();
        assert_eq!(c.len(), 80);
        assert!(c.symbols[64..].iter().all(|s| *s == C64::new(0.0, 0.0)));
        assert!(c.symbols[..64].iter().all(|s| *s == C64::new(1.0, 0.0)));
        let one = build_frame(FrameKind::Proposed, 16, 1).unwrap();
        assert_eq!(one.len(), 16);
        assert_eq!(one.symbols[0], C64::new(1.0, 0.0));
        assert!(matches!(
            proposed_frame_for_length(70, 16),
            Err(Error::NonIntegerSubframes { .. })
        ));
        assert_eq!(proposed_frame_for_length(80, 16).unwrap().subframes(), 5);
    }

    #[test]
    fn noise_only_trace_has_expected_variance() {
        let cfg = SystemConfig {
            n_tx: 2,
            n_rx: 2,
            n_taps: 1,
            g_tx: 2,
            g_rx: 2,
            noise_var: 0.7,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = sample_channel(&cfg, 1, &mut rng).unwrap();
        let mut ch0 = ch.clone();
        ch0.tap_gain_vectors = vec![vec![C64::new(0.0, 0.0)]];
        let frame = build_frame(FrameKind::Proposed, 1, 10_000).unwrap();
        let sched = random_schedule(&cfg, &frame, &mut rng);
        let tr = simulate_rx(&ch0, &frame, &sched, &cfg, &mut rng, 0).unwrap();
        let var = linalg::norm_sqr(&tr.samples) / tr.samples.len() as f64;
        assert!((var / 0.7 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn silent_noiseless_frame_is_zero() {
        let cfg = SystemConfig {
            noise_var: 0.0,
            n_tx: 4,
            n_rx: 4,
            g_tx: 8,
            g_rx: 8,
            n_taps: 4,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = sample_channel(&cfg, 2, &mut rng).unwrap();
        let mut frame = build_frame(FrameKind::Proposed, 4, 3).unwrap();
        frame.symbols.iter_mut().for_each(|s| *s = C64::new(0.0, 0.0));
        let sched = random_schedule(&cfg, &frame, &mut rng);
        let tr = simulate_rx(&ch, &frame, &sched, &cfg, &mut rng, 0).unwrap();
        assert!(tr.samples.iter().all(|s| *s == C64::new(0.0, 0.0)));
    }

    fn small_time_varying() -> (SystemConfig, ChannelRealization) {
        let cfg = SystemConfig {
            n_tx: 4,
            n_rx: 4,
            n_taps: 4,
            g_tx: 8,
            g_rx: 8,
            noise_var: 0.0,
            vmax_mps: 300.0,
            ..SystemConfig::default()
        };
        let ch = sample_channel(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        (cfg, ch)
    }

    #[test]
    fn proposed_pattern_matches_direct_product() {
        let (cfg, ch) = small_time_varying();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frame = build_frame(FrameKind::Proposed, 4, 5).unwrap();
        let sched = random_schedule(&cfg, &frame, &mut rng);
        let t0 = 1000;
        let tr = simulate_rx(&ch, &frame, &sched, &cfg, &mut rng, t0).unwrap();
        for l in 0..5 {
            for d in 0..4 {
                let n = l * 4 + d;
                let h = ch.tap_matrix(d, t0 + n as i64).unwrap();
                let p = &sched.probes[l];
                let hp = &h * nalgebra::DVector::from_column_slice(&p.tx);
                let direct = linalg::inner(&p.rx, hp.as_slice());
                assert!((tr.samples[n] - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn proposed_pattern_isolates_taps() {
        let (cfg, ch) = small_time_varying();
        let frame = build_frame(FrameKind::Proposed, 4, 5).unwrap();
        let sched = random_schedule(&cfg, &frame, &mut ChaCha8Rng::seed_from_u64(13));
        let full = simulate_rx(&ch, &frame, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(0), 0).unwrap();
        for keep in 0..4 {
            let mut only = ch.clone();
            for d in 0..4 {
                if d != keep {
                    only.tap_gain_vectors[d].iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
                }
            }
            let tr = simulate_rx(&only, &frame, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(0), 0).unwrap();
            for l in 0..5 {
                assert_eq!(tr.samples[l * 4 + keep], full.samples[l * 4 + keep]);
            }
        }
    }

    #[test]
    fn static_single_path_sample_is_probe_form_times_gain() {
        let cfg = SystemConfig {
            n_tx: 8,
            n_rx: 8,
            n_taps: 4,
            g_tx: 16,
            g_rx: 16,
            noise_var: 0.0,
            ..SystemConfig::default()
        };
        let ch = ChannelRealization::from_paths(&cfg, vec![on_grid_path(&cfg, C64::new(0.4, 0.9), 2, 3, 11)]).unwrap();
        let frame = build_frame(FrameKind::Proposed, 4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let sched = random_schedule(&cfg, &frame, &mut rng);
        let tr = simulate_rx(&ch, &frame, &sched, &cfg, &mut rng, 0).unwrap();
        for l in 0..6 {
            let p = &sched.probes[l];
            let rho = linalg::inner(&p.rx, &ch.steering_rx[0]) * linalg::inner(&ch.steering_tx[0], &p.tx);
            let want = rho * ch.tap_gain_vectors[2][0];
            assert!((tr.samples[l * 4 + 2] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn conventional_probes_hold_for_the_frame() {
        let cfg = SystemConfig::default();
        let frame = build_frame(FrameKind::Conventional, 16, 64).unwrap();
        let sched = random_schedule(&cfg, &frame, &mut ChaCha8Rng::seed_from_u64(15));
        for n in 0..frame.len() {
            assert_eq!(sched.at(n), sched.at(0));
        }
    }

    #[test]
    fn schedule_must_cover_frame() {
        let (cfg, ch) = small_time_varying();
        let frame = build_frame(FrameKind::Proposed, 4, 5).unwrap();
        let mut sched = random_schedule(&cfg, &frame, &mut ChaCha8Rng::seed_from_u64(16));
        sched.probes.pop();
        assert!(matches!(
            simulate_rx(&ch, &frame, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(0), 0),
            Err(Error::ScheduleTooShort { .. })
        ));
    }
}
