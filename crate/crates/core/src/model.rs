//! Doubly-selective geometric channel model.
//!
//! Angles are carried internally as normalized spatial frequencies
//! `y = sin(angle) / 2 (mod 1)`, the argument of the ULA response
//! [`steering_vector`]. Physical angles only appear when a channel is drawn.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::probing::Quantizer;
use crate::prelude::*;

/// Raised-cosine pulse support, in symbol periods on each side of the peak.
pub const PULSE_SPAN: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Maximum number of delay taps.
    pub n_taps: usize,
    pub g_tx: usize,
    pub g_rx: usize,
    /// Phase-shifter resolution in bits.
    pub aps_bits: u32,
    pub carrier_hz: f64,
    pub symbol_s: f64,
    /// Maximum relative speed in m/s.
    pub vmax_mps: f64,
    pub light_mps: f64,
    /// Receiver noise variance. Zero is accepted for noiseless oracles.
    pub noise_var: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub quantizer: Quantizer,
}

impl Default for SystemConfig {
    /// 60 GHz carrier, 32x32 ULAs, 64-point dictionaries, 16 taps, 50 ns
    /// symbols, 2-bit phase shifters.
    fn default() -> Self {
        Self {
            n_tx: 32,
            n_rx: 32,
            n_taps: 16,
            g_tx: 64,
            g_rx: 64,
            aps_bits: 2,
            carrier_hz: 60e9,
            symbol_s: 50e-9,
            vmax_mps: 0.0,
            light_mps: 299_792_458.0,
            noise_var: 1.0,
            rng_seed: 0,
            quantizer: Quantizer::AsWritten,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_tx == 0 || self.n_rx == 0 || self.n_taps == 0 {
            return bad("antenna and tap counts must be >= 1");
        }
        if self.g_tx < self.n_tx || self.g_rx < self.n_rx {
            return bad("dictionary sizes must be at least the antenna counts");
        }
        if self.aps_bits == 0 || self.aps_bits > 30 {
            return bad("aps_bits must lie in 1..=30");
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_var must be finite and non-negative, got {}",
                self.noise_var
            )));
        }
        if !(self.symbol_s > 0.0) || !(self.light_mps > 0.0) || !(self.vmax_mps >= 0.0) {
            return bad("symbol period and light speed must be positive, speed non-negative");
        }
        Ok(())
    }

    /// Largest Doppler shift magnitude in rad/sample, `2 pi f_c v T_s / c`.
    pub fn max_doppler(&self) -> f64 {
        2.0 * PI * self.carrier_hz * self.vmax_mps * self.symbol_s / self.light_mps
    }

    /// Doppler shift of a path arriving at `aoa_rad`.
    pub fn doppler_for(&self, aoa_rad: f64) -> f64 {
        self.max_doppler() * aoa_rad.sin()
    }

    pub fn with_speed_kmh(mut self, kmh: f64) -> Self {
        self.vmax_mps = kmh / 3.6;
        self
    }
}

/// Wraps a real number into `[0, 1)`.
pub fn wrap_unit(y: f64) -> f64 {
    let w = y - y.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Normalized spatial frequency of a half-wavelength ULA at `angle_rad`.
pub fn spatial_freq(angle_rad: f64) -> f64 {
    wrap_unit(angle_rad.sin() / 2.0)
}

/// Array response generating function: entry `k` is `exp(j 2 pi k y) / sqrt(n)`.
pub fn steering_vector(n: usize, y: f64) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            // reduce k*y first so large k stays accurate
            let ph = 2.0 * PI * wrap_unit(k as f64 * y);
            C64::new(scale * ph.cos(), scale * ph.sin())
        })
        .collect()
}

/// Raised-cosine pulse with roll-off 1, `t` in symbol periods, truncated to
/// `|t| <= PULSE_SPAN`.
pub fn raised_cosine(t: f64) -> f64 {
    if t.abs() > PULSE_SPAN {
        return 0.0;
    }
    if (t.abs() - 0.5).abs() < 1e-12 {
        // limit at the removable singularity 2|t| = 1
        return PI / 4.0 * sinc(0.5);
    }
    sinc(t) * (PI * t).cos() / (1.0 - 4.0 * t * t)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Angular dictionary: `size` steering vectors at frequencies `i / size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    n: usize,
    size: usize,
    /// Column-major, `n x size`.
    data: Vec<C64>,
}

impl Dictionary {
    pub fn antennas(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn freq(&self, i: usize) -> f64 {
        i as f64 / self.size as f64
    }

    pub fn column(&self, i: usize) -> &[C64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_matrix(&self) -> CMatrix {
        DMatrix::from_column_slice(self.n, self.size, &self.data)
    }

    /// `D^H p`: inner products of every column with `p`.
    pub fn project(&self, p: &[C64]) -> Vec<C64> {
        (0..self.size).map(|i| linalg::inner(self.column(i), p)).collect()
    }
}

pub fn build_dictionary(n: usize, g: usize) -> Result<Dictionary> {
    if n == 0 || g < n {
        return Err(Error::InvalidConfig(format!(
            "dictionary needs 1 <= n <= g, got n={n} g={g}"
        )));
    }
    let mut data = Vec::with_capacity(n * g);
    for i in 0..g {
        data.extend(steering_vector(n, i as f64 / g as f64));
    }
    Ok(Dictionary { n, size: g, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: C64,
    pub delay_s: f64,
    pub aoa_rad: f64,
    pub aod_rad: f64,
    pub doppler_rad_per_sample: f64,
}

impl PathParams {
    pub fn aoa_freq(&self) -> f64 {
        spatial_freq(self.aoa_rad)
    }

    pub fn aod_freq(&self) -> f64 {
        spatial_freq(self.aod_rad)
    }
}

/// Physical angle in `[-pi/2, pi/2]` whose spatial frequency is `y`.
pub fn angle_for_freq(y: f64) -> f64 {
    let mut s = wrap_unit(y);
    if s >= 0.5 {
        s -= 1.0;
    }
    (2.0 * s).clamp(-1.0, 1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_taps: usize,
    pub paths: Vec<PathParams>,
    /// `tap_gain_vectors[d][p] = sqrt(NtNr/P) alpha_p h(d Ts - tau_p)`.
    pub tap_gain_vectors: Vec<Vec<C64>>,
    pub steering_tx: Vec<Vec<C64>>,
    pub steering_rx: Vec<Vec<C64>>,
}

impl ChannelRealization {
    /// Assembles a realization from explicit paths.
    pub fn from_paths(cfg: &SystemConfig, paths: Vec<PathParams>) -> Result<Self> {
        cfg.validate()?;
        let p = paths.len();
        if p == 0 {
            return Err(Error::InvalidPathCount {
                paths: 0,
                max: cfg.n_taps,
            });
        }
        let scale = ((cfg.n_tx * cfg.n_rx) as f64 / p as f64).sqrt();
        let tap_gain_vectors = (0..cfg.n_taps)
            .map(|d| {
                paths
                    .iter()
                    .map(|pp| pp.gain * (scale * raised_cosine(d as f64 - pp.delay_s / cfg.symbol_s)))
                    .collect()
            })
            .collect();
        let steering_tx = paths
            .iter()
            .map(|pp| steering_vector(cfg.n_tx, pp.aod_freq()))
            .collect();
        let steering_rx = paths
            .iter()
            .map(|pp| steering_vector(cfg.n_rx, pp.aoa_freq()))
            .collect();
        Ok(Self {
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
            n_taps: cfg.n_taps,
            paths,
            tap_gain_vectors,
            steering_tx,
            steering_rx,
        })
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// Gain of path `p` on tap `d` at instant `n`.
    #[inline]
    pub fn gain(&self, d: usize, p: usize, n: i64) -> C64 {
        let w = self.paths[p].doppler_rad_per_sample * n as f64;
        self.tap_gain_vectors[d][p] * C64::new(w.cos(), w.sin())
    }

    pub fn tap_matrix(&self, d: usize, n: i64) -> Result<CMatrix> {
        if d >= self.n_taps {
            return Err(Error::TapOutOfRange {
                tap: d,
                n_taps: self.n_taps,
            });
        }
        let mut h = DMatrix::zeros(self.n_rx, self.n_tx);
        for p in 0..self.paths.len() {
            let g = self.gain(d, p, n);
            if g == C64::new(0.0, 0.0) {
                continue;
            }
            let ar = &self.steering_rx[p];
            let at = &self.steering_tx[p];
            for c in 0..self.n_tx {
                let w = g * at[c].conj();
                for r in 0..self.n_rx {
                    h[(r, c)] += ar[r] * w;
                }
            }
        }
        Ok(h)
    }

    pub fn tap_matrices(&self, n: i64) -> Vec<CMatrix> {
        (0..self.n_taps)
            .map(|d| self.tap_matrix(d, n).expect("tap index in range"))
            .collect()
    }

    /// `||H_d(n)||_F^2` for every tap.
    pub fn tap_energies(&self, n: i64) -> Vec<f64> {
        self.tap_matrices(n)
            .iter()
            .map(|m| m.iter().map(|x| x.norm_sqr()).sum())
            .collect()
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    complex_normal(rng) * var.sqrt()
}

/// Draws a `p`-path channel: CN(0,1) gains, delays uniform on
/// `[0, (N_c - 1) T_s)`, AoA/AoD uniform on `[0, 2 pi)`.
pub fn sample_channel<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    p: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    if p == 0 || p > cfg.n_taps {
        return Err(Error::InvalidPathCount {
            paths: p,
            max: cfg.n_taps,
        });
    }
    let span = (cfg.n_taps - 1) as f64 * cfg.symbol_s;
    let paths = (0..p)
        .map(|_| {
            let gain = complex_normal(rng);
            let delay_s = rng.random::<f64>() * span;
            let aoa_rad = rng.random::<f64>() * 2.0 * PI;
            let aod_rad = rng.random::<f64>() * 2.0 * PI;
            PathParams {
                gain,
                delay_s,
                aoa_rad,
                aod_rad,
                doppler_rad_per_sample: cfg.doppler_for(aoa_rad),
            }
        })
        .collect();
    ChannelRealization::from_paths(cfg, paths)
}

/// Beamspace coefficients `Hb` (`G_r x G_t`) with `D_r Hb D_t^H = tap`.
///
/// The dictionaries are overcomplete, so the representation is not unique.
/// This returns a sparse synthesis: atoms are picked greedily with a
/// least-squares refit until the residual vanishes, which recovers exactly
/// one coefficient per on-grid path. Whatever a bounded number of atoms
/// cannot explain (off-grid leakage) is added as the minimum-norm synthesis
/// of the remainder, so the round trip is always exact.
pub fn beamspace_of(cfg: &SystemConfig, tap: &CMatrix) -> Result<CMatrix> {
    if tap.shape() != (cfg.n_rx, cfg.n_tx) {
        return Err(Error::ShapeMismatch {
            expected: (cfg.n_rx, cfg.n_tx),
            got: tap.shape(),
        });
    }
    let dr = build_dictionary(cfg.n_rx, cfg.g_rx)?.to_matrix();
    let dt = build_dictionary(cfg.n_tx, cfg.g_tx)?.to_matrix();
    let mut out = DMatrix::zeros(cfg.g_rx, cfg.g_tx);
    let total = linalg::fro(tap);
    if total == 0.0 {
        return Ok(out);
    }
    let max_atoms = 16.min(cfg.n_rx * cfg.n_tx);
    let atom = |m: usize, n: usize| -> Vec<C64> {
        // vec(a_r a_t^H), column-major
        let mut v = Vec::with_capacity(cfg.n_rx * cfg.n_tx);
        for c in 0..cfg.n_tx {
            for r in 0..cfg.n_rx {
                v.push(dr[(r, m)] * dt[(c, n)].conj());
            }
        }
        v
    };
    let target: Vec<C64> = tap.iter().copied().collect();
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut coef: Vec<C64> = Vec::new();
    let mut resid = tap.clone();
    while picked.len() < max_atoms && linalg::fro(&resid) > 1e-12 * total {
        let corr = dr.adjoint() * &resid * &dt;
        let mut best = (0, 0);
        let mut best_v = -1.0;
        for n in 0..cfg.g_tx {
            for m in 0..cfg.g_rx {
                if picked.contains(&(m, n)) {
                    continue;
                }
                let v = corr[(m, n)].norm();
                if v > best_v {
                    best_v = v;
                    best = (m, n);
                }
            }
        }
        picked.push(best);
        cols.push(atom(best.0, best.1));
        let a = linalg::from_columns(target.len(), &cols);
        coef = linalg::lstsq(&a, &target).0;
        let fit = &a * nalgebra::DVector::from_column_slice(&coef);
        resid = DMatrix::from_fn(cfg.n_rx, cfg.n_tx, |r, c| {
            tap[(r, c)] - fit[c * cfg.n_rx + r]
        });
    }
    for (&(m, n), &c) in picked.iter().zip(&coef) {
        out[(m, n)] += c;
    }
    if linalg::fro(&resid) > 1e-12 * total {
        // D D^H = (G/N) I for G >= N, so this is the minimum-norm synthesis
        let scale = (cfg.n_rx as f64 / cfg.g_rx as f64) * (cfg.n_tx as f64 / cfg.g_tx as f64);
        out += dr.adjoint() * &resid * &dt * C64::new(scale, 0.0);
    }
    Ok(out)
}

/// `D_r^H H D_t`, the matched-filter view of a tap. Diagnostic only: the
/// dictionaries are overcomplete, so this is not a synthesis representation.
pub fn beamspace_analysis(cfg: &SystemConfig, tap: &CMatrix) -> Result<CMatrix> {
    if tap.shape() != (cfg.n_rx, cfg.n_tx) {
        return Err(Error::ShapeMismatch {
            expected: (cfg.n_rx, cfg.n_tx),
            got: tap.shape(),
        });
    }
    let dr = build_dictionary(cfg.n_rx, cfg.g_rx)?.to_matrix();
    let dt = build_dictionary(cfg.n_tx, cfg.g_tx)?.to_matrix();
    Ok(dr.adjoint() * tap * dt)
}

/// `D_r Hb D_t^H`.
pub fn synthesize(cfg: &SystemConfig, beamspace: &CMatrix) -> Result<CMatrix> {
    if beamspace.shape() != (cfg.g_rx, cfg.g_tx) {
        return Err(Error::ShapeMismatch {
            expected: (cfg.g_rx, cfg.g_tx),
            got: beamspace.shape(),
        });
    }
    let dr = build_dictionary(cfg.n_rx, cfg.g_rx)?.to_matrix();
    let dt = build_dictionary(cfg.n_tx, cfg.g_tx)?.to_matrix();
    Ok(&dr * beamspace * dt.adjoint())
}

/// Path whose AoA/AoD sit exactly on dictionary grid points `m / G_r`,
/// `n / G_t` and whose delay is an integer number of symbols.
pub fn on_grid_path(cfg: &SystemConfig, gain: C64, tap: usize, m_rx: usize, n_tx: usize) -> PathParams {
    let aoa_rad = angle_for_freq(m_rx as f64 / cfg.g_rx as f64);
    PathParams {
        gain,
        delay_s: tap as f64 * cfg.symbol_s,
        aoa_rad,
        aod_rad: angle_for_freq(n_tx as f64 / cfg.g_tx as f64),
        doppler_rad_per_sample: cfg.doppler_for(aoa_rad),
    }
}

/// Zero-initialised `n_rx x n_tx` tap matrices.
pub fn zero_taps(cfg: &SystemConfig) -> Vec<CMatrix> {
    vec![DMatrix::zeros(cfg.n_rx, cfg.n_tx); cfg.n_taps]
}
