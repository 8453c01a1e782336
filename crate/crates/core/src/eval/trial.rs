//! One Monte Carlo trial: channel draw, training, estimation and scoring.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ls::{ls_baseline, Observation};
use super::{nmse_at, noise_var_for_snr, BeamComponent, EstimatedChannel, NmseKind, SnrConvention, TapEstimate};
use crate::detect::{select_taps, tap_statistics, DetectorConfig, TapStats};
use crate::model::{sample_channel, ChannelRealization, SystemConfig};
use crate::probing::{build_frame, random_schedule, simulate_rx, FrameKind, ProbeSchedule, RxTrace};
use crate::recover::{abomp, group_size, iteration_bound, stack_tap_samples, AbompOptions, SensingMatrix, SupportEstimate};
use crate::track::{build_polling_plan, gain_series, wnalp, BeamEstimate, PollingPlan};
use crate::prelude::*;

/// How the per-tap angle support is recovered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    /// Grouped residual updates sized from the Doppler bound, with refinement
    /// and the overlap guard as configured.
    #[default]
    Abomp,
    /// One group, coarse grid, no guard.
    Bomp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Dsa,
    Ls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub system: SystemConfig,
    pub paths: usize,
    /// Random-probing frames `p1`.
    pub random_frames: usize,
    /// Polls `R`.
    pub polls: usize,
    /// Subframes per zero-padded frame `L`.
    pub subframes: usize,
    /// Payload `N` of the conventional frame.
    pub payload: usize,
    pub snr_db: f64,
    pub snr_convention: SnrConvention,
    /// Overrides the SNR-derived noise variance.
    pub noise_var: Option<f64>,
    pub detector: DetectorConfig,
    pub p_threshold: f64,
    pub eps: f64,
    pub tau: f64,
    /// Overrides the iteration bound.
    pub kmax: Option<usize>,
    pub support_mode: SupportMode,
    pub refine: bool,
    pub overlap_guard: bool,
    /// Evaluation instants, in frames after the end of training.
    pub horizons: Vec<usize>,
    pub nmse_kind: NmseKind,
    pub method: Method,
    pub ls_frames: usize,
    /// Defaults to `N_c` times the noise variance.
    pub ls_ridge: Option<f64>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            paths: 3,
            random_frames: 40,
            polls: 4,
            subframes: 5,
            payload: 64,
            snr_db: 0.0,
            snr_convention: SnrConvention::AveragedTsnr,
            noise_var: None,
            detector: DetectorConfig::default(),
            p_threshold: 1e-3,
            eps: 0.01,
            tau: core::f64::consts::FRAC_1_SQRT_2,
            kmax: None,
            support_mode: SupportMode::Abomp,
            refine: true,
            overlap_guard: true,
            horizons: alloc::vec![0],
            nmse_kind: NmseKind::Frobenius,
            method: Method::Dsa,
            ls_frames: 60,
            ls_ridge: None,
        }
    }
}

impl TrialConfig {
    pub fn noise_variance(&self) -> f64 {
        self.noise_var
            .unwrap_or_else(|| noise_var_for_snr(self.snr_db, self.snr_convention, self.subframes, self.payload))
    }

    /// The system configuration with the trial's noise variance.
    pub fn effective_system(&self) -> SystemConfig {
        SystemConfig {
            noise_var: self.noise_variance(),
            ..self.system.clone()
        }
    }

    /// Samples per frame; both patterns occupy `N + N_c` instants at the
    /// desk settings.
    pub fn zp_frame_len(&self) -> usize {
        self.subframes * self.system.n_taps
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.detector.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.paths == 0 || self.paths > self.system.n_taps {
            return Err(Error::InvalidPathCount {
                paths: self.paths,
                max: self.system.n_taps,
            });
        }
        if self.random_frames == 0 || self.subframes == 0 || self.payload == 0 {
            return bad("random_frames, subframes and payload must be >= 1");
        }
        if self.polls == 0 {
            return bad("polls must be >= 1");
        }
        if self.method == Method::Ls && self.ls_frames == 0 {
            return bad("ls_frames must be >= 1");
        }
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return bad("p_threshold must lie in (0, 1)");
        }
        if !(self.eps >= 0.0) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("eps must be >= 0 and tau in (0, 1]");
        }
        let nv = self.noise_variance();
        if !(nv.is_finite() && nv >= 0.0) {
            return bad("noise variance must be finite and >= 0");
        }
        Ok(())
    }
}

/// Scores of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// One entry per horizon, Doppler-compensated.
    pub nmse: Vec<f64>,
    /// One entry per horizon, gains frozen at their reference instants.
    pub nmse_uncompensated: Vec<f64>,
    pub selected_taps: usize,
    pub beams: usize,
    /// Energy share of the selected taps at instant 0.
    pub power_ratio: f64,
    pub frames_used: usize,
    pub alias_warning: bool,
    /// Some solve was regularized or a series was too short.
    pub flagged: bool,
    /// The estimator gave up; every NMSE entry is 1.
    pub failed: bool,
}

/// Outcome of the random-probing stage and tap detection alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub stats: TapStats,
    pub selected: Vec<usize>,
    pub power_ratio: f64,
}

/// Everything the DSA pipeline produced for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsaRun {
    pub noise_var: f64,
    pub stats: TapStats,
    pub selected: Vec<usize>,
    pub kmax: usize,
    pub group_size: usize,
    pub supports: Vec<SupportEstimate>,
    pub plan: Option<PollingPlan>,
    pub beams: Vec<BeamEstimate>,
    pub estimate: EstimatedChannel,
    pub steering_frames: usize,
    pub outcome: TrialOutcome,
}

fn power_ratio(ch: &ChannelRealization, selected: &[usize]) -> f64 {
    let e = ch.tap_energies(0);
    let total: f64 = e.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    selected.iter().map(|&d| e[d]).sum::<f64>() / total
}

struct RandomStage {
    traces: Vec<RxTrace>,
    schedules: Vec<ProbeSchedule>,
    stats: TapStats,
    selected: Vec<usize>,
}

fn random_stage<R: Rng + ?Sized>(ch: &ChannelRealization, cfg: &TrialConfig, sys: &SystemConfig, rng: &mut R) -> Result<RandomStage> {
    let frame = build_frame(FrameKind::Proposed, sys.n_taps, cfg.subframes)?;
    let mut traces = Vec::with_capacity(cfg.random_frames);
    let mut schedules = Vec::with_capacity(cfg.random_frames);
    for f in 0..cfg.random_frames {
        let s = random_schedule(sys, &frame, rng);
        traces.push(simulate_rx(ch, &frame, &s, sys, rng, (f * frame.len()) as i64)?);
        schedules.push(s);
    }
    let stats = tap_statistics(&traces, sys.n_taps, sys.noise_var)?;
    let selected = select_taps(&stats, &cfg.detector);
    Ok(RandomStage {
        traces,
        schedules,
        stats,
        selected,
    })
}

/// Random-probing stage and tap detection on a given channel.
pub fn run_detection<R: Rng + ?Sized>(ch: &ChannelRealization, cfg: &TrialConfig, rng: &mut R) -> Result<DetectionOutcome> {
    cfg.validate()?;
    let sys = cfg.effective_system();
    let st = random_stage(ch, cfg, &sys, rng)?;
    Ok(DetectionOutcome {
        power_ratio: power_ratio(ch, &st.selected),
        stats: st.stats,
        selected: st.selected,
    })
}

fn score(
    ch: &ChannelRealization,
    est: &EstimatedChannel,
    cfg: &TrialConfig,
    frame_len: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut comp = Vec::with_capacity(cfg.horizons.len());
    let mut raw = Vec::with_capacity(cfg.horizons.len());
    for &h in &cfg.horizons {
        let n = est.training_end + (h * frame_len) as i64;
        comp.push(nmse_at(ch, est, n, true, cfg.nmse_kind)?);
        raw.push(nmse_at(ch, est, n, false, cfg.nmse_kind)?);
    }
    Ok((comp, raw))
}

/// Full doubly-sparse pipeline on a given channel.
pub fn run_dsa_on<R: Rng + ?Sized>(ch: &ChannelRealization, cfg: &TrialConfig, rng: &mut R) -> Result<DsaRun> {
    cfg.validate()?;
    let sys = cfg.effective_system();
    let nc = sys.n_taps;
    let st = random_stage(ch, cfg, &sys, rng)?;
    let frame_len = cfg.zp_frame_len();
    let sensing = SensingMatrix::from_schedules(&sys, &st.schedules)?;
    let rows = sensing.probes.len();
    let kmax = cfg
        .kmax
        .unwrap_or_else(|| iteration_bound(st.selected.len(), nc, cfg.p_threshold));
    let opts = match cfg.support_mode {
        SupportMode::Abomp => AbompOptions {
            kmax,
            group_size: group_size(sys.max_doppler(), nc, cfg.tau, rows),
            eps: cfg.eps,
            refine: cfg.refine,
            overlap_guard: cfg.overlap_guard,
        },
        SupportMode::Bomp => AbompOptions {
            kmax,
            group_size: rows,
            eps: cfg.eps,
            refine: false,
            overlap_guard: false,
        },
    };
    let mut flagged = false;
    let mut supports = Vec::with_capacity(st.selected.len());
    for &d in &st.selected {
        let meas = stack_tap_samples(&st.traces, nc, d)?;
        let s = abomp(&meas, &sensing, &opts, &[])?;
        flagged |= s.flagged;
        supports.push(s);
    }

    let t_steer = (cfg.random_frames * frame_len) as i64;
    let mut estimate = EstimatedChannel::empty(sys.n_tx, sys.n_rx, nc, t_steer);
    let mut beams = Vec::new();
    let mut steering_frames = 0;
    let mut alias_warning = false;
    let plan = match build_polling_plan(&sys, &supports, cfg.polls) {
        Ok(plan) => {
            steering_frames = plan.subframes().div_ceil(cfg.subframes);
            let frame = build_frame(FrameKind::Proposed, nc, cfg.subframes)?;
            let sched = plan.schedule(steering_frames * cfg.subframes);
            let mut samples = Vec::with_capacity(steering_frames * frame_len);
            for f in 0..steering_frames {
                let part = ProbeSchedule {
                    probes: sched.probes[f * cfg.subframes..(f + 1) * cfg.subframes].to_vec(),
                    ..sched.clone()
                };
                let t0 = t_steer + (f * frame_len) as i64;
                samples.extend(simulate_rx(ch, &frame, &part, &sys, rng, t0)?.samples);
            }
            for (d, _) in &plan.native {
                let mut comps = Vec::new();
                for series in gain_series(&samples, &plan, *d, t_steer)? {
                    let b = wnalp(&series);
                    flagged |= b.flagged;
                    let pb = &plan.beams[b.beam];
                    comps.push(BeamComponent {
                        aoa_freq: pb.aoa_freq,
                        aod_freq: pb.aod_freq,
                        gain: b.gain,
                        doppler: b.doppler,
                        reference_instant: b.reference_instant,
                    });
                    beams.push(b);
                }
                estimate.taps[*d] = TapEstimate::Beams(comps);
            }
            alias_warning = sys.max_doppler() * plan.spacing() as f64 > FRAC_PI_2;
            Some(plan)
        }
        Err(Error::EmptySupport) => None,
        Err(e) => return Err(e),
    };
    estimate.training_end = t_steer + (steering_frames * frame_len) as i64;
    let failed = plan.is_none();
    let (nmse, nmse_uncompensated) = if failed {
        (alloc::vec![1.0; cfg.horizons.len()], alloc::vec![1.0; cfg.horizons.len()])
    } else {
        score(ch, &estimate, cfg, frame_len)?
    };
    let outcome = TrialOutcome {
        nmse,
        nmse_uncompensated,
        selected_taps: st.selected.len(),
        beams: plan.as_ref().map_or(0, |p| p.period()),
        power_ratio: power_ratio(ch, &st.selected),
        frames_used: cfg.random_frames + steering_frames,
        alias_warning,
        flagged,
        failed,
    };
    Ok(DsaRun {
        noise_var: sys.noise_var,
        stats: st.stats,
        selected: st.selected,
        kmax,
        group_size: opts.group_size,
        supports,
        plan,
        beams,
        estimate,
        steering_frames,
        outcome,
    })
}

/// Ridge LS over conventional frames, one random probe pair per frame.
pub fn run_ls_on<R: Rng + ?Sized>(ch: &ChannelRealization, cfg: &TrialConfig, rng: &mut R) -> Result<TrialOutcome> {
    cfg.validate()?;
    let sys = cfg.effective_system();
    let frame = build_frame(FrameKind::Conventional, sys.n_taps, cfg.payload)?;
    let mut data = Vec::with_capacity(cfg.ls_frames);
    for f in 0..cfg.ls_frames {
        let s = random_schedule(&sys, &frame, rng);
        let t = simulate_rx(ch, &frame, &s, &sys, rng, (f * frame.len()) as i64)?;
        data.push((t, s));
    }
    let obs: Vec<Observation<'_>> = data
        .iter()
        .map(|(t, s)| Observation {
            trace: t,
            frame: &frame,
            schedule: s,
        })
        .collect();
    let ridge = cfg.ls_ridge.unwrap_or(sys.n_taps as f64 * sys.noise_var);
    let est = ls_baseline(&obs, &sys, ridge)?;
    let (nmse, nmse_uncompensated) = score(ch, &est, cfg, frame.len())?;
    Ok(TrialOutcome {
        nmse,
        nmse_uncompensated,
        selected_taps: sys.n_taps,
        beams: 0,
        power_ratio: 1.0,
        frames_used: cfg.ls_frames,
        alias_warning: false,
        flagged: false,
        failed: false,
    })
}

/// Draws a channel and runs the configured method on it.
pub fn run_trial<R: Rng + ?Sized>(cfg: &TrialConfig, rng: &mut R) -> Result<TrialOutcome> {
    cfg.validate()?;
    let ch = sample_channel(&cfg.effective_system(), cfg.paths, rng)?;
    match cfg.method {
        Method::Dsa => Ok(run_dsa_on(&ch, cfg, rng)?.outcome),
        Method::Ls => run_ls_on(&ch, cfg, rng),
    }
}
