//! Monte Carlo sweeps.
//!
//! Trial `t` of every grid point draws from `ChaCha8Rng::seed_from_u64(seed ^ t)`,
//! so all points of a sweep see the same channels (common random numbers)
//! and the result does not depend on the number of worker threads.

use dsdsim_core::eval::{db, run_detection, run_dsa_on, run_trial, DsaRun, Method, TrialConfig, TrialOutcome};
use dsdsim_core::model::sample_channel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Which rows a grid point contributes to the result table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Report {
    /// Compensated NMSE at the first horizon.
    Final,
    /// Compensated and uncompensated NMSE at every horizon.
    Tracking,
    /// Random-probing stage and tap detection only; no NMSE.
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    pub snr_db: f64,
    pub speed_kmh: f64,
    pub paths: usize,
    pub report: Report,
    pub trial: TrialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub points: Vec<GridPoint>,
    pub trials: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return Err(SimError::Usage("trials must be >= 1".into()));
        }
        if self.points.is_empty() {
            return Err(SimError::Usage("the grid is empty".into()));
        }
        for p in &self.points {
            p.trial.validate()?;
        }
        Ok(())
    }
}

/// One line of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub snr_db: f64,
    pub speed: f64,
    pub p: usize,
    pub trial_count: usize,
    pub mean_nmse_db: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-point diagnostics that do not fit the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub scenario: String,
    pub snr_db: f64,
    pub speed: f64,
    pub p: usize,
    pub trial_count: usize,
    pub mean_taps: f64,
    pub mean_beams: f64,
    pub power_ratio: f64,
    pub mean_frames: f64,
    pub failures: usize,
    pub flagged: usize,
    pub alias_warnings: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub stats: Vec<StatsRow>,
}

/// Mean and normal-approximation 95% interval of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            lo: f64::NAN,
            hi: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        lo: mean - half,
        hi: mean + half,
    }
}

/// The RNG of trial `t`.
pub fn trial_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ t as u64)
}

/// Runs one trial of a point; errors become failed outcomes.
fn one_trial(point: &GridPoint, seed: u64, t: usize) -> (TrialOutcome, bool) {
    let mut rng = trial_rng(seed, t);
    let res = match point.report {
        Report::Detection => sample_channel(&point.trial.effective_system(), point.trial.paths, &mut rng)
            .and_then(|ch| run_detection(&ch, &point.trial, &mut rng))
            .map(|d| TrialOutcome {
                nmse: Vec::new(),
                nmse_uncompensated: Vec::new(),
                selected_taps: d.selected.len(),
                beams: 0,
                power_ratio: d.power_ratio,
                frames_used: point.trial.random_frames,
                alias_warning: false,
                flagged: false,
                failed: false,
            }),
        _ => run_trial(&point.trial, &mut rng),
    };
    match res {
        Ok(o) => (o, false),
        Err(_) => {
            let h = point.trial.horizons.len();
            (
                TrialOutcome {
                    nmse: vec![1.0; h],
                    nmse_uncompensated: vec![1.0; h],
                    selected_taps: 0,
                    beams: 0,
                    power_ratio: 0.0,
                    frames_used: 0,
                    alias_warning: false,
                    flagged: true,
                    failed: true,
                },
                true,
            )
        }
    }
}

/// All trials of one point, in trial order.
pub fn run_point(point: &GridPoint, trials: usize, seed: u64) -> Vec<(TrialOutcome, bool)> {
    (0..trials).into_par_iter().map(|t| one_trial(point, seed, t)).collect()
}

fn row(point: &GridPoint, label: String, trials: usize, values: &[f64]) -> ResultRow {
    let s = summarize(values);
    ResultRow {
        scenario: label,
        snr_db: point.snr_db,
        speed: point.speed_kmh,
        p: point.paths,
        trial_count: trials,
        mean_nmse_db: db(s.mean),
        ci_lo: if s.lo > 0.0 { db(s.lo) } else { f64::NEG_INFINITY },
        ci_hi: db(s.hi),
    }
}

fn aggregate(point: &GridPoint, outcomes: &[(TrialOutcome, bool)]) -> (Vec<ResultRow>, StatsRow) {
    let n = outcomes.len();
    let mean = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(|(o, _)| f(o)).sum::<f64>() / n as f64;
    let count = |f: &dyn Fn(&(TrialOutcome, bool)) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let stats = StatsRow {
        scenario: point.label.clone(),
        snr_db: point.snr_db,
        speed: point.speed_kmh,
        p: point.paths,
        trial_count: n,
        mean_taps: mean(&|o| o.selected_taps as f64),
        mean_beams: mean(&|o| o.beams as f64),
        power_ratio: mean(&|o| o.power_ratio),
        mean_frames: mean(&|o| o.frames_used as f64),
        failures: count(&|(o, _)| o.failed),
        flagged: count(&|(o, _)| o.flagged),
        alias_warnings: count(&|(o, _)| o.alias_warning),
        errors: count(&|(_, e)| *e),
    };
    let column = |h: usize, comp: bool| -> Vec<f64> {
        outcomes
            .iter()
            .map(|(o, _)| if comp { o.nmse[h] } else { o.nmse_uncompensated[h] })
            .collect()
    };
    let rows = match point.report {
        Report::Detection => vec![row(point, point.label.clone(), n, &[])],
        Report::Final => vec![row(point, point.label.clone(), n, &column(0, true))],
        Report::Tracking => {
            let mut rows = Vec::new();
            for comp in [true, false] {
                for (k, h) in point.trial.horizons.iter().enumerate() {
                    let tag = if comp { "comp" } else { "nocomp" };
                    rows.push(row(point, format!("{}/{tag}/h={h}", point.label), n, &column(k, comp)));
                }
            }
            rows
        }
    };
    (rows, stats)
}

/// Runs every point of `spec` on a pool of `jobs` threads.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentResult, SimError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for point in &spec.points {
        let outcomes = pool.install(|| run_point(point, spec.trials, spec.seed));
        let (r, s) = aggregate(point, &outcomes);
        rows.extend(r);
        stats.push(s);
    }
    Ok(ExperimentResult {
        scenario: spec.scenario.clone(),
        seed: spec.seed,
        rows,
        stats,
    })
}

/// Detailed pipeline output of trial 0 of a DSA point, for the per-tap and
/// per-beam tables. `None` for points that do not run the DSA pipeline.
pub fn inspect(point: &GridPoint, seed: u64) -> Result<Option<DsaRun>, SimError> {
    if point.report == Report::Detection || point.trial.method != Method::Dsa {
        return Ok(None);
    }
    let mut rng = trial_rng(seed, 0);
    let ch = sample_channel(&point.trial.effective_system(), point.trial.paths, &mut rng)?;
    Ok(Some(run_dsa_on(&ch, &point.trial, &mut rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_sample_has_zero_width() {
        let s = summarize(&[0.25; 10]);
        assert_eq!((s.mean, s.lo, s.hi), (0.25, 0.25, 0.25));
    }

    #[test]
    fn summary_interval_matches_closed_form() {
        // mean 2.5, sample variance 5/3, n = 4
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        let half = 1.96 * (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.hi - 2.5 - half).abs() < 1e-12);
        assert!((2.5 - s.lo - half).abs() < 1e-12);
    }

    #[test]
    fn empty_summary_is_nan() {
        assert!(summarize(&[]).mean.is_nan());
    }
}
