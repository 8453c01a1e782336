//! CSV/JSON artifacts and the reproducibility manifest.

use std::fs;
use std::path::{Path, PathBuf};

use dsdsim_core::detect::TapStats;
use dsdsim_core::eval::DsaRun;
use dsdsim_core::track::BeamEstimate;
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::experiment::{ExperimentResult, GridPoint};
use crate::SimError;

/// Header of the main result table.
pub const RESULT_HEADER: &str = "scenario,snr_db,speed,p,trial_count,mean_nmse_db,ci_lo,ci_hi";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |e| SimError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Serializes `rows` as CSV with a header derived from their fields.
pub fn csv_bytes<T: Serialize>(rows: &[T], path: &Path) -> Result<Vec<u8>, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.into_inner().map_err(|e| SimError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Per-tap statistics of one inspected trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapStatsRow {
    pub scenario: String,
    pub snr_db: f64,
    pub speed: f64,
    pub p: usize,
    pub tap: usize,
    pub ts: f64,
    pub nts: f64,
    pub selected: bool,
    pub subframes: usize,
}

/// Gain and Doppler of one beam of an inspected trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamRow {
    pub scenario: String,
    pub snr_db: f64,
    pub speed: f64,
    pub p: usize,
    pub tap: usize,
    pub beam: usize,
    pub aoa_freq: f64,
    pub aod_freq: f64,
    pub gain_re: f64,
    pub gain_im: f64,
    pub doppler: f64,
    pub reference_instant: f64,
    pub flagged: bool,
}

pub fn tap_rows(point: &GridPoint, stats: &TapStats, selected: &[usize]) -> Vec<TapStatsRow> {
    (0..stats.ts.len())
        .map(|d| TapStatsRow {
            scenario: point.label.clone(),
            snr_db: point.snr_db,
            speed: point.speed_kmh,
            p: point.paths,
            tap: d,
            ts: stats.ts[d],
            nts: stats.nts[d],
            selected: selected.contains(&d),
            subframes: stats.l_used,
        })
        .collect()
}

pub fn beam_rows(point: &GridPoint, run: &DsaRun) -> Vec<BeamRow> {
    let freqs = |b: &BeamEstimate| {
        run.plan
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |p| (p.beams[b.beam].aoa_freq, p.beams[b.beam].aod_freq))
    };
    run.beams
        .iter()
        .map(|b| {
            let (aoa, aod) = freqs(b);
            BeamRow {
                scenario: point.label.clone(),
                snr_db: point.snr_db,
                speed: point.speed_kmh,
                p: point.paths,
                tap: b.tap,
                beam: b.beam,
                aoa_freq: aoa,
                aod_freq: aod,
                gain_re: b.gain.re,
                gain_im: b.gain.im,
                doppler: b.doppler,
                reference_instant: b.reference_instant,
                flagged: b.flagged,
            }
        })
        .collect()
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub trials: usize,
    pub rng: String,
    /// Resolved configuration, in config-file key order.
    pub config: Vec<(String, String)>,
    /// Config file holding the same settings.
    pub config_file: String,
    pub rerun: String,
    pub artifacts: Vec<String>,
}

/// Inspected trials for the detail tables.
#[derive(Debug, Clone, Default)]
pub struct Details {
    pub taps: Vec<TapStatsRow>,
    pub beams: Vec<BeamRow>,
}

/// Writes the result tables, detail tables, config echo and manifest into
/// `cfg.out`. Returns the written paths, manifest last.
pub fn write_artifacts(cfg: &RunConfig, res: &ExperimentResult, details: &Details) -> Result<Vec<PathBuf>, SimError> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = &res.scenario;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if cfg.formats.contains(&Format::Csv) {
        let p = dir.join(format!("{stem}.csv"));
        files.push((p.clone(), csv_bytes(&res.rows, &p)?));
        let p = dir.join(format!("{stem}_stats.csv"));
        files.push((p.clone(), csv_bytes(&res.stats, &p)?));
        if !details.taps.is_empty() {
            let p = dir.join(format!("{stem}_tapstats.csv"));
            files.push((p.clone(), csv_bytes(&details.taps, &p)?));
        }
        if !details.beams.is_empty() {
            let p = dir.join(format!("{stem}_beams.csv"));
            files.push((p.clone(), csv_bytes(&details.beams, &p)?));
        }
    }
    if cfg.formats.contains(&Format::Json) {
        let p = dir.join(format!("{stem}.json"));
        let body = serde_json::json!({
            "scenario": res.scenario,
            "seed": res.seed,
            "rows": res.rows,
            "stats": res.stats,
            "tap_stats": details.taps,
            "beams": details.beams,
        });
        let mut bytes = serde_json::to_vec_pretty(&body).map_err(|e| SimError::Io {
            path: p.clone(),
            source: std::io::Error::other(e),
        })?;
        bytes.push(b'\n');
        files.push((p, bytes));
    }
    let conf_name = format!("{stem}.conf");
    files.push((dir.join(&conf_name), cfg.to_file_text().into_bytes()));

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: res.scenario.clone(),
        seed: res.seed,
        trials: cfg.params.trials,
        rng: "ChaCha8Rng::seed_from_u64(seed ^ trial_index)".into(),
        config: cfg.to_pairs(),
        rerun: format!("dsdsim run --config {}", dir.join(&conf_name).display()),
        config_file: conf_name,
        artifacts: files
            .iter()
            .map(|(p, _)| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let mp = dir.join(format!("{stem}_manifest.json"));
    let mut mbytes = serde_json::to_vec_pretty(&manifest).map_err(|e| SimError::Io {
        path: mp.clone(),
        source: std::io::Error::other(e),
    })?;
    mbytes.push(b'\n');
    files.push((mp, mbytes));

    let mut written = Vec::with_capacity(files.len());
    for (p, bytes) in files {
        fs::write(&p, bytes).map_err(io_err(&p))?;
        written.push(p);
    }
    Ok(written)
}
