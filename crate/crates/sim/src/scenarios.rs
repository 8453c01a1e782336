//! Desk-scale scenario registry.

use dsdsim_core::eval::{Method, NmseKind, SnrConvention, SupportMode, TrialConfig};
use dsdsim_core::model::SystemConfig;
use dsdsim_core::probing::Quantizer;

use crate::config::{KSetting, Params, RunConfig};
use crate::experiment::{ExperimentResult, ExperimentSpec, GridPoint, Report, ResultRow, StatsRow};
use crate::SimError;

/// One line of a scenario check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

type Check = fn(&ExperimentResult) -> Vec<CheckLine>;

#[derive(Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub defaults: fn() -> Params,
    pub build: fn(&Params) -> Vec<GridPoint>,
    pub check: Option<Check>,
}

fn base() -> Params {
    Params {
        seed: 1,
        trials: 100,
        snr: vec![0.0],
        speed: vec![0.0],
        paths: vec![3],
        frames: 40,
        polls: 4,
        bits: vec![2],
        horizon: 0,
        kmax: vec![KSetting::Auto],
        ls_frames: 60,
        nmse: NmseKind::Frobenius,
        snr_convention: SnrConvention::AveragedTsnr,
        quantizer: Quantizer::AsWritten,
    }
}

fn trial(p: &Params, snr: f64, speed: f64, paths: usize, bits: u32, k: KSetting) -> TrialConfig {
    TrialConfig {
        system: SystemConfig {
            aps_bits: bits,
            quantizer: p.quantizer,
            ..SystemConfig::default()
        }
        .with_speed_kmh(speed),
        paths,
        random_frames: p.frames,
        polls: p.polls,
        snr_db: snr,
        snr_convention: p.snr_convention,
        kmax: match k {
            KSetting::Auto => None,
            KSetting::Fixed(k) => Some(k),
        },
        nmse_kind: p.nmse,
        ls_frames: p.ls_frames,
        ..TrialConfig::default()
    }
}

fn point(label: String, report: Report, t: TrialConfig, speed: f64) -> GridPoint {
    GridPoint {
        label,
        snr_db: t.snr_db,
        speed_kmh: speed,
        paths: t.paths,
        report,
        trial: t,
    }
}

/// Every `(paths, speed, snr)` combination in that nesting order.
fn grid(p: &Params) -> Vec<(usize, f64, f64)> {
    let mut g = Vec::new();
    for &n in &p.paths {
        for &v in &p.speed {
            for &s in &p.snr {
                g.push((n, v, s));
            }
        }
    }
    g
}

fn fig3_defaults() -> Params {
    Params {
        trials: 200,
        snr: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
        speed: vec![0.0, 12.0, 120.0],
        ..base()
    }
}

fn fig3_build(p: &Params) -> Vec<GridPoint> {
    grid(p)
        .into_iter()
        .map(|(n, v, s)| point("fig3-desk".into(), Report::Detection, trial(p, s, v, n, p.bits[0], p.kmax[0]), v))
        .collect()
}

fn stats_at(res: &ExperimentResult, snr: f64) -> Vec<&StatsRow> {
    res.stats.iter().filter(|s| s.snr_db == snr).collect()
}

fn fig3_check(res: &ExperimentResult) -> Vec<CheckLine> {
    let at0 = stats_at(res, 0.0);
    if at0.is_empty() {
        return vec![CheckLine {
            name: "fig3-desk power ratio".into(),
            pass: false,
            detail: "0 dB is not on the SNR grid".into(),
        }];
    }
    let mut out = Vec::new();
    for s in at0 {
        out.push(CheckLine {
            name: format!("fig3-desk power ratio v={} P={}", s.speed, s.p),
            pass: s.power_ratio >= 0.97,
            detail: format!("{:.4} >= 0.97", s.power_ratio),
        });
        out.push(CheckLine {
            name: format!("fig3-desk selected taps v={} P={}", s.speed, s.p),
            pass: s.mean_taps <= 5.0,
            detail: format!("{:.2} <= 5", s.mean_taps),
        });
    }
    out
}

fn fig4_defaults() -> Params {
    Params {
        snr: vec![0.0, 4.0, 8.0, 12.0],
        ..base()
    }
}

fn fig4_build(p: &Params) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for (n, v, s) in grid(p) {
        let t = trial(p, s, v, n, p.bits[0], p.kmax[0]);
        out.push(point("fig4-desk/dsa".into(), Report::Final, t.clone(), v));
        out.push(point(
            "fig4-desk/ls".into(),
            Report::Final,
            TrialConfig {
                method: Method::Ls,
                ..t
            },
            v,
        ));
    }
    out
}

fn find_row<'a>(res: &'a ExperimentResult, label: &str, like: &ResultRow) -> Option<&'a ResultRow> {
    res.rows
        .iter()
        .find(|r| r.scenario == label && r.snr_db == like.snr_db && r.speed == like.speed && r.p == like.p)
}

/// `better` has lower mean NMSE than `worse` at every shared grid point.
fn ordering(res: &ExperimentResult, better: &str, worse: &str, min_snr: f64) -> Vec<CheckLine> {
    let mut out = Vec::new();
    for a in res.rows.iter().filter(|r| r.scenario == better && r.snr_db >= min_snr) {
        let Some(b) = find_row(res, worse, a) else { continue };
        out.push(CheckLine {
            name: format!("{better} < {worse} snr={} v={} P={}", a.snr_db, a.speed, a.p),
            pass: a.mean_nmse_db < b.mean_nmse_db,
            detail: format!("{:.2} dB vs {:.2} dB", a.mean_nmse_db, b.mean_nmse_db),
        });
    }
    if out.is_empty() {
        out.push(CheckLine {
            name: format!("{better} < {worse}"),
            pass: false,
            detail: "no comparable grid points".into(),
        });
    }
    out
}

fn fig4_check(res: &ExperimentResult) -> Vec<CheckLine> {
    ordering(res, "fig4-desk/dsa", "fig4-desk/ls", 0.0)
}

fn fig5_defaults() -> Params {
    Params {
        snr: vec![0.0, 4.0, 8.0, 12.0],
        kmax: vec![KSetting::Auto, KSetting::Fixed(4), KSetting::Fixed(8)],
        ..base()
    }
}

fn fig5_build(p: &Params) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for (n, v, s) in grid(p) {
        for &k in &p.kmax {
            out.push(point(format!("fig5-desk/k={k}"), Report::Final, trial(p, s, v, n, p.bits[0], k), v));
        }
    }
    out
}

fn fig5_check(res: &ExperimentResult) -> Vec<CheckLine> {
    let mut out = Vec::new();
    for a in res.stats.iter().filter(|s| s.scenario == "fig5-desk/k=auto") {
        let Some(b) = res
            .stats
            .iter()
            .find(|s| s.scenario == "fig5-desk/k=8" && s.snr_db == a.snr_db && s.speed == a.speed && s.p == a.p)
        else {
            continue;
        };
        out.push(CheckLine {
            name: format!("fig5-desk frames k=8 >= k=auto snr={}", a.snr_db),
            pass: b.mean_frames >= a.mean_frames,
            detail: format!("{:.2} vs {:.2}", b.mean_frames, a.mean_frames),
        });
    }
    if out.is_empty() {
        out.push(CheckLine {
            name: "fig5-desk frames".into(),
            pass: false,
            detail: "the kmax list needs both auto and 8".into(),
        });
    }
    out
}

fn fig6_defaults() -> Params {
    Params {
        snr: vec![0.0, 4.0, 8.0, 12.0],
        speed: vec![48.0, 120.0],
        frames: 60,
        ..base()
    }
}

fn fig6_build(p: &Params) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for (n, v, s) in grid(p) {
        let t = trial(p, s, v, n, p.bits[0], p.kmax[0]);
        out.push(point("fig6-desk/abomp".into(), Report::Final, t.clone(), v));
        out.push(point(
            "fig6-desk/bomp".into(),
            Report::Final,
            TrialConfig {
                support_mode: SupportMode::Bomp,
                ..t
            },
            v,
        ));
    }
    out
}

fn fig6_check(res: &ExperimentResult) -> Vec<CheckLine> {
    ordering(res, "fig6-desk/abomp", "fig6-desk/bomp", f64::NEG_INFINITY)
}

fn tracking_defaults() -> Params {
    Params {
        snr: vec![-1.0],
        speed: vec![55.0],
        frames: 60,
        horizon: 10,
        ..base()
    }
}

fn tracking(p: &Params, label: String, n: usize, v: f64, s: f64, bits: u32) -> GridPoint {
    let t = TrialConfig {
        horizons: (0..=p.horizon).collect(),
        ..trial(p, s, v, n, bits, p.kmax[0])
    };
    point(label, Report::Tracking, t, v)
}

fn fig7_defaults() -> Params {
    Params {
        paths: vec![1, 2, 3, 4],
        ..tracking_defaults()
    }
}

fn fig7_build(p: &Params) -> Vec<GridPoint> {
    grid(p)
        .into_iter()
        .map(|(n, v, s)| tracking(p, "fig7-desk".into(), n, v, s, p.bits[0]))
        .collect()
}

/// Parses `<label>/<comp|nocomp>/h=<h>`.
fn split_tracking(row: &ResultRow) -> Option<(&str, bool, usize)> {
    let (rest, h) = row.scenario.rsplit_once("/h=")?;
    let (label, tag) = rest.rsplit_once('/')?;
    Some((label, tag == "comp", h.parse().ok()?))
}

/// Compensation helps from two frames on, and only the uncompensated curve
/// crosses -10 dB, for every tracked point.
pub fn tracking_check(res: &ExperimentResult) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let mut keys: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in &res.rows {
        if let Some((label, _, _)) = split_tracking(r) {
            let k = (label.to_string(), r.snr_db, r.speed, r.p);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    for (label, snr, speed, p) in keys {
        let mut comp = Vec::new();
        let mut raw = Vec::new();
        for r in res.rows.iter().filter(|r| r.snr_db == snr && r.speed == speed && r.p == p) {
            if let Some((l, c, h)) = split_tracking(r) {
                if l == label && h <= 10 {
                    if c { comp.push((h, r.mean_nmse_db)) } else { raw.push((h, r.mean_nmse_db)) }
                }
            }
        }
        let tag = format!("{label} snr={snr} v={speed} P={p}");
        let below = comp
            .iter()
            .filter(|(h, _)| *h >= 2)
            .all(|(h, c)| raw.iter().any(|(hr, r)| hr == h && c < r));
        out.push(CheckLine {
            name: format!("{tag} compensated below uncompensated for h >= 2"),
            pass: below && comp.iter().any(|(h, _)| *h >= 2),
            detail: format!("{} horizons", comp.len()),
        });
        let worst_raw = raw.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let worst_comp = comp.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        out.push(CheckLine {
            name: format!("{tag} uncompensated crosses -10 dB"),
            pass: worst_raw > -10.0,
            detail: format!("max {worst_raw:.2} dB"),
        });
        out.push(CheckLine {
            name: format!("{tag} compensated stays below -10 dB"),
            pass: worst_comp < -10.0,
            detail: format!("max {worst_comp:.2} dB"),
        });
    }
    if out.is_empty() {
        out.push(CheckLine {
            name: "tracking".into(),
            pass: false,
            detail: "no tracking rows".into(),
        });
    }
    out
}

fn fig8_defaults() -> Params {
    Params {
        bits: vec![1, 2, 3, 4, 5],
        ..tracking_defaults()
    }
}

fn fig8_build(p: &Params) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for (n, v, s) in grid(p) {
        for &b in &p.bits {
            out.push(tracking(p, format!("fig8-desk/b={b}"), n, v, s, b));
        }
    }
    out
}

fn fig8_check(res: &ExperimentResult) -> Vec<CheckLine> {
    let pick = |b: u32| {
        res.rows
            .iter()
            .find(|r| r.scenario == format!("fig8-desk/b={b}/comp/h=0"))
            .map(|r| r.mean_nmse_db)
    };
    match (pick(1), pick(2)) {
        (Some(one), Some(two)) => vec![CheckLine {
            name: "fig8-desk 1-bit worse than 2-bit".into(),
            pass: one > two,
            detail: format!("{one:.2} dB vs {two:.2} dB"),
        }],
        _ => vec![CheckLine {
            name: "fig8-desk 1-bit worse than 2-bit".into(),
            pass: false,
            detail: "bits must include 1 and 2".into(),
        }],
    }
}

pub fn registry() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "fig3-desk",
            description: "tap detection: selected taps and captured power vs SNR and speed",
            defaults: fig3_defaults,
            build: fig3_build,
            check: Some(fig3_check),
        },
        Scenario {
            name: "fig4-desk",
            description: "static wideband channel: doubly-sparse estimator vs ridge LS",
            defaults: fig4_defaults,
            build: fig4_build,
            check: Some(fig4_check),
        },
        Scenario {
            name: "fig5-desk",
            description: "iteration cap: NMSE and training frames for automatic, 4 and 8 iterations",
            defaults: fig5_defaults,
            build: fig5_build,
            check: Some(fig5_check),
        },
        Scenario {
            name: "fig6-desk",
            description: "time-varying channel: grouped pursuit with refinement vs plain block pursuit",
            defaults: fig6_defaults,
            build: fig6_build,
            check: Some(fig6_check),
        },
        Scenario {
            name: "fig7-desk",
            description: "tracking over future frames with and without Doppler compensation, P = 1..4",
            defaults: fig7_defaults,
            build: fig7_build,
            check: Some(tracking_check),
        },
        Scenario {
            name: "fig8-desk",
            description: "tracking over future frames vs phase-shifter resolution",
            defaults: fig8_defaults,
            build: fig8_build,
            check: Some(fig8_check),
        },
    ]
}

pub fn find(name: &str) -> Result<Scenario, SimError> {
    let all = registry();
    all.iter().find(|s| s.name == name).copied().ok_or_else(|| SimError::UnknownScenario {
        name: name.into(),
        known: all.iter().map(|s| s.name).collect::<Vec<_>>().join(", "),
    })
}

/// The experiment a resolved configuration describes.
pub fn experiment(cfg: &RunConfig) -> Result<ExperimentSpec, SimError> {
    let sc = find(&cfg.scenario)?;
    let p = &cfg.params;
    if p.bits.is_empty() || p.kmax.is_empty() {
        return Err(SimError::Usage("bits and kmax need at least one value".into()));
    }
    let spec = ExperimentSpec {
        scenario: sc.name.into(),
        points: (sc.build)(p),
        trials: p.trials,
        seed: p.seed,
    };
    // an invalid grid point is a configuration problem, not a runtime failure
    spec.validate().map_err(|e| match e {
        SimError::Core(c) => SimError::Usage(c.to_string()),
        e => e,
    })?;
    Ok(spec)
}
