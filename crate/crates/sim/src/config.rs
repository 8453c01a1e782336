//! Run configuration: flat `key = value` files, range lists and precedence.
//!
//! Values are resolved in order registry defaults, `DSDSIM_SEED`, config
//! file, command-line flags; later sources win.

use std::fmt;
use std::path::PathBuf;

use dsdsim_core::eval::{NmseKind, SnrConvention};
use dsdsim_core::probing::Quantizer;
use serde::{Deserialize, Serialize};

use crate::scenarios;
use crate::SimError;

/// Every key accepted in a config file or via `--set`.
pub const KEYS: &[&str] = &[
    "scenario",
    "seed",
    "out",
    "jobs",
    "format",
    "trials",
    "snr",
    "speed",
    "paths",
    "frames",
    "polls",
    "bits",
    "horizon",
    "kmax",
    "ls_frames",
    "nmse",
    "snr_convention",
    "quantizer",
];

/// Iteration cap of the support recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KSetting {
    /// From the tap count and the probability threshold.
    Auto,
    Fixed(usize),
}

impl fmt::Display for KSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KSetting::Auto => f.write_str("auto"),
            KSetting::Fixed(k) => write!(f, "{k}"),
        }
    }
}

/// Scenario parameters; which of them matter depends on the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub seed: u64,
    pub trials: usize,
    /// dB
    pub snr: Vec<f64>,
    /// km/h
    pub speed: Vec<f64>,
    pub paths: Vec<usize>,
    /// Random-probing frames.
    pub frames: usize,
    pub polls: usize,
    pub bits: Vec<u32>,
    /// Last evaluation horizon, in frames after training.
    pub horizon: usize,
    pub kmax: Vec<KSetting>,
    pub ls_frames: usize,
    pub nmse: NmseKind,
    pub snr_convention: SnrConvention,
    pub quantizer: Quantizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: String,
    pub params: Params,
    pub out: PathBuf,
    pub jobs: usize,
    pub formats: Vec<Format>,
}

fn bad(key: &str, value: &str, why: impl fmt::Display) -> SimError {
    SimError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: why.to_string(),
    }
}

/// Expands `a:step:b` (inclusive) and `a:b` (step 1) items of a comma list.
pub fn parse_range(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        if item.is_empty() {
            return Err("empty list item".into());
        }
        let parts: Vec<f64> = item
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
            .collect::<Result<_, _>>()?;
        if parts.iter().any(|v| !v.is_finite()) {
            return Err("values must be finite".into());
        }
        let (start, step, stop) = match parts[..] {
            [v] => {
                out.push(v);
                continue;
            }
            [a, b] => (a, 1.0, b),
            [a, s, b] => (a, s, b),
            _ => return Err(format!("'{item}' has more than three fields")),
        };
        if step <= 0.0 {
            return Err("range step must be positive".into());
        }
        if stop < start {
            return Err(format!("range '{item}' is decreasing"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        if count > 100_000 {
            return Err(format!("range '{item}' is too long"));
        }
        out.extend((0..=count).map(|k| start + k as f64 * step));
    }
    Ok(out)
}

fn parse_ints<T: TryFrom<u64>>(key: &str, value: &str) -> Result<Vec<T>, SimError> {
    parse_range(value)
        .map_err(|e| bad(key, value, e))?
        .into_iter()
        .map(|v| {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(bad(key, value, format!("{v} is not a non-negative integer")));
            }
            T::try_from(v as u64).map_err(|_| bad(key, value, format!("{v} is out of range")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SimError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn positive(key: &str, value: &str) -> Result<usize, SimError> {
    let v: usize = parse_one(key, value)?;
    if v == 0 {
        return Err(bad(key, value, "must be >= 1"));
    }
    Ok(v)
}

fn non_empty<T>(key: &str, value: &str, v: Vec<T>) -> Result<Vec<T>, SimError> {
    if v.is_empty() {
        return Err(bad(key, value, "list is empty"));
    }
    Ok(v)
}

impl RunConfig {
    /// Registry defaults of `scenario`.
    pub fn defaults(scenario: &str) -> Result<Self, SimError> {
        let sc = scenarios::find(scenario)?;
        Ok(Self {
            scenario: sc.name.into(),
            params: (sc.defaults)(),
            out: PathBuf::from("out"),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            formats: vec![Format::Csv, Format::Json],
        })
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        let value = value.trim();
        let p = &mut self.params;
        match key {
            "scenario" => {
                if value != self.scenario {
                    return Err(SimError::Usage(format!(
                        "scenario '{value}' conflicts with '{}' given elsewhere",
                        self.scenario
                    )));
                }
            }
            "seed" => p.seed = parse_one(key, value)?,
            "out" => {
                if value.is_empty() {
                    return Err(bad(key, value, "path is empty"));
                }
                self.out = PathBuf::from(value)
            }
            "jobs" => self.jobs = positive(key, value)?,
            "format" => {
                let mut f = Vec::new();
                for item in value.split(',').map(str::trim) {
                    let v = match item {
                        "csv" => Format::Csv,
                        "json" => Format::Json,
                        _ => return Err(bad(key, value, "expected csv, json or csv,json")),
                    };
                    if !f.contains(&v) {
                        f.push(v);
                    }
                }
                self.formats = f;
            }
            "trials" => p.trials = positive(key, value)?,
            "snr" => p.snr = non_empty(key, value, parse_range(value).map_err(|e| bad(key, value, e))?)?,
            "speed" => {
                let v = non_empty(key, value, parse_range(value).map_err(|e| bad(key, value, e))?)?;
                if v.iter().any(|s| *s < 0.0) {
                    return Err(bad(key, value, "speeds must be >= 0"));
                }
                p.speed = v;
            }
            "paths" => {
                let v: Vec<usize> = non_empty(key, value, parse_ints(key, value)?)?;
                if v.contains(&0) {
                    return Err(bad(key, value, "path counts must be >= 1"));
                }
                p.paths = v;
            }
            "frames" => p.frames = positive(key, value)?,
            "polls" => p.polls = positive(key, value)?,
            "bits" => {
                let v: Vec<u32> = non_empty(key, value, parse_ints(key, value)?)?;
                if v.iter().any(|b| !(1..=16).contains(b)) {
                    return Err(bad(key, value, "resolutions must lie in 1..=16 bits"));
                }
                p.bits = v;
            }
            "horizon" => p.horizon = parse_one(key, value)?,
            "kmax" => {
                let mut v = Vec::new();
                for item in value.split(',').map(str::trim) {
                    v.push(if item == "auto" {
                        KSetting::Auto
                    } else {
                        KSetting::Fixed(positive(key, item)?)
                    });
                }
                p.kmax = v;
            }
            "ls_frames" => p.ls_frames = positive(key, value)?,
            "nmse" => {
                p.nmse = match value {
                    "frobenius" => NmseKind::Frobenius,
                    "squared" => NmseKind::Squared,
                    _ => return Err(bad(key, value, "expected frobenius or squared")),
                }
            }
            "snr_convention" => {
                p.snr_convention = match value {
                    "averaged-tsnr" => SnrConvention::AveragedTsnr,
                    "per-symbol" => SnrConvention::PerSymbol,
                    _ => return Err(bad(key, value, "expected averaged-tsnr or per-symbol")),
                }
            }
            "quantizer" => {
                p.quantizer = match value {
                    "as-written" => Quantizer::AsWritten,
                    "nearest" => Quantizer::Nearest,
                    _ => return Err(bad(key, value, "expected as-written or nearest")),
                }
            }
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Canonical `key = value` echo that resolves back to `self`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = &self.params;
        let join = |v: Vec<String>| v.join(",");
        let nums = |v: &[f64]| join(v.iter().map(|x| x.to_string()).collect());
        vec![
            ("scenario", self.scenario.clone()),
            ("seed", p.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("jobs", self.jobs.to_string()),
            (
                "format",
                join(
                    self.formats
                        .iter()
                        .map(|f| match f {
                            Format::Csv => "csv".to_string(),
                            Format::Json => "json".to_string(),
                        })
                        .collect(),
                ),
            ),
            ("trials", p.trials.to_string()),
            ("snr", nums(&p.snr)),
            ("speed", nums(&p.speed)),
            ("paths", join(p.paths.iter().map(|x| x.to_string()).collect())),
            ("frames", p.frames.to_string()),
            ("polls", p.polls.to_string()),
            ("bits", join(p.bits.iter().map(|x| x.to_string()).collect())),
            ("horizon", p.horizon.to_string()),
            ("kmax", join(p.kmax.iter().map(|x| x.to_string()).collect())),
            ("ls_frames", p.ls_frames.to_string()),
            ("nmse", kebab(&p.nmse)),
            ("snr_convention", kebab(&p.snr_convention)),
            ("quantizer", kebab(&p.quantizer)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// The echo as config-file text.
    pub fn to_file_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// The serde name of a unit enum variant.
fn kebab<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => unreachable!("not a unit variant: {other:?}"),
    }
}

pub fn unknown_key(key: &str) -> SimError {
    SimError::UnknownKey {
        key: key.into(),
        valid: KEYS.join(", "),
    }
}

/// Parses config-file text into ordered pairs; `#` starts a comment.
pub fn parse_file(text: &str, origin: &str) -> Result<Vec<(String, String)>, SimError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |why: &str| SimError::Malformed {
            origin: origin.into(),
            line: i + 1,
            reason: why.into(),
        };
        let (k, v) = line.split_once('=').ok_or_else(|| malformed("expected key = value"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(malformed("missing key"));
        }
        if !KEYS.contains(&k) {
            return Err(malformed(&format!("unknown key '{k}'; valid keys: {}", KEYS.join(", "))));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(malformed(&format!("duplicate key '{k}'")));
        }
        out.push((k.into(), v.trim().into()));
    }
    Ok(out)
}

/// Inputs of [`resolve`], lowest precedence last in the list of fields.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    /// Scenario named on the command line.
    pub scenario: Option<String>,
    /// Settings from command-line flags, in order.
    pub flags: Vec<(String, String)>,
    /// Parsed config file.
    pub file: Vec<(String, String)>,
    /// Value of `DSDSIM_SEED`.
    pub env_seed: Option<String>,
}

pub fn resolve(src: &Sources) -> Result<RunConfig, SimError> {
    for (k, _) in src.flags.iter().chain(&src.file) {
        if !KEYS.contains(&k.as_str()) {
            return Err(unknown_key(k));
        }
    }
    let from_file = src.file.iter().find(|(k, _)| k == "scenario").map(|(_, v)| v.clone());
    let from_flags = src.flags.iter().rev().find(|(k, _)| k == "scenario").map(|(_, v)| v.clone());
    let cli = match (&src.scenario, from_flags) {
        (Some(a), Some(b)) if *a != b => {
            return Err(SimError::Usage(format!("conflicting scenarios '{a}' and '{b}'")));
        }
        (Some(a), _) => Some(a.clone()),
        (None, b) => b,
    };
    let name = cli.or(from_file).ok_or_else(|| SimError::Usage("no scenario given".into()))?;
    let mut cfg = RunConfig::defaults(&name)?;
    if let Some(seed) = &src.env_seed {
        cfg.set("seed", seed).map_err(|e| SimError::Usage(format!("DSDSIM_SEED: {e}")))?;
    }
    // a file naming another scenario is overridden by the command line
    for (k, v) in src.file.iter().filter(|(k, _)| k != "scenario") {
        cfg.set(k, v)?;
    }
    for (k, v) in src.flags.iter().filter(|(k, _)| k != "scenario") {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_expand_inclusively() {
        assert_eq!(parse_range("0:2:10").unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(parse_range("1:4").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(parse_range("-1").unwrap(), vec![-1.0]);
        assert_eq!(parse_range("0:5:12,20").unwrap(), vec![0.0, 5.0, 10.0, 20.0]);
        assert_eq!(parse_range("0:0.1:0.3").unwrap().len(), 4);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        for s in ["", "a", "0:0:1", "5:1", "1:2:3:4", "0,,1", "nan"] {
            assert!(parse_range(s).is_err(), "{s}");
        }
    }

    #[test]
    fn file_parsing_keeps_order_and_skips_comments() {
        let text = "# sweep\nseed = 3\n\n  snr=0:4:8  # dB\n";
        let pairs = parse_file(text, "t").unwrap();
        assert_eq!(pairs, vec![("seed".into(), "3".into()), ("snr".into(), "0:4:8".into())]);
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        match parse_file("seed = 1\nnonsense\n", "t") {
            Err(SimError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_file("seed=1\nseed=2", "t"), Err(SimError::Malformed { line: 2, .. })));
        match parse_file("\nfoo = 1", "t") {
            Err(SimError::Malformed { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("'foo'") && reason.contains("snr") && reason.contains("polls"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn echo_resolves_back_to_the_same_config() {
        for sc in scenarios::registry() {
            let mut cfg = RunConfig::defaults(sc.name).unwrap();
            cfg.set("snr", "-3:1.5:3").unwrap();
            cfg.set("kmax", "auto,7").unwrap();
            let file = parse_file(&cfg.to_file_text(), "echo").unwrap();
            let back = resolve(&Sources {
                file,
                ..Sources::default()
            })
            .unwrap();
            assert_eq!(back, cfg);
        }
    }
}
