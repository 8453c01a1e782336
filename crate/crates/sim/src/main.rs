use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsdsim::config::{self, RunConfig, Sources};
use dsdsim::experiment::{inspect, run_experiment};
use dsdsim::io::{beam_rows, tap_rows, write_artifacts, Details};
use dsdsim::scenarios::{self, CheckLine};
use dsdsim::SimError;

/// Doubly-sparse channel estimation experiments.
#[derive(Parser)]
#[command(name = "dsdsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its artifacts.
    Run(RunArgs),
    /// Print the scenario registry.
    List,
    /// Run a scenario and evaluate its pass/fail checks.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario name (alternative to --scenario).
    name: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    /// Flat key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Falls back to DSDSIM_SEED.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    /// dB; lists and ranges such as 0:2:10.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// km/h.
    #[arg(long)]
    speed: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    /// Random-probing frames.
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    polls: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// csv, json or csv,json.
    #[arg(long)]
    format: Option<String>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn sources(&self) -> Result<Sources, SimError> {
        if let (Some(a), Some(b)) = (&self.name, &self.scenario) {
            if a != b {
                return Err(SimError::Usage(format!("conflicting scenarios '{a}' and '{b}'")));
            }
        }
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SimError::Usage(format!("{}: {e}", p.display())))?;
                config::parse_file(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        let mut flags = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SimError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            if !config::KEYS.contains(&k.trim()) {
                return Err(config::unknown_key(k.trim()));
            }
            flags.push((k.trim().to_string(), v.to_string()));
        }
        let named = [
            ("seed", &self.seed),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("snr", &self.snr),
            ("speed", &self.speed),
            ("paths", &self.paths),
            ("frames", &self.frames),
            ("polls", &self.polls),
            ("trials", &self.trials),
            ("format", &self.format),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                if flags.iter().any(|(f, _)| f == k) {
                    return Err(SimError::Usage(format!("'{k}' given both as --{k} and via --set")));
                }
                flags.push((k.to_string(), v.clone()));
            }
        }
        Ok(Sources {
            scenario: self.name.clone().or_else(|| self.scenario.clone()),
            flags,
            file,
            env_seed: std::env::var("DSDSIM_SEED").ok(),
        })
    }
}

fn execute(cfg: &RunConfig, write: bool) -> Result<Option<Vec<CheckLine>>, SimError> {
    let sc = scenarios::find(&cfg.scenario)?;
    let spec = scenarios::experiment(cfg)?;
    eprintln!(
        "{}: {} grid points x {} trials, seed {}, {} jobs",
        spec.scenario,
        spec.points.len(),
        spec.trials,
        spec.seed,
        cfg.jobs
    );
    let res = run_experiment(&spec, cfg.jobs)?;
    if write {
        let mut details = Details::default();
        for point in &spec.points {
            if let Some(run) = inspect(point, spec.seed)? {
                details.taps.extend(tap_rows(point, &run.stats, &run.selected));
                details.beams.extend(beam_rows(point, &run));
            }
        }
        for p in write_artifacts(cfg, &res, &details)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(sc.check.map(|c| c(&res)))
}

fn run(cli: Cli) -> Result<ExitCode, SimError> {
    match cli.cmd {
        Cmd::List => {
            for s in scenarios::registry() {
                println!("{:<10} {}", s.name, s.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => {
            let cfg = config::resolve(&args.sources()?)?;
            execute(&cfg, true)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check(args) => {
            let write = args.out.is_some();
            let cfg = config::resolve(&args.sources()?)?;
            let lines = execute(&cfg, write)?.unwrap_or_default();
            if lines.is_empty() {
                println!("no checks registered for {}", cfg.scenario);
            }
            let mut ok = true;
            for l in &lines {
                println!("{} {} ({})", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
                ok &= l.pass;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
