//! Command-line front end. Every command resolves a [`RunConfig`], writes
//! its outputs under `out` and echoes the config into `manifest.txt`.

pub mod commands;
pub mod config;
pub mod csv;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use clap::{Args, Parser, Subcommand};

pub use config::{Preset, RunConfig};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dblf", version, about = "Delayed reinforcement learning with direct belief forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out a policy mix into an offline dataset.
    Collect(Shared),
    /// Fit the direct and recursive forecasters on a dataset.
    TrainBelief(Shared),
    /// Per-horizon L1 belief error on the held-out trajectories.
    EvalBelief(Shared),
    /// Train SAC on the delayed environment (or delay-free / random anchors).
    TrainAgent(Shared),
    /// Normalised-return table of a train-agent run.
    EvalAgent(Shared),
    /// Compounding-error sweep with hard bound checks.
    Theory(Shared),
    /// Merge run directories into plot-data bands.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Shared {
    /// Plain `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Any config key, e.g. `--set delta_max=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Resolve the config, write the manifest and stop.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl Shared {
    /// Config file pairs, then `--set`, then the named flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(p) => config::read_pairs(p)?,
            None => Vec::new(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::invalid(format!("--set `{kv}` needs KEY=VALUE")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            pairs.push(("seeds".into(), s.to_string()));
        }
        if let Some(s) = &self.seeds {
            pairs.push(("seeds".into(), s.iter().map(u64::to_string).collect::<Vec<_>>().join(",")));
        }
        if let Some(o) = &self.out {
            pairs.push(("out".into(), o.display().to_string()));
        }
        if let Some(p) = &self.preset {
            pairs.push(("preset".into(), p.clone()));
        }
        RunConfig::resolve(&pairs)
    }
}

/// Worker cap from `DBLF_THREADS`, else the machine's parallelism.
pub fn workers() -> Result<usize> {
    match std::env::var("DBLF_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::invalid(format!("DBLF_THREADS=`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Maps `f` over `items` on up to [`workers`] threads; results keep the
/// input order and the first error (in input order) wins.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let w = workers()?.min(items.len()).max(1);
    if w == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..w {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BoundViolation(_) => EXIT_VIOLATION,
        _ => EXIT_CONFIG,
    }
}

type Handler = fn(&RunConfig) -> Result<()>;

fn execute(cli: Cli) -> Result<()> {
    let (name, shared, f): (&str, &Shared, Handler) = match &cli.command {
        Command::Report(r) => {
            for p in report::report(&r.runs, &r.out)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Collect(s) => ("collect", s, commands::collect),
        Command::TrainBelief(s) => ("train-belief", s, commands::train_belief),
        Command::EvalBelief(s) => ("eval-belief", s, commands::eval_belief),
        Command::TrainAgent(s) => ("train-agent", s, commands::train_agent_cmd),
        Command::EvalAgent(s) => ("eval-agent", s, commands::eval_agent),
        Command::Theory(s) => ("theory", s, commands::theory),
    };
    let cfg = shared.resolve()?;
    if shared.dry_run {
        cfg.write_manifest(&cfg.out, name)?;
    } else {
        f(&cfg)?;
    }
    println!("{name}: wrote {}", cfg.out.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..17).collect();
        assert_eq!(par_map(&xs, |x| Ok(x * x)).unwrap(), xs.iter().map(|x| x * x).collect::<Vec<_>>());
        let err = par_map(&xs, |&x| if x % 5 == 3 { Err(Error::invalid(format!("{x}"))) } else { Ok(x) }).unwrap_err();
        assert_eq!(err.to_string(), "invalid argument: 3");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["dblf", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(run(["dblf", "theory", "--preset", "huge"]), EXIT_CONFIG);
        assert_eq!(run(["dblf", "--help"]), EXIT_OK);
    }
}
