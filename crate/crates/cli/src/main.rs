//! Command-line front end for the simulator.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! runtime invariant is violated, 1 for anything else (I/O and the like).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaalter::analysis::{avg_sq_grad_norm, bound_report, lemma1_suite, parse_bound_inputs};
use adaalter::cluster::read_records;
use adaalter::config::RunConfig;
use adaalter::experiment::{compare_baselines, execute, run_sweep_into, write_run};
use adaalter::Error;
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adaalter", version, about = "Deterministic multi-worker SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write its trace, config and summary.
    Run {
        config: PathBuf,
        /// Override the worker thread count (results do not depend on it).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a config over a grid of synchronization periods and seeds.
    Sweep {
        config: PathBuf,
        /// Comma-separated synchronization periods.
        #[arg(long = "H", value_delimiter = ',', required = true)]
        h: Vec<u64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare loss against communication for several configs.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Where to write comparison.csv (defaults to the first config's out_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a recorded trace against the explicit convergence bound.
    VerifyBound {
        trace: PathBuf,
        bound_inputs: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when the bound is not satisfied.
        #[arg(long)]
        strict: bool,
    },
    /// Property-check the log-sum inequality on random sequences.
    CheckLemma1 {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_input(path: &Path) -> adaalter::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: &Path) -> adaalter::Result<RunConfig> {
    let cfg = RunConfig::parse(&read_input(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(
    config: &Path,
    threads: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let root = out_dir.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let outcome = execute(&cfg)?;
    let dir = write_run(&outcome, &root)?;
    let s = &outcome.summary;
    println!("run        {}", s.run_name);
    println!("final loss {:.10e}", s.final_loss);
    println!("avg |∇F|²  {:.6e}", s.avg_sq_grad_norm);
    println!(
        "comm       {} floats/worker over {} sync rounds",
        s.comm.floats_sent_per_worker, s.comm.sync_rounds
    );
    if let Some(b) = &s.bound {
        println!(
            "bound      {:.6e} (measured {:.6e}, {})",
            b.bound_total,
            b.measured,
            if b.dominated { "holds" } else { "VIOLATED" }
        );
    }
    println!("wrote      {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    config: &Path,
    h: &[u64],
    seeds: &[u64],
    out_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let base = load_config(config)?;
    let root = out_dir.unwrap_or_else(|| PathBuf::from(&base.out_dir));
    let report = run_sweep_into(&base, h, seeds, &root)?;
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let path = root.join(format!("sweep_{}.csv", base.config_hash()));
    report.write_csv(fs::File::create(&path)?)?;
    print!("{}", report.table());
    println!("wrote {}", path.display());
    if report.rows.iter().any(|r| r.failed > 0) {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(configs: &[PathBuf], seeds: &[u64], out_dir: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let cfgs = configs
        .iter()
        .map(|p| load_config(p))
        .collect::<adaalter::Result<Vec<_>>>()?;
    let report = compare_baselines(&cfgs, seeds)?;
    let root = out_dir.unwrap_or_else(|| PathBuf::from(&cfgs[0].out_dir));
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let path = root.join("comparison.csv");
    report.write_csv(fs::File::create(&path)?)?;
    print!("{}", report.table());
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify_bound(
    trace: &Path,
    inputs: &Path,
    out: Option<PathBuf>,
    strict: bool,
) -> anyhow::Result<ExitCode> {
    let file = fs::File::open(trace)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", trace.display())))?;
    let records = read_records(file)?;
    let measured = avg_sq_grad_norm(&records)?;
    let inputs = parse_bound_inputs(&read_input(inputs)?, Some(records.len() as u64))?;
    let report = bound_report(inputs, measured)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(path) => {
            fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
            println!(
                "measured {:.6e}  bound {:.6e}  {}",
                report.measured,
                report.bound_total,
                if report.dominated { "holds" } else { "VIOLATED" }
            );
        }
        None => print!("{json}"),
    }
    if strict && !report.dominated {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_lemma1(trials: usize, seed: u64) -> anyhow::Result<ExitCode> {
    let suite = lemma1_suite(trials, seed)?;
    println!(
        "{} sequences (seed {}), {} failures, max(lhs - rhs) = {:.3e}",
        suite.trials, suite.seed, suite.failures, suite.worst_gap
    );
    if suite.failures > 0 {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        Some(e) if e.is_invariant() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            threads,
            seed,
            out_dir,
        } => cmd_run(&config, threads, seed, out_dir),
        Command::Sweep {
            config,
            h,
            seeds,
            out_dir,
        } => cmd_sweep(&config, &h, &seeds, out_dir),
        Command::Compare {
            configs,
            seeds,
            out_dir,
        } => cmd_compare(&configs, &seeds, out_dir),
        Command::VerifyBound {
            trace,
            bound_inputs,
            out,
            strict,
        } => cmd_verify_bound(&trace, &bound_inputs, out, strict),
        Command::CheckLemma1 { trials, seed } => cmd_check_lemma1(trials, seed),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
