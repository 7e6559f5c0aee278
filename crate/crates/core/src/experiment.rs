//! Experiment orchestration: single runs with on-disk artifacts, H × seed
//! sweeps and aligned baseline comparisons.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{avg_sq_grad_norm, bound_report, empirical_gap, BoundInputs, BoundReport};
use crate::cluster::{comm_summary, run, Algorithm, CommSummary, SyncMode, Trace};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::problems::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_name: String,
    pub algo: Algorithm,
    pub n: usize,
    pub iterations: u64,
    pub h: u64,
    pub sync: SyncMode,
    pub d: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub avg_sq_grad_norm: f64,
    pub comm: CommSummary,
    pub max_abs_grad: f64,
    /// Clipping makes the stochastic gradients biased.
    pub clipped: bool,
    pub bound: Option<BoundReport>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub trace: Trace,
    pub summary: RunSummary,
}

/// Bound inputs for a finished run, with `F_gap` from the analytic minimum
/// on the plain quadratic and from the trace otherwise.
pub fn bound_inputs_for(cfg: &RunConfig, problem: &Problem, trace: &Trace) -> Result<BoundInputs> {
    let rho = cfg
        .clip_rho
        .ok_or_else(|| Error::validation("clip_rho", "must be set to certify the gradient bound"))?;
    let start = problem.loss(&ParamVector::filled(cfg.d, cfg.x0))?;
    let f_gap = match problem.min_value() {
        Some(fmin) => start - fmin,
        None => empirical_gap(&trace.records, Some(trace.final_loss))?,
    };
    Ok(BoundInputs {
        l: problem.smoothness(),
        rho,
        eps: cfg.epssq.sqrt(),
        eta: cfg.effective_eta()?,
        h: match cfg.sync {
            SyncMode::Never => cfg.t,
            _ => cfg.h,
        },
        n: cfg.n as u64,
        t: cfg.t,
        b0sq: cfg.b0sq,
        d: cfg.d as u64,
        f_gap,
    })
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let trace = run(&problem, &cfg.sim_options()?)?;
    let measured = avg_sq_grad_norm(&trace.records)?;
    let bound = if cfg.check_bound {
        Some(bound_report(bound_inputs_for(cfg, &problem, &trace)?, measured)?)
    } else {
        None
    };
    let summary = RunSummary {
        run_name: cfg.run_name(),
        algo: cfg.algo,
        n: cfg.n,
        iterations: cfg.t,
        h: cfg.h,
        sync: cfg.sync,
        d: cfg.d,
        seed: cfg.seed,
        final_loss: trace.final_loss,
        final_grad_norm_sq: trace.final_grad_norm_sq,
        avg_sq_grad_norm: measured,
        comm: comm_summary(&trace.ledger, cfg.t, cfg.algo),
        max_abs_grad: trace.max_abs_grad,
        clipped: cfg.clip_rho.is_some(),
        bound,
    };
    Ok(RunOutcome {
        config: cfg.clone(),
        trace,
        summary,
    })
}

/// Write `config.txt`, `trace_<name>.csv` and `summary.json` into
/// `root/<name>/` and return that directory.
pub fn write_run(outcome: &RunOutcome, root: &Path) -> Result<PathBuf> {
    let name = outcome.config.run_name();
    let dir = root.join(&name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), outcome.config.emit())?;
    let trace_file = fs::File::create(dir.join(format!("trace_{name}.csv")))?;
    outcome.trace.write_csv(std::io::BufWriter::new(trace_file))?;
    let summary = serde_json::to_string_pretty(&outcome.summary)?;
    fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(dir)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub h: u64,
    pub seed: u64,
    pub result: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: u64,
    pub runs: usize,
    pub failed: usize,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    pub avg_sq_grad_norm_mean: f64,
    pub comm_floats: u64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>5} {:>7} {:>26} {:>14} {:>14}",
            "H", "runs", "failed", "final F(x̄_T) mean ± std", "avg |∇F|²", "comm floats"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6} {:>5} {:>7} {:>14.6e} ± {:<9.2e} {:>14.6e} {:>14}",
                r.h, r.runs, r.failed, r.final_loss_mean, r.final_loss_std,
                r.avg_sq_grad_norm_mean, r.comm_floats
            );
        }
        for c in &self.cells {
            if let Err(e) = &c.result {
                let _ = writeln!(s, "failed: H={} seed={}: {e}", c.h, c.seed);
            }
        }
        s
    }
}

/// One run per `(H, seed)`, aggregated per `H`. Failed cells are recorded
/// and the remaining cells still run. Cells run in parallel.
pub fn run_sweep(base: &RunConfig, h_values: &[u64], seeds: &[u64]) -> Result<SweepReport> {
    sweep(base, h_values, seeds, None)
}

/// Like [`run_sweep`], but every successful cell also writes its own run
/// directory under `root`.
pub fn run_sweep_into(
    base: &RunConfig,
    h_values: &[u64],
    seeds: &[u64],
    root: &Path,
) -> Result<SweepReport> {
    sweep(base, h_values, seeds, Some(root))
}

fn sweep(base: &RunConfig, h_values: &[u64], seeds: &[u64], root: Option<&Path>) -> Result<SweepReport> {
    if h_values.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("sweep needs at least one H and one seed".into()));
    }
    let grid: Vec<(u64, u64)> = h_values
        .iter()
        .flat_map(|&h| seeds.iter().map(move |&s| (h, s)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(h, seed)| {
            let mut cfg = base.clone();
            cfg.h = h;
            cfg.seed = seed;
            cfg.threads = 1;
            if cfg.algo.is_local() && cfg.sync == SyncMode::EveryStep {
                cfg.sync = SyncMode::Periodic;
            }
            SweepCell {
                h,
                seed,
                result: execute(&cfg)
                    .and_then(|o| {
                        if let Some(root) = root {
                            write_run(&o, root)?;
                        }
                        Ok(o.summary)
                    })
                    .map_err(|e| e.to_string()),
            }
        })
        .collect();
    let rows = h_values
        .iter()
        .map(|&h| {
            let of_h: Vec<&SweepCell> = cells.iter().filter(|c| c.h == h).collect();
            let ok: Vec<&RunSummary> = of_h.iter().filter_map(|c| c.result.as_ref().ok()).collect();
            let losses: Vec<f64> = ok.iter().map(|s| s.final_loss).collect();
            let grads: Vec<f64> = ok.iter().map(|s| s.avg_sq_grad_norm).collect();
            let (final_loss_mean, final_loss_std) = mean_std(&losses);
            SweepRow {
                h,
                runs: of_h.len(),
                failed: of_h.len() - ok.len(),
                final_loss_mean,
                final_loss_std,
                avg_sq_grad_norm_mean: mean_std(&grads).0,
                comm_floats: ok.first().map_or(0, |s| s.comm.floats_sent_per_worker),
            }
        })
        .collect();
    Ok(SweepReport { cells, rows })
}

/// Seed-averaged loss after each iteration together with the floats spent
/// so far. Index `k` is the state after `k` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub loss: Vec<f64>,
    pub comm_floats: Vec<u64>,
}

impl Curve {
    fn from_trace(label: String, trace: &Trace) -> Self {
        let mut loss: Vec<f64> = trace.records.iter().map(|r| r.loss).collect();
        loss.push(trace.final_loss);
        let mut comm = vec![0];
        comm.extend(trace.records.iter().map(|r| r.comm_floats_cum));
        Self {
            label,
            loss,
            comm_floats: comm,
        }
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().expect("curve has at least one point")
    }

    pub fn total_floats(&self) -> u64 {
        *self.comm_floats.last().expect("curve has at least one point")
    }

    /// Floats spent when the loss first drops to `target` or below.
    pub fn floats_to_reach(&self, target: f64) -> Option<u64> {
        self.loss
            .iter()
            .position(|&l| l <= target)
            .map(|k| self.comm_floats[k])
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub curves: Vec<Curve>,
}

impl ComparisonReport {
    /// Long format: `label,iteration,loss,comm_floats`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "iteration", "loss", "comm_floats"])?;
        for c in &self.curves {
            for (k, (l, f)) in c.loss.iter().zip(&c.comm_floats).enumerate() {
                w.write_record([c.label.clone(), k.to_string(), l.to_string(), f.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let reference = self.curves.first().map(Curve::final_loss);
        let _ = writeln!(
            s,
            "{:<28} {:>16} {:>14} {:>22}",
            "run", "final loss", "comm floats", "floats to ref. loss"
        );
        for c in &self.curves {
            let reach = reference
                .and_then(|r| c.floats_to_reach(r))
                .map_or("never".to_string(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{:<28} {:>16.8e} {:>14} {:>22}",
                c.label,
                c.final_loss(),
                c.total_floats(),
                reach
            );
        }
        s
    }
}

fn label_for(cfg: &RunConfig, idx: usize) -> String {
    match (cfg.algo.is_local(), cfg.sync) {
        (true, SyncMode::Never) => format!("{idx}:{}_Hinf", cfg.algo),
        (true, _) => format!("{idx}:{}_H{}", cfg.algo, cfg.h),
        (false, _) => format!("{idx}:{}", cfg.algo),
    }
}

/// Run every config over `seeds` and average the curves per config. All
/// configs must describe the same problem and horizon.
pub fn compare_baselines(configs: &[RunConfig], seeds: &[u64]) -> Result<ComparisonReport> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Usage("compare needs at least one config".into()))?;
    if seeds.is_empty() {
        return Err(Error::Usage("compare needs at least one seed".into()));
    }
    for c in &configs[1..] {
        if c.problem_spec() != first.problem_spec() {
            return Err(Error::Usage(
                "configs must share problem, dimension and worker count".into(),
            ));
        }
        if c.t != first.t {
            return Err(Error::Usage("configs must share T".into()));
        }
        if c.x0 != first.x0 {
            return Err(Error::Usage("configs must share x0".into()));
        }
    }
    let mut curves = Vec::with_capacity(configs.len());
    for (idx, cfg) in configs.iter().enumerate() {
        let per_seed: Vec<Curve> = seeds
            .par_iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c.threads = 1;
                execute(&c).map(|o| Curve::from_trace(String::new(), &o.trace))
            })
            .collect::<Result<_>>()?;
        let len = per_seed[0].loss.len();
        let k = per_seed.len() as f64;
        let loss = (0..len)
            .map(|i| per_seed.iter().map(|c| c.loss[i]).sum::<f64>() / k)
            .collect();
        curves.push(Curve {
            label: label_for(cfg, idx),
            loss,
            comm_floats: per_seed[0].comm_floats.clone(),
        });
    }
    Ok(ComparisonReport { curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text).unwrap()
    }

    const QUAD: &str = "n=4\nT=200\nd=5\neta=0.2\nnoise=0.05\nalpha=0.5\nl_max=2\n";

    #[test]
    fn sweep_grid_shape_and_comm_ratio() {
        let base = cfg(&format!("algo=local_adaalter\nH=1\n{QUAD}"));
        let report = run_sweep(&base, &[1, 4, 8, 16], &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(report.cells.len(), 20);
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.failed == 0 && r.runs == 5));
        assert_eq!(report.rows[0].comm_floats, 200 * 5 * 2);
        assert_eq!(report.rows[1].comm_floats * 4, report.rows[0].comm_floats);
        let table = report.table();
        assert_eq!(table.lines().count(), 5);
    }

    #[test]
    fn degenerate_sweep() {
        let base = cfg(&format!("algo=local_sgd\nH=2\n{QUAD}"));
        let report = run_sweep(&base, &[2], &[7]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].final_loss_std, 0.0);
        assert!(run_sweep(&base, &[], &[1]).is_err());
    }

    #[test]
    fn sweep_marks_failed_cells_and_continues() {
        let base = cfg(&format!("algo=local_adaalter\nH=1\n{QUAD}"));
        let report = run_sweep(&base, &[0, 2], &[0, 1]).unwrap();
        assert_eq!(report.rows[0].failed, 2);
        assert_eq!(report.rows[1].failed, 0);
        assert!(report.table().contains("failed: H=0"));
    }

    #[test]
    fn compare_rejects_mismatched_problems() {
        let a = cfg(&format!("algo=adagrad\n{QUAD}"));
        let mut b = cfg(&format!("algo=local_adaalter\nH=4\n{QUAD}"));
        b.d = 6;
        assert!(matches!(compare_baselines(&[a.clone(), b], &[0]), Err(Error::Usage(_))));
        let mut c = a.clone();
        c.t = 10;
        assert!(compare_baselines(&[a, c], &[0]).is_err());
    }

    #[test]
    fn compare_identical_configs_give_identical_curves() {
        let a = cfg(&format!("algo=local_adaalter\nH=4\n{QUAD}"));
        let report = compare_baselines(&[a.clone(), a], &[0, 1]).unwrap();
        assert_eq!(report.curves[0].loss, report.curves[1].loss);
        assert_eq!(report.curves[0].comm_floats, report.curves[1].comm_floats);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 201);
    }

    #[test]
    fn write_run_creates_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&format!("algo=local_adaalter\nH=4\n{QUAD}"));
        let outcome = execute(&c).unwrap();
        let run_dir = write_run(&outcome, dir.path()).unwrap();
        let name = c.run_name();
        assert!(run_dir.join("config.txt").exists());
        assert!(run_dir.join("summary.json").exists());
        let trace = fs::read_to_string(run_dir.join(format!("trace_{name}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 201);
        let snapshot = RunConfig::parse(&fs::read_to_string(run_dir.join("config.txt")).unwrap())
            .unwrap();
        assert_eq!(snapshot, c);
    }
}
