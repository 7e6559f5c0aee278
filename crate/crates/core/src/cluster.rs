//! Multi-worker orchestration: runs `n` simulated workers for `T` iterations
//! under a synchronization schedule and charges every synchronized float to
//! a [`CommLedger`].
//!
//! Worker steps inside one iteration may run on a rayon pool. Each worker
//! draws from its own counter-based RNG stream and all averaging walks the
//! workers in index order, so the trace is bit-identical for any thread
//! count.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{average, ParamVector};
use crate::optimizers::{
    adaalter_local_step, adagrad_step, local_sgd_step, AccumulatorState, StepParams,
};
use crate::problems::{worker_rng, Problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Fully synchronous SGD: gradients averaged every step.
    Sgd,
    /// Distributed AdaGrad: gradients averaged every step.
    Adagrad,
    /// Periodic model averaging.
    LocalSgd,
    /// Periodic averaging of models and accumulators with lazy denominators.
    LocalAdaalter,
}

impl Algorithm {
    /// Floats per coordinate sent by each worker in one synchronization.
    pub fn floats_per_coordinate(self) -> u64 {
        match self {
            Algorithm::LocalAdaalter => 2,
            _ => 1,
        }
    }

    pub fn default_b0sq(self) -> f64 {
        match self {
            Algorithm::LocalAdaalter => 1.0,
            _ => 0.0,
        }
    }

    pub fn is_local(self) -> bool {
        matches!(self, Algorithm::LocalSgd | Algorithm::LocalAdaalter)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Algorithm::Adagrad | Algorithm::LocalAdaalter)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Adagrad => "adagrad",
            Algorithm::LocalSgd => "local_sgd",
            Algorithm::LocalAdaalter => "local_adaalter",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(Algorithm::Sgd),
            "adagrad" => Ok(Algorithm::Adagrad),
            "local_sgd" => Ok(Algorithm::LocalSgd),
            "local_adaalter" => Ok(Algorithm::LocalAdaalter),
            other => Err(format!(
                "unknown algorithm `{other}` (expected sgd | adagrad | local_sgd | local_adaalter)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    EveryStep,
    Periodic,
    Never,
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncMode::EveryStep => "every_step",
            SyncMode::Periodic => "periodic",
            SyncMode::Never => "never",
        })
    }
}

impl FromStr for SyncMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "every_step" => Ok(SyncMode::EveryStep),
            "periodic" => Ok(SyncMode::Periodic),
            "never" => Ok(SyncMode::Never),
            other => Err(format!(
                "unknown sync mode `{other}` (expected every_step | periodic | never)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSchedule {
    pub period: u64,
    pub mode: SyncMode,
}

impl SyncSchedule {
    pub fn every_step() -> Self {
        Self {
            period: 1,
            mode: SyncMode::EveryStep,
        }
    }

    pub fn periodic(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::validation("H", "must be ≥ 1"));
        }
        Ok(Self {
            period,
            mode: SyncMode::Periodic,
        })
    }

    pub fn never() -> Self {
        Self {
            period: 1,
            mode: SyncMode::Never,
        }
    }

    /// Whether iteration `t` ends with a synchronization (`mod(t, H) = 0`).
    pub fn is_sync_round(&self, t: u64) -> bool {
        match self.mode {
            SyncMode::EveryStep => true,
            SyncMode::Periodic => t.is_multiple_of(self.period),
            SyncMode::Never => false,
        }
    }

    /// Period seen by the local step counter; `None` is `H = ∞`.
    pub fn local_period(&self) -> Option<u64> {
        match self.mode {
            SyncMode::EveryStep => Some(1),
            SyncMode::Periodic => Some(self.period),
            SyncMode::Never => None,
        }
    }
}

/// Cumulative traffic each worker would have sent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub floats_sent_per_worker: u64,
    pub sync_rounds: u64,
    pub dim: usize,
}

impl CommLedger {
    pub fn new(dim: usize) -> Self {
        Self {
            floats_sent_per_worker: 0,
            sync_rounds: 0,
            dim,
        }
    }

    /// Record one synchronization round. A single worker has no peers and
    /// sends nothing.
    pub fn charge(&mut self, algo: Algorithm, workers: usize) {
        self.sync_rounds += 1;
        if workers > 1 {
            self.floats_sent_per_worker += algo.floats_per_coordinate() * self.dim as u64;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommSummary {
    pub algo: Algorithm,
    pub sync_rounds: u64,
    pub floats_sent_per_worker: u64,
    pub floats_per_iter_avg: f64,
    /// Traffic as a fraction of synchronous AdaGrad's `d` floats per iteration.
    pub reduction_factor: f64,
}

pub fn comm_summary(ledger: &CommLedger, iterations: u64, algo: Algorithm) -> CommSummary {
    let floats_per_iter_avg = if iterations == 0 {
        0.0
    } else {
        ledger.floats_sent_per_worker as f64 / iterations as f64
    };
    let reduction_factor = if ledger.dim == 0 {
        0.0
    } else {
        floats_per_iter_avg / ledger.dim as f64
    };
    CommSummary {
        algo,
        sync_rounds: ledger.sync_rounds,
        floats_sent_per_worker: ledger.floats_sent_per_worker,
        floats_per_iter_avg,
        reduction_factor,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    pub x: ParamVector,
    pub acc: AccumulatorState,
}

/// Average every worker's model (and accumulator, for the adaptive local
/// algorithm) and charge the ledger.
pub fn synchronize(
    workers: &mut [WorkerState],
    algo: Algorithm,
    ledger: &mut CommLedger,
) -> Result<()> {
    if workers.is_empty() {
        return Err(Error::Usage("cannot synchronize an empty worker list".into()));
    }
    let n = workers.len();
    let x_avg = average(workers.iter().map(|w| &w.x))?;
    let a2_avg = if algo == Algorithm::LocalAdaalter {
        Some(average(workers.iter().map(|w| &w.acc.a2))?)
    } else {
        None
    };
    for w in workers.iter_mut() {
        w.x = x_avg.clone();
        if let Some(a2) = &a2_avg {
            w.acc.reset_to(a2.clone());
        }
    }
    ledger.charge(algo, n);
    Ok(())
}

/// Everything [`run`] needs besides the problem.
#[derive(Clone, Debug)]
pub struct SimOptions {
    pub algo: Algorithm,
    pub workers: usize,
    pub iterations: u64,
    pub schedule: SyncSchedule,
    /// Learning rate after any batch-size rescaling.
    pub eta: f64,
    /// 0 disables warm-up.
    pub warm_up_steps: u64,
    pub b0sq: f64,
    pub epssq: f64,
    pub seed: u64,
    pub x0: ParamVector,
    /// Worker-step parallelism; 1 runs everything on the calling thread.
    pub threads: usize,
}

impl SimOptions {
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::validation("n", "must be ≥ 1"));
        }
        if self.workers != problem.workers() {
            return Err(Error::validation(
                "n",
                format!("must match the problem's {} shards", problem.workers()),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::validation("T", "must be ≥ 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::validation("eta", "must be > 0"));
        }
        if !(self.b0sq >= 0.0) {
            return Err(Error::validation("b0sq", "must be ≥ 0"));
        }
        if !(self.epssq >= 0.0) {
            return Err(Error::validation("epssq", "must be ≥ 0"));
        }
        if self.schedule.mode == SyncMode::Periodic && self.schedule.period == 0 {
            return Err(Error::validation("H", "must be ≥ 1"));
        }
        if !self.algo.is_local() && self.schedule.mode != SyncMode::EveryStep {
            return Err(Error::validation(
                "sync",
                format!("{} averages gradients every step", self.algo),
            ));
        }
        if self.algo == Algorithm::LocalAdaalter && !(self.b0sq > 0.0 || self.epssq > 0.0) {
            return Err(Error::validation(
                "b0sq",
                "or epssq must be > 0 so the lazy denominator stays positive",
            ));
        }
        self.x0.check_dim(problem.dim())?;
        Ok(())
    }
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("flag must be 0 or 1, got {other}"))),
        }
    }
}

/// One row per iteration `t`, evaluated at the averaged model `x̄_{t−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    #[serde(rename = "loss_avg_model")]
    pub loss: f64,
    #[serde(rename = "grad_norm_sq_avg_model")]
    pub grad_norm_sq: f64,
    #[serde(rename = "eta_t")]
    pub eta: f64,
    pub comm_floats_cum: u64,
    #[serde(rename = "sync_round_flag", with = "flag")]
    pub sync: bool,
}

pub const TRACE_HEADER: &str =
    "t,loss_avg_model,grad_norm_sq_avg_model,eta_t,comm_floats_cum,sync_round_flag";

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// `x̄_T`; no trailing sync is forced when `T` is not a multiple of `H`.
    pub final_model: ParamVector,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub ledger: CommLedger,
    /// Largest stochastic-gradient coordinate magnitude seen in the run.
    pub max_abs_grad: f64,
}

impl Trace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.records, out)
    }
}

pub fn write_records<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Usage(format!(
            "unexpected trace header `{}`",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn map_workers<T, F>(
    pool: Option<&rayon::ThreadPool>,
    workers: &mut [WorkerState],
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut WorkerState) -> Result<T> + Sync + Send,
{
    match pool {
        Some(pool) => pool.install(|| workers.par_iter_mut().map(&f).collect()),
        None => workers.iter_mut().map(f).collect(),
    }
}

fn check_adaalter_state(workers: &[WorkerState], t: u64) -> Result<()> {
    let reference = &workers[0].acc.b2_sync;
    for w in workers {
        w.acc.check()?;
        if &w.acc.b2_sync != reference {
            return Err(Error::Invariant(format!(
                "worker {} holds a different synchronized accumulator at t={t}",
                w.id
            )));
        }
    }
    Ok(())
}

/// Execute `opts.iterations` iterations of `opts.algo` on `problem`.
pub fn run(problem: &Problem, opts: &SimOptions) -> Result<Trace> {
    opts.validate(problem)?;
    let n = opts.workers;
    let dim = problem.dim();
    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .map_err(|e| Error::Usage(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let init_acc = AccumulatorState::new(dim, opts.b0sq, opts.epssq)?;
    let mut workers: Vec<WorkerState> = (0..n)
        .map(|id| WorkerState {
            id,
            x: opts.x0.clone(),
            acc: init_acc.clone(),
        })
        .collect();
    let mut ledger = CommLedger::new(dim);
    let mut records = Vec::with_capacity(opts.iterations as usize);
    let mut max_abs_grad = 0.0f64;
    let period = opts.schedule.local_period();

    for t in 1..=opts.iterations {
        let x_bar = average(workers.iter().map(|w| &w.x))?;
        let loss = problem.loss(&x_bar)?;
        let grad_norm_sq = problem.full_gradient(&x_bar)?.norm_sq();
        let sp = StepParams::scheduled(opts.eta, t, period, opts.warm_up_steps);
        let sync = opts.schedule.is_sync_round(t);

        let grad_of = |w: &WorkerState| {
            let mut rng = worker_rng(opts.seed, w.id, t);
            problem.stochastic_gradient(&w.x, w.id, &mut rng)
        };

        match opts.algo {
            Algorithm::Sgd | Algorithm::Adagrad => {
                let grads = map_workers(pool.as_ref(), &mut workers, |w| grad_of(w))?;
                for g in &grads {
                    max_abs_grad = max_abs_grad.max(g.norm_inf());
                }
                let g_avg = average(&grads)?;
                let lead = &workers[0];
                let (x_next, b2_next) = if opts.algo == Algorithm::Adagrad {
                    let (x, b2) = adagrad_step(&lead.x, &lead.acc.a2, &g_avg, sp.eta, opts.epssq)?;
                    (x, Some(b2))
                } else {
                    (local_sgd_step(&lead.x, &g_avg, sp.eta)?, None)
                };
                for w in workers.iter_mut() {
                    w.x = x_next.clone();
                    if let Some(b2) = &b2_next {
                        w.acc.reset_to(b2.clone());
                    }
                }
                ledger.charge(opts.algo, n);
            }
            Algorithm::LocalSgd | Algorithm::LocalAdaalter => {
                let algo = opts.algo;
                let grad_max = map_workers(pool.as_ref(), &mut workers, |w| {
                    let g = grad_of(w)?;
                    if algo == Algorithm::LocalAdaalter {
                        let (y, acc) = adaalter_local_step(&w.x, &w.acc, &g, &sp)?;
                        w.x = y;
                        w.acc = acc;
                    } else {
                        w.x = local_sgd_step(&w.x, &g, sp.eta)?;
                    }
                    Ok(g.norm_inf())
                })?;
                max_abs_grad = grad_max.into_iter().fold(max_abs_grad, f64::max);
                if sync {
                    synchronize(&mut workers, algo, &mut ledger)?;
                }
                if algo == Algorithm::LocalAdaalter {
                    check_adaalter_state(&workers, t)?;
                }
            }
        }

        records.push(TraceRecord {
            t,
            loss,
            grad_norm_sq,
            eta: sp.eta,
            comm_floats_cum: ledger.floats_sent_per_worker,
            sync,
        });
    }

    let final_model = average(workers.iter().map(|w| &w.x))?;
    let final_loss = problem.loss(&final_model)?;
    let final_grad_norm_sq = problem.full_gradient(&final_model)?.norm_sq();
    if !final_loss.is_finite() {
        return Err(Error::Invariant("final loss is not finite".into()));
    }
    Ok(Trace {
        records,
        final_model,
        final_loss,
        final_grad_norm_sq,
        ledger,
        max_abs_grad,
    })
}
