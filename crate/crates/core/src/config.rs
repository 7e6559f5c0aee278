//! Flat `key=value` run configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected. The
//! canonical form written by [`RunConfig::emit`] lists every key and parses
//! back to an equal config.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cluster::{Algorithm, SimOptions, SyncMode, SyncSchedule};
use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::optimizers::{scale_lr, LrScaleMode};
use crate::problems::{Problem, ProblemKind, ProblemSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algo: Algorithm,
    pub n: usize,
    pub t: u64,
    pub h: u64,
    pub sync: SyncMode,
    pub d: usize,
    pub eta: f64,
    pub warm_up_steps: u64,
    pub lr_scale_mode: LrScaleMode,
    pub lr_scale_k: f64,
    pub b0sq: f64,
    pub epssq: f64,
    pub clip_rho: Option<f64>,
    pub problem: ProblemKind,
    pub l_max: f64,
    pub l_min: f64,
    pub beta: f64,
    pub noise: f64,
    pub hetero: f64,
    pub alpha: f64,
    pub samples: usize,
    pub batch: usize,
    pub l2: f64,
    pub separation: f64,
    pub x0: f64,
    pub problem_seed: u64,
    pub seed: u64,
    pub threads: usize,
    pub check_bound: bool,
    pub out_dir: String,
}

const KEYS: &[&str] = &[
    "algo",
    "n",
    "T",
    "H",
    "sync",
    "d",
    "eta",
    "warm_up_steps",
    "lr_scale_mode",
    "lr_scale_k",
    "b0sq",
    "epssq",
    "clip_rho",
    "problem",
    "l_max",
    "l_min",
    "beta",
    "noise",
    "hetero",
    "alpha",
    "samples",
    "batch",
    "l2",
    "separation",
    "x0",
    "problem_seed",
    "seed",
    "threads",
    "check_bound",
    "out_dir",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                line: *line,
                message: format!("invalid value `{v}` for `{key}`: {e}"),
            }),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::validation(key, "is required"))
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected key=value, got `{line}`"),
        })?;
        let key = k.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unknown key `{key}`"),
            });
        }
        if map
            .insert(key.to_string(), (line_no, v.trim().to_string()))
            .is_some()
        {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(Entries { map })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = tokenize(text)?;
        let algo: Algorithm = e.required("algo")?;
        let sync = match e.get::<SyncMode>("sync")? {
            Some(s) => s,
            None if algo.is_local() => SyncMode::Periodic,
            None => SyncMode::EveryStep,
        };
        let h = match (e.get::<u64>("H")?, sync) {
            (Some(h), _) => h,
            (None, SyncMode::Periodic) => {
                return Err(Error::validation("H", "is required for periodic synchronization"))
            }
            (None, _) => 1,
        };
        let clip_rho = match e.raw("clip_rho") {
            Some((_, v)) if v == "none" => None,
            _ => e.get::<f64>("clip_rho")?,
        };
        let cfg = RunConfig {
            algo,
            n: e.required("n")?,
            t: e.required("T")?,
            h,
            sync,
            d: e.required("d")?,
            eta: e.required("eta")?,
            warm_up_steps: e.or("warm_up_steps", 0)?,
            lr_scale_mode: e.or("lr_scale_mode", LrScaleMode::None)?,
            lr_scale_k: e.or("lr_scale_k", 1.0)?,
            b0sq: e.or("b0sq", algo.default_b0sq())?,
            epssq: e.or("epssq", 1.0)?,
            clip_rho,
            problem: e.or("problem", ProblemKind::Quadratic)?,
            l_max: e.or("l_max", 1.0)?,
            l_min: e.or("l_min", 0.1)?,
            beta: e.or("beta", 0.5)?,
            noise: e.or("noise", 0.1)?,
            hetero: e.or("hetero", 1.0)?,
            alpha: e.or("alpha", 0.0)?,
            samples: e.or("samples", 1000)?,
            batch: e.or("batch", 1)?,
            l2: e.or("l2", 0.01)?,
            separation: e.or("separation", 1.0)?,
            x0: e.or("x0", 1.0)?,
            problem_seed: e.or("problem_seed", 0)?,
            seed: e.or("seed", 0)?,
            threads: e.or("threads", 1)?,
            check_bound: e.or("check_bound", false)?,
            out_dir: e.or("out_dir", "out".to_string())?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, what: &str| Err(Error::validation(field, what));
        if self.n == 0 {
            return fail("n", "must be ≥ 1");
        }
        if self.t == 0 {
            return fail("T", "must be ≥ 1");
        }
        if self.h == 0 {
            return fail("H", "must be ≥ 1");
        }
        if self.d == 0 {
            return fail("d", "must be ≥ 1");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return fail("eta", "must be > 0");
        }
        if !(self.lr_scale_k > 0.0) {
            return fail("lr_scale_k", "must be > 0");
        }
        if !(self.b0sq >= 0.0) {
            return fail("b0sq", "must be ≥ 0");
        }
        if !(self.epssq >= 0.0) {
            return fail("epssq", "must be ≥ 0");
        }
        if let Some(rho) = self.clip_rho {
            if !(rho > 0.0) {
                return fail("clip_rho", "must be > 0");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha", "must lie in [0, 1]");
        }
        if self.threads == 0 {
            return fail("threads", "must be ≥ 1");
        }
        if !self.algo.is_local() && self.sync != SyncMode::EveryStep {
            return fail("sync", "must be every_step for sgd and adagrad");
        }
        if self.algo == Algorithm::LocalAdaalter && !(self.b0sq > 0.0 || self.epssq > 0.0) {
            return fail("b0sq", "or epssq must be > 0 for local_adaalter");
        }
        if matches!(self.problem, ProblemKind::Quadratic | ProblemKind::SinQuadratic)
            && !(self.l_min > 0.0 && self.l_min <= self.l_max)
        {
            return fail("l_min", "must satisfy 0 < l_min ≤ l_max");
        }
        if self.problem == ProblemKind::SinQuadratic && !(self.beta > 0.0) {
            return fail("beta", "must be > 0 for sin_quadratic");
        }
        if self.problem == ProblemKind::Logistic && self.samples < self.n {
            return fail("samples", "must be ≥ n");
        }
        if self.check_bound {
            if self.algo != Algorithm::LocalAdaalter {
                return fail("check_bound", "applies to local_adaalter only");
            }
            if self.clip_rho.is_none() {
                return fail("clip_rho", "must be set when check_bound=true");
            }
            if !(self.b0sq >= 1.0) {
                return fail("b0sq", "must be ≥ 1 when check_bound=true");
            }
            if !(self.epssq > 0.0) {
                return fail("epssq", "must be > 0 when check_bound=true");
            }
            let l = self.build_problem()?.smoothness();
            if self.effective_eta()? > 1.0 / l {
                return Err(Error::validation(
                    "eta",
                    format!("must be ≤ 1/L = {} when check_bound=true", 1.0 / l),
                ));
            }
        }
        Ok(())
    }

    /// Learning rate after batch-size rescaling.
    pub fn effective_eta(&self) -> Result<f64> {
        scale_lr(self.eta, self.lr_scale_k, self.lr_scale_mode)
    }

    pub fn schedule(&self) -> Result<SyncSchedule> {
        Ok(match self.sync {
            SyncMode::EveryStep => SyncSchedule::every_step(),
            SyncMode::Periodic => SyncSchedule::periodic(self.h)?,
            SyncMode::Never => SyncSchedule::never(),
        })
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            kind: self.problem,
            dim: self.d,
            workers: self.n,
            l_max: self.l_max,
            l_min: self.l_min,
            beta: self.beta,
            noise: self.noise,
            hetero: self.hetero,
            alpha: self.alpha,
            samples: self.samples,
            batch: self.batch,
            l2: self.l2,
            separation: self.separation,
            clip: self.clip_rho,
            seed: self.problem_seed,
        }
    }

    pub fn build_problem(&self) -> Result<Problem> {
        self.problem_spec().build().map_err(|e| match e {
            Error::Usage(msg) => Error::validation("problem", msg),
            other => other,
        })
    }

    pub fn sim_options(&self) -> Result<SimOptions> {
        Ok(SimOptions {
            algo: self.algo,
            workers: self.n,
            iterations: self.t,
            schedule: self.schedule()?,
            eta: self.effective_eta()?,
            warm_up_steps: self.warm_up_steps,
            b0sq: self.b0sq,
            epssq: self.epssq,
            seed: self.seed,
            x0: ParamVector::filled(self.d, self.x0),
            threads: self.threads,
        })
    }

    /// Canonical text: every key, fixed order, shortest round-trip floats.
    pub fn emit(&self) -> String {
        let clip = match self.clip_rho {
            Some(r) => r.to_string(),
            None => "none".to_string(),
        };
        let values: Vec<(&str, String)> = vec![
            ("algo", self.algo.to_string()),
            ("n", self.n.to_string()),
            ("T", self.t.to_string()),
            ("H", self.h.to_string()),
            ("sync", self.sync.to_string()),
            ("d", self.d.to_string()),
            ("eta", self.eta.to_string()),
            ("warm_up_steps", self.warm_up_steps.to_string()),
            ("lr_scale_mode", self.lr_scale_mode.to_string()),
            ("lr_scale_k", self.lr_scale_k.to_string()),
            ("b0sq", self.b0sq.to_string()),
            ("epssq", self.epssq.to_string()),
            ("clip_rho", clip),
            ("problem", self.problem.to_string()),
            ("l_max", self.l_max.to_string()),
            ("l_min", self.l_min.to_string()),
            ("beta", self.beta.to_string()),
            ("noise", self.noise.to_string()),
            ("hetero", self.hetero.to_string()),
            ("alpha", self.alpha.to_string()),
            ("samples", self.samples.to_string()),
            ("batch", self.batch.to_string()),
            ("l2", self.l2.to_string()),
            ("separation", self.separation.to_string()),
            ("x0", self.x0.to_string()),
            ("problem_seed", self.problem_seed.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("check_bound", self.check_bound.to_string()),
            ("out_dir", self.out_dir.clone()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in values {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Short digest of everything that influences the trajectory except the
    /// seed, the thread count and the output directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.threads = 1;
        c.out_dir = String::new();
        let digest = Sha256::digest(c.emit().as_bytes());
        hex::encode(&digest[..8])
    }

    /// `<config hash>_s<seed>`, used for run directories and trace files.
    pub fn run_name(&self) -> String {
        format!("{}_s{}", self.config_hash(), self.seed)
    }
}
