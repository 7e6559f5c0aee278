//! Post-processing and numerical checks of the convergence analysis:
//! the log-sum inequality, the explicit finite-`T` bound on the averaged
//! squared gradient norm, and trace reductions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::TraceRecord;
use crate::error::{Error, Result};

/// Slack allowed when comparing the two sides of the log-sum inequality.
pub const LEMMA1_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Result {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `Σ_t a_t / (a_0 + Σ_{s≤t} a_s) ≤ log(a_0 + Σ_t a_t) − log(a_0)`.
pub fn lemma1_check(a0: f64, seq: &[f64]) -> Result<Lemma1Result> {
    if !(a0 > 0.0) {
        return Err(Error::Domain(format!("a0 must be > 0, got {a0}")));
    }
    if seq.is_empty() {
        return Err(Error::Usage("sequence must be nonempty".into()));
    }
    if let Some(bad) = seq.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("sequence entries must be finite and >= 0, got {bad}")));
    }
    let mut partial = a0;
    let mut lhs = 0.0;
    for &a in seq {
        partial += a;
        lhs += a / partial;
    }
    // log(partial / a0) keeps the zero sequence at exactly 0.
    let rhs = (partial / a0).ln();
    Ok(Lemma1Result {
        lhs,
        rhs,
        holds: lhs <= rhs + LEMMA1_SLACK,
    })
}

/// Outcome of [`lemma1_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Suite {
    pub trials: usize,
    pub seed: u64,
    pub failures: usize,
    /// Largest observed `lhs − rhs`; negative when every case holds strictly.
    pub worst_gap: f64,
}

/// Check the inequality on `trials` random sequences: lengths uniform in
/// `1..=100`, entries `|N(0,1)|`, `a0` log-uniform in `[1e-3, 1e2)`.
pub fn lemma1_suite(trials: usize, seed: u64) -> Result<Lemma1Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..trials {
        let len = rng.gen_range(1..=100usize);
        let a0 = 10f64.powf(rng.gen_range(-3.0..2.0));
        let seq: Vec<f64> = (0..len)
            .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let r = lemma1_check(a0, &seq)?;
        if !r.holds {
            failures += 1;
        }
        worst_gap = worst_gap.max(r.lhs - r.rhs);
    }
    Ok(Lemma1Suite {
        trials,
        seed,
        failures,
        worst_gap,
    })
}

/// Constants entering the explicit bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Smoothness constant `L`.
    pub l: f64,
    /// Bound on every stochastic-gradient coordinate.
    pub rho: f64,
    pub eps: f64,
    pub eta: f64,
    pub h: u64,
    pub n: u64,
    pub t: u64,
    pub b0sq: f64,
    pub d: u64,
    /// Upper bound on `F(x̄_0) − F(x̄_T)`.
    pub f_gap: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, what: &str| Err(Error::validation(field, what));
        if !(self.eps > 0.0) {
            return fail("eps", "must be > 0 (hypothesis ε > 0)");
        }
        if !(self.l > 0.0) {
            return fail("L", "must be > 0");
        }
        if !(self.eta > 0.0) {
            return fail("eta", "must be > 0");
        }
        if self.eta > 1.0 / self.l {
            return fail("eta", "must be ≤ 1/L (hypothesis η ≤ 1/L)");
        }
        if !(self.b0sq >= 1.0) {
            return fail("b0sq", "must be ≥ 1 (hypothesis b₀ ≥ 1)");
        }
        if !(self.rho > 0.0) {
            return fail("rho", "must be > 0");
        }
        if self.h == 0 {
            return fail("H", "must be ≥ 1");
        }
        if self.n == 0 {
            return fail("n", "must be ≥ 1");
        }
        if self.t == 0 {
            return fail("T", "must be ≥ 1");
        }
        if self.d == 0 {
            return fail("d", "must be ≥ 1");
        }
        if !(self.f_gap >= 0.0) || !self.f_gap.is_finite() {
            return fail("F_gap", "must be finite and ≥ 0");
        }
        Ok(())
    }

    /// `p = min(ε/ρ, 1)`.
    pub fn p(&self) -> f64 {
        (self.eps / self.rho).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Optimization term, `∝ F_gap / η`.
    pub descent: f64,
    /// Local-drift term, `∝ η² L² H²`.
    pub drift: f64,
    /// Noise term, `∝ L η / n`.
    pub noise: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.descent + self.drift + self.noise
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.descent, self.drift, self.noise]
    }
}

/// The three terms of the explicit bound on `Σ_t ‖∇F(x̄_{t−1})‖² / T`.
pub fn bound_terms(b: &BoundInputs) -> Result<BoundTerms> {
    b.validate()?;
    let t = b.t as f64;
    let p = b.p();
    let p2 = p * p;
    let root = (b.b0sq + t * b.eps * b.eps / p2).sqrt();
    let log_term = b.d as f64 * (b.b0sq + t * b.rho * b.rho).ln();
    let h = b.h as f64;
    Ok(BoundTerms {
        descent: 2.0 * root * b.f_gap / (b.eta * t),
        drift: 4.0 * b.eta * b.eta * b.l * b.l * h * h * root * log_term / (t * p2),
        noise: b.l * b.eta * root * log_term / (b.n as f64 * t * p2),
    })
}

pub fn theorem_bound(b: &BoundInputs) -> Result<f64> {
    Ok(bound_terms(b)?.total())
}

/// Mean of the squared-gradient-norm column.
pub fn avg_sq_grad_norm(records: &[TraceRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Usage("trace is empty".into()));
    }
    let sum: f64 = records.iter().map(|r| r.grad_norm_sq).sum();
    Ok(sum / records.len() as f64)
}

/// `F(x̄_0) − min_t F(x̄_t)` over the trace, used when the infimum is unknown.
pub fn empirical_gap(records: &[TraceRecord], final_loss: Option<f64>) -> Result<f64> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("trace is empty".into()))?
        .loss;
    let min = records
        .iter()
        .map(|r| r.loss)
        .chain(final_loss)
        .fold(f64::INFINITY, f64::min);
    Ok(first - min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub bound_terms: [f64; 3],
    pub bound_total: f64,
    pub measured: f64,
    pub dominated: bool,
}

/// Compare the measured average squared gradient norm against the bound.
pub fn bound_report(inputs: BoundInputs, measured: f64) -> Result<BoundReport> {
    let terms = bound_terms(&inputs)?;
    let total = terms.total();
    Ok(BoundReport {
        inputs,
        bound_terms: terms.as_array(),
        bound_total: total,
        measured,
        dominated: measured <= total,
    })
}

/// Parse bound inputs from flat `key=value` text. Keys: `L rho eps eta H n
/// T b0sq d F_gap`; `T` may be omitted when the caller supplies it.
pub fn parse_bound_inputs(text: &str, default_t: Option<u64>) -> Result<BoundInputs> {
    let mut map = std::collections::BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        const KNOWN: [&str; 10] = ["L", "rho", "eps", "eta", "H", "n", "T", "b0sq", "d", "F_gap"];
        if !KNOWN.contains(&k.as_str()) {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("unknown key `{k}`"),
            });
        }
        if map.insert(k.clone(), (idx + 1, v)).is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    fn get<T: std::str::FromStr>(
        map: &std::collections::BTreeMap<String, (usize, String)>,
        key: &str,
    ) -> Result<Option<T>> {
        match map.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                message: format!("cannot parse `{v}` for `{key}`"),
            }),
        }
    }
    let req = |key: &str| Error::validation(key, "is required");
    let inputs = BoundInputs {
        l: get(&map, "L")?.ok_or_else(|| req("L"))?,
        rho: get(&map, "rho")?.ok_or_else(|| req("rho"))?,
        eps: get(&map, "eps")?.ok_or_else(|| req("eps"))?,
        eta: get(&map, "eta")?.ok_or_else(|| req("eta"))?,
        h: get(&map, "H")?.ok_or_else(|| req("H"))?,
        n: get(&map, "n")?.ok_or_else(|| req("n"))?,
        t: get(&map, "T")?.or(default_t).ok_or_else(|| req("T"))?,
        b0sq: get(&map, "b0sq")?.ok_or_else(|| req("b0sq"))?,
        d: get(&map, "d")?.ok_or_else(|| req("d"))?,
        f_gap: get(&map, "F_gap")?.ok_or_else(|| req("F_gap"))?,
    };
    inputs.validate()?;
    Ok(inputs)
}
