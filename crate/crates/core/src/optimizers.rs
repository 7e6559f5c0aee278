//! Single-step update rules. Every function here is pure: state goes in,
//! new state comes out, and nothing knows about scheduling or workers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{hadamard, inv_sqrt_shifted, ParamVector};

/// Per-worker accumulator state for the lazy-denominator update.
///
/// `a2` is the running accumulator (`B²_{i,t}` between synchronizations),
/// `b2_sync` the snapshot taken at the last synchronization. The step rule
/// reads `b2_sync` and never writes it; only a synchronization does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccumulatorState {
    pub a2: ParamVector,
    pub b2_sync: ParamVector,
    pub b0sq: f64,
    pub epssq: f64,
}

impl AccumulatorState {
    pub fn new(dim: usize, b0sq: f64, epssq: f64) -> Result<Self> {
        if !(b0sq >= 0.0) || !(epssq >= 0.0) {
            return Err(Error::Domain(format!(
                "accumulator init needs b0sq >= 0 and epssq >= 0, got {b0sq}, {epssq}"
            )));
        }
        Ok(Self {
            a2: ParamVector::filled(dim, b0sq),
            b2_sync: ParamVector::filled(dim, b0sq),
            b0sq,
            epssq,
        })
    }

    /// Current `B²_{i,t}`; equal to the running accumulator.
    pub fn b2(&self) -> &ParamVector {
        &self.a2
    }

    /// Adopt a synchronized accumulator as both running value and snapshot.
    pub fn reset_to(&mut self, synced: ParamVector) {
        self.b2_sync = synced.clone();
        self.a2 = synced;
    }

    /// Check `a2 ≥ b2_sync ≥ b0sq` coordinate-wise.
    pub fn check(&self) -> Result<()> {
        for (j, (a, b)) in self.a2.iter().zip(self.b2_sync.iter()).enumerate() {
            if !(a >= b && *b >= self.b0sq) {
                return Err(Error::Invariant(format!(
                    "accumulator ordering broken at coordinate {j}: a2={a} b2_sync={b} b0sq={}",
                    self.b0sq
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    /// Effective learning rate for this step.
    pub eta: f64,
    /// 1-based iteration index.
    pub t: u64,
    /// Synchronization period; `None` means the workers never synchronize.
    pub period: Option<u64>,
}

impl StepParams {
    pub fn new(eta: f64, t: u64, period: Option<u64>) -> Self {
        Self { eta, t, period }
    }

    /// Learning rate from `eta_base` with the linear warm-up applied
    /// (`warm_up_steps == 0` disables warm-up).
    pub fn scheduled(eta_base: f64, t: u64, period: Option<u64>, warm_up_steps: u64) -> Self {
        let eta = if warm_up_steps == 0 {
            eta_base
        } else {
            warmup_lr(t, eta_base, warm_up_steps)
        };
        Self { eta, t, period }
    }

    pub fn local_step(&self) -> u64 {
        match self.period {
            Some(h) => local_step_counter(self.t, h),
            None => self.t,
        }
    }
}

/// `t′ = mod(t − 1, H) + 1`: steps since the last sync, counting this one.
pub fn local_step_counter(t: u64, period: u64) -> u64 {
    assert!(t >= 1 && period >= 1, "need t >= 1 and H >= 1");
    (t - 1) % period + 1
}

/// One lazy-denominator local step.
///
/// `y = x − η G / sqrt(B²_sync + t′ε²)` and `A² ← A² + G∘G`.
pub fn adaalter_local_step(
    x: &ParamVector,
    acc: &AccumulatorState,
    grad: &ParamVector,
    sp: &StepParams,
) -> Result<(ParamVector, AccumulatorState)> {
    grad.check_dim(x.dim())?;
    acc.a2.check_dim(x.dim())?;
    acc.b2_sync.check_dim(x.dim())?;
    let shift = sp.local_step() as f64 * acc.epssq;
    let dim = x.dim();
    let mut y = Vec::with_capacity(dim);
    let mut a2 = Vec::with_capacity(dim);
    for j in 0..dim {
        let radicand = acc.b2_sync[j] + shift;
        if !(radicand > 0.0) {
            return Err(Error::Invariant(format!(
                "lazy denominator: nonpositive radicand {radicand} at coordinate {j}"
            )));
        }
        let g = grad[j];
        y.push(x[j] + -sp.eta * (g * (1.0 / radicand.sqrt())));
        a2.push(acc.a2[j] + g * g);
    }
    let (y, a2) = (ParamVector::new(y), ParamVector::new(a2));
    if !y.is_finite() || !a2.is_finite() {
        return Err(Error::Invariant("non-finite local step".into()));
    }
    let next = AccumulatorState {
        a2,
        b2_sync: acc.b2_sync.clone(),
        b0sq: acc.b0sq,
        epssq: acc.epssq,
    };
    Ok((y, next))
}

/// One step of AdaGrad on the already-averaged gradient. The accumulator is
/// updated before it is used.
pub fn adagrad_step(
    x: &ParamVector,
    b2: &ParamVector,
    grad_avg: &ParamVector,
    eta: f64,
    epssq: f64,
) -> Result<(ParamVector, ParamVector)> {
    grad_avg.check_dim(x.dim())?;
    b2.check_dim(x.dim())?;
    let b2_next = b2.axpy(1.0, &hadamard(grad_avg, grad_avg)?)?;
    let inv = inv_sqrt_shifted(&b2_next, epssq)?;
    let x_next = x.axpy(-eta, &hadamard(grad_avg, &inv)?)?;
    Ok((x_next, b2_next))
}

pub fn local_sgd_step(x: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    x.axpy(-eta, grad)
}

/// `η · min(1, t / warm_up_steps)`.
pub fn warmup_lr(t: u64, eta: f64, warm_up_steps: u64) -> f64 {
    assert!(warm_up_steps >= 1, "warm_up_steps must be >= 1");
    if t >= warm_up_steps {
        eta
    } else {
        eta * (t as f64 / warm_up_steps as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScaleMode {
    None,
    Linear,
    Sqrt,
}

impl fmt::Display for LrScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrScaleMode::None => "none",
            LrScaleMode::Linear => "linear",
            LrScaleMode::Sqrt => "sqrt",
        })
    }
}

impl FromStr for LrScaleMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(LrScaleMode::None),
            "linear" => Ok(LrScaleMode::Linear),
            "sqrt" => Ok(LrScaleMode::Sqrt),
            other => Err(format!(
                "unknown scaling mode `{other}` (expected none | linear | sqrt)"
            )),
        }
    }
}

/// Rescale a base learning rate for a batch-size multiplier `k`.
pub fn scale_lr(eta_base: f64, k: f64, mode: LrScaleMode) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("batch multiplier must be > 0, got {k}")));
    }
    Ok(match mode {
        LrScaleMode::None => eta_base,
        LrScaleMode::Linear => eta_base * k,
        LrScaleMode::Sqrt => eta_base * k.sqrt(),
    })
}
