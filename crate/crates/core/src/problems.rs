//! Synthetic objectives with analytic gradients and per-worker data shards.
//!
//! Two families are provided:
//!
//! * the quadratic family `F_i(x) = ½xᵀAx − b_iᵀx + β Σ_j sin(x_j)` where `A`
//!   has a known spectrum (so `L = λ_max(A) + β` is exact for `β = 0` and an
//!   upper bound otherwise) and `b_i` carries the worker heterogeneity;
//! * L2-regularized logistic regression over synthetic Gaussian clusters,
//!   split across workers by [`partition_non_iid`].
//!
//! `F(x)` is always the unweighted mean of the worker objectives `F_i`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{average, ParamVector};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based RNG stream for worker `worker` at iteration `t`.
///
/// The stream depends only on `(seed, worker, t)`, never on how many draws
/// other workers made, so worker steps can run in any order.
pub fn worker_rng(seed: u64, worker: usize, t: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64((worker as u64) ^ splitmix64(t ^ 0x5eed)));
    ChaCha8Rng::seed_from_u64(key)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    SinQuadratic,
    Logistic,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::SinQuadratic => "sin_quadratic",
            ProblemKind::Logistic => "logistic",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "sin_quadratic" => Ok(ProblemKind::SinQuadratic),
            "logistic" => Ok(ProblemKind::Logistic),
            other => Err(format!(
                "unknown problem `{other}` (expected quadratic | sin_quadratic | logistic)"
            )),
        }
    }
}

/// Symmetric matrix `A = Q diag(λ) Q` with `Q` a Householder reflection
/// (or the identity). The spectrum is exact by construction.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    eigenvalues: Vec<f64>,
    reflector: Option<ParamVector>,
}

impl QuadraticForm {
    pub fn diagonal(eigenvalues: Vec<f64>) -> Self {
        Self {
            eigenvalues,
            reflector: None,
        }
    }

    /// `reflector` need not be normalized; it must be nonzero.
    pub fn rotated(eigenvalues: Vec<f64>, reflector: ParamVector) -> Result<Self> {
        reflector.check_dim(eigenvalues.len())?;
        let norm = reflector.norm();
        if !(norm > 0.0) {
            return Err(Error::Domain("reflector must be nonzero".into()));
        }
        Ok(Self {
            eigenvalues,
            reflector: Some(reflector.scale(1.0 / norm)?),
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn reflect(&self, x: &[f64]) -> Vec<f64> {
        match &self.reflector {
            None => x.to_vec(),
            Some(v) => {
                let proj: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
                x.iter().zip(v.iter()).map(|(xi, vi)| xi - 2.0 * proj * vi).collect()
            }
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.reflect(x);
        for (yj, lj) in y.iter_mut().zip(&self.eigenvalues) {
            *yj *= lj;
        }
        self.reflect(&y)
    }

    /// `A⁻¹ b`; requires a positive spectrum.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Domain("quadratic form is not positive definite".into()));
        }
        let mut y = self.reflect(b);
        for (yj, lj) in y.iter_mut().zip(&self.eigenvalues) {
            *yj /= lj;
        }
        Ok(self.reflect(&y))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        0.5 * self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Finite labelled dataset for the logistic problem. Labels are class ids.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Vec<ParamVector>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<ParamVector>, labels: Vec<u8>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Usage("dataset must be nonempty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Dimension {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let d = features[0].dim();
        for f in &features {
            f.check_dim(d)?;
        }
        Ok(Self { features, labels })
    }

    /// Two balanced Gaussian clusters at `±separation · u` for a random unit
    /// direction `u`, unit covariance.
    pub fn gaussian_clusters<R: Rng>(
        samples: usize,
        dim: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if samples == 0 || dim == 0 {
            return Err(Error::Usage("dataset needs samples >= 1 and d >= 1".into()));
        }
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|v| *v /= norm);
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for k in 0..samples {
            let label = (k % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let f: Vec<f64> = dir
                .iter()
                .map(|u| sign * separation * u + rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(ParamVector::new(f));
            labels.push(label);
        }
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }
}

/// One worker's slice of the data.
#[derive(Clone, Debug)]
pub struct Shard {
    pub worker: usize,
    /// Sample indices into the dataset (finite-sum problems only).
    pub indices: Vec<usize>,
    /// Worker-specific linear term `b_i` (quadratic family only).
    pub linear: Option<ParamVector>,
    pub skew: f64,
}

/// Split `dataset` into `n` disjoint shards whose sizes differ by at most one.
///
/// Samples are first ordered by label (ties by index) and cut into `n`
/// contiguous blocks. Shard `i` keeps the first `round(α·|block_i|)` samples
/// of its own block; everything else is pooled, shuffled and dealt out to
/// fill the remaining slots. `α = 0` is a uniform random split and `α = 1`
/// the fully sorted split.
pub fn partition_non_iid<R: Rng>(
    dataset: &Dataset,
    n: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Shard>> {
    if n == 0 {
        return Err(Error::Usage("worker count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("skew must lie in [0, 1], got {alpha}")));
    }
    let m = dataset.len();
    if n > m {
        return Err(Error::Usage(format!(
            "cannot split {m} samples across {n} workers"
        )));
    }
    let mut sorted: Vec<usize> = (0..m).collect();
    sorted.sort_by_key(|&k| (dataset.labels[k], k));

    let sizes: Vec<usize> = (0..n).map(|i| m / n + usize::from(i < m % n)).collect();
    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut pool = Vec::new();
    let mut offset = 0;
    for &size in &sizes {
        let block = &sorted[offset..offset + size];
        let keep = ((alpha * size as f64).round() as usize).min(size);
        kept.push(block[..keep].to_vec());
        pool.extend_from_slice(&block[keep..]);
        offset += size;
    }
    pool.shuffle(rng);
    let mut pool = pool.into_iter();
    let shards = kept
        .into_iter()
        .zip(&sizes)
        .enumerate()
        .map(|(worker, (mut indices, &size))| {
            let missing = size - indices.len();
            indices.extend(pool.by_ref().take(missing));
            Shard {
                worker,
                indices,
                linear: None,
                skew: alpha,
            }
        })
        .collect();
    Ok(shards)
}

#[derive(Clone, Debug)]
enum Objective {
    Quadratic { form: QuadraticForm, beta: f64 },
    Logistic { data: Dataset, l2: f64 },
}

/// Distributed objective: global `F`, per-worker `F_i` and stochastic oracles.
#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    dim: usize,
    objective: Objective,
    shards: Vec<Shard>,
    mean_linear: Option<ParamVector>,
    smoothness: f64,
    clip: Option<f64>,
    noise: f64,
    batch: usize,
}

impl Problem {
    /// Quadratic (`beta == 0`) or sin-perturbed quadratic objective with one
    /// linear term per worker. `noise` is the standard deviation of the
    /// additive Gaussian gradient noise; zero gives exact shard gradients.
    pub fn quadratic_family(
        form: QuadraticForm,
        beta: f64,
        linear_terms: Vec<ParamVector>,
        noise: f64,
        skew: f64,
    ) -> Result<Self> {
        let dim = form.dim();
        if dim == 0 {
            return Err(Error::Usage("dimension must be >= 1".into()));
        }
        if linear_terms.is_empty() {
            return Err(Error::Usage("need at least one worker".into()));
        }
        if !(beta >= 0.0) || !(noise >= 0.0) {
            return Err(Error::Usage("beta and noise must be >= 0".into()));
        }
        for b in &linear_terms {
            b.check_dim(dim)?;
        }
        let mean_linear = average(&linear_terms)?;
        let shards = linear_terms
            .into_iter()
            .enumerate()
            .map(|(worker, b)| Shard {
                worker,
                indices: Vec::new(),
                linear: Some(b),
                skew,
            })
            .collect();
        let kind = if beta > 0.0 {
            ProblemKind::SinQuadratic
        } else {
            ProblemKind::Quadratic
        };
        Ok(Self {
            kind,
            dim,
            smoothness: form.lambda_max().max(0.0) + beta,
            objective: Objective::Quadratic { form, beta },
            shards,
            mean_linear: Some(mean_linear),
            clip: None,
            noise,
            batch: 0,
        })
    }

    /// Logistic regression with labels mapped to ±1. `batch == 0` means every
    /// stochastic gradient uses the whole shard.
    pub fn logistic(data: Dataset, shards: Vec<Shard>, l2: f64, batch: usize) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Usage("need at least one worker".into()));
        }
        if !(l2 >= 0.0) {
            return Err(Error::Usage("l2 must be >= 0".into()));
        }
        for s in &shards {
            if s.indices.is_empty() {
                return Err(Error::Usage(format!("shard {} is empty", s.worker)));
            }
            if s.indices.iter().any(|&k| k >= data.len()) {
                return Err(Error::Usage(format!("shard {} indexes past the dataset", s.worker)));
            }
        }
        let max_sq = data
            .features
            .iter()
            .map(ParamVector::norm_sq)
            .fold(0.0, f64::max);
        Ok(Self {
            kind: ProblemKind::Logistic,
            dim: data.dim(),
            smoothness: 0.25 * max_sq + l2,
            objective: Objective::Logistic { data, l2 },
            shards,
            mean_linear: None,
            clip: None,
            noise: 0.0,
            batch,
        })
    }

    /// Enable coordinate-wise clipping of every emitted stochastic gradient.
    pub fn with_clip(mut self, rho: Option<f64>) -> Result<Self> {
        if let Some(r) = rho {
            if !(r > 0.0) {
                return Err(Error::Usage(format!("clip bound must be > 0, got {r}")));
            }
        }
        self.clip = rho;
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workers(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    /// Smoothness constant `L`: exact for the plain quadratic, an upper bound
    /// otherwise.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn clip(&self) -> Option<f64> {
        self.clip
    }

    /// Analytic minimum of `F` for the plain quadratic with positive spectrum.
    pub fn min_value(&self) -> Option<f64> {
        match (&self.objective, &self.mean_linear) {
            (Objective::Quadratic { form, beta }, Some(b)) if *beta == 0.0 => {
                let xstar = form.solve(b.as_slice()).ok()?;
                Some(-0.5 * b.iter().zip(&xstar).map(|(a, c)| a * c).sum::<f64>())
            }
            _ => None,
        }
    }

    /// Stationary point `A⁻¹ b̄` of the plain quadratic.
    pub fn minimizer(&self) -> Option<ParamVector> {
        match (&self.objective, &self.mean_linear) {
            (Objective::Quadratic { form, beta }, Some(b)) if *beta == 0.0 => {
                form.solve(b.as_slice()).ok().map(ParamVector::new)
            }
            _ => None,
        }
    }

    fn shard(&self, worker: usize) -> Result<&Shard> {
        self.shards.get(worker).ok_or_else(|| {
            Error::Usage(format!(
                "unknown worker {worker} (problem has {} workers)",
                self.shards.len()
            ))
        })
    }

    /// `F(x)`.
    pub fn loss(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        match &self.objective {
            Objective::Quadratic { form, beta } => {
                let b = self.mean_linear.as_ref().expect("quadratic has linear term");
                Ok(quadratic_value(form, *beta, b, x.as_slice()))
            }
            Objective::Logistic { .. } => {
                let mut total = 0.0;
                for s in &self.shards {
                    total += self.shard_loss_unchecked(x, s);
                }
                Ok(total / self.shards.len() as f64)
            }
        }
    }

    /// `F_i(x)` for one worker.
    pub fn shard_loss(&self, x: &ParamVector, worker: usize) -> Result<f64> {
        x.check_dim(self.dim)?;
        let shard = self.shard(worker)?;
        Ok(self.shard_loss_unchecked(x, shard))
    }

    fn shard_loss_unchecked(&self, x: &ParamVector, shard: &Shard) -> f64 {
        match &self.objective {
            Objective::Quadratic { form, beta } => {
                quadratic_value(form, *beta, shard.linear.as_ref().unwrap(), x.as_slice())
            }
            Objective::Logistic { data, l2 } => {
                let mut sum = 0.0;
                for &k in &shard.indices {
                    let margin = signed_label(data.labels[k]) * dot(&data.features[k], x);
                    sum += softplus(-margin);
                }
                sum / shard.indices.len() as f64 + 0.5 * l2 * x.norm_sq()
            }
        }
    }

    /// Exact `∇F(x)`.
    pub fn full_gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        match &self.objective {
            Objective::Quadratic { form, beta } => {
                let b = self.mean_linear.as_ref().expect("quadratic has linear term");
                Ok(quadratic_gradient(form, *beta, b, x.as_slice()))
            }
            Objective::Logistic { .. } => {
                let grads: Vec<ParamVector> = self
                    .shards
                    .iter()
                    .map(|s| self.shard_gradient_unchecked(x, s))
                    .collect();
                average(&grads)
            }
        }
    }

    /// Exact `∇F_i(x)`.
    pub fn shard_gradient(&self, x: &ParamVector, worker: usize) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        let shard = self.shard(worker)?;
        Ok(self.shard_gradient_unchecked(x, shard))
    }

    fn shard_gradient_unchecked(&self, x: &ParamVector, shard: &Shard) -> ParamVector {
        match &self.objective {
            Objective::Quadratic { form, beta } => {
                quadratic_gradient(form, *beta, shard.linear.as_ref().unwrap(), x.as_slice())
            }
            Objective::Logistic { data, l2 } => {
                logistic_gradient(data, shard.indices.iter().copied(), *l2, x)
            }
        }
    }

    /// Unbiased (before clipping) estimate of `∇F_i(x)` drawn from `rng`.
    pub fn stochastic_gradient<R: Rng>(
        &self,
        x: &ParamVector,
        worker: usize,
        rng: &mut R,
    ) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        let shard = self.shard(worker)?;
        let mut g = match &self.objective {
            Objective::Quadratic { .. } => {
                let mut g = self.shard_gradient_unchecked(x, shard);
                if self.noise > 0.0 {
                    for v in g.as_mut_slice() {
                        *v += self.noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                g
            }
            Objective::Logistic { data, l2 } => {
                if self.batch == 0 {
                    self.shard_gradient_unchecked(x, shard)
                } else {
                    let m = shard.indices.len();
                    let picks: Vec<usize> = (0..self.batch)
                        .map(|_| shard.indices[rng.gen_range(0..m)])
                        .collect();
                    logistic_gradient(data, picks.into_iter(), *l2, x)
                }
            }
        };
        if let Some(rho) = self.clip {
            for v in g.as_mut_slice() {
                *v = v.clamp(-rho, rho);
            }
        }
        if !g.is_finite() {
            return Err(Error::Invariant(format!(
                "non-finite stochastic gradient on worker {worker}"
            )));
        }
        Ok(g)
    }

    /// Central-difference approximation of `∇F(x)` with step `h`.
    pub fn finite_diff_gradient(&self, x: &ParamVector, h: f64) -> Result<ParamVector> {
        finite_diff(|p| self.loss(p), x, h)
    }

    /// Debug dump: one row per sample, `worker_id,sample_index,features...,label`.
    pub fn write_shards_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let Objective::Logistic { data, .. } = &self.objective else {
            return Err(Error::Usage(
                "only finite-sum problems have sample shards".into(),
            ));
        };
        let mut header = vec!["worker_id".to_string(), "sample_index".to_string()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        header.push("label".into());
        w.write_record(&header)?;
        for s in &self.shards {
            for &k in &s.indices {
                let mut row = vec![s.worker.to_string(), k.to_string()];
                row.extend(data.features[k].iter().map(|v| v.to_string()));
                row.push(data.labels[k].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Central differences of an arbitrary scalar function.
pub fn finite_diff<F>(f: F, x: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {h}")));
    }
    let mut out = Vec::with_capacity(x.dim());
    let mut probe = x.clone();
    for j in 0..x.dim() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = f(&probe)?;
        probe[j] = orig - h;
        let down = f(&probe)?;
        probe[j] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(ParamVector::new(out))
}

fn dot(a: &ParamVector, b: &ParamVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn signed_label(label: u8) -> f64 {
    if label == 0 {
        -1.0
    } else {
        1.0
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn quadratic_value(form: &QuadraticForm, beta: f64, b: &ParamVector, x: &[f64]) -> f64 {
    let lin: f64 = b.iter().zip(x).map(|(bi, xi)| bi * xi).sum();
    if beta == 0.0 {
        return form.eval(x) - lin;
    }
    let pert: f64 = x.iter().map(|v| v.sin()).sum();
    form.eval(x) - lin + beta * pert
}

fn quadratic_gradient(form: &QuadraticForm, beta: f64, b: &ParamVector, x: &[f64]) -> ParamVector {
    let ax = form.apply(x);
    if beta == 0.0 {
        return ParamVector::new(ax.iter().zip(b.iter()).map(|(a, bi)| a - bi).collect());
    }
    ParamVector::new(
        ax.iter()
            .zip(b.iter())
            .zip(x)
            .map(|((a, bi), xi)| a - bi + beta * xi.cos())
            .collect(),
    )
}

fn logistic_gradient<I>(data: &Dataset, samples: I, l2: f64, x: &ParamVector) -> ParamVector
where
    I: Iterator<Item = usize>,
{
    let mut g = vec![0.0; x.dim()];
    let mut count = 0usize;
    for k in samples {
        let y = signed_label(data.labels[k]);
        let a = &data.features[k];
        // d/dx softplus(-y aᵀx) = -y σ(-y aᵀx) a
        let coef = -y * sigmoid(-y * dot(a, x));
        for (gj, aj) in g.iter_mut().zip(a.iter()) {
            *gj += coef * aj;
        }
        count += 1;
    }
    let inv = 1.0 / count.max(1) as f64;
    ParamVector::new(
        g.iter()
            .zip(x.iter())
            .map(|(gj, xj)| gj * inv + l2 * xj)
            .collect(),
    )
}

/// Parameters from which a [`Problem`] is generated deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dim: usize,
    pub workers: usize,
    /// Largest eigenvalue of `A` (quadratic family).
    pub l_max: f64,
    /// Smallest eigenvalue of `A` (quadratic family).
    pub l_min: f64,
    pub beta: f64,
    pub noise: f64,
    /// Scale of the per-worker linear-term offsets (quadratic family).
    pub hetero: f64,
    pub alpha: f64,
    pub samples: usize,
    pub batch: usize,
    pub l2: f64,
    pub separation: f64,
    pub clip: Option<f64>,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        if self.dim == 0 {
            return Err(Error::Usage("dimension must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Usage("worker count must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x000b_1ec7));
        let problem = match self.kind {
            ProblemKind::Quadratic | ProblemKind::SinQuadratic => {
                if !(self.l_min > 0.0 && self.l_min <= self.l_max) {
                    return Err(Error::Usage(format!(
                        "need 0 < l_min <= l_max, got l_min={} l_max={}",
                        self.l_min, self.l_max
                    )));
                }
                let d = self.dim;
                let eig: Vec<f64> = (0..d)
                    .map(|j| {
                        if d == 1 || j == d - 1 {
                            self.l_max
                        } else {
                            self.l_min + (self.l_max - self.l_min) * j as f64 / (d - 1) as f64
                        }
                    })
                    .collect();
                let reflector: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let form = QuadraticForm::rotated(eig, ParamVector::new(reflector))?;
                let base: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let offsets: Vec<Vec<f64>> = (0..self.workers)
                    .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let n = self.workers as f64;
                let mut centre = vec![0.0; d];
                for o in &offsets {
                    for (c, v) in centre.iter_mut().zip(o) {
                        *c += v;
                    }
                }
                centre.iter_mut().for_each(|c| *c /= n);
                let scale = self.alpha * self.hetero;
                let linear = offsets
                    .iter()
                    .map(|o| {
                        ParamVector::new(
                            base.iter()
                                .zip(o)
                                .zip(&centre)
                                .map(|((b, oj), cj)| b + scale * (oj - cj))
                                .collect(),
                        )
                    })
                    .collect();
                let beta = if self.kind == ProblemKind::SinQuadratic {
                    if !(self.beta > 0.0) {
                        return Err(Error::Usage("sin_quadratic needs beta > 0".into()));
                    }
                    self.beta
                } else {
                    0.0
                };
                Problem::quadratic_family(form, beta, linear, self.noise, self.alpha)?
            }
            ProblemKind::Logistic => {
                let data =
                    Dataset::gaussian_clusters(self.samples, self.dim, self.separation, &mut rng)?;
                let shards = partition_non_iid(&data, self.workers, self.alpha, &mut rng)?;
                Problem::logistic(data, shards, self.l2, self.batch)?
            }
        };
        problem.with_clip(self.clip)
    }
}
