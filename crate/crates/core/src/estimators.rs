//! Ergodic averages and asymptotic-variance estimates.
//!
//! Reported asymptotic variances estimate the CLT variance `2σ_F²` in
//! `√T (T⁻¹∫₀ᵀ F − π(F)) → N(0, 2σ_F²)`. All headers and CSV columns use this
//! convention.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Observable, ObservableND, TargetModel1D};
use crate::poisson::solve_poisson_overdamped_1d;

pub const DEFAULT_BATCHES: usize = 50;
/// Fraction of the simulated time discarded as burn-in by default.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

/// `F(x₁, …, x_n) = (1/n) Σ f(x_i)` for particles stored particle-major.
#[derive(Clone, Debug)]
pub struct ExtendedObservable {
    base: ObservableND,
    n: usize,
}

impl ExtendedObservable {
    pub fn new(base: ObservableND, n: usize) -> Self {
        ExtendedObservable { base, n }
    }

    pub fn base(&self) -> &ObservableND {
        &self.base
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        let d = state.len() / self.n;
        state.chunks(d).map(|x| self.base.value(x)).sum::<f64>() / self.n as f64
    }
}

/// Mean and asymptotic variance of a time series, with 95% confidence
/// half-widths for both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceReport {
    pub mean: f64,
    pub mean_ci: f64,
    /// Estimate of `2σ_F²`.
    pub asym_var: f64,
    pub ci_halfwidth: f64,
    pub n_batches: usize,
    pub replicate_count: usize,
}

impl VarianceReport {
    pub fn interval(&self) -> (f64, f64) {
        (self.asym_var - self.ci_halfwidth, self.asym_var + self.ci_halfwidth)
    }

    /// Whether the asymptotic-variance intervals of `self` and `other` are disjoint.
    pub fn disjoint_from(&self, other: &VarianceReport) -> bool {
        let (a0, a1) = self.interval();
        let (b0, b1) = other.interval();
        a1 < b0 || b1 < a0
    }
}

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(1.96)
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Report from a set of batch means with `batch_time` units of time each.
fn report_from_batch_means(batch_means: &[f64], batch_time: f64) -> VarianceReport {
    let b = batch_means.len();
    let (mean, var) = mean_and_var(batch_means);
    let t = t_quantile_95(b - 1);
    let asym_var = batch_time * var;
    VarianceReport {
        mean,
        mean_ci: t * (var / b as f64).sqrt(),
        asym_var,
        // Normal approximation to the scaled chi-square spread of a variance.
        ci_halfwidth: t * asym_var * (2.0 / (b - 1) as f64).sqrt(),
        n_batches: b,
        replicate_count: 1,
    }
}

/// Batch-means estimate of the asymptotic variance of a series sampled at
/// spacing `dt`. Trailing samples that do not fill a batch are dropped.
pub fn batch_means_variance(series: &[f64], dt: f64, n_batches: usize) -> Result<VarianceReport> {
    if n_batches < 2 {
        return Err(Error::Config("batch means needs at least two batches".into()));
    }
    let needed = 10 * n_batches;
    if series.len() < needed {
        return Err(Error::TooShort {
            len: series.len(),
            needed,
        });
    }
    let len = series.len() / n_batches;
    let means: Vec<f64> = series
        .chunks_exact(len)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    Ok(report_from_batch_means(&means, len as f64 * dt))
}

/// Streaming batch means for a series of known length.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    batch_len: usize,
    n_batches: usize,
    dt: f64,
    current: f64,
    filled: usize,
    means: Vec<f64>,
}

impl BatchAccumulator {
    pub fn new(total_len: usize, n_batches: usize, dt: f64) -> Result<Self> {
        if n_batches < 2 {
            return Err(Error::Config("batch means needs at least two batches".into()));
        }
        let needed = 10 * n_batches;
        if total_len < needed {
            return Err(Error::TooShort { len: total_len, needed });
        }
        Ok(BatchAccumulator {
            batch_len: total_len / n_batches,
            n_batches,
            dt,
            current: 0.0,
            filled: 0,
            means: Vec::with_capacity(n_batches),
        })
    }

    pub fn push(&mut self, v: f64) {
        if self.means.len() == self.n_batches {
            return;
        }
        self.current += v;
        self.filled += 1;
        if self.filled == self.batch_len {
            self.means.push(self.current / self.batch_len as f64);
            self.current = 0.0;
            self.filled = 0;
        }
    }

    pub fn finish(self) -> Result<VarianceReport> {
        if self.means.len() < self.n_batches {
            return Err(Error::TooShort {
                len: self.means.len() * self.batch_len + self.filled,
                needed: self.n_batches * self.batch_len,
            });
        }
        Ok(report_from_batch_means(&self.means, self.batch_len as f64 * self.dt))
    }
}

/// Pools independent replicate reports: the estimate is the replicate
/// average and the interval comes from the spread across replicates.
pub fn pool_reports(reports: &[VarianceReport]) -> Result<VarianceReport> {
    match reports {
        [] => Err(Error::EmptyWindow),
        [single] => Ok(*single),
        _ => {
            let r = reports.len();
            let t = t_quantile_95(r - 1);
            let means: Vec<f64> = reports.iter().map(|x| x.mean).collect();
            let vars: Vec<f64> = reports.iter().map(|x| x.asym_var).collect();
            let (mean, mean_var) = mean_and_var(&means);
            let (asym_var, var_var) = mean_and_var(&vars);
            Ok(VarianceReport {
                mean,
                mean_ci: t * (mean_var / r as f64).sqrt(),
                asym_var,
                ci_halfwidth: t * (var_var / r as f64).sqrt(),
                n_batches: reports[0].n_batches,
                replicate_count: r,
            })
        }
    }
}

/// Seed of replicate `r`, independent of the coupling strength so that every
/// point of a sweep sees the same noise (common random numbers).
pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base_seed ^ (replicate as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of a coupling-strength sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub pooled: VarianceReport,
    pub replicates: Vec<VarianceReport>,
}

/// Runs `run(beta, seed)` for every strength and replicate and pools the
/// replicate reports per strength. Work is spread over the current rayon
/// pool; results are reduced in (beta, replicate) order.
pub fn replicate_sweep<F>(betas: &[f64], n_replicates: usize, base_seed: u64, run: F) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64, u64) -> Result<VarianceReport> + Sync,
{
    if betas.is_empty() || n_replicates == 0 {
        return Err(Error::Config("sweep needs at least one beta and one replicate".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..n_replicates).map(move |r| (b, r)))
        .collect();
    let results: Vec<Result<VarianceReport>> = jobs
        .par_iter()
        .map(|&(b, r)| {
            let seed = replicate_seed(base_seed, r);
            run(betas[b], seed).map_err(|e| Error::Replicate {
                beta: betas[b],
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    let mut results = results.into_iter();
    betas
        .iter()
        .map(|&beta| {
            let replicates = results.by_ref().take(n_replicates).collect::<Result<Vec<_>>>()?;
            Ok(SweepPoint {
                beta,
                pooled: pool_reports(&replicates)?,
                replicates,
            })
        })
        .collect()
}

/// `σ_f² = ⟨f₀, φ⟩_π` from the quadrature Poisson solution.
pub fn one_particle_sigma_quadrature(model: &TargetModel1D, obs: &Observable) -> Result<f64> {
    let ps = solve_poisson_overdamped_1d(model, obs)?;
    Ok(model
        .nodes()
        .iter()
        .zip(model.masses())
        .zip(ps.phi())
        .map(|((&x, &w), &p)| w * obs.centered(x) * p)
        .sum())
}
