//! Finite-difference spectrum of the one-dimensional overdamped generator.
//!
//! `−L = ∂ₓ*∂ₓ` is discretized in flux form with interface weights
//! `√(wᵢ wᵢ₊₁)`, `wᵢ = e^{−V(xᵢ)}`, and Dirichlet conditions at the domain
//! edges. Conjugating by `diag(√w)` turns the π-self-adjoint matrix into a
//! symmetric tridiagonal one with off-diagonals `−1/h²` and diagonal
//! `(e^{−(Vᵢ₊₁−Vᵢ)/2} + e^{−(Vᵢ₋₁−Vᵢ)/2}) / h²`. Eigenvalues come from Sturm
//! bisection and eigenvectors from inverse iteration.
//!
//! The lowest discrete mode approximates the constant function (its
//! eigenvalue is exponentially small in the truncation radius) and is
//! dropped, so reported eigenvalues are those of `−L` on `L²₀(π)`.
//!
//! Under a full mirror coupling odd functions are annihilated in the coupled
//! quotient space, so the coupled rate is the smallest eigenvalue with an
//! even eigenfunction.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::t_quantile_95;
use crate::model::TargetModel1D;

/// Minimum overlap `|⟨v, Pv⟩| / ⟨v, v⟩` for a parity classification.
pub const PARITY_OVERLAP: f64 = 0.99;

/// Symmetric tridiagonal form of `−L` on the interior nodes.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    /// Interior nodes.
    pub nodes: Vec<f64>,
    pub diag: Vec<f64>,
    /// Off-diagonal entries (all equal to `−1/h²`).
    pub off: Vec<f64>,
    /// `√wᵢ` on the interior nodes, scaled so the largest is one.
    pub sqrt_weight: Vec<f64>,
    pub spacing: f64,
}

impl DiscreteGenerator {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }

    /// The unsymmetrized matrix `A = D^{-1/2} S D^{1/2}` acting on nodal
    /// values; `diag(w) A` is symmetric.
    pub fn weighted_form(&self) -> DMatrix<f64> {
        let s = &self.sqrt_weight;
        let mut a = self.to_dense();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                a[(i, j)] *= s[j] / s[i];
            }
        }
        a
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.dim() {
            let off2 = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            q = self.diag[i] - x - if i == 0 { 0.0 } else { off2 / q };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + x.abs()).max(1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection.
    fn eigenvalue(&self, k: usize) -> f64 {
        let radius = self
            .diag
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let l = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let r = if i + 1 < self.dim() { self.off[i].abs() } else { 0.0 };
                (d - l - r, d + l + r)
            })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            });
        let (mut lo, mut hi) = radius;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvector for an eigenvalue estimate by inverse iteration.
    fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.dim();
        let shift = lambda + 1e-10 * (1.0 + lambda.abs());
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 * 1e-3).collect();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for _ in 0..4 {
            // Thomas algorithm on (T − shift I) x = v.
            let mut denom = self.diag[0] - shift;
            if denom == 0.0 {
                denom = 1e-300;
            }
            c[0] = if n > 1 { self.off[0] / denom } else { 0.0 };
            d[0] = v[0] / denom;
            for i in 1..n {
                let mut den = self.diag[i] - shift - self.off[i - 1] * c[i - 1];
                if den == 0.0 {
                    den = 1e-300;
                }
                c[i] = if i + 1 < n { self.off[i] / den } else { 0.0 };
                d[i] = (v[i] - self.off[i - 1] * d[i - 1]) / den;
            }
            v[n - 1] = d[n - 1];
            for i in (0..n - 1).rev() {
                v[i] = d[i] - c[i] * v[i + 1];
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
        }
        v
    }
}

/// Discretizes `−L` for `model` with `grid_size` nodes on its domain.
pub fn discretize_generator(model: &TargetModel1D, grid_size: usize) -> Result<DiscreteGenerator> {
    if grid_size < 4 {
        return Err(Error::Config("generator grid needs at least four nodes".into()));
    }
    let (a, b) = model.domain();
    let h = (b - a) / (grid_size - 1) as f64;
    let all: Vec<f64> = (0..grid_size).map(|i| a + i as f64 * h).collect();
    let v: Vec<f64> = all.iter().map(|&x| model.potential(x)).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("potential on generator grid".into()));
    }
    let h2 = h * h;
    let interior = 1..grid_size - 1;
    let diag: Vec<f64> = interior
        .clone()
        .map(|i| ((-(v[i + 1] - v[i]) / 2.0).exp() + (-(v[i - 1] - v[i]) / 2.0).exp()) / h2)
        .collect();
    let off = vec![-1.0 / h2; grid_size - 3];
    let vmin = v[1..grid_size - 1].iter().cloned().fold(f64::INFINITY, f64::min);
    let sqrt_weight = interior.clone().map(|i| (-(v[i] - vmin) / 2.0).exp()).collect();
    Ok(DiscreteGenerator {
        nodes: all[1..grid_size - 1].to_vec(),
        diag,
        off,
        sqrt_weight,
        spacing: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
            Parity::None => "none",
        }
    }
}

/// Parity of a symmetrized eigenvector on a grid symmetric about 0.
pub fn classify_parity(nodes: &[f64], v: &[f64]) -> (Parity, f64) {
    let n = v.len();
    let symmetric = nodes
        .iter()
        .zip(nodes.iter().rev())
        .all(|(a, b)| (a + b).abs() <= 1e-9 * (1.0 + a.abs()));
    if !symmetric {
        return (Parity::None, 0.0);
    }
    let norm: f64 = v.iter().map(|a| a * a).sum();
    let overlap: f64 = (0..n).map(|i| v[i] * v[n - 1 - i]).sum::<f64>() / norm;
    let parity = if overlap >= PARITY_OVERLAP {
        Parity::Even
    } else if overlap <= -PARITY_OVERLAP {
        Parity::Odd
    } else {
        Parity::None
    };
    (parity, overlap.abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    /// `μ₁ ≤ μ₂ ≤ …` of `−L` on mean-zero functions.
    pub eigenvalues: Vec<f64>,
    pub parities: Vec<Parity>,
    pub overlaps: Vec<f64>,
    /// `μ₁`.
    pub one_particle_rate: f64,
    /// Eigenvalue of the dropped constant mode.
    pub ground_eigenvalue: f64,
    pub even_potential: bool,
    pub grid_size: usize,
    /// Eigenfunctions of `−L` (nodal values on the interior grid,
    /// normalized in `L²(π)` up to a common constant).
    #[serde(skip)]
    pub eigenfunctions: Vec<Vec<f64>>,
    #[serde(skip)]
    pub nodes: Vec<f64>,
}

/// The lowest `n_modes` nonzero eigenpairs of `−L`.
pub fn spectral_report(model: &TargetModel1D, grid_size: usize, n_modes: usize) -> Result<SpectralReport> {
    let gen = discretize_generator(model, grid_size)?;
    if n_modes + 1 > gen.dim() {
        return Err(Error::Config(format!(
            "requested {n_modes} modes from a {}-node grid",
            gen.dim()
        )));
    }
    let even_potential = model.is_even(1e-10);
    let ground_eigenvalue = gen.eigenvalue(0);
    let mut eigenvalues = Vec::with_capacity(n_modes);
    let mut parities = Vec::with_capacity(n_modes);
    let mut overlaps = Vec::with_capacity(n_modes);
    let mut eigenfunctions = Vec::with_capacity(n_modes);
    for k in 1..=n_modes {
        let mu = gen.eigenvalue(k);
        let v = gen.eigenvector(mu);
        let (p, o) = if even_potential {
            classify_parity(&gen.nodes, &v)
        } else {
            (Parity::None, 0.0)
        };
        eigenvalues.push(mu);
        parities.push(p);
        overlaps.push(o);
        eigenfunctions.push(v.iter().zip(&gen.sqrt_weight).map(|(a, s)| a / s.max(1e-300)).collect());
    }
    Ok(SpectralReport {
        one_particle_rate: eigenvalues[0],
        eigenvalues,
        parities,
        overlaps,
        ground_eigenvalue,
        even_potential,
        grid_size,
        eigenfunctions,
        nodes: gen.nodes,
    })
}

/// Smallest eigenvalue whose eigenfunction is even.
pub fn coupled_rate_mirror(report: &SpectralReport) -> Result<f64> {
    if !report.even_potential {
        return Err(Error::ParityAmbiguity);
    }
    let checked = report.parities.len().min(5);
    if report.parities[..checked].contains(&Parity::None) {
        return Err(Error::ParityAmbiguity);
    }
    report
        .eigenvalues
        .iter()
        .zip(&report.parities)
        .find(|(_, p)| **p == Parity::Even)
        .map(|(mu, _)| *mu)
        .ok_or(Error::ParityAmbiguity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayFlag {
    Ok,
    /// Non-positive autocovariance inside the lag window.
    Inconclusive,
    /// The series has (numerically) zero variance.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRate {
    pub rate: f64,
    pub ci: f64,
    pub flag: DecayFlag,
}

fn autocovariance(series: &[f64], mean: f64, lag: usize) -> f64 {
    let n = series.len() - lag;
    (0..n)
        .map(|i| (series[i] - mean) * (series[i + lag] - mean))
        .sum::<f64>()
        / n as f64
}

/// Least-squares slope of `−log C(τ)` over the lag window; `None` when some
/// autocovariance is not positive.
fn fit_rate(series: &[f64], dt: f64, lags: &[usize]) -> Option<f64> {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let mut pts = Vec::with_capacity(lags.len());
    for &l in lags {
        let c = autocovariance(series, mean, l);
        if !(c > 0.0) {
            return None;
        }
        pts.push((l as f64 * dt, c.ln()));
    }
    let n = pts.len() as f64;
    let tx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ty = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Exponential decay rate of the autocovariance of a stationary series,
/// fitted on lags in `[lag_min, lag_max]` (time units). The interval comes
/// from independent fits on `segments` contiguous pieces of the series.
pub fn empirical_decay_rate(series: &[f64], dt: f64, lag_min: f64, lag_max: f64, segments: usize) -> Result<DecayRate> {
    if !(lag_max > lag_min && lag_min >= 0.0 && dt > 0.0) || segments < 2 {
        return Err(Error::Config(
            "decay fit needs 0 <= lag_min < lag_max, dt > 0, segments >= 2".into(),
        ));
    }
    let (l0, l1) = ((lag_min / dt).round() as usize, (lag_max / dt).round() as usize);
    let seg_len = series.len() / segments;
    if seg_len < 10 * l1.max(1) {
        return Err(Error::TooShort {
            len: series.len(),
            needed: segments * 10 * l1.max(1),
        });
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / series.len() as f64;
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if var <= 1e-24 * (1.0 + scale * scale) {
        return Ok(DecayRate {
            rate: f64::NAN,
            ci: f64::NAN,
            flag: DecayFlag::Degenerate,
        });
    }
    let n_lags = 12.min(l1 - l0 + 1).max(2);
    let lags: Vec<usize> = (0..n_lags)
        .map(|k| l0 + ((l1 - l0) as f64 * k as f64 / (n_lags - 1) as f64).round() as usize)
        .collect();
    let inconclusive = DecayRate {
        rate: f64::NAN,
        ci: f64::NAN,
        flag: DecayFlag::Inconclusive,
    };
    let Some(rate) = fit_rate(series, dt, &lags) else {
        return Ok(inconclusive);
    };
    let mut seg_rates = Vec::with_capacity(segments);
    for s in series.chunks_exact(seg_len).take(segments) {
        match fit_rate(s, dt, &lags) {
            Some(r) => seg_rates.push(r),
            None => return Ok(DecayRate { rate, ..inconclusive }),
        }
    }
    let k = seg_rates.len() as f64;
    let m = seg_rates.iter().sum::<f64>() / k;
    let sd = (seg_rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(DecayRate {
        rate,
        ci: t_quantile_95(seg_rates.len() - 1) * sd / k.sqrt(),
        flag: DecayFlag::Ok,
    })
}
