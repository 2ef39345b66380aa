//! One-dimensional Poisson equations `-(-V'φ' + φ'') = f₀`, `π(φ) = 0`,
//! solved by quadrature (variation of constants with vanishing constant):
//!
//! ```text
//! φ'(x) = -exp(V(x)) ∫_a^x f₀(s) exp(-V(s)) ds
//! ```
//!
//! Since `π(f₀) = 0` the same quantity equals `exp(V(x)) ∫_x^b f₀ exp(-V)`.
//! Nodes left of the median accumulate from `a`, the rest from `b`, so the
//! cumulative integral is never formed by cancellation in the tails.

use crate::error::{Error, Result};
use crate::model::{Observable, TargetModel1D};

/// Magnitude below which `φ'` is treated as zero when reading off signs.
pub const SIGN_DEAD_BAND: f64 = 1e-9;

const TAIL_MAX_STEPS: usize = 100_000;
const TAIL_CUTOFF: f64 = 1e-17;

/// Grid solution of a one-dimensional Poisson equation.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    nodes: Vec<f64>,
    masses: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    residual: Vec<f64>,
    residual_max: f64,
    /// Nodes where the cumulative integral underflowed; `φ'` is pinned to 0.
    underflow: Vec<bool>,
    centered: bool,
}

impl PoissonSolution {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn dphi(&self) -> &[f64] {
        &self.dphi
    }

    /// Pointwise residual `-(-V'φ' + φ'') - f₀`; zero on excluded nodes.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_max(&self) -> f64 {
        self.residual_max
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn underflow_mask(&self) -> &[bool] {
        &self.underflow
    }

    /// `π(φ)` by quadrature.
    pub fn mean_phi(&self) -> f64 {
        self.phi.iter().zip(&self.masses).map(|(p, m)| p * m).sum()
    }

    /// `φ'` by linear interpolation, clamped to the edge values outside the grid.
    pub fn dphi_at(&self, x: f64) -> f64 {
        interpolate(&self.nodes, &self.dphi, x)
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        interpolate(&self.nodes, &self.phi, x)
    }

    /// Per-node sign of `φ'`, with `|φ'| < 1e-9` mapped to 0.
    pub fn sign_structure(&self) -> SignTable {
        SignTable {
            signs: self.dphi.iter().map(|&d| sign_with_dead_band(d)).collect(),
        }
    }
}

/// Signs of `φ'` per grid node, each in `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignTable {
    pub signs: Vec<i8>,
}

impl SignTable {
    pub fn all_in(&self, allowed: &[i8]) -> bool {
        self.signs.iter().all(|s| allowed.contains(s))
    }
}

pub(crate) fn sign_with_dead_band(v: f64) -> i8 {
    if v.abs() < SIGN_DEAD_BAND {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

pub(crate) fn interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    let (a, b) = (nodes[0], nodes[n - 1]);
    if x <= a {
        return values[0];
    }
    if x >= b {
        return values[n - 1];
    }
    let h = (b - a) / (n - 1) as f64;
    let pos = (x - a) / h;
    let i = (pos.floor() as usize).min(n - 2);
    let t = pos - i as f64;
    values[i] * (1.0 - t) + values[i + 1] * t
}

/// Solves the overdamped Langevin Poisson equation for `obs` on the model grid.
pub fn solve_poisson_overdamped_1d(model: &TargetModel1D, obs: &Observable) -> Result<PoissonSolution> {
    if !obs.mean().is_finite() {
        return Err(Error::NonFinite("observable mean".into()));
    }
    let nodes = model.nodes().to_vec();
    let masses = model.masses().to_vec();
    let n = nodes.len();
    let h = model.spacing();

    let v: Vec<f64> = nodes.iter().map(|&x| model.potential(x)).collect();
    let v_ref = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let f0: Vec<f64> = nodes.iter().map(|&x| obs.centered(x)).collect();
    if let Some(i) = f0.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFiniteIntegrand { x: nodes[i] });
    }
    // g = f₀ exp(-(V - V_ref)) and its derivative for the endpoint correction.
    let g: Vec<f64> = (0..n).map(|i| f0[i] * (v_ref - v[i]).exp()).collect();
    let dg: Vec<f64> = (0..n)
        .map(|i| {
            let x = nodes[i];
            (obs.derivative(x) - model.grad_potential(x) * f0[i]) * (v_ref - v[i]).exp()
        })
        .collect();

    // Per-segment integrals: trapezoid plus the Euler-Maclaurin end term.
    let segment: Vec<f64> = (0..n - 1)
        .map(|i| 0.5 * h * (g[i] + g[i + 1]) - h * h / 12.0 * (dg[i + 1] - dg[i]))
        .collect();

    // Mass of g beyond each end. Without it the truncation imposes
    // φ'(a) = φ'(b) = 0 and a boundary layer of width ~1/|V'| forms at the
    // edges. The tail is integrated by Simpson's rule past the domain until
    // the integrand is negligible; the leading asymptotic term is the
    // fallback when the integrand stops being finite or decays too slowly.
    let integrand = |x: f64| obs.centered(x) * (v_ref - model.potential(x)).exp();
    let tail = |end: f64, g: f64, dg: f64, outward: f64| {
        let asymptotic = if g != 0.0 && outward * g * dg < 0.0 {
            -outward * g * g / dg
        } else {
            0.0
        };
        if g == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..TAIL_MAX_STEPS {
            let x0 = end + outward * k as f64 * h;
            let (a, m, b) = (
                integrand(x0),
                integrand(x0 + outward * 0.5 * h),
                integrand(x0 + outward * h),
            );
            if !(a.is_finite() && m.is_finite() && b.is_finite()) {
                return asymptotic;
            }
            total += h / 6.0 * (a + 4.0 * m + b);
            if b.abs() <= TAIL_CUTOFF * g.abs() {
                return total;
            }
        }
        asymptotic
    };
    let mut from_left = vec![0.0; n];
    from_left[0] = tail(nodes[0], g[0], dg[0], -1.0);
    for i in 1..n {
        from_left[i] = from_left[i - 1] + segment[i - 1];
    }
    let mut from_right = vec![0.0; n];
    from_right[n - 1] = tail(nodes[n - 1], g[n - 1], dg[n - 1], 1.0);
    for i in (0..n - 1).rev() {
        from_right[i] = from_right[i + 1] + segment[i];
    }

    let mut cumulative_mass = 0.0;
    let mut dphi = vec![0.0; n];
    let mut underflow = vec![false; n];
    for i in 0..n {
        cumulative_mass += masses[i];
        // Φ(x) = -∫_a^x g = ∫_x^b g
        let big_phi = if cumulative_mass <= 0.5 {
            -from_left[i]
        } else {
            from_right[i]
        };
        if big_phi == 0.0 || big_phi.abs() < f64::MIN_POSITIVE {
            underflow[i] = f0.iter().any(|&y| y != 0.0);
            continue;
        }
        let log_mag = v[i] - v_ref + big_phi.abs().ln();
        let val = big_phi.signum() * log_mag.exp();
        if !val.is_finite() {
            return Err(Error::UnstableTail { x: nodes[i] });
        }
        dphi[i] = val;
    }

    let mut phi = vec![0.0; n];
    for i in 1..n {
        phi[i] = phi[i - 1] + 0.5 * h * (dphi[i - 1] + dphi[i]);
    }
    let mean: f64 = phi.iter().zip(&masses).map(|(p, m)| p * m).sum();
    phi.iter_mut().for_each(|p| *p -= mean);

    let mut residual = vec![0.0; n];
    let mut residual_max: f64 = 0.0;
    for i in 1..n - 1 {
        if underflow[i - 1] || underflow[i] || underflow[i + 1] {
            continue;
        }
        let d2 = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (h * h);
        let r = -(-model.grad_potential(nodes[i]) * dphi[i] + d2) - f0[i];
        residual[i] = r;
        residual_max = residual_max.max(r.abs());
    }

    Ok(PoissonSolution {
        nodes,
        masses,
        phi,
        dphi,
        residual,
        residual_max,
        underflow,
        centered: true,
    })
}

/// Solves the auxiliary zigzag equation for `φ̃`. Its derivative obeys the same
/// first-order equation as the overdamped `φ'`, so the solutions coincide.
pub fn solve_poisson_zigzag_1d(model: &TargetModel1D, obs: &Observable) -> Result<PoissonSolution> {
    solve_poisson_overdamped_1d(model, obs)
}
