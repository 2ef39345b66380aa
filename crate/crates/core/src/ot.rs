//! Entropic optimal transport between grid marginals, used as a lower bound
//! on the cost `∫ c dπ̄` over all couplings of two copies of `π`.
//!
//! For a pair of particles the cost is `c(x, y) = (f₀(x)φ(y) + φ(x)f₀(y)) / 4`,
//! the image of `ξ = φ(x)φ(y)/4` under `−L̄₀` after using `Lφ = −f₀`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::batch_means_variance;
use crate::model::{Observable, TargetModel1D};
use crate::poisson::PoissonSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarginal {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMarginal {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::Config("marginal needs equally many nodes and weights".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("marginal weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("marginal weights sum to {total}, expected 1")));
        }
        Ok(DiscreteMarginal { nodes, weights })
    }

    /// Trapezoid masses of `e^{-V}` on `size` equispaced nodes of `[lo, hi]`,
    /// normalized to one.
    pub fn from_model(model: &TargetModel1D, lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < 2 || !(hi > lo) {
            return Err(Error::Config(
                "marginal grid needs at least two nodes on a proper interval".into(),
            ));
        }
        let h = (hi - lo) / (size - 1) as f64;
        let nodes: Vec<f64> = (0..size).map(|i| lo + i as f64 * h).collect();
        let mut weights: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let edge = if i == 0 || i == size - 1 { 0.5 } else { 1.0 };
                edge * h * model.density(x)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        DiscreteMarginal::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// The pair cost `c(x, y)` built from an observable and its Poisson solution.
#[derive(Clone, Debug)]
pub struct PairCost {
    obs: Observable,
    poisson: std::sync::Arc<PoissonSolution>,
}

impl PairCost {
    pub fn new(obs: Observable, poisson: std::sync::Arc<PoissonSolution>) -> Self {
        PairCost { obs, poisson }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (self.obs.centered(x), self.obs.centered(y));
        0.25 * (fx * self.poisson.phi_at(y) + self.poisson.phi_at(x) * fy)
    }
}

/// Largest gap between the closed-form cost and a finite-difference
/// evaluation of `−L̄₀ξ` on a coarse interior grid.
pub fn cost_self_check(model: &TargetModel1D, cost: &PairCost) -> f64 {
    let (a, b) = model.domain();
    let half = 0.25 * (b - a);
    let mid = 0.5 * (a + b);
    let step = 20.0 * model.spacing();
    let xi = |x: f64, y: f64| 0.25 * cost.poisson.phi_at(x) * cost.poisson.phi_at(y);
    let gen = |x: f64, y: f64| {
        let dx = (xi(x + step, y) - xi(x - step, y)) / (2.0 * step);
        let dy = (xi(x, y + step) - xi(x, y - step)) / (2.0 * step);
        let dxx = (xi(x + step, y) - 2.0 * xi(x, y) + xi(x - step, y)) / (step * step);
        let dyy = (xi(x, y + step) - 2.0 * xi(x, y) + xi(x, y - step)) / (step * step);
        -model.grad_potential(x) * dx + dxx - model.grad_potential(y) * dy + dyy
    };
    let mut worst: f64 = 0.0;
    for i in 0..9 {
        for j in 0..9 {
            let x = mid - half + i as f64 * half / 4.0;
            let y = mid - half + j as f64 * half / 4.0;
            let scale = 1.0 + cost.eval(x, y).abs();
            worst = worst.max((-gen(x, y) - cost.eval(x, y)).abs() / scale);
        }
    }
    worst
}

/// Cost matrix on `grid_x × grid_y`. Fails if the closed form disagrees with
/// the finite-difference generator by more than `1e-2`.
pub fn assemble_cost(
    model: &TargetModel1D,
    obs: &Observable,
    poisson: &std::sync::Arc<PoissonSolution>,
    grid_x: &[f64],
    grid_y: &[f64],
) -> Result<DMatrix<f64>> {
    let cost = PairCost::new(obs.clone(), poisson.clone());
    let gap = cost_self_check(model, &cost);
    if gap > 1e-2 {
        return Err(Error::Assertion(format!("cost self-check gap {gap:.3e} exceeds 1e-2")));
    }
    Ok(DMatrix::from_fn(grid_x.len(), grid_y.len(), |i, j| {
        cost.eval(grid_x[i], grid_y[j])
    }))
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub cost_value: f64,
    /// L1 distance of the row sums from the first marginal (columns are exact).
    pub marginal_error: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Value of a feasible dual of the unregularized problem: a certified
    /// lower bound on the discrete optimum.
    pub dual_lower_bound: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn iterations, optionally warm-started from potentials.
fn sinkhorn_from(
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
    warm: Option<(&[f64], &[f64])>,
) -> Result<TransportPlan> {
    let (m, n) = (mu.len(), nu.len());
    if cost.nrows() != m || cost.ncols() != n {
        return Err(Error::Config(format!(
            "cost is {}x{}, marginals {m} and {n}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    let ln_mu: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let ln_nu: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();
    let (mut f, mut g) = match warm {
        Some((f0, g0)) if f0.len() == m && g0.len() == n => (f0.to_vec(), g0.to_vec()),
        _ => (vec![0.0; m], vec![0.0; n]),
    };
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let row_error = |f: &[f64], g: &[f64]| -> f64 {
        (0..m)
            .map(|i| {
                if mu.weights()[i] == 0.0 {
                    return 0.0;
                }
                let row: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - cost[(i, j)]) / epsilon + ln_mu[i] + ln_nu[j]).exp())
                    .sum();
                (row - mu.weights()[i]).abs()
            })
            .sum()
    };
    while iterations < max_iters {
        iterations += 1;
        for i in 0..m {
            f[i] = -epsilon * log_sum_exp((0..n).map(|j| (g[j] - cost[(i, j)]) / epsilon + ln_nu[j]));
        }
        for j in 0..n {
            g[j] = -epsilon * log_sum_exp((0..m).map(|i| (f[i] - cost[(i, j)]) / epsilon + ln_mu[i]));
        }
        if iterations % 10 == 0 || iterations == max_iters {
            err = row_error(&f, &g);
            if err < tol {
                break;
            }
        }
    }
    if !err.is_finite() || err >= tol {
        err = row_error(&f, &g);
    }
    let plan = DMatrix::from_fn(m, n, |i, j| {
        ((f[i] + g[j] - cost[(i, j)]) / epsilon + ln_mu[i] + ln_nu[j]).exp()
    });
    let cost_value = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    // c-transform of g gives a feasible pair (f̂, g) with f̂_i + g_j ≤ c_ij.
    let dual_lower_bound = (0..m)
        .filter(|&i| mu.weights()[i] > 0.0)
        .map(|i| {
            let fhat = (0..n)
                .filter(|&j| nu.weights()[j] > 0.0)
                .map(|j| cost[(i, j)] - g[j])
                .fold(f64::INFINITY, f64::min);
            mu.weights()[i] * fhat
        })
        .sum::<f64>()
        + g.iter()
            .zip(nu.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(gj, w)| gj * w)
            .sum::<f64>();
    Ok(TransportPlan {
        plan,
        cost_value,
        marginal_error: err,
        epsilon,
        converged: err < tol,
        iterations,
        dual_lower_bound,
        f,
        g,
    })
}

/// Entropic optimal transport plan by log-domain Sinkhorn scaling.
pub fn sinkhorn(
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    sinkhorn_from(mu, nu, cost, epsilon, max_iters, tol, None)
}

/// `max c − min c`.
pub fn cost_range(cost: &DMatrix<f64>) -> f64 {
    cost.max() - cost.min()
}

/// Solves along a geometric ladder of decreasing `ε`, warm-starting each
/// stage from the previous potentials. Returns every stage.
pub fn sinkhorn_ladder(
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
    cost: &DMatrix<f64>,
    eps_start: f64,
    eps_target: f64,
    factor: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Vec<TransportPlan>> {
    if !(eps_start >= eps_target && eps_target > 0.0 && factor > 0.0 && factor < 1.0) {
        return Err(Error::Config(
            "ladder needs eps_start >= eps_target > 0 and 0 < factor < 1".into(),
        ));
    }
    let mut stages: Vec<TransportPlan> = Vec::new();
    let mut eps = eps_start;
    loop {
        let warm = stages.last().map(|p| (p.f.as_slice(), p.g.as_slice()));
        let plan = sinkhorn_from(mu, nu, cost, eps, max_iters, tol, warm)?;
        stages.push(plan);
        if eps <= eps_target {
            break;
        }
        eps = (eps * factor).max(eps_target);
    }
    Ok(stages)
}

/// Fractions of plan mass with `|x − y| < δ` and with `|x + y| < δ`.
pub fn plan_diagonal_mass(plan: &DMatrix<f64>, grid_x: &[f64], grid_y: &[f64], delta: f64) -> (f64, f64) {
    let (mut near_main, mut near_anti, mut total) = (0.0, 0.0, 0.0);
    for i in 0..grid_x.len() {
        for j in 0..grid_y.len() {
            let p = plan[(i, j)];
            total += p;
            if (grid_x[i] - grid_y[j]).abs() < delta {
                near_main += p;
            }
            if (grid_x[i] + grid_y[j]).abs() < delta {
                near_anti += p;
            }
        }
    }
    (near_main / total, near_anti / total)
}

/// Fractions of samples with `|x − y| < δ` and with `|x + y| < δ`.
pub fn empirical_diagonal_mass(samples: &[(f64, f64)], delta: f64) -> (f64, f64) {
    let n = samples.len().max(1) as f64;
    let main = samples.iter().filter(|(x, y)| (x - y).abs() < delta).count() as f64;
    let anti = samples.iter().filter(|(x, y)| (x + y).abs() < delta).count() as f64;
    (main / n, anti / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalCost {
    pub mean: f64,
    pub ci: f64,
    pub samples: usize,
}

/// Average of `cost` over a (time-ordered) sample of a coupled run, with a
/// batch-means confidence interval.
pub fn plan_cost_of_empirical(
    samples: &[(f64, f64)],
    cost: impl Fn(f64, f64) -> f64,
    n_batches: usize,
) -> Result<EmpiricalCost> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let values: Vec<f64> = samples.iter().map(|&(x, y)| cost(x, y)).collect();
    let r = batch_means_variance(&values, 1.0, n_batches)?;
    Ok(EmpiricalCost {
        mean: r.mean,
        ci: r.mean_ci,
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_gaussian_model;
    use crate::poisson::solve_poisson_overdamped_1d;
    use std::sync::Arc;

    fn setup(size: usize) -> (TargetModel1D, DiscreteMarginal, DMatrix<f64>) {
        let m = build_gaussian_model(1.0, 8.0, 2001).unwrap();
        let obs = Observable::linear(&m).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        let mu = DiscreteMarginal::from_model(&m, -5.0, 5.0, size).unwrap();
        let c = assemble_cost(&m, &obs, &ps, mu.nodes(), mu.nodes()).unwrap();
        (m, mu, c)
    }

    #[test]
    fn linear_cost_is_half_product() {
        let (_, mu, c) = setup(41);
        let g = mu.nodes();
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert!((c[(i, j)] - 0.5 * g[i] * g[j]).abs() < 1e-3);
                assert_eq!(c[(i, j)], c[(j, i)]);
            }
        }
    }

    #[test]
    fn constant_observable_gives_zero_cost() {
        let m = build_gaussian_model(1.0, 8.0, 801).unwrap();
        let obs = Observable::constant(3.0);
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        let c = assemble_cost(&m, &obs, &ps, &[-1.0, 0.5], &[2.0]).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_masses() {
        let mu = DiscreteMarginal::new(vec![0.7], vec![1.0]).unwrap();
        let c = DMatrix::from_element(1, 1, 0.245);
        let p = sinkhorn(&mu, &mu, &c, 0.1, 10, 1e-12).unwrap();
        assert!((p.plan[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((p.cost_value - 0.245).abs() < 1e-15);
    }

    #[test]
    fn bad_marginal_rejected() {
        assert!(DiscreteMarginal::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMarginal::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn large_epsilon_is_product() {
        let (_, mu, c) = setup(61);
        let p = sinkhorn(&mu, &mu, &c, 100.0 * cost_range(&c), 1000, 1e-12).unwrap();
        let w = mu.weights();
        let dev = (0..w.len())
            .flat_map(|i| (0..w.len()).map(move |j| (i, j)))
            .map(|(i, j)| (p.plan[(i, j)] - w[i] * w[j]).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-3);
    }

    #[test]
    fn ladder_is_feasible_monotone_and_bounded() {
        let (_, mu, c) = setup(81);
        let range = cost_range(&c);
        let stages = sinkhorn_ladder(&mu, &mu, &c, range, 0.01 * range, 0.5, 20_000, 1e-11).unwrap();
        for w in stages.windows(2) {
            assert!(w[1].cost_value <= w[0].cost_value + 1e-10);
        }
        for s in &stages {
            assert!(s.converged && s.marginal_error < 1e-11);
            assert!(s.dual_lower_bound <= s.cost_value + 1e-12);
            let cols: Vec<f64> = (0..mu.len()).map(|j| s.plan.column(j).sum()).collect();
            assert!(cols.iter().zip(mu.weights()).all(|(a, b)| (a - b).abs() < 1e-9));
        }
        let last = stages.last().unwrap();
        // Reflection y = -x is optimal with value -E[x²]/2.
        let second: f64 = mu.nodes().iter().zip(mu.weights()).map(|(x, w)| w * x * x).sum();
        assert!(last.dual_lower_bound <= -0.5 * second + 1e-9);
        let (_, anti) = plan_diagonal_mass(&last.plan, mu.nodes(), mu.nodes(), 0.5);
        let (_, anti_first) = plan_diagonal_mass(&stages[0].plan, mu.nodes(), mu.nodes(), 0.5);
        assert!(anti > anti_first);
    }

    #[test]
    fn empirical_cost_examples() {
        let samples: Vec<(f64, f64)> = (0..1000)
            .map(|k| ((k as f64 * 0.37).sin(), -(k as f64 * 0.37).sin()))
            .collect();
        let r = plan_cost_of_empirical(&samples, |x, y| 0.5 * x * y, 20).unwrap();
        assert!(r.mean < 0.0);
        assert_eq!(empirical_diagonal_mass(&samples, 1e-9).1, 1.0);
        assert_eq!(
            plan_cost_of_empirical(&[], |x, y| x * y, 20).unwrap_err(),
            Error::EmptyWindow
        );
    }
}
