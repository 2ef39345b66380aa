//! Linearized variance objective `δσ²` for scalar couplings.
//!
//! For a pair of overdamped particles with cross-covariance field `α(x, y)`
//! the first-order change of the reported asymptotic variance is
//!
//! ```text
//! δσ² = E_{π⊗π}[ α(X, Y) φ'(X) φ'(Y) ],
//! ```
//!
//! and for the zigzag pair `δσ² = ¼ E_{π⊗π}[ α̃(X, Y) φ̃'(X) φ̃'(Y) ]` with
//! `α̃ = α₊₊ + α₋₋ − α₊₋ − α₋₊`. With `α = ε α₁` the reported variance
//! `2σ_F²(ε)` has slope `δσ²(α₁)` at `ε = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{ScalarCoupling1D, ScalarKind, ZigzagCoupling, ZigzagKind};
use crate::error::{Error, Result};
use crate::estimators::{replicate_seed, t_quantile_95};
use crate::langevin::{langevin_variance, LangevinConfig, NoiseCoupling};
use crate::model::{Observable, TargetModel1D};
use crate::poisson::PoissonSolution;
use crate::zigzag::RateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSigmaReport {
    pub value: f64,
    pub quadrature_grid: usize,
    pub mc_value: Option<f64>,
    pub mc_ci: Option<f64>,
}

/// Monte Carlo cross-check settings.
#[derive(Debug, Clone, Copy)]
pub struct McCheck {
    pub samples: usize,
    pub seed: u64,
}

/// Exact sampler for the grid approximation of `π`: picks a cell by its
/// trapezoid mass and a point inside it by the linearized density.
#[derive(Debug, Clone)]
pub struct GridSampler {
    nodes: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(model: &TargetModel1D) -> Self {
        let nodes = model.nodes().to_vec();
        let density: Vec<f64> = nodes.iter().map(|&x| model.density(x)).collect();
        let h = model.spacing();
        let mut cdf = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 0..nodes.len() - 1 {
            acc += 0.5 * h * (density[i] + density[i + 1]);
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        GridSampler { nodes, density, cdf }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, self.nodes.len() - 1) - 1;
        let h = self.nodes[i + 1] - self.nodes[i];
        let (p0, p1) = (self.density[i], self.density[i + 1]);
        // Invert the quadratic CDF of a linear density on the cell.
        let target = (u - self.cdf[i]) / (self.cdf[i + 1] - self.cdf[i]) * 0.5 * (p0 + p1) * h;
        let slope = (p1 - p0) / h;
        let s = if slope.abs() < 1e-14 * (p0 + p1) / h {
            target / p0.max(f64::MIN_POSITIVE)
        } else {
            (-p0 + (p0 * p0 + 2.0 * slope * target).max(0.0).sqrt()) / slope
        };
        self.nodes[i] + s.clamp(0.0, h)
    }
}

fn tensor_quadrature(masses: &[f64], dphi: &[f64], alpha: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    (0..masses.len())
        .into_par_iter()
        .map(|i| {
            if masses[i] == 0.0 || dphi[i] == 0.0 {
                return 0.0;
            }
            let row: f64 = (0..masses.len()).map(|j| masses[j] * dphi[j] * alpha(i, j)).sum();
            masses[i] * dphi[i] * row
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn mc_estimate(model: &TargetModel1D, check: McCheck, g: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let sampler = GridSampler::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..check.samples {
        let x = sampler.sample(&mut rng);
        let y = sampler.sample(&mut rng);
        let v = g(x, y);
        s += v;
        s2 += v * v;
    }
    let n = check.samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// `δσ²` of an overdamped scalar coupling by tensor trapezoid quadrature on
/// the Poisson grid, optionally cross-checked by exact sampling of `π⊗π`.
pub fn delta_sigma_overdamped_1d(
    model: &TargetModel1D,
    poisson: &PoissonSolution,
    coupling: &ScalarCoupling1D,
    mc: Option<McCheck>,
) -> Result<DeltaSigmaReport> {
    let nodes = poisson.nodes();
    let grid = nodes.len();
    let value = if matches!(coupling.kind(), ScalarKind::Independent) || coupling.amplitude() == 0.0 {
        0.0
    } else {
        tensor_quadrature(poisson.masses(), poisson.dphi(), |i, j| {
            coupling.alpha(nodes[i], nodes[j])
        })
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("delta sigma quadrature".into()));
    }
    let (mc_value, mc_ci) = match mc {
        Some(check) if check.samples > 1 => {
            let (m, ci) = mc_estimate(model, check, |x, y| {
                coupling.alpha(x, y) * poisson.dphi_at(x) * poisson.dphi_at(y)
            });
            (Some(m), Some(ci))
        }
        _ => (None, None),
    };
    Ok(DeltaSigmaReport {
        value,
        quadrature_grid: grid,
        mc_value,
        mc_ci,
    })
}

/// `α̃(x, y) = α₊₊ + α₋₋ − α₊₋ − α₋₊`.
pub fn zigzag_alpha_tilde(coupling: &ZigzagCoupling, rates: &RateSpec, x: f64, y: f64) -> f64 {
    let mut total = 0.0;
    for tx in [1.0, -1.0] {
        for ty in [1.0, -1.0] {
            let a = coupling.alpha(x, y, tx, ty, rates.rate(x, tx), rates.rate(y, ty));
            total += tx * ty * a;
        }
    }
    total
}

/// `δσ²` of a zigzag coupling by tensor quadrature.
pub fn delta_sigma_zigzag(
    model: &TargetModel1D,
    poisson_tilde: &PoissonSolution,
    coupling: &ZigzagCoupling,
    rates: &RateSpec,
    mc: Option<McCheck>,
) -> Result<DeltaSigmaReport> {
    let nodes = poisson_tilde.nodes();
    let value = if matches!(coupling.kind(), ZigzagKind::Independent) || coupling.beta() == 0.0 {
        0.0
    } else {
        0.25 * tensor_quadrature(poisson_tilde.masses(), poisson_tilde.dphi(), |i, j| {
            zigzag_alpha_tilde(coupling, rates, nodes[i], nodes[j])
        })
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("delta sigma quadrature".into()));
    }
    let (mc_value, mc_ci) = match mc {
        Some(check) if check.samples > 1 => {
            let (m, ci) = mc_estimate(model, check, |x, y| {
                0.25 * zigzag_alpha_tilde(coupling, rates, x, y) * poisson_tilde.dphi_at(x) * poisson_tilde.dphi_at(y)
            });
            (Some(m), Some(ci))
        }
        _ => (None, None),
    };
    Ok(DeltaSigmaReport {
        value,
        quadrature_grid: nodes.len(),
        mc_value,
        mc_ci,
    })
}

/// The scalar coupling kinds compared in the variance experiments.
pub fn scalar_family(poisson: &std::sync::Arc<PoissonSolution>, obs: &Observable) -> Vec<ScalarKind> {
    vec![
        ScalarKind::Independent,
        ScalarKind::Synchronous,
        ScalarKind::Mirror,
        ScalarKind::Symmetric,
        ScalarKind::Poisson(poisson.clone()),
        ScalarKind::ObservableGrad(obs.clone()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindValue {
    pub kind: String,
    pub value: f64,
}

/// `δσ²` per kind at full strength (`β = π/4`), sorted ascending (stable, so
/// ties keep the input order).
pub fn optimality_scan(
    model: &TargetModel1D,
    poisson: &PoissonSolution,
    kinds: &[ScalarKind],
) -> Result<Vec<KindValue>> {
    let mut out = kinds
        .iter()
        .map(|k| {
            let c = ScalarCoupling1D::new(k.clone(), std::f64::consts::FRAC_PI_4)?;
            Ok(KindValue {
                kind: k.name().to_string(),
                value: delta_sigma_overdamped_1d(model, poisson, &c, None)?.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Zigzag counterpart of [`optimality_scan`] at `β = 1`.
pub fn zigzag_optimality_scan(
    model: &TargetModel1D,
    poisson_tilde: &PoissonSolution,
    rates: &RateSpec,
    kinds: &[ZigzagKind],
) -> Result<Vec<KindValue>> {
    let mut out = kinds
        .iter()
        .map(|k| {
            let c = ZigzagCoupling::new(k.clone(), 1.0)?;
            Ok(KindValue {
                kind: k.name().to_string(),
                value: delta_sigma_zigzag(model, poisson_tilde, &c, rates, None)?.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Value of `kind` in a scan.
pub fn scan_value(scan: &[KindValue], kind: &str) -> Option<f64> {
    scan.iter().find(|k| k.kind == kind).map(|k| k.value)
}

/// Checks that `kind` attains the minimum of the scan within `tol`.
pub fn assert_minimal(scan: &[KindValue], kind: &str, tol: f64) -> Result<()> {
    let v = scan_value(scan, kind).ok_or_else(|| Error::Config(format!("kind {kind} not in scan")))?;
    let min = scan.iter().map(|k| k.value).fold(f64::INFINITY, f64::min);
    if v <= min + tol {
        Ok(())
    } else {
        let table: Vec<String> = scan.iter().map(|k| format!("{}={:.6}", k.kind, k.value)).collect();
        Err(Error::Assertion(format!("{kind} is not minimal: {}", table.join(", "))))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheckConfig {
    pub eps: f64,
    pub dt: f64,
    pub t_total: f64,
    pub burn_in: f64,
    pub replicates: usize,
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for DerivativeCheckConfig {
    fn default() -> Self {
        DerivativeCheckConfig {
            eps: 0.2,
            dt: 1e-2,
            t_total: 2e4,
            burn_in: 100.0,
            replicates: 20,
            n_batches: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    /// Central-difference slope of the reported variance `2σ_F²` at 0.
    pub slope: f64,
    pub ci: f64,
    pub quadrature: f64,
    /// `|slope − quadrature| / |quadrature|`, or the absolute gap when the
    /// quadrature value vanishes.
    pub discrepancy: f64,
    /// Monte Carlo noise exceeds the signal.
    pub inconclusive: bool,
}

impl DerivativeCheck {
    pub fn sign_agrees(&self) -> bool {
        self.slope.signum() == self.quadrature.signum()
    }

    pub fn excludes_zero(&self) -> bool {
        self.slope.abs() > self.ci
    }
}

/// Central difference of `2σ_F²(±ε)` along the coupling direction `kind`,
/// using paired runs with common random numbers, compared to `δσ²`.
pub fn finite_difference_derivative_check(
    model: &TargetModel1D,
    obs: &Observable,
    poisson: &PoissonSolution,
    kind: ScalarKind,
    cfg: &DerivativeCheckConfig,
) -> Result<DerivativeCheck> {
    if !(cfg.eps > 0.0 && cfg.eps <= 1.0) || cfg.replicates < 2 {
        return Err(Error::Config(
            "derivative check needs 0 < eps <= 1 and at least 2 replicates".into(),
        ));
    }
    let unit = ScalarCoupling1D::with_amplitude(kind.clone(), 1.0)?;
    let quadrature = delta_sigma_overdamped_1d(model, poisson, &unit, None)?.value;
    let plus = ScalarCoupling1D::with_amplitude(kind.clone(), cfg.eps)?;
    let minus = ScalarCoupling1D::with_amplitude(kind, -cfg.eps)?;
    let nd = model.to_nd();
    let f = obs.to_nd();
    let slopes = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, r);
            let run = |c: &ScalarCoupling1D| {
                let mut lc =
                    LangevinConfig::new(nd.clone(), 2, NoiseCoupling::Pair(c.clone()), cfg.dt, cfg.t_total, seed);
                lc.burn_in = cfg.burn_in;
                langevin_variance(&lc, &f, cfg.n_batches).map(|v| v.asym_var)
            };
            Ok((run(&plus)? - run(&minus)?) / (2.0 * cfg.eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    let r = slopes.len() as f64;
    let slope = slopes.iter().sum::<f64>() / r;
    let var = slopes.iter().map(|s| (s - slope).powi(2)).sum::<f64>() / (r - 1.0);
    let ci = t_quantile_95(slopes.len() - 1) * (var / r).sqrt();
    let gap = (slope - quadrature).abs();
    Ok(DerivativeCheck {
        slope,
        ci,
        quadrature,
        discrepancy: if quadrature.abs() > 1e-12 {
            gap / quadrature.abs()
        } else {
            gap
        },
        inconclusive: ci >= slope.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_gaussian_model;
    use crate::poisson::{solve_poisson_overdamped_1d, solve_poisson_zigzag_1d};
    use std::f64::consts::{FRAC_PI_4, PI};
    use std::sync::Arc;

    fn gaussian() -> TargetModel1D {
        build_gaussian_model(1.0, 8.0, 801).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let m = gaussian();
        let lin = Observable::linear(&m).unwrap();
        let ps = solve_poisson_overdamped_1d(&m, &lin).unwrap();
        let mirror = ScalarCoupling1D::new(ScalarKind::Mirror, FRAC_PI_4).unwrap();
        let r = delta_sigma_overdamped_1d(
            &m,
            &ps,
            &mirror,
            Some(McCheck {
                samples: 20_000,
                seed: 3,
            }),
        )
        .unwrap();
        assert!((r.value + 1.0).abs() < 1e-3, "{r:?}");
        assert!((r.mc_value.unwrap() + 1.0).abs() < 1e-6);
        let indep = delta_sigma_overdamped_1d(&m, &ps, &ScalarCoupling1D::independent(), None).unwrap();
        assert_eq!(indep.value, 0.0);

        let sq = Observable::quadratic(&m).unwrap();
        let ps2 = Arc::new(solve_poisson_overdamped_1d(&m, &sq).unwrap());
        let opt = ScalarCoupling1D::new(ScalarKind::Poisson(ps2.clone()), FRAC_PI_4).unwrap();
        let r = delta_sigma_overdamped_1d(
            &m,
            &ps2,
            &opt,
            Some(McCheck {
                samples: 200_000,
                seed: 4,
            }),
        )
        .unwrap();
        assert!((r.value + 2.0 / PI).abs() < 1e-3, "{r:?}");
        let (mc, ci) = (r.mc_value.unwrap(), r.mc_ci.unwrap());
        assert!((mc - r.value).abs() < ci * 1.5, "{mc} ± {ci} vs {}", r.value);
    }

    #[test]
    fn antisymmetric_in_alpha() {
        let m = gaussian();
        let obs = Observable::mixed(1.0, -1.0, &m).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        for kind in scalar_family(&ps, &obs) {
            let a = ScalarCoupling1D::with_amplitude(kind.clone(), 0.6).unwrap();
            let b = ScalarCoupling1D::with_amplitude(kind, -0.6).unwrap();
            let va = delta_sigma_overdamped_1d(&m, &ps, &a, None).unwrap().value;
            let vb = delta_sigma_overdamped_1d(&m, &ps, &b, None).unwrap().value;
            assert!((va + vb).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_value_formula() {
        let m = gaussian();
        let obs = Observable::mixed(1.0, -1.0, &m).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        let e_abs: f64 = ps.masses().iter().zip(ps.dphi()).map(|(w, d)| w * d.abs()).sum();
        let opt = ScalarCoupling1D::new(ScalarKind::Poisson(ps.clone()), FRAC_PI_4).unwrap();
        let v = delta_sigma_overdamped_1d(&m, &ps, &opt, None).unwrap().value;
        assert!((v + e_abs * e_abs).abs() < 1e-3);
    }

    #[test]
    fn scan_rankings() {
        let m = gaussian();
        for (obs, best) in [
            (Observable::linear(&m).unwrap(), "mirror"),
            (Observable::quadratic(&m).unwrap(), "symmetric"),
        ] {
            let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
            let scan = optimality_scan(&m, &ps, &scalar_family(&ps, &obs)).unwrap();
            assert_minimal(&scan, "poisson", 1e-9).unwrap();
            assert_minimal(&scan, best, 1e-3).unwrap();
        }
        let obs = Observable::mixed(1.0, -1.0, &m).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        let scan = optimality_scan(&m, &ps, &scalar_family(&ps, &obs)).unwrap();
        let p = scan_value(&scan, "poisson").unwrap();
        let g = scan_value(&scan, "observable_grad").unwrap();
        assert!(p <= g && g <= 0.0, "{scan:?}");
        assert!(assert_minimal(&scan, "mirror", 1e-6).is_err());
    }

    #[test]
    fn zigzag_values() {
        let m = gaussian();
        let rates = RateSpec::constant(&m, 0.1).unwrap();
        let lin = Observable::linear(&m).unwrap();
        let pt = solve_poisson_zigzag_1d(&m, &lin).unwrap();
        let po = solve_poisson_overdamped_1d(&m, &lin).unwrap();
        let max_gap = pt
            .dphi()
            .iter()
            .zip(po.dphi())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap < 1e-6);
        let mirror = ZigzagCoupling::new(ZigzagKind::MirrorFlip, 1.0).unwrap();
        let r = delta_sigma_zigzag(&m, &pt, &mirror, &rates, None).unwrap();
        assert!(r.value < 0.0);
        let indep = delta_sigma_zigzag(&m, &pt, &ZigzagCoupling::independent(), &rates, None).unwrap();
        assert_eq!(indep.value, 0.0);
        let c = Observable::constant(2.0);
        let pc = solve_poisson_zigzag_1d(&m, &c).unwrap();
        assert_eq!(delta_sigma_zigzag(&m, &pc, &mirror, &rates, None).unwrap().value, 0.0);
        // The Poisson flip rule is optimal among the zigzag kinds.
        let sq = Observable::quadratic(&m).unwrap();
        let ps = Arc::new(solve_poisson_zigzag_1d(&m, &sq).unwrap());
        let kinds = [
            ZigzagKind::Independent,
            ZigzagKind::MirrorFlip,
            ZigzagKind::SymmetricFlip,
            ZigzagKind::PoissonFlip(ps.clone()),
        ];
        let scan = zigzag_optimality_scan(&m, &ps, &rates, &kinds).unwrap();
        assert_minimal(&scan, "poisson_flip", 1e-9).unwrap();
    }

    #[test]
    fn grid_sampler_moments() {
        let m = gaussian();
        let s = GridSampler::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..100_000).map(|_| s.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.015 && (var - 1.0).abs() < 0.02, "{mean} {var}");
    }
}
