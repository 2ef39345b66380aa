//! Target distributions `π ∝ exp(-V)`, observables, and the uniform-grid
//! trapezoid quadrature that every other module integrates against.
//!
//! The real line is truncated to a closed interval `[a, b]`. For the
//! Gaussian-like built-in targets the default halfwidth of eight standard
//! deviations leaves a tail mass far below Monte Carlo resolution.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes the gradient of a function at `x` into the output slice.
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

const FD_STEP: f64 = 1e-4;

/// A one-dimensional target `π(dx) = exp(-V(x)) dx / Z` on a uniform grid.
#[derive(Clone)]
pub struct TargetModel1D {
    label: String,
    potential: ScalarFn,
    grad_potential: ScalarFn,
    lower: f64,
    upper: f64,
    nodes: Vec<f64>,
    /// Normalized trapezoid masses of π at each node; sums to one.
    masses: Vec<f64>,
    log_norm: f64,
    grad_lipschitz: Option<f64>,
}

impl fmt::Debug for TargetModel1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModel1D")
            .field("label", &self.label)
            .field("domain", &(self.lower, self.upper))
            .field("grid_size", &self.nodes.len())
            .field("log_norm", &self.log_norm)
            .finish()
    }
}

impl TargetModel1D {
    pub fn new(
        label: impl Into<String>,
        potential: ScalarFn,
        grad_potential: ScalarFn,
        domain: (f64, f64),
        grid_size: usize,
    ) -> Result<Self> {
        let (lower, upper) = domain;
        if grid_size < 3 {
            return Err(Error::Config(format!("grid_size must be at least 3, got {grid_size}")));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Config(format!("invalid domain [{lower}, {upper}]")));
        }
        let h = (upper - lower) / (grid_size - 1) as f64;
        let nodes: Vec<f64> = (0..grid_size).map(|i| lower + i as f64 * h).collect();

        let energies: Vec<f64> = nodes.iter().map(|&x| potential(x)).collect();
        if let Some(i) = energies.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand { x: nodes[i] });
        }
        let v_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut masses: Vec<f64> = energies
            .iter()
            .enumerate()
            .map(|(i, v)| trapezoid_weight(i, grid_size, h) * (v_min - v).exp())
            .collect();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Config("exp(-V) has no finite positive mass".into()));
        }
        masses.iter_mut().for_each(|m| *m /= total);
        let log_norm = total.ln() - v_min;

        let model = TargetModel1D {
            label: label.into(),
            potential,
            grad_potential,
            lower,
            upper,
            nodes,
            masses,
            log_norm,
            grad_lipschitz: None,
        };
        model.check_gradient()?;
        Ok(model)
    }

    /// Declares a Lipschitz constant of `V'` on the region the samplers visit.
    pub fn with_grad_lipschitz(mut self, lipschitz: f64) -> Self {
        self.grad_lipschitz = Some(lipschitz);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn potential(&self, x: f64) -> f64 {
        (self.potential)(x)
    }

    pub fn grad_potential(&self, x: f64) -> f64 {
        (self.grad_potential)(x)
    }

    pub fn potential_fn(&self) -> &ScalarFn {
        &self.potential
    }

    pub fn grad_potential_fn(&self) -> &ScalarFn {
        &self.grad_potential
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn grid_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes.len() - 1) as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Normalized π-masses per node (trapezoid weight times density).
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `log Z` with `Z = ∫_a^b exp(-V)`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn grad_lipschitz(&self) -> Option<f64> {
        self.grad_lipschitz
    }

    /// Normalized density `exp(-V(x)) / Z`.
    pub fn density(&self, x: f64) -> f64 {
        (-self.potential(x) - self.log_norm).exp()
    }

    /// `∫ g exp(-V) dx / Z` by composite trapezoid on the model grid.
    pub fn quadrature_expectation(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &m) in self.nodes.iter().zip(&self.masses) {
            let v = g(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { x });
            }
            acc += m * v;
        }
        Ok(acc)
    }

    /// Whether `V(-x) = V(x)` on every node and the grid is symmetric about 0.
    pub fn is_even(&self, tol: f64) -> bool {
        if (self.lower + self.upper).abs() > tol * (1.0 + self.upper.abs()) {
            return false;
        }
        self.nodes.iter().all(|&x| {
            let (a, b) = (self.potential(x), self.potential(-x));
            (a - b).abs() <= tol * (1.0 + a.abs())
        })
    }

    /// Lifts the model to a `d = 1` multi-dimensional target for the samplers.
    pub fn to_nd(&self) -> TargetModelND {
        let v = self.potential.clone();
        let dv = self.grad_potential.clone();
        TargetModelND {
            label: self.label.clone(),
            dim: 1,
            potential: Arc::new(move |x: &[f64]| v(x[0])),
            grad_potential: Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = dv(x[0])),
        }
    }

    fn check_gradient(&self) -> Result<()> {
        let n = self.nodes.len();
        for &x in &self.nodes[1..n - 1] {
            let fd = (self.potential(x + FD_STEP) - self.potential(x - FD_STEP)) / (2.0 * FD_STEP);
            let g = self.grad_potential(x);
            if !g.is_finite() || (fd - g).abs() > 1e-6 * (1.0 + g.abs()) + 1e-9 * self.potential(x).abs() {
                return Err(Error::Config(format!(
                    "grad_potential inconsistent with potential at x = {x}: {g} vs finite difference {fd}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * h
    } else {
        h
    }
}

/// Gaussian target `V(x) = x² / (2σ²)` on `[-halfwidth, halfwidth]`.
pub fn build_gaussian_model(sigma: f64, domain_halfwidth: f64, grid_size: usize) -> Result<TargetModel1D> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if domain_halfwidth < 6.0 * sigma {
        return Err(Error::Config(format!(
            "domain halfwidth {domain_halfwidth} must be at least 6 sigma"
        )));
    }
    let inv_var = 1.0 / (sigma * sigma);
    Ok(TargetModel1D::new(
        format!("gaussian({sigma})"),
        Arc::new(move |x| 0.5 * x * x * inv_var),
        Arc::new(move |x| x * inv_var),
        (-domain_halfwidth, domain_halfwidth),
        grid_size,
    )?
    .with_grad_lipschitz(inv_var))
}

/// Double well `V(x) = a x⁴ - b x²`.
pub fn build_double_well_model(a: f64, b: f64, domain_halfwidth: f64, grid_size: usize) -> Result<TargetModel1D> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("double well needs a > 0, got {a}")));
    }
    let model = TargetModel1D::new(
        format!("double_well({a},{b})"),
        Arc::new(move |x| a * x.powi(4) - b * x * x),
        Arc::new(move |x| 4.0 * a * x.powi(3) - 2.0 * b * x),
        (-domain_halfwidth, domain_halfwidth),
        grid_size,
    )?;
    // V'' = 12 a x² - 2 b, bounded on the truncated domain.
    let lip = (12.0 * a * domain_halfwidth * domain_halfwidth - 2.0 * b)
        .abs()
        .max(2.0 * b.abs());
    Ok(model.with_grad_lipschitz(lip))
}

/// Cauchy target `V(x) = log(1 + x²)`. The tails are heavy, so quadrature
/// quantities on a truncated domain are only indicative.
pub fn build_cauchy_model(domain_halfwidth: f64, grid_size: usize) -> Result<TargetModel1D> {
    Ok(TargetModel1D::new(
        "cauchy",
        Arc::new(|x| (1.0 + x * x).ln()),
        Arc::new(|x| 2.0 * x / (1.0 + x * x)),
        (-domain_halfwidth, domain_halfwidth),
        grid_size,
    )?
    .with_grad_lipschitz(2.0))
}

/// A target on `ℝ^d`.
#[derive(Clone)]
pub struct TargetModelND {
    label: String,
    dim: usize,
    potential: VectorFn,
    grad_potential: GradientFn,
}

impl fmt::Debug for TargetModelND {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModelND")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .finish()
    }
}

impl TargetModelND {
    pub fn new(label: impl Into<String>, dim: usize, potential: VectorFn, grad_potential: GradientFn) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(TargetModelND {
            label: label.into(),
            dim,
            potential,
            grad_potential,
        })
    }

    /// Isotropic Gaussian `V(x) = |x|² / (2σ²)`.
    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        let inv_var = 1.0 / (sigma * sigma);
        Self::new(
            format!("gaussian_{dim}d({sigma})"),
            dim,
            Arc::new(move |x: &[f64]| 0.5 * inv_var * x.iter().map(|v| v * v).sum::<f64>()),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * inv_var;
                }
            }),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        (self.potential)(x)
    }

    pub fn grad_potential(&self, x: &[f64], out: &mut [f64]) {
        (self.grad_potential)(x, out)
    }

    /// Largest relative deviation between the gradient and centered finite
    /// differences of the potential over the given probe points.
    pub fn gradient_discrepancy(&self, points: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut grad = vec![0.0; self.dim];
        let mut probe = vec![0.0; self.dim];
        for p in points {
            self.grad_potential(p, &mut grad);
            for k in 0..self.dim {
                probe.copy_from_slice(p);
                probe[k] = p[k] + FD_STEP;
                let up = self.potential(&probe);
                probe[k] = p[k] - FD_STEP;
                let down = self.potential(&probe);
                let fd = (up - down) / (2.0 * FD_STEP);
                worst = worst.max((fd - grad[k]).abs() / (1.0 + grad[k].abs()));
            }
        }
        worst
    }
}

/// A scalar observable on the real line together with its mean under the target.
#[derive(Clone)]
pub struct Observable {
    label: String,
    value: ScalarFn,
    derivative: ScalarFn,
    mean: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("mean", &self.mean)
            .finish()
    }
}

impl Observable {
    /// Builds an observable whose mean is computed by quadrature on `model`.
    pub fn on_model(
        label: impl Into<String>,
        value: ScalarFn,
        derivative: ScalarFn,
        model: &TargetModel1D,
    ) -> Result<Self> {
        let mean = model.quadrature_expectation(|x| value(x))?;
        Ok(Observable {
            label: label.into(),
            value,
            derivative,
            mean,
        })
    }

    /// Builds an observable with a known mean.
    pub fn with_mean(label: impl Into<String>, value: ScalarFn, derivative: ScalarFn, mean: f64) -> Self {
        Observable {
            label: label.into(),
            value,
            derivative,
            mean,
        }
    }

    /// `f(x) = x`.
    pub fn linear(model: &TargetModel1D) -> Result<Self> {
        Self::mixed(0.0, 1.0, model).map(|o| o.relabel("linear"))
    }

    /// `f(x) = x²`.
    pub fn quadratic(model: &TargetModel1D) -> Result<Self> {
        Self::mixed(1.0, 0.0, model).map(|o| o.relabel("quadratic"))
    }

    /// `f(x) = c1 x² + c2 x`.
    pub fn mixed(c1: f64, c2: f64, model: &TargetModel1D) -> Result<Self> {
        Self::on_model(
            format!("mixed({c1},{c2})"),
            Arc::new(move |x| c1 * x * x + c2 * x),
            Arc::new(move |x| 2.0 * c1 * x + c2),
            model,
        )
    }

    pub fn constant(c: f64) -> Self {
        Self::with_mean(format!("constant({c})"), Arc::new(move |_| c), Arc::new(|_| 0.0), c)
    }

    fn relabel(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `f₀(x) = f(x) - π(f)`.
    pub fn centered(&self, x: f64) -> f64 {
        self.value(x) - self.mean
    }

    pub fn to_nd(&self) -> ObservableND {
        let f = self.value.clone();
        let df = self.derivative.clone();
        ObservableND {
            label: self.label.clone(),
            value: Arc::new(move |x: &[f64]| f(x[0])),
            gradient: Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = df(x[0])),
            mean: self.mean,
        }
    }
}

/// A scalar observable on `ℝ^d`.
#[derive(Clone)]
pub struct ObservableND {
    label: String,
    value: VectorFn,
    gradient: GradientFn,
    mean: f64,
}

impl fmt::Debug for ObservableND {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservableND")
            .field("label", &self.label)
            .field("mean", &self.mean)
            .finish()
    }
}

impl ObservableND {
    pub fn new(label: impl Into<String>, value: VectorFn, gradient: GradientFn, mean: f64) -> Self {
        ObservableND {
            label: label.into(),
            value,
            gradient,
            mean,
        }
    }

    /// `f(x) = scale · |x|²` with its mean under `N(0, σ² I_d)`.
    pub fn norm_sq(scale: f64, dim: usize, sigma: f64) -> Self {
        Self::new(
            format!("norm_sq({scale})"),
            Arc::new(move |x: &[f64]| scale * x.iter().map(|v| v * v).sum::<f64>()),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * scale * v;
                }
            }),
            scale * dim as f64 * sigma * sigma,
        )
    }

    /// `f(x) = scale · |x|² + coef · Σ x_k` with its mean under `N(0, σ² I_d)`.
    pub fn norm_sq_plus_linear(scale: f64, coef: f64, dim: usize, sigma: f64) -> Self {
        Self::new(
            format!("norm_sq_plus_linear({scale},{coef})"),
            Arc::new(move |x: &[f64]| x.iter().map(|v| scale * v * v + coef * v).sum::<f64>()),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * scale * v + coef;
                }
            }),
            scale * dim as f64 * sigma * sigma,
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn gradient_fn(&self) -> &GradientFn {
        &self.gradient
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// Named potentials accepted by the experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialSpec {
    Gaussian { sigma: f64 },
    DoubleWell { a: f64, b: f64 },
    Cauchy,
}

impl PotentialSpec {
    pub fn build(&self, domain_halfwidth: f64, grid_size: usize) -> Result<TargetModel1D> {
        match *self {
            PotentialSpec::Gaussian { sigma } => build_gaussian_model(sigma, domain_halfwidth, grid_size),
            PotentialSpec::DoubleWell { a, b } => build_double_well_model(a, b, domain_halfwidth, grid_size),
            PotentialSpec::Cauchy => build_cauchy_model(domain_halfwidth, grid_size),
        }
    }
}

impl FromStr for PotentialSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        match (name.as_str(), args.as_slice()) {
            ("gaussian", []) => Ok(PotentialSpec::Gaussian { sigma: 1.0 }),
            ("gaussian", [sigma]) => Ok(PotentialSpec::Gaussian { sigma: *sigma }),
            ("double_well", [a, b]) => Ok(PotentialSpec::DoubleWell { a: *a, b: *b }),
            ("cauchy", []) => Ok(PotentialSpec::Cauchy),
            _ => Err(Error::Config(format!("unknown potential `{s}`"))),
        }
    }
}

/// Named observables accepted by the experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservableSpec {
    Linear,
    Quadratic,
    /// `c1 x² + c2 x`
    Mixed {
        c1: f64,
        c2: f64,
    },
    /// `scale · |x|²`
    NormSq {
        scale: f64,
    },
    /// `scale · |x|² + coef · Σ x_k`
    NormSqPlusLinear {
        scale: f64,
        coef: f64,
    },
}

impl ObservableSpec {
    pub fn build_1d(&self, model: &TargetModel1D) -> Result<Observable> {
        match *self {
            ObservableSpec::Linear => Observable::linear(model),
            ObservableSpec::Quadratic => Observable::quadratic(model),
            ObservableSpec::Mixed { c1, c2 } => Observable::mixed(c1, c2, model),
            ObservableSpec::NormSq { scale } => Observable::mixed(scale, 0.0, model),
            ObservableSpec::NormSqPlusLinear { scale, coef } => Observable::mixed(scale, coef, model),
        }
    }

    /// Builds the observable on `ℝ^d` with its mean under `N(0, σ² I_d)`.
    pub fn build_gaussian_nd(&self, dim: usize, sigma: f64) -> ObservableND {
        match *self {
            ObservableSpec::Linear => ObservableND::norm_sq_plus_linear(0.0, 1.0, dim, sigma),
            ObservableSpec::Quadratic => ObservableND::norm_sq(1.0, dim, sigma),
            ObservableSpec::Mixed { c1, c2 } => ObservableND::norm_sq_plus_linear(c1, c2, dim, sigma),
            ObservableSpec::NormSq { scale } => ObservableND::norm_sq(scale, dim, sigma),
            ObservableSpec::NormSqPlusLinear { scale, coef } => {
                ObservableND::norm_sq_plus_linear(scale, coef, dim, sigma)
            }
        }
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        match (name.as_str(), args.as_slice()) {
            ("linear", []) => Ok(ObservableSpec::Linear),
            ("quadratic", []) => Ok(ObservableSpec::Quadratic),
            ("mixed", [c1, c2]) => Ok(ObservableSpec::Mixed { c1: *c1, c2: *c2 }),
            ("norm_sq", []) => Ok(ObservableSpec::NormSq { scale: 1.0 }),
            ("norm_sq", [scale]) => Ok(ObservableSpec::NormSq { scale: *scale }),
            ("norm_sq_plus_linear", []) => Ok(ObservableSpec::NormSqPlusLinear { scale: 5.0, coef: 1.0 }),
            ("norm_sq_plus_linear", [scale, coef]) => Ok(ObservableSpec::NormSqPlusLinear {
                scale: *scale,
                coef: *coef,
            }),
            _ => Err(Error::Config(format!("unknown observable `{s}`"))),
        }
    }
}

/// Parses `name` or `name(a, b, ...)` with numeric arguments.
fn parse_call(s: &str) -> Result<(String, Vec<f64>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::Config(format!("unbalanced parentheses in `{s}`")));
    }
    let name = s[..open].trim().to_string();
    let inner = &s[open + 1..s.len() - 1];
    let args = inner
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad numeric argument `{a}` in `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name, args))
}
