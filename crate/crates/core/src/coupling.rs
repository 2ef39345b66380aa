//! Coupling fields and the noise-mixing matrices that realize them.
//!
//! Every family is parametrized by a strength `β`. For the diffusions the
//! mixing matrix has diagonal blocks `cos β · I` and off-diagonal blocks
//! `sin β · g` with `g` orthogonal, so each particle row satisfies
//! `Σ_j G_ij G_ijᵀ = I` and every particle is driven by a standard Brownian
//! motion. The induced cross-covariance is `α = sin(2β) · g`.
//!
//! For the zigzag pair the coupling is a double-flip rate
//! `0 ≤ α ≤ min(λ(x, θx), λ(y, θy))`, scaled by `β ∈ [0, 1]`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::model::{GradientFn, Observable, ObservableND};
use crate::poisson::{sign_with_dead_band, PoissonSolution, SIGN_DEAD_BAND};

const ADMISSIBILITY_SLACK: f64 = 1e-12;

fn check_beta(beta: f64, max: f64) -> Result<()> {
    if !(0.0..=max + 1e-15).contains(&beta) {
        return Err(Error::Config(format!(
            "coupling strength beta = {beta} outside [0, {max}]"
        )));
    }
    Ok(())
}

/// Sign pattern of a scalar coupling between two one-dimensional particles.
#[derive(Clone)]
pub enum ScalarKind {
    Independent,
    /// `dB^x = dB^y` at full strength.
    Synchronous,
    /// `dB^x = -dB^y` at full strength.
    Mirror,
    /// Synchronous when `x·y ≤ 0`, mirror otherwise.
    Symmetric,
    /// Synchronous when `φ'(x) φ'(y) ≤ 0`, mirror otherwise.
    Poisson(Arc<PoissonSolution>),
    /// As `Poisson` with the observable's derivative in place of `φ'`.
    ObservableGrad(Observable),
}

impl ScalarKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScalarKind::Independent => "independent",
            ScalarKind::Synchronous => "synchronous",
            ScalarKind::Mirror => "mirror",
            ScalarKind::Symmetric => "symmetric",
            ScalarKind::Poisson(_) => "poisson",
            ScalarKind::ObservableGrad(_) => "observable_grad",
        }
    }
}

impl fmt::Debug for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar coupling `α(x, y) ∈ [-1, 1]` for two particles on the real line.
#[derive(Clone, Debug)]
pub struct ScalarCoupling1D {
    kind: ScalarKind,
    beta: f64,
    /// `sin(2β)`, negated when the coupling runs against its sign pattern.
    amplitude: f64,
}

impl ScalarCoupling1D {
    pub fn new(kind: ScalarKind, beta: f64) -> Result<Self> {
        check_beta(beta, FRAC_PI_4)?;
        Ok(ScalarCoupling1D {
            kind,
            beta,
            amplitude: (2.0 * beta).sin(),
        })
    }

    pub fn independent() -> Self {
        ScalarCoupling1D {
            kind: ScalarKind::Independent,
            beta: 0.0,
            amplitude: 0.0,
        }
    }

    /// Coupling `α = amplitude · s(x, y)` with a signed amplitude in `[-1, 1]`.
    /// Negative amplitudes reverse the sign pattern, which is what a
    /// two-sided finite difference along a coupling direction needs.
    pub fn with_amplitude(kind: ScalarKind, amplitude: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&amplitude) {
            return Err(Error::Config(format!("amplitude {amplitude} outside [-1, 1]")));
        }
        Ok(ScalarCoupling1D {
            kind,
            beta: 0.5 * amplitude.abs().asin(),
            amplitude,
        })
    }

    /// Same sign pattern at a different strength.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.kind.clone(), beta)
    }

    pub fn kind(&self) -> &ScalarKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Kind-specific sign `s(x, y) ∈ {-1, 0, 1}`.
    pub fn sign(&self, x: f64, y: f64) -> f64 {
        match &self.kind {
            ScalarKind::Independent => 0.0,
            ScalarKind::Synchronous => 1.0,
            ScalarKind::Mirror => -1.0,
            ScalarKind::Symmetric => {
                if x * y <= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            ScalarKind::Poisson(ps) => pattern_sign(ps.dphi_at(x), ps.dphi_at(y)),
            ScalarKind::ObservableGrad(obs) => pattern_sign(obs.derivative(x), obs.derivative(y)),
        }
    }

    /// `α(x, y) = sin(2β) · s(x, y)`.
    pub fn alpha(&self, x: f64, y: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * self.sign(x, y)
    }
}

/// Synchronous (+1) for opposite signs, mirror (-1) for equal signs, and no
/// coupling inside the dead band.
fn pattern_sign(a: f64, b: f64) -> f64 {
    let (sa, sb) = (sign_with_dead_band(a), sign_with_dead_band(b));
    if sa == 0 || sb == 0 {
        0.0
    } else if sa * sb < 0 {
        1.0
    } else {
        -1.0
    }
}

/// Free-function form of [`ScalarCoupling1D::alpha`].
pub fn alpha_1d(c: &ScalarCoupling1D, x: f64, y: f64) -> f64 {
    c.alpha(x, y)
}

/// The 2×2 mixing matrix `[[cos β, g sin β], [g sin β, cos β]]` with
/// `β = ½ arcsin|α|` and `g = sgn α`, so that `G Gᵀ = [[1, α], [α, 1]]`.
pub fn mixing_matrix_1d(alpha: f64) -> Result<Matrix2<f64>> {
    if !alpha.is_finite() || alpha.abs() > 1.0 + ADMISSIBILITY_SLACK {
        return Err(Error::Admissibility(format!("|alpha| = {} exceeds 1", alpha.abs())));
    }
    let (c, s) = mixing_coefficients(alpha);
    Ok(Matrix2::new(c, s, s, c))
}

/// `(cos β, g sin β)` for a scalar `α`.
pub(crate) fn mixing_coefficients(alpha: f64) -> (f64, f64) {
    let g = if alpha < 0.0 { -1.0 } else { 1.0 };
    if alpha.abs() >= 1.0 {
        // Equal coefficients keep fully (anti)correlated noise bit-exact.
        return (FRAC_1_SQRT_2, g * FRAC_1_SQRT_2);
    }
    let beta = 0.5 * alpha.abs().asin();
    (beta.cos(), g * beta.sin())
}

/// Householder reflection in the direction of `u + v`, mapping `u` to `-v`.
/// Falls back to the identity when either input is zero or `u + v = 0`.
pub fn reflection_matrix(u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    let d = u.len();
    if v.len() != d {
        return Err(Error::Config("reflection inputs differ in dimension".into()));
    }
    if u.iter().chain(v).any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("reflection input".into()));
    }
    for w in [u, v] {
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm != 0.0 && (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "reflection input has norm {norm}, expected 0 or 1"
            )));
        }
    }
    let mut m = DMatrix::identity(d, d);
    if let Some(w) = reflection_axis(u, v) {
        let w2: f64 = w.iter().map(|a| a * a).sum();
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] -= 2.0 * w[i] * w[j] / w2;
            }
        }
    }
    Ok(m)
}

/// `u + v` when both are nonzero and the sum does not vanish.
fn reflection_axis(u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let zero = |w: &[f64]| w.iter().all(|&a| a == 0.0);
    if zero(u) || zero(v) {
        return None;
    }
    let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    let w2: f64 = w.iter().map(|a| a * a).sum();
    if w2 <= 1e-24 {
        None
    } else {
        Some(w)
    }
}

/// Applies the reflection defined by unit (or zero) vectors `u`, `v` to `xi`.
pub(crate) fn apply_reflection(u: &[f64], v: &[f64], xi: &[f64], out: &mut [f64]) {
    out.copy_from_slice(xi);
    let zero_u = u.iter().all(|&a| a == 0.0);
    let zero_v = v.iter().all(|&a| a == 0.0);
    if zero_u || zero_v {
        return;
    }
    let mut w2 = 0.0;
    let mut dot = 0.0;
    for k in 0..u.len() {
        let w = u[k] + v[k];
        w2 += w * w;
        dot += w * xi[k];
    }
    if w2 <= 1e-24 {
        return;
    }
    let scale = 2.0 * dot / w2;
    for k in 0..u.len() {
        out[k] -= scale * (u[k] + v[k]);
    }
}

/// Normalizes `g` in place; vectors with norm below the dead band become zero.
pub(crate) fn normalize_or_zero(g: &mut [f64]) -> f64 {
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < SIGN_DEAD_BAND {
        g.iter_mut().for_each(|a| *a = 0.0);
        0.0
    } else {
        g.iter_mut().for_each(|a| *a /= norm);
        norm
    }
}

/// Source of the orthogonal pair matrices `g(x, y)` in `d` dimensions.
#[derive(Clone)]
pub enum MatrixKind {
    Independent,
    /// `g ≡ -I`.
    Mirror,
    /// Reflection built from `∇φ` (analytic or interpolated).
    ReflectionPoisson(GradientFn),
    /// Reflection built from the observable gradient as a surrogate for `∇φ`.
    ReflectionObservable(ObservableND),
}

impl MatrixKind {
    pub fn name(&self) -> &'static str {
        match self {
            MatrixKind::Independent => "independent",
            MatrixKind::Mirror => "mirror",
            MatrixKind::ReflectionPoisson(_) => "reflection_poisson",
            MatrixKind::ReflectionObservable(_) => "reflection_observable",
        }
    }

    /// Reflection coupling driven by a one-dimensional Poisson solution.
    pub fn reflection_from_poisson_1d(ps: Arc<PoissonSolution>) -> Self {
        MatrixKind::ReflectionPoisson(Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = ps.dphi_at(x[0])))
    }
}

impl fmt::Debug for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Matrix coupling `α(x, y) = sin(2β) g(x, y)` between two particles in `ℝ^d`.
#[derive(Clone, Debug)]
pub struct MatrixCouplingND {
    kind: MatrixKind,
    beta: f64,
    dim: usize,
}

impl MatrixCouplingND {
    pub fn new(kind: MatrixKind, beta: f64, dim: usize) -> Result<Self> {
        check_beta(beta, FRAC_PI_4)?;
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(MatrixCouplingND { kind, beta, dim })
    }

    pub fn kind(&self) -> &MatrixKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the (unnormalized) steering gradient at `x`; zero for the
    /// kinds that do not depend on position.
    pub fn steering_gradient(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            MatrixKind::Independent | MatrixKind::Mirror => out.iter_mut().for_each(|a| *a = 0.0),
            MatrixKind::ReflectionPoisson(grad) => grad(x, out),
            MatrixKind::ReflectionObservable(obs) => obs.gradient(x, out),
        }
    }

    /// Orthogonal pair matrix `g(x, y)`.
    pub fn pair_matrix(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim;
        match &self.kind {
            MatrixKind::Independent => Ok(DMatrix::identity(d, d)),
            MatrixKind::Mirror => Ok(-DMatrix::identity(d, d)),
            _ => {
                let mut u = vec![0.0; d];
                let mut v = vec![0.0; d];
                self.steering_gradient(x, &mut u);
                self.steering_gradient(y, &mut v);
                normalize_or_zero(&mut u);
                normalize_or_zero(&mut v);
                reflection_matrix(&u, &v)
            }
        }
    }

    /// `α(x, y) = sin(2β) g(x, y)`.
    pub fn alpha(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        if matches!(self.kind, MatrixKind::Independent) {
            return Ok(DMatrix::zeros(self.dim, self.dim));
        }
        Ok(self.pair_matrix(x, y)? * (2.0 * self.beta).sin())
    }
}

/// How particles are paired in an `n`-particle block coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// `(1, 2), (3, 4), …`
    Fixed,
    /// Particles ordered by decreasing steering-gradient magnitude, then
    /// paired consecutively. Ties keep index order.
    Sorted,
}

/// Weights `w_ij` with `w_ii = cos β` and `w_ij = w_ji = sin β` on pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    pub pairing: Pairing,
    pub beta: f64,
    pub n: usize,
}

impl WeightScheme {
    pub fn new(pairing: Pairing, beta: f64, n: usize) -> Result<Self> {
        check_beta(beta, FRAC_PI_4)?;
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "pairwise schemes need an even particle count, got {n}"
            )));
        }
        Ok(WeightScheme { pairing, beta, n })
    }

    /// Pairs of particle indices given each particle's steering magnitude.
    pub fn pairs(&self, magnitudes: &[f64]) -> Vec<(usize, usize)> {
        match self.pairing {
            Pairing::Fixed => (0..self.n / 2).map(|k| (2 * k, 2 * k + 1)).collect(),
            Pairing::Sorted => {
                let mut order: Vec<usize> = (0..self.n).collect();
                // Stable sort keeps index order among ties.
                order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]));
                order.chunks(2).map(|p| (p[0], p[1])).collect()
            }
        }
    }

    /// The `n × n` weight matrix for the given pairs.
    pub fn weights(&self, pairs: &[(usize, usize)]) -> DMatrix<f64> {
        let (s, c) = self.beta.sin_cos();
        let mut w = DMatrix::identity(self.n, self.n) * c;
        for &(i, j) in pairs {
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
        w
    }
}

/// Assembles the full `(nd) × (nd)` mixing matrix for particles at `positions`
/// (particle-major, `n · d` entries).
pub fn assemble_block_g(positions: &[f64], scheme: &WeightScheme, source: &MatrixCouplingND) -> Result<DMatrix<f64>> {
    let d = source.dim();
    let n = scheme.n;
    if !n.is_multiple_of(2) {
        return Err(Error::Config(format!("odd particle count {n}")));
    }
    if positions.len() != n * d {
        return Err(Error::Config(format!(
            "expected {} coordinates for {n} particles in {d} dimensions, got {}",
            n * d,
            positions.len()
        )));
    }
    let mut grad = vec![0.0; d];
    let magnitudes: Vec<f64> = positions
        .chunks(d)
        .map(|x| {
            source.steering_gradient(x, &mut grad);
            grad.iter().map(|a| a * a).sum::<f64>().sqrt()
        })
        .collect();
    if matches!(source.kind(), MatrixKind::Independent) {
        return Ok(DMatrix::identity(n * d, n * d));
    }
    let pairs = scheme.pairs(&magnitudes);
    let (s, c) = scheme.beta.sin_cos();
    let mut g = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for k in 0..d {
            g[(i * d + k, i * d + k)] = c;
        }
    }
    for &(i, j) in &pairs {
        let xi = &positions[i * d..(i + 1) * d];
        let xj = &positions[j * d..(j + 1) * d];
        let gij = source.pair_matrix(xi, xj)?;
        let gji = source.pair_matrix(xj, xi)?;
        for a in 0..d {
            for b in 0..d {
                g[(i * d + a, j * d + b)] = s * gij[(a, b)];
                g[(j * d + a, i * d + b)] = s * gji[(a, b)];
            }
        }
    }
    Ok(g)
}

/// Largest deviation of `Σ_j G_ij G_ijᵀ` from the identity over all particle rows.
pub fn row_orthonormality_defect(g: &DMatrix<f64>, n: usize, d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let rows = g.rows(i * d, d);
        let prod = rows * rows.transpose();
        for a in 0..d {
            for b in 0..d {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((prod[(a, b)] - target).abs());
            }
        }
    }
    worst
}

/// Double-flip coupling rules for a pair of zigzag processes.
#[derive(Clone)]
pub enum ZigzagKind {
    Independent,
    /// Encourage double flips while the particles move in opposite directions.
    MirrorFlip,
    /// Encourage double flips when `x y θx θy ≤ 0`.
    SymmetricFlip,
    /// Encourage double flips when `φ̃'(x) φ̃'(y) θx θy ≤ 0`.
    PoissonFlip(Arc<PoissonSolution>),
}

impl ZigzagKind {
    pub fn name(&self) -> &'static str {
        match self {
            ZigzagKind::Independent => "independent",
            ZigzagKind::MirrorFlip => "mirror_flip",
            ZigzagKind::SymmetricFlip => "symmetric_flip",
            ZigzagKind::PoissonFlip(_) => "poisson_flip",
        }
    }
}

impl fmt::Debug for ZigzagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct ZigzagCoupling {
    kind: ZigzagKind,
    beta: f64,
}

impl ZigzagCoupling {
    pub fn new(kind: ZigzagKind, beta: f64) -> Result<Self> {
        check_beta(beta, 1.0)?;
        Ok(ZigzagCoupling { kind, beta })
    }

    pub fn independent() -> Self {
        ZigzagCoupling {
            kind: ZigzagKind::Independent,
            beta: 0.0,
        }
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.kind.clone(), beta)
    }

    pub fn kind(&self) -> &ZigzagKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Double-flip rate at `(x, y, θx, θy)` given the single-particle rates.
    pub fn alpha(&self, x: f64, y: f64, theta_x: f64, theta_y: f64, lambda_x: f64, lambda_y: f64) -> f64 {
        let active = match &self.kind {
            ZigzagKind::Independent => false,
            ZigzagKind::MirrorFlip => theta_x * theta_y <= 0.0,
            ZigzagKind::SymmetricFlip => x * y * theta_x * theta_y <= 0.0,
            ZigzagKind::PoissonFlip(ps) => {
                let (a, b) = (sign_with_dead_band(ps.dphi_at(x)), sign_with_dead_band(ps.dphi_at(y)));
                a != 0 && b != 0 && (a * b) as f64 * theta_x * theta_y <= 0.0
            }
        };
        if active && self.beta > 0.0 {
            self.beta * lambda_x.min(lambda_y).max(0.0)
        } else {
            0.0
        }
    }
}

/// Free-function form of [`ZigzagCoupling::alpha`].
pub fn zigzag_alpha(
    c: &ZigzagCoupling,
    x: f64,
    y: f64,
    theta_x: f64,
    theta_y: f64,
    lambda_x: f64,
    lambda_y: f64,
) -> f64 {
    c.alpha(x, y, theta_x, theta_y, lambda_x, lambda_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_gaussian_model, Observable};
    use crate::poisson::solve_poisson_overdamped_1d;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_alpha_examples() {
        let mirror = ScalarCoupling1D::new(ScalarKind::Mirror, FRAC_PI_4).unwrap();
        assert_eq!(mirror.alpha(0.3, 2.0), -1.0);
        let indep = ScalarCoupling1D::new(ScalarKind::Independent, 0.5).unwrap();
        assert_eq!(indep.alpha(1.0, -1.0), 0.0);
        let sym = ScalarCoupling1D::new(ScalarKind::Symmetric, FRAC_PI_4).unwrap();
        assert_eq!(sym.alpha(1.0, -1.0), 1.0);
        assert_eq!(sym.alpha(1.0, 2.0), -1.0);
        assert!(ScalarCoupling1D::new(ScalarKind::Mirror, 1.0).is_err());
    }

    #[test]
    fn poisson_kind_follows_dphi_signs() {
        let m = build_gaussian_model(1.0, 8.0, 2001).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &Observable::quadratic(&m).unwrap()).unwrap());
        let c = ScalarCoupling1D::new(ScalarKind::Poisson(ps), FRAC_PI_4).unwrap();
        assert_eq!(c.alpha(1.0, -2.0), 1.0);
        assert_eq!(c.alpha(1.0, 2.0), -1.0);
        // φ' vanishes at 0: dead band means no coupling
        assert_eq!(c.alpha(0.0, 2.0), 0.0);
    }

    #[test]
    fn mixing_matrix_examples() {
        let g0 = mixing_matrix_1d(0.0).unwrap();
        assert_eq!(g0, Matrix2::identity());

        let g1 = mixing_matrix_1d(1.0).unwrap();
        for v in g1.iter() {
            assert!((v - FRAC_1_SQRT_2).abs() < 1e-15);
        }
        let q = g1 * g1.transpose();
        assert!((q - Matrix2::new(1.0, 1.0, 1.0, 1.0)).abs().max() < 1e-12);

        let gm = mixing_matrix_1d(-1.0).unwrap();
        assert!((gm[(0, 1)] + FRAC_1_SQRT_2).abs() < 1e-15);
        let q = gm * gm.transpose();
        assert!((q - Matrix2::new(1.0, -1.0, -1.0, 1.0)).abs().max() < 1e-12);

        assert!(matches!(mixing_matrix_1d(1.1), Err(Error::Admissibility(_))));
    }

    #[test]
    fn reflection_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let m = reflection_matrix(&e1, &e1).unwrap();
        assert_eq!(m[(0, 0)], -1.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(2, 2)], 1.0);
        let mu = &m * nalgebra::DVector::from_column_slice(&e1);
        assert_eq!(mu.dot(&nalgebra::DVector::from_column_slice(&e1)), -1.0);

        let neg = [-1.0, 0.0, 0.0];
        assert_eq!(reflection_matrix(&e1, &neg).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(reflection_matrix(&[0.0; 3], &e1).unwrap(), DMatrix::identity(3, 3));
        assert!(reflection_matrix(&[f64::NAN, 0.0, 0.0], &e1).is_err());
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize_or_zero(&mut v);
        v
    }

    #[test]
    fn reflection_is_orthogonal_and_antithetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..6 {
            for _ in 0..200 {
                let u = random_unit(&mut rng, d);
                let v = random_unit(&mut rng, d);
                let m = reflection_matrix(&u, &v).unwrap();
                let defect = (&m * m.transpose() - DMatrix::identity(d, d)).abs().max();
                assert!(defect < 1e-10);
                let mu = &m * nalgebra::DVector::from_column_slice(&u);
                let val = mu.dot(&nalgebra::DVector::from_column_slice(&v));
                assert!((val + 1.0).abs() < 1e-10, "d = {d}: {val}");

                let mut out = vec![0.0; d];
                let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                apply_reflection(&u, &v, &xi, &mut out);
                let dense = &m * nalgebra::DVector::from_column_slice(&xi);
                for k in 0..d {
                    assert!((out[k] - dense[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sorted_pairing_example() {
        let scheme = WeightScheme::new(Pairing::Sorted, 0.3, 4).unwrap();
        // |∇φ| = (3, 1, 4, 2) for particles 1..4 (0-based 0..3)
        let pairs = scheme.pairs(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(pairs, vec![(2, 0), (3, 1)]);
        // brute-force oracle: the descending order by value is 3,1,4,2 (1-based)
        let fixed = WeightScheme::new(Pairing::Fixed, 0.3, 4).unwrap();
        assert_eq!(fixed.pairs(&[3.0, 1.0, 4.0, 2.0]), vec![(0, 1), (2, 3)]);
        // ties broken by index
        assert_eq!(scheme.pairs(&[1.0, 1.0, 1.0, 1.0]), vec![(0, 1), (2, 3)]);
        assert!(WeightScheme::new(Pairing::Fixed, 0.3, 3).is_err());
    }

    #[test]
    fn weight_rows_are_normalized() {
        let scheme = WeightScheme::new(Pairing::Sorted, 0.6, 6).unwrap();
        let w = scheme.weights(&scheme.pairs(&[0.1, 5.0, 2.0, 3.0, 0.2, 1.0]));
        for i in 0..6 {
            let s: f64 = (0..6).map(|j| w[(i, j)] * w[(i, j)]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn block_g_examples() {
        let src = MatrixCouplingND::new(
            MatrixKind::ReflectionObservable(ObservableND::norm_sq(0.5, 3, 1.0)),
            0.0,
            3,
        )
        .unwrap();
        let scheme = WeightScheme::new(Pairing::Sorted, 0.0, 4).unwrap();
        let pos: Vec<f64> = (0..12).map(|k| k as f64 * 0.37 - 2.0).collect();
        let g = assemble_block_g(&pos, &scheme, &src).unwrap();
        assert_eq!(g, DMatrix::identity(12, 12));

        let mirror = MatrixCouplingND::new(MatrixKind::Mirror, FRAC_PI_4, 1).unwrap();
        let pair = WeightScheme::new(Pairing::Fixed, FRAC_PI_4, 2).unwrap();
        let g = assemble_block_g(&[0.4, -1.3], &pair, &mirror).unwrap();
        let reference = mixing_matrix_1d(-1.0).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((g[(a, b)] - reference[(a, b)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn block_g_rows_orthonormal_and_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 4;
        let n = 6;
        let src = MatrixCouplingND::new(
            MatrixKind::ReflectionObservable(ObservableND::norm_sq_plus_linear(5.0, 1.0, d, 1.0)),
            0.5,
            d,
        )
        .unwrap();
        for pairing in [Pairing::Fixed, Pairing::Sorted] {
            let scheme = WeightScheme::new(pairing, 0.5, n).unwrap();
            for _ in 0..200 {
                let pos: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let g = assemble_block_g(&pos, &scheme, &src).unwrap();
                assert!(row_orthonormality_defect(&g, n, d) < 1e-12);
                // Q = G Gᵀ is a covariance with unit diagonal blocks
                let q = &g * g.transpose();
                let eig = SymmetricEigen::new(q.clone());
                assert!(eig.eigenvalues.min() > -1e-10);
            }
        }
    }

    #[test]
    fn matrix_alpha_satisfies_loewner_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let c = MatrixCouplingND::new(
            MatrixKind::ReflectionObservable(ObservableND::norm_sq_plus_linear(1.0, -0.5, d, 1.0)),
            FRAC_PI_4,
            d,
        )
        .unwrap();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let a = c.alpha(&x, &y).unwrap();
            let ata = a.transpose() * &a;
            let eig = SymmetricEigen::new(ata);
            assert!(eig.eigenvalues.max() <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn reflection_in_one_dimension_matches_poisson_sign_pattern() {
        let m = build_gaussian_model(1.0, 8.0, 2001).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &Observable::mixed(1.0, -1.0, &m).unwrap()).unwrap());
        let beta = 0.4;
        let scalar = ScalarCoupling1D::new(ScalarKind::Poisson(ps.clone()), beta).unwrap();
        let matrix = MatrixCouplingND::new(MatrixKind::reflection_from_poisson_1d(ps), beta, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let (x, y) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let a = matrix.alpha(&[x], &[y]).unwrap()[(0, 0)];
            assert!((a - scalar.alpha(x, y)).abs() < 1e-14, "x={x}, y={y}");
        }
    }

    #[test]
    fn zigzag_alpha_examples() {
        let mirror = ZigzagCoupling::new(ZigzagKind::MirrorFlip, 1.0).unwrap();
        assert_eq!(mirror.alpha(0.0, 0.0, 1.0, -1.0, 2.0, 3.0), 2.0);
        assert_eq!(mirror.alpha(0.0, 0.0, 1.0, 1.0, 2.0, 3.0), 0.0);
        let indep = ZigzagCoupling::independent();
        assert_eq!(indep.alpha(1.0, 2.0, 1.0, -1.0, 2.0, 3.0), 0.0);
        let sym = ZigzagCoupling::new(ZigzagKind::SymmetricFlip, 0.5).unwrap();
        assert_eq!(sym.alpha(1.0, -1.0, 1.0, 1.0, 4.0, 3.0), 1.5);
        assert_eq!(sym.alpha(1.0, 1.0, 1.0, 1.0, 4.0, 3.0), 0.0);
        assert!(ZigzagCoupling::new(ZigzagKind::MirrorFlip, 1.5).is_err());
    }

    #[test]
    fn admissibility_probes() {
        let m = build_gaussian_model(1.0, 8.0, 2001).unwrap();
        let obs = Observable::mixed(1.0, -1.0, &m).unwrap();
        let ps = Arc::new(solve_poisson_overdamped_1d(&m, &obs).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let scalar_kinds = [
            ScalarKind::Independent,
            ScalarKind::Synchronous,
            ScalarKind::Mirror,
            ScalarKind::Symmetric,
            ScalarKind::Poisson(ps.clone()),
            ScalarKind::ObservableGrad(obs),
        ];
        let zz_kinds = [
            ZigzagKind::Independent,
            ZigzagKind::MirrorFlip,
            ZigzagKind::SymmetricFlip,
            ZigzagKind::PoissonFlip(ps),
        ];
        for kind in scalar_kinds {
            let beta = rng.random_range(0.0..FRAC_PI_4);
            let c = ScalarCoupling1D::new(kind, beta).unwrap();
            for _ in 0..10_000 {
                let (x, y) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                assert!(c.alpha(x, y).abs() <= 1.0);
            }
        }
        for kind in zz_kinds {
            let beta = rng.random_range(0.0..=1.0);
            let c = ZigzagCoupling::new(kind, beta).unwrap();
            for _ in 0..10_000 {
                let (x, y) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                let tx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let ty = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let (lx, ly) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
                let a = c.alpha(x, y, tx, ty, lx, ly);
                assert!((0.0..=lx.min(ly)).contains(&a));
            }
        }
    }
}
