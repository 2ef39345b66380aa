//! Coupled overdamped and underdamped Langevin dynamics, Euler–Maruyama.
//!
//! States are stored particle-major: particle `i` occupies
//! `state[i*d..(i+1)*d]`. Each run owns a ChaCha8 stream seeded from the
//! config; every step draws `n·d` standard normals in particle-major order
//! regardless of the coupling, so runs that differ only in the coupling see
//! the same raw noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{
    apply_reflection, mixing_coefficients, normalize_or_zero, MatrixCouplingND, MatrixKind, Pairing, ScalarCoupling1D,
    ScalarKind, WeightScheme,
};
use crate::error::{Error, Result};
use crate::estimators::{replicate_sweep, BatchAccumulator, ExtendedObservable, SweepPoint, VarianceReport};
use crate::model::{Observable, ObservableND, TargetModel1D, TargetModelND};

/// States with a coordinate beyond this magnitude abort the run.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Overdamped,
    Underdamped { gamma: f64, mass: f64 },
}

/// How the particles' Brownian increments are mixed.
#[derive(Clone, Debug)]
pub enum NoiseCoupling {
    Independent,
    /// Two particles in one dimension with a scalar coupling field.
    Pair(ScalarCoupling1D),
    /// Pairwise block mixing for an even number of particles in `d` dimensions.
    Block {
        scheme: WeightScheme,
        source: MatrixCouplingND,
    },
}

impl NoiseCoupling {
    pub fn name(&self) -> String {
        match self {
            NoiseCoupling::Independent => "independent".into(),
            NoiseCoupling::Pair(c) => c.kind().name().into(),
            NoiseCoupling::Block { scheme, source } => {
                format!("{}:{:?}", source.kind().name(), scheme.pairing).to_lowercase()
            }
        }
    }

    fn check(&self, n: usize, d: usize) -> Result<()> {
        match self {
            NoiseCoupling::Independent => Ok(()),
            NoiseCoupling::Pair(_) if n == 2 && d == 1 => Ok(()),
            NoiseCoupling::Pair(_) => Err(Error::Config(format!(
                "scalar pair coupling needs 2 particles in 1 dimension, got {n} in {d}"
            ))),
            NoiseCoupling::Block { scheme, source } => {
                if scheme.n != n || source.dim() != d {
                    Err(Error::Config(format!(
                        "block coupling built for {} particles in {} dimensions, config has {n} in {d}",
                        scheme.n,
                        source.dim()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Dense mixing matrix at `positions`; used by the explicit step functions
    /// and for cross-checking the matrix-free path.
    pub fn matrix(&self, positions: &[f64], n: usize, d: usize) -> Result<DMatrix<f64>> {
        self.check(n, d)?;
        match self {
            NoiseCoupling::Independent => Ok(DMatrix::identity(n * d, n * d)),
            NoiseCoupling::Pair(c) => {
                let (cb, sb) = mixing_coefficients(c.alpha(positions[0], positions[1]));
                Ok(DMatrix::from_row_slice(2, 2, &[cb, sb, sb, cb]))
            }
            NoiseCoupling::Block { scheme, source } => crate::coupling::assemble_block_g(positions, scheme, source),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LangevinConfig {
    pub model: TargetModelND,
    pub n_particles: usize,
    pub coupling: NoiseCoupling,
    pub dt: f64,
    pub t_total: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub dynamics: Dynamics,
    /// Initial positions (`n·d`); zeros when absent. Momenta start at zero.
    pub initial: Option<Vec<f64>>,
    /// Keep every `stride`-th post-burn-in state; 0 keeps none.
    pub stride: usize,
}

impl LangevinConfig {
    pub fn new(
        model: TargetModelND,
        n_particles: usize,
        coupling: NoiseCoupling,
        dt: f64,
        t_total: f64,
        seed: u64,
    ) -> Self {
        LangevinConfig {
            model,
            n_particles,
            coupling,
            dt,
            t_total,
            burn_in: 0.1 * t_total,
            seed,
            dynamics: Dynamics::Overdamped,
            initial: None,
            stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        if self.n_particles == 0 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.burn_in >= 0.0 && self.t_total > self.burn_in) {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < t_total, got burn_in = {}, t_total = {}",
                self.burn_in, self.t_total
            )));
        }
        if let Dynamics::Underdamped { gamma, mass } = self.dynamics {
            if !(gamma > 0.0 && mass > 0.0) {
                return Err(Error::Config(
                    "underdamped dynamics needs gamma > 0 and mass > 0".into(),
                ));
            }
        }
        if let Some(init) = &self.initial {
            if init.len() != self.n_particles * d {
                return Err(Error::Config(format!(
                    "initial state has {} coordinates, expected {}",
                    init.len(),
                    self.n_particles * d
                )));
            }
            if init.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial state".into()));
            }
        }
        self.coupling.check(self.n_particles, d)
    }

    pub fn total_steps(&self) -> u64 {
        (self.t_total / self.dt).round() as u64
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.burn_in / self.dt).round() as u64
    }

    /// Number of recorded F values.
    pub fn series_len(&self) -> usize {
        (self.total_steps() - self.burn_in_steps().min(self.total_steps())) as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    /// Present for underdamped runs.
    pub momenta: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct LangevinRun {
    pub trajectory: TrajectorySample,
    pub f_series: Vec<f64>,
}

fn check_state(state: &[f64], step: u64) -> Result<()> {
    if state.iter().all(|v| v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

fn mixed_noise(g: &DMatrix<f64>, noise: &[f64]) -> Result<DVector<f64>> {
    if g.nrows() != noise.len() || g.ncols() != noise.len() {
        return Err(Error::Config(format!(
            "mixing matrix is {}x{}, noise has {} entries",
            g.nrows(),
            g.ncols(),
            noise.len()
        )));
    }
    Ok(g * DVector::from_column_slice(noise))
}

/// One Euler–Maruyama step `X⁺ = X − ∇V(X) dt + √(2dt) G ξ`.
pub fn step_overdamped(
    state: &[f64],
    dt: f64,
    model: &TargetModelND,
    g: &DMatrix<f64>,
    noise: &[f64],
    step: u64,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let eta = mixed_noise(g, noise)?;
    let scale = (2.0 * dt).sqrt();
    let mut grad = vec![0.0; d];
    let mut out = state.to_vec();
    for (i, x) in out.chunks_mut(d).enumerate() {
        model.grad_potential(&state[i * d..(i + 1) * d], &mut grad);
        for k in 0..d {
            x[k] += -grad[k] * dt + scale * eta[i * d + k];
        }
    }
    check_state(&out, step)?;
    Ok(out)
}

/// One Euler–Maruyama step of the underdamped system; the noise enters the
/// momenta only and the position update uses the pre-step momenta.
#[allow(clippy::too_many_arguments)]
pub fn step_underdamped(
    q: &[f64],
    p: &[f64],
    dt: f64,
    model: &TargetModelND,
    gamma: f64,
    mass: f64,
    g: &DMatrix<f64>,
    noise: &[f64],
    step: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.dim();
    let eta = mixed_noise(g, noise)?;
    let scale = (2.0 * gamma * dt).sqrt();
    let mut grad = vec![0.0; d];
    let mut q_new = q.to_vec();
    let mut p_new = p.to_vec();
    for i in 0..q.len() / d {
        model.grad_potential(&q[i * d..(i + 1) * d], &mut grad);
        for k in 0..d {
            let j = i * d + k;
            q_new[j] += p[j] * dt / mass;
            p_new[j] += -grad[k] * dt - gamma * p[j] * dt + scale * eta[j];
        }
    }
    check_state(&q_new, step)?;
    check_state(&p_new, step)?;
    Ok((q_new, p_new))
}

/// Matrix-free noise mixing with reusable buffers.
struct Mixer {
    n: usize,
    d: usize,
    units: Vec<f64>,
    mags: Vec<f64>,
    tmp: Vec<f64>,
}

impl Mixer {
    fn new(n: usize, d: usize) -> Self {
        Mixer {
            n,
            d,
            units: vec![0.0; n * d],
            mags: vec![0.0; n],
            tmp: vec![0.0; d],
        }
    }

    fn mix(&mut self, coupling: &NoiseCoupling, positions: &[f64], xi: &[f64], out: &mut [f64]) {
        match coupling {
            NoiseCoupling::Independent => out.copy_from_slice(xi),
            NoiseCoupling::Pair(c) => {
                let (cb, sb) = mixing_coefficients(c.alpha(positions[0], positions[1]));
                out[0] = cb * xi[0] + sb * xi[1];
                out[1] = sb * xi[0] + cb * xi[1];
            }
            NoiseCoupling::Block { scheme, source } => self.mix_block(scheme, source, positions, xi, out),
        }
    }

    fn mix_block(
        &mut self,
        scheme: &WeightScheme,
        source: &MatrixCouplingND,
        positions: &[f64],
        xi: &[f64],
        out: &mut [f64],
    ) {
        if matches!(source.kind(), MatrixKind::Independent) {
            out.copy_from_slice(xi);
            return;
        }
        let (n, d) = (self.n, self.d);
        let (s, c) = scheme.beta.sin_cos();
        let reflect = matches!(
            source.kind(),
            MatrixKind::ReflectionPoisson(_) | MatrixKind::ReflectionObservable(_)
        );
        if reflect {
            for i in 0..n {
                let u = &mut self.units[i * d..(i + 1) * d];
                source.steering_gradient(&positions[i * d..(i + 1) * d], u);
                self.mags[i] = normalize_or_zero(u);
            }
        }
        for (i, j) in scheme.pairs(&self.mags) {
            for (a, b) in [(i, j), (j, i)] {
                let xa = &xi[a * d..(a + 1) * d];
                let xb = &xi[b * d..(b + 1) * d];
                match source.kind() {
                    MatrixKind::Mirror => self.tmp.iter_mut().zip(xb).for_each(|(t, v)| *t = -v),
                    _ => apply_reflection(
                        &self.units[a * d..(a + 1) * d],
                        &self.units[b * d..(b + 1) * d],
                        xb,
                        &mut self.tmp,
                    ),
                }
                for k in 0..d {
                    out[a * d + k] = c * xa[k] + s * self.tmp[k];
                }
            }
        }
    }
}

/// Simulates the coupled system, passing every post-burn-in value of
/// `F = (1/n) Σ f(x_i)` to `sink`. Returns the thinned trajectory.
pub fn run_langevin_streaming(
    config: &LangevinConfig,
    observable: &ObservableND,
    mut sink: impl FnMut(f64),
) -> Result<TrajectorySample> {
    config.validate()?;
    let n = config.n_particles;
    let d = config.model.dim();
    let nd = n * d;
    let big_f = ExtendedObservable::new(observable.clone(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = config.initial.clone().unwrap_or_else(|| vec![0.0; nd]);
    let mut p = vec![0.0; nd];
    let mut xi = vec![0.0; nd];
    let mut eta = vec![0.0; nd];
    let mut grad = vec![0.0; d];
    let mut mixer = Mixer::new(n, d);
    let underdamped = matches!(config.dynamics, Dynamics::Underdamped { .. });
    let mut traj = TrajectorySample {
        momenta: underdamped.then(Vec::new),
        ..Default::default()
    };
    let dt = config.dt;
    let total = config.total_steps();
    let burn = config.burn_in_steps();

    for step in 1..=total {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        mixer.mix(&config.coupling, &q, &xi, &mut eta);
        match config.dynamics {
            Dynamics::Overdamped => {
                let scale = (2.0 * dt).sqrt();
                for i in 0..n {
                    let x = &mut q[i * d..(i + 1) * d];
                    config.model.grad_potential(x, &mut grad);
                    for k in 0..d {
                        x[k] += -grad[k] * dt + scale * eta[i * d + k];
                    }
                }
            }
            Dynamics::Underdamped { gamma, mass } => {
                let scale = (2.0 * gamma * dt).sqrt();
                for i in 0..n {
                    config.model.grad_potential(&q[i * d..(i + 1) * d], &mut grad);
                    for k in 0..d {
                        let j = i * d + k;
                        let p_old = p[j];
                        p[j] += -grad[k] * dt - gamma * p_old * dt + scale * eta[j];
                        q[j] += p_old * dt / mass;
                    }
                }
                check_state(&p, step)?;
            }
        }
        check_state(&q, step)?;
        if step > burn {
            sink(big_f.value(&q));
            if config.stride > 0 && (step - burn).is_multiple_of(config.stride as u64) {
                traj.times.push(step as f64 * dt);
                traj.positions.push(q.clone());
                if let Some(m) = traj.momenta.as_mut() {
                    m.push(p.clone());
                }
            }
        }
    }
    Ok(traj)
}

/// Simulates and returns the thinned trajectory together with the full F-series.
pub fn run_langevin(config: &LangevinConfig, observable: &ObservableND) -> Result<LangevinRun> {
    let mut f_series = Vec::with_capacity(config.series_len());
    let trajectory = run_langevin_streaming(config, observable, |v| f_series.push(v))?;
    Ok(LangevinRun { trajectory, f_series })
}

/// Batch-means variance report of one run without storing the F-series.
pub fn langevin_variance(
    config: &LangevinConfig,
    observable: &ObservableND,
    n_batches: usize,
) -> Result<VarianceReport> {
    config.validate()?;
    let mut acc = BatchAccumulator::new(config.series_len(), n_batches, config.dt)?;
    run_langevin_streaming(config, observable, |v| acc.push(v))?;
    acc.finish()
}

/// Run-length and replication settings shared by the sweep drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub dt: f64,
    pub t_total: f64,
    pub burn_in: f64,
    pub replicates: usize,
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            dt: 1e-2,
            t_total: 2e4,
            burn_in: 2e3,
            replicates: 20,
            n_batches: crate::estimators::DEFAULT_BATCHES,
            seed: 1,
        }
    }
}

/// Strength sweep of a two-particle scalar coupling in one dimension.
pub fn pair_sweep(
    model: &TargetModel1D,
    obs: &Observable,
    kind: &ScalarKind,
    betas: &[f64],
    s: &SweepSettings,
) -> Result<Vec<SweepPoint>> {
    let nd = model.to_nd();
    let f = obs.to_nd();
    replicate_sweep(betas, s.replicates, s.seed, |beta, seed| {
        let c = ScalarCoupling1D::new(kind.clone(), beta)?;
        let mut cfg = LangevinConfig::new(nd.clone(), 2, NoiseCoupling::Pair(c), s.dt, s.t_total, seed);
        cfg.burn_in = s.burn_in;
        langevin_variance(&cfg, &f, s.n_batches)
    })
}

/// Strength sweep of a pairwise block coupling of `n` particles in `ℝ^d`;
/// `β = 0` runs use independent noise.
pub fn block_sweep(
    model: &TargetModelND,
    obs: &ObservableND,
    n: usize,
    pairing: Pairing,
    kind: &MatrixKind,
    betas: &[f64],
    s: &SweepSettings,
) -> Result<Vec<SweepPoint>> {
    let d = model.dim();
    replicate_sweep(betas, s.replicates, s.seed, |beta, seed| {
        let coupling = NoiseCoupling::Block {
            scheme: WeightScheme::new(pairing, beta, n)?,
            source: MatrixCouplingND::new(kind.clone(), beta, d)?,
        };
        let mut cfg = LangevinConfig::new(model.clone(), n, coupling, s.dt, s.t_total, seed);
        cfg.burn_in = s.burn_in;
        langevin_variance(&cfg, obs, s.n_batches)
    })
}
