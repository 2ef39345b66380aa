//! Two coupled one-dimensional zigzag processes.
//!
//! Events are generated by thinning. Over a lookahead horizon `h` the rate of
//! each particle is bounded by `max(0, θV'(x)) + L h + γ_max`, where `L` is a
//! Lipschitz constant of `V'`; since the coupled total rate is
//! `λx + λy − α ≤ λx + λy`, the sum of the two particle bounds dominates it.
//!
//! Time-weighted statistics are collected in fixed-width bins after burn-in.
//! Linear functions of the positions and `|x − y|` are integrated exactly over
//! each straight segment, other observables by Simpson's rule.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::ZigzagCoupling;
use crate::error::{Error, Result};
use crate::estimators::{batch_means_variance, pool_reports, replicate_seed, VarianceReport};
use crate::model::{Observable, ScalarFn, TargetModel1D};

const RATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZigzagState {
    pub x: f64,
    pub y: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub t: f64,
}

impl ZigzagState {
    pub fn new(x: f64, y: f64, theta_x: f64, theta_y: f64) -> Result<Self> {
        if theta_x.abs() != 1.0 || theta_y.abs() != 1.0 {
            return Err(Error::Config(format!(
                "velocities must be ±1, got ({theta_x}, {theta_y})"
            )));
        }
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("zigzag position".into()));
        }
        Ok(ZigzagState {
            x,
            y,
            theta_x,
            theta_y,
            t: 0.0,
        })
    }

    fn advance(&mut self, s: f64) {
        self.x += self.theta_x * s;
        self.y += self.theta_y * s;
        self.t += s;
    }
}

/// Switching rate `λ(x, θ) = max(0, θV'(x)) + γ(x)`.
#[derive(Clone)]
pub struct RateSpec {
    grad_potential: ScalarFn,
    excess: ScalarFn,
    excess_max: f64,
    lipschitz: f64,
}

impl RateSpec {
    pub fn new(grad_potential: ScalarFn, excess: ScalarFn, excess_max: f64, lipschitz: f64) -> Result<Self> {
        if !(excess_max >= 0.0 && lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(
                "excess bound and Lipschitz constant must be nonnegative".into(),
            ));
        }
        Ok(RateSpec {
            grad_potential,
            excess,
            excess_max,
            lipschitz,
        })
    }

    /// Constant excess rate `γ` on a model that declares a Lipschitz constant for `V'`.
    pub fn constant(model: &TargetModel1D, gamma: f64) -> Result<Self> {
        let lipschitz = model
            .grad_lipschitz()
            .ok_or_else(|| Error::Config(format!("model {} declares no Lipschitz constant for V'", model.label())))?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("excess rate must be nonnegative, got {gamma}")));
        }
        RateSpec::new(
            model.grad_potential_fn().clone(),
            std::sync::Arc::new(move |_| gamma),
            gamma,
            lipschitz,
        )
    }

    pub fn excess(&self, x: f64) -> f64 {
        (self.excess)(x)
    }

    pub fn rate(&self, x: f64, theta: f64) -> f64 {
        (theta * (self.grad_potential)(x)).max(0.0) + self.excess(x)
    }

    /// Bound on `λ(x + θs, θ)` for `0 ≤ s ≤ horizon`.
    pub fn bound(&self, x: f64, theta: f64, horizon: f64) -> f64 {
        (theta * (self.grad_potential)(x)).max(0.0) + self.lipschitz * horizon + self.excess_max
    }
}

impl fmt::Debug for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateSpec")
            .field("excess_max", &self.excess_max)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Rates `(λx − α, λy − α, α)` of the single and double flips.
pub fn coupled_event_rates(
    state: &ZigzagState,
    rates: &RateSpec,
    coupling: &ZigzagCoupling,
) -> Result<(f64, f64, f64)> {
    let lx = rates.rate(state.x, state.theta_x);
    let ly = rates.rate(state.y, state.theta_y);
    let alpha = coupling.alpha(state.x, state.y, state.theta_x, state.theta_y, lx, ly);
    let (rx, ry, rxy) = (lx - alpha, ly - alpha, alpha);
    if rx < -RATE_SLACK || ry < -RATE_SLACK || rxy < -RATE_SLACK {
        return Err(Error::Admissibility(format!(
            "negative zigzag rate at (x, y) = ({}, {}): ({rx}, {ry}, {rxy})",
            state.x, state.y
        )));
    }
    let total = rx + ry + rxy;
    if (total - (lx + ly - alpha)).abs() > 1e-12 * (1.0 + lx + ly) {
        return Err(Error::Assertion("total-rate identity".into()));
    }
    Ok((rx.max(0.0), ry.max(0.0), rxy.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    X,
    Y,
    XY,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::X => "x",
            EventKind::Y => "y",
            EventKind::XY => "xy",
        }
    }
}

/// State immediately after an accepted event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZigzagEvent {
    pub state: ZigzagState,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct ZigzagConfig {
    pub t_total: f64,
    pub burn_in: f64,
    pub seed: u64,
    /// Thinning lookahead.
    pub horizon: f64,
    /// Width of the time bins used for batch means.
    pub bin_width: f64,
    /// Initial state; `(0, 0)` with random velocities when absent.
    pub initial: Option<ZigzagState>,
    pub record_events: bool,
}

impl ZigzagConfig {
    pub fn new(t_total: f64, burn_in: f64, seed: u64) -> Self {
        ZigzagConfig {
            t_total,
            burn_in,
            seed,
            horizon: 0.5,
            bin_width: 1.0,
            initial: None,
            record_events: false,
        }
    }
}

/// Time-weighted quantities recorded per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// `½(f(x) + f(y))`
    F,
    X,
    X2,
    /// Indicator of `θx θy = −1`.
    Opposite,
    /// `|x − y|`
    AbsDiff,
}

const CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EventCounts {
    pub x: u64,
    pub y: u64,
    pub xy: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone)]
pub struct ZigzagStats {
    pub window: f64,
    pub bin_width: f64,
    bins: [Vec<f64>; CHANNELS],
    pub counts: EventCounts,
    pub events: Option<Vec<ZigzagEvent>>,
    pub final_state: ZigzagState,
}

impl ZigzagStats {
    /// Bin averages of a channel.
    pub fn bins(&self, c: Channel) -> &[f64] {
        &self.bins[c as usize]
    }

    /// Time average over the observation window.
    pub fn mean(&self, c: Channel) -> f64 {
        let b = self.bins(c);
        b.iter().sum::<f64>() / b.len() as f64
    }

    pub fn report(&self, c: Channel, n_batches: usize) -> Result<VarianceReport> {
        batch_means_variance(self.bins(c), self.bin_width, n_batches)
    }

    /// Time-averaged variance of `x` and its standard error (delta method
    /// through batch means of `x² − 2 m x`).
    pub fn var_x(&self, n_batches: usize) -> Result<(f64, f64)> {
        let m = self.mean(Channel::X);
        let v = self.mean(Channel::X2) - m * m;
        let lin: Vec<f64> = self
            .bins(Channel::X2)
            .iter()
            .zip(self.bins(Channel::X))
            .map(|(q, x)| q - 2.0 * m * x)
            .collect();
        let r = batch_means_variance(&lin, self.bin_width, n_batches)?;
        Ok((v, (r.asym_var / self.window).sqrt()))
    }
}

/// Integral of `|a + b s|` over `[0, len]`.
fn abs_linear_integral(a: f64, b: f64, len: f64) -> f64 {
    let end = a + b * len;
    if a * end >= 0.0 {
        0.5 * (a.abs() + end.abs()) * len
    } else {
        let s0 = -a / b;
        0.5 * (a.abs() * s0 + end.abs() * (len - s0))
    }
}

struct Accumulator<'a> {
    obs: &'a Observable,
    f_linear: bool,
    start: f64,
    bin_width: f64,
    n_bins: usize,
    sums: [Vec<f64>; CHANNELS],
}

impl Accumulator<'_> {
    /// Adds the straight segment starting at `s` and lasting `len`.
    fn add(&mut self, s: &ZigzagState, len: f64) {
        let end_window = self.start + self.bin_width * self.n_bins as f64;
        let mut t0 = s.t.max(self.start);
        let t1 = (s.t + len).min(end_window);
        while t0 < t1 {
            let bin = (((t0 - self.start) / self.bin_width) as usize).min(self.n_bins - 1);
            let bin_end = (self.start + (bin + 1) as f64 * self.bin_width).min(t1);
            let piece = bin_end - t0;
            if piece > 0.0 {
                let off = t0 - s.t;
                self.piece(
                    bin,
                    s.x + s.theta_x * off,
                    s.y + s.theta_y * off,
                    s.theta_x,
                    s.theta_y,
                    piece,
                );
            }
            if bin_end <= t0 {
                break;
            }
            t0 = bin_end;
        }
    }

    fn piece(&mut self, bin: usize, x: f64, y: f64, tx: f64, ty: f64, len: f64) {
        let (xm, ym) = (x + 0.5 * tx * len, y + 0.5 * ty * len);
        let (x1, y1) = (x + tx * len, y + ty * len);
        let f_int = if self.f_linear {
            0.5 * (self.obs.value(xm) + self.obs.value(ym)) * len
        } else {
            let f = |u: f64, v: f64| 0.5 * (self.obs.value(u) + self.obs.value(v));
            (f(x, y) + 4.0 * f(xm, ym) + f(x1, y1)) * len / 6.0
        };
        let s = &mut self.sums;
        s[Channel::F as usize][bin] += f_int;
        s[Channel::X as usize][bin] += xm * len;
        s[Channel::X2 as usize][bin] += (x * x + 4.0 * xm * xm + x1 * x1) * len / 6.0;
        if tx * ty < 0.0 {
            s[Channel::Opposite as usize][bin] += len;
        }
        s[Channel::AbsDiff as usize][bin] += abs_linear_integral(x - y, tx - ty, len);
    }
}

/// Simulates the coupled pair and returns binned time-weighted statistics.
pub fn simulate_coupled_zigzag(
    model: &TargetModel1D,
    rates: &RateSpec,
    coupling: &ZigzagCoupling,
    config: &ZigzagConfig,
    observable: &Observable,
) -> Result<ZigzagStats> {
    if !(config.horizon > 0.0 && config.bin_width > 0.0) {
        return Err(Error::Config("horizon and bin width must be positive".into()));
    }
    if config.burn_in < 0.0 {
        return Err(Error::Config("burn-in must be nonnegative".into()));
    }
    let window = config.t_total - config.burn_in;
    if !(window > 0.0) || window < config.bin_width {
        return Err(Error::EmptyWindow);
    }
    let n_bins = (window / config.bin_width).round().max(1.0) as usize;
    let bin_width = window / n_bins as f64;
    let (lo, hi) = model.domain();
    let f_linear = {
        let probes = [lo, 0.5 * (lo + hi), hi, 0.3 * lo + 0.7 * hi];
        let d0 = observable.derivative(probes[0]);
        probes
            .iter()
            .all(|&p| (observable.derivative(p) - d0).abs() <= 1e-12 * (1.0 + d0.abs()))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = match config.initial {
        Some(s) => ZigzagState { t: 0.0, ..s },
        None => {
            let mut coin = || if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (a, b) = (coin(), coin());
            ZigzagState::new(0.0, 0.0, a, b)?
        }
    };
    let mut acc = Accumulator {
        obs: observable,
        f_linear,
        start: config.burn_in,
        bin_width,
        n_bins,
        sums: std::array::from_fn(|_| vec![0.0; n_bins]),
    };
    let mut counts = EventCounts::default();
    let mut events = config.record_events.then(Vec::new);
    let h = config.horizon;

    while state.t < config.t_total {
        let bound = rates.bound(state.x, state.theta_x, h) + rates.bound(state.y, state.theta_y, h);
        let tau: f64 = if bound > 0.0 {
            rng.sample::<f64, _>(Exp1) / bound
        } else {
            f64::INFINITY
        };
        let step = tau.min(h).min(config.t_total - state.t);
        acc.add(&state, step);
        state.advance(step);
        if !(state.x.is_finite() && state.y.is_finite()) {
            return Err(Error::NonFinite("zigzag position".into()));
        }
        if step < tau {
            continue;
        }
        let (rx, ry, rxy) = coupled_event_rates(&state, rates, coupling)?;
        let total = rx + ry + rxy;
        if total > bound * (1.0 + 1e-12) {
            return Err(Error::ThinningBound { rate: total, bound });
        }
        let u = rng.random::<f64>() * bound;
        if u >= total {
            counts.rejected += 1;
            continue;
        }
        let kind = if u < rx {
            EventKind::X
        } else if u < rx + ry {
            EventKind::Y
        } else {
            EventKind::XY
        };
        let before = state.theta_x * state.theta_y;
        match kind {
            EventKind::X => {
                state.theta_x = -state.theta_x;
                counts.x += 1;
            }
            EventKind::Y => {
                state.theta_y = -state.theta_y;
                counts.y += 1;
            }
            EventKind::XY => {
                state.theta_x = -state.theta_x;
                state.theta_y = -state.theta_y;
                counts.xy += 1;
            }
        }
        let after = state.theta_x * state.theta_y;
        if (kind == EventKind::XY) != (after == before) {
            return Err(Error::Assertion("flip parity".into()));
        }
        if let Some(log) = events.as_mut() {
            log.push(ZigzagEvent { state, kind });
        }
    }

    let bins = acc.sums.map(|v| v.into_iter().map(|s| s / bin_width).collect());
    Ok(ZigzagStats {
        window,
        bin_width,
        bins,
        counts,
        events,
        final_state: state,
    })
}

/// Independent replicates of one zigzag configuration, in replicate order.
pub fn zigzag_replicates(
    model: &TargetModel1D,
    rates: &RateSpec,
    coupling: &ZigzagCoupling,
    config: &ZigzagConfig,
    observable: &Observable,
    replicates: usize,
) -> Result<Vec<ZigzagStats>> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r);
            let cfg = ZigzagConfig { seed, ..config.clone() };
            simulate_coupled_zigzag(model, rates, coupling, &cfg, observable).map_err(|e| Error::Replicate {
                beta: coupling.beta(),
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Pools a channel over replicates.
pub fn pooled_channel(stats: &[ZigzagStats], channel: Channel, n_batches: usize) -> Result<VarianceReport> {
    let reports = stats
        .iter()
        .map(|s| s.report(channel, n_batches))
        .collect::<Result<Vec<_>>>()?;
    pool_reports(&reports)
}
