//! One function per subcommand. Each reads its keys from the configuration,
//! runs the library and writes its output files.

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use coupled_mcmc::coupling::{
    MatrixCouplingND, MatrixKind, Pairing, ScalarCoupling1D, ScalarKind, WeightScheme, ZigzagCoupling, ZigzagKind,
};
use coupled_mcmc::estimators::{BatchAccumulator, VarianceReport};
use coupled_mcmc::langevin::{
    block_sweep, pair_sweep, run_langevin, run_langevin_streaming, Dynamics, LangevinConfig, NoiseCoupling,
    SweepSettings,
};
use coupled_mcmc::model::{Observable, ObservableND, ObservableSpec, PotentialSpec, TargetModel1D, TargetModelND};
use coupled_mcmc::ot::{
    assemble_cost, cost_range, plan_cost_of_empirical, plan_diagonal_mass, sinkhorn_ladder, DiscreteMarginal, PairCost,
};
use coupled_mcmc::poisson::{solve_poisson_overdamped_1d, solve_poisson_zigzag_1d, PoissonSolution};
use coupled_mcmc::spectral::{coupled_rate_mirror, spectral_report};
use coupled_mcmc::variance::{delta_sigma_overdamped_1d, delta_sigma_zigzag, McCheck};
use coupled_mcmc::zigzag::{
    pooled_channel, simulate_coupled_zigzag, zigzag_replicates, Channel, RateSpec, ZigzagConfig,
};
use serde_json::json;

use crate::config::Config;
use crate::output::{write_json, Cell, Csv, Provenance};
use crate::CliError;

pub const EXPERIMENTS: [&str; 8] = [
    "poisson",
    "delta-sigma",
    "langevin",
    "zigzag",
    "variance-sweep",
    "sort-compare",
    "ot-compare",
    "spectral",
];

const SCALAR_KINDS: [&str; 6] = [
    "independent",
    "synchronous",
    "mirror",
    "symmetric",
    "poisson",
    "observable_grad",
];
const MATRIX_KINDS: [&str; 4] = ["independent", "mirror", "reflection_poisson", "reflection_observable"];
const ZIGZAG_KINDS: [&str; 4] = ["independent", "mirror_flip", "symmetric_flip", "poisson_flip"];

/// Everything an experiment needs besides its own keys.
pub struct Context<'a> {
    pub config: &'a Config,
    pub out_dir: &'a Path,
    pub provenance: Provenance,
}

pub fn run(name: &str, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    match name {
        "poisson" => poisson(ctx),
        "delta-sigma" => delta_sigma(ctx),
        "langevin" => langevin(ctx),
        "zigzag" => zigzag(ctx),
        "variance-sweep" => variance_sweep(ctx),
        "sort-compare" => sort_compare(ctx),
        "ot-compare" => ot_compare(ctx),
        "spectral" => spectral(ctx),
        other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
    }
}

fn model_1d(c: &Config) -> Result<TargetModel1D, CliError> {
    let spec: PotentialSpec = c.get("model.potential", PotentialSpec::Gaussian { sigma: 1.0 })?;
    let half = c.positive("model.domain", 8.0)?;
    let grid = c.count("model.grid", 2001)?;
    Ok(spec.build(half, grid)?)
}

fn observable_spec(c: &Config) -> Result<ObservableSpec, CliError> {
    c.get("observable", ObservableSpec::Linear)
}

fn seed(c: &Config) -> Result<u64, CliError> {
    c.get("numerics.seed", 1)
}

/// Run length settings; burn-in defaults to 10% of the horizon.
fn settings(c: &Config, t_default: f64) -> Result<SweepSettings, CliError> {
    let t_total = c.positive("numerics.t_total", t_default)?;
    let burn_in: f64 = c.get("numerics.burn_in", 0.1 * t_total)?;
    if !(burn_in >= 0.0 && burn_in < t_total) {
        return Err(CliError::Config(format!(
            "numerics.burn_in must lie in [0, t_total), got {burn_in}"
        )));
    }
    Ok(SweepSettings {
        dt: c.positive("numerics.dt", 1e-2)?,
        t_total,
        burn_in,
        replicates: c.count("numerics.replicates", 20)?,
        n_batches: c.count("numerics.batches", 50)?,
        seed: seed(c)?,
    })
}

fn check_kind(name: &str, allowed: &[&str], what: &str) -> Result<(), CliError> {
    if allowed.contains(&name) {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "unknown {what} kind `{name}`; expected one of {}",
            allowed.join(", ")
        )))
    }
}

fn scalar_kind(name: &str, ps: &Arc<PoissonSolution>, obs: &Observable) -> Result<ScalarKind, CliError> {
    check_kind(name, &SCALAR_KINDS, "scalar coupling")?;
    Ok(match name {
        "independent" => ScalarKind::Independent,
        "synchronous" => ScalarKind::Synchronous,
        "mirror" => ScalarKind::Mirror,
        "symmetric" => ScalarKind::Symmetric,
        "poisson" => ScalarKind::Poisson(ps.clone()),
        _ => ScalarKind::ObservableGrad(obs.clone()),
    })
}

fn matrix_kind(name: &str, obs: &ObservableND, ps: Option<&Arc<PoissonSolution>>) -> Result<MatrixKind, CliError> {
    check_kind(name, &MATRIX_KINDS, "block coupling")?;
    Ok(match name {
        "independent" => MatrixKind::Independent,
        "mirror" => MatrixKind::Mirror,
        "reflection_poisson" => match ps {
            Some(ps) => MatrixKind::reflection_from_poisson_1d(ps.clone()),
            None => {
                return Err(CliError::Config(
                    "reflection_poisson needs a one-dimensional model (no Poisson solver in d > 1); use reflection_observable".into(),
                ))
            }
        },
        _ => MatrixKind::ReflectionObservable(obs.clone()),
    })
}

fn zigzag_kind(name: &str, ps: &Arc<PoissonSolution>) -> Result<ZigzagKind, CliError> {
    check_kind(name, &ZIGZAG_KINDS, "zigzag coupling")?;
    Ok(match name {
        "independent" => ZigzagKind::Independent,
        "mirror_flip" => ZigzagKind::MirrorFlip,
        "symmetric_flip" => ZigzagKind::SymmetricFlip,
        _ => ZigzagKind::PoissonFlip(ps.clone()),
    })
}

fn pairing(c: &Config) -> Result<Pairing, CliError> {
    match c.raw("coupling.pairing").unwrap_or("fixed") {
        "fixed" => Ok(Pairing::Fixed),
        "sorted" => Ok(Pairing::Sorted),
        other => Err(CliError::Config(format!(
            "coupling.pairing must be fixed or sorted, got `{other}`"
        ))),
    }
}

fn report_cells(r: &VarianceReport) -> [Cell; 5] {
    [
        r.mean.into(),
        r.mean_ci.into(),
        r.asym_var.into(),
        r.ci_halfwidth.into(),
        r.replicate_count.into(),
    ]
}

const REPORT_COLUMNS: [&str; 5] = ["mean", "mean_ci", "asym_var", "ci_halfwidth", "replicates"];

fn with_report_columns(lead: &[&'static str]) -> Vec<&'static str> {
    lead.iter().copied().chain(REPORT_COLUMNS).collect()
}

fn poisson(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let model = model_1d(c)?;
    let obs = observable_spec(c)?.build_1d(&model)?;
    let ps = match c.raw("poisson.generator").unwrap_or("overdamped") {
        "overdamped" => solve_poisson_overdamped_1d(&model, &obs)?,
        "zigzag" => solve_poisson_zigzag_1d(&model, &obs)?,
        other => {
            return Err(CliError::Config(format!(
                "poisson.generator must be overdamped or zigzag, got `{other}`"
            )))
        }
    };
    let mut csv = Csv::new(&["x", "phi", "dphi", "residual"]);
    csv.note("residual_max", ps.residual_max());
    for i in 0..ps.nodes().len() {
        csv.row(&[
            ps.nodes()[i].into(),
            ps.phi()[i].into(),
            ps.dphi()[i].into(),
            ps.residual()[i].into(),
        ]);
    }
    Ok(vec![csv.write(ctx.out_dir, "poisson.csv", &ctx.provenance)?])
}

fn mc_check(c: &Config) -> Result<Option<McCheck>, CliError> {
    let samples: usize = c.get("delta_sigma.mc_samples", 0)?;
    Ok((samples > 0).then_some(McCheck {
        samples,
        seed: seed(c)?,
    }))
}

fn delta_sigma(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let model = model_1d(c)?;
    let obs = observable_spec(c)?.build_1d(&model)?;
    let mc = mc_check(c)?;
    let mut csv = Csv::new(&["kind", "beta", "delta_sigma", "mc_value", "mc_ci"]);
    match c.raw("delta_sigma.dynamics").unwrap_or("overdamped") {
        "overdamped" => {
            let ps = Arc::new(solve_poisson_overdamped_1d(&model, &obs)?);
            let beta: f64 = c.get("coupling.beta", FRAC_PI_4)?;
            csv.note("dynamics", "overdamped");
            let kinds = c
                .list("coupling.kinds")
                .unwrap_or(SCALAR_KINDS.map(String::from).to_vec());
            for name in kinds {
                let coupling = ScalarCoupling1D::new(scalar_kind(&name, &ps, &obs)?, beta)?;
                let r = delta_sigma_overdamped_1d(&model, &ps, &coupling, mc)?;
                csv.row(&[
                    name.into(),
                    beta.into(),
                    r.value.into(),
                    r.mc_value.into(),
                    r.mc_ci.into(),
                ]);
            }
        }
        "zigzag" => {
            let ps = Arc::new(solve_poisson_zigzag_1d(&model, &obs)?);
            let rates = RateSpec::constant(&model, c.get("zigzag.gamma", 0.1)?)?;
            let beta: f64 = c.get("coupling.beta", 1.0)?;
            csv.note("dynamics", "zigzag");
            let kinds = c
                .list("coupling.kinds")
                .unwrap_or(ZIGZAG_KINDS.map(String::from).to_vec());
            for name in kinds {
                let coupling = ZigzagCoupling::new(zigzag_kind(&name, &ps)?, beta)?;
                let r = delta_sigma_zigzag(&model, &ps, &coupling, &rates, mc)?;
                csv.row(&[
                    name.into(),
                    beta.into(),
                    r.value.into(),
                    r.mc_value.into(),
                    r.mc_ci.into(),
                ]);
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "delta_sigma.dynamics must be overdamped or zigzag, got `{other}`"
            )))
        }
    }
    Ok(vec![csv.write(ctx.out_dir, "delta_sigma.csv", &ctx.provenance)?])
}

/// Model, observable and noise coupling for a Langevin run at strength `beta`.
struct LangevinSetup {
    model: TargetModelND,
    obs: ObservableND,
    n: usize,
    build: Box<dyn Fn(f64) -> Result<NoiseCoupling, CliError> + Sync>,
}

fn langevin_setup(c: &Config, kind: &str) -> Result<LangevinSetup, CliError> {
    let dim = c.count("model.dim", 1)?;
    let n = c.count("langevin.particles", 2)?;
    let spec = observable_spec(c)?;
    if dim == 1 {
        let m1 = model_1d(c)?;
        let obs1 = spec.build_1d(&m1)?;
        let model = m1.to_nd();
        let obs = obs1.to_nd();
        let scheme = c
            .raw("coupling.scheme")
            .unwrap_or(if n == 2 { "pair" } else { "block" });
        let build: Box<dyn Fn(f64) -> Result<NoiseCoupling, CliError> + Sync> = match scheme {
            "pair" => {
                if n != 2 {
                    return Err(CliError::Config(
                        "coupling.scheme = pair needs langevin.particles = 2".into(),
                    ));
                }
                let ps = Arc::new(solve_poisson_overdamped_1d(&m1, &obs1)?);
                let k = scalar_kind(kind, &ps, &obs1)?;
                Box::new(move |beta| Ok(NoiseCoupling::Pair(ScalarCoupling1D::new(k.clone(), beta)?)))
            }
            "block" => {
                let ps = Arc::new(solve_poisson_overdamped_1d(&m1, &obs1)?);
                block_builder(matrix_kind(kind, &obs, Some(&ps))?, pairing(c)?, n, 1)
            }
            other => {
                return Err(CliError::Config(format!(
                    "coupling.scheme must be pair or block, got `{other}`"
                )))
            }
        };
        Ok(LangevinSetup { model, obs, n, build })
    } else {
        let sigma = match c.get("model.potential", PotentialSpec::Gaussian { sigma: 1.0 })? {
            PotentialSpec::Gaussian { sigma } => sigma,
            other => {
                return Err(CliError::Config(format!(
                    "model.dim > 1 supports only gaussian potentials, got {other:?}"
                )))
            }
        };
        let model = TargetModelND::gaussian(dim, sigma)?;
        let obs = spec.build_gaussian_nd(dim, sigma);
        let build = block_builder(matrix_kind(kind, &obs, None)?, pairing(c)?, n, dim);
        Ok(LangevinSetup { model, obs, n, build })
    }
}

fn block_builder(
    kind: MatrixKind,
    pairing: Pairing,
    n: usize,
    d: usize,
) -> Box<dyn Fn(f64) -> Result<NoiseCoupling, CliError> + Sync> {
    Box::new(move |beta| {
        Ok(NoiseCoupling::Block {
            scheme: WeightScheme::new(pairing, beta, n)?,
            source: MatrixCouplingND::new(kind.clone(), beta, d)?,
        })
    })
}

fn langevin(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let kind = c.raw("coupling.kind").unwrap_or("independent").to_string();
    let setup = langevin_setup(c, &kind)?;
    let beta: f64 = c.get("coupling.beta", 0.0)?;
    let s = settings(c, 2e4)?;
    let mut cfg = LangevinConfig::new(
        setup.model.clone(),
        setup.n,
        (setup.build)(beta)?,
        s.dt,
        s.t_total,
        s.seed,
    );
    cfg.burn_in = s.burn_in;
    cfg.dynamics = match c.raw("langevin.dynamics").unwrap_or("overdamped") {
        "overdamped" => Dynamics::Overdamped,
        "underdamped" => Dynamics::Underdamped {
            gamma: c.positive("langevin.gamma", 1.0)?,
            mass: c.positive("langevin.mass", 1.0)?,
        },
        other => {
            return Err(CliError::Config(format!(
                "langevin.dynamics must be overdamped or underdamped, got `{other}`"
            )))
        }
    };
    cfg.initial = c.numbers("langevin.initial")?;
    let trajectory = c.flag("langevin.trajectory")?;
    cfg.stride = if trajectory {
        c.count("langevin.stride", 100)?
    } else {
        0
    };
    cfg.validate()?;

    let mut acc = BatchAccumulator::new(cfg.series_len(), s.n_batches, cfg.dt)?;
    let traj = run_langevin_streaming(&cfg, &setup.obs, |v| acc.push(v))?;
    let report = acc.finish()?;

    let mut files = Vec::new();
    let mut csv = Csv::new(&with_report_columns(&[
        "coupling",
        "beta",
        "particles",
        "dim",
        "dt",
        "t_total",
        "burn_in",
    ]));
    let mut cells: Vec<Cell> = vec![
        cfg.coupling.name().into(),
        beta.into(),
        setup.n.into(),
        setup.model.dim().into(),
        s.dt.into(),
        s.t_total.into(),
        s.burn_in.into(),
    ];
    cells.extend(report_cells(&report));
    csv.note("n_batches", s.n_batches);
    csv.row(&cells);
    files.push(csv.write(ctx.out_dir, "langevin_summary.csv", &ctx.provenance)?);

    if trajectory {
        let d = setup.model.dim();
        let mut columns = vec!["t".to_string(), "particle".to_string()];
        columns.extend((0..d).map(|k| format!("x{k}")));
        if traj.momenta.is_some() {
            columns.extend((0..d).map(|k| format!("p{k}")));
        }
        let col_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut csv = Csv::new(&col_refs);
        for (s_idx, (t, q)) in traj.times.iter().zip(&traj.positions).enumerate() {
            for i in 0..setup.n {
                let mut row: Vec<Cell> = vec![(*t).into(), i.into()];
                row.extend(q[i * d..(i + 1) * d].iter().map(|v| Cell::Num(*v)));
                if let Some(m) = &traj.momenta {
                    row.extend(m[s_idx][i * d..(i + 1) * d].iter().map(|v| Cell::Num(*v)));
                }
                csv.row(&row);
            }
        }
        files.push(csv.write(ctx.out_dir, "trajectory.csv", &ctx.provenance)?);
    }
    Ok(files)
}

fn zigzag_setup(
    c: &Config,
) -> Result<(TargetModel1D, Observable, RateSpec, Arc<PoissonSolution>, ZigzagConfig), CliError> {
    let model = model_1d(c)?;
    let obs = observable_spec(c)?.build_1d(&model)?;
    let rates = RateSpec::constant(&model, c.get("zigzag.gamma", 0.1)?)?;
    let ps = Arc::new(solve_poisson_zigzag_1d(&model, &obs)?);
    let t_total = c.positive("numerics.t_total", 5e4)?;
    let mut cfg = ZigzagConfig::new(t_total, c.get("numerics.burn_in", 0.01 * t_total)?, seed(c)?);
    cfg.horizon = c.positive("zigzag.horizon", cfg.horizon)?;
    cfg.bin_width = c.positive("zigzag.bin_width", cfg.bin_width)?;
    Ok((model, obs, rates, ps, cfg))
}

fn zigzag(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let (model, obs, rates, ps, mut cfg) = zigzag_setup(c)?;
    let kind = zigzag_kind(c.raw("coupling.kind").unwrap_or("independent"), &ps)?;
    let beta: f64 = c.get("coupling.beta", 0.0)?;
    let coupling = ZigzagCoupling::new(kind, beta)?;
    let reps = c.count("numerics.replicates", 10)?;
    let nb = c.count("numerics.batches", 50)?;
    let stats = zigzag_replicates(&model, &rates, &coupling, &cfg, &obs, reps)?;

    let mut files = Vec::new();
    let mut csv = Csv::new(&with_report_columns(&["quantity"]));
    csv.note("coupling", coupling.kind().name());
    csv.note("beta", beta);
    for (name, ch) in [
        ("F", Channel::F),
        ("x", Channel::X),
        ("x2", Channel::X2),
        ("opposite_fraction", Channel::Opposite),
        ("abs_diff", Channel::AbsDiff),
    ] {
        let r = pooled_channel(&stats, ch, nb)?;
        let mut row: Vec<Cell> = vec![name.into()];
        row.extend(report_cells(&r));
        csv.row(&row);
    }
    let (var_x, se) = stats[0].var_x(nb)?;
    csv.note("var_x_replicate0", format!("{var_x} (SE {se})"));
    let counts = stats.iter().fold([0u64; 4], |a, s| {
        [
            a[0] + s.counts.x,
            a[1] + s.counts.y,
            a[2] + s.counts.xy,
            a[3] + s.counts.rejected,
        ]
    });
    csv.note(
        "events_x_y_xy_rejected",
        format!("{} {} {} {}", counts[0], counts[1], counts[2], counts[3]),
    );
    files.push(csv.write(ctx.out_dir, "zigzag_stats.csv", &ctx.provenance)?);

    if c.flag("zigzag.events")? {
        // Replicate 0 again, this time keeping the event log.
        cfg.seed = coupled_mcmc::estimators::replicate_seed(cfg.seed, 0);
        cfg.record_events = true;
        let st = simulate_coupled_zigzag(&model, &rates, &coupling, &cfg, &obs)?;
        let mut csv = Csv::new(&["t", "x", "y", "theta_x", "theta_y", "event_type"]);
        for e in st.events.iter().flatten() {
            csv.row(&[
                e.state.t.into(),
                e.state.x.into(),
                e.state.y.into(),
                e.state.theta_x.into(),
                e.state.theta_y.into(),
                e.kind.as_str().into(),
            ]);
        }
        files.push(csv.write(ctx.out_dir, "events.csv", &ctx.provenance)?);
    }
    Ok(files)
}

fn default_betas(c: &Config, max: f64) -> Result<Vec<f64>, CliError> {
    Ok(c.numbers("coupling.betas")?
        .unwrap_or_else(|| (0..5).map(|k| k as f64 * max / 4.0).collect()))
}

fn variance_sweep(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let mut csv = Csv::new(&with_report_columns(&["kind", "beta"]));
    match c.raw("sweep.dynamics").unwrap_or("overdamped") {
        "overdamped" => {
            let model = model_1d(c)?;
            let obs = observable_spec(c)?.build_1d(&model)?;
            let ps = Arc::new(solve_poisson_overdamped_1d(&model, &obs)?);
            let s = settings(c, 2e4)?;
            let betas = default_betas(c, FRAC_PI_4)?;
            let kinds = c
                .list("coupling.kinds")
                .unwrap_or_else(|| ["mirror", "symmetric", "poisson"].map(String::from).to_vec());
            csv.note("dynamics", "overdamped");
            csv.note("dt", s.dt);
            csv.note("t_total", s.t_total);
            for name in kinds {
                let kind = scalar_kind(&name, &ps, &obs)?;
                for p in pair_sweep(&model, &obs, &kind, &betas, &s)? {
                    let mut row: Vec<Cell> = vec![name.clone().into(), p.beta.into()];
                    row.extend(report_cells(&p.pooled));
                    csv.row(&row);
                }
            }
        }
        "zigzag" => {
            let (model, obs, rates, ps, cfg) = zigzag_setup(c)?;
            let reps = c.count("numerics.replicates", 10)?;
            let nb = c.count("numerics.batches", 50)?;
            let betas = default_betas(c, 1.0)?;
            let kinds = c
                .list("coupling.kinds")
                .unwrap_or_else(|| vec!["mirror_flip".to_string()]);
            csv.note("dynamics", "zigzag");
            csv.note("t_total", cfg.t_total);
            for name in kinds {
                let kind = zigzag_kind(&name, &ps)?;
                for &beta in &betas {
                    let coupling = ZigzagCoupling::new(kind.clone(), beta)?;
                    let stats = zigzag_replicates(&model, &rates, &coupling, &cfg, &obs, reps)?;
                    let mut row: Vec<Cell> = vec![name.clone().into(), beta.into()];
                    row.extend(report_cells(&pooled_channel(&stats, Channel::F, nb)?));
                    csv.row(&row);
                }
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "sweep.dynamics must be overdamped or zigzag, got `{other}`"
            )))
        }
    }
    Ok(vec![csv.write(ctx.out_dir, "variance_sweep.csv", &ctx.provenance)?])
}

fn sort_compare(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let dim = c.count("model.dim", 10)?;
    let n = c.count("langevin.particles", 10)?;
    let sigma = match c.get("model.potential", PotentialSpec::Gaussian { sigma: 1.0 })? {
        PotentialSpec::Gaussian { sigma } => sigma,
        other => {
            return Err(CliError::Config(format!(
                "sort-compare supports only gaussian potentials, got {other:?}"
            )))
        }
    };
    let model = TargetModelND::gaussian(dim, sigma)?;
    let obs = c
        .get("observable", ObservableSpec::NormSq { scale: 0.5 })?
        .build_gaussian_nd(dim, sigma);
    let kind = matrix_kind(c.raw("coupling.kind").unwrap_or("reflection_observable"), &obs, None)?;
    let s = settings(c, 2e3)?;
    let betas = c
        .numbers("coupling.betas")?
        .unwrap_or_else(|| vec![0.0, FRAC_PI_4 / 2.0, FRAC_PI_4]);
    let sorted = block_sweep(&model, &obs, n, Pairing::Sorted, &kind, &betas, &s)?;
    let unsorted = block_sweep(&model, &obs, n, Pairing::Fixed, &kind, &betas, &s)?;
    let mut csv = Csv::new(&["beta", "sorted", "sorted_ci", "unsorted", "unsorted_ci"]);
    csv.note("coupling", kind.name());
    csv.note("dim", dim);
    csv.note("particles", n);
    csv.note("replicates", s.replicates);
    for (a, b) in sorted.iter().zip(&unsorted) {
        csv.row(&[
            a.beta.into(),
            a.pooled.asym_var.into(),
            a.pooled.ci_halfwidth.into(),
            b.pooled.asym_var.into(),
            b.pooled.ci_halfwidth.into(),
        ]);
    }
    Ok(vec![csv.write(ctx.out_dir, "sort_compare.csv", &ctx.provenance)?])
}

fn ot_compare(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let model = model_1d(c)?;
    let obs = observable_spec(c)?.build_1d(&model)?;
    let ps = Arc::new(solve_poisson_overdamped_1d(&model, &obs)?);
    let lo: f64 = c.get("ot.lo", -5.0)?;
    let hi: f64 = c.get("ot.hi", 5.0)?;
    let mu = DiscreteMarginal::from_model(&model, lo, hi, c.count("ot.size", 201)?)?;
    let cost = assemble_cost(&model, &obs, &ps, mu.nodes(), mu.nodes())?;
    let range = cost_range(&cost);
    let eps = c.positive("ot.eps_relative", 1e-2)? * range;
    let factor: f64 = c.get("ot.ladder_factor", 0.5)?;
    let stages = sinkhorn_ladder(
        &mu,
        &mu,
        &cost,
        range.max(eps),
        eps,
        factor,
        c.count("ot.max_iters", 50_000)?,
        c.positive("ot.tol", 1e-9)?,
    )?;
    let plan = stages.last().expect("ladder returns at least one stage");
    let delta = c.positive("ot.diagonal_band", 0.2)?;
    let (near_main, near_anti) = plan_diagonal_mass(&plan.plan, mu.nodes(), mu.nodes(), delta);

    let mut files = Vec::new();
    let mut header = vec!["x".to_string()];
    header.extend(mu.nodes().iter().map(|y| crate::output::format_num(*y)));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    csv.note(
        "layout",
        "row i is x_i; the column headers are the y nodes; entries are plan masses",
    );
    csv.note("epsilon", plan.epsilon);
    for (i, x) in mu.nodes().iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*x).into()];
        row.extend((0..mu.len()).map(|j| Cell::Num(plan.plan[(i, j)])));
        csv.row(&row);
    }
    files.push(csv.write(ctx.out_dir, "plan.csv", &ctx.provenance)?);

    let s = settings(c, 2e4)?;
    let stride = c.count("langevin.stride", 10)?;
    let beta: f64 = c.get("coupling.beta", FRAC_PI_4)?;
    let pair_cost = PairCost::new(obs.clone(), ps.clone());
    let kinds = c.list("coupling.kinds").unwrap_or_else(|| {
        ["independent", "synchronous", "symmetric", "mirror", "poisson"]
            .map(String::from)
            .to_vec()
    });
    let mut empirical = serde_json::Map::new();
    for name in kinds {
        let kind = scalar_kind(&name, &ps, &obs)?;
        let mut cfg = LangevinConfig::new(
            model.to_nd(),
            2,
            NoiseCoupling::Pair(ScalarCoupling1D::new(kind, beta)?),
            s.dt,
            s.t_total,
            s.seed,
        );
        cfg.burn_in = s.burn_in;
        cfg.stride = stride;
        let run = run_langevin(&cfg, &obs.to_nd())?;
        let samples: Vec<(f64, f64)> = run.trajectory.positions.iter().map(|q| (q[0], q[1])).collect();
        let e = plan_cost_of_empirical(&samples, |x, y| pair_cost.eval(x, y), s.n_batches)?;
        empirical.insert(name, json!({ "mean": e.mean, "ci": e.ci, "samples": e.samples }));
    }
    let summary = json!({
        "cost_value": plan.cost_value,
        "dual_lower_bound": plan.dual_lower_bound,
        "marginal_error": plan.marginal_error,
        "epsilon": plan.epsilon,
        "cost_range": range,
        "converged": plan.converged,
        "iterations": plan.iterations,
        "diagonal_band": delta,
        "mass_near_diagonal": near_main,
        "mass_near_antidiagonal": near_anti,
        "coupling_beta": beta,
        "empirical_values": empirical,
    });
    files.push(write_json(ctx.out_dir, "ot_summary.json", &ctx.provenance, summary)?);
    Ok(files)
}

fn spectral(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = ctx.config;
    let model = model_1d(c)?;
    let grid = c.count("spectral.grid", 2001)?;
    let modes = c.count("spectral.modes", 6)?;
    let report = spectral_report(&model, grid, modes)?;
    let mut csv = Csv::new(&["index", "eigenvalue", "parity", "overlap"]);
    csv.note("one_particle_rate", report.one_particle_rate);
    csv.note("ground_eigenvalue", report.ground_eigenvalue);
    match coupled_rate_mirror(&report) {
        Ok(rate) => csv.note("mirror_coupled_rate", rate),
        Err(e) => csv.note("mirror_coupled_rate", format!("undefined ({e})")),
    }
    csv.note(
        "mirror_rule",
        "odd modes are annihilated by the mirror coupling; the coupled rate is the smallest even mode",
    );
    for (k, ((mu, p), o)) in report
        .eigenvalues
        .iter()
        .zip(&report.parities)
        .zip(&report.overlaps)
        .enumerate()
    {
        csv.row(&[(k + 1).into(), (*mu).into(), p.as_str().into(), (*o).into()]);
    }
    let mut files = vec![csv.write(ctx.out_dir, "spectral.csv", &ctx.provenance)?];
    if c.flag("spectral.eigenfunctions")? {
        let mut columns = vec!["x".to_string()];
        columns.extend((1..=modes).map(|k| format!("e{k}")));
        let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut csv = Csv::new(&refs);
        for (i, x) in report.nodes.iter().enumerate() {
            let mut row: Vec<Cell> = vec![(*x).into()];
            row.extend(report.eigenfunctions.iter().map(|e| Cell::Num(e[i])));
            csv.row(&row);
        }
        files.push(csv.write(ctx.out_dir, "eigenfunctions.csv", &ctx.provenance)?);
    }
    Ok(files)
}
