use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use coupled_mcmc::coupling::*;
use coupled_mcmc::langevin::*;
use coupled_mcmc::model::*;
use coupled_mcmc::ot::*;
use coupled_mcmc::poisson::*;
use coupled_mcmc::zigzag::*;
use proptest::prelude::*;

fn gaussian() -> TargetModel1D {
    build_gaussian_model(1.0, 8.0, 801).unwrap()
}

fn scalar_kinds(m: &TargetModel1D) -> Vec<ScalarKind> {
    let obs = Observable::mixed(1.0, -1.0, m).unwrap();
    let ps = Arc::new(solve_poisson_overdamped_1d(m, &obs).unwrap());
    vec![
        ScalarKind::Independent,
        ScalarKind::Synchronous,
        ScalarKind::Mirror,
        ScalarKind::Symmetric,
        ScalarKind::Poisson(ps),
        ScalarKind::ObservableGrad(obs),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scalar_mixing_rows_are_unit(kind in 0usize..6, beta in 0.0..=FRAC_PI_4, x in -7.0..7.0f64, y in -7.0..7.0f64) {
        let m = gaussian();
        let c = ScalarCoupling1D::new(scalar_kinds(&m)[kind].clone(), beta).unwrap();
        let a = c.alpha(x, y);
        prop_assert!(a.abs() <= 1.0);
        let g = mixing_matrix_1d(a).unwrap();
        for r in 0..2 {
            prop_assert!((g[(r, 0)].powi(2) + g[(r, 1)].powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn block_rows_are_orthonormal(
        pos in proptest::collection::vec(-4.0..4.0f64, 12),
        beta in 0.0..=FRAC_PI_4,
        sorted in any::<bool>(),
    ) {
        let (n, d) = (4, 3);
        let f = ObservableND::norm_sq_plus_linear(1.0, 0.3, d, 1.0);
        let pairing = if sorted { Pairing::Sorted } else { Pairing::Fixed };
        let scheme = WeightScheme::new(pairing, beta, n).unwrap();
        let src = MatrixCouplingND::new(MatrixKind::ReflectionObservable(f), beta, d).unwrap();
        let g = assemble_block_g(&pos, &scheme, &src).unwrap();
        prop_assert!(row_orthonormality_defect(&g, n, d) < 1e-12);
        let a = src.alpha(&pos[0..3], &pos[3..6]).unwrap();
        let eig = (a.transpose() * &a).symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&e| e <= 1.0 + 1e-10));
    }

    #[test]
    fn zigzag_rates_are_admissible(
        kind in 0usize..4,
        beta in 0.0..=1.0f64,
        x in -6.0..6.0f64,
        y in -6.0..6.0f64,
        tx in any::<bool>(),
        ty in any::<bool>(),
    ) {
        let m = gaussian();
        let obs = Observable::quadratic(&m).unwrap();
        let ps = Arc::new(solve_poisson_zigzag_1d(&m, &obs).unwrap());
        let kinds = [ZigzagKind::Independent, ZigzagKind::MirrorFlip, ZigzagKind::SymmetricFlip, ZigzagKind::PoissonFlip(ps)];
        let c = ZigzagCoupling::new(kinds[kind].clone(), beta).unwrap();
        let rates = RateSpec::constant(&m, 0.2).unwrap();
        let s = ZigzagState::new(x, y, if tx { 1.0 } else { -1.0 }, if ty { 1.0 } else { -1.0 }).unwrap();
        let (rx, ry, rxy) = coupled_event_rates(&s, &rates, &c).unwrap();
        prop_assert!(rx >= 0.0 && ry >= 0.0 && rxy >= 0.0);
        let total = rates.rate(x, s.theta_x) + rates.rate(y, s.theta_y) - rxy;
        prop_assert!((rx + ry + rxy - total).abs() < 1e-12);
    }
}

/// Mean and 95% half-width of a time series by batch means.
fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let r = coupled_mcmc::estimators::batch_means_variance(xs, 1.0, 20).unwrap();
    (r.mean, r.mean_ci)
}

#[test]
fn couplings_preserve_the_marginal_law() {
    let m = gaussian();
    let lin = Observable::linear(&m).unwrap().to_nd();
    let run = |coupling: NoiseCoupling| {
        let mut cfg = LangevinConfig::new(m.to_nd(), 2, coupling, 1e-2, 1e4, 21);
        cfg.stride = 5;
        let traj = run_langevin(&cfg, &lin).unwrap().trajectory;
        let x: Vec<f64> = traj.positions.iter().map(|q| q[0]).collect();
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        (mean_ci(&x), mean_ci(&x2))
    };
    let overlap = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() <= a.1 + b.1;
    let base = run(NoiseCoupling::Independent);
    for kind in scalar_kinds(&m).into_iter().skip(1) {
        let name = kind.name();
        let got = run(NoiseCoupling::Pair(ScalarCoupling1D::new(kind, FRAC_PI_4).unwrap()));
        assert!(overlap(got.0, base.0), "{name}: mean {:?} vs {:?}", got.0, base.0);
        assert!(
            overlap(got.1, base.1),
            "{name}: second moment {:?} vs {:?}",
            got.1,
            base.1
        );
    }
}

#[test]
fn zero_strength_sweeps_coincide_across_kinds() {
    let m = gaussian();
    let lin = Observable::linear(&m).unwrap();
    let s = SweepSettings {
        t_total: 500.0,
        burn_in: 50.0,
        replicates: 3,
        ..SweepSettings::default()
    };
    let base = pair_sweep(&m, &lin, &ScalarKind::Independent, &[0.0], &s).unwrap();
    for kind in scalar_kinds(&m) {
        let p = pair_sweep(&m, &lin, &kind, &[0.0], &s).unwrap();
        assert_eq!(p[0].pooled, base[0].pooled, "{}", kind.name());
    }
}

#[test]
fn entropic_plan_tends_to_product_for_large_regularization() {
    let m = gaussian();
    let lin = Observable::linear(&m).unwrap();
    let ps = Arc::new(solve_poisson_overdamped_1d(&m, &lin).unwrap());
    let mu = DiscreteMarginal::from_model(&m, -5.0, 5.0, 81).unwrap();
    let c = assemble_cost(&m, &lin, &ps, mu.nodes(), mu.nodes()).unwrap();
    let plan = sinkhorn(&mu, &mu, &c, 100.0 * cost_range(&c), 10_000, 1e-12).unwrap();
    let w = mu.weights();
    let dev = (0..mu.len())
        .flat_map(|i| (0..mu.len()).map(move |j| (i, j)))
        .map(|(i, j)| (plan.plan[(i, j)] - w[i] * w[j]).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-3, "max deviation from product {dev}");
    assert!(plan.dual_lower_bound <= plan.cost_value + 1e-12);
}

#[test]
fn zigzag_runs_are_reproducible() {
    let m = gaussian();
    let lin = Observable::linear(&m).unwrap();
    let rates = RateSpec::constant(&m, 0.1).unwrap();
    let c = ZigzagCoupling::new(ZigzagKind::MirrorFlip, 0.5).unwrap();
    let cfg = ZigzagConfig::new(2000.0, 100.0, 3);
    let a = simulate_coupled_zigzag(&m, &rates, &c, &cfg, &lin).unwrap();
    let b = simulate_coupled_zigzag(&m, &rates, &c, &cfg, &lin).unwrap();
    assert_eq!(a.bins(Channel::F), b.bins(Channel::F));
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.final_state, b.final_state);
}
