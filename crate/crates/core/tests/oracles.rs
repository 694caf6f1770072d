//! End-to-end checks of the public API against independent oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use effectlab::analytic::{
    gen_synthetic, normal_cdf, xor_pd_normal, xor_pd_uniform, LabelRule, LinearModel,
    SyntheticConfig, XorModel,
};
use effectlab::attack::{
    ga_attack, random_perturb, sweep, AttackConfig, Method, SweepConfig, RANDOM_SIGMAS,
};
use effectlab::bounds::{
    cap_bound, model_bound_report, pd_data_bound, BoundKind, ModelBoundOptions,
};
use effectlab::data::{make_grid, Dataset, Grid, GridKind};
use effectlab::effects::{ale, dale, pd, pd_at, EffectKind};
use effectlab::model::{
    empirical_lipschitz, estimate_lipschitz, init_mlp, perturb_layer, sup_norm_difference,
    train_mlp, Activation, Predictor, TrainConfig,
};
use effectlab::randomize::{sigma_sweep, RandomizeConfig};

fn xor_rows(
    rng: &mut ChaCha8Rng,
    n: usize,
    second: impl Fn(&mut ChaCha8Rng) -> f64,
) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![0.0, second(rng)]).collect()
}

#[test]
fn xor_uniform_monte_carlo_million_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = Dataset::from_rows(&xor_rows(&mut rng, 1_000_000, |r| {
        r.random_range(-3.0..1.0)
    }))
    .unwrap();
    let mc = pd_at(&XorModel::new(2), &ds, 0, -1.0);
    let exact = xor_pd_uniform(-3.0, 1.0, -1.0).unwrap();
    assert_eq!(exact, 0.75);
    assert!((mc - exact).abs() <= 0.002, "{mc}");
    assert_eq!(xor_pd_uniform(-1.0, 1.0, 1.0).unwrap(), 0.5);
}

#[test]
fn xor_normal_monte_carlo_million_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = Normal::new(1.0, 1.0).unwrap();
    let ds = Dataset::from_rows(&xor_rows(&mut rng, 1_000_000, |r| d.sample(r))).unwrap();
    let mc = pd_at(&XorModel::new(2), &ds, 0, 1.0);
    let exact = xor_pd_normal(1.0, 1.0, 1.0).unwrap();
    assert!((exact - 0.841345).abs() < 1e-6);
    assert!((exact - normal_cdf(1.0)).abs() < 1e-15);
    assert!((mc - exact).abs() <= 0.002, "{mc}");
}

#[test]
fn capped_bound_fixtures() {
    assert_eq!(
        cap_bound(0.5, 0.0, 1.0, pd_data_bound(1.0, 0.3).unwrap()).unwrap(),
        0.5
    );
    let b = cap_bound(0.5, 0.0, 1.0, pd_data_bound(1.0, 0.2).unwrap()).unwrap();
    assert!((b - 0.4).abs() < 1e-15);
}

#[test]
fn synthetic_default_scale() {
    let cfg = SyntheticConfig::default();
    assert_eq!((cfg.n, cfg.p), (5000, 20));
    let ds = gen_synthetic(&cfg).unwrap();
    assert_eq!((ds.n(), ds.p()), (5000, 20));
    let labels = ds.labels().unwrap();
    assert!(labels.iter().all(|&y| y == 0.0 || y == 1.0));
}

#[test]
fn layer_norm_lipschitz_dominates_observed_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let m = init_mlp(4, &[8, 6], Activation::Tanh, seed).unwrap();
        let pts: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                (0..4)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0)
                    .collect()
            })
            .collect();
        let observed = empirical_lipschitz(&m, pts.iter().map(Vec::as_slice))
            .unwrap()
            .value;
        assert!(estimate_lipschitz(&m).value >= observed);
    }
}

#[test]
fn pd_model_bound_is_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ds = Dataset::from_rows(&rows).unwrap();
    let m = init_mlp(3, &[5], Activation::Tanh, 1).unwrap();
    let m2 = perturb_layer(&m, 0, 0.2, 9).unwrap();
    let grid = make_grid(&ds, 1, 10, GridKind::Quantile).unwrap();
    let report = model_bound_report(
        BoundKind::PdModel,
        &m,
        &m2,
        &ds,
        1,
        &grid,
        &ModelBoundOptions::default(),
    )
    .unwrap();
    let on_rows = rows
        .iter()
        .map(|x| (m.predict(x) - m2.predict(x)).abs())
        .fold(0.0, f64::max);
    assert!(report.points[0].raw >= on_rows);
    assert!(sup_norm_difference(&m, &m2, &ds).unwrap() >= on_rows);
    // every grid substitution is a probe, so the curve gap is covered
    let (c, c2) = (
        pd(&m, &ds, 1, &grid).unwrap(),
        pd(&m2, &ds, 1, &grid).unwrap(),
    );
    for (i, (u, v)) in c.values.iter().zip(&c2.values).enumerate() {
        assert!((u - v).abs() <= report.points[i].raw + 1e-12);
    }
}

#[test]
fn dale_converges_to_ale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..3000)
        .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ds = Dataset::from_rows(&rows).unwrap();
    let m = init_mlp(2, &[6], Activation::Tanh, 4).unwrap();
    let gap = |bins: usize| {
        let g = make_grid(&ds, 0, bins + 1, GridKind::Equidistant).unwrap();
        let a = ale(&m, &ds, 0, &g).unwrap().values;
        let d = dale(&m, &ds, 0, &g).unwrap().values;
        a.iter()
            .zip(&d)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (gap(8), gap(64));
    assert!(fine < coarse, "{coarse} {fine}");
    // a first-order error in the bin width: 64 bins of width 1/16
    assert!(fine <= 0.5 * (4.0 / 64.0), "{fine}");
}

#[test]
fn ga_beats_random_baseline_on_xor() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ds = Dataset::from_rows(&rows).unwrap();
    let m = XorModel::new(3);
    let base = pd_at(&m, &ds, 0, 1.0);
    let mut wins = 0;
    for seed in 0..5 {
        let best = RANDOM_SIGMAS
            .iter()
            .map(|&s| {
                (pd_at(&m, &random_perturb(&ds, &[1], s, seed).unwrap(), 0, 1.0) - base).abs()
            })
            .fold(0.0, f64::max);
        let cfg = AttackConfig {
            perturbable: Some(vec![1]),
            seed,
            iterations: 60,
            ..AttackConfig::new(0, 1.0)
        };
        if ga_attack(&m, &ds, &cfg).unwrap().shift >= best {
            wins += 1;
        }
    }
    assert!(wins >= 4, "{wins}");
}

#[test]
fn sweep_rows_respect_capped_bound() {
    let ds = gen_synthetic(&SyntheticConfig {
        n: 300,
        p: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let m = LinearModel::new(vec![1.0, -0.5, 0.3, 0.8], 0.1).with_sigmoid();
    let mut cfg = SweepConfig::new(0);
    cfg.seeds = vec![0, 1];
    cfg.attack.population_size = 16;
    cfg.attack.iterations = 10;
    let report = sweep(&m, &ds, 0, &[-0.5, 0.0, 0.7], &cfg).unwrap();
    assert_eq!(report.rows.len(), 3 * 2 * cfg.methods.len());
    assert!(report.rows.iter().any(|r| r.method == "ga"));
    assert!(cfg.methods.iter().any(|m| matches!(m, Method::Ga)));
    for r in &report.rows {
        assert!(r.shift <= r.bound_capped + 1e-6, "{r:?}");
        assert!(r.bound_capped <= r.bound_raw + 1e-15);
    }
}

#[test]
fn randomization_grows_with_noise_and_hurts_accuracy() {
    let ds = gen_synthetic(&SyntheticConfig {
        n: 600,
        p: 4,
        label_rule: LabelRule::Linear,
        ..Default::default()
    })
    .unwrap();
    let tc = TrainConfig {
        hidden: vec![8, 4],
        activation: Activation::Tanh,
        epochs: 100,
        learning_rate: 0.5,
        seed: 2,
    };
    let m = train_mlp(&ds, &tc).unwrap().model;
    let features = vec![0, 1, 2, 3];
    let grids: Vec<Grid> = features
        .iter()
        .map(|&j| make_grid(&ds, j, 8, GridKind::Quantile).unwrap())
        .collect();
    let cfg = RandomizeConfig {
        repeats: 20,
        seed: 3,
        ..RandomizeConfig::default()
    };
    let reports = sigma_sweep(&m, &ds, &features, &grids, &[0.05, 0.5], &cfg).unwrap();
    let (low, high) = (&reports[0], &reports[1]);
    for kind in [EffectKind::Pd, EffectKind::Cd, EffectKind::Dale] {
        for stage in 1..high.stages() {
            let (l, h) = (
                low.cell(kind, stage).unwrap(),
                high.cell(kind, stage).unwrap(),
            );
            assert!(h.mean_distance >= l.mean_distance, "{kind} stage {stage}");
        }
    }
    let acc = high.accuracy.as_ref().unwrap();
    for w in acc.windows(2) {
        assert!(
            w[1].mean <= w[0].mean + w[1].stderr.max(w[0].stderr) + 1e-12,
            "{acc:?}"
        );
    }
}
