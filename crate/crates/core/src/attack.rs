//! Data perturbations that move an explanation: a Gaussian-noise baseline
//! and a genetic algorithm that evolves perturbed copies of the dataset to
//! push one explanation value toward a target.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bounds::{data_bound_at, DataBoundOptions, TvMethod};
use crate::data::{
    default_bin_count, default_epsilon, neighborhood, tv_report, Dataset, FeatureSet, Grid,
    TvReport,
};
use crate::effects::{importance, pd, EffectKind};
use crate::error::{Error, Result};
use crate::model::{check_input, Predictor};
use crate::par;

/// Default GA mutation scales.
pub const GA_SIGMAS: [f64; 5] = [0.01, 0.05, 0.10, 0.25, 0.33];

/// Default noise scales for the random baseline.
pub const RANDOM_SIGMAS: [f64; 5] = [0.01, 0.05, 0.10, 0.12, 0.25];

/// Add `N(0, sigma)` noise once to each listed column, clipping to the domain.
pub fn random_perturb(ds: &Dataset, features: &[usize], sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", "must be finite and nonnegative"));
    }
    for &j in features {
        ds.check_feature(j)?;
    }
    if sigma == 0.0 {
        return Ok(ds.clone());
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for &j in features {
        let dom = ds.domains()[j];
        let col: Vec<f64> = ds
            .column(j)
            .into_iter()
            .map(|v| dom.clamp(v + noise.sample(&mut rng)))
            .collect();
        out = out.with_column(j, &col)?;
    }
    Ok(out)
}

/// Two most important features other than `s`, ranked by PD variance.
///
/// `grids[j]` is the grid for feature `j`; `None` gives importance 0.
/// Ties go to the lower index.
pub fn select_perturbable<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    s: usize,
    grids: &[Option<Grid>],
) -> Result<[usize; 2]> {
    if ds.p() < 3 {
        return Err(Error::param(
            "p",
            format!("need at least 3 features, got {}", ds.p()),
        ));
    }
    ds.check_feature(s)?;
    if grids.len() != ds.p() {
        return Err(Error::DimensionMismatch {
            expected: ds.p(),
            got: grids.len(),
        });
    }
    let mut ranked = feature_importances(m, ds, grids)?
        .into_iter()
        .enumerate()
        .collect::<Vec<_>>();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked = ranked.into_iter().map(|(j, _)| j).filter(|&j| j != s);
    Ok([picked.next().unwrap(), picked.next().unwrap()])
}

/// PD-variance importance of every feature.
pub fn feature_importances<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    grids: &[Option<Grid>],
) -> Result<Vec<f64>> {
    grids
        .iter()
        .enumerate()
        .map(|(j, g)| match g {
            Some(g) => importance(&pd(m, ds, j, g)?),
            None => Ok(0.0),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Whichever of 0 and 1 is farther from the original value.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub feature: usize,
    pub x_s: f64,
    pub target: Target,
    pub population_size: usize,
    pub iterations: usize,
    pub mutation_sigmas: Vec<f64>,
    /// Probability that a perturbable cell is mutated in one generation.
    pub mutation_rate: f64,
    /// Probability that a mated pair exchanges cells.
    pub crossover_rate: f64,
    pub elitism: bool,
    /// `None` picks the top-2 features by PD variance.
    pub perturbable: Option<Vec<usize>>,
    pub seed: u64,
    pub effect_kind: EffectKind,
    /// CD radius; defaults to 5% of the feature's std.
    pub epsilon: Option<f64>,
}

impl AttackConfig {
    pub fn new(feature: usize, x_s: f64) -> Self {
        AttackConfig {
            feature,
            x_s,
            target: Target::Auto,
            population_size: 100,
            iterations: 200,
            mutation_sigmas: GA_SIGMAS.to_vec(),
            mutation_rate: 0.1,
            crossover_rate: 0.5,
            elitism: true,
            perturbable: None,
            seed: 0,
            effect_kind: EffectKind::Pd,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackResult {
    #[serde(skip)]
    pub perturbed: Dataset,
    pub perturbable: Vec<usize>,
    pub target: f64,
    pub original_value: f64,
    pub final_value: f64,
    pub shift: f64,
    /// Best fitness after each generation.
    pub fitness_history: Vec<f64>,
    pub tv: TvReport,
    pub evaluations: usize,
    pub elitism: bool,
}

/// Explanation value at one grid point for datasets that differ from the
/// original only in `cols`.
struct Evaluator<'a, M: ?Sized> {
    m: &'a M,
    ds: &'a Dataset,
    feature: usize,
    x_s: f64,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl<M: Predictor + ?Sized> Evaluator<'_, M> {
    fn value(&self, genome: &[Vec<f64>]) -> f64 {
        let mut x = vec![0.0; self.ds.p()];
        let mut sum = 0.0;
        for &i in &self.rows {
            x.copy_from_slice(self.ds.row(i));
            for (c, &j) in self.cols.iter().enumerate() {
                x[j] = genome[c][i];
            }
            x[self.feature] = self.x_s;
            sum += self.m.predict(&x);
        }
        sum / self.rows.len() as f64
    }
}

fn effect_rows(
    ds: &Dataset,
    kind: EffectKind,
    feature: usize,
    x_s: f64,
    epsilon: Option<f64>,
) -> Result<Vec<usize>> {
    match kind {
        EffectKind::Pd => Ok((0..ds.n()).collect()),
        EffectKind::Cd => {
            let eps = epsilon.unwrap_or_else(|| default_epsilon(ds, feature));
            let rows = neighborhood(ds, &FeatureSet::single(feature), &[x_s], eps)?;
            if rows.is_empty() {
                return Err(Error::Inestimable(format!(
                    "empty CD neighborhood at {x_s} (epsilon = {eps})"
                )));
            }
            Ok(rows)
        }
        other => Err(Error::param(
            "effect_kind",
            format!("attacks target PD or CD, not {other}"),
        )),
    }
}

fn validate(cfg: &AttackConfig) -> Result<()> {
    if cfg.population_size < 2 {
        return Err(Error::param("population_size", "must be at least 2"));
    }
    if cfg.iterations < 1 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    if cfg.mutation_sigmas.is_empty()
        || cfg
            .mutation_sigmas
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
    {
        return Err(Error::param(
            "mutation_sigmas",
            "need at least one finite nonnegative sigma",
        ));
    }
    for (name, r) in [
        ("mutation_rate", cfg.mutation_rate),
        ("crossover_rate", cfg.crossover_rate),
    ] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::param(name, "must lie in [0, 1]"));
        }
    }
    Ok(())
}

fn mutate(
    genome: &mut [Vec<f64>],
    originals: &[Vec<f64>],
    ds: &Dataset,
    cols: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) {
    let sigma = cfg.mutation_sigmas[rng.random_range(0..cfg.mutation_sigmas.len())];
    if sigma == 0.0 || cfg.mutation_rate == 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    for (c, &j) in cols.iter().enumerate() {
        let dom = ds.domains()[j];
        for v in genome[c].iter_mut() {
            if rng.random::<f64>() >= cfg.mutation_rate {
                continue;
            }
            let candidate = *v + noise.sample(rng);
            *v = if dom.contains(candidate) {
                candidate
            } else {
                originals[c][rng.random_range(0..originals[c].len())]
            };
        }
    }
}

fn crossover(a: &mut [Vec<f64>], b: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for (ca, cb) in a.iter_mut().zip(b.iter_mut()) {
        for (u, v) in ca.iter_mut().zip(cb.iter_mut()) {
            if rng.random::<bool>() {
                std::mem::swap(u, v);
            }
        }
    }
}

/// Evolve perturbed copies of `ds` so that the explanation value at
/// `cfg.x_s` approaches the target. Only the perturbable columns change and
/// every value stays inside its feature's domain.
pub fn ga_attack<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    validate(cfg)?;
    check_input(m, ds.p())?;
    ds.check_feature(cfg.feature)?;
    let cols = match &cfg.perturbable {
        Some(c) => {
            for &j in c {
                ds.check_feature(j)?;
            }
            c.clone()
        }
        None => {
            let grids: Vec<Option<Grid>> = (0..ds.p())
                .map(|j| crate::data::make_grid(ds, j, 20, crate::data::GridKind::Quantile).ok())
                .collect();
            select_perturbable(m, ds, cfg.feature, &grids)?.to_vec()
        }
    };
    if cols.is_empty() {
        return Err(Error::param("perturbable", "no perturbable features"));
    }
    if cols.contains(&cfg.feature) {
        return Err(Error::param(
            "perturbable",
            "must not include the explained feature",
        ));
    }
    let eval = Evaluator {
        m,
        ds,
        feature: cfg.feature,
        x_s: cfg.x_s,
        rows: effect_rows(ds, cfg.effect_kind, cfg.feature, cfg.x_s, cfg.epsilon)?,
        cols: cols.clone(),
    };
    let originals: Vec<Vec<f64>> = cols.iter().map(|&j| ds.column(j)).collect();
    let original_value = eval.value(&originals);
    let target = match cfg.target {
        Target::Value(t) => t,
        Target::Auto => {
            if original_value.abs() >= (original_value - 1.0).abs() {
                0.0
            } else {
                1.0
            }
        }
    };
    let fitness = |g: &Vec<Vec<f64>>| (eval.value(g) - target).abs();

    let mut population = vec![originals.clone(); cfg.population_size];
    let mut elite = (originals.clone(), (original_value - target).abs());
    let mut evaluations = 1;
    let mut history = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations as u64 {
        let mut pool: Vec<Vec<Vec<f64>>> = par::map_range(population.len(), |idx| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(par::derive_seed(cfg.seed, &[iter, idx as u64]));
            let mut g = population[idx].clone();
            mutate(&mut g, &originals, ds, &cols, cfg, &mut rng);
            g
        });
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(cfg.seed, &[iter, u64::MAX]));
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut children = Vec::new();
        for pair in order.chunks_exact(2) {
            if rng.random::<f64>() < cfg.crossover_rate {
                let mut a = pool[pair[0]].clone();
                let mut b = pool[pair[1]].clone();
                crossover(&mut a, &mut b, &mut rng);
                children.push(a);
                children.push(b);
            }
        }
        pool.append(&mut children);
        let scores = par::map_slice(&pool, fitness);
        evaluations += pool.len();

        let (best_idx, &best) = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty pool");
        if !cfg.elitism || best < elite.1 {
            elite = (pool[best_idx].clone(), best);
        }
        let worst = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|f| worst - f + 1e-9).collect();
        let wheel = WeightedIndex::new(&weights)
            .map_err(|e| Error::Inestimable(format!("selection weights: {e}")))?;
        let slots = if cfg.elitism {
            cfg.population_size - 1
        } else {
            cfg.population_size
        };
        let mut next: Vec<Vec<Vec<f64>>> = (0..slots)
            .map(|_| pool[wheel.sample(&mut rng)].clone())
            .collect();
        if cfg.elitism {
            next.push(elite.0.clone());
        }
        population = next;
        history.push(elite.1);
    }

    let mut perturbed = ds.clone();
    for (c, &j) in cols.iter().enumerate() {
        perturbed = perturbed.with_column(j, &elite.0[c])?;
    }
    let final_value = eval.value(&elite.0);
    let complement = FeatureSet::single(cfg.feature).complement(ds.p());
    Ok(AttackResult {
        tv: tv_report(ds, &perturbed, &complement, default_bin_count(ds.n()))?,
        perturbed,
        perturbable: cols,
        target,
        original_value,
        final_value,
        shift: (original_value - final_value).abs(),
        fitness_history: history,
        evaluations,
        elitism: cfg.elitism,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Random { sigma: f64 },
    Ga,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Random { .. } => "random",
            Method::Ga => "ga",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Template for GA runs; `feature` and `x_s` are overwritten per run.
    pub attack: AttackConfig,
}

impl SweepConfig {
    /// Every baseline sigma plus the GA, five seeds each.
    pub fn new(feature: usize) -> Self {
        let mut methods: Vec<Method> = RANDOM_SIGMAS
            .iter()
            .map(|&sigma| Method::Random { sigma })
            .collect();
        methods.push(Method::Ga);
        SweepConfig {
            methods,
            seeds: (0..5).collect(),
            attack: AttackConfig::new(feature, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub feature: usize,
    pub x_s: f64,
    pub method: String,
    /// Noise scale for random runs; empty for the GA.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub shift: f64,
    pub tv_empirical: f64,
    pub tv_histogram: f64,
    pub bound_raw: f64,
    pub bound_capped: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub perturbable: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Run every (grid point, method, seed) combination and pair each observed
/// shift with the data bound computed from exact empirical TV.
pub fn sweep<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid_points: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    let kind = cfg.attack.effect_kind;
    let perturbable = match &cfg.attack.perturbable {
        Some(c) => c.clone(),
        None => {
            let grids: Vec<Option<Grid>> = (0..ds.p())
                .map(|j| crate::data::make_grid(ds, j, 20, crate::data::GridKind::Quantile).ok())
                .collect();
            select_perturbable(m, ds, feature, &grids)?.to_vec()
        }
    };
    let mut warnings = Vec::new();
    if perturbable.contains(&feature) {
        warnings.push(format!(
            "perturbable features include the explained feature {feature}"
        ));
    }
    let epsilon = cfg
        .attack
        .epsilon
        .unwrap_or_else(|| default_epsilon(ds, feature));
    let complement = FeatureSet::single(feature).complement(ds.p());
    let bins = default_bin_count(ds.n());
    let mut rows = Vec::new();
    for &x_s in grid_points {
        let rows_at = effect_rows(ds, kind, feature, x_s, Some(epsilon))?;
        let base = Evaluator {
            m,
            ds,
            feature,
            x_s,
            rows: rows_at,
            cols: Vec::new(),
        }
        .value(&[]);
        for method in &cfg.methods {
            for &seed in &cfg.seeds {
                let (perturbed, shift, sigma) = match *method {
                    Method::Random { sigma } => {
                        let p2 = random_perturb(ds, &perturbable, sigma, seed)?;
                        let v = Evaluator {
                            m,
                            ds: &p2,
                            feature,
                            x_s,
                            rows: effect_rows(&p2, kind, feature, x_s, Some(epsilon))?,
                            cols: Vec::new(),
                        }
                        .value(&[]);
                        (p2, (v - base).abs(), Some(sigma))
                    }
                    Method::Ga => {
                        let ga_cfg = AttackConfig {
                            feature,
                            x_s,
                            seed,
                            perturbable: Some(perturbable.clone()),
                            epsilon: Some(epsilon),
                            ..cfg.attack.clone()
                        };
                        let r = ga_attack(m, ds, &ga_cfg)?;
                        (r.perturbed, r.shift, None)
                    }
                };
                let tv = tv_report(ds, &perturbed, &complement, bins)?;
                let report = data_bound_at(
                    kind,
                    m,
                    ds,
                    &perturbed,
                    feature,
                    &[x_s],
                    &DataBoundOptions {
                        tv: TvMethod::Empirical,
                        epsilon: Some(epsilon),
                        ..DataBoundOptions::default()
                    },
                )?;
                rows.push(SweepRow {
                    feature,
                    x_s,
                    method: method.name().into(),
                    sigma,
                    seed,
                    shift,
                    tv_empirical: tv.empirical,
                    tv_histogram: tv.histogram,
                    bound_raw: report.points[0].raw,
                    bound_capped: report.points[0].capped,
                });
            }
        }
    }
    Ok(SweepReport {
        rows,
        perturbable,
        warnings,
    })
}

/// CSV with columns
/// `feature,x_s,method,sigma,seed,shift,tv_empirical,tv_histogram,bound_raw,bound_capped`.
pub fn write_sweep_csv(rows: &[SweepRow], names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "feature,x_s,method,sigma,seed,shift,tv_empirical,tv_histogram,bound_raw,bound_capped\n",
    );
    for r in rows {
        let name = names
            .get(r.feature)
            .cloned()
            .unwrap_or_else(|| r.feature.to_string());
        let sigma = r.sigma.map(|s| format!("{s:?}")).unwrap_or_default();
        out.push_str(&format!(
            "{name},{:?},{},{sigma},{},{:?},{:?},{:?},{:?},{:?}\n",
            r.x_s,
            r.method,
            r.seed,
            r.shift,
            r.tv_empirical,
            r.tv_histogram,
            r.bound_raw,
            r.bound_capped
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}
