use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use effectlab::analytic::{
    gen_synthetic, xor_demo, LabelRule, SyntheticConfig, XorDemoRow, XorDistribution, XorModel,
};
use effectlab::attack::{self, AttackConfig, Method, SweepConfig, GA_SIGMAS, RANDOM_SIGMAS};
use effectlab::bounds::{
    self, BoundKind, BoundReport, DataBoundOptions, ModelBoundOptions, TvMethod,
};
use effectlab::data::{default_epsilon, load_csv, make_grid, quantile_sorted};
use effectlab::effects::{self, write_curves_csv};
use effectlab::model::{self, load_model, save_model, train_mlp, Activation, TrainConfig};
use effectlab::randomize::{sigma_sweep, write_randomize_csv, RandomizeConfig};
use effectlab::{par, Dataset, EffectKind, Grid, GridKind, Metric, MlpModel, Predictor};

#[derive(Parser)]
#[command(
    name = "effectlab",
    version,
    about = "Feature-effect explanations and their robustness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate PD, CD, ALE or DALE curves.
    Effect(EffectArgs),
    /// Bound how far curves move under data or model perturbation.
    Bound(BoundArgs),
    /// Random and genetic-algorithm data perturbations against one curve value.
    Attack(AttackArgs),
    /// Layer-wise model randomization test.
    Randomize(RandomizeArgs),
    /// Train an MLP classifier on labelled CSV data.
    Train(TrainArgs),
    /// Closed-form versus Monte-Carlo PD of the XOR model.
    XorDemo(XorDemoArgs),
    /// Write a correlated Gaussian dataset with binary labels.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Pd,
    Cd,
    Ale,
    Dale,
}

impl From<KindArg> for EffectKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Pd => EffectKind::Pd,
            KindArg::Cd => EffectKind::Cd,
            KindArg::Ale => EffectKind::Ale,
            KindArg::Dale => EffectKind::Dale,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridKindArg {
    Quantile,
    Equidistant,
}

impl From<GridKindArg> for GridKind {
    fn from(k: GridKindArg) -> Self {
        match k {
            GridKindArg::Quantile => GridKind::Quantile,
            GridKindArg::Equidistant => GridKind::Equidistant,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MetricArg {
    MaxAbs,
    L2Mean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::MaxAbs => Metric::MaxAbs,
            MetricArg::L2Mean => Metric::L2Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TvArg {
    Empirical,
    Histogram,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DistributionArg {
    Uniform,
    Normal,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ActivationArg {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Identity => Activation::Identity,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Feature CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Column holding labels; excluded from the features.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct GridArgs {
    #[arg(long, default_value_t = 20)]
    grid_size: usize,
    #[arg(long, value_enum, default_value_t = GridKindArg::Quantile)]
    grid_kind: GridKindArg,
}

#[derive(Args, Debug, Serialize)]
struct EffectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON path or `builtin:xor`.
    #[arg(long)]
    model: String,
    #[arg(long, value_enum, default_value_t = KindArg::Pd)]
    kind: KindArg,
    /// Feature name or index; repeatable. Defaults to every feature.
    #[arg(long)]
    feature: Vec<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// CD neighborhood radius; defaults to 5% of the feature's std.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Report ALE/DALE without adding the mean prediction.
    #[arg(long)]
    uncentered: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BoundArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Perturbed dataset; enables the data bound.
    #[arg(long)]
    data2: Option<PathBuf>,
    #[arg(long)]
    model: String,
    /// Perturbed model; enables the model bound.
    #[arg(long)]
    model2: Option<String>,
    #[arg(long, value_enum, default_value_t = KindArg::Pd)]
    kind: KindArg,
    #[arg(long)]
    feature: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    /// TV estimator for data bounds.
    #[arg(long, value_enum, default_value_t = TvArg::Empirical)]
    tv: TvArg,
    /// Histogram bins per column; 0 picks the default.
    #[arg(long, default_value_t = 0)]
    bins: usize,
    /// Use a per-point output bound for PD/CD data bounds.
    #[arg(long)]
    pointwise_b: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: String,
    #[arg(long)]
    feature: String,
    /// Grid value(s) to attack; repeatable. Defaults to the feature's median.
    #[arg(long = "x-s", allow_hyphen_values = true)]
    x_s: Vec<f64>,
    #[arg(long, value_enum, default_value_t = KindArg::Pd)]
    kind: KindArg,
    #[arg(long, default_value_t = 100)]
    population: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// GA mutation scales; repeatable.
    #[arg(long)]
    sigma: Vec<f64>,
    /// Random-baseline noise scales; repeatable.
    #[arg(long)]
    random_sigma: Vec<f64>,
    /// Seeds per method in the sweep, starting at --seed.
    #[arg(long, default_value_t = 5)]
    repeats: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Features the attack may change; repeatable. Defaults to the top two by PD variance.
    #[arg(long)]
    perturb: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    mutation_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    crossover_rate: f64,
    #[arg(long)]
    no_elitism: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct RandomizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: String,
    /// Repeatable. Defaults to every feature.
    #[arg(long)]
    feature: Vec<String>,
    /// Noise scale(s); repeatable.
    #[arg(long)]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MetricArg::MaxAbs)]
    metric: MetricArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Leave biases untouched.
    #[arg(long)]
    weights_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "16,8")]
    layout: String,
    #[arg(long, value_enum, default_value_t = ActivationArg::Tanh)]
    activation: ActivationArg,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct XorDemoArgs {
    #[arg(long, value_enum, default_value_t = DistributionArg::Both)]
    distribution: DistributionArg,
    /// Monte-Carlo draws per parameter pair.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RuleArg {
    Linear,
    Xor,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    p: usize,
    /// Pairwise feature correlation.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    correlation: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::Linear)]
    rule: RuleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A model loaded from disk or one of the built-in reference predictors.
#[derive(Clone)]
enum AnyModel {
    Mlp(MlpModel),
    Xor(XorModel),
}

impl Predictor for AnyModel {
    fn input_dim(&self) -> usize {
        match self {
            AnyModel::Mlp(m) => m.input_dim(),
            AnyModel::Xor(m) => m.input_dim(),
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            AnyModel::Mlp(m) => m.predict(x),
            AnyModel::Xor(m) => m.predict(x),
        }
    }

    fn is_differentiable(&self) -> bool {
        match self {
            AnyModel::Mlp(m) => m.is_differentiable(),
            AnyModel::Xor(m) => m.is_differentiable(),
        }
    }

    fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            AnyModel::Mlp(m) => m.input_gradient(x),
            AnyModel::Xor(m) => m.input_gradient(x),
        }
    }

    fn partial(&self, x: &[f64], feature: usize) -> Option<f64> {
        match self {
            AnyModel::Mlp(m) => m.partial(x, feature),
            AnyModel::Xor(m) => m.partial(x, feature),
        }
    }

    fn output_range(&self) -> Option<(f64, f64)> {
        match self {
            AnyModel::Mlp(m) => m.output_range(),
            AnyModel::Xor(m) => m.output_range(),
        }
    }
}

fn load_any_model(spec: &str, p: usize) -> Result<AnyModel> {
    match spec.strip_prefix("builtin:") {
        Some("xor") => {
            if p < 2 {
                bail!("builtin:xor needs at least 2 features, data has {p}");
            }
            Ok(AnyModel::Xor(XorModel::new(p)))
        }
        Some(other) => bail!("unknown builtin model `{other}` (available: xor)"),
        None => {
            let m = load_model(spec)?;
            if m.input_dim() != p {
                bail!(
                    "model expects {} inputs, data has {p} features",
                    m.input_dim()
                );
            }
            Ok(AnyModel::Mlp(m))
        }
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    Ok(load_csv(&args.data, args.label.as_deref())?)
}

fn resolve_feature(ds: &Dataset, spec: &str) -> Result<usize> {
    if let Some(j) = ds.feature_index(spec) {
        return Ok(j);
    }
    match spec.parse::<usize>() {
        Ok(j) if j < ds.p() => Ok(j),
        _ => bail!(
            "unknown feature `{spec}` (columns: {})",
            ds.feature_names().join(", ")
        ),
    }
}

fn resolve_features(ds: &Dataset, specs: &[String]) -> Result<Vec<usize>> {
    if specs.is_empty() {
        return Ok((0..ds.p()).collect());
    }
    specs.iter().map(|s| resolve_feature(ds, s)).collect()
}

fn grid_for(ds: &Dataset, feature: usize, args: &GridArgs) -> Result<Grid> {
    Ok(make_grid(
        ds,
        feature,
        args.grid_size,
        args.grid_kind.into(),
    )?)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(
    out: &Path,
    command: &str,
    args: &impl Serialize,
    resolved: Value,
    warnings: &[String],
    outputs: &[&str],
) -> Result<()> {
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "parallel": par::is_parallel(),
            "args": args,
            "resolved": resolved,
            "warnings": warnings,
            "outputs": outputs,
        }),
    )
}

fn cmd_effect(a: &EffectArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let m = load_any_model(&a.model, ds.p())?;
    let features = resolve_features(&ds, &a.feature)?;
    let kind: EffectKind = a.kind.into();
    let mut warnings = Vec::new();
    let mut curves = Vec::new();
    let mut epsilons = Vec::new();
    for &j in &features {
        let eps = match a.epsilon {
            Some(e) => e,
            None => {
                let e = default_epsilon(&ds, j);
                if kind == EffectKind::Cd {
                    warnings.push(format!(
                        "no --epsilon given; feature {} uses 0.05 * std = {e:?}",
                        ds.feature_names()[j]
                    ));
                }
                e
            }
        };
        epsilons.push(eps);
        let grid = grid_for(&ds, j, &a.grid)?;
        let mut c = effects::estimate(kind, &m, &ds, j, &grid, eps)?;
        if kind.is_accumulated() && !a.uncentered {
            c = effects::center(&c, &m, &ds)?;
        }
        if c.meta.skipped.iter().any(|&s| s) {
            warnings.push(format!(
                "feature {}: {} grid point(s) had no data and were filled",
                ds.feature_names()[j],
                c.meta.skipped.iter().filter(|&&s| s).count()
            ));
        }
        curves.push(c);
    }
    create_out(&a.out)?;
    write_curves_csv(&curves, ds.feature_names(), a.out.join("curves.csv"))?;
    write_json(
        &a.out.join("curves.json"),
        &json!({ "feature_names": ds.feature_names(), "curves": curves }),
    )?;
    let resolved = json!({
        "features": features,
        "kind": kind,
        "epsilon": if kind == EffectKind::Cd { json!(epsilons) } else { Value::Null },
        "centered": kind.is_accumulated() && !a.uncentered,
    });
    write_manifest(
        &a.out,
        "effect",
        a,
        resolved,
        &warnings,
        &["curves.csv", "curves.json"],
    )
}

fn cmd_bound(a: &BoundArgs) -> Result<()> {
    if a.data2.is_none() && a.model2.is_none() {
        bail!("bound needs --data2 (data perturbation) or --model2 (model perturbation)");
    }
    let ds = load_data(&a.data)?;
    let m = load_any_model(&a.model, ds.p())?;
    let j = resolve_feature(&ds, &a.feature)?;
    let grid = grid_for(&ds, j, &a.grid)?;
    let kind: EffectKind = a.kind.into();
    let tv = match a.tv {
        TvArg::Empirical => TvMethod::Empirical,
        TvArg::Histogram => TvMethod::Histogram { bins: a.bins },
    };
    let mut reports: Vec<BoundReport> = Vec::new();
    if let Some(path) = &a.data2 {
        let ds2 = load_csv(path, a.data.label.as_deref())?;
        let opts = DataBoundOptions {
            tv,
            epsilon: a.epsilon,
            pointwise_b: a.pointwise_b,
            lipschitz: match &m {
                AnyModel::Mlp(mlp) => Some(model::estimate_lipschitz(mlp).value),
                AnyModel::Xor(_) => None,
            },
        };
        reports.push(bounds::data_bound_report(
            kind, &m, &ds, &ds2, j, &grid, &opts,
        )?);
    }
    if let Some(spec) = &a.model2 {
        let m2 = load_any_model(spec, ds.p())?;
        let lipschitz = match (&m, &m2) {
            (AnyModel::Mlp(x), AnyModel::Mlp(y)) => Some((
                model::estimate_lipschitz(x).value,
                model::estimate_lipschitz(y).value,
            )),
            _ => None,
        };
        let opts = ModelBoundOptions {
            epsilon: a.epsilon,
            lipschitz,
        };
        let kinds: &[BoundKind] = match kind {
            EffectKind::Pd => &[BoundKind::PdModel],
            EffectKind::Cd => &[BoundKind::CdModel],
            _ => &[BoundKind::AleModelB, BoundKind::AleModelA],
        };
        for &bk in kinds {
            reports.push(bounds::model_bound_report(
                bk, &m, &m2, &ds, j, &grid, &opts,
            )?);
        }
    }
    create_out(&a.out)?;
    bounds::write_bounds_csv(&reports, a.out.join("bounds.csv"))?;
    write_json(&a.out.join("bounds.json"), &reports)?;
    let resolved = json!({ "feature": j, "grid": grid.points(), "tv": tv });
    write_manifest(
        &a.out,
        "bound",
        a,
        resolved,
        &[],
        &["bounds.csv", "bounds.json"],
    )
}

fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let m = load_any_model(&a.model, ds.p())?;
    let j = resolve_feature(&ds, &a.feature)?;
    let x_s = if a.x_s.is_empty() {
        let mut col = ds.column(j);
        col.sort_by(f64::total_cmp);
        vec![quantile_sorted(&col, 0.5)]
    } else {
        a.x_s.clone()
    };
    let perturbable = if a.perturb.is_empty() {
        None
    } else {
        Some(resolve_features(&ds, &a.perturb)?)
    };
    let ga_sigmas = if a.sigma.is_empty() {
        GA_SIGMAS.to_vec()
    } else {
        a.sigma.clone()
    };
    let random_sigmas = if a.random_sigma.is_empty() {
        RANDOM_SIGMAS.to_vec()
    } else {
        a.random_sigma.clone()
    };
    let mut base = AttackConfig::new(j, x_s[0]);
    base.population_size = a.population;
    base.iterations = a.iterations;
    base.mutation_sigmas = ga_sigmas;
    base.mutation_rate = a.mutation_rate;
    base.crossover_rate = a.crossover_rate;
    base.elitism = !a.no_elitism;
    base.perturbable = perturbable;
    base.seed = a.seed;
    base.effect_kind = a.kind.into();
    base.epsilon = a.epsilon;

    let result = attack::ga_attack(&m, &ds, &base)?;
    let mut methods: Vec<Method> = random_sigmas
        .iter()
        .map(|&sigma| Method::Random { sigma })
        .collect();
    methods.push(Method::Ga);
    let sweep_cfg = SweepConfig {
        methods,
        seeds: (a.seed..a.seed + a.repeats).collect(),
        attack: AttackConfig {
            perturbable: Some(result.perturbable.clone()),
            ..base.clone()
        },
    };
    let sweep = attack::sweep(&m, &ds, j, &x_s, &sweep_cfg)?;

    create_out(&a.out)?;
    result.perturbed.write_csv(a.out.join("perturbed.csv"))?;
    write_json(&a.out.join("attack.json"), &result)?;
    attack::write_sweep_csv(&sweep.rows, ds.feature_names(), a.out.join("sweep.csv"))?;
    let resolved = json!({
        "feature": j,
        "x_s": x_s,
        "attack": base,
        "random_sigmas": random_sigmas,
        "seeds": sweep_cfg.seeds,
        "perturbable": result.perturbable,
        "random_baseline_out_of_domain": "clip",
        "ga_out_of_domain": "resample from original column",
    });
    write_manifest(
        &a.out,
        "attack",
        a,
        resolved,
        &sweep.warnings,
        &["attack.json", "perturbed.csv", "sweep.csv"],
    )
}

fn cmd_randomize(a: &RandomizeArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let m = match load_any_model(&a.model, ds.p())? {
        AnyModel::Mlp(m) => m,
        AnyModel::Xor(_) => bail!("randomize needs an MLP model file"),
    };
    let features = resolve_features(&ds, &a.feature)?;
    let mut grids = Vec::with_capacity(features.len());
    let mut kept = Vec::with_capacity(features.len());
    let mut warnings = Vec::new();
    for &j in &features {
        match grid_for(&ds, j, &a.grid) {
            Ok(g) => {
                kept.push(j);
                grids.push(g);
            }
            Err(e) => warnings.push(format!("skipped feature {}: {e}", ds.feature_names()[j])),
        }
    }
    let sigmas = if a.sigma.is_empty() {
        vec![0.5]
    } else {
        a.sigma.clone()
    };
    let cfg = RandomizeConfig {
        sigma: sigmas[0],
        repeats: a.repeats,
        seed: a.seed,
        metric: a.metric.into(),
        weights_only: a.weights_only,
        epsilon: a.epsilon,
    };
    let reports = sigma_sweep(&m, &ds, &kept, &grids, &sigmas, &cfg)?;
    for r in &reports {
        warnings.extend(r.warnings.iter().cloned());
    }
    warnings.dedup();
    create_out(&a.out)?;
    write_randomize_csv(&reports, a.out.join("randomize.csv"))?;
    write_json(&a.out.join("randomize.json"), &reports)?;
    let resolved = json!({
        "features": kept,
        "sigmas": sigmas,
        "perturbs_biases": !a.weights_only,
        "order": "last layer first, cumulative",
        "ale_estimator": "dale",
        "normalization": "max mean distance over all (kind, stage) cells",
    });
    write_manifest(
        &a.out,
        "randomize",
        a,
        resolved,
        &warnings,
        &["randomize.csv", "randomize.json"],
    )
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut ds = load_data(&a.data)?;
    if ds.labels().is_none() {
        ds = load_csv(&a.data.data, Some("label"))
            .context("no --label given and no `label` column")?;
    }
    let hidden = a
        .layout
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| anyhow!("bad layer width `{s}` in --layout"))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        hidden,
        activation: a.activation.into(),
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let report = train_mlp(&ds, &cfg)?;
    create_out(&a.out)?;
    save_model(&report.model, a.out.join("model.json"))?;
    let resolved = json!({
        "train": cfg,
        "label": ds.label_name(),
        "accuracy": report.accuracy,
        "final_loss": report.final_loss,
    });
    write_manifest(&a.out, "train", a, resolved, &[], &["model.json"])
}

fn write_xor_csv(rows: &[XorDemoRow], path: &Path) -> Result<()> {
    let mut out = String::from("distribution,param1,param2,x1,analytic,monte_carlo,abs_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.distribution.name(),
            r.param1,
            r.param2,
            r.x1,
            r.analytic,
            r.monte_carlo,
            r.abs_error
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn cmd_xor_demo(a: &XorDemoArgs) -> Result<()> {
    let dists: &[XorDistribution] = match a.distribution {
        DistributionArg::Uniform => &[XorDistribution::Uniform],
        DistributionArg::Normal => &[XorDistribution::Normal],
        DistributionArg::Both => &[XorDistribution::Uniform, XorDistribution::Normal],
    };
    let mut rows = Vec::new();
    for (k, &d) in dists.iter().enumerate() {
        rows.extend(xor_demo(
            d,
            &d.default_grid(),
            a.n,
            par::derive_seed(a.seed, &[k as u64]),
        )?);
    }
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    create_out(&a.out)?;
    write_xor_csv(&rows, &a.out.join("xor_demo.csv"))?;
    let resolved = json!({
        "uniform_grid": "a = -1 + i/19, b = 0.05 + 0.95 j/19",
        "normal_grid": "mu = -2 + 4 i/19, sigma = 0.25 + 1.75 j/19",
        "tolerance": 3.0 / (a.n as f64).sqrt(),
        "max_abs_error": worst,
    });
    write_manifest(&a.out, "xor-demo", a, resolved, &[], &["xor_demo.csv"])
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n: a.n,
        p: a.p,
        correlation: a.correlation,
        label_rule: match a.rule {
            RuleArg::Linear => LabelRule::Linear,
            RuleArg::Xor => LabelRule::Xor,
        },
        seed: a.seed,
    };
    let ds = gen_synthetic(&cfg)?;
    create_out(&a.out)?;
    ds.write_csv(a.out.join("data.csv"))?;
    let resolved = json!({ "synthetic": cfg, "rng": "ChaCha8" });
    write_manifest(&a.out, "synth", a, resolved, &[], &["data.csv"])
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("EFFECTLAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow!("EFFECTLAB_THREADS must be a positive integer, got `{v}`"))?;
        par::init_global_threads(n);
    }
    match &cli.command {
        Command::Effect(a) => cmd_effect(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Randomize(a) => cmd_randomize(a),
        Command::Train(a) => cmd_train(a),
        Command::XorDemo(a) => cmd_xor_demo(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            let msg = msg.replace('\n', " ");
            eprintln!("{}", json!({ "error": msg }));
            ExitCode::FAILURE
        }
    }
}
