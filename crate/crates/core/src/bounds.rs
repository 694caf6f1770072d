//! Upper bounds on how far an explanation curve can move when the data or
//! the model is perturbed, and a verifier comparing them to observed shifts.
//!
//! Scalar bound formulas are exposed directly; the `*_report` builders
//! estimate the constants they need (output bounds, TV distances, Lipschitz
//! constants, sup-norms) and evaluate the bound on every grid point.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    conditional_tv_distance, empirical_conditional_tv, empirical_tv_distance, histogram_tv_distance,
};
use crate::data::{default_bin_count, default_epsilon, histogram_edges, Dataset, FeatureSet, Grid};
use crate::effects::{cd_at, pd_at, EffectKind, ExplanationCurve};
use crate::error::{Error, Result};
use crate::model::{
    check_input, empirical_lipschitz, estimate_prediction_bounds, sup_norm_difference,
    sup_norm_gradient_difference, Predictor, EMPIRICAL_WIDENING,
};
use crate::par;

/// Slack factor applied to a pointwise output bound.
const POINTWISE_WIDENING: f64 = 1.0 + EMPIRICAL_WIDENING;

fn check_dtv(dtv: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&dtv) {
        return Err(Error::param("dtv", format!("{dtv} is not in [0, 1]")));
    }
    Ok(())
}

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::param(name, format!("{v} is negative or NaN")));
    }
    Ok(())
}

fn check_span(x_s: f64, x_min: f64) -> Result<f64> {
    if !(x_s >= x_min) {
        return Err(Error::param(
            "x_s",
            format!("{x_s} is below x_min = {x_min}"),
        ));
    }
    Ok(x_s - x_min)
}

/// `2 B dtv`.
pub fn pd_data_bound(b: f64, dtv: f64) -> Result<f64> {
    check_nonneg("B", b)?;
    check_dtv(dtv)?;
    Ok(2.0 * b * dtv)
}

/// `2 B dtv` with the conditional TV at the queried point.
pub fn cd_data_bound(b: f64, conditional_dtv: f64) -> Result<f64> {
    pd_data_bound(b, conditional_dtv)
}

/// Both curves live in `[A, B]`, so no shift exceeds the distance from
/// `g_value` to the farther end.
pub fn cap_bound(g_value: f64, a: f64, b: f64, raw: f64) -> Result<f64> {
    if !(a <= g_value && g_value <= b) {
        return Err(Error::param(
            "g_value",
            format!("{g_value} is outside [{a}, {b}]"),
        ));
    }
    check_nonneg("raw", raw)?;
    Ok(raw.min((g_value - b).abs().max((g_value - a).abs())))
}

/// `2 L (x_s - x_min) max_dtv`.
pub fn ale_data_bound(l: f64, x_s: f64, x_min: f64, max_dtv: f64) -> Result<f64> {
    check_nonneg("L", l)?;
    check_dtv(max_dtv)?;
    Ok(2.0 * l * check_span(x_s, x_min)? * max_dtv)
}

/// The sup-norm of the model difference is itself the bound.
pub fn pd_model_bound(sup_norm: f64) -> Result<f64> {
    check_nonneg("sup_norm", sup_norm)?;
    Ok(sup_norm)
}

pub fn cd_model_bound(sup_norm_domain: f64) -> Result<f64> {
    pd_model_bound(sup_norm_domain)
}

/// `(x_s - x_min) sup |h - h'|` for the partial derivatives `h`, `h'`.
pub fn ale_model_bound(x_s: f64, x_min: f64, sup_grad_norm: f64) -> Result<f64> {
    check_nonneg("sup_grad_norm", sup_grad_norm)?;
    Ok(check_span(x_s, x_min)? * sup_grad_norm)
}

/// `(x_s - x_min) (L + L2)`; never smaller than [`ale_model_bound`] when
/// `L`, `L2` bound the two partial derivatives.
pub fn variant_a(x_s: f64, x_min: f64, l: f64, l2: f64) -> Result<f64> {
    check_nonneg("L", l)?;
    check_nonneg("L2", l2)?;
    Ok(check_span(x_s, x_min)? * (l + l2))
}

fn substituted_predictions<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    x_s: f64,
) -> Vec<f64> {
    let mut x = vec![0.0; ds.p()];
    (0..ds.n())
        .map(|i| {
            x.copy_from_slice(ds.row(i));
            x[feature] = x_s;
            m.predict(&x)
        })
        .collect()
}

fn extremes(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Bound on `|f(x_s, .)|` over the data rows with feature `feature` set to
/// `x_s`, widened by 5%.
pub fn pointwise_b<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    x_s: f64,
) -> Result<f64> {
    check_input(m, ds.p())?;
    ds.check_feature(feature)?;
    let (lo, hi) = extremes(substituted_predictions(m, ds, feature, x_s));
    Ok(lo.abs().max(hi.abs()) * POINTWISE_WIDENING)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    PdData,
    CdData,
    AleData,
    PdModel,
    CdModel,
    #[serde(rename = "ale-model-A")]
    AleModelA,
    #[serde(rename = "ale-model-B")]
    AleModelB,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::PdData => "pd-data",
            BoundKind::CdData => "cd-data",
            BoundKind::AleData => "ale-data",
            BoundKind::PdModel => "pd-model",
            BoundKind::CdModel => "cd-model",
            BoundKind::AleModelA => "ale-model-A",
            BoundKind::AleModelB => "ale-model-B",
        }
    }

    /// Whether a curve of `kind` is what this bound constrains.
    pub fn applies_to(self, kind: EffectKind) -> bool {
        match self {
            BoundKind::PdData | BoundKind::PdModel => kind == EffectKind::Pd,
            BoundKind::CdData | BoundKind::CdModel => kind == EffectKind::Cd,
            BoundKind::AleData | BoundKind::AleModelA | BoundKind::AleModelB => {
                kind.is_accumulated()
            }
        }
    }
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How TV distances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum TvMethod {
    /// Exact TV between the empirical point-mass measures.
    Empirical,
    /// TV between equal-width histograms; `bins = 0` picks the default count.
    Histogram { bins: usize },
}

/// Constants entering a bound; only those the kind uses are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundConstants {
    #[serde(rename = "B")]
    pub b: Option<f64>,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    pub lipschitz_method: Option<String>,
    pub dtv: Option<f64>,
    pub max_conditional_dtv: Option<f64>,
    pub z_star: Option<f64>,
    pub sup_norm: Option<f64>,
    pub sup_grad_norm: Option<f64>,
    pub x_min: Option<f64>,
    pub epsilon: Option<f64>,
    pub tv_method: Option<TvMethod>,
    /// Grid points whose conditional TV could not be estimated and was set to 1.
    pub inestimable_points: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundPoint {
    pub x_s: f64,
    pub raw: f64,
    pub capped: f64,
}

/// Bound on every grid point. Invariant: `0 <= capped <= raw`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub feature: usize,
    pub constants: BoundConstants,
    pub points: Vec<BoundPoint>,
}

impl BoundReport {
    pub fn raw(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.raw).collect()
    }

    pub fn capped(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.capped).collect()
    }

    /// 1e-6 for exact empirical TV; `0.05 (B - A)` when histogram TV stands in.
    pub fn default_tolerance(&self) -> f64 {
        match (self.constants.tv_method, self.constants.a, self.constants.b) {
            (Some(TvMethod::Histogram { .. }), Some(a), Some(b)) => {
                (0.05 * (b - a)).max(DEFAULT_TOLERANCE)
            }
            _ => DEFAULT_TOLERANCE,
        }
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataBoundOptions {
    pub tv: TvMethod,
    /// CD/ALE neighborhood radius; defaults to 5% of the feature's std in `ds`.
    pub epsilon: Option<f64>,
    /// Use the per-point output bound instead of the global one.
    pub pointwise_b: bool,
    /// ALE only. Defaults to the largest observed gradient norm.
    pub lipschitz: Option<f64>,
}

impl Default for DataBoundOptions {
    fn default() -> Self {
        DataBoundOptions {
            tv: TvMethod::Empirical,
            epsilon: None,
            pointwise_b: false,
            lipschitz: None,
        }
    }
}

/// Output range over both datasets, widened to cover every grid
/// substitution so that all curve values lie inside it.
struct OutputRange {
    a: f64,
    b: f64,
    /// Per grid point: (min, max) of the substituted predictions.
    pointwise: Vec<(f64, f64)>,
}

fn output_range<M: Predictor + ?Sized>(
    models: &[&M],
    datasets: &[&Dataset],
    feature: usize,
    points: &[f64],
) -> Result<OutputRange> {
    let mut a = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    for m in models {
        for ds in datasets {
            let pb = estimate_prediction_bounds(*m, ds)?;
            a = a.min(pb.lower);
            b = b.max(pb.upper);
        }
    }
    let pointwise = par::map_slice(points, |&z| {
        let mut ext = (f64::INFINITY, f64::NEG_INFINITY);
        for m in models {
            for ds in datasets {
                let (lo, hi) = extremes(substituted_predictions(*m, ds, feature, z));
                ext = (ext.0.min(lo), ext.1.max(hi));
            }
        }
        ext
    });
    let (lo, hi) = extremes(pointwise.iter().flat_map(|&(lo, hi)| [lo, hi]));
    Ok(OutputRange {
        a: a.min(lo),
        b: b.max(hi),
        pointwise,
    })
}

fn tv_on(ds: &Dataset, ds2: &Dataset, columns: &[usize], tv: TvMethod) -> Result<f64> {
    match tv {
        TvMethod::Empirical => empirical_tv_distance(ds, ds2, columns),
        TvMethod::Histogram { bins } => {
            let edges = histogram_edges(ds, ds2, columns, resolve_bins(bins, ds, ds2))?;
            histogram_tv_distance(ds, ds2, columns, &edges)
        }
    }
}

fn resolve_bins(bins: usize, ds: &Dataset, ds2: &Dataset) -> usize {
    if bins == 0 {
        default_bin_count(ds.n().min(ds2.n()))
    } else {
        bins
    }
}

/// Conditional TV at each grid point; `None` where a neighborhood is empty.
fn conditional_tvs(
    ds: &Dataset,
    ds2: &Dataset,
    feature: usize,
    points: &[f64],
    epsilon: f64,
    tv: TvMethod,
) -> Result<Vec<Option<f64>>> {
    let s = FeatureSet::single(feature);
    let edges = match tv {
        TvMethod::Empirical => None,
        TvMethod::Histogram { bins } => Some(histogram_edges(
            ds,
            ds2,
            &s.complement(ds.p()),
            resolve_bins(bins, ds, ds2),
        )?),
    };
    let results = par::map_slice(points, |&z| match &edges {
        None => empirical_conditional_tv(ds, ds2, &s, &[z], epsilon),
        Some(e) => conditional_tv_distance(ds, ds2, &s, &[z], epsilon, e),
    });
    results
        .into_iter()
        .map(|r| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyNeighborhood { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

fn check_pair(ds: &Dataset, ds2: &Dataset, feature: usize) -> Result<()> {
    if ds.p() != ds2.p() {
        return Err(Error::DimensionMismatch {
            expected: ds.p(),
            got: ds2.p(),
        });
    }
    ds.check_feature(feature)
}

/// Data-perturbation bound for a curve of `kind` computed with `m` on `ds`
/// versus on `ds2`.
pub fn data_bound_report<M: Predictor + ?Sized>(
    kind: EffectKind,
    m: &M,
    ds: &Dataset,
    ds2: &Dataset,
    feature: usize,
    grid: &Grid,
    opts: &DataBoundOptions,
) -> Result<BoundReport> {
    data_bound_at(kind, m, ds, ds2, feature, grid.points(), opts)
}

/// [`data_bound_report`] on arbitrary nondecreasing points; ALE bounds
/// accumulate from the first point.
pub fn data_bound_at<M: Predictor + ?Sized>(
    kind: EffectKind,
    m: &M,
    ds: &Dataset,
    ds2: &Dataset,
    feature: usize,
    grid: &[f64],
    opts: &DataBoundOptions,
) -> Result<BoundReport> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must be nonempty"));
    }
    check_pair(ds, ds2, feature)?;
    check_input(m, ds.p())?;
    let epsilon = opts.epsilon.unwrap_or_else(|| default_epsilon(ds, feature));
    let mut constants = BoundConstants {
        tv_method: Some(opts.tv),
        ..BoundConstants::default()
    };
    let points = match kind {
        EffectKind::Pd | EffectKind::Cd => {
            let range = output_range(&[m], &[ds, ds2], feature, grid)?;
            let global_b = range.a.abs().max(range.b.abs());
            constants.a = Some(range.a);
            constants.b = Some(global_b);
            let dtvs: Vec<Option<f64>> = if kind == EffectKind::Pd {
                let cols = FeatureSet::single(feature).complement(ds.p());
                let v = tv_on(ds, ds2, &cols, opts.tv)?;
                constants.dtv = Some(v);
                vec![Some(v); grid.len()]
            } else {
                constants.epsilon = Some(epsilon);
                conditional_tvs(ds, ds2, feature, grid, epsilon, opts.tv)?
            };
            let mut points = Vec::with_capacity(grid.len());
            for (k, &z) in grid.iter().enumerate() {
                let (lo, hi) = range.pointwise[k];
                let b = if opts.pointwise_b {
                    lo.abs().max(hi.abs()) * POINTWISE_WIDENING
                } else {
                    global_b
                };
                let dtv = dtvs[k].unwrap_or_else(|| {
                    constants.inestimable_points.push(z);
                    1.0
                });
                let raw = pd_data_bound(b, dtv)?;
                let g = if kind == EffectKind::Pd {
                    Some(pd_at(m, ds, feature, z))
                } else {
                    cd_at(m, ds, feature, z, epsilon)?
                };
                let capped = match g {
                    Some(g) => cap_bound(g.clamp(range.a, range.b), range.a, range.b, raw)?,
                    None => raw.min(range.b - range.a),
                };
                points.push(BoundPoint {
                    x_s: z,
                    raw,
                    capped,
                });
            }
            points
        }
        EffectKind::Ale | EffectKind::Dale => {
            let l = match opts.lipschitz {
                Some(l) => {
                    constants.lipschitz_method = Some("supplied".into());
                    l
                }
                None => {
                    let est = empirical_lipschitz(m, ds.rows().chain(ds2.rows()))?;
                    constants.lipschitz_method = Some("empirical-gradient-max".into());
                    est.value
                }
            };
            let x_min = grid[0];
            let tvs = conditional_tvs(ds, ds2, feature, grid, epsilon, opts.tv)?;
            let mut best: Option<(f64, f64)> = None;
            for (&z, v) in grid.iter().zip(&tvs) {
                if let Some(v) = *v {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((z, v));
                    }
                }
            }
            let max_dtv = match best {
                Some((z, v)) => {
                    constants.z_star = Some(z);
                    v
                }
                None => {
                    constants.inestimable_points = grid.to_vec();
                    1.0
                }
            };
            constants.l = Some(l);
            constants.x_min = Some(x_min);
            constants.epsilon = Some(epsilon);
            constants.max_conditional_dtv = Some(max_dtv);
            grid.iter()
                .map(|&z| {
                    let raw = ale_data_bound(l, z, x_min, max_dtv)?;
                    Ok(BoundPoint {
                        x_s: z,
                        raw,
                        capped: raw,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(BoundReport {
        kind: match kind {
            EffectKind::Pd => BoundKind::PdData,
            EffectKind::Cd => BoundKind::CdData,
            _ => BoundKind::AleData,
        },
        feature,
        constants,
        points,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelBoundOptions {
    /// Radius for the CD value used in capping; defaults as for data bounds.
    pub epsilon: Option<f64>,
    /// `(L, L2)` for the ALE variant A; defaults to observed gradient maxima.
    pub lipschitz: Option<(f64, f64)>,
}

/// `max |f - f'|` over the probe set and every grid substitution into the rows.
fn model_sup_norm<M1, M2>(
    m: &M1,
    m2: &M2,
    ds: &Dataset,
    feature: usize,
    points: &[f64],
) -> Result<f64>
where
    M1: Predictor + ?Sized,
    M2: Predictor + ?Sized,
{
    let probe = sup_norm_difference(m, m2, ds)?;
    let at_grid = par::map_slice(points, |&z| {
        let a = substituted_predictions(m, ds, feature, z);
        let b = substituted_predictions(m2, ds, feature, z);
        a.iter()
            .zip(&b)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max)
    });
    Ok(at_grid.into_iter().fold(probe, f64::max))
}

fn model_sup_grad_norm<M1, M2>(
    m: &M1,
    m2: &M2,
    ds: &Dataset,
    feature: usize,
    points: &[f64],
) -> Result<f64>
where
    M1: Predictor + ?Sized,
    M2: Predictor + ?Sized,
{
    let probe = sup_norm_gradient_difference(m, m2, ds, feature)?;
    let at_grid = par::map_slice(points, |&z| {
        let mut x = vec![0.0; ds.p()];
        let mut worst: f64 = 0.0;
        for i in 0..ds.n() {
            x.copy_from_slice(ds.row(i));
            x[feature] = z;
            let a = m.partial(&x, feature).unwrap_or(f64::NAN);
            let b = m2.partial(&x, feature).unwrap_or(f64::NAN);
            worst = worst.max((a - b).abs());
        }
        worst
    });
    Ok(at_grid.into_iter().fold(probe, f64::max))
}

/// Model-perturbation bound for curves computed on `ds` with `m` versus `m2`.
/// `kind` must be one of the model kinds.
pub fn model_bound_report<M1, M2>(
    kind: BoundKind,
    m: &M1,
    m2: &M2,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
    opts: &ModelBoundOptions,
) -> Result<BoundReport>
where
    M1: Predictor + ?Sized,
    M2: Predictor + ?Sized,
{
    check_input(m, ds.p())?;
    check_input(m2, ds.p())?;
    ds.check_feature(feature)?;
    let mut constants = BoundConstants::default();
    let points = match kind {
        BoundKind::PdModel | BoundKind::CdModel => {
            let sup = model_sup_norm(m, m2, ds, feature, grid.points())?;
            let r1 = output_range::<M1>(&[m], &[ds], feature, grid.points())?;
            let r2 = output_range::<M2>(&[m2], &[ds], feature, grid.points())?;
            let (a, b) = (r1.a.min(r2.a), r1.b.max(r2.b));
            let epsilon = opts.epsilon.unwrap_or_else(|| default_epsilon(ds, feature));
            constants.sup_norm = Some(sup);
            constants.a = Some(a);
            constants.b = Some(a.abs().max(b.abs()));
            let raw = pd_model_bound(sup)?;
            let mut points = Vec::with_capacity(grid.len());
            for &z in grid.points() {
                let g = if kind == BoundKind::PdModel {
                    Some(pd_at(m, ds, feature, z))
                } else {
                    constants.epsilon = Some(epsilon);
                    cd_at(m, ds, feature, z, epsilon)?
                };
                let capped = match g {
                    Some(g) => cap_bound(g.clamp(a, b), a, b, raw)?,
                    None => raw.min(b - a),
                };
                points.push(BoundPoint {
                    x_s: z,
                    raw,
                    capped,
                });
            }
            points
        }
        BoundKind::AleModelA | BoundKind::AleModelB => {
            let x_min = grid.first();
            constants.x_min = Some(x_min);
            let bound: Box<dyn Fn(f64) -> Result<f64>> = if kind == BoundKind::AleModelB {
                let sup = model_sup_grad_norm(m, m2, ds, feature, grid.points())?;
                constants.sup_grad_norm = Some(sup);
                Box::new(move |z| ale_model_bound(z, x_min, sup))
            } else {
                let (l, l2) = match opts.lipschitz {
                    Some(pair) => {
                        constants.lipschitz_method = Some("supplied".into());
                        pair
                    }
                    None => {
                        constants.lipschitz_method = Some("empirical-gradient-max".into());
                        (
                            empirical_lipschitz(m, ds.rows())?.value,
                            empirical_lipschitz(m2, ds.rows())?.value,
                        )
                    }
                };
                constants.l = Some(l);
                constants.l2 = Some(l2);
                Box::new(move |z| variant_a(z, x_min, l, l2))
            };
            grid.points()
                .iter()
                .map(|&z| {
                    let raw = bound(z)?;
                    Ok(BoundPoint {
                        x_s: z,
                        raw,
                        capped: raw,
                    })
                })
                .collect::<Result<_>>()?
        }
        other => {
            return Err(Error::param(
                "kind",
                format!("{other} is a data bound; use data_bound_report"),
            ))
        }
    };
    Ok(BoundReport {
        kind,
        feature,
        constants,
        points,
    })
}

/// A grid point where the observed shift exceeds the capped bound plus tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub x_s: f64,
    pub difference: f64,
    pub bound: f64,
}

/// Compare `|c - c2|` against the report at every grid point.
pub fn verify(
    c: &ExplanationCurve,
    c2: &ExplanationCurve,
    report: &BoundReport,
    tolerance: f64,
) -> Result<Vec<Violation>> {
    if c.kind != c2.kind || !report.kind.applies_to(c.kind) {
        return Err(Error::CurveMismatch(format!(
            "curves {} / {} against a {} bound",
            c.kind, c2.kind, report.kind
        )));
    }
    if c.feature != c2.feature || c.feature != report.feature {
        return Err(Error::CurveMismatch("features differ".into()));
    }
    let xs: Vec<f64> = report.points.iter().map(|p| p.x_s).collect();
    if c.grid.points() != c2.grid.points() || c.grid.points() != xs.as_slice() {
        return Err(Error::CurveMismatch("grids differ".into()));
    }
    if c.centered != c2.centered {
        return Err(Error::CurveMismatch(
            "one curve is centered and the other is not".into(),
        ));
    }
    Ok(report
        .points
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let difference = (c.values[k] - c2.values[k]).abs();
            (difference > p.capped + tolerance).then_some(Violation {
                index: k,
                x_s: p.x_s,
                difference,
                bound: p.capped,
            })
        })
        .collect())
}

/// CSV with columns `kind,feature,x_s,raw,capped`.
pub fn write_bounds_csv(reports: &[BoundReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("kind,feature,x_s,raw,capped\n");
    for r in reports {
        for p in &r.points {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                r.kind, r.feature, p.x_s, p.raw, p.capped
            ));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{ConstantModel, LinearModel};
    use crate::data::GridKind;
    use crate::effects::{ale, pd};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn grid(points: &[f64]) -> Grid {
        Grid::new(points.to_vec(), GridKind::Equidistant).unwrap()
    }

    #[test]
    fn scalar_formulas() {
        assert!(close(pd_data_bound(1.0, 0.1).unwrap(), 0.2));
        assert_eq!(pd_data_bound(3.0, 0.0).unwrap(), 0.0);
        assert!(close(pd_data_bound(0.9, 0.5).unwrap(), 0.9));
        assert!(pd_data_bound(1.0, 1.5).is_err());
        assert!(pd_data_bound(1.0, -0.1).is_err());
        assert_eq!(cd_data_bound(1.0, 0.0).unwrap(), 0.0);
        assert!(close(cd_data_bound(1.0, 0.25).unwrap(), 0.5));
        assert!(close(ale_data_bound(2.0, 2.5, 1.0, 0.1).unwrap(), 0.6));
        assert_eq!(ale_data_bound(2.0, 1.0, 1.0, 0.3).unwrap(), 0.0);
        assert!(ale_data_bound(2.0, 0.5, 1.0, 0.3).is_err());
        assert_eq!(pd_model_bound(0.0).unwrap(), 0.0);
        assert!(pd_model_bound(-1.0).is_err());
        assert_eq!(ale_model_bound(3.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(close(variant_a(3.0, 1.0, 1.0, 0.5).unwrap(), 3.0));
        assert!(variant_a(0.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn capping() {
        assert!(close(
            cap_bound(0.5, 0.0, 1.0, pd_data_bound(1.0, 0.3).unwrap()).unwrap(),
            0.5
        ));
        assert!(close(
            cap_bound(0.5, 0.0, 1.0, pd_data_bound(1.0, 0.2).unwrap()).unwrap(),
            0.4
        ));
        assert_eq!(cap_bound(0.0, 0.0, 1.0, 5.0).unwrap(), 1.0);
        assert!(cap_bound(1.5, 0.0, 1.0, 0.1).is_err());
        // constant past the crossing point
        assert_eq!(
            cap_bound(0.3, 0.0, 1.0, 0.8).unwrap(),
            cap_bound(0.3, 0.0, 1.0, 1.6).unwrap()
        );
    }

    #[test]
    fn ale_bound_increases() {
        let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
        let v: Vec<f64> = xs
            .iter()
            .map(|&x| ale_data_bound(1.5, x, 0.0, 0.2).unwrap())
            .collect();
        assert_eq!(v[0], 0.0);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn pointwise_b_cases() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, -2.0], vec![2.0, 0.5]]).unwrap();
        let k = ConstantModel::new(-0.4, 2);
        assert!(close(pointwise_b(&k, &ds, 0, 1.7).unwrap(), 0.4 * 1.05));
        let m = LinearModel::new(vec![1.0, 1.0], 0.0);
        let global = estimate_prediction_bounds(&m, &ds).unwrap().abs_max();
        for z in [0.0, 0.5, 1.0, 2.0] {
            let pb = pointwise_b(&m, &ds, 0, z).unwrap();
            // brute-force scan of the substitutions
            let scan = ds.rows().map(|r| (z + r[1]).abs()).fold(0.0, f64::max);
            assert!(close(pb, scan * 1.05));
            assert!(pb <= global * 1.05 + 1e-12);
        }
    }

    #[test]
    fn cd_bound_composes_with_conditional_tv() {
        let ds = Dataset::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![5.0, 0.0],
        ])
        .unwrap();
        let ds2 = Dataset::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 2.0],
            vec![5.0, 1.0],
        ])
        .unwrap();
        let s = FeatureSet::single(0);
        let dtv = empirical_conditional_tv(&ds, &ds2, &s, &[0.0], 0.5).unwrap();
        assert!(close(dtv, 1.0 / 3.0));
        assert!(close(cd_data_bound(1.0, dtv).unwrap(), 2.0 / 3.0));
        let r = data_bound_report(
            EffectKind::Cd,
            &ConstantModel::new(1.0, 2),
            &ds,
            &ds2,
            0,
            &grid(&[0.0, 2.5, 5.0]),
            &DataBoundOptions {
                epsilon: Some(0.5),
                ..DataBoundOptions::default()
            },
        )
        .unwrap();
        assert!(close(r.points[0].raw, 2.0 / 3.0));
        assert_eq!(r.constants.inestimable_points, vec![2.5]);
        // constant model: curves cannot move, capping sees a zero-width range
        assert!(r.points.iter().all(|p| p.capped == 0.0));
    }

    #[test]
    fn model_bounds_for_linear_pairs() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        let g = grid(&[0.0, 1.0, 2.0]);
        let m = LinearModel::new(vec![2.0, 1.0], 0.0);
        let same = model_bound_report(
            BoundKind::PdModel,
            &m,
            &m,
            &ds,
            0,
            &g,
            &ModelBoundOptions::default(),
        )
        .unwrap();
        assert!(same.points.iter().all(|p| p.raw == 0.0));
        let shifted = LinearModel::new(vec![2.0, 1.0], 0.3);
        let r = model_bound_report(
            BoundKind::PdModel,
            &m,
            &shifted,
            &ds,
            0,
            &g,
            &ModelBoundOptions::default(),
        )
        .unwrap();
        assert!(r.points.iter().all(|p| close(p.raw, 0.3)));
        let m2 = LinearModel::new(vec![1.25, 1.0], 0.0);
        let b = model_bound_report(
            BoundKind::AleModelB,
            &m,
            &m2,
            &ds,
            0,
            &g,
            &ModelBoundOptions::default(),
        )
        .unwrap();
        for p in &b.points {
            assert!(close(p.raw, p.x_s * 0.75));
        }
        let a = model_bound_report(
            BoundKind::AleModelA,
            &m,
            &m2,
            &ds,
            0,
            &g,
            &ModelBoundOptions::default(),
        )
        .unwrap();
        assert!(a.points.iter().zip(&b.points).all(|(a, b)| b.raw <= a.raw));
        assert!(model_bound_report(
            BoundKind::PdData,
            &m,
            &m2,
            &ds,
            0,
            &g,
            &ModelBoundOptions::default()
        )
        .is_err());

        // observed ALE shift matches the bound exactly for linear models
        let c = ale(&m, &ds, 0, &g).unwrap();
        let c2 = ale(&m2, &ds, 0, &g).unwrap();
        assert!(verify(&c, &c2, &b, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn pd_data_report_holds_exactly() {
        let ds = Dataset::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 3.0],
            vec![2.0, 2.0],
            vec![0.5, -1.0],
        ])
        .unwrap();
        let ds2 = ds.with_column(1, &[1.0, 3.0, 2.5, 0.0]).unwrap();
        let m = LinearModel::new(vec![0.5, 1.0], -0.2);
        let g = grid(&[0.0, 1.0, 2.0]);
        let r = data_bound_report(
            EffectKind::Pd,
            &m,
            &ds,
            &ds2,
            0,
            &g,
            &DataBoundOptions::default(),
        )
        .unwrap();
        assert!(close(r.constants.dtv.unwrap(), 0.5));
        for p in &r.points {
            assert!(p.capped <= p.raw && p.capped >= 0.0);
        }
        let c = pd(&m, &ds, 0, &g).unwrap();
        let c2 = pd(&m, &ds2, 0, &g).unwrap();
        assert!(verify(&c, &c2, &r, DEFAULT_TOLERANCE).unwrap().is_empty());
    }

    #[test]
    fn verifier() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let g = grid(&[0.0, 1.0]);
        let c = pd(&LinearModel::new(vec![1.0], 0.0), &ds, 0, &g).unwrap();
        let mut c2 = c.clone();
        let report = BoundReport {
            kind: BoundKind::PdData,
            feature: 0,
            constants: BoundConstants::default(),
            points: vec![
                BoundPoint {
                    x_s: 0.0,
                    raw: 0.0,
                    capped: 0.0,
                },
                BoundPoint {
                    x_s: 1.0,
                    raw: 0.0,
                    capped: 0.0,
                },
            ],
        };
        assert!(verify(&c, &c2, &report, 0.0).unwrap().is_empty());
        c2.values[1] += 0.1;
        let v = verify(&c, &c2, &report, 1e-6).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        let mut other = c2.clone();
        other.kind = EffectKind::Ale;
        assert!(verify(&c, &other, &report, 0.0).is_err());
    }
}
