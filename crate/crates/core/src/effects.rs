//! Global feature effect estimators: partial dependence (PD), conditional
//! dependence (CD), accumulated local effects (ALE) and its gradient-based
//! variant (DALE), plus curve utilities.
//!
//! All estimators take a single feature of interest. ALE and DALE curves are
//! returned uncentered, so their value at the first grid point is exactly 0;
//! [`center`] adds the mean prediction.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{bin_indices, neighborhood, Dataset, FeatureSet, Grid};
use crate::error::{Error, Result};
use crate::model::{check_input, Predictor};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Pd,
    Cd,
    Ale,
    Dale,
}

impl EffectKind {
    pub fn name(self) -> &'static str {
        match self {
            EffectKind::Pd => "pd",
            EffectKind::Cd => "cd",
            EffectKind::Ale => "ale",
            EffectKind::Dale => "dale",
        }
    }

    pub fn is_accumulated(self) -> bool {
        matches!(self, EffectKind::Ale | EffectKind::Dale)
    }
}

impl std::fmt::Display for EffectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MaxAbs,
    L2Mean,
}

/// Estimation diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CurveMeta {
    /// Per grid point: CD neighborhood was empty and the value was
    /// interpolated, or the ALE/DALE bin ending at this point was empty.
    pub skipped: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighborhood_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_prediction: Option<f64>,
}

/// Effect values of one feature on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationCurve {
    pub feature: usize,
    pub kind: EffectKind,
    pub grid: Grid,
    pub values: Vec<f64>,
    pub centered: bool,
    pub meta: CurveMeta,
}

impl ExplanationCurve {
    pub fn points(&self) -> &[f64] {
        self.grid.points()
    }
}

fn check_inputs<M: Predictor + ?Sized>(m: &M, ds: &Dataset, feature: usize) -> Result<()> {
    check_input(m, ds.p())?;
    ds.check_feature(feature)
}

/// Mean of `f` over the given rows with column `feature` set to `z`.
fn substituted_mean<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    rows: impl Iterator<Item = usize>,
    feature: usize,
    z: f64,
) -> f64 {
    let mut x = vec![0.0; ds.p()];
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in rows {
        x.copy_from_slice(ds.row(i));
        x[feature] = z;
        sum += m.predict(&x);
        count += 1;
    }
    sum / count as f64
}

/// Monte-Carlo partial dependence at a single point.
pub fn pd_at<M: Predictor + ?Sized>(m: &M, ds: &Dataset, feature: usize, z: f64) -> f64 {
    substituted_mean(m, ds, 0..ds.n(), feature, z)
}

/// Conditional dependence at a single point; `None` for an empty neighborhood.
pub fn cd_at<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    z: f64,
    epsilon: f64,
) -> Result<Option<f64>> {
    let rows = neighborhood(ds, &FeatureSet::single(feature), &[z], epsilon)?;
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(substituted_mean(m, ds, rows.into_iter(), feature, z)))
}

pub fn pd<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
) -> Result<ExplanationCurve> {
    check_inputs(m, ds, feature)?;
    let values = par::map_slice(grid.points(), |&z| pd_at(m, ds, feature, z));
    Ok(ExplanationCurve {
        feature,
        kind: EffectKind::Pd,
        grid: grid.clone(),
        meta: CurveMeta {
            skipped: vec![false; values.len()],
            ..CurveMeta::default()
        },
        values,
        centered: false,
    })
}

/// Fill `None` entries by linear interpolation between the nearest known
/// neighbors; ends take the nearest known value.
fn interpolate_gaps(points: &[f64], values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..values.len()).filter(|&k| values[k].is_some()).collect();
    if known.is_empty() {
        return None;
    }
    Some(
        (0..values.len())
            .map(|k| {
                if let Some(v) = values[k] {
                    return v;
                }
                let right = known.partition_point(|&j| j < k);
                match (right.checked_sub(1).map(|r| known[r]), known.get(right)) {
                    (Some(l), Some(&r)) => {
                        let (vl, vr) = (values[l].unwrap(), values[r].unwrap());
                        let t = (points[k] - points[l]) / (points[r] - points[l]);
                        vl + t * (vr - vl)
                    }
                    (Some(l), None) => values[l].unwrap(),
                    (None, Some(&r)) => values[r].unwrap(),
                    (None, None) => unreachable!(),
                }
            })
            .collect(),
    )
}

pub fn cd<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
    epsilon: f64,
) -> Result<ExplanationCurve> {
    check_inputs(m, ds, feature)?;
    if !(epsilon >= 0.0) {
        return Err(Error::param("epsilon", "must be nonnegative"));
    }
    let s = FeatureSet::single(feature);
    let per_point = par::map_slice(grid.points(), |&z| {
        let rows = neighborhood(ds, &s, &[z], epsilon).expect("validated inputs");
        let size = rows.len();
        let value = (size > 0).then(|| substituted_mean(m, ds, rows.into_iter(), feature, z));
        (value, size)
    });
    let raw: Vec<Option<f64>> = per_point.iter().map(|p| p.0).collect();
    let values = interpolate_gaps(grid.points(), &raw).ok_or_else(|| {
        Error::Inestimable(format!(
            "every CD neighborhood is empty (epsilon = {epsilon})"
        ))
    })?;
    Ok(ExplanationCurve {
        feature,
        kind: EffectKind::Cd,
        grid: grid.clone(),
        values,
        centered: false,
        meta: CurveMeta {
            skipped: raw.iter().map(Option::is_none).collect(),
            neighborhood_sizes: Some(per_point.iter().map(|p| p.1).collect()),
            epsilon: Some(epsilon),
            ..CurveMeta::default()
        },
    })
}

fn accumulate(
    kind: EffectKind,
    feature: usize,
    grid: &Grid,
    bins: &[Vec<usize>],
    increments: Vec<f64>,
) -> Result<ExplanationCurve> {
    if bins.iter().all(Vec::is_empty) {
        return Err(Error::Inestimable("every bin is empty".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    values.push(acc);
    for inc in increments {
        acc += inc;
        values.push(acc);
    }
    let mut skipped = vec![false];
    skipped.extend(bins.iter().map(Vec::is_empty));
    Ok(ExplanationCurve {
        feature,
        kind,
        grid: grid.clone(),
        values,
        centered: false,
        meta: CurveMeta {
            skipped,
            bin_counts: Some(bins.iter().map(Vec::len).collect()),
            ..CurveMeta::default()
        },
    })
}

/// Uncentered ALE from bin-wise prediction differences. Empty bins add 0.
pub fn ale<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
) -> Result<ExplanationCurve> {
    check_inputs(m, ds, feature)?;
    let bins = bin_indices(ds, feature, grid)?;
    let z = grid.points();
    let increments = par::map_range(bins.len(), |k| {
        let bin = &bins[k];
        if bin.is_empty() {
            return 0.0;
        }
        let mut x = vec![0.0; ds.p()];
        let mut sum = 0.0;
        for &i in bin {
            x.copy_from_slice(ds.row(i));
            x[feature] = z[k + 1];
            let hi = m.predict(&x);
            x[feature] = z[k];
            sum += hi - m.predict(&x);
        }
        sum / bin.len() as f64
    });
    accumulate(EffectKind::Ale, feature, grid, &bins, increments)
}

/// Uncentered DALE: bin width times the mean partial derivative at the data
/// points falling in the bin. Empty bins add 0.
pub fn dale<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
) -> Result<ExplanationCurve> {
    check_inputs(m, ds, feature)?;
    if !m.is_differentiable() {
        return Err(Error::NotDifferentiable);
    }
    let bins = bin_indices(ds, feature, grid)?;
    let z = grid.points();
    let increments = par::map_range(bins.len(), |k| {
        let bin = &bins[k];
        if bin.is_empty() {
            return 0.0;
        }
        let sum: f64 = bin
            .iter()
            .map(|&i| m.partial(ds.row(i), feature).unwrap_or(f64::NAN))
            .sum();
        (z[k + 1] - z[k]) * (sum / bin.len() as f64)
    });
    accumulate(EffectKind::Dale, feature, grid, &bins, increments)
}

/// Dispatch on `kind`. `epsilon` is only used by CD.
pub fn estimate<M: Predictor + ?Sized>(
    kind: EffectKind,
    m: &M,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
    epsilon: f64,
) -> Result<ExplanationCurve> {
    match kind {
        EffectKind::Pd => pd(m, ds, feature, grid),
        EffectKind::Cd => cd(m, ds, feature, grid, epsilon),
        EffectKind::Ale => ale(m, ds, feature, grid),
        EffectKind::Dale => dale(m, ds, feature, grid),
    }
}

pub fn mean_prediction<M: Predictor + ?Sized>(m: &M, ds: &Dataset) -> Result<f64> {
    check_input(m, ds.p())?;
    let preds = par::map_range(ds.n(), |i| m.predict(ds.row(i)));
    Ok(par::sum(&preds) / ds.n() as f64)
}

/// Shift an uncentered ALE/DALE curve by the mean model prediction.
pub fn center<M: Predictor + ?Sized>(
    c: &ExplanationCurve,
    m: &M,
    ds: &Dataset,
) -> Result<ExplanationCurve> {
    if c.centered {
        return Err(Error::AlreadyCentered);
    }
    if !c.kind.is_accumulated() {
        return Err(Error::CurveMismatch(format!(
            "cannot center a {} curve",
            c.kind
        )));
    }
    let mean = mean_prediction(m, ds)?;
    let mut out = c.clone();
    out.values.iter_mut().for_each(|v| *v += mean);
    out.centered = true;
    out.meta.mean_prediction = Some(mean);
    Ok(out)
}

/// Population variance of the curve values.
pub fn importance(c: &ExplanationCurve) -> Result<f64> {
    let n = c.values.len();
    if n < 2 {
        return Err(Error::param("curve", "importance needs at least 2 points"));
    }
    let mean = c.values.iter().sum::<f64>() / n as f64;
    Ok(c.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64)
}

pub fn curve_distance(c: &ExplanationCurve, c2: &ExplanationCurve, metric: Metric) -> Result<f64> {
    if c.kind != c2.kind {
        return Err(Error::CurveMismatch(format!("{} vs {}", c.kind, c2.kind)));
    }
    if c.grid.points() != c2.grid.points() {
        return Err(Error::CurveMismatch("grids differ".into()));
    }
    let diffs = c.values.iter().zip(&c2.values).map(|(a, b)| (a - b).abs());
    Ok(match metric {
        Metric::MaxAbs => diffs.fold(0.0, f64::max),
        Metric::L2Mean => (diffs.map(|d| d * d).sum::<f64>() / c.values.len() as f64).sqrt(),
    })
}

/// CSV with columns `feature,grid,value,skipped`.
pub fn write_curves_csv(
    curves: &[ExplanationCurve],
    names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("feature,grid,value,skipped\n");
    for c in curves {
        let name = names
            .get(c.feature)
            .cloned()
            .unwrap_or_else(|| c.feature.to_string());
        for ((z, v), s) in c.points().iter().zip(&c.values).zip(&c.meta.skipped) {
            out.push_str(&format!("{name},{z:?},{v:?},{}\n", u8::from(*s)));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(out.as_bytes()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
