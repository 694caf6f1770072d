//! Model-parameter randomization test: perturb an MLP layer by layer from
//! the output backward and track how far each explanation moves.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{default_epsilon, Dataset, Grid};
use crate::effects::{cd, curve_distance, dale, pd, EffectKind, ExplanationCurve, Metric};
use crate::error::{Error, Result};
use crate::model::{accuracy, check_input, perturb_layer_with, MlpModel};
use crate::par;

/// Explanations compared by the test. DALE stands in for ALE.
pub const KINDS: [EffectKind; 3] = [EffectKind::Pd, EffectKind::Cd, EffectKind::Dale];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomizeConfig {
    pub sigma: f64,
    pub repeats: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Leave biases untouched.
    pub weights_only: bool,
    /// CD radius for every feature; defaults to 5% of each feature's std.
    pub epsilon: Option<f64>,
}

impl Default for RandomizeConfig {
    fn default() -> Self {
        RandomizeConfig {
            sigma: 0.5,
            repeats: 20,
            seed: 0,
            metric: Metric::MaxAbs,
            weights_only: false,
            epsilon: None,
        }
    }
}

/// Distance statistics for one explanation kind after one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub kind: EffectKind,
    pub stage: usize,
    pub layer_name: String,
    pub mean_distance: f64,
    pub stderr: f64,
    pub mean_norm_distance: f64,
    pub norm_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageAccuracy {
    pub stage: usize,
    pub layer_name: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Stage `k` has the last `k` layers perturbed; stage 0 is the original model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizationReport {
    pub sigma: f64,
    pub repeats: usize,
    pub seed: u64,
    pub metric: Metric,
    pub weights_only: bool,
    pub features: Vec<usize>,
    /// Largest mean distance over all cells; normalized values divide by it.
    pub normalization: f64,
    pub cells: Vec<Cell>,
    /// `None` when the dataset has no labels.
    pub accuracy: Option<Vec<StageAccuracy>>,
    pub warnings: Vec<String>,
}

impl RandomizationReport {
    pub fn cell(&self, kind: EffectKind, stage: usize) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.stage == stage)
    }

    pub fn stages(&self) -> usize {
        self.cells
            .iter()
            .map(|c| c.stage)
            .max()
            .map_or(0, |s| s + 1)
    }
}

/// Name of the layer newly perturbed at `stage`.
pub fn layer_name(n_layers: usize, stage: usize) -> String {
    if stage == 0 {
        "none".into()
    } else {
        format!("layer{}", n_layers - stage)
    }
}

fn curves(
    m: &MlpModel,
    ds: &Dataset,
    features: &[usize],
    grids: &[Grid],
    eps: &[f64],
) -> Result<Vec<Vec<ExplanationCurve>>> {
    KINDS
        .iter()
        .map(|&kind| {
            features
                .iter()
                .zip(grids)
                .zip(eps)
                .map(|((&j, g), &e)| match kind {
                    EffectKind::Pd => pd(m, ds, j, g),
                    EffectKind::Cd => cd(m, ds, j, g, e),
                    _ => dale(m, ds, j, g),
                })
                .collect()
        })
        .collect()
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One repeat: per stage, the feature-averaged distance for each kind and
/// the accuracy.
struct RepeatOutcome {
    distances: Vec<[f64; 3]>,
    accuracy: Vec<Option<f64>>,
}

/// Features with at most two distinct values are dropped with a warning.
pub fn randomization_test(
    m: &MlpModel,
    ds: &Dataset,
    features: &[usize],
    grids: &[Grid],
    cfg: &RandomizeConfig,
) -> Result<RandomizationReport> {
    check_input(m, ds.p())?;
    if features.len() != grids.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: grids.len(),
        });
    }
    if cfg.repeats == 0 {
        return Err(Error::param("repeats", "must be at least 1"));
    }
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::param("sigma", "must be finite and nonnegative"));
    }
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    let mut kept_grids = Vec::new();
    for (&j, g) in features.iter().zip(grids) {
        ds.check_feature(j)?;
        if ds.unique_count(j) <= 2 {
            warnings.push(format!("skipped feature {j}: at most 2 unique values"));
        } else {
            kept.push(j);
            kept_grids.push(g.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::param(
            "features",
            "every feature has at most 2 unique values",
        ));
    }
    let eps: Vec<f64> = kept
        .iter()
        .map(|&j| cfg.epsilon.unwrap_or_else(|| default_epsilon(ds, j)))
        .collect();
    let has_labels = ds.labels().is_some();
    if !has_labels {
        warnings.push("dataset has no labels; accuracy not reported".into());
    }
    let base = curves(m, ds, &kept, &kept_grids, &eps)?;
    let base_acc = if has_labels {
        Some(accuracy(m, ds, 0.5)?)
    } else {
        None
    };
    let n_layers = m.n_layers();

    let outcomes = par::map_range(cfg.repeats, |rep| -> Result<RepeatOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(cfg.seed, &[rep as u64]));
        let mut model = m.clone();
        let mut distances = vec![[0.0; 3]];
        let mut acc = vec![base_acc];
        for stage in 1..=n_layers {
            model = perturb_layer_with(
                &model,
                n_layers - stage,
                cfg.sigma,
                cfg.weights_only,
                &mut rng,
            )?;
            let now = curves(&model, ds, &kept, &kept_grids, &eps)?;
            let mut row = [0.0; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                let d = base[k]
                    .iter()
                    .zip(&now[k])
                    .map(|(a, b)| curve_distance(a, b, cfg.metric))
                    .collect::<Result<Vec<f64>>>()?;
                *slot = d.iter().sum::<f64>() / d.len() as f64;
            }
            distances.push(row);
            acc.push(if has_labels {
                Some(accuracy(&model, ds, 0.5)?)
            } else {
                None
            });
        }
        Ok(RepeatOutcome {
            distances,
            accuracy: acc,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (k, &kind) in KINDS.iter().enumerate() {
        for stage in 0..=n_layers {
            let xs: Vec<f64> = outcomes.iter().map(|o| o.distances[stage][k]).collect();
            let (mean, stderr) = mean_stderr(&xs);
            cells.push(Cell {
                kind,
                stage,
                layer_name: layer_name(n_layers, stage),
                mean_distance: mean,
                stderr,
                mean_norm_distance: 0.0,
                norm_stderr: 0.0,
            });
        }
    }
    let normalization = cells.iter().map(|c| c.mean_distance).fold(0.0, f64::max);
    if normalization > 0.0 {
        for c in &mut cells {
            c.mean_norm_distance = c.mean_distance / normalization;
            c.norm_stderr = c.stderr / normalization;
        }
    }
    let accuracy = has_labels.then(|| {
        (0..=n_layers)
            .map(|stage| {
                let xs: Vec<f64> = outcomes
                    .iter()
                    .map(|o| o.accuracy[stage].unwrap_or(f64::NAN))
                    .collect();
                let (mean, stderr) = mean_stderr(&xs);
                StageAccuracy {
                    stage,
                    layer_name: layer_name(n_layers, stage),
                    mean,
                    stderr,
                }
            })
            .collect()
    });
    Ok(RandomizationReport {
        sigma: cfg.sigma,
        repeats: cfg.repeats,
        seed: cfg.seed,
        metric: cfg.metric,
        weights_only: cfg.weights_only,
        features: kept,
        normalization,
        cells,
        accuracy,
        warnings,
    })
}

/// [`randomization_test`] once per sigma, all with the same seed.
pub fn sigma_sweep(
    m: &MlpModel,
    ds: &Dataset,
    features: &[usize],
    grids: &[Grid],
    sigmas: &[f64],
    cfg: &RandomizeConfig,
) -> Result<Vec<RandomizationReport>> {
    sigmas
        .iter()
        .map(|&sigma| {
            randomization_test(
                m,
                ds,
                features,
                grids,
                &RandomizeConfig {
                    sigma,
                    ..cfg.clone()
                },
            )
        })
        .collect()
}

/// CSV with columns `kind,stage,layer_name,sigma,mean_norm_distance,stderr,accuracy`;
/// `stderr` is on the normalized scale.
pub fn write_randomize_csv(reports: &[RandomizationReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("kind,stage,layer_name,sigma,mean_norm_distance,stderr,accuracy\n");
    for r in reports {
        for c in &r.cells {
            let acc = r
                .accuracy
                .as_ref()
                .map(|a| format!("{:?}", a[c.stage].mean))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{:?},{acc}\n",
                c.kind, c.stage, c.layer_name, r.sigma, c.mean_norm_distance, c.norm_stderr
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
    use crate::analytic::{gen_synthetic, LabelRule, SyntheticConfig};
    use crate::data::{make_grid, GridKind};
    use crate::model::{init_mlp, Activation};

    fn fixture() -> (MlpModel, Dataset, Vec<usize>, Vec<Grid>) {
        let ds = gen_synthetic(&SyntheticConfig {
            n: 300,
            p: 3,
            correlation: 0.2,
            label_rule: LabelRule::Linear,
            seed: 1,
        })
        .unwrap();
        let m = init_mlp(3, &[6, 4], Activation::Tanh, 2).unwrap();
        let features = vec![0, 1];
        let grids = features
            .iter()
            .map(|&j| make_grid(&ds, j, 8, GridKind::Quantile).unwrap())
            .collect();
        (m, ds, features, grids)
    }

    #[test]
    fn zero_sigma_is_all_zero() {
        let (m, ds, f, g) = fixture();
        let r = randomization_test(
            &m,
            &ds,
            &f,
            &g,
            &RandomizeConfig {
                sigma: 0.0,
                repeats: 3,
                ..RandomizeConfig::default()
            },
        )
        .unwrap();
        assert!(r
            .cells
            .iter()
            .all(|c| c.mean_distance == 0.0 && c.mean_norm_distance == 0.0));
        let acc = r.accuracy.unwrap();
        assert!(acc.iter().all(|a| a.mean == acc[0].mean && a.stderr == 0.0));
        assert_eq!(r.normalization, 0.0);
    }

    #[test]
    fn report_invariants() {
        let (m, ds, f, g) = fixture();
        let cfg = RandomizeConfig {
            repeats: 4,
            seed: 3,
            ..RandomizeConfig::default()
        };
        let r = randomization_test(&m, &ds, &f, &g, &cfg).unwrap();
        assert_eq!(r.stages(), 4);
        for c in &r.cells {
            assert!((0.0..=1.0).contains(&c.mean_norm_distance));
            assert!(c.stderr >= 0.0);
            if c.stage == 0 {
                assert_eq!(c.mean_distance, 0.0);
            }
        }
        let max = r
            .cells
            .iter()
            .map(|c| c.mean_norm_distance)
            .fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert_eq!(r, randomization_test(&m, &ds, &f, &g, &cfg).unwrap());
        let single = par::with_threads(1, || randomization_test(&m, &ds, &f, &g, &cfg).unwrap());
        assert_eq!(single, r);
        let one =
            randomization_test(&m, &ds, &f, &g, &RandomizeConfig { repeats: 1, ..cfg }).unwrap();
        assert!(one.cells.iter().all(|c| c.stderr == 0.0));
    }

    #[test]
    fn binary_features_are_filtered() {
        let (m, ds, _, _) = fixture();
        let col: Vec<f64> = (0..ds.n())
            .map(|i| ds.domains()[2].clamp((i % 2) as f64 * 0.1))
            .collect();
        let ds = ds.with_column(2, &col).unwrap();
        let g = make_grid(&ds, 2, 4, GridKind::Equidistant).unwrap();
        assert!(randomization_test(
            &m,
            &ds,
            &[2],
            std::slice::from_ref(&g),
            &RandomizeConfig::default()
        )
        .is_err());
        let g0 = make_grid(&ds, 0, 4, GridKind::Quantile).unwrap();
        let r = randomization_test(
            &m,
            &ds,
            &[0, 2],
            &[g0, g],
            &RandomizeConfig {
                repeats: 2,
                ..RandomizeConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.features, vec![0]);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn stronger_noise_moves_curves_further() {
        let (m, ds, f, g) = fixture();
        let cfg = RandomizeConfig {
            repeats: 10,
            seed: 5,
            ..RandomizeConfig::default()
        };
        let reps = sigma_sweep(&m, &ds, &f, &g, &[0.05, 0.5], &cfg).unwrap();
        for (lo, hi) in reps[0]
            .cells
            .iter()
            .zip(&reps[1].cells)
            .filter(|(c, _)| c.stage > 0)
        {
            assert!(
                hi.mean_distance >= lo.mean_distance,
                "{:?} stage {}",
                lo.kind,
                lo.stage
            );
        }
    }
}
