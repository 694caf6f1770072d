//! Closed-form reference predictors and effects, and the synthetic data
//! generator used by the desk-scale experiments.
//!
//! Random generation uses `ChaCha8Rng` (a counter-based 64-bit stream cipher
//! generator) seeded from a `u64`, so datasets are reproducible across runs
//! and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Grid};
use crate::effects::{CurveMeta, EffectKind, ExplanationCurve};
use crate::error::{Error, Result};
use crate::model::{sigmoid, Activation, Layer, MlpModel, Predictor};

/// `f(x) = 1 if x0 * x1 > 0 else 0`; extra columns are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XorModel {
    dim: usize,
}

impl XorModel {
    /// `dim` must be at least 2.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "XOR needs two inputs");
        XorModel { dim }
    }
}

impl Predictor for XorModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> f64 {
        if x[0] * x[1] > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn output_range(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
}

/// `w . x + b`, optionally passed through a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sigmoid_output: bool,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        LinearModel {
            weights,
            bias,
            sigmoid_output: false,
        }
    }

    pub fn with_sigmoid(mut self) -> Self {
        self.sigmoid_output = true;
        self
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Same function as a one-layer MLP.
    pub fn to_mlp(&self) -> MlpModel {
        let act = if self.sigmoid_output {
            Activation::Sigmoid
        } else {
            Activation::Identity
        };
        let layer = Layer::new(vec![self.weights.clone()], vec![self.bias], act)
            .expect("finite linear model");
        MlpModel::new(vec![layer]).expect("single output")
    }
}

impl Predictor for LinearModel {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let z = self.linear(x);
        if self.sigmoid_output {
            sigmoid(z)
        } else {
            z
        }
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let scale = if self.sigmoid_output {
            let s = sigmoid(self.linear(x));
            s * (1.0 - s)
        } else {
            1.0
        };
        Some(self.weights.iter().map(|w| w * scale).collect())
    }

    fn partial(&self, x: &[f64], feature: usize) -> Option<f64> {
        if self.sigmoid_output {
            let s = sigmoid(self.linear(x));
            Some(self.weights[feature] * s * (1.0 - s))
        } else {
            Some(self.weights[feature])
        }
    }

    fn output_range(&self) -> Option<(f64, f64)> {
        self.sigmoid_output.then_some((0.0, 1.0))
    }
}

/// Constant prediction over `dim` inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
    dim: usize,
}

impl ConstantModel {
    pub fn new(value: f64, dim: usize) -> Self {
        ConstantModel { value, dim }
    }
}

impl Predictor for ConstantModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, _x: &[f64]) -> f64 {
        self.value
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn input_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }
}

/// PD of the XOR model on `x1` when `X2 ~ U[a, b]` with `a <= 0 <= b`.
///
/// For `x1 <= 0` this returns `P(X2 < 0) = -a / (b - a)`; the probability is
/// sometimes printed as `a / (b - a)`, which is negative for `a < 0`.
pub fn xor_pd_uniform(a: f64, b: f64, x1: f64) -> Result<f64> {
    if !(a <= 0.0 && 0.0 <= b) {
        return Err(Error::param(
            "a, b",
            format!("need a <= 0 <= b, got a = {a}, b = {b}"),
        ));
    }
    if a == b {
        return Err(Error::param("a, b", "degenerate interval"));
    }
    Ok(if x1 > 0.0 { b / (b - a) } else { -a / (b - a) })
}

/// Standard normal CDF via `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// PD of the XOR model on `x1` when `X2 ~ N(mu, sigma^2)`.
pub fn xor_pd_normal(mu: f64, sigma: f64, x1: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    Ok(if x1 > 0.0 {
        normal_cdf(mu / sigma)
    } else {
        normal_cdf(-mu / sigma)
    })
}

fn closed_form_curve(
    kind: EffectKind,
    feature: usize,
    grid: &Grid,
    values: Vec<f64>,
) -> ExplanationCurve {
    ExplanationCurve {
        feature,
        kind,
        grid: grid.clone(),
        meta: CurveMeta {
            skipped: vec![false; values.len()],
            ..CurveMeta::default()
        },
        values,
        centered: false,
    }
}

/// Exact PD of a (non-sigmoid) linear model under the empirical measure of `ds`.
pub fn linear_pd(
    model: &LinearModel,
    ds: &Dataset,
    feature: usize,
    grid: &Grid,
) -> Result<ExplanationCurve> {
    if model.sigmoid_output {
        return Err(Error::param(
            "model",
            "closed form needs an identity output",
        ));
    }
    if model.weights.len() != ds.p() {
        return Err(Error::DimensionMismatch {
            expected: model.weights.len(),
            got: ds.p(),
        });
    }
    ds.check_feature(feature)?;
    let offset: f64 = (0..ds.p())
        .filter(|&j| j != feature)
        .map(|j| model.weights[j] * ds.column(j).iter().sum::<f64>() / ds.n() as f64)
        .sum();
    let ws = model.weights[feature];
    let values = grid
        .points()
        .iter()
        .map(|z| ws * z + model.bias + offset)
        .collect();
    Ok(closed_form_curve(EffectKind::Pd, feature, grid, values))
}

/// Exact uncentered ALE of a linear model: `w_s (z - x_min)`.
pub fn linear_ale_uncentered(
    model: &LinearModel,
    feature: usize,
    x_min: f64,
    grid: &Grid,
) -> Result<ExplanationCurve> {
    if model.sigmoid_output {
        return Err(Error::param(
            "model",
            "closed form needs an identity output",
        ));
    }
    let ws = *model.weights.get(feature).ok_or(Error::FeatureOutOfRange {
        index: feature,
        p: model.weights.len(),
    })?;
    let values = grid.points().iter().map(|z| ws * (z - x_min)).collect();
    Ok(closed_form_curve(EffectKind::Ale, feature, grid, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// `1[sum_j w_j x_j > 0]` with `w_j = (-1)^j / (j + 1)`.
    Linear,
    /// `1[x0 * x1 > 0]`.
    Xor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub p: usize,
    pub correlation: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 5000,
            p: 20,
            correlation: 0.0,
            label_rule: LabelRule::Linear,
            seed: 0,
        }
    }
}

pub fn linear_rule_weights(p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (j + 1) as f64)
        .collect()
}

/// Standard-normal features with equal pairwise correlation.
///
/// Each column is `(e_j + c * sum_k e_k) / sqrt(1 + t)` with `t = rho / (1 - rho)`
/// and `c` solving `p c^2 + 2c = t`; the shared sum is the single factor.
/// Feasible exactly when the equicorrelation matrix is positive definite,
/// i.e. `-1 / (p - 1) < rho < 1`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let SyntheticConfig {
        n,
        p,
        correlation: rho,
        label_rule,
        seed,
    } = *cfg;
    if n < 2 || p < 2 {
        return Err(Error::param("n, p", "need n >= 2 and p >= 2"));
    }
    if !(rho < 1.0 && rho > -1.0 / (p as f64 - 1.0)) {
        return Err(Error::param(
            "correlation",
            format!("{rho} makes the covariance non-positive-definite for p = {p}"),
        ));
    }
    let t = rho / (1.0 - rho);
    let c = ((1.0 + p as f64 * t).sqrt() - 1.0) / p as f64;
    let scale = 1.0 / (1.0 + t).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * p);
    let mut e = vec![0.0; p];
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let factor: f64 = e.iter().sum();
        values.extend(e.iter().map(|v| (v + c * factor) * scale));
    }
    let weights = linear_rule_weights(p);
    let labels = values
        .chunks_exact(p)
        .map(|x| {
            let hit = match label_rule {
                LabelRule::Linear => x.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() > 0.0,
                LabelRule::Xor => x[0] * x[1] > 0.0,
            };
            f64::from(u8::from(hit))
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Ok(Dataset::from_flat(values, n, p, names)?
        .with_labels(labels)?
        .with_label_name("label"))
}

/// Distribution of the second XOR input in the demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XorDistribution {
    /// `U[a, b]`; parameters `(a, b)`.
    Uniform,
    /// `N(mu, sigma^2)`; parameters `(mu, sigma)`.
    Normal,
}

impl XorDistribution {
    pub fn name(self) -> &'static str {
        match self {
            XorDistribution::Uniform => "uniform",
            XorDistribution::Normal => "normal",
        }
    }

    /// Default 20 x 20 parameter grid: `a` in `[-1, 0]`, `b` in `[0.05, 1]`
    /// for the uniform case; `mu` in `[-2, 2]`, `sigma` in `[0.25, 2]` for the
    /// normal case.
    pub fn default_grid(self) -> Vec<(f64, f64)> {
        let lin = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / 19.0;
        let (r1, r2) = match self {
            XorDistribution::Uniform => ((-1.0, 0.0), (0.05, 1.0)),
            XorDistribution::Normal => ((-2.0, 2.0), (0.25, 2.0)),
        };
        (0..20)
            .flat_map(|i| (0..20).map(move |j| (lin(r1.0, r1.1, i), lin(r2.0, r2.1, j))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XorDemoRow {
    pub distribution: XorDistribution,
    pub param1: f64,
    pub param2: f64,
    pub x1: f64,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub abs_error: f64,
}

/// Closed-form PD of the XOR model next to a Monte-Carlo PD estimate from
/// `n` draws, for every parameter pair and for `x1 = 1` and `x1 = -1`.
pub fn xor_demo(
    dist: XorDistribution,
    params: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<Vec<XorDemoRow>> {
    if n == 0 {
        return Err(Error::param("n", "must be positive"));
    }
    let rows = crate::par::map_range(params.len(), |k| -> Result<Vec<XorDemoRow>> {
        let (p1, p2) = params[k];
        let mut rng = ChaCha8Rng::seed_from_u64(crate::par::derive_seed(seed, &[k as u64]));
        let x2: Vec<f64> = match dist {
            XorDistribution::Uniform => {
                xor_pd_uniform(p1, p2, 1.0)?;
                (0..n).map(|_| rng.random_range(p1..=p2)).collect()
            }
            XorDistribution::Normal => {
                let normal = rand_distr::Normal::new(p1, p2)
                    .map_err(|e| Error::param("sigma", e.to_string()))?;
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        let values = x2.iter().flat_map(|&v| [0.0, v]).collect();
        let ds = Dataset::from_flat(values, n, 2, vec!["x1".into(), "x2".into()])?;
        [1.0, -1.0]
            .iter()
            .map(|&x1| {
                let analytic = match dist {
                    XorDistribution::Uniform => xor_pd_uniform(p1, p2, x1)?,
                    XorDistribution::Normal => xor_pd_normal(p1, p2, x1)?,
                };
                let monte_carlo = crate::effects::pd_at(&XorModel::new(2), &ds, 0, x1);
                Ok(XorDemoRow {
                    distribution: dist,
                    param1: p1,
                    param2: p2,
                    x1,
                    analytic,
                    monte_carlo,
                    abs_error: (analytic - monte_carlo).abs(),
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(2 * params.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradient;

    #[test]
    fn xor_uniform_cases() {
        assert_eq!(xor_pd_uniform(-1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(xor_pd_uniform(0.0, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(xor_pd_uniform(-3.0, 1.0, -1.0).unwrap(), 0.75);
        assert!(xor_pd_uniform(0.0, 0.0, 1.0).is_err());
        assert!(xor_pd_uniform(0.5, 1.0, 1.0).is_err());
        let (a, b) = (-0.3, 1.7);
        let sum = xor_pd_uniform(a, b, 1.0).unwrap() + xor_pd_uniform(a, b, -1.0).unwrap();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn xor_normal_cases() {
        assert_eq!(xor_pd_normal(0.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(xor_pd_normal(0.0, 3.0, -1.0).unwrap(), 0.5);
        assert!((xor_pd_normal(1.0, 1.0, 1.0).unwrap() - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!(xor_pd_normal(40.0, 1.0, 1.0).unwrap() > 1.0 - 1e-15);
        assert!(xor_pd_normal(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        // tabulated values of the standard normal CDF
        for (x, p) in [
            (0.0, 0.5),
            (-1.0, 0.158_655_253_931_457_05),
            (1.96, 0.975_002_104_851_780_1),
            (-3.0, 0.001_349_898_031_630_094_6),
        ] {
            assert!((normal_cdf(x) - p).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn linear_model_gradients() {
        let m = LinearModel::new(vec![2.0, -1.0], 0.5);
        assert_eq!(gradient(&m, &[9.0, 9.0], 0).unwrap(), 2.0);
        let mlp = m.to_mlp();
        assert_eq!(mlp.predict(&[1.0, 3.0]), m.predict(&[1.0, 3.0]));
    }

    #[test]
    fn flat_pd_when_weight_is_zero() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let m = LinearModel::new(vec![0.0, 2.0], 1.0);
        let g = Grid::new(vec![0.0, 0.5, 1.0], crate::data::GridKind::Equidistant).unwrap();
        let c = linear_pd(&m, &ds, 0, &g).unwrap();
        assert_eq!(c.values, vec![5.0; 3]);
    }

    #[test]
    fn xor_demo_tracks_closed_form() {
        let params = [(-1.0, 1.0), (-3.0, 1.0), (0.0, 0.5)];
        let rows = xor_demo(XorDistribution::Uniform, &params, 20_000, 4).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.abs_error <= 3.0 / (20_000f64).sqrt(), "{r:?}");
        }
        assert_eq!(
            rows,
            xor_demo(XorDistribution::Uniform, &params, 20_000, 4).unwrap()
        );
        let grid = XorDistribution::Normal.default_grid();
        assert_eq!(grid.len(), 400);
        assert_eq!(grid[0], (-2.0, 0.25));
        assert_eq!(grid[399], (2.0, 2.0));
        assert!(xor_demo(XorDistribution::Normal, &[(0.0, -1.0)], 10, 0).is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        let cfg = SyntheticConfig {
            n: 100,
            p: 3,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let a = gen_synthetic(&cfg).unwrap();
        assert_eq!(a, gen_synthetic(&cfg).unwrap());
        let b = gen_synthetic(&SyntheticConfig {
            seed: 8,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a, b);
    }

    fn sample_corr(ds: &Dataset, a: usize, b: usize) -> f64 {
        let (x, y) = (ds.column(a), ds.column(b));
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x
            .iter()
            .zip(&y)
            .map(|(u, v)| (u - mx) * (v - my))
            .sum::<f64>()
            / n;
        cov / (ds.std_dev(a) * ds.std_dev(b))
    }

    #[test]
    fn synthetic_correlation() {
        let n = 20_000;
        for rho in [0.0, 0.5, -0.2] {
            let ds = gen_synthetic(&SyntheticConfig {
                n,
                p: 4,
                correlation: rho,
                label_rule: LabelRule::Xor,
                seed: 3,
            })
            .unwrap();
            for (a, b) in [(0, 1), (1, 3), (0, 2)] {
                let r = sample_corr(&ds, a, b);
                assert!((r - rho).abs() <= 3.0 / (n as f64).sqrt(), "rho {rho}: {r}");
            }
            assert!((ds.std_dev(2) - 1.0).abs() < 0.03);
        }
        let bad = SyntheticConfig {
            p: 4,
            correlation: -0.5,
            ..SyntheticConfig::default()
        };
        assert!(gen_synthetic(&bad).is_err());
        assert!(gen_synthetic(&SyntheticConfig {
            correlation: 1.0,
            ..SyntheticConfig::default()
        })
        .is_err());
    }
}
