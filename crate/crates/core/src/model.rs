//! Predictors and the built-in multilayer perceptron.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;

/// A scalar prediction function over `input_dim()` features.
///
/// `predict` and `input_gradient` assume `x.len() == input_dim()`; use the
/// free functions [`predict`] and [`gradient`] for checked calls.
pub trait Predictor: Send + Sync {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> f64;

    fn is_differentiable(&self) -> bool {
        false
    }

    /// Full input gradient, `None` when the predictor is not differentiable.
    fn input_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn partial(&self, x: &[f64], feature: usize) -> Option<f64> {
        self.input_gradient(x).map(|g| g[feature])
    }

    /// Known analytic output range.
    fn output_range(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }
    fn is_differentiable(&self) -> bool {
        (**self).is_differentiable()
    }
    fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).input_gradient(x)
    }
    fn partial(&self, x: &[f64], feature: usize) -> Option<f64> {
        (**self).partial(x, feature)
    }
    fn output_range(&self) -> Option<(f64, f64)> {
        (**self).output_range()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }
    fn is_differentiable(&self) -> bool {
        (**self).is_differentiable()
    }
    fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).input_gradient(x)
    }
    fn partial(&self, x: &[f64], feature: usize) -> Option<f64> {
        (**self).partial(x, feature)
    }
    fn output_range(&self) -> Option<(f64, f64)> {
        (**self).output_range()
    }
}

pub(crate) fn check_input<M: Predictor + ?Sized>(m: &M, p: usize) -> Result<()> {
    if m.input_dim() == p {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: m.input_dim(),
            got: p,
        })
    }
}

pub fn predict<M: Predictor + ?Sized>(m: &M, x: &[f64]) -> Result<f64> {
    check_input(m, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("x", "input must be finite"));
    }
    Ok(m.predict(x))
}

pub fn gradient<M: Predictor + ?Sized>(m: &M, x: &[f64], feature: usize) -> Result<f64> {
    check_input(m, x.len())?;
    if feature >= x.len() {
        return Err(Error::FeatureOutOfRange {
            index: feature,
            p: x.len(),
        });
    }
    m.partial(x, feature).ok_or(Error::NotDifferentiable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given pre-activation `z` and output `a`. ReLU uses 0 at 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Logistic function kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Dense affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    inputs: usize,
    outputs: usize,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    /// `weights` is `out x in`, one inner vector per output unit.
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        let inputs = weights.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 {
            return Err(Error::param("weights", "layer must be at least 1x1"));
        }
        if weights.iter().any(|r| r.len() != inputs) {
            return Err(Error::param("weights", "ragged weight matrix"));
        }
        if bias.len() != outputs {
            return Err(Error::DimensionMismatch {
                expected: outputs,
                got: bias.len(),
            });
        }
        let weights: Vec<f64> = weights.into_iter().flatten().collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::param("weights", "parameters must be finite"));
        }
        Ok(Layer {
            weights,
            inputs,
            outputs,
            bias,
            activation,
        })
    }

    fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            weights: vec![0.0; inputs * outputs],
            inputs,
            outputs,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Row-major `out x in` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks(self.inputs)
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn pre_activation(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    /// Largest singular value of the weight matrix.
    pub fn spectral_norm(&self) -> f64 {
        if self.inputs == 1 || self.outputs == 1 {
            return self.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        }
        power_iteration(&self.weights, self.outputs, self.inputs, 1e-10)
    }
}

/// Largest singular value of a row-major `rows x cols` matrix via power
/// iteration on `W^T W`.
fn power_iteration(w: &[f64], rows: usize, cols: usize, tol: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 0.5).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut sigma = 0.0;
    let mut u = vec![0.0; rows];
    for _ in 0..100_000 {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= nv);
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let next = norm(&u);
        let mut nv2 = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (c, a) in nv2.iter_mut().enumerate() {
                *a += w[r * cols + c] * ur;
            }
        }
        v = nv2;
        if next == 0.0 || (next - sigma).abs() <= tol * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Feed-forward network with a single scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "model needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Schema {
                    path: format!("layers[{}].weights", k + 1),
                    message: format!(
                        "expects {} inputs but previous layer emits {}",
                        pair[1].inputs, pair[0].outputs
                    ),
                });
            }
        }
        let last = layers.len() - 1;
        if layers[last].outputs != 1 {
            return Err(Error::Schema {
                path: format!("layers[{last}].weights"),
                message: format!(
                    "final layer must have 1 output, has {}",
                    layers[last].outputs
                ),
            });
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Forward pass keeping every pre-activation and activation.
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.pre_activation(acts.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    /// Reverse accumulation from `top_delta`, the sensitivity of the output
    /// pre-activation. Returns the input sensitivity and calls
    /// `on_layer(k, delta_k, a_{k-1})` on the way down for parameter grads.
    fn backward(
        &self,
        zs: &[Vec<f64>],
        acts: &[Vec<f64>],
        top_delta: f64,
        mut on_layer: impl FnMut(usize, &[f64], &[f64]),
    ) -> Vec<f64> {
        let mut delta: Vec<f64> = vec![top_delta];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            on_layer(k, &delta, &acts[k]);
            let mut back = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += w * d;
                }
            }
            if k == 0 {
                return back;
            }
            let prev = &self.layers[k - 1];
            delta = back
                .iter()
                .zip(&zs[k - 1])
                .zip(&acts[k])
                .map(|((b, &z), &a)| b * prev.activation.derivative(z, a))
                .collect();
        }
        unreachable!("model has at least one layer")
    }

    pub fn lipschitz(&self) -> LipschitzEstimate {
        estimate_lipschitz(self)
    }
}

impl Predictor for MlpModel {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.pre_activation(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        a[0]
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (zs, acts) = self.forward_trace(x);
        let last = self.layers.len() - 1;
        let top = self.layers[last]
            .activation
            .derivative(zs[last][0], acts[last + 1][0]);
        Some(self.backward(&zs, &acts, top, |_, _, _| {}))
    }

    fn output_range(&self) -> Option<(f64, f64)> {
        match self.layers.last().map(|l| l.activation) {
            Some(Activation::Sigmoid) => Some((0.0, 1.0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Analytic,
    Empirical,
}

/// Lower and upper bounds on a predictor's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionBound {
    pub lower: f64,
    pub upper: f64,
    pub method: BoundMethod,
}

impl PredictionBound {
    /// The constant `B` with `|f| <= B`.
    pub fn abs_max(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }

    pub fn union(&self, other: &PredictionBound) -> PredictionBound {
        let method =
            if self.method == BoundMethod::Analytic && other.method == BoundMethod::Analytic {
                BoundMethod::Analytic
            } else {
                BoundMethod::Empirical
            };
        PredictionBound {
            lower: self.lower.min(other.lower),
            upper: self.upper.max(other.upper),
            method,
        }
    }
}

/// Number of equidistant values per feature substituted into each row when
/// probing for suprema.
pub const PROBE_LEVELS: usize = 5;

/// Relative widening applied to empirical extrema.
pub const EMPIRICAL_WIDENING: f64 = 0.05;

/// Min and max of `f` over the data rows and every row with one feature
/// replaced by one of [`PROBE_LEVELS`] equidistant domain values.
pub(crate) fn probe_extrema(ds: &Dataset, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> (f64, f64) {
    let levels: Vec<Vec<f64>> = ds
        .domains()
        .iter()
        .map(|d| {
            (0..PROBE_LEVELS)
                .map(|t| d.lo + d.width() * t as f64 / (PROBE_LEVELS - 1) as f64)
                .collect()
        })
        .collect();
    let per_row = par::map_range(ds.n(), |i| {
        let mut x = ds.row(i).to_vec();
        let v = f(&x);
        let (mut lo, mut hi) = (v, v);
        for (j, lv) in levels.iter().enumerate() {
            let orig = x[j];
            for &z in lv {
                x[j] = z;
                let v = f(&x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            x[j] = orig;
        }
        (lo, hi)
    });
    per_row
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| {
            (a.min(lo), b.max(hi))
        })
}

/// Analytic `(0, 1)` for sigmoid outputs; otherwise the probed prediction
/// range widened by 5% of its width on each side.
pub fn estimate_prediction_bounds<M: Predictor + ?Sized>(
    m: &M,
    ds: &Dataset,
) -> Result<PredictionBound> {
    if let Some((lower, upper)) = m.output_range() {
        return Ok(PredictionBound {
            lower,
            upper,
            method: BoundMethod::Analytic,
        });
    }
    check_input(m, ds.p())?;
    let (lo, hi) = probe_extrema(ds, |x| m.predict(x));
    let pad = EMPIRICAL_WIDENING * (hi - lo);
    Ok(PredictionBound {
        lower: lo - pad,
        upper: hi + pad,
        method: BoundMethod::Empirical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzMethod {
    LayerNormProduct,
    EmpiricalGradientMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub method: LipschitzMethod,
}

/// Upper bound: product of layer spectral norms times activation constants.
pub fn estimate_lipschitz(m: &MlpModel) -> LipschitzEstimate {
    let value = m
        .layers
        .iter()
        .map(|l| l.spectral_norm() * l.activation.lipschitz())
        .product();
    LipschitzEstimate {
        value,
        method: LipschitzMethod::LayerNormProduct,
    }
}

/// Largest gradient norm observed over `points`.
pub fn empirical_lipschitz<'a, M: Predictor + ?Sized>(
    m: &M,
    points: impl IntoIterator<Item = &'a [f64]>,
) -> Result<LipschitzEstimate> {
    let mut value: f64 = 0.0;
    for x in points {
        check_input(m, x.len())?;
        let g = m.input_gradient(x).ok_or(Error::NotDifferentiable)?;
        value = value.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(LipschitzEstimate {
        value,
        method: LipschitzMethod::EmpiricalGradientMax,
    })
}

/// Copy of `m` with layer `layer`'s weights (and biases unless
/// `weights_only`) shifted by i.i.d. `N(0, sigma)` draws from `rng`.
pub fn perturb_layer_with<R: Rng + ?Sized>(
    m: &MlpModel,
    layer: usize,
    sigma: f64,
    weights_only: bool,
    rng: &mut R,
) -> Result<MlpModel> {
    if layer >= m.layers.len() {
        return Err(Error::param(
            "layer",
            format!("index {layer} out of range for {} layers", m.layers.len()),
        ));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", "must be finite and nonnegative"));
    }
    let mut out = m.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
    let l = &mut out.layers[layer];
    for w in &mut l.weights {
        *w += noise.sample(rng);
    }
    if !weights_only {
        for b in &mut l.bias {
            *b += noise.sample(rng);
        }
    }
    Ok(out)
}

/// Seeded variant of [`perturb_layer_with`] that perturbs weights and biases.
pub fn perturb_layer(m: &MlpModel, layer: usize, sigma: f64, seed: u64) -> Result<MlpModel> {
    perturb_layer_with(m, layer, sigma, false, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Empirical `sup |f - f'|` over data rows and probe substitutions. This is a
/// lower estimate of the true supremum over the domain.
pub fn sup_norm_difference<M1, M2>(m: &M1, m2: &M2, ds: &Dataset) -> Result<f64>
where
    M1: Predictor + ?Sized,
    M2: Predictor + ?Sized,
{
    check_input(m, ds.p())?;
    check_input(m2, ds.p())?;
    Ok(probe_extrema(ds, |x| (m.predict(x) - m2.predict(x)).abs()).1)
}

/// Empirical `sup |df/dx_s - df'/dx_s|` over the same probe points.
pub fn sup_norm_gradient_difference<M1, M2>(
    m: &M1,
    m2: &M2,
    ds: &Dataset,
    feature: usize,
) -> Result<f64>
where
    M1: Predictor + ?Sized,
    M2: Predictor + ?Sized,
{
    check_input(m, ds.p())?;
    check_input(m2, ds.p())?;
    ds.check_feature(feature)?;
    if !m.is_differentiable() || !m2.is_differentiable() {
        return Err(Error::NotDifferentiable);
    }
    Ok(probe_extrema(ds, |x| {
        let a = m.partial(x, feature).unwrap_or(f64::NAN);
        let b = m2.partial(x, feature).unwrap_or(f64::NAN);
        (a - b).abs()
    })
    .1)
}

pub(crate) fn binary_labels(ds: &Dataset) -> Result<&[f64]> {
    let labels = ds.labels().ok_or(Error::MissingLabels)?;
    if let Some((row, &value)) = labels
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        return Err(Error::NonBinaryLabel { row, value });
    }
    Ok(labels)
}

/// Fraction of rows where `predict >= threshold` agrees with the label.
pub fn accuracy<M: Predictor + ?Sized>(m: &M, ds: &Dataset, threshold: f64) -> Result<f64> {
    check_input(m, ds.p())?;
    let labels = binary_labels(ds)?;
    let hits = par::map_range(ds.n(), |i| {
        let class = if m.predict(ds.row(i)) >= threshold {
            1.0
        } else {
            0.0
        };
        usize::from(class == labels[i])
    });
    Ok(hits.iter().sum::<usize>() as f64 / ds.n() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; the output layer (1 sigmoid unit) is appended.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![16, 8],
            activation: Activation::Tanh,
            epochs: 500,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    pub accuracy: f64,
    pub final_loss: f64,
}

const TRAIN_CHUNK: usize = 256;

/// Xavier-uniform initialization with zero biases.
pub fn init_mlp(p: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if p == 0 || hidden.contains(&0) {
        return Err(Error::param("layout", "layer widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![p];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k == last {
                Activation::Sigmoid
            } else {
                activation
            };
            let mut layer = Layer::zeros(w[0], w[1], act);
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for v in &mut layer.weights {
                *v = rng.random_range(-a..a);
            }
            layer
        })
        .collect();
    MlpModel::new(layers)
}

/// Full-batch gradient descent on the logistic loss. Deterministic under
/// `cfg.seed` and independent of thread count.
pub fn train_mlp(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let labels = binary_labels(ds)?;
    if !(cfg.learning_rate > 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::param("learning_rate", "must be positive"));
    }
    let mut model = init_mlp(ds.p(), &cfg.hidden, cfg.activation, cfg.seed)?;
    let n = ds.n();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(TRAIN_CHUNK)
        .map(|s| (s, (s + TRAIN_CHUNK).min(n)))
        .collect();
    for _ in 0..cfg.epochs {
        let partials = par::map_slice(&chunks, |&(start, end)| {
            let mut grads: Vec<Layer> = model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs, l.activation))
                .collect();
            for (i, &y) in labels.iter().enumerate().take(end).skip(start) {
                let (zs, acts) = model.forward_trace(ds.row(i));
                // logistic loss through a sigmoid output: dL/dz = a - y
                let out = acts[acts.len() - 1][0];
                model.backward(&zs, &acts, out - y, |k, delta, input| {
                    let g = &mut grads[k];
                    for (o, &d) in delta.iter().enumerate() {
                        g.bias[o] += d;
                        let row = &mut g.weights[o * g.inputs..(o + 1) * g.inputs];
                        for (w, &a) in row.iter_mut().zip(input) {
                            *w += d * a;
                        }
                    }
                });
            }
            grads
        });
        let scale = cfg.learning_rate / n as f64;
        for grads in &partials {
            for (layer, g) in model.layers.iter_mut().zip(grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= scale * gw;
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= scale * gb;
                }
            }
        }
    }
    let losses = par::map_range(n, |i| {
        let q = model.predict(ds.row(i));
        -(labels[i] * q.ln() + (1.0 - labels[i]) * (1.0 - q).ln())
    });
    Ok(TrainReport {
        accuracy: accuracy(&model, ds, 0.5)?,
        final_loss: par::sum(&losses) / n as f64,
        model,
    })
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    layers: Option<Vec<RawLayer>>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    weights: Option<Vec<Vec<f64>>>,
    bias: Option<Vec<f64>>,
    activation: Option<String>,
}

impl MlpModel {
    pub fn to_json(&self) -> String {
        let raw = RawModel {
            layers: Some(
                self.layers
                    .iter()
                    .map(|l| RawLayer {
                        weights: Some(l.weight_rows()),
                        bias: Some(l.bias.clone()),
                        activation: Some(l.activation.name().to_string()),
                    })
                    .collect(),
            ),
        };
        // serde_json emits the shortest representation that parses back to
        // the same bits, so save -> load is exact.
        serde_json::to_string_pretty(&raw).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Schema {
            path: "$".into(),
            message: e.to_string(),
        })?;
        let layers = raw.layers.ok_or_else(|| Error::Schema {
            path: "$.layers".into(),
            message: "missing field".into(),
        })?;
        let mut out = Vec::with_capacity(layers.len());
        for (k, l) in layers.into_iter().enumerate() {
            let missing = |field: &str| Error::Schema {
                path: format!("layers[{k}].{field}"),
                message: "missing field".into(),
            };
            let weights = l.weights.ok_or_else(|| missing("weights"))?;
            let bias = l.bias.ok_or_else(|| missing("bias"))?;
            let name = l.activation.ok_or_else(|| missing("activation"))?;
            let activation = Activation::parse(&name).ok_or_else(|| Error::Schema {
                path: format!("layers[{k}].activation"),
                message: format!("unknown activation {name:?}"),
            })?;
            out.push(
                Layer::new(weights, bias, activation).map_err(|e| Error::Schema {
                    path: format!("layers[{k}]"),
                    message: e.to_string(),
                })?,
            );
        }
        MlpModel::new(out)
    }
}

pub fn save_model(m: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, m.to_json()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    MlpModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn layer(w: Vec<Vec<f64>>, b: Vec<f64>, a: Activation) -> Layer {
        Layer::new(w, b, a).unwrap()
    }

    pub(crate) fn random_mlp(seed: u64, p: usize, widths: &[usize], act: Activation) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![p];
        dims.extend_from_slice(widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let weights = (0..w[1])
                    .map(|_| {
                        (0..w[0])
                            .map(|_| rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                let bias = (0..w[1])
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1)
                    .collect();
                layer(weights, bias, act)
            })
            .collect();
        MlpModel::new(layers).unwrap()
    }

    #[test]
    fn predict_examples() {
        let id = MlpModel::new(vec![layer(
            vec![vec![1.0, 0.0, 0.0]],
            vec![0.0],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(predict(&id, &[3.0, 7.0, -1.0]).unwrap(), 3.0);
        assert!(matches!(
            predict(&id, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));

        let zero = MlpModel::new(vec![layer(
            vec![vec![0.0, 0.0]],
            vec![0.0],
            Activation::Sigmoid,
        )])
        .unwrap();
        assert_eq!(predict(&zero, &[5.0, -2.0]).unwrap(), 0.5);
    }

    #[test]
    fn two_layer_forward_by_hand() {
        // hidden = relu([1 -1; 2 0.5] x + [0, -1]); out = sigmoid([1, -2] h + 0.5)
        let m = MlpModel::new(vec![
            layer(
                vec![vec![1.0, -1.0], vec![2.0, 0.5]],
                vec![0.0, -1.0],
                Activation::Relu,
            ),
            layer(vec![vec![1.0, -2.0]], vec![0.5], Activation::Sigmoid),
        ])
        .unwrap();
        // x = (2, 1): h = relu(1, 3.5) = (1, 3.5); z = 1 - 7 + 0.5 = -5.5
        let expect = 1.0 / (1.0 + 5.5f64.exp());
        assert!((m.predict(&[2.0, 1.0]) - expect).abs() < 1e-15);
        // x = (-1, 0): h = relu(-1, -3) = 0; z = 0.5
        assert!((m.predict(&[-1.0, 0.0]) - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let lin = MlpModel::new(vec![layer(
            vec![vec![2.0, -1.0]],
            vec![0.3],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(gradient(&lin, &[5.0, 1.0], 0).unwrap(), 2.0);
        assert_eq!(gradient(&lin, &[-5.0, 9.0], 1).unwrap(), -1.0);
        let sig =
            MlpModel::new(vec![layer(vec![vec![1.0]], vec![0.0], Activation::Sigmoid)]).unwrap();
        assert_eq!(gradient(&sig, &[0.0], 0).unwrap(), 0.25);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = random_mlp(7, 4, &[6, 5], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = m.input_gradient(&x).unwrap();
            for j in 0..4 {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (m.predict(&xp) - m.predict(&xm)) / (2.0 * h);
                assert!(
                    (g[j] - fd).abs() <= 1e-5 * (1.0 + g[j].abs()),
                    "{} vs {fd}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn relu_gradient_zero_at_kink() {
        let m = MlpModel::new(vec![
            layer(vec![vec![1.0]], vec![0.0], Activation::Relu),
            layer(vec![vec![1.0]], vec![0.0], Activation::Identity),
        ])
        .unwrap();
        assert_eq!(gradient(&m, &[0.0], 0).unwrap(), 0.0);
        assert_eq!(gradient(&m, &[1e-9], 0).unwrap(), 1.0);
    }

    #[test]
    fn lipschitz_examples() {
        let lin = MlpModel::new(vec![layer(
            vec![vec![3.0, 4.0]],
            vec![0.0],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(estimate_lipschitz(&lin).value, 5.0);
        let chain = MlpModel::new(vec![
            layer(vec![vec![2.0]], vec![0.0], Activation::Identity),
            layer(vec![vec![3.0]], vec![0.0], Activation::Identity),
        ])
        .unwrap();
        assert_eq!(estimate_lipschitz(&chain).value, 6.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let l = layer(
            vec![vec![3.0, 0.0], vec![0.0, -7.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        );
        assert!((l.spectral_norm() - 7.0).abs() < 1e-8);
        let z = layer(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        );
        assert_eq!(z.spectral_norm(), 0.0);
    }

    #[test]
    fn lipschitz_dominates_observed_slopes() {
        let m = random_mlp(3, 3, &[8, 4], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let emp = empirical_lipschitz(&m, pts.iter().map(Vec::as_slice)).unwrap();
        assert!(estimate_lipschitz(&m).value >= emp.value);
    }

    #[test]
    fn perturbation_contract() {
        let m = random_mlp(1, 3, &[4], Activation::Relu);
        assert_eq!(perturb_layer(&m, 0, 0.0, 5).unwrap(), m);
        let a = perturb_layer(&m, 1, 0.5, 42).unwrap();
        let b = perturb_layer(&m, 1, 0.5, 42).unwrap();
        let c = perturb_layer(&m, 1, 0.5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.layers()[0], m.layers()[0]);
        assert_ne!(a.layers()[1], m.layers()[1]);
        assert!(perturb_layer(&m, 2, 0.5, 0).is_err());
    }

    #[test]
    fn perturbation_noise_is_centered() {
        let m = MlpModel::new(vec![layer(
            vec![vec![0.0]],
            vec![0.0],
            Activation::Identity,
        )])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 10_000;
        let mean: f64 = (0..reps)
            .map(|_| {
                perturb_layer_with(&m, 0, 0.5, true, &mut rng)
                    .unwrap()
                    .layers()[0]
                    .weights()[0]
            })
            .sum::<f64>()
            / reps as f64;
        assert!(mean.abs() <= 3.0 * 0.5 / 100.0, "mean {mean}");
    }

    #[test]
    fn sup_norms() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, -1.0], vec![2.0, 0.5]]).unwrap();
        let a = MlpModel::new(vec![layer(
            vec![vec![1.0, 2.0]],
            vec![0.0],
            Activation::Identity,
        )])
        .unwrap();
        let b = MlpModel::new(vec![layer(
            vec![vec![1.5, 2.0]],
            vec![-0.25],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(sup_norm_difference(&a, &a, &ds).unwrap(), 0.0);
        let shifted = MlpModel::new(vec![layer(
            vec![vec![1.0, 2.0]],
            vec![0.75],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(sup_norm_difference(&a, &shifted, &ds).unwrap(), 0.75);
        let ab = sup_norm_difference(&a, &b, &ds).unwrap();
        assert_eq!(ab, sup_norm_difference(&b, &a, &ds).unwrap());
        // |0.5 x0 - 0.25| is largest at x0 = 2
        assert!((ab - 0.75).abs() < 1e-15);
        assert_eq!(sup_norm_gradient_difference(&a, &b, &ds, 0).unwrap(), 0.5);
        assert_eq!(sup_norm_gradient_difference(&a, &b, &ds, 1).unwrap(), 0.0);
    }

    #[test]
    fn prediction_bounds() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let sig =
            MlpModel::new(vec![layer(vec![vec![1.0]], vec![0.0], Activation::Sigmoid)]).unwrap();
        let b = estimate_prediction_bounds(&sig, &ds).unwrap();
        assert_eq!(
            (b.lower, b.upper, b.method),
            (0.0, 1.0, BoundMethod::Analytic)
        );
        let lin = MlpModel::new(vec![layer(
            vec![vec![2.0]],
            vec![1.0],
            Activation::Identity,
        )])
        .unwrap();
        let b = estimate_prediction_bounds(&lin, &ds).unwrap();
        // range [1, 5] widened by 0.2 each side
        assert!((b.lower - 0.8).abs() < 1e-12 && (b.upper - 5.2).abs() < 1e-12);
        let c = MlpModel::new(vec![layer(
            vec![vec![0.0]],
            vec![0.3],
            Activation::Identity,
        )])
        .unwrap();
        let b = estimate_prediction_bounds(&c, &ds).unwrap();
        assert_eq!((b.lower, b.upper), (0.3, 0.3));
    }

    #[test]
    fn accuracy_rules() {
        let half =
            MlpModel::new(vec![layer(vec![vec![0.0]], vec![0.0], Activation::Sigmoid)]).unwrap();
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]])
            .unwrap()
            .with_labels(vec![1.0, 1.0, 1.0, 0.0])
            .unwrap();
        // 0.5 >= 0.5 counts as class 1
        assert_eq!(accuracy(&half, &ds, 0.5).unwrap(), 0.75);
        let unlabeled = Dataset::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            accuracy(&half, &unlabeled, 0.5),
            Err(Error::MissingLabels)
        ));
        let bad = unlabeled.with_labels(vec![2.0]).unwrap();
        assert!(matches!(
            accuracy(&half, &bad, 0.5),
            Err(Error::NonBinaryLabel { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap()
            .with_labels(vec![0.0, 1.0])
            .unwrap();
        let cfg = TrainConfig {
            hidden: vec![3],
            epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let r = train_mlp(&ds, &cfg).unwrap();
        assert_eq!(r.model, init_mlp(2, &[3], Activation::Tanh, 4).unwrap());
    }

    #[test]
    fn learns_xor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let labels = rows
            .iter()
            .map(|r| f64::from(u8::from(r[0] * r[1] > 0.0)))
            .collect();
        let ds = Dataset::from_rows(&rows)
            .unwrap()
            .with_labels(labels)
            .unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            activation: Activation::Tanh,
            epochs: 3000,
            learning_rate: 1.0,
            seed: 0,
        };
        let r = train_mlp(&ds, &cfg).unwrap();
        assert!(r.accuracy >= 0.9, "accuracy {}", r.accuracy);
        let again = train_mlp(&ds, &cfg).unwrap();
        assert_eq!(r.model, again.model);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = random_mlp(5, 3, &[4, 2], Activation::Tanh);
        let back = MlpModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let x = [0.1, -0.7, 1.3];
        assert_eq!(back.predict(&x).to_bits(), m.predict(&x).to_bits());
    }

    #[test]
    fn json_schema_errors_name_the_field() {
        let text = r#"{"layers":[{"weights":[[1.0]],"bias":[0.0],"activation":"relu"},
                                 {"weights":[[1.0]],"bias":[0.0]}]}"#;
        match MlpModel::from_json(text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "layers[1].activation"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = r#"{"layers":[{"weights":[[1.0]],"bias":[0.0],"activation":"gelu"}]}"#;
        assert!(matches!(
            MlpModel::from_json(bad),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn hand_written_json_model() {
        let text = r#"{"layers":[{"weights":[[2.0,-1.0]],"bias":[0.5],"activation":"identity"}]}"#;
        let m = MlpModel::from_json(text).unwrap();
        assert_eq!(m.predict(&[1.5, 4.0]), 2.0 * 1.5 - 4.0 + 0.5);
    }
}
