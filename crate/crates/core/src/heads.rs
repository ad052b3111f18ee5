//! Small feed-forward regression heads trained from scratch.
//!
//! The same MLP substrate backs the gripper-aperture head (sigmoid output in
//! `[0, 1]`) and the hand-to-dexterous-hand retargeting head (linear output
//! clamped to joint limits).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = HeadError> = std::result::Result<T, E>;

/// Per-frame vector: visual features or hand-state parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVector {
    pub frame: usize,
    pub values: Vec<f64>,
}

pub type FeatureVector = FrameVector;
pub type HandState = FrameVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquash {
    #[default]
    None,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_squash: OutputSquash,
}

impl MlpSpec {
    /// `[input, 256, 64, 1]`, relu hidden layers, sigmoid output.
    pub fn gripper(input_dim: usize) -> Self {
        Self { layer_widths: vec![input_dim, 256, 64, 1], activation: Activation::Relu, output_squash: OutputSquash::Sigmoid }
    }

    /// `[hand_dim, 256, 64, joints]`, relu hidden layers, linear output.
    pub fn retarget(hand_dim: usize, joints: usize) -> Self {
        Self { layer_widths: vec![hand_dim, 256, 64, joints], activation: Activation::Relu, output_squash: OutputSquash::None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(HeadError::InvalidSpec("need at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(HeadError::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Gradients laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(mlp: &Mlp) -> Self {
        Self { layers: mlp.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    fn add_scaled(&mut self, other: &Gradients, f: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += f * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += f * y);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

impl Mlp {
    /// Seeded initialization: He-uniform for relu, Glorot-uniform for tanh, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match spec.activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                Dense { inputs: fan_in, outputs: fan_out, weights, bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        if layers.len() + 1 != spec.layer_widths.len() {
            return Err(HeadError::InvalidWeights(format!(
                "{} layers for {} widths",
                layers.len(),
                spec.layer_widths.len()
            )));
        }
        for (i, (l, w)) in layers.iter().zip(spec.layer_widths.windows(2)).enumerate() {
            if l.inputs != w[0] || l.outputs != w[1] || l.weights.len() != w[0] * w[1] || l.bias.len() != w[1] {
                return Err(HeadError::InvalidWeights(format!("layer {i} does not match {}x{}", w[1], w[0])));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(HeadError::InvalidWeights(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(HeadError::DimensionMismatch { expected: self.spec.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Returns every layer's activation, input first.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(acts.last().unwrap());
            let a = if i < last {
                match self.spec.activation {
                    Activation::Relu => z.into_iter().map(|v| v.max(0.0)).collect(),
                    Activation::Tanh => z.into_iter().map(f64::tanh).collect(),
                }
            } else {
                match self.spec.output_squash {
                    OutputSquash::None => z,
                    OutputSquash::Sigmoid => z.into_iter().map(sigmoid).collect(),
                }
            };
            acts.push(a);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).pop().unwrap_or_default())
    }

    /// Mean squared error over the output dimensions for one sample.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> Result<f64> {
        let y = self.forward(x)?;
        if target.len() != y.len() {
            return Err(HeadError::DimensionMismatch { expected: y.len(), got: target.len() });
        }
        Ok(y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
    }

    /// Loss and analytic gradients for one sample (backpropagation).
    pub fn backward(&self, x: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        if target.len() != self.spec.output_dim() {
            return Err(HeadError::DimensionMismatch { expected: self.spec.output_dim(), got: target.len() });
        }
        let acts = self.trace(x);
        let out = acts.last().unwrap();
        let m = out.len() as f64;
        let loss = out.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m;

        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(a, t)| {
                let d = 2.0 * (a - t) / m;
                match self.spec.output_squash {
                    OutputSquash::None => d,
                    OutputSquash::Sigmoid => d * a * (1.0 - a),
                }
            })
            .collect();

        let mut grads = Gradients::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] = *d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, a)| *w = d * a);
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= match self.spec.activation {
                    Activation::Relu => {
                        if *a > 0.0 { 1.0 } else { 0.0 }
                    }
                    Activation::Tanh => 1.0 - a * a,
                };
            }
            delta = prev;
        }
        Ok((loss, grads))
    }

    fn apply_update(&mut self, step: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&step.layers) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= lr * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
        }
    }

    fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Mean loss over a dataset.
    pub fn dataset_loss(&self, dataset: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(HeadError::EmptyDataset);
        }
        let mut total = 0.0;
        for (x, y) in dataset {
            total += self.loss(x, y)?;
        }
        Ok(total / dataset.len() as f64)
    }

    pub fn to_json(&self) -> WeightsFile {
        WeightsFile {
            activation: self.spec.activation,
            output_squash: self.spec.output_squash,
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    weights: l.weights.chunks_exact(l.inputs).map(<[f64]>::to_vec).collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(file: &WeightsFile) -> Result<Self> {
        let mut widths = Vec::new();
        let mut layers = Vec::new();
        for (i, l) in file.layers.iter().enumerate() {
            let outputs = l.weights.len();
            let inputs = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|r| r.len() != inputs) {
                return Err(HeadError::InvalidWeights(format!("layer {i} has ragged rows")));
            }
            if i == 0 {
                widths.push(inputs);
            } else if widths.last() != Some(&inputs) {
                return Err(HeadError::InvalidWeights(format!("layer {i} input width {inputs} breaks the chain")));
            }
            widths.push(outputs);
            layers.push(Dense { inputs, outputs, weights: l.weights.concat(), bias: l.bias.clone() });
        }
        let spec = MlpSpec { layer_widths: widths, activation: file.activation, output_squash: file.output_squash };
        Self::from_layers(spec, layers)
    }
}

/// On-disk weights: layer list of row-major matrices plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub activation: Activation,
    pub output_squash: OutputSquash,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    #[serde(default)]
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 2000, batch_size: 8, seed: 0, momentum: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Mean dataset loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_dataset(spec: &MlpSpec, dataset: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
    if dataset.is_empty() {
        return Err(HeadError::EmptyDataset);
    }
    for (x, y) in dataset {
        if x.len() != spec.input_dim() {
            return Err(HeadError::DimensionMismatch { expected: spec.input_dim(), got: x.len() });
        }
        if y.len() != spec.output_dim() {
            return Err(HeadError::DimensionMismatch { expected: spec.output_dim(), got: y.len() });
        }
    }
    Ok(())
}

/// Initializes from `cfg.seed` and trains with mini-batch SGD on MSE.
pub fn train(spec: MlpSpec, dataset: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Mlp::init(spec, cfg.seed)?;
    train_from(model, dataset, cfg)
}

/// Continues training an existing model. Bit-reproducible for a given seed.
pub fn train_from(mut model: Mlp, dataset: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_dataset(&model.spec, dataset)?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(HeadError::InvalidConfig("epochs and batch_size must be positive".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(HeadError::InvalidConfig("learning rate must be finite and >= 0".into()));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(HeadError::InvalidConfig("momentum must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut velocity = Gradients::zeros_like(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model);
            for &i in batch {
                let (_, g) = model.backward(&dataset[i].0, &dataset[i].1)?;
                acc.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            if cfg.momentum > 0.0 {
                for l in velocity.layers.iter_mut() {
                    l.weights.iter_mut().for_each(|v| *v *= cfg.momentum);
                    l.bias.iter_mut().for_each(|v| *v *= cfg.momentum);
                }
                velocity.add_scaled(&acc, 1.0);
                model.apply_update(&velocity, cfg.learning_rate);
            } else {
                model.apply_update(&acc, cfg.learning_rate);
            }
        }
        history.push(model.dataset_loss(dataset)?);
    }
    Ok(TrainOutcome { model, loss_history: history })
}

/// Finite-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Gradients with magnitude below this are compared in absolute terms.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Worst relative disagreement between backprop and central differences.
///
/// Per parameter: `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(model: &Mlp, input: &[f64], target: &[f64]) -> Result<f64> {
    let (_, grads) = model.backward(input, target)?;
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = orig + GRADIENT_CHECK_STEP;
        let up = probe.loss(input, target)?;
        *probe.parameter_mut(i) = orig - GRADIENT_CHECK_STEP;
        let down = probe.loss(input, target)?;
        *probe.parameter_mut(i) = orig;
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let scale = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// One output vector per frame, in input order.
pub fn predict_sequence(model: &Mlp, features: &[FrameVector]) -> Result<Vec<Vec<f64>>> {
    features.iter().map(|f| model.forward(&f.values)).collect()
}

/// Concatenates each frame with its neighbours within `radius` (edge frames repeat).
pub fn with_temporal_context(features: &[FrameVector], radius: usize) -> Vec<FrameVector> {
    let n = features.len();
    (0..n)
        .map(|i| {
            let mut values = Vec::new();
            for off in 0..=2 * radius {
                let j = (i + off).saturating_sub(radius).min(n - 1);
                values.extend_from_slice(&features[j].values);
            }
            FrameVector { frame: features[i].frame, values }
        })
        .collect()
}

/// Maps a continuous aperture to an open/close command.
pub fn binarize(aperture: f64, threshold: f64) -> f64 {
    if aperture >= threshold { 1.0 } else { 0.0 }
}

/// Gripper aperture head: one scalar in `[0, 1]` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperHead {
    pub model: Mlp,
    pub threshold: Option<f64>,
}

impl GripperHead {
    pub fn new(model: Mlp) -> Result<Self> {
        if model.spec().output_dim() != 1 || model.spec().output_squash != OutputSquash::Sigmoid {
            return Err(HeadError::InvalidSpec("gripper head needs a single sigmoid output".into()));
        }
        Ok(Self { model, threshold: None })
    }

    pub fn predict(&self, features: &[FeatureVector]) -> Result<Vec<f64>> {
        Ok(predict_sequence(&self.model, features)?
            .into_iter()
            .map(|v| {
                let a = v[0];
                self.threshold.map_or(a, |t| binarize(a, t))
            })
            .collect())
    }
}

/// Retargeting head from hand states to joint commands with per-joint limits.
#[derive(Debug, Clone, PartialEq)]
pub struct RetargetHead {
    pub model: Mlp,
    pub joint_limits: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetOutput {
    pub commands: Vec<Vec<f64>>,
    /// Number of joint values pulled back inside their limits.
    pub clamp_events: usize,
}

impl RetargetHead {
    pub fn new(model: Mlp, joint_limits: Vec<(f64, f64)>) -> Result<Self> {
        if joint_limits.len() != model.spec().output_dim() {
            return Err(HeadError::DimensionMismatch { expected: model.spec().output_dim(), got: joint_limits.len() });
        }
        if joint_limits.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(HeadError::InvalidSpec("joint limits need lo <= hi".into()));
        }
        Ok(Self { model, joint_limits })
    }

    pub fn predict(&self, hands: &[HandState]) -> Result<RetargetOutput> {
        let mut clamp_events = 0;
        let mut commands = predict_sequence(&self.model, hands)?;
        for cmd in commands.iter_mut() {
            for (v, (lo, hi)) in cmd.iter_mut().zip(&self.joint_limits) {
                let c = v.clamp(*lo, *hi);
                if c != *v {
                    clamp_events += 1;
                    *v = c;
                }
            }
        }
        Ok(RetargetOutput { commands, clamp_events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(inputs: usize, outputs: usize, weights: &[f64], bias: &[f64]) -> Dense {
        Dense { inputs, outputs, weights: weights.to_vec(), bias: bias.to_vec() }
    }

    #[test]
    fn zero_weights_sigmoid_is_half() {
        let m = Mlp::zeros(MlpSpec::gripper(5)).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec { layer_widths: vec![3, 3], activation: Activation::Relu, output_squash: OutputSquash::None };
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = Mlp::from_layers(spec, vec![dense(3, 3, &eye, &[0.0; 3])]).unwrap();
        assert_eq!(m.forward(&[0.3, -7.0, 2.5]).unwrap(), vec![0.3, -7.0, 2.5]);
    }

    #[test]
    fn hand_computed_relu_forward() {
        // hidden = relu([[1,2],[3,-1]]·(1,-1) + (0.5,0)) = relu(-0.5, 4) = (0, 4)
        // out = [2, -0.5]·(0, 4) + 1 = -1
        let spec = MlpSpec { layer_widths: vec![2, 2, 1], activation: Activation::Relu, output_squash: OutputSquash::None };
        let m = Mlp::from_layers(
            spec,
            vec![dense(2, 2, &[1.0, 2.0, 3.0, -1.0], &[0.5, 0.0]), dense(2, 1, &[2.0, -0.5], &[1.0])],
        )
        .unwrap();
        assert_eq!(m.forward(&[1.0, -1.0]).unwrap(), vec![-1.0]);
        assert_eq!(m.forward(&[1.0]), Err(HeadError::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn gradient_check_linear_quadratic() {
        let spec = MlpSpec { layer_widths: vec![4, 3], activation: Activation::Relu, output_squash: OutputSquash::None };
        let m = Mlp::init(spec, 5).unwrap();
        let err = gradient_check(&m, &[0.3, -0.2, 0.9, 1.4], &[0.1, 0.5, -0.3]).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn gradient_check_relu_and_tanh() {
        for activation in [Activation::Relu, Activation::Tanh] {
            for squash in [OutputSquash::None, OutputSquash::Sigmoid] {
                let spec = MlpSpec { layer_widths: vec![6, 16, 8, 2], activation, output_squash: squash };
                let m = Mlp::init(spec, 9).unwrap();
                let err = gradient_check(&m, &[0.5, -0.3, 0.8, 0.1, -0.9, 0.4], &[0.2, 0.7]).unwrap();
                assert!(err < 1e-4, "{activation:?}/{squash:?}: {err}");
            }
        }
    }

    #[test]
    fn zero_everything_gives_zero_weight_gradients() {
        let spec = MlpSpec { layer_widths: vec![3, 4, 1], activation: Activation::Relu, output_squash: OutputSquash::Sigmoid };
        let m = Mlp::zeros(spec).unwrap();
        let (_, g) = m.backward(&[0.0; 3], &[0.0]).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().all(|w| *w == 0.0)));
        let linear = MlpSpec { layer_widths: vec![3, 4, 1], activation: Activation::Relu, output_squash: OutputSquash::None };
        let (_, g) = Mlp::zeros(linear).unwrap().backward(&[0.0; 3], &[0.0]).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    fn toy_dataset() -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..8)
            .map(|i| {
                let a = i as f64 / 7.0;
                let x = (0..6).map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin() + a).collect();
                (x, vec![a])
            })
            .collect()
    }

    #[test]
    fn overfits_eight_samples() {
        let data = toy_dataset();
        let out = train(MlpSpec::gripper(6), &data, &TrainConfig::default()).unwrap();
        assert_eq!(out.loss_history.len(), 2000);
        assert!(out.final_loss() < 1e-3, "{}", out.final_loss());
        let again = train(MlpSpec::gripper(6), &data, &TrainConfig::default()).unwrap();
        assert_eq!(out.loss_history, again.loss_history);
    }

    #[test]
    fn constant_target_and_zero_rate() {
        let data: Vec<_> = toy_dataset().into_iter().map(|(x, _)| (x, vec![0.5])).collect();
        let cfg = TrainConfig { epochs: 300, ..TrainConfig::default() };
        let out = train(MlpSpec::gripper(6), &data, &cfg).unwrap();
        assert!(out.final_loss() < 1e-4, "{}", out.final_loss());
        assert!(out.final_loss() < out.loss_history[0]);

        let frozen = TrainConfig { learning_rate: 0.0, epochs: 20, ..TrainConfig::default() };
        let out = train(MlpSpec::gripper(6), &toy_dataset(), &frozen).unwrap();
        assert!(out.loss_history.iter().all(|l| *l == out.loss_history[0]));
    }

    #[test]
    fn training_errors() {
        assert_eq!(train(MlpSpec::gripper(6), &[], &TrainConfig::default()).unwrap_err(), HeadError::EmptyDataset);
        let bad = vec![(vec![1.0; 5], vec![0.5])];
        assert!(matches!(train(MlpSpec::gripper(6), &bad, &TrainConfig::default()), Err(HeadError::DimensionMismatch { .. })));
    }

    #[test]
    fn momentum_trains_too() {
        let cfg = TrainConfig { momentum: 0.9, learning_rate: 0.01, epochs: 500, ..TrainConfig::default() };
        let out = train(MlpSpec::gripper(6), &toy_dataset(), &cfg).unwrap();
        assert!(out.final_loss() < out.loss_history[0]);
    }

    #[test]
    fn weights_json_roundtrip() {
        let m = Mlp::init(MlpSpec { layer_widths: vec![3, 5, 2], activation: Activation::Tanh, output_squash: OutputSquash::Sigmoid }, 4).unwrap();
        let text = serde_json::to_string(&m.to_json()).unwrap();
        let back = Mlp::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sequences_and_context() {
        let m = Mlp::init(MlpSpec::gripper(2), 1).unwrap();
        assert!(predict_sequence(&m, &[]).unwrap().is_empty());
        let same: Vec<FrameVector> = (0..4).map(|frame| FrameVector { frame, values: vec![0.2, 0.4] }).collect();
        let out = predict_sequence(&m, &same).unwrap();
        assert!(out.windows(2).all(|w| w[0] == w[1]));
        let ctx = with_temporal_context(&same, 1);
        assert_eq!(ctx[0].values.len(), 6);
        let seq: Vec<FrameVector> = (0..3).map(|frame| FrameVector { frame, values: vec![frame as f64] }).collect();
        let ctx = with_temporal_context(&seq, 1);
        assert_eq!(ctx[0].values, vec![0.0, 0.0, 1.0]);
        assert_eq!(ctx[2].values, vec![1.0, 2.0, 2.0]);
        assert_eq!(binarize(0.5, 0.5), 1.0);
        assert_eq!(binarize(0.49, 0.5), 0.0);
    }

    #[test]
    fn retarget_clamps_and_counts() {
        let spec = MlpSpec { layer_widths: vec![2, 2], activation: Activation::Relu, output_squash: OutputSquash::None };
        let m = Mlp::from_layers(spec, vec![dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0])]).unwrap();
        let head = RetargetHead::new(m, vec![(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let out = head
            .predict(&[FrameVector { frame: 0, values: vec![2.0, 0.5] }, FrameVector { frame: 1, values: vec![0.5, -3.0] }])
            .unwrap();
        assert_eq!(out.commands, vec![vec![1.0, 0.5], vec![0.5, -1.0]]);
        assert_eq!(out.clamp_events, 2);
    }
}
