//! Small fully connected networks with hand-written backpropagation.
//!
//! Hidden layers use ReLU. The output head is either a softmax over actions
//! (policies) or a single linear unit (reward models).
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix, row-major by output unit, followed by its bias vector, so the
//! final `(inputs + 1) * outputs` entries are always the last layer.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Softmax,
    Linear,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Head::Softmax),
            "linear" => Ok(Head::Linear),
            other => Err(Error::config(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    /// Input, hidden..., output sizes.
    pub layer_sizes: Vec<usize>,
    pub head: Head,
    pub init_seed: u64,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, head: Head, init_seed: u64) -> Self {
        Self { layer_sizes, head, init_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("a network needs at least an input and an output layer"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        let out = *self.layer_sizes.last().unwrap();
        match self.head {
            Head::Softmax if out < 2 => Err(Error::config("softmax head needs at least two outputs")),
            Head::Linear if out != 1 => {
                Err(Error::config(format!("linear head must have one output, got {out}")))
            }
            _ => Ok(()),
        }
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layer_sizes.windows(2).map(|w| LayerShape { inputs: w[0], outputs: w[1] }).collect()
    }

    /// `49x16x3` style label.
    pub fn label(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        sizes.join("x")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameters (or a gradient) together with their layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    shapes: Vec<LayerShape>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(shapes: Vec<LayerShape>) -> Self {
        let len = shapes.iter().map(LayerShape::len).sum();
        Self { shapes, values: vec![0.0; len] }
    }

    pub fn from_values(shapes: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shapes.iter().map(LayerShape::len).sum();
        if len != values.len() {
            return Err(Error::usage(format!(
                "parameter count {} does not match layer shapes ({len})",
                values.len()
            )));
        }
        Ok(Self { shapes, values })
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        let start: usize = self.shapes[..layer].iter().map(LayerShape::len).sum();
        start..start + self.shapes[layer].len()
    }

    pub fn last_layer_range(&self) -> Range<usize> {
        self.layer_range(self.shapes.len() - 1)
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.shapes != other.shapes {
            return Err(Error::usage("parameter vectors have different layer shapes"));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Copy of the final layer's weights (row-major by output unit) then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerView {
    pub shape: LayerShape,
    pub values: Vec<f64>,
}

impl LastLayerView {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// Which policy gradient to take for an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Gradient of `ln pi(a|s)`.
    #[default]
    LogProb,
    /// Gradient of `pi(a|s)`.
    Prob,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::LogProb => "log",
            ScoreMode::Prob => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(ScoreMode::LogProb),
            "plain" => Ok(ScoreMode::Prob),
            other => Err(Error::config(format!("unknown gradient mode `{other}`"))),
        }
    }
}

/// Intermediate values from one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    /// `layers[0]` is the input, `layers[i]` the post-activation output of layer `i - 1`.
    /// The last entry holds the raw output (logits or scalar) before the head.
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().unwrap()
    }

    /// Input to the final layer.
    pub fn last_hidden(&self) -> &[f64] {
        &self.layers[self.layers.len() - 2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    head: Head,
    params: ParamVector,
}

impl Mlp {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// drawn in parameter order from `spec.init_seed`.
    pub fn new(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let shapes = spec.shapes();
        let mut values = Vec::with_capacity(shapes.iter().map(LayerShape::len).sum());
        for shape in &shapes {
            let bound = 1.0 / (shape.inputs as f64).sqrt();
            for _ in 0..shape.len() {
                values.push(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { head: spec.head, params: ParamVector { shapes, values } })
    }

    pub fn zeros(layer_sizes: &[usize], head: Head) -> Result<Self> {
        let spec = NetSpec::new(layer_sizes.to_vec(), head, 0);
        spec.validate()?;
        Ok(Self { head, params: ParamVector::zeros(spec.shapes()) })
    }

    pub fn from_params(head: Head, params: ParamVector) -> Result<Self> {
        let mut sizes = vec![params.shapes.first().map(|s| s.inputs).unwrap_or(0)];
        for pair in params.shapes.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::usage("consecutive layer shapes do not chain"));
            }
        }
        sizes.extend(params.shapes.iter().map(|s| s.outputs));
        NetSpec::new(sizes, head, 0).validate()?;
        Ok(Self { head, params })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(self.params.shapes.iter().map(|s| s.outputs));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.params.shapes[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.params.shapes.last().unwrap().outputs
    }

    pub fn activations(&self, input: &[f64]) -> Result<Activations> {
        let mut acts = Activations { layers: Vec::new() };
        self.activations_into(input, &mut acts)?;
        Ok(acts)
    }

    /// Like [`Mlp::activations`], reusing the buffers in `acts`.
    pub fn activations_into(&self, input: &[f64], acts: &mut Activations) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::usage(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_size()
            )));
        }
        let n_layers = self.params.shapes.len();
        acts.layers.resize_with(n_layers + 1, Vec::new);
        acts.layers[0].clear();
        acts.layers[0].extend_from_slice(input);
        let mut offset = 0;
        for (l, shape) in self.params.shapes.iter().enumerate() {
            let n_w = shape.inputs * shape.outputs;
            let weights = &self.params.values[offset..offset + n_w];
            let biases = &self.params.values[offset + n_w..offset + shape.len()];
            let (done, rest) = acts.layers.split_at_mut(l + 1);
            let prev = &done[l];
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(biases);
            for (i, &x) in prev.iter().enumerate() {
                // one-hot inputs and ReLU outputs are mostly zero
                if x == 0.0 {
                    continue;
                }
                for (o, z) in out.iter_mut().enumerate() {
                    *z += weights[o * shape.inputs + i] * x;
                }
            }
            if l + 1 < n_layers {
                out.iter_mut().for_each(|z| *z = z.max(0.0));
            }
            offset += shape.len();
        }
        Ok(())
    }

    /// Raw output of the final layer (logits, or the scalar for a linear head).
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(input)?.layers.pop().unwrap())
    }

    pub fn policy_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.require_head(Head::Softmax)?;
        Ok(softmax(&self.output(input)?))
    }

    pub fn scalar_forward(&self, input: &[f64]) -> Result<f64> {
        self.require_head(Head::Linear)?;
        Ok(self.output(input)?[0])
    }

    fn require_head(&self, head: Head) -> Result<()> {
        if self.head != head {
            return Err(Error::usage(format!(
                "operation needs a {} head, network has {}",
                head.as_str(),
                self.head.as_str()
            )));
        }
        Ok(())
    }

    /// Accumulates `scale * d(output_grad . raw_output)/d(params)` into `grad`.
    pub fn backward(
        &self,
        acts: &Activations,
        output_grad: &[f64],
        scale: f64,
        grad: &mut ParamVector,
    ) -> Result<()> {
        if output_grad.len() != self.output_size() {
            return Err(Error::usage("output gradient has the wrong length"));
        }
        if grad.shapes != self.params.shapes {
            return Err(Error::usage("gradient buffer shape does not match the network"));
        }
        let shapes = &self.params.shapes;
        let mut delta: Vec<f64> = output_grad.iter().map(|g| g * scale).collect();
        let mut active: Vec<(usize, f64)> = Vec::new();
        let mut end = self.params.len();
        for l in (0..shapes.len()).rev() {
            let shape = shapes[l];
            let start = end - shape.len();
            let n_w = shape.inputs * shape.outputs;
            let prev = &acts.layers[l];
            active.clear();
            active.extend(prev.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i, *x)));
            {
                let g = &mut grad.values[start..end];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = o * shape.inputs;
                    for &(i, x) in &active {
                        g[row + i] += d * x;
                    }
                    g[n_w + o] += d;
                }
            }
            if l > 0 {
                let w = &self.params.values[start..start + n_w];
                let mut next = vec![0.0; shape.inputs];
                // post-ReLU value is zero exactly when the unit is inactive
                for &(i, _) in &active {
                    next[i] = delta.iter().enumerate().map(|(o, d)| w[o * shape.inputs + i] * d).sum();
                }
                delta = next;
            }
            end = start;
        }
        Ok(())
    }

    /// Derivative of the chosen score with respect to the logits.
    fn score_logit_grad(&self, probs: &[f64], action: usize, mode: ScoreMode) -> Vec<f64> {
        let mut dz: Vec<f64> = probs.iter().map(|p| -p).collect();
        dz[action] += 1.0;
        if mode == ScoreMode::Prob {
            let pa = probs[action];
            dz.iter_mut().for_each(|d| *d *= pa);
        }
        dz
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.output_size() {
            return Err(Error::usage(format!("action {action} outside [0, {})", self.output_size())));
        }
        Ok(())
    }

    /// Gradient of `ln pi(action | input)` (or of `pi` itself) for a softmax policy.
    pub fn grad_log_prob(&self, input: &[f64], action: usize, mode: ScoreMode) -> Result<ParamVector> {
        self.require_head(Head::Softmax)?;
        self.check_action(action)?;
        let acts = self.activations(input)?;
        let probs = softmax(acts.output());
        let dz = self.score_logit_grad(&probs, action, mode);
        let mut grad = ParamVector::zeros(self.params.shapes.clone());
        self.backward(&acts, &dz, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Last-layer block of [`Mlp::grad_log_prob`], computed without the full backward pass.
    pub fn last_layer_score(&self, input: &[f64], action: usize, mode: ScoreMode) -> Result<Vec<f64>> {
        self.require_head(Head::Softmax)?;
        self.check_action(action)?;
        let acts = self.activations(input)?;
        let probs = softmax(acts.output());
        let dz = self.score_logit_grad(&probs, action, mode);
        let hidden = acts.last_hidden();
        let n_in = hidden.len();
        let mut out = vec![0.0; (n_in + 1) * dz.len()];
        for (o, &d) in dz.iter().enumerate() {
            for (i, &h) in hidden.iter().enumerate() {
                out[o * n_in + i] = d * h;
            }
            out[n_in * dz.len() + o] = d;
        }
        Ok(out)
    }

    pub fn sgd_step(&mut self, grad: &ParamVector, step_size: f64, direction: Direction) -> Result<()> {
        let sign = match direction {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        self.params.add_scaled(grad, sign * step_size)
    }

    pub fn last_layer(&self) -> LastLayerView {
        let range = self.params.last_layer_range();
        LastLayerView {
            shape: *self.params.shapes.last().unwrap(),
            values: self.params.values[range].to_vec(),
        }
    }

    pub fn set_last_layer(&mut self, view: &LastLayerView) -> Result<()> {
        if view.shape != *self.params.shapes.last().unwrap() || view.values.len() != view.shape.len() {
            return Err(Error::usage("last-layer view does not match the network"));
        }
        let range = self.params.last_layer_range();
        self.params.values[range].copy_from_slice(&view.values);
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Text snapshot of a network: `#` header lines, then one parameter per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Free-form manifest lines (without the leading `# `).
    pub header: Vec<String>,
    pub net: Mlp,
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("# head={}\n", self.net.head.as_str()));
        for shape in &self.net.params.shapes {
            out.push_str(&format!("# layer={}x{}\n", shape.inputs, shape.outputs));
        }
        for v in &self.net.params.values {
            // Debug formatting is the shortest string that parses back to the same bits
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut header = Vec::new();
        let mut head = None;
        let mut shapes = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(h) = rest.strip_prefix("head=") {
                    head = Some(Head::parse(h).map_err(|e| e.to_string())?);
                } else if let Some(dims) = rest.strip_prefix("layer=") {
                    let (a, b) = dims
                        .split_once('x')
                        .ok_or_else(|| format!("line {}: bad layer header", lineno + 1))?;
                    let parse =
                        |s: &str| s.trim().parse::<usize>().map_err(|e| format!("line {}: {e}", lineno + 1));
                    shapes.push(LayerShape { inputs: parse(a)?, outputs: parse(b)? });
                } else {
                    header.push(rest.to_string());
                }
            } else if !line.trim().is_empty() {
                values.push(line.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", lineno + 1))?);
            }
        }
        let head = head.ok_or("missing `# head=` line")?;
        if shapes.is_empty() {
            return Err("missing `# layer=` lines".into());
        }
        let params = ParamVector::from_values(shapes, values).map_err(|e| e.to_string())?;
        let net = Mlp::from_params(head, params).map_err(|e| e.to_string())?;
        Ok(Self { header, net })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy_spec(seed: u64) -> NetSpec {
        NetSpec::new(vec![49, 16, 3], Head::Softmax, seed)
    }

    #[test]
    fn default_network_shapes() {
        let pol = Mlp::new(&policy_spec(1)).unwrap();
        assert_eq!(pol.params().len(), 50 * 16 + 17 * 3);
        assert_eq!(pol.last_layer().values.len(), 51);
        let beta = Mlp::new(&NetSpec::new(vec![49, 20, 1], Head::Linear, 1)).unwrap();
        assert_eq!(beta.last_layer().values.len(), 21);
    }

    #[test]
    fn invalid_specs() {
        assert!(Mlp::new(&NetSpec::new(vec![49], Head::Softmax, 0)).is_err());
        assert!(Mlp::new(&NetSpec::new(vec![49, 16, 3], Head::Linear, 0)).is_err());
        assert!(Mlp::new(&NetSpec::new(vec![49, 0, 3], Head::Softmax, 0)).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Mlp::new(&policy_spec(9)).unwrap();
        let b = Mlp::new(&policy_spec(9)).unwrap();
        let c = Mlp::new(&policy_spec(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let first = a.params().layer_range(0);
        let bound = 1.0 / 49f64.sqrt();
        assert!(a.params().values()[first].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_net_is_uniform() {
        let net = Mlp::zeros(&[49, 16, 3], Head::Softmax).unwrap();
        let p = net.policy_forward(&crate::gridworld::one_hot(5, 49)).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_net_bias_score() {
        let net = Mlp::zeros(&[49, 16, 3], Head::Softmax).unwrap();
        let g = net.grad_log_prob(&crate::gridworld::one_hot(0, 49), 0, ScoreMode::LogProb).unwrap();
        let r = g.last_layer_range();
        let bias = &g.values()[r.end - 3..r.end];
        assert!((bias[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((bias[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((bias[2] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let net = Mlp::new(&policy_spec(0)).unwrap();
        assert!(matches!(net.policy_forward(&[1.0; 10]), Err(Error::Usage(_))));
        assert!(matches!(net.grad_log_prob(&[0.0; 49], 3, ScoreMode::LogProb), Err(Error::Usage(_))));
        let mut net = net;
        let wrong = ParamVector::zeros(vec![LayerShape { inputs: 2, outputs: 2 }]);
        assert!(net.sgd_step(&wrong, 0.1, Direction::Descend).is_err());
    }

    #[test]
    fn perturbing_last_layer_logit_weight_raises_probability() {
        let mut net = Mlp::new(&policy_spec(3)).unwrap();
        let x = crate::gridworld::one_hot(10, 49);
        let acts = net.activations(&x).unwrap();
        let unit = acts.last_hidden().iter().position(|h| *h > 0.0).expect("an active unit");
        let before = net.policy_forward(&x).unwrap();
        let mut view = net.last_layer();
        view.values[2 * 16 + unit] += 0.5;
        net.set_last_layer(&view).unwrap();
        let after = net.policy_forward(&x).unwrap();
        assert!(after[2] > before[2]);
    }

    #[test]
    fn last_layer_score_matches_full_gradient() {
        let net = Mlp::new(&policy_spec(4)).unwrap();
        let x = crate::gridworld::one_hot(20, 49);
        for mode in [ScoreMode::LogProb, ScoreMode::Prob] {
            for a in 0..3 {
                let full = net.grad_log_prob(&x, a, mode).unwrap();
                let fast = net.last_layer_score(&x, a, mode).unwrap();
                assert_eq!(&full.values()[full.last_layer_range()], &fast[..]);
            }
        }
    }

    #[test]
    fn sgd_edge_cases() {
        let mut net = Mlp::new(&policy_spec(5)).unwrap();
        let before = net.clone();
        let zero = ParamVector::zeros(net.params().shapes().to_vec());
        net.sgd_step(&zero, 0.3, Direction::Ascend).unwrap();
        assert_eq!(net, before);
        let mut g = zero.clone();
        g.fill(1.0);
        net.sgd_step(&g, 0.0, Direction::Descend).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let base = Mlp::new(&policy_spec(6)).unwrap();
        let shapes = base.params().shapes().to_vec();
        let mut g1 = ParamVector::zeros(shapes.clone());
        let mut g2 = ParamVector::zeros(shapes);
        for (i, v) in g1.values_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 * 0.25;
        }
        for (i, v) in g2.values_mut().iter_mut().enumerate() {
            *v = -((i % 5) as f64) * 0.5;
        }
        let mut twice = base.clone();
        twice.sgd_step(&g1, 0.125, Direction::Descend).unwrap();
        twice.sgd_step(&g2, 0.125, Direction::Descend).unwrap();
        let mut sum = g1.clone();
        sum.add_scaled(&g2, 1.0).unwrap();
        let mut once = base;
        once.sgd_step(&sum, 0.125, Direction::Descend).unwrap();
        for (a, b) in twice.params().values().iter().zip(once.params().values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn last_layer_round_trip() {
        let mut net = Mlp::new(&policy_spec(8)).unwrap();
        let view = net.last_layer();
        net.set_last_layer(&view).unwrap();
        assert_eq!(net.last_layer(), view);
    }

    #[test]
    fn snapshot_round_trip_is_byte_identical() {
        let net = Mlp::new(&policy_spec(11)).unwrap();
        let snap = Snapshot { header: vec!["seed=11".into()], net };
        let text = snap.to_text();
        let back = Snapshot::parse(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.to_text(), text);
        assert!(text.contains("# layer=49x16\n# layer=16x3\n"));
    }
    fn perturbed(net: &Mlp, i: usize, h: f64) -> Mlp {
        let mut out = net.clone();
        out.params_mut().values_mut()[i] += h;
        out
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn score_matches_central_differences(
            seed in 0u64..10_000,
            hidden in 1usize..6,
            input in proptest::collection::vec(-1.0f64..1.0, 4),
            a in 0usize..3,
        ) {
            let net = Mlp::new(&NetSpec::new(vec![4, hidden, 3], Head::Softmax, seed)).unwrap();
            let h = 1e-5;
            for mode in [ScoreMode::LogProb, ScoreMode::Prob] {
                let f = |n: &Mlp| {
                    let p = n.policy_forward(&input).unwrap()[a];
                    if mode == ScoreMode::LogProb { p.ln() } else { p }
                };
                let g = net.grad_log_prob(&input, a, mode).unwrap();
                for i in 0..g.len() {
                    let fd = (f(&perturbed(&net, i, h)) - f(&perturbed(&net, i, -h))) / (2.0 * h);
                    let err = (g.values()[i] - fd).abs() / g.values()[i].abs().max(fd.abs()).max(1e-6);
                    proptest::prop_assert!(err < 1e-4, "param {i} analytic {} fd {fd}", g.values()[i]);
                }
            }
        }
    }
}
