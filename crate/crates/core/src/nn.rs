//! Minimal dense-network engine.
//!
//! Batches are row-major: each row of an input matrix is one sample. A
//! [`LayerStack`] records the intermediate activations of its last
//! [`LayerStack::forward_recorded`] call so that [`LayerStack::backward`] can
//! run reverse-mode differentiation over it. Plain [`LayerStack::forward`] is
//! pure and may be called concurrently on a shared stack.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WiretapError};

/// Activation applied after the affine map of a [`DenseLayer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply_inplace(self, values: &mut Array2<f64>) {
        if self == Activation::Relu {
            values.mapv_inplace(|v| v.max(0.0));
        }
    }
}

/// Fully connected layer computing `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Builds a layer from an `out_dim x in_dim` weight matrix and a bias of
    /// length `out_dim`.
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(WiretapError::shape(
                "dense layer bias",
                weights.nrows(),
                bias.len(),
            ));
        }
        if weights.is_empty() {
            return Err(WiretapError::Parameter(
                "dense layer must have non-zero dimensions".into(),
            ));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights on `[-sqrt(6/(in+out)), sqrt(6/(in+out))]`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| {
            rng.random_range(-limit..=limit)
        });
        DenseLayer {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[cfg(test)]
    pub(crate) fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        if input.len() != self.in_dim() {
            return Err(WiretapError::shape(
                "dense_forward input",
                self.in_dim(),
                input.len(),
            ));
        }
        let mut out = self.weights.dot(&input) + &self.bias;
        if self.activation == Activation::Relu {
            out.mapv_inplace(|v| v.max(0.0));
        }
        Ok(out)
    }

    /// Forward pass for a batch (one sample per row).
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let pre = self.affine(input)?;
        let mut out = pre;
        self.activation.apply_inplace(&mut out);
        Ok(out)
    }

    fn affine(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return Err(WiretapError::shape(
                "dense_forward input",
                format!("{} columns", self.in_dim()),
                format!("{} columns", input.ncols()),
            ));
        }
        Ok(input.dot(&self.weights.t()) + &self.bias)
    }
}

/// Gradient of a scalar loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-layer gradients of a [`LayerStack`], in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGradients {
    pub layers: Vec<LayerGradient>,
}

impl StackGradients {
    pub fn zeros_like(stack: &LayerStack) -> Self {
        StackGradients {
            layers: stack
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// All gradient coordinates flattened in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Tape {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// A sequential block of dense layers (the encoder or one of the decoders).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<DenseLayer>,
    #[serde(skip)]
    tape: Option<Tape>,
}

impl PartialEq for LayerStack {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl LayerStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(WiretapError::Parameter("layer stack is empty".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(WiretapError::shape(
                    "layer stack chaining",
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(LayerStack { layers, tape: None })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer shapes as `(in_dim, out_dim, activation)`.
    pub fn shape(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened in layer order, weights before bias.
    pub fn flatten_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Mutable access to the `index`-th flattened parameter.
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            let w = layer.weights.len();
            if index < w {
                return layer.weights.iter_mut().nth(index);
            }
            index -= w;
            let b = layer.bias.len();
            if index < b {
                return layer.bias.get_mut(index);
            }
            index -= b;
        }
        None
    }

    /// Pure forward pass.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut current = self.layers[0].forward_batch(input)?;
        for layer in &self.layers[1..] {
            current = layer.forward_batch(current.view())?;
        }
        Ok(current)
    }

    /// Forward pass that records activations for a following [`backward`](Self::backward).
    pub fn forward_recorded(&mut self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        for layer in &self.layers {
            let pre = layer.affine(current.view())?;
            let mut out = pre.clone();
            layer.activation.apply_inplace(&mut out);
            inputs.push(current);
            pre_activations.push(pre);
            current = out;
        }
        self.tape = Some(Tape {
            inputs,
            pre_activations,
        });
        Ok(current)
    }

    /// Reverse-mode pass over the recorded forward pass.
    ///
    /// `output_gradient` is the gradient of the loss with respect to the
    /// stack's output. Returns the parameter gradients and the gradient with
    /// respect to the stack's input.
    pub fn backward(
        &self,
        output_gradient: ArrayView2<f64>,
    ) -> Result<(StackGradients, Array2<f64>)> {
        let tape = self.tape.as_ref().ok_or_else(|| {
            WiretapError::State("backward called before a recorded forward pass".into())
        })?;
        let batch = tape.inputs[0].nrows();
        if output_gradient.dim() != (batch, self.out_dim()) {
            return Err(WiretapError::shape(
                "backward output gradient",
                format!("{:?}", (batch, self.out_dim())),
                format!("{:?}", output_gradient.dim()),
            ));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_gradient.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                Zip::from(&mut upstream)
                    .and(&tape.pre_activations[i])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            let weights = upstream.t().dot(&tape.inputs[i]);
            let bias = upstream.sum_axis(Axis(0));
            grads.push(LayerGradient { weights, bias });
            upstream = upstream.dot(&layer.weights);
        }
        grads.reverse();
        Ok((StackGradients { layers: grads }, upstream))
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }
}

/// Numerically stable softmax of a single logit vector.
pub fn softmax(logits: ArrayView1<f64>) -> Result<Array1<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(WiretapError::Numeric("softmax of non-finite logits".into()));
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = logits.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    Ok(out)
}

/// Row-wise softmax of a logit batch.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let soft = softmax(row.view())?;
        row.assign(&soft);
    }
    Ok(out)
}

/// Which blocks of the wiretap network are excluded from optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreezeMask {
    pub encoder_frozen: bool,
    pub bob_frozen: bool,
    pub eve_frozen: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask = FreezeMask {
        encoder_frozen: false,
        bob_frozen: false,
        eve_frozen: false,
    };
    pub const ALL: FreezeMask = FreezeMask {
        encoder_frozen: true,
        bob_frozen: true,
        eve_frozen: true,
    };
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers of Adam for one [`LayerStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: StackGradients,
    second_moment: StackGradients,
    step_count: u64,
}

impl AdamState {
    pub fn new(stack: &LayerStack, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: StackGradients::zeros_like(stack),
            second_moment: StackGradients::zeros_like(stack),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }
}

fn check_same_shape(stack: &LayerStack, grads: &StackGradients, context: &'static str) -> Result<()> {
    if grads.layers.len() != stack.layers.len() {
        return Err(WiretapError::shape(
            context,
            format!("{} layers", stack.layers.len()),
            format!("{} layers", grads.layers.len()),
        ));
    }
    for (layer, grad) in stack.layers.iter().zip(&grads.layers) {
        if layer.weights.dim() != grad.weights.dim() || layer.bias.len() != grad.bias.len() {
            return Err(WiretapError::shape(
                context,
                format!("{:?}", layer.weights.dim()),
                format!("{:?}", grad.weights.dim()),
            ));
        }
    }
    Ok(())
}

/// Applies one bias-corrected Adam update to `stack` in place.
pub fn adam_step(
    stack: &mut LayerStack,
    grads: &StackGradients,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(WiretapError::Parameter(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    check_same_shape(stack, grads, "adam gradients")?;
    check_same_shape(stack, &state.first_moment, "adam state")?;

    state.step_count += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *param -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };

    for (((layer, g), m), v) in stack
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first_moment.layers)
        .zip(&mut state.second_moment.layers)
    {
        Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}
