//! The wiretap autoencoder: a one-hot encoder with power normalization and
//! two structurally identical decoders, one for Bob and one for Eve.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WiretapError};
use crate::nn::{
    adam_step, softmax_rows, Activation, AdamConfig, AdamState, DenseLayer, FreezeMask,
    LayerStack, StackGradients,
};

/// Power constraint enforced by the last encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Mean squared norm over the batch equals `n`.
    BatchAverage,
    /// Every codeword has squared norm `n`.
    PerSymbol,
}

/// Dimensions of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub message_count: usize,
    pub codeword_dim: usize,
    pub normalization: Normalization,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.message_count < 2 {
            return Err(WiretapError::Parameter(
                "message set needs at least two messages".into(),
            ));
        }
        if self.codeword_dim == 0 {
            return Err(WiretapError::Parameter(
                "codeword dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One-hot encodes message indices (0-based) into an `N x m` matrix.
pub fn one_hot(messages: &[usize], message_count: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((messages.len(), message_count));
    for (row, &m) in messages.iter().enumerate() {
        if m >= message_count {
            return Err(WiretapError::Input(format!(
                "message index {m} outside 0..{message_count}"
            )));
        }
        out[[row, m]] = 1.0;
    }
    Ok(out)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(values: ArrayView2<f64>) -> Vec<usize> {
    values.rows().into_iter().map(argmax).collect()
}

pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scales each row to squared norm exactly `n`.
pub fn normalize_per_symbol(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.ncols() as f64;
    let mut out = x.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(WiretapError::DegenerateInput(format!(
                "codeword {i} has norm {norm}; cannot normalize"
            )));
        }
        row *= n.sqrt() / norm;
    }
    Ok(out)
}

/// Scales the whole batch by one factor so that the mean squared row norm is
/// exactly `n`.
pub fn normalize_batch_average(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let scale = batch_scale(x)?;
    Ok(x.mapv(|v| v * scale))
}

fn batch_scale(x: ArrayView2<f64>) -> Result<f64> {
    let n = x.ncols() as f64;
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(WiretapError::DegenerateInput(format!(
            "batch has total energy {total}; cannot normalize"
        )));
    }
    Ok((n * x.nrows() as f64 / total).sqrt())
}

/// Applies the power normalization selected by `mode`.
pub fn normalize(x: ArrayView2<f64>, mode: Normalization) -> Result<Array2<f64>> {
    match mode {
        Normalization::BatchAverage => normalize_batch_average(x),
        Normalization::PerSymbol => normalize_per_symbol(x),
    }
}

/// Gradient with respect to the unnormalized batch `raw`, given the gradient
/// with respect to the normalized output.
pub fn normalization_backward(
    raw: ArrayView2<f64>,
    grad_out: ArrayView2<f64>,
    mode: Normalization,
) -> Result<Array2<f64>> {
    if raw.dim() != grad_out.dim() {
        return Err(WiretapError::shape(
            "normalization backward",
            format!("{:?}", raw.dim()),
            format!("{:?}", grad_out.dim()),
        ));
    }
    let n = raw.ncols() as f64;
    match mode {
        Normalization::PerSymbol => {
            // x = sqrt(n) u / |u|  =>  dL/du = sqrt(n)/|u| (g - u_hat (u_hat . g))
            let mut out = Array2::zeros(raw.raw_dim());
            for ((u, g), mut o) in raw
                .rows()
                .into_iter()
                .zip(grad_out.rows())
                .zip(out.rows_mut())
            {
                let norm = u.dot(&u).sqrt();
                if norm == 0.0 {
                    return Err(WiretapError::DegenerateInput(
                        "zero codeword in normalization backward".into(),
                    ));
                }
                let proj = u.dot(&g) / (norm * norm);
                let factor = n.sqrt() / norm;
                o.assign(&((&g - &(&u * proj)) * factor));
            }
            Ok(out)
        }
        Normalization::BatchAverage => {
            // x = c u with c = sqrt(n N / S), S = sum |u|^2  =>  dc/du = -c u / S
            let scale = batch_scale(raw)?;
            let total: f64 = raw.iter().map(|v| v * v).sum();
            let coupling: f64 = raw.iter().zip(grad_out.iter()).map(|(u, g)| u * g).sum();
            Ok(&grad_out * scale - &(&raw * (scale * coupling / total)))
        }
    }
}

/// The learned constellation: one codeword per message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codewords: Array2<f64>,
    pub normalization: Normalization,
}

impl Codebook {
    pub fn message_count(&self) -> usize {
        self.codewords.nrows()
    }

    pub fn codeword_dim(&self) -> usize {
        self.codewords.ncols()
    }

    /// Codewords for a batch of message indices.
    pub fn lookup(&self, messages: &[usize]) -> Result<Array2<f64>> {
        let m = self.message_count();
        if let Some(&bad) = messages.iter().find(|&&i| i >= m) {
            return Err(WiretapError::Input(format!(
                "message index {bad} outside 0..{m}"
            )));
        }
        Ok(self.codewords.select(Axis(0), messages))
    }

    /// Writes `message_index,x_1,...,x_n` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.codeword_dim()).map(|i| format!("x_{i}")).collect();
        writeln!(out, "message_index,{}", header.join(","))?;
        for (i, row) in self.codewords.rows().into_iter().enumerate() {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{}", values.join(","))?;
        }
        Ok(())
    }
}

/// Gradients for the unfrozen blocks of a [`WiretapModel`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelGradients {
    pub encoder: Option<StackGradients>,
    pub bob: Option<StackGradients>,
    pub eve: Option<StackGradients>,
}

impl ModelGradients {
    pub fn is_empty(&self) -> bool {
        self.encoder.is_none() && self.bob.is_none() && self.eve.is_none()
    }
}

/// Adam state for each block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptimizer {
    pub encoder: AdamState,
    pub bob: AdamState,
    pub eve: AdamState,
}

impl ModelOptimizer {
    pub fn new(model: &WiretapModel, config: AdamConfig) -> Self {
        ModelOptimizer {
            encoder: AdamState::new(&model.encoder, config),
            bob: AdamState::new(&model.bob, config),
            eve: AdamState::new(&model.eve, config),
        }
    }
}

/// Intermediate values of a recorded training forward pass.
#[derive(Debug, Clone)]
pub struct TrainingPass {
    pub messages: Vec<usize>,
    pub raw_codewords: Array2<f64>,
    pub codewords: Array2<f64>,
    pub bob_received: Array2<f64>,
    pub eve_received: Option<Array2<f64>>,
    pub bob_logits: Array2<f64>,
    pub eve_logits: Option<Array2<f64>>,
}

/// Encoder plus Bob's and Eve's decoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WiretapModel {
    shape: ModelShape,
    pub encoder: LayerStack,
    pub bob: LayerStack,
    pub eve: LayerStack,
}

fn decoder_stack<R: Rng + ?Sized>(shape: &ModelShape, rng: &mut R) -> Result<LayerStack> {
    let m = shape.message_count;
    LayerStack::new(vec![
        DenseLayer::glorot(shape.codeword_dim, m, Activation::Relu, rng),
        DenseLayer::glorot(m, m, Activation::Linear, rng),
    ])
}

impl WiretapModel {
    /// Randomly initialized model. Draw order: encoder, Bob, Eve.
    pub fn new<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let m = shape.message_count;
        let encoder = LayerStack::new(vec![
            DenseLayer::glorot(m, m, Activation::Relu, rng),
            DenseLayer::glorot(m, shape.codeword_dim, Activation::Linear, rng),
        ])?;
        let bob = decoder_stack(&shape, rng)?;
        let eve = decoder_stack(&shape, rng)?;
        Ok(WiretapModel {
            shape,
            encoder,
            bob,
            eve,
        })
    }

    /// Assembles a model from explicit blocks after checking the architecture.
    pub fn from_parts(
        shape: ModelShape,
        encoder: LayerStack,
        bob: LayerStack,
        eve: LayerStack,
    ) -> Result<Self> {
        shape.validate()?;
        let m = shape.message_count;
        let n = shape.codeword_dim;
        if encoder.in_dim() != m || encoder.out_dim() != n {
            return Err(WiretapError::shape(
                "encoder",
                format!("{m} -> {n}"),
                format!("{} -> {}", encoder.in_dim(), encoder.out_dim()),
            ));
        }
        for (name, dec) in [("bob decoder", &bob), ("eve decoder", &eve)] {
            if dec.in_dim() != n || dec.out_dim() != m {
                return Err(WiretapError::shape(
                    name,
                    format!("{n} -> {m}"),
                    format!("{} -> {}", dec.in_dim(), dec.out_dim()),
                ));
            }
        }
        if bob.shape() != eve.shape() {
            return Err(WiretapError::Parameter(
                "Bob's and Eve's decoders must have identical layer shapes".into(),
            ));
        }
        Ok(WiretapModel {
            shape,
            encoder,
            bob,
            eve,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn message_count(&self) -> usize {
        self.shape.message_count
    }

    pub fn codeword_dim(&self) -> usize {
        self.shape.codeword_dim
    }

    /// Encodes a batch of messages, normalizing over that batch.
    pub fn encode(&self, messages: &[usize]) -> Result<Array2<f64>> {
        let s = one_hot(messages, self.shape.message_count)?;
        let raw = self.encoder.forward(s.view())?;
        normalize(raw.view(), self.shape.normalization)
    }

    /// The constellation over the full message set, normalized over that set.
    pub fn codebook(&self) -> Result<Codebook> {
        let all: Vec<usize> = (0..self.shape.message_count).collect();
        Ok(Codebook {
            codewords: self.encode(&all)?,
            normalization: self.shape.normalization,
        })
    }

    /// Flattened parameters of the encoder, Bob's decoder and Eve's decoder.
    pub fn parameters(&self) -> [Vec<f64>; 3] {
        [
            self.encoder.flatten_parameters(),
            self.bob.flatten_parameters(),
            self.eve.flatten_parameters(),
        ]
    }

    /// Forward pass that records every block for a following [`backward`](Self::backward).
    ///
    /// `bob_received` and `eve_noise` are supplied by the caller so that the
    /// channel draws stay under the caller's RNG.
    pub fn forward_recorded(
        &mut self,
        messages: &[usize],
        channel: impl FnOnce(ArrayView2<f64>) -> Result<(Array2<f64>, Option<Array2<f64>>)>,
    ) -> Result<TrainingPass> {
        let s = one_hot(messages, self.shape.message_count)?;
        let raw = self.encoder.forward_recorded(s.view())?;
        let x = normalize(raw.view(), self.shape.normalization)?;
        let (y, z) = channel(x.view())?;
        let bob_logits = self.bob.forward_recorded(y.view())?;
        let eve_logits = match &z {
            Some(z) => Some(self.eve.forward_recorded(z.view())?),
            None => None,
        };
        Ok(TrainingPass {
            messages: messages.to_vec(),
            raw_codewords: raw,
            codewords: x,
            bob_received: y,
            eve_received: z,
            bob_logits,
            eve_logits,
        })
    }

    /// Reverse pass for a recorded [`TrainingPass`].
    ///
    /// The logit gradients are the loss gradients at each decoder's output;
    /// channels are additive, so gradients reach the codewords unchanged.
    /// Frozen blocks produce no entry.
    pub fn backward(
        &self,
        pass: &TrainingPass,
        bob_logit_grad: Option<ArrayView2<f64>>,
        eve_logit_grad: Option<ArrayView2<f64>>,
        freeze: FreezeMask,
    ) -> Result<ModelGradients> {
        let mut grads = ModelGradients::default();
        let mut codeword_grad: Option<Array2<f64>> = None;
        let mut accumulate = |g: Array2<f64>| match codeword_grad.as_mut() {
            Some(acc) => *acc += &g,
            None => codeword_grad = Some(g),
        };

        if let Some(g) = bob_logit_grad {
            if !(freeze.bob_frozen && freeze.encoder_frozen) {
                let (params, input) = self.bob.backward(g)?;
                if !freeze.bob_frozen {
                    grads.bob = Some(params);
                }
                accumulate(input);
            }
        }
        if let Some(g) = eve_logit_grad {
            if pass.eve_logits.is_none() {
                return Err(WiretapError::State(
                    "Eve gradient given but the pass did not run Eve's decoder".into(),
                ));
            }
            if !(freeze.eve_frozen && freeze.encoder_frozen) {
                let (params, input) = self.eve.backward(g)?;
                if !freeze.eve_frozen {
                    grads.eve = Some(params);
                }
                accumulate(input);
            }
        }

        if !freeze.encoder_frozen {
            if let Some(gx) = codeword_grad {
                let gu = normalization_backward(
                    pass.raw_codewords.view(),
                    gx.view(),
                    self.shape.normalization,
                )?;
                let (params, _) = self.encoder.backward(gu.view())?;
                grads.encoder = Some(params);
            }
        }
        Ok(grads)
    }

    /// Applies one Adam step to each block that has gradients.
    pub fn apply_gradients(
        &mut self,
        grads: &ModelGradients,
        optimizer: &mut ModelOptimizer,
        learning_rate: f64,
    ) -> Result<()> {
        if let Some(g) = &grads.encoder {
            adam_step(&mut self.encoder, g, &mut optimizer.encoder, learning_rate)?;
        }
        if let Some(g) = &grads.bob {
            adam_step(&mut self.bob, g, &mut optimizer.bob, learning_rate)?;
        }
        if let Some(g) = &grads.eve {
            adam_step(&mut self.eve, g, &mut optimizer.eve, learning_rate)?;
        }
        Ok(())
    }

    pub fn clear_tapes(&mut self) {
        self.encoder.clear_tape();
        self.bob.clear_tape();
        self.eve.clear_tape();
    }
}

/// Softmax output of a decoder for a batch of received vectors.
pub fn decode(decoder: &LayerStack, received: ArrayView2<f64>) -> Result<Array2<f64>> {
    let logits = decoder.forward(received)?;
    softmax_rows(logits.view())
}

/// Hard decisions of a decoder: argmax of its logits (equivalently of its softmax).
pub fn decide(decoder: &LayerStack, received: ArrayView2<f64>) -> Result<Vec<usize>> {
    let logits = decoder.forward(received)?;
    Ok(argmax_rows(logits.view()))
}

/// Mean squared row norm.
pub fn mean_power(x: ArrayView2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

/// Squared norm of every row.
pub fn row_powers(x: ArrayView2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}
