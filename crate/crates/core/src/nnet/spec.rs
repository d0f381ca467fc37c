use serde::{Deserialize, Serialize};

use super::NnError;
use crate::{HORIZON, N_FEATURES};

/// Shape of one example's activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Flat(usize),
    /// Time-major sequence: element `(t, c)` lives at `t * channels + c`.
    Seq { len: usize, channels: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Seq { len, channels } => len * channels,
        }
    }

    /// Channel count seen by batch normalization.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Seq { channels, .. } => channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv1d {
        filters: usize,
        kernel_width: usize,
        stride: usize,
    },
    /// Bidirectional LSTM. Emits the concatenated hidden states of both
    /// directions at every step, or only the final ones.
    Bilstm {
        units: usize,
        #[serde(default)]
        return_sequences: bool,
    },
    Batchnorm {
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Dropout {
        rate: f64,
    },
    Activation {
        activation: Activation,
    },
    Flatten,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_epsilon() -> f64 {
    1e-5
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn conv1d(filters: usize, kernel_width: usize, stride: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel_width,
            stride,
        }
    }

    /// Bidirectional LSTM emitting only the final hidden states.
    pub fn bilstm(units: usize) -> Self {
        LayerSpec::Bilstm {
            units,
            return_sequences: false,
        }
    }

    /// Bidirectional LSTM emitting the hidden states of every step.
    pub fn bilstm_seq(units: usize) -> Self {
        LayerSpec::Bilstm {
            units,
            return_sequences: true,
        }
    }

    pub fn batchnorm() -> Self {
        LayerSpec::Batchnorm {
            momentum: default_momentum(),
            epsilon: default_epsilon(),
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation {
            activation: Activation::Relu,
        }
    }

    pub fn linear() -> Self {
        LayerSpec::Activation {
            activation: Activation::Linear,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Bilstm { .. } => "bilstm",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape, trainable parameter count and non-trainable state size.
    fn resolve(&self, input: Shape) -> Result<(Shape, usize, usize), String> {
        match *self {
            // on a sequence the same weights apply at every step
            LayerSpec::Dense { units } => match input {
                _ if units == 0 => Err("dense needs at least one unit".into()),
                Shape::Flat(n) => Ok((Shape::Flat(units), n * units + units, 0)),
                Shape::Seq { len, channels } => Ok((Shape::Seq { len, channels: units }, channels * units + units, 0)),
            },
            LayerSpec::Conv1d {
                filters,
                kernel_width,
                stride,
            } => match input {
                Shape::Seq { len, channels } => {
                    if filters == 0 || kernel_width == 0 || stride == 0 {
                        return Err("conv1d sizes must be positive".into());
                    }
                    if kernel_width > len {
                        return Err(format!("kernel width {kernel_width} exceeds length {len}"));
                    }
                    let out_len = (len - kernel_width) / stride + 1;
                    Ok((
                        Shape::Seq {
                            len: out_len,
                            channels: filters,
                        },
                        kernel_width * channels * filters + filters,
                        0,
                    ))
                }
                Shape::Flat(_) => Err("conv1d expects a sequence input".into()),
            },
            LayerSpec::Bilstm {
                units,
                return_sequences,
            } => match input {
                Shape::Seq { channels, len } if units > 0 && len > 0 => Ok((
                    if return_sequences {
                        Shape::Seq {
                            len,
                            channels: 2 * units,
                        }
                    } else {
                        Shape::Flat(2 * units)
                    },
                    2 * 4 * units * (channels + units + 1),
                    0,
                )),
                Shape::Seq { .. } => Err("bilstm needs at least one unit".into()),
                Shape::Flat(_) => Err("bilstm expects a sequence input".into()),
            },
            LayerSpec::Batchnorm { momentum, epsilon } => {
                if !(0.0..1.0).contains(&momentum) || !(epsilon > 0.0) {
                    return Err("batchnorm needs momentum in [0,1) and epsilon > 0".into());
                }
                let c = input.channels();
                Ok((input, 2 * c, 2 * c))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok((input, 0, 0))
            }
            LayerSpec::Activation { .. } => Ok((input, 0, 0)),
            LayerSpec::Flatten => Ok((Shape::Flat(input.size()), 0, 0)),
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }
}

/// Declarative network: input shape, ordered layers, optimizer. The loss is
/// always mean squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub optimizer: AdamConfig,
}

/// Where one layer's parameters and state live in the flat vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub index: usize,
    pub input: Shape,
    pub output: Shape,
    pub param_offset: usize,
    pub param_len: usize,
    pub state_offset: usize,
    pub state_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub slots: Vec<LayerSlot>,
    pub n_params: usize,
    pub n_state: usize,
    pub output: Shape,
}

impl ModelSpec {
    pub fn layout(&self) -> Result<Layout, NnError> {
        let mut shape = self.input_shape;
        if shape.size() == 0 {
            return Err(NnError::Spec("empty input shape".into()));
        }
        let mut slots = Vec::with_capacity(self.layers.len());
        let (mut p, mut s) = (0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, np, ns) = layer
                .resolve(shape)
                .map_err(|m| NnError::Spec(format!("layer {i} ({}): {m}", layer.name())))?;
            slots.push(LayerSlot {
                index: i,
                input: shape,
                output: out,
                param_offset: p,
                param_len: np,
                state_offset: s,
                state_len: ns,
            });
            p += np;
            s += ns;
            shape = out;
        }
        Ok(Layout {
            slots,
            n_params: p,
            n_state: s,
            output: shape,
        })
    }

    pub fn output_shape(&self) -> Result<Shape, NnError> {
        Ok(self.layout()?.output)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let out = self.output_shape()?;
        match out {
            Shape::Flat(_) => {}
            Shape::Seq { .. } => return Err(NnError::Spec("network output must be flat".into())),
        }
        if !(self.optimizer.learning_rate > 0.0) || !self.optimizer.learning_rate.is_finite() {
            return Err(NnError::Spec("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Layers whose parameters are updated by gradient descent.
    pub fn has_params(&self, i: usize) -> bool {
        matches!(
            self.layers.get(i),
            Some(LayerSpec::Dense { .. } | LayerSpec::Conv1d { .. } | LayerSpec::Bilstm { .. } | LayerSpec::Batchnorm { .. })
        )
    }
}

/// Trainable parameter count; batch-norm running statistics are excluded
/// (see [`state_count`]).
pub fn param_count(spec: &ModelSpec) -> Result<usize, NnError> {
    Ok(spec.layout()?.n_params)
}

/// Non-trainable batch-norm running statistics.
pub fn state_count(spec: &ModelSpec) -> Result<usize, NnError> {
    Ok(spec.layout()?.n_state)
}

fn dense_block(layers: &mut Vec<LayerSpec>, units: usize, dropout: f64) {
    layers.push(LayerSpec::dense(units));
    layers.push(LayerSpec::relu());
    layers.push(LayerSpec::batchnorm());
    if dropout > 0.0 {
        layers.push(LayerSpec::dropout(dropout));
    }
}

/// Fully connected network on single timesteps: two dense-64 blocks and a
/// linear output, Adam at 0.003.
pub fn nn_spec() -> ModelSpec {
    nn_spec_with(64, 64, 0.5, 0.003)
}

pub fn nn_spec_with(units1: usize, units2: usize, dropout: f64, lr: f64) -> ModelSpec {
    let mut layers = Vec::new();
    dense_block(&mut layers, units1, dropout);
    dense_block(&mut layers, units2, dropout);
    layers.push(LayerSpec::dense(1));
    ModelSpec {
        input_shape: Shape::Flat(N_FEATURES),
        layers,
        optimizer: AdamConfig::with_lr(lr),
    }
}

/// Bidirectional LSTM (96 units) over the 49x10 window, dense 16 and 32
/// blocks and a linear output applied at each of the 49 steps, Adam at
/// 0.001.
pub fn lstm_spec() -> ModelSpec {
    lstm_spec_with(96, 16, 32, 0.5, 0.001)
}

pub fn lstm_spec_with(units: usize, dense1: usize, dense2: usize, dropout: f64, lr: f64) -> ModelSpec {
    let mut layers = vec![LayerSpec::bilstm_seq(units)];
    dense_block(&mut layers, dense1, dropout);
    dense_block(&mut layers, dense2, dropout);
    layers.push(LayerSpec::dense(1));
    layers.push(LayerSpec::Flatten);
    ModelSpec {
        input_shape: Shape::Seq {
            len: HORIZON,
            channels: N_FEATURES,
        },
        layers,
        optimizer: AdamConfig::with_lr(lr),
    }
}

/// Variant of [`lstm_spec_with`] whose dense head reads only the final
/// hidden states of both directions and emits all 49 outputs at once.
pub fn lstm_final_state_spec_with(units: usize, dense1: usize, dense2: usize, dropout: f64, lr: f64) -> ModelSpec {
    let mut layers = vec![LayerSpec::bilstm(units)];
    dense_block(&mut layers, dense1, dropout);
    dense_block(&mut layers, dense2, dropout);
    layers.push(LayerSpec::dense(HORIZON));
    ModelSpec {
        input_shape: Shape::Seq {
            len: HORIZON,
            channels: N_FEATURES,
        },
        layers,
        optimizer: AdamConfig::with_lr(lr),
    }
}

/// Two strided 1-D convolutions (40 and 64 filters, width 5, stride 2),
/// flatten, a dense-96 block and 49 linear outputs, Adam at 0.0005.
pub fn cnn_spec() -> ModelSpec {
    cnn_spec_with(40, 64, 5, 2, 96, 0.5, 0.0005)
}

pub fn cnn_spec_with(
    filters1: usize,
    filters2: usize,
    width: usize,
    stride: usize,
    dense: usize,
    dropout: f64,
    lr: f64,
) -> ModelSpec {
    let mut layers = vec![
        LayerSpec::conv1d(filters1, width, stride),
        LayerSpec::relu(),
        LayerSpec::batchnorm(),
        LayerSpec::conv1d(filters2, width, stride),
        LayerSpec::relu(),
        LayerSpec::batchnorm(),
        LayerSpec::Flatten,
    ];
    dense_block(&mut layers, dense, dropout);
    layers.push(LayerSpec::dense(HORIZON));
    ModelSpec {
        input_shape: Shape::Seq {
            len: HORIZON,
            channels: N_FEATURES,
        },
        layers,
        optimizer: AdamConfig::with_lr(lr),
    }
}
