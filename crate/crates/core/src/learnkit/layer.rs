use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stage of a sequential network. Shapes exclude the leading batch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    /// Stride-1 convolution; `padding` must equal `(kernel - 1) / 2`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    /// Mean over channels: `C×H×W -> 1×H×W`.
    ChannelAvgPool,
    /// Max over channels: `C×H×W -> 1×H×W`.
    ChannelMaxPool,
    /// Applies each parameter-free branch to the same input and stacks the
    /// results along the channel axis.
    ConcatChannels {
        branches: Vec<LayerSpec>,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv_same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding: kernel.saturating_sub(1) / 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::ChannelAvgPool => "channel_avg_pool",
            LayerSpec::ChannelMaxPool => "channel_max_pool",
            LayerSpec::ConcatChannels { .. } => "concat_channels",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` used by the symmetric uniform initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => Some((inputs, outputs)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }

    pub fn validate(&self, context: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("{context} ({}): {msg}", self.name())));
        match self {
            LayerSpec::Linear { inputs, outputs } if *inputs == 0 || *outputs == 0 => {
                bad("widths must be positive".into())
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                bad(format!("rate {rate} outside [0, 1)"))
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if *in_channels == 0 || *out_channels == 0 {
                    bad("channel counts must be positive".into())
                } else if kernel % 2 == 0 {
                    bad(format!("kernel {kernel} must be odd"))
                } else if *padding != (kernel - 1) / 2 {
                    bad(format!("padding {padding} must be (kernel - 1) / 2"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::ConcatChannels { branches } => {
                if branches.is_empty() {
                    return bad("needs at least one branch".into());
                }
                for b in branches {
                    if b.has_params() || matches!(b, LayerSpec::ConcatChannels { .. }) {
                        return bad(format!("branch {} must be parameter-free", b.name()));
                    }
                    b.validate(context)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize], context: &str) -> Result<Vec<usize>> {
        let mismatch = |want: String| {
            Error::shape(
                format!("{context} ({})", self.name()),
                format!("expected {want}, got {input:?}"),
            )
        };
        match self {
            LayerSpec::Linear { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(mismatch(format!("[{inputs}]")));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(mismatch(format!("[{in_channels}, H, W]")));
                }
                if input[1] == 0 || input[2] == 0 {
                    return Err(mismatch(format!("nonzero spatial dims for kernel {kernel}")));
                }
                Ok(vec![*out_channels, input[1], input[2]])
            }
            LayerSpec::ChannelAvgPool | LayerSpec::ChannelMaxPool => {
                if input.len() != 3 {
                    return Err(mismatch("[C, H, W]".into()));
                }
                Ok(vec![1, input[1], input[2]])
            }
            LayerSpec::ConcatChannels { branches } => {
                let mut channels = 0;
                let mut spatial: Option<(usize, usize)> = None;
                for b in branches {
                    let s = b.output_shape(input, context)?;
                    if s.len() != 3 {
                        return Err(mismatch("branch outputs of rank 3".into()));
                    }
                    if let Some(sp) = spatial {
                        if sp != (s[1], s[2]) {
                            return Err(mismatch("branches with equal spatial dims".into()));
                        }
                    }
                    spatial = Some((s[1], s[2]));
                    channels += s[0];
                }
                let (h, w) = spatial.expect("validated nonempty");
                Ok(vec![channels, h, w])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Named sequential network with a fixed per-sample input shape.
///
/// Parameters live in a [`ParamSet`](super::ParamSet) under
/// `"{name}.{layer_index}.weight"` and `"{name}.{layer_index}.bias"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let net = Self {
            name: name.into(),
            input_shape,
            layers,
        };
        net.output_shape()?;
        Ok(net)
    }

    pub fn layer_context(&self, index: usize) -> String {
        format!("{}.{}", self.name, index)
    }

    pub fn weight_key(&self, index: usize) -> String {
        format!("{}.{}.weight", self.name, index)
    }

    pub fn bias_key(&self, index: usize) -> String {
        format!("{}.{}.bias", self.name, index)
    }

    /// Per-sample shapes entering each layer, followed by the final output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let ctx = self.layer_context(i);
            layer.validate(&ctx)?;
            let next = layer.output_shape(shapes.last().expect("nonempty"), &ctx)?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("nonempty"))
    }

    /// Copy of the network with every dropout layer set to `rate`.
    pub fn with_dropout_rate(&self, rate: f64) -> Self {
        let mut net = self.clone();
        for layer in &mut net.layers {
            if let LayerSpec::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
        net
    }

    /// Parameter keys and shapes in layer order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.param_shapes() {
                out.push((self.weight_key(i), w));
                out.push((self.bias_key(i), b));
            }
        }
        out
    }
}
