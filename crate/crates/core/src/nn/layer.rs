use std::fmt;

use crate::error::{Error, Result};

/// Per-sample activation shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        out_neurons: usize,
    },
}

/// How a learnable layer gets its initial weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Copied from a weight archive entry with the layer's name.
    PretrainedByName,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Gaussian { mean: f64, stddev: f64 },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub name: String,
    pub weight_lr_multiplier: f64,
    pub bias_lr_multiplier: f64,
    pub init: Init,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, out_channels: usize, kernel_size: usize) -> Self {
        Self::learnable(
            name,
            LayerKind::Conv {
                out_channels,
                kernel_size,
                stride: 1,
                padding: kernel_size / 2,
            },
        )
    }

    pub fn fully_connected(name: impl Into<String>, out_neurons: usize) -> Self {
        Self::learnable(name, LayerKind::FullyConnected { out_neurons })
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::fixed(name, LayerKind::Relu)
    }

    pub fn max_pool(name: impl Into<String>, window: usize, stride: usize) -> Self {
        Self::fixed(name, LayerKind::MaxPool { window, stride })
    }

    pub fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// Sets both weight and bias multipliers.
    pub fn with_lr_multiplier(mut self, multiplier: f64) -> Self {
        self.weight_lr_multiplier = multiplier;
        self.bias_lr_multiplier = multiplier;
        self
    }

    fn learnable(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            name: name.into(),
            weight_lr_multiplier: 1.0,
            bias_lr_multiplier: 1.0,
            init: Init::Xavier,
        }
    }

    fn fixed(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            name: name.into(),
            weight_lr_multiplier: 0.0,
            bias_lr_multiplier: 0.0,
            init: Init::Constant(0.0),
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(format!("{}: {msg}", self.name)));
        match self.kind {
            LayerKind::Conv {
                out_channels,
                kernel_size,
                stride,
                ..
            } => {
                if out_channels == 0 || kernel_size == 0 || stride == 0 {
                    return bad("conv out_channels, kernel_size and stride must be >= 1".into());
                }
            }
            LayerKind::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("pool window and stride must be >= 1".into());
                }
            }
            LayerKind::FullyConnected { out_neurons } => {
                if out_neurons == 0 {
                    return bad("fully connected layer needs >= 1 neuron".into());
                }
            }
            LayerKind::Relu => {}
        }
        let ok = |m: f64| m.is_finite() && m >= 0.0;
        if !ok(self.weight_lr_multiplier) || !ok(self.bias_lr_multiplier) {
            return bad("learning-rate multipliers must be finite and >= 0".into());
        }
        if let Init::Gaussian { stddev, .. } = self.init {
            if !(stddev >= 0.0) {
                return bad(format!("gaussian stddev must be >= 0, got {stddev}"));
            }
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        match self.kind {
            LayerKind::Conv {
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let h = window_out(&self.name, input.h + 2 * padding, kernel_size, stride)?;
                let w = window_out(&self.name, input.w + 2 * padding, kernel_size, stride)?;
                Ok(Dims::new(out_channels, h, w))
            }
            LayerKind::Relu => Ok(input),
            LayerKind::MaxPool { window, stride } => {
                let h = window_out(&self.name, input.h, window, stride)?;
                let w = window_out(&self.name, input.w, window, stride)?;
                Ok(Dims::new(input.c, h, w))
            }
            LayerKind::FullyConnected { out_neurons } => Ok(Dims::new(out_neurons, 1, 1)),
        }
    }

    /// Weight tensor shape `(out, in, kh, kw)` for learnable layers.
    pub fn weight_shape(&self, input: Dims) -> Option<[usize; 4]> {
        match self.kind {
            LayerKind::Conv {
                out_channels,
                kernel_size,
                ..
            } => Some([out_channels, input.c, kernel_size, kernel_size]),
            LayerKind::FullyConnected { out_neurons } => Some([out_neurons, input.len(), 1, 1]),
            _ => None,
        }
    }

    /// Learnable parameter count: weights plus biases.
    pub fn parameter_count(&self, input: Dims) -> usize {
        match self.weight_shape(input) {
            Some(s) => s.iter().product::<usize>() + s[0],
            None => 0,
        }
    }

    /// `(fan_in, fan_out)` used by Xavier initialization.
    pub fn fans(&self, input: Dims) -> Option<(usize, usize)> {
        let s = self.weight_shape(input)?;
        let receptive = s[2] * s[3];
        Some((s[1] * receptive, s[0] * receptive))
    }
}

fn window_out(name: &str, extent: usize, window: usize, stride: usize) -> Result<usize> {
    if extent < window {
        return Err(Error::InvalidGeometry(format!(
            "{name}: window {window} larger than input extent {extent}"
        )));
    }
    let span = extent - window;
    if span % stride != 0 {
        return Err(Error::InvalidGeometry(format!(
            "{name}: ({extent} - {window}) / {stride} is not integral"
        )));
    }
    Ok(span / stride + 1)
}
