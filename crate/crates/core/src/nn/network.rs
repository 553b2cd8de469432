use crate::error::{Error, Result};
use crate::nn::layer::{Dims, Init, LayerKind, LayerSpec};

/// Ordered layer list plus the per-sample input shape, validated so every
/// layer's inferred input matches its predecessor's output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: Dims,
    layers: Vec<LayerSpec>,
    shapes: Vec<Dims>,
}

impl NetworkSpec {
    pub fn new(input: Dims, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.c == 0 || input.h == 0 || input.w == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "input dims must be >= 1, got {input}"
            )));
        }
        match layers.last() {
            Some(l) if matches!(l.kind, LayerKind::FullyConnected { .. }) => {}
            _ => {
                return Err(Error::InvalidArchitecture(
                    "final layer must be a fully connected regression head".into(),
                ))
            }
        }
        let mut names = std::collections::HashSet::new();
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        for layer in &layers {
            layer.validate()?;
            if !names.insert(layer.name.as_str()) {
                return Err(Error::InvalidArchitecture(format!(
                    "duplicate layer name {}",
                    layer.name
                )));
            }
            let next = layer.output_dims(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(NetworkSpec {
            input,
            layers,
            shapes,
        })
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input dims of layer `i`.
    pub fn layer_input(&self, i: usize) -> Dims {
        self.shapes[i]
    }

    /// Output dims of layer `i`.
    pub fn layer_output(&self, i: usize) -> Dims {
        self.shapes[i + 1]
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    /// Input shape of the final (regression head) layer.
    pub fn feature_dims(&self) -> Dims {
        self.shapes[self.layers.len() - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.parameter_count(self.shapes[i]))
            .sum()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Sets every conv layer's multipliers (the pretrained trunk).
    pub fn set_trunk_lr_multiplier(&mut self, multiplier: f64) {
        for l in &mut self.layers {
            if matches!(l.kind, LayerKind::Conv { .. }) {
                l.weight_lr_multiplier = multiplier;
                l.bias_lr_multiplier = multiplier;
            }
        }
    }

    pub fn set_head_lr_multiplier(&mut self, multiplier: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.weight_lr_multiplier = multiplier;
            l.bias_lr_multiplier = multiplier;
        }
    }
}

/// Conv channel widths of the 13-layer VGG 16 trunk, grouped by block.
pub const VGG16_BLOCKS: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256],
    &[512, 512, 512],
    &[512, 512, 512],
];

/// Conv-layer counts at which the trunk may be truncated (block boundaries).
pub const VGG_CUT_POINTS: [usize; 5] = [2, 4, 7, 10, 13];

/// A VGG-style trunk: 3x3/stride-1/pad-1 convs each followed by ReLU, with
/// a 2x2/stride-2 max pool closing every block.
#[derive(Debug, Clone, PartialEq)]
pub struct VggTemplate {
    pub input: Dims,
    pub blocks: Vec<Vec<usize>>,
    pub trunk_init: Init,
    pub trunk_lr_multiplier: f64,
    pub head_init: Init,
    pub head_lr_multiplier: f64,
}

impl VggTemplate {
    /// VGG 16 at 224x224 with the pretrained-trunk defaults: frozen trunk
    /// loaded by name, zero-initialized head trained at 100x.
    pub fn vgg16() -> Self {
        VggTemplate {
            input: Dims::new(3, 224, 224),
            blocks: VGG16_BLOCKS.iter().map(|b| b.to_vec()).collect(),
            trunk_init: Init::PretrainedByName,
            trunk_lr_multiplier: 0.0,
            head_init: Init::Constant(0.0),
            head_lr_multiplier: 100.0,
        }
    }

    /// Same block structure with every channel width divided by
    /// `channel_div` (minimum 1) and a square input of `input_size`.
    pub fn reduced(input_size: usize, channel_div: usize) -> Self {
        let div = channel_div.max(1);
        let mut t = Self::vgg16();
        t.input = Dims::new(3, input_size, input_size);
        for block in &mut t.blocks {
            for c in block.iter_mut() {
                *c = (*c / div).max(1);
            }
        }
        t
    }

    pub fn cut_points(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0, |acc, b| {
                *acc += b.len();
                Some(*acc)
            })
            .collect()
    }

    /// Keeps the first `conv_layers` convs (which must end a block), their
    /// ReLUs and pools, then appends a fully connected head named `fc8`.
    pub fn build(&self, conv_layers: usize, outputs: usize) -> Result<NetworkSpec> {
        if !self.cut_points().contains(&conv_layers) {
            return Err(Error::InvalidArchitecture(format!(
                "conv layer count {conv_layers} is not a block boundary (supported: {:?})",
                self.cut_points()
            )));
        }
        if outputs == 0 {
            return Err(Error::InvalidArchitecture("outputs must be >= 1".into()));
        }
        let mut layers = Vec::new();
        let mut remaining = conv_layers;
        for (b, widths) in self.blocks.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            for (i, &width) in widths.iter().enumerate() {
                let tag = format!("{}_{}", b + 1, i + 1);
                layers.push(
                    LayerSpec::conv(format!("conv{tag}"), width, 3)
                        .with_init(self.trunk_init)
                        .with_lr_multiplier(self.trunk_lr_multiplier),
                );
                layers.push(LayerSpec::relu(format!("relu{tag}")));
            }
            layers.push(LayerSpec::max_pool(format!("pool{}", b + 1), 2, 2));
            remaining -= widths.len();
        }
        layers.push(
            LayerSpec::fully_connected("fc8", outputs)
                .with_init(self.head_init)
                .with_lr_multiplier(self.head_lr_multiplier),
        );
        NetworkSpec::new(self.input, layers)
    }
}

/// VGG-X + FC head on 224x224x3 input, `x` in {2, 4, 7, 10, 13}.
pub fn build_vgg_x_fc(x: usize, outputs: usize) -> Result<NetworkSpec> {
    if !VGG_CUT_POINTS.contains(&x) {
        return Err(Error::InvalidArchitecture(format!(
            "VGG-{x} unsupported; X must be one of {VGG_CUT_POINTS:?}"
        )));
    }
    VggTemplate::vgg16().build(x, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg7_feature_map_and_head_size() {
        let net = build_vgg_x_fc(7, 8).unwrap();
        assert_eq!(net.feature_dims(), Dims::new(256, 28, 28));
        let fc = net.layers().last().unwrap();
        assert_eq!(
            fc.weight_shape(net.feature_dims()),
            Some([8, 28 * 28 * 256, 1, 1])
        );
        assert_eq!(28 * 28 * 256 * 8, 1_605_632);
        assert_eq!(net.output_len(), 8);
    }

    #[test]
    fn every_cut_point_matches_block_dims() {
        let expect = [
            (2, Dims::new(64, 112, 112)),
            (4, Dims::new(128, 56, 56)),
            (7, Dims::new(256, 28, 28)),
            (10, Dims::new(512, 14, 14)),
            (13, Dims::new(512, 7, 7)),
        ];
        for (x, dims) in expect {
            assert_eq!(build_vgg_x_fc(x, 8).unwrap().feature_dims(), dims, "x={x}");
        }
    }

    #[test]
    fn unsupported_cut_rejected() {
        for x in [0, 1, 3, 5, 14] {
            assert!(matches!(
                build_vgg_x_fc(x, 8),
                Err(Error::InvalidArchitecture(_))
            ));
        }
        assert!(build_vgg_x_fc(7, 0).is_err());
    }

    #[test]
    fn layer_names_follow_vgg_convention() {
        let net = build_vgg_x_fc(4, 8).unwrap();
        let names: Vec<_> = net.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv1_1", "relu1_1", "conv1_2", "relu1_2", "pool1", "conv2_1", "relu2_1",
                "conv2_2", "relu2_2", "pool2", "fc8"
            ]
        );
    }

    #[test]
    fn network_must_end_in_fc() {
        let layers = vec![LayerSpec::conv("c", 2, 3), LayerSpec::relu("r")];
        assert!(NetworkSpec::new(Dims::new(1, 4, 4), layers).is_err());
    }

    #[test]
    fn reduced_template_scales_channels() {
        let net = VggTemplate::reduced(56, 16).build(2, 8).unwrap();
        assert_eq!(net.feature_dims(), Dims::new(4, 28, 28));
    }
}
