use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::layer::{Init, LayerKind};
use crate::nn::network::NetworkSpec;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Weights `(out, in, kh, kw)` and one bias per output channel or neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weights: Tensor4<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(name: impl Into<String>, weight_shape: [usize; 4]) -> Result<Self> {
        let [o, i, h, w] = weight_shape;
        Ok(LayerParams {
            name: name.into(),
            weights: Tensor4::zeros(Shape4::new(o, i, h, w))?,
            biases: vec![T::zero(); o],
        })
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            name: self.name.clone(),
            weights: self.weights.zeros_like(),
            biases: vec![T::zero(); self.biases.len()],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.biases.iter().all(|b| b.is_finite())
    }
}

/// Learnable state of a network, one slot per layer (`None` for ReLU/pool).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Parameters<T> {
    /// All-zero parameters shaped for `net`.
    pub fn zeros(net: &NetworkSpec) -> Result<Self> {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| match l.weight_shape(net.layer_input(i)) {
                Some(s) => LayerParams::zeros(l.name.clone(), s).map(Some),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Parameters { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(LayerParams::zeros_like))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&LayerParams<T>> {
        self.layers.iter().flatten().find(|l| l.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(|l| l.parameter_count()).sum()
    }

    /// Checks that the slots line up with `net`'s learnable layers.
    pub fn check_matches(&self, net: &NetworkSpec) -> Result<()> {
        if self.layers.len() != net.layers().len() {
            return Err(Error::mismatch(
                format!("{} layer slots", net.layers().len()),
                format!("{} slots", self.layers.len()),
            ));
        }
        for (i, (spec, slot)) in net.layers().iter().zip(&self.layers).enumerate() {
            match (spec.weight_shape(net.layer_input(i)), slot) {
                (None, None) => {}
                (Some(s), Some(p)) => {
                    if p.weights.shape().dims() != s || p.biases.len() != s[0] {
                        return Err(Error::mismatch(
                            format!("{} weights {:?}", spec.name, s),
                            format!("{} biases {}", p.weights.shape(), p.biases.len()),
                        ));
                    }
                }
                _ => {
                    return Err(Error::mismatch(
                        format!("layer {} learnable={}", spec.name, spec.is_learnable()),
                        "opposite",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Named weight sets, the in-memory form of a weight archive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightArchive<T> {
    pub entries: BTreeMap<String, LayerParams<T>>,
}

impl<T: Scalar> WeightArchive<T> {
    pub fn from_params(params: &Parameters<T>) -> Self {
        WeightArchive {
            entries: params
                .layers
                .iter()
                .flatten()
                .map(|l| (l.name.clone(), l.clone()))
                .collect(),
        }
    }

    pub fn insert(&mut self, params: LayerParams<T>) {
        self.entries.insert(params.name.clone(), params);
    }

    /// Builds parameters for `net` purely from the archive: every learnable
    /// layer must be present with matching shapes.
    pub fn to_params(&self, net: &NetworkSpec) -> Result<Parameters<T>> {
        let mut params = Parameters::zeros(net)?;
        for slot in params.layers.iter_mut().flatten() {
            let found = self
                .entries
                .get(&slot.name)
                .ok_or_else(|| Error::MissingWeights(format!("archive has no layer {}", slot.name)))?;
            copy_checked(slot, found)?;
        }
        Ok(params)
    }
}

fn copy_checked<T: Scalar>(slot: &mut LayerParams<T>, src: &LayerParams<T>) -> Result<()> {
    if slot.weights.shape() != src.weights.shape() || slot.biases.len() != src.biases.len() {
        return Err(Error::mismatch(
            format!("{} weights {}", slot.name, slot.weights.shape()),
            format!("archive weights {}", src.weights.shape()),
        ));
    }
    slot.weights = src.weights.clone();
    slot.biases = src.biases.clone();
    Ok(())
}

/// Initializes every learnable layer according to its [`Init`]. Draws happen
/// in layer order from a single seeded stream, so the result is a pure
/// function of `(net, seed, archive)`.
pub fn init_params<T: Scalar>(
    net: &NetworkSpec,
    rng_seed: u64,
    archive: Option<&WeightArchive<T>>,
) -> Result<Parameters<T>> {
    let mut params = Parameters::zeros(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for (i, (spec, slot)) in net.layers().iter().zip(params.layers.iter_mut()).enumerate() {
        let Some(slot) = slot else { continue };
        match spec.init {
            Init::PretrainedByName => {
                let archive = archive.ok_or_else(|| {
                    Error::MissingWeights(format!(
                        "layer {} needs pretrained weights but no archive was given",
                        spec.name
                    ))
                })?;
                let src = archive.entries.get(&spec.name).ok_or_else(|| {
                    Error::MissingWeights(format!("archive has no layer {}", spec.name))
                })?;
                copy_checked(slot, src)?;
            }
            Init::Constant(v) => {
                let v = T::lit(v);
                slot.weights.data_mut().iter_mut().for_each(|w| *w = v);
                slot.biases.iter_mut().for_each(|b| *b = v);
            }
            Init::Gaussian { mean, stddev } => {
                let dist = Normal::new(mean, stddev)
                    .map_err(|e| Error::InvalidArchitecture(format!("{}: {e}", spec.name)))?;
                for w in slot.weights.data_mut() {
                    *w = T::lit(dist.sample(&mut rng));
                }
            }
            Init::Xavier => {
                let (fan_in, fan_out) = spec
                    .fans(net.layer_input(i))
                    .expect("learnable layer has fans");
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in slot.weights.data_mut() {
                    *w = T::lit(rng.gen_range(-bound..=bound));
                }
            }
        }
        debug_assert!(matches!(
            spec.kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Dims, LayerSpec};

    fn fc_net(inputs: usize, outputs: usize, init: Init) -> NetworkSpec {
        NetworkSpec::new(
            Dims::new(inputs, 1, 1),
            vec![LayerSpec::fully_connected("fc", outputs).with_init(init)],
        )
        .unwrap()
    }

    #[test]
    fn constant_zero_init() {
        let net = fc_net(10, 8, Init::Constant(0.0));
        let p: Parameters<f64> = init_params(&net, 1, None).unwrap();
        let l = p.layers[0].as_ref().unwrap();
        assert!(l.weights.data().iter().all(|&w| w == 0.0));
        assert!(l.biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn gaussian_moments() {
        let net = fc_net(1000, 200, Init::Gaussian { mean: 0.0, stddev: 0.01 });
        let p: Parameters<f64> = init_params(&net, 7, None).unwrap();
        let w = p.layers[0].as_ref().unwrap().weights.data();
        let n = w.len() as f64;
        assert!(n >= 1e5);
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * 0.01 / n.sqrt(), "mean {mean}");
        assert!((sd - 0.01).abs() < 0.001, "sd {sd}");
        assert!(p.layers[0].as_ref().unwrap().biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn xavier_bound() {
        let net = fc_net(100, 8, Init::Xavier);
        let p: Parameters<f64> = init_params(&net, 3, None).unwrap();
        let bound = (6.0f64 / 108.0).sqrt();
        let w = p.layers[0].as_ref().unwrap().weights.data();
        assert!(w.iter().all(|x| x.abs() <= bound));
        assert!(w.iter().any(|x| x.abs() > 0.5 * bound));
    }

    #[test]
    fn same_seed_same_params() {
        let net = fc_net(20, 4, Init::Xavier);
        let a: Parameters<f64> = init_params(&net, 11, None).unwrap();
        let b: Parameters<f64> = init_params(&net, 11, None).unwrap();
        let c: Parameters<f64> = init_params(&net, 12, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pretrained_without_archive_is_missing_weights() {
        let net = fc_net(4, 2, Init::PretrainedByName);
        assert!(matches!(
            init_params::<f64>(&net, 0, None),
            Err(Error::MissingWeights(_))
        ));
        let empty = WeightArchive::<f64>::default();
        assert!(matches!(
            init_params(&net, 0, Some(&empty)),
            Err(Error::MissingWeights(_))
        ));
    }

    #[test]
    fn pretrained_copies_by_name() {
        let net = fc_net(4, 2, Init::PretrainedByName);
        let mut src: Parameters<f64> = Parameters::zeros(&net).unwrap();
        src.layers[0].as_mut().unwrap().weights.data_mut()[3] = 2.5;
        let archive = WeightArchive::from_params(&src);
        let p = init_params(&net, 0, Some(&archive)).unwrap();
        assert_eq!(p, src);
    }
}
