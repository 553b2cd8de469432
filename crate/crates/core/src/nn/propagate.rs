use crate::error::{Error, Result};
use crate::nn::kernels::{self, ParamGrads};
use crate::nn::layer::{Dims, LayerKind, LayerSpec};
use crate::nn::network::NetworkSpec;
use crate::nn::params::{LayerParams, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// The network input and every layer's output from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub input: Tensor4<T>,
    pub outputs: Vec<Tensor4<T>>,
}

impl<T: Scalar> Activations<T> {
    pub fn predictions(&self) -> &Tensor4<T> {
        self.outputs.last().unwrap_or(&self.input)
    }

    /// Input seen by layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor4<T> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

/// Gradients with the same layout as [`Parameters`], plus the gradient with
/// respect to each layer's input when requested.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Parameters<T>,
    pub inputs: Vec<Option<Tensor4<T>>>,
}

fn check_dims<T: Scalar>(t: &Tensor4<T>, dims: Dims) -> Result<()> {
    let s = t.shape();
    if (s.c, s.h, s.w) != (dims.c, dims.h, dims.w) {
        return Err(Error::mismatch(format!("(n, {}, {}, {})", dims.c, dims.h, dims.w), s));
    }
    Ok(())
}

fn learnable<'a, T>(spec: &LayerSpec, p: &'a Option<LayerParams<T>>) -> Result<&'a LayerParams<T>> {
    p.as_ref()
        .ok_or_else(|| Error::MissingWeights(format!("no parameters for layer {}", spec.name)))
}

pub fn layer_forward<T: Scalar>(
    spec: &LayerSpec,
    params: Option<&LayerParams<T>>,
    input: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let need = || Error::MissingWeights(format!("no parameters for layer {}", spec.name));
    match spec.kind {
        LayerKind::Conv {
            stride, padding, ..
        } => {
            let p = params.ok_or_else(need)?;
            kernels::conv_forward(input, &p.weights, &p.biases, stride, padding)
        }
        LayerKind::Relu => Ok(kernels::relu_forward(input)),
        LayerKind::MaxPool { window, stride } => kernels::maxpool_forward(input, window, stride),
        LayerKind::FullyConnected { .. } => {
            let p = params.ok_or_else(need)?;
            kernels::fc_forward(input, &p.weights, &p.biases)
        }
    }
}

/// Backward through one layer given its forward input and output gradient.
pub fn layer_backward<T: Scalar>(
    spec: &LayerSpec,
    params: Option<&LayerParams<T>>,
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    want_input_grad: bool,
) -> Result<(Option<Tensor4<T>>, Option<ParamGrads<T>>)> {
    let need = || Error::MissingWeights(format!("no parameters for layer {}", spec.name));
    Ok(match spec.kind {
        LayerKind::Conv {
            stride, padding, ..
        } => {
            let p = params.ok_or_else(need)?;
            let (gx, g) =
                kernels::conv_backward(input, &p.weights, grad_out, stride, padding, want_input_grad)?;
            (gx, Some(g))
        }
        LayerKind::Relu => (Some(kernels::relu_backward(input, grad_out)?), None),
        LayerKind::MaxPool { window, stride } => (
            Some(kernels::maxpool_backward(input, grad_out, window, stride)?),
            None,
        ),
        LayerKind::FullyConnected { .. } => {
            let p = params.ok_or_else(need)?;
            let (gx, g) = kernels::fc_backward(input, &p.weights, grad_out, want_input_grad)?;
            (gx, Some(g))
        }
    })
}

pub fn forward<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    batch: &Tensor4<T>,
) -> Result<Activations<T>> {
    check_dims(batch, net.input_dims())?;
    params.check_matches(net)?;
    let mut outputs: Vec<Tensor4<T>> = Vec::with_capacity(net.layers().len());
    for (spec, p) in net.layers().iter().zip(&params.layers) {
        let input = outputs.last().unwrap_or(batch);
        let out = layer_forward(spec, p.as_ref(), input)?;
        outputs.push(out);
    }
    Ok(Activations {
        input: batch.clone(),
        outputs,
    })
}

/// Forward pass keeping only the final output.
pub fn forward_predictions<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    batch: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    check_dims(batch, net.input_dims())?;
    params.check_matches(net)?;
    let mut current: Option<Tensor4<T>> = None;
    for (spec, p) in net.layers().iter().zip(&params.layers) {
        let input = current.as_ref().unwrap_or(batch);
        current = Some(layer_forward(spec, p.as_ref(), input)?);
    }
    Ok(current.expect("network has at least one layer"))
}

fn check_activations<T: Scalar>(net: &NetworkSpec, acts: &Activations<T>) -> Result<usize> {
    if acts.outputs.len() != net.layers().len() {
        return Err(Error::Consistency(format!(
            "{} activations for {} layers",
            acts.outputs.len(),
            net.layers().len()
        )));
    }
    let n = acts.input.shape().n;
    let mut dims = std::iter::once(&acts.input)
        .chain(&acts.outputs)
        .zip(std::iter::once(net.input_dims()).chain((0..net.layers().len()).map(|i| net.layer_output(i))));
    if let Some((t, d)) = dims.find(|(t, d)| {
        let s = t.shape();
        s.n != n || (s.c, s.h, s.w) != (d.c, d.h, d.w)
    }) {
        return Err(Error::Consistency(format!(
            "activation {} does not match expected (n={n}, {d})",
            t.shape()
        )));
    }
    Ok(n)
}

fn backward_impl<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    acts: &Activations<T>,
    loss_gradient: &Tensor4<T>,
    keep_input_grads: bool,
    first_needed: usize,
) -> Result<Gradients<T>> {
    params.check_matches(net)?;
    let n = check_activations(net, acts)?;
    let out_shape = acts.predictions().shape();
    if loss_gradient.shape() != out_shape {
        return Err(Error::Consistency(format!(
            "loss gradient {} does not match predictions {out_shape}",
            loss_gradient.shape()
        )));
    }
    let layers = net.layers();
    let mut grads = params.zeros_like();
    let mut inputs: Vec<Option<Tensor4<T>>> = vec![None; layers.len()];
    let mut upstream = loss_gradient.clone();
    for i in (0..layers.len()).rev() {
        let spec = &layers[i];
        if !keep_input_grads && i < first_needed {
            break;
        }
        let want = keep_input_grads || i > first_needed;
        let p = if spec.is_learnable() {
            Some(learnable(spec, &params.layers[i])?)
        } else {
            None
        };
        let (gx, pg) = layer_backward(spec, p, acts.layer_input(i), &upstream, want)?;
        if let (Some(pg), Some(slot)) = (pg, grads.layers[i].as_mut()) {
            slot.weights = pg.weights;
            slot.biases = pg.biases;
        }
        match gx {
            Some(gx) => {
                if keep_input_grads {
                    inputs[i] = Some(gx.clone());
                }
                upstream = gx;
            }
            None => {
                upstream = Tensor4::zeros(Shape4 {
                    n,
                    ..acts.layer_input(i).shape()
                })?;
            }
        }
    }
    Ok(Gradients {
        params: grads,
        inputs,
    })
}

/// Exact gradients of the loss with respect to every parameter and every
/// layer input.
pub fn backward<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    acts: &Activations<T>,
    loss_gradient: &Tensor4<T>,
) -> Result<Gradients<T>> {
    backward_impl(net, params, acts, loss_gradient, true, 0)
}

/// Parameter gradients only; skips input gradients nobody consumes.
pub fn backward_params<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    acts: &Activations<T>,
    loss_gradient: &Tensor4<T>,
) -> Result<Parameters<T>> {
    let first = net.layers().iter().position(|l| l.is_learnable()).unwrap_or(0);
    Ok(backward_impl(net, params, acts, loss_gradient, false, first)?.params)
}

/// Parameter gradients for layers `first..`; earlier slots stay zero.
pub fn backward_from<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    acts: &Activations<T>,
    loss_gradient: &Tensor4<T>,
    first: usize,
) -> Result<Parameters<T>> {
    Ok(backward_impl(net, params, acts, loss_gradient, false, first)?.params)
}

/// Landmark vector for a single preprocessed image `(1, c, h, w)`.
pub fn predict<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    image: &Tensor4<T>,
) -> Result<Vec<T>> {
    if image.shape().n != 1 {
        return Err(Error::mismatch("a single image (n = 1)", image.shape()));
    }
    Ok(forward_predictions(net, params, image)?.into_vec())
}
