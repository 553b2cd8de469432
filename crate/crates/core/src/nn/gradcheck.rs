//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::kernels::ParamGrads;
use crate::nn::{backward, forward, layer_backward, layer_forward, squared_loss, LayerParams, LayerSpec, NetworkSpec, Parameters};
use crate::tensor::Tensor4;

/// Denominator floor of [`relative_error`]; below it the error is absolute.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
        }
    }
}

/// Central difference of `f` with respect to `values[i]` for every `i`,
/// compared against `analytic[i]`.
fn compare(values: &mut [f64], analytic: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<GradCheck> {
    let mut report = GradCheck::default();
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + eps;
        let up = f(values)?;
        values[i] = orig - eps;
        let down = f(values)?;
        values[i] = orig;
        report.add(analytic[i], (up - down) / (2.0 * eps));
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(shape: crate::tensor::Shape4, rng: &mut impl Rng) -> Result<Tensor4<f64>> {
    let v = (0..shape.checked_len()?).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(shape, v)
}

/// Checks one layer under the loss `sum(r * y)` for a random projection
/// `r`, covering the input gradient and, for learnable layers, the weight and
/// bias gradients.
pub fn check_layer(
    spec: &LayerSpec,
    params: Option<&LayerParams<f64>>,
    input: &Tensor4<f64>,
    eps: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer_forward(spec, params, input)?;
    let r = random_tensor(y.shape(), &mut rng)?;
    let objective = |y: &Tensor4<f64>| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
    let (gx, gp) = layer_backward(spec, params, input, &r, true)?;
    let gx = gx.expect("input gradient requested");

    let mut x = input.clone();
    let mut report = compare(x.data_mut(), gx.data(), eps, |v| {
        let t = Tensor4::from_vec(input.shape(), v.to_vec())?;
        Ok(objective(&layer_forward(spec, params, &t)?))
    })?;

    if let (Some(p), Some(ParamGrads { weights, biases })) = (params, gp) {
        let mut w = p.weights.data().to_vec();
        report = report.merge(compare(&mut w, weights.data(), eps, |v| {
            let lp = LayerParams {
                weights: Tensor4::from_vec(p.weights.shape(), v.to_vec())?,
                ..p.clone()
            };
            Ok(objective(&layer_forward(spec, Some(&lp), input)?))
        })?);
        let mut b = p.biases.clone();
        report = report.merge(compare(&mut b, &biases, eps, |v| {
            let lp = LayerParams {
                biases: v.to_vec(),
                ..p.clone()
            };
            Ok(objective(&layer_forward(spec, Some(&lp), input)?))
        })?);
    }
    Ok(report)
}

/// Checks a whole network under the squared loss against `target`: every
/// parameter and every input value.
pub fn check_network(
    net: &NetworkSpec,
    params: &Parameters<f64>,
    input: &Tensor4<f64>,
    target: &Tensor4<f64>,
    eps: f64,
) -> Result<GradCheck> {
    let loss_of = |p: &Parameters<f64>, x: &Tensor4<f64>| -> Result<f64> {
        let acts = forward(net, p, x)?;
        Ok(squared_loss(acts.predictions(), target)?.0)
    };
    let acts = forward(net, params, input)?;
    let (_, grad) = squared_loss(acts.predictions(), target)?;
    let grads = backward(net, params, &acts, &grad)?;

    let mut report = GradCheck::default();
    let mut work = params.clone();
    for li in 0..params.layers.len() {
        let (Some(p), Some(g)) = (&params.layers[li], &grads.params.layers[li]) else {
            continue;
        };
        let mut w = p.weights.data().to_vec();
        report = report.merge(compare(&mut w, g.weights.data(), eps, |v| {
            work.layers[li].as_mut().expect("learnable").weights.data_mut().copy_from_slice(v);
            loss_of(&work, input)
        })?);
        work.layers[li] = Some(p.clone());
        let mut b = p.biases.clone();
        report = report.merge(compare(&mut b, &g.biases, eps, |v| {
            work.layers[li].as_mut().expect("learnable").biases.copy_from_slice(v);
            loss_of(&work, input)
        })?);
        work.layers[li] = Some(p.clone());
    }
    if let Some(Some(gx)) = grads.inputs.first() {
        let mut x = input.clone();
        report = report.merge(compare(x.data_mut(), gx.data(), eps, |v| {
            loss_of(params, &Tensor4::from_vec(input.shape(), v.to_vec())?)
        })?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / REL_FLOOR);
    }
}
