use crate::error::{Error, Result};
use crate::nn::network::NetworkSpec;
use crate::nn::params::Parameters;
use crate::scalar::Scalar;

/// `(weight, bias)` learning-rate multipliers for each layer slot.
pub fn lr_multipliers(net: &NetworkSpec) -> Vec<(f64, f64)> {
    net.layers()
        .iter()
        .map(|l| (l.weight_lr_multiplier, l.bias_lr_multiplier))
        .collect()
}

/// Step size actually applied to a layer.
pub fn effective_rate(base_learning_rate: f64, multiplier: f64) -> f64 {
    base_learning_rate * multiplier
}

fn check_finite<T: Scalar>(grads: &Parameters<T>, iteration: usize) -> Result<()> {
    for g in grads.layers.iter().flatten() {
        if !g.all_finite() {
            return Err(Error::Divergence {
                iteration,
                loss: f64::NAN,
            });
        }
    }
    Ok(())
}

fn check_layout<T: Scalar>(
    params: &Parameters<T>,
    grads: &Parameters<T>,
    multipliers: &[(f64, f64)],
) -> Result<()> {
    if params.layers.len() != grads.layers.len() || params.layers.len() != multipliers.len() {
        return Err(Error::mismatch(
            format!("{} layer slots", params.layers.len()),
            format!(
                "{} gradient slots, {} multipliers",
                grads.layers.len(),
                multipliers.len()
            ),
        ));
    }
    for (p, g) in params.layers.iter().zip(&grads.layers) {
        match (p, g) {
            (None, None) => {}
            (Some(p), Some(g))
                if p.weights.shape() == g.weights.shape() && p.biases.len() == g.biases.len() => {}
            _ => return Err(Error::mismatch("gradient layout of parameters", "different layout")),
        }
    }
    Ok(())
}

/// `theta <- theta - base * multiplier * grad` for every layer. Layers with a
/// zero multiplier are left untouched. Nothing is modified if any gradient
/// is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    base_learning_rate: f64,
    multipliers: &[(f64, f64)],
) -> Result<()> {
    check_layout(params, grads, multipliers)?;
    check_finite(grads, 0)?;
    for ((p, g), &(wm, bm)) in params.layers.iter_mut().zip(&grads.layers).zip(multipliers) {
        let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) else {
            continue;
        };
        if wm != 0.0 {
            let rate = T::lit(effective_rate(base_learning_rate, wm));
            for (w, &gw) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= rate * gw;
            }
        }
        if bm != 0.0 {
            let rate = T::lit(effective_rate(base_learning_rate, bm));
            for (b, &gb) in p.biases.iter_mut().zip(&g.biases) {
                *b -= rate * gb;
            }
        }
    }
    Ok(())
}

/// Learning-rate schedule. Only `Fixed` is used unless configured otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    Fixed,
    /// Multiply the rate by `gamma` every `step_size` iterations.
    Step { gamma: f64, step_size: usize },
}

impl LrPolicy {
    /// Base rate in force at 1-based `iteration`.
    pub fn rate_at(&self, base: f64, iteration: usize) -> f64 {
        match *self {
            LrPolicy::Fixed => base,
            LrPolicy::Step { gamma, step_size } => {
                let steps = (iteration.saturating_sub(1) / step_size.max(1)) as i32;
                base * gamma.powi(steps)
            }
        }
    }
}

/// SGD with optional momentum and L2 weight decay:
/// `v <- momentum * v + rate * (grad + decay * theta)`, `theta <- theta - v`.
/// With both knobs at zero this is exactly [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Parameters<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(
        &mut self,
        params: &mut Parameters<T>,
        grads: &Parameters<T>,
        base_learning_rate: f64,
        multipliers: &[(f64, f64)],
        iteration: usize,
    ) -> Result<()> {
        check_finite(grads, iteration)?;
        if self.momentum == 0.0 && self.weight_decay == 0.0 {
            return sgd_step(params, grads, base_learning_rate, multipliers);
        }
        check_layout(params, grads, multipliers)?;
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let mu = T::lit(self.momentum);
        let decay = T::lit(self.weight_decay);
        for (((p, g), v), &(wm, bm)) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(velocity.layers.iter_mut())
            .zip(multipliers)
        {
            let (Some(p), Some(g), Some(v)) = (p.as_mut(), g.as_ref(), v.as_mut()) else {
                continue;
            };
            let update = |theta: &mut [T], grad: &[T], vel: &mut [T], m: f64| {
                if m == 0.0 {
                    return;
                }
                let rate = T::lit(effective_rate(base_learning_rate, m));
                for ((t, &gr), vv) in theta.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *vv = mu * *vv + rate * (gr + decay * *t);
                    *t -= *vv;
                }
            };
            update(p.weights.data_mut(), g.weights.data(), v.weights.data_mut(), wm);
            update(&mut p.biases, &g.biases, &mut v.biases, bm);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Dims, Init, LayerSpec};
    use crate::nn::params::init_params;

    fn net(mult: f64) -> NetworkSpec {
        NetworkSpec::new(
            Dims::new(2, 1, 1),
            vec![LayerSpec::fully_connected("fc", 1)
                .with_init(Init::Constant(1.0))
                .with_lr_multiplier(mult)],
        )
        .unwrap()
    }

    #[test]
    fn plain_update_rule() {
        let n = net(1.0);
        let mut p: Parameters<f64> = init_params(&n, 0, None).unwrap();
        let mut g = p.zeros_like();
        g.layers[0]
            .as_mut()
            .unwrap()
            .weights
            .data_mut()
            .copy_from_slice(&[2.0, -4.0]);
        sgd_step(&mut p, &g, 0.1, &lr_multipliers(&n)).unwrap();
        let w = p.layers[0].as_ref().unwrap().weights.data();
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn zero_multiplier_freezes() {
        let n = net(0.0);
        let mut p: Parameters<f64> = init_params(&n, 0, None).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[0].as_mut().unwrap().weights.data_mut().fill(3.0);
        sgd_step(&mut p, &g, 0.5, &lr_multipliers(&n)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn effective_fc_rate() {
        assert_eq!(effective_rate(1e-12, 100.0), 1e-10);
        assert_eq!(effective_rate(1e-5, 100.0), 1e-3);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let n = net(1.0);
        let mut p: Parameters<f64> = init_params(&n, 0, None).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[0].as_mut().unwrap().weights.data_mut()[0] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut p, &g, 0.1, &lr_multipliers(&n)),
            Err(Error::Divergence { .. })
        ));
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_accumulates() {
        let n = net(1.0);
        let mut p: Parameters<f64> = init_params(&n, 0, None).unwrap();
        let mut g = p.zeros_like();
        g.layers[0].as_mut().unwrap().weights.data_mut().fill(1.0);
        let mut opt = Sgd::new(0.9, 0.0);
        let m = lr_multipliers(&n);
        opt.step(&mut p, &g, 0.1, &m, 1).unwrap();
        opt.step(&mut p, &g, 0.1, &m, 2).unwrap();
        // v1 = 0.1, v2 = 0.09 + 0.1
        let w = p.layers[0].as_ref().unwrap().weights.data()[0];
        assert!((w - (1.0 - 0.1 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn step_policy() {
        let p = LrPolicy::Step {
            gamma: 0.1,
            step_size: 10,
        };
        assert_eq!(p.rate_at(1.0, 10), 1.0);
        assert!((p.rate_at(1.0, 11) - 0.1).abs() < 1e-15);
    }
}
