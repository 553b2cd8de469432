use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Mean over samples of the squared Euclidean distance between prediction
/// and target rows, together with its gradient `(2/n)(pred - target)`.
pub fn squared_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    let (ps, ts) = (pred.shape(), target.shape());
    if ps.n != ts.n || ps.sample_len() != ts.sample_len() {
        return Err(Error::mismatch(ps, ts));
    }
    let n = T::lit(ps.n as f64);
    let scale = T::lit(2.0) / n;
    let mut grad = pred.zeros_like();
    let mut total = T::zero();
    for i in 0..ps.n {
        let mut sq = T::zero();
        for ((g, &p), &t) in grad
            .sample_mut(i)
            .iter_mut()
            .zip(pred.sample(i))
            .zip(target.sample(i))
        {
            let d = p - t;
            sq += d * d;
            *g = scale * d;
        }
        total += sq;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use proptest::prelude::*;

    fn rows(n: usize, d: usize, v: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(n, d, 1, 1), v).unwrap()
    }

    #[test]
    fn equal_inputs_give_zero() {
        let a = rows(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (l, g) = squared_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_sample_three_four() {
        let p = rows(1, 8, vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t = rows(1, 8, vec![0.0; 8]);
        let (l, g) = squared_loss(&p, &t).unwrap();
        assert_eq!(l, 25.0);
        assert_eq!(&g.data()[..2], &[6.0, 8.0]);
    }

    #[test]
    fn mean_over_samples() {
        let p = rows(2, 2, vec![2.0, 0.0, 0.0, 4.0]);
        let t = rows(2, 2, vec![0.0; 4]);
        assert_eq!(squared_loss(&p, &t).unwrap().0, 10.0);
    }

    #[test]
    fn mismatched_shapes() {
        let p = rows(2, 2, vec![0.0; 4]);
        let t = rows(1, 4, vec![0.0; 4]);
        assert!(squared_loss(&p, &t).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_iff_equal(
            a in prop::collection::vec(-100.0f64..100.0, 8),
            b in prop::collection::vec(-100.0f64..100.0, 8),
        ) {
            let p = rows(2, 4, a.clone());
            let t = rows(2, 4, b.clone());
            let (l, _) = squared_loss(&p, &t).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, a == b);
        }
    }
}
