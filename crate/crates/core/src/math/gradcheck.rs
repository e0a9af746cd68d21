//! Finite-difference verification of the analytic gradient.

use ndarray::ArrayView2;

use super::network::{Gradients, NetworkParams};
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative deviation between the analytic gradient of the training
/// objective and its central finite-difference estimate:
/// `max |g_a − g_n| / max(1e-8, |g_a| + |g_n|)` over all parameters.
pub fn gradient_check<T: Scalar>(
    net: &NetworkParams<T>,
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
    l2: T,
) -> T {
    gradient_check_with(net, inputs, targets, l2, |n, x, t, l2| {
        n.loss_and_gradient(x, t, l2).1
    })
}

/// [`gradient_check`] against an arbitrary gradient routine.
pub fn gradient_check_with<T, F>(
    net: &NetworkParams<T>,
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
    l2: T,
    analytic: F,
) -> T
where
    T: Scalar,
    F: Fn(&NetworkParams<T>, ArrayView2<T>, ArrayView2<T>, T) -> Gradients<T>,
{
    let analytic = analytic(net, inputs, targets, l2).flatten();
    let h = T::lit(FD_STEP);
    let two_h = h + h;
    let floor = T::lit(1e-8);
    let mut probe = net.clone();
    let mut worst = T::zero();
    for (i, &ga) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + h;
        let plus = probe.objective(inputs, targets, l2).1;
        *probe.param_mut(i) = original - h;
        let minus = probe.objective(inputs, targets, l2).1;
        *probe.param_mut(i) = original;
        let gn = (plus - minus) / two_h;
        let dev = (ga - gn).abs() / (ga.abs() + gn.abs()).max(floor);
        worst = worst.max(dev);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::network::Activation;
    use ndarray::Array2;

    #[test]
    fn empty_batch_has_zero_deviation() {
        let net = NetworkParams::<f64>::random(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        let x = Array2::<f64>::zeros((0, 3));
        let t = Array2::<f64>::zeros((0, 2));
        assert_eq!(gradient_check(&net, x.view(), t.view(), 0.0), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let net = NetworkParams::<f64>::random(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let t = Array2::from_shape_fn((5, 2), |(i, j)| if i % 2 == j { 0.8 } else { 0.2 });
        let dev = gradient_check_with(&net, x.view(), t.view(), 0.0, |n, x, t, l2| {
            let mut g = n.loss_and_gradient(x, t, l2).1;
            g.weights[0].mapv_inplace(|v| v * 1.5);
            g
        });
        assert!(dev > 1e-2, "deviation {dev}");
        assert!(gradient_check(&net, x.view(), t.view(), 0.0) < 1e-4);
    }
}
