//! Small fully connected softmax networks.
//!
//! Weights are stored input-major (`in × out`) so a batch of row vectors is
//! propagated as `X · W + b`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::prob::{softmax_in_place, ProbVector};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }

    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Tanh => z.mapv_inplace(T::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation output `a`.
    fn backprop<T: Scalar>(self, grad: &mut Array2<T>, a: &Array2<T>) {
        match self {
            Activation::Tanh => Zip::from(grad).and(a).for_each(|g, &a| *g *= T::one() - a * a),
            Activation::Relu => Zip::from(grad).and(a).for_each(|g, &a| {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }),
        }
    }
}

/// Parameters of a feed-forward network whose output layer feeds a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T = f64> {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    activation: Activation,
}

/// Gradient of the training objective, shaped like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// All partial derivatives in parameter order (each `W` row-major, then its `b`).
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArgument(
            "a network needs at least an input and an output layer".into(),
        ));
    }
    if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!("layer {pos} has zero width")));
    }
    Ok(())
}

impl<T: Scalar> NetworkParams<T> {
    /// All-zero parameters. The forward pass of such a net is uniform.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform (tanh) or He-uniform (relu) weights, zero biases.
    pub fn random(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        let mut rng = rng_for(seed, "init");
        for w in &mut net.weights {
            let (fan_in, fan_out) = w.dim();
            let limit = match activation {
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            };
            for v in w.iter_mut() {
                *v = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
        activation: Activation,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        Error::check_dim("weight matrix count", layers, weights.len())?;
        Error::check_dim("bias vector count", layers, biases.len())?;
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            Error::check_dim("weight rows", layer_dims[l], w.nrows())?;
            Error::check_dim("weight columns", layer_dims[l + 1], w.ncols())?;
            Error::check_dim("bias length", layer_dims[l + 1], b.len())?;
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameters in checkpoint order: each weight matrix row-major, then its bias.
    pub fn flatten(&self) -> Vec<T> {
        Gradients {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .flatten()
    }

    /// Mutable access to parameter `index` in [`Self::flatten`] order.
    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut T {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                let cols = w.ncols();
                return &mut w[(index / cols, index % cols)];
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Forward pass of a single input vector.
    pub fn forward(&self, input: &[T]) -> Result<ProbVector<T>> {
        Error::check_dim("network input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let out = self.forward_batch(x)?;
        Ok(ProbVector::from_vec_unchecked(out.into_raw_vec_and_offset().0))
    }

    /// Forward pass of a batch (one input per row); each output row is a distribution.
    pub fn forward_batch(&self, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        Error::check_dim("network input", self.input_dim(), inputs.ncols())?;
        let mut probs = self.logits(inputs);
        for mut row in probs.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(probs)
    }

    fn logits(&self, inputs: ArrayView2<T>) -> Array2<T> {
        let hidden = self.hidden_activations(inputs);
        let h = hidden.last().map(|a| a.view()).unwrap_or(inputs);
        let l = self.weights.len() - 1;
        h.dot(&self.weights[l]) + &self.biases[l]
    }

    /// Post-activation outputs of every hidden layer.
    fn hidden_activations(&self, inputs: ArrayView2<T>) -> Vec<Array2<T>> {
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(self.weights.len());
        for l in 0..self.weights.len() - 1 {
            let mut z = {
                let h = acts.last().map(|a| a.view()).unwrap_or(inputs);
                h.dot(&self.weights[l]) + &self.biases[l]
            };
            self.activation.apply(&mut z);
            acts.push(z);
        }
        acts
    }

    /// Training objective on a batch: mean `KL(target ‖ softmax(logits))`
    /// plus `l2/2 · Σ‖W‖²`. Returns `(data_loss, objective)`.
    pub fn objective(&self, inputs: ArrayView2<T>, targets: ArrayView2<T>, l2: T) -> (T, T) {
        let rows = inputs.nrows();
        if rows == 0 {
            return (T::zero(), T::zero());
        }
        let logits = self.logits(inputs);
        let mut data = T::zero();
        for (z, t) in logits.rows().into_iter().zip(targets.rows()) {
            data += row_kl_from_logits(z.as_slice().unwrap(), t.iter().copied());
        }
        data /= T::from_usize(rows).unwrap();
        (data, data + self.l2_term(l2))
    }

    fn l2_term(&self, l2: T) -> T {
        if l2 == T::zero() {
            return T::zero();
        }
        let sq: T = self.weights.iter().map(|w| w.iter().map(|&v| v * v).sum::<T>()).sum();
        T::lit(0.5) * l2 * sq
    }

    /// Data loss and analytic gradient of [`Self::objective`] on a batch.
    pub fn loss_and_gradient(
        &self,
        inputs: ArrayView2<T>,
        targets: ArrayView2<T>,
        l2: T,
    ) -> (T, Gradients<T>) {
        let rows = inputs.nrows();
        let mut grads = Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        if rows == 0 {
            return (T::zero(), grads);
        }
        let n = T::from_usize(rows).unwrap();
        let hidden = self.hidden_activations(inputs);
        let layers = self.weights.len();
        let top_in = hidden.last().map(|a| a.view()).unwrap_or(inputs);
        let mut delta = top_in.dot(&self.weights[layers - 1]) + &self.biases[layers - 1];

        // delta <- (Σt · softmax(z) − t) / n, the gradient of the mean loss w.r.t. logits
        let mut data = T::zero();
        for (mut z, t) in delta.rows_mut().into_iter().zip(targets.rows()) {
            let zs = z.as_slice_mut().unwrap();
            data += row_kl_from_logits(zs, t.iter().copied());
            softmax_in_place(zs);
            let mass: T = t.iter().copied().sum();
            for (g, &tk) in zs.iter_mut().zip(t.iter()) {
                *g = (mass * *g - tk) / n;
            }
        }
        data /= n;

        for l in (0..layers).rev() {
            let below = if l == 0 { inputs } else { hidden[l - 1].view() };
            grads.weights[l] = below.t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l2 != T::zero() {
                grads.weights[l].scaled_add(l2, &self.weights[l]);
            }
            if l > 0 {
                let mut next = delta.dot(&self.weights[l].t());
                self.activation.backprop(&mut next, &hidden[l - 1]);
                delta = next;
            }
        }
        (data, grads)
    }

    /// Plain gradient step `θ ← θ − lr · g`.
    pub(crate) fn apply_gradient(&mut self, grads: &Gradients<T>, lr: T) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-lr, g);
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| w.mapv(|v| U::lit(v.as_f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::lit(v.as_f64()))).collect(),
            activation: self.activation,
        }
    }
}

/// `Σ t_k (ln t_k − log_softmax(z)_k)` for one row.
fn row_kl_from_logits<T: Scalar>(z: &[T], t: impl Iterator<Item = T>) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let mut acc = T::zero();
    for (&zk, tk) in z.iter().zip(t) {
        if tk > T::zero() {
            acc += tk * (tk.ln() - (zk - lse));
        }
    }
    acc
}

/// Copies the rows named by `indices` into the front of `out`.
pub(crate) fn gather_rows<T: Scalar>(src: ArrayView2<T>, indices: &[usize], out: &mut Array2<T>) {
    for (dst, &i) in out.rows_mut().into_iter().zip(indices) {
        let mut dst = dst;
        dst.assign(&src.row(i));
    }
}

/// Forward pass in fixed-size chunks, bounding peak memory on long streams.
pub fn forward_chunked<T: Scalar>(net: &NetworkParams<T>, inputs: ArrayView2<T>) -> Result<Array2<T>> {
    const CHUNK: usize = 4096;
    Error::check_dim("network input", net.input_dim(), inputs.ncols())?;
    let mut out = Array2::zeros((inputs.nrows(), net.output_dim()));
    let mut start = 0;
    while start < inputs.nrows() {
        let end = (start + CHUNK).min(inputs.nrows());
        let probs = net.forward_batch(inputs.slice(s![start..end, ..]))?;
        out.slice_mut(s![start..end, ..]).assign(&probs);
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_net_is_uniform() {
        let net = NetworkParams::<f64>::zeros(&[3, 5, 4], Activation::Tanh).unwrap();
        let p = net.forward(&[0.3, -2.0, 7.0]).unwrap();
        for &v in p.as_slice() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_layer_hand_softmax() {
        let w: f64 = 2.5;
        let net = NetworkParams::from_parts(
            vec![2, 2],
            vec![array![[w, 0.0], [0.0, 0.0]]],
            vec![array![0.0, 0.0]],
            Activation::Tanh,
        )
        .unwrap();
        let p = net.forward(&[1.0, 0.0]).unwrap();
        let e = w.exp();
        assert_abs_diff_eq!(p.as_slice()[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_slice()[1], 1.0 / (e + 1.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = NetworkParams::<f64>::zeros(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let bad = NetworkParams::<f64>::from_parts(
            vec![2, 3],
            vec![Array2::zeros((3, 2))],
            vec![Array1::zeros(3)],
            Activation::Tanh,
        );
        assert!(bad.is_err());
        assert!(NetworkParams::<f64>::zeros(&[4], Activation::Tanh).is_err());
        assert!(NetworkParams::<f64>::zeros(&[4, 0, 2], Activation::Tanh).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let a = NetworkParams::<f64>::random(&[4, 6, 3], Activation::Tanh, 11).unwrap();
        let b = NetworkParams::<f64>::random(&[4, 6, 3], Activation::Tanh, 11).unwrap();
        let c = NetworkParams::<f64>::random(&[4, 6, 3], Activation::Tanh, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), 4 * 6 + 6 + 6 * 3 + 3);
        assert_eq!(a.flatten().len(), a.param_count());
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let net = NetworkParams::<f64>::random(&[3, 7, 7, 5], Activation::Relu, 3).unwrap();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let batch = net.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.as_slice().iter().zip(batch.row(i)) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn single_precision_forward() {
        let net = NetworkParams::<f64>::random(&[3, 4, 2], Activation::Tanh, 9).unwrap();
        let small: NetworkParams<f32> = net.cast();
        let p = small.forward(&[0.5, 0.25, -1.0]).unwrap();
        let sum: f32 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
