//! Probability vectors and the information-theoretic kernels over them.
//!
//! All logarithms are natural; KL divergence and entropy are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A discrete distribution: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector<T = f64>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    /// Validates `values` as a distribution over `values.len()` classes.
    pub fn new(values: Vec<T>) -> Result<Self> {
        validate(&values)?;
        Ok(Self(values))
    }

    /// Wraps `values` without validation. Callers guarantee the invariant.
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        debug_assert!(validate(&values).is_ok(), "invalid probability vector");
        Self(values)
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one class");
        let v = T::one() / T::from_usize(k).unwrap();
        Self(vec![v; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index {index} out of range for {k} classes");
        let mut v = vec![T::zero(); k];
        v[index] = T::one();
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn entropy(&self) -> T {
        entropy_slice(&self.0)
    }
}

impl<T> AsRef<[T]> for ProbVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

fn validate<T: Scalar>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidProbability("no classes".into()));
    }
    let mut sum = T::zero();
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < T::zero() {
            return Err(Error::InvalidProbability(format!("entry {k} = {v}")));
        }
        sum += v;
    }
    if (sum - T::one()).abs() > T::sum_tolerance() {
        return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Floors every entry at [`Scalar::prob_floor`] and renormalizes.
///
/// A vector that needs no flooring is returned unchanged (bitwise), which is
/// what makes `kl_divergence(p, p)` exactly zero for already-floored `p`.
pub fn floor_renormalize<T: Scalar>(q: &[T]) -> Vec<T> {
    let floor = T::prob_floor();
    if q.iter().all(|&v| v >= floor) {
        return q.to_vec();
    }
    let floored: Vec<T> = q.iter().map(|&v| v.max(floor)).collect();
    let total: T = floored.iter().copied().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// `Σ p_k (ln p_k − ln q_k)` over raw slices of equal length; `q` is floored first.
/// Identical inputs give exactly zero whether or not flooring would apply.
pub(crate) fn kl_slice<T: Scalar>(p: &[T], q: &[T]) -> T {
    debug_assert_eq!(p.len(), q.len());
    if p == q {
        return T::zero();
    }
    let floor = T::prob_floor();
    let kl = if q.iter().all(|&v| v >= floor) {
        kl_raw(p, q)
    } else {
        kl_raw(p, &floor_renormalize(q))
    };
    debug_assert!(
        kl >= T::lit(-1e-9) || kl.is_nan(),
        "Gibbs' inequality violated: {kl}"
    );
    kl.max(T::zero())
}

fn kl_raw<T: Scalar>(p: &[T], q: &[T]) -> T {
    let mut acc = T::zero();
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > T::zero() {
            acc += pk * (pk.ln() - qk.ln());
        }
    }
    acc
}

/// KL divergence `KL(p ‖ q)` in nats.
pub fn kl_divergence<T: Scalar>(p: &ProbVector<T>, q: &ProbVector<T>) -> Result<T> {
    Error::check_dim("kl_divergence", p.len(), q.len())?;
    Ok(kl_slice(p.as_slice(), q.as_slice()))
}

/// Mean per-frame `KL(target_t ‖ mapped_t)`.
pub fn mean_kl<T: Scalar>(targets: &[ProbVector<T>], mapped: &[ProbVector<T>]) -> Result<T> {
    if targets.is_empty() {
        return Err(Error::Empty("mean_kl needs at least one frame"));
    }
    Error::check_dim("mean_kl frame count", targets.len(), mapped.len())?;
    let dim = targets[0].len();
    let mut total = T::zero();
    for (p, q) in targets.iter().zip(mapped) {
        Error::check_dim("mean_kl class count", dim, p.len())?;
        Error::check_dim("mean_kl class count", dim, q.len())?;
        total += kl_slice(p.as_slice(), q.as_slice());
    }
    Ok(total / T::from_usize(targets.len()).unwrap())
}

pub(crate) fn entropy_slice<T: Scalar>(p: &[T]) -> T {
    let mut acc = T::zero();
    for &pk in p {
        if pk > T::zero() {
            acc -= pk * pk.ln();
        }
    }
    acc.max(T::zero())
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &ProbVector<T>) -> T {
    entropy_slice(p.as_slice())
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> ProbVector<T> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    ProbVector::from_vec_unchecked(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_divergence(&pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap(), 0.0);
        // 1 · ln(1 / 0.5)
        let v = kl_divergence(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
        let v = kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.9, 0.1])).unwrap();
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.510826, epsilon = 1e-6);
    }

    #[test]
    fn kl_is_asymmetric() {
        let a = pv(&[1.0, 0.0]);
        let b = pv(&[0.5, 0.5]);
        let ab = kl_divergence(&a, &b).unwrap();
        let ba = kl_divergence(&b, &a).unwrap();
        assert!((ab - ba).abs() > 1.0, "{ab} vs {ba}");
    }

    #[test]
    fn kl_floors_zero_mass_in_q() {
        let v = kl_divergence(&pv(&[0.5, 0.5]), &pv(&[1.0, 0.0])).unwrap();
        assert!(v.is_finite() && v > 10.0);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let err = kl_divergence(&pv(&[1.0]), &pv(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn mean_kl_cases() {
        let p = vec![pv(&[0.5, 0.5]), pv(&[1.0, 0.0])];
        let q = vec![pv(&[0.9, 0.1]), pv(&[0.5, 0.5])];
        let expected = (0.5 * (0.5f64 / 0.9).ln() + 0.5 * 5f64.ln() + 2f64.ln()) / 2.0;
        assert_abs_diff_eq!(mean_kl(&p, &q).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(mean_kl(&p, &p).unwrap(), 0.0);
        assert!(matches!(mean_kl::<f64>(&[], &[]), Err(Error::Empty(_))));
        assert!(mean_kl(&p, &q[..1]).is_err());
    }

    #[test]
    fn entropy_hand_values() {
        assert_eq!(entropy(&ProbVector::<f64>::one_hot(5, 3)), 0.0);
        assert_abs_diff_eq!(entropy(&ProbVector::<f64>::uniform(8)), 8f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            entropy(&pv(&[0.5, 0.25, 0.25])),
            1.5 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::<f64>::new(vec![]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0f64; 4]);
        assert_eq!(p.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn single_precision_kernels() {
        let p = ProbVector::<f32>::new(vec![1.0, 0.0]).unwrap();
        let q = ProbVector::<f32>::new(vec![0.5, 0.5]).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((entropy(&ProbVector::<f32>::uniform(8)) - 8f32.ln()).abs() < 1e-6);
    }
}
