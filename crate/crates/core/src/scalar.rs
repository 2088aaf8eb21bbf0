//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable by the loss, similarity, and regression code.
///
/// Implemented for `f32` and `f64`. Training and gradient checks run in `f64`;
/// `f32` is what embeddings are stored in on disk.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Copy + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for hyperparameters.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Plain dot product, summed left to right.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Scales `v` to unit Euclidean norm in place. Returns `false` (leaving `v`
/// untouched) when the norm is zero or not finite.
pub fn normalize<T: Scalar>(v: &mut [T]) -> bool {
    let n = norm(v);
    if !(n > T::zero()) || !n.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    true
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_generic_over_width() {
        let mut a = [3.0f32, 4.0];
        let mut b = [3.0f64, 4.0];
        assert!(normalize(&mut a));
        assert!(normalize(&mut b));
        assert!((a[0] - 0.6).abs() < 1e-7);
        assert!((b[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_not_normalizable() {
        let mut z = [0.0f64; 4];
        assert!(!normalize(&mut z));
        assert_eq!(z, [0.0; 4]);
    }
}
