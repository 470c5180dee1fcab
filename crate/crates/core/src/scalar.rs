//! Scalar abstraction shared by the data containers, kernels and statistic engines.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the engines are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for constants and normalizing factors.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<F> {
    sum: F,
    carry: F,
}

impl<F: Scalar> CompensatedSum<F> {
    pub fn new() -> Self {
        Self { sum: F::zero(), carry: F::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: F) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> F {
        self.sum + self.carry
    }
}

impl<F: Scalar> FromIterator<F> for CompensatedSum<F> {
    fn from_iter<I: IntoIterator<Item = F>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn stable_sum<F: Scalar>(xs: impl IntoIterator<Item = F>) -> F {
    xs.into_iter().collect::<CompensatedSum<F>>().value()
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1.0e16_f64];
        xs.extend(std::iter::repeat_n(1.0, 1000));
        xs.push(-1.0e16);
        assert_eq!(stable_sum(xs), 1000.0);
    }

    #[test]
    fn sign_has_zero_at_ties() {
        assert_eq!(sgn(0.0_f32), 0.0);
        assert_eq!(sgn(-3.0_f64), -1.0);
        assert_eq!(sgn(2.5_f64), 1.0);
    }
}
