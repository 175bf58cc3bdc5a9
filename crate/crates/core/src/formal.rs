//! Truncated power series in the deformation parameter λ.
//!
//! λ is real: conjugation acts on the coefficients only. Real scalar series
//! are ordered by the sign of their lowest non-vanishing coefficient, which
//! makes them an ordered ring with λ > 0.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

/// Absolute threshold below which a coefficient counts as vanishing.
pub const ZERO_TOL: f64 = 1e-9;

/// Largest supported truncation order in λ.
pub const MAX_ORDER: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("truncation orders differ: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("series must have at least one coefficient")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Zero,
    Negative,
}

/// `a_0 + a_1 λ + ... + a_N λ^N`, truncated at order `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormalSeries<T> {
    coeffs: Vec<T>,
}

impl<T: Clone> FormalSeries<T> {
    pub fn new(coeffs: Vec<T>) -> Result<Self, SeriesError> {
        if coeffs.is_empty() {
            return Err(SeriesError::Empty);
        }
        Ok(FormalSeries { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeff(&self, r: usize) -> &T {
        &self.coeffs[r]
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> FormalSeries<U> {
        FormalSeries {
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }

    pub fn truncate(&self, order: usize) -> Self {
        FormalSeries {
            coeffs: self.coeffs[..=order.min(self.order())].to_vec(),
        }
    }

    fn check_order(&self, other: &Self) -> Result<(), SeriesError> {
        if self.order() == other.order() {
            Ok(())
        } else {
            Err(SeriesError::OrderMismatch(self.order(), other.order()))
        }
    }
}

impl<T> FormalSeries<T>
where
    T: Clone,
    for<'a> &'a T: Add<&'a T, Output = T> + Sub<&'a T, Output = T> + Mul<&'a T, Output = T>,
{
    pub fn checked_add(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check_order(other)?;
        Ok(FormalSeries {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check_order(other)?;
        Ok(FormalSeries {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        })
    }

    /// Truncated Cauchy product.
    pub fn checked_mul(&self, other: &Self) -> Result<Self, SeriesError> {
        self.check_order(other)?;
        let coeffs = (0..=self.order())
            .map(|r| {
                let mut acc = &self.coeffs[0] * &other.coeffs[r];
                for s in 1..=r {
                    acc = &acc + &(&self.coeffs[s] * &other.coeffs[r - s]);
                }
                acc
            })
            .collect();
        Ok(FormalSeries { coeffs })
    }
}

impl<T> Add for &FormalSeries<T>
where
    T: Clone,
    for<'a> &'a T: Add<&'a T, Output = T> + Sub<&'a T, Output = T> + Mul<&'a T, Output = T>,
{
    type Output = FormalSeries<T>;
    fn add(self, rhs: Self) -> FormalSeries<T> {
        self.checked_add(rhs).expect("series order mismatch")
    }
}

impl<T> Sub for &FormalSeries<T>
where
    T: Clone,
    for<'a> &'a T: Add<&'a T, Output = T> + Sub<&'a T, Output = T> + Mul<&'a T, Output = T>,
{
    type Output = FormalSeries<T>;
    fn sub(self, rhs: Self) -> FormalSeries<T> {
        self.checked_sub(rhs).expect("series order mismatch")
    }
}

impl<T> Mul for &FormalSeries<T>
where
    T: Clone,
    for<'a> &'a T: Add<&'a T, Output = T> + Sub<&'a T, Output = T> + Mul<&'a T, Output = T>,
{
    type Output = FormalSeries<T>;
    fn mul(self, rhs: Self) -> FormalSeries<T> {
        self.checked_mul(rhs).expect("series order mismatch")
    }
}

impl<T: Clone + Neg<Output = T>> Neg for &FormalSeries<T> {
    type Output = FormalSeries<T>;
    fn neg(self) -> FormalSeries<T> {
        self.map(|c| -c.clone())
    }
}

impl FormalSeries<f64> {
    pub fn constant(c: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = c;
        FormalSeries { coeffs }
    }

    /// The series `λ`, i.e. `(0, 1, 0, ...)`.
    pub fn lambda(order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        if order > 0 {
            coeffs[1] = 1.0;
        }
        FormalSeries { coeffs }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| a * c)
    }

    /// Numeric collapse `Σ a_r λ0^r`.
    pub fn eval_at(&self, lambda: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * lambda + a)
    }

    /// Sign of the lowest coefficient with `|a_r| > tol`.
    pub fn formal_sign(&self, tol: f64) -> Sign {
        match self.coeffs.iter().find(|a| a.abs() > tol) {
            None => Sign::Zero,
            Some(&a) if a > 0.0 => Sign::Positive,
            Some(_) => Sign::Negative,
        }
    }

    pub fn to_complex(&self) -> FormalSeries<Complex64> {
        self.map(|&a| Complex64::new(a, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

/// Ordered-ring sign of a real series with the default tolerance.
pub fn is_formally_positive(a: &FormalSeries<f64>, tol: f64) -> Sign {
    a.formal_sign(tol)
}

impl FormalSeries<Complex64> {
    pub fn constant(c: Complex64, order: usize) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); order + 1];
        coeffs[0] = c;
        FormalSeries { coeffs }
    }

    pub fn conjugate(&self) -> Self {
        self.map(|c| c.conj())
    }

    pub fn re(&self) -> FormalSeries<f64> {
        self.map(|c| c.re)
    }

    pub fn im(&self) -> FormalSeries<f64> {
        self.map(|c| c.im)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|a| a * c)
    }

    pub fn eval_at(&self, lambda: f64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &a| acc * lambda + a)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, a| m.max(a.norm()))
    }

    /// Real part, provided every imaginary part is below `tol`.
    pub fn real_within(&self, tol: f64) -> Option<FormalSeries<f64>> {
        (self.im().max_abs() <= tol).then(|| self.re())
    }
}

impl<T: Serialize + Clone> Serialize for FormalSeries<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("FormalSeries", 2)?;
        s.serialize_field("order", &self.order())?;
        s.serialize_field("coeffs", &self.coeffs)?;
        s.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn real(c: &[f64]) -> FormalSeries<f64> {
        FormalSeries::new(c.to_vec()).unwrap()
    }

    #[test]
    fn difference_of_squares() {
        let a = real(&[1.0, 1.0, 0.0]);
        let b = real(&[1.0, -1.0, 0.0]);
        assert_eq!((&a * &b).coeffs(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn truncation_drops_higher_terms() {
        let (x, y) = (0.3, -1.7);
        let a = real(&[1.0, x]);
        let b = real(&[1.0, y]);
        assert_eq!((&a * &b).coeffs(), &[1.0, x + y]);
    }

    #[test]
    fn conjugation_fixes_lambda() {
        let a = FormalSeries::new(vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0)]).unwrap();
        assert_eq!(a.conjugate().coeffs()[1], Complex64::new(0.0, -1.0));
        assert_eq!(
            FormalSeries::<f64>::lambda(3).to_complex().conjugate(),
            FormalSeries::<f64>::lambda(3).to_complex()
        );
    }

    #[test]
    fn sign_by_lowest_coefficient() {
        assert_eq!(real(&[0.0, 0.5, -100.0]).formal_sign(ZERO_TOL), Sign::Positive);
        assert_eq!(real(&[0.0, 0.0, 0.0]).formal_sign(ZERO_TOL), Sign::Zero);
        assert_eq!(real(&[-1e-3, 5.0, 5.0]).formal_sign(ZERO_TOL), Sign::Negative);
        assert_eq!(FormalSeries::<f64>::lambda(2).formal_sign(ZERO_TOL), Sign::Positive);
    }

    #[test]
    fn order_mismatch_is_an_error() {
        let a = real(&[1.0, 2.0]);
        let b = real(&[1.0, 2.0, 3.0]);
        assert_eq!(a.checked_mul(&b), Err(SeriesError::OrderMismatch(1, 2)));
        assert_eq!(FormalSeries::<f64>::new(vec![]), Err(SeriesError::Empty));
    }

    #[test]
    fn numeric_collapse() {
        assert_eq!(real(&[1.0, -1.0, 2.0]).eval_at(0.5), 1.0);
    }

    #[test]
    fn serializes_order_and_coefficients() {
        let json = serde_json::to_string(&real(&[1.0, -1.0, 0.0])).unwrap();
        assert_eq!(json, r#"{"order":2,"coeffs":[1.0,-1.0,0.0]}"#);
    }

    fn series() -> impl Strategy<Value = FormalSeries<f64>> {
        // coefficients either exactly zero or well away from the tolerance
        let coeff = prop_oneof![Just(0.0), 1e-3..10.0f64, -10.0..-1e-3f64];
        proptest::collection::vec(coeff, 4).prop_map(|c| FormalSeries::new(c).unwrap())
    }

    proptest! {
        #[test]
        fn positive_cone_is_closed(a in series(), b in series()) {
            prop_assume!(a.formal_sign(ZERO_TOL) == Sign::Positive);
            prop_assume!(b.formal_sign(ZERO_TOL) == Sign::Positive);
            prop_assert_eq!((&a + &b).formal_sign(ZERO_TOL), Sign::Positive);
            // truncation drops products whose leading terms sit beyond the order
            let lead = |s: &FormalSeries<f64>| s.coeffs().iter().position(|c| c.abs() > ZERO_TOL).unwrap();
            if lead(&a) + lead(&b) <= a.order() {
                prop_assert_eq!((&a * &b).formal_sign(ZERO_TOL), Sign::Positive);
            }
        }

        #[test]
        fn ring_axioms(a in series(), b in series(), c in series()) {
            let lhs = &(&a * &b) * &c;
            let rhs = &a * &(&b * &c);
            for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
            let dist_l = &a * &(&b + &c);
            let dist_r = &(&a * &b) + &(&a * &c);
            for (x, y) in dist_l.coeffs().iter().zip(dist_r.coeffs()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
            for (x, y) in (&a * &b).coeffs().iter().zip((&b * &a).coeffs()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn trichotomy(a in series()) {
            let s = a.formal_sign(ZERO_TOL);
            let t = (-&a).formal_sign(ZERO_TOL);
            match s {
                Sign::Positive => prop_assert_eq!(t, Sign::Negative),
                Sign::Negative => prop_assert_eq!(t, Sign::Positive),
                Sign::Zero => prop_assert_eq!(t, Sign::Zero),
            }
        }
    }
}
