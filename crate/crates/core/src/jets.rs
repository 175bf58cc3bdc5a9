//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] stores the normalized Taylor coefficients `∂^α f(x0) / α!` of a
//! function at a base point for every multi-index with `|α| <= order`. The
//! coefficients live in a dense array whose layout is shared between all jets
//! of the same dimension and order.
//!
//! Multi-indices are enumerated by total degree first, so the layout of order
//! `K - 1` is a prefix of the layout of order `K`. Truncation is slicing.

use std::collections::HashMap;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("variable index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("jet shape mismatch: (dim {0}, order {1}) vs (dim {2}, order {3}) or differing base points")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("multi-index of degree {degree} exceeds truncation order {order}")]
    OrderExceeded { degree: usize, order: usize },
    #[error("expected {expected} Taylor coefficients, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("multi-index has {got} entries, jet has dimension {dim}")]
    DimensionMismatch { dim: usize, got: usize },
}

/// Coefficient ring of a jet: real or complex doubles.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_real(x: f64) -> Self;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

const NONE: u32 = u32::MAX;

/// Dense enumeration of the multi-indices `{α : |α| <= order}` in `dim`
/// variables together with the precomputed tables used by jet arithmetic.
#[derive(Debug)]
pub struct JetLayout {
    dim: usize,
    order: usize,
    indices: Vec<Box<[u8]>>,
    ranks: HashMap<Box<[u8]>, usize>,
    /// `degree_ends[d]` is the number of multi-indices of degree `<= d`.
    degree_ends: Vec<usize>,
    /// `raise[k * dim + i]` is the rank of `α_k + e_i`, or `NONE`.
    raise: Vec<u32>,
    /// Triples `(i, j, k)` with `α_i + α_j = α_k`.
    products: Vec<(u32, u32, u32)>,
    /// `α!` for every rank.
    factorials: Vec<f64>,
}

fn push_degree(dim: usize, degree: usize, prefix: &mut Vec<u8>, out: &mut Vec<Box<[u8]>>) {
    if prefix.len() + 1 == dim {
        prefix.push(degree as u8);
        out.push(prefix.clone().into_boxed_slice());
        prefix.pop();
        return;
    }
    for first in (0..=degree).rev() {
        prefix.push(first as u8);
        push_degree(dim, degree - first, prefix, out);
        prefix.pop();
    }
}

impl JetLayout {
    fn build(dim: usize, order: usize) -> Self {
        let mut indices = Vec::new();
        let mut degree_ends = Vec::with_capacity(order + 1);
        for degree in 0..=order {
            if dim == 0 {
                if degree == 0 {
                    indices.push(Vec::new().into_boxed_slice());
                }
            } else {
                push_degree(dim, degree, &mut Vec::with_capacity(dim), &mut indices);
            }
            degree_ends.push(indices.len());
        }
        let ranks: HashMap<Box<[u8]>, usize> = indices.iter().enumerate().map(|(k, a)| (a.clone(), k)).collect();

        let mut raise = vec![NONE; indices.len() * dim];
        let mut scratch = vec![0u8; dim];
        for (k, alpha) in indices.iter().enumerate() {
            for i in 0..dim {
                scratch.copy_from_slice(alpha);
                scratch[i] += 1;
                if let Some(&r) = ranks.get(scratch.as_slice()) {
                    raise[k * dim + i] = r as u32;
                }
            }
        }

        let degree = |k: usize| degree_ends.iter().position(|&e| k < e).unwrap();
        let mut products = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            let room = order - degree(i);
            for (j, b) in indices[..degree_ends[room]].iter().enumerate() {
                for t in 0..dim {
                    scratch[t] = a[t] + b[t];
                }
                let k = ranks[scratch.as_slice()];
                products.push((i as u32, j as u32, k as u32));
            }
        }

        let factorials = indices
            .iter()
            .map(|a| a.iter().map(|&m| factorial(m as usize)).product())
            .collect();

        JetLayout {
            dim,
            order,
            indices,
            ranks,
            degree_ends,
            raise,
            products,
            factorials,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn multi_index(&self, rank: usize) -> &[u8] {
        &self.indices[rank]
    }

    pub fn rank(&self, alpha: &[u8]) -> Option<usize> {
        self.ranks.get(alpha).copied()
    }

    /// Number of multi-indices of degree at most `degree`.
    pub fn count_up_to(&self, degree: usize) -> usize {
        self.degree_ends[degree.min(self.order)]
    }

    pub fn degree_of(&self, rank: usize) -> usize {
        self.indices[rank].iter().map(|&m| m as usize).sum()
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shared layout for `(dim, order)`.
pub fn layout(dim: usize, order: usize) -> Arc<JetLayout> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetLayout>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(l) = cache.lock().unwrap().get(&(dim, order)) {
        return l.clone();
    }
    let built = Arc::new(JetLayout::build(dim, order));
    cache.lock().unwrap().entry((dim, order)).or_insert(built).clone()
}

/// Truncated Taylor expansion of a function at a base point.
#[derive(Clone, Debug)]
pub struct Jet<T = f64> {
    layout: Arc<JetLayout>,
    base: Arc<[f64]>,
    coeffs: Vec<T>,
}

impl<T: Scalar> PartialEq for Jet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.same_shape(other) && self.coeffs == other.coeffs
    }
}

impl<T: Scalar> Jet<T> {
    pub fn from_coeffs(base: Arc<[f64]>, order: usize, coeffs: Vec<T>) -> Result<Self, JetError> {
        let layout = layout(base.len(), order);
        if coeffs.len() != layout.len() {
            return Err(JetError::LengthMismatch {
                expected: layout.len(),
                got: coeffs.len(),
            });
        }
        Ok(Jet { layout, base, coeffs })
    }

    pub fn constant(value: T, base: Arc<[f64]>, order: usize) -> Self {
        let layout = layout(base.len(), order);
        let mut coeffs = vec![T::zero(); layout.len()];
        coeffs[0] = value;
        Jet { layout, base, coeffs }
    }

    /// Jet of `x ↦ value + grad · (x - base)`.
    pub fn affine(value: T, grad: &[T], base: Arc<[f64]>, order: usize) -> Self {
        let mut jet = Self::constant(value, base, order);
        debug_assert_eq!(grad.len(), jet.dim());
        if order > 0 {
            // degree-one multi-indices come right after the constant, e_0 first
            jet.coeffs[1..=grad.len()].copy_from_slice(grad);
        }
        jet
    }

    /// The coordinate function `x ↦ x[index]` expanded at `x0`.
    pub fn variable(index: usize, x0: &[f64], order: usize) -> Result<Self, JetError> {
        if index >= x0.len() {
            return Err(JetError::IndexOutOfRange { index, dim: x0.len() });
        }
        let mut grad = vec![T::zero(); x0.len()];
        grad[index] = T::one();
        Ok(Self::affine(T::from_real(x0[index]), &grad, x0.into(), order))
    }

    pub fn zero_like(&self) -> Self {
        Jet {
            layout: self.layout.clone(),
            base: self.base.clone(),
            coeffs: vec![T::zero(); self.coeffs.len()],
        }
    }

    pub fn constant_like(&self, value: T) -> Self {
        let mut z = self.zero_like();
        z.coeffs[0] = value;
        z
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base
    }

    pub(crate) fn base_arc(&self) -> &Arc<[f64]> {
        &self.base
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn value(&self) -> T {
        self.coeffs[0]
    }

    /// Normalized Taylor coefficient at `alpha`; zero beyond the order.
    pub fn coeff(&self, alpha: &[u8]) -> T {
        self.layout.rank(alpha).map_or(T::zero(), |k| self.coeffs[k])
    }

    /// `∂^α f(base_point) = α! · coeff(α)`.
    pub fn partial(&self, alpha: &[u8]) -> Result<T, JetError> {
        if alpha.len() != self.dim() {
            return Err(JetError::DimensionMismatch {
                dim: self.dim(),
                got: alpha.len(),
            });
        }
        let degree: usize = alpha.iter().map(|&m| m as usize).sum();
        if degree > self.order() {
            return Err(JetError::OrderExceeded {
                degree,
                order: self.order(),
            });
        }
        let k = self.layout.rank(alpha).expect("multi-index within order");
        Ok(self.coeffs[k] * T::from_real(self.layout.factorials[k]))
    }

    fn same_shape(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) && (Arc::ptr_eq(&self.base, &other.base) || self.base == other.base)
    }

    fn check_shape(&self, other: &Self) -> Result<(), JetError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(JetError::ShapeMismatch(
                self.dim(),
                self.order(),
                other.dim(),
                other.order(),
            ))
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, &b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, &b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = *a - b;
        }
        Ok(out)
    }

    /// Truncated Cauchy product.
    pub fn checked_mul(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        let mut out = vec![T::zero(); self.coeffs.len()];
        for &(i, j, k) in &self.layout.products {
            out[k as usize] += self.coeffs[i as usize] * other.coeffs[j as usize];
        }
        Ok(Jet {
            layout: self.layout.clone(),
            base: self.base.clone(),
            coeffs: out,
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        Jet {
            layout: self.layout.clone(),
            base: self.base.clone(),
            coeffs: self.coeffs.iter().map(|&c| c * factor).collect(),
        }
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    /// Product of jets with possibly different orders, truncated to the smaller one.
    pub fn mul_truncating(&self, other: &Self) -> Self {
        let order = self.order().min(other.order());
        self.truncate(order)
            .checked_mul(&other.truncate(order))
            .expect("jets share a base point")
    }

    pub fn truncate(&self, order: usize) -> Self {
        if order >= self.order() {
            return self.clone();
        }
        let layout = layout(self.dim(), order);
        Jet {
            coeffs: self.coeffs[..layout.len()].to_vec(),
            layout,
            base: self.base.clone(),
        }
    }

    /// Jet of `∂f/∂x_i`, one order lower.
    pub fn derivative(&self, i: usize) -> Result<Self, JetError> {
        if i >= self.dim() {
            return Err(JetError::IndexOutOfRange {
                index: i,
                dim: self.dim(),
            });
        }
        if self.order() == 0 {
            return Err(JetError::OrderExceeded { degree: 1, order: 0 });
        }
        let lower = layout(self.dim(), self.order() - 1);
        let dim = self.dim();
        let coeffs = (0..lower.len())
            .map(|k| {
                let up = self.layout.raise[k * dim + i] as usize;
                let m = lower.indices[k][i] as f64 + 1.0;
                self.coeffs[up] * T::from_real(m)
            })
            .collect();
        Ok(Jet {
            layout: lower,
            base: self.base.clone(),
            coeffs,
        })
    }

    /// Jet of `∂^α f`, `|α|` orders lower.
    pub fn derivative_multi(&self, alpha: &[u8]) -> Result<Self, JetError> {
        let mut out = self.clone();
        for (i, &m) in alpha.iter().enumerate() {
            for _ in 0..m {
                out = out.derivative(i)?;
            }
        }
        Ok(out)
    }

    /// Taylor coefficients of `outer ∘ self`, where `outer` lists the
    /// normalized Taylor coefficients of a univariate function at `self.value()`.
    pub fn compose_univariate(&self, outer: &[T]) -> Result<Self, JetError> {
        if outer.len() != self.order() + 1 {
            return Err(JetError::LengthMismatch {
                expected: self.order() + 1,
                got: outer.len(),
            });
        }
        let mut nilpotent = self.clone();
        nilpotent.coeffs[0] = T::zero();
        let mut acc = self.constant_like(outer[self.order()]);
        for &c in outer[..self.order()].iter().rev() {
            acc = acc.checked_mul(&nilpotent)?.add_scalar(c);
        }
        Ok(acc)
    }

    /// Restriction to the hyperplane where the last variable equals its base value.
    pub fn drop_last_variable(&self) -> Self {
        let dim = self.dim();
        assert!(dim > 0, "no variable to drop");
        let lower = layout(dim - 1, self.order());
        let mut scratch = vec![0u8; dim];
        let coeffs = lower
            .indices
            .iter()
            .map(|alpha| {
                scratch[..dim - 1].copy_from_slice(alpha);
                scratch[dim - 1] = 0;
                self.coeffs[self.layout.ranks[scratch.as_slice()]]
            })
            .collect();
        Jet {
            layout: lower,
            base: self.base[..dim - 1].into(),
            coeffs,
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Jet<U> {
        Jet {
            layout: self.layout.clone(),
            base: self.base.clone(),
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.magnitude()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == T::zero())
    }
}

impl Jet<f64> {
    pub fn to_complex(&self) -> Jet<Complex64> {
        self.map(Complex64::from)
    }
}

impl Jet<Complex64> {
    pub fn conj(&self) -> Self {
        self.map(|c| c.conj())
    }

    pub fn re(&self) -> Jet<f64> {
        self.map(|c| c.re)
    }

    pub fn im(&self) -> Jet<f64> {
        self.map(|c| c.im)
    }
}

impl<T: Scalar> Add for &Jet<T> {
    type Output = Jet<T>;
    fn add(self, rhs: Self) -> Jet<T> {
        self.checked_add(rhs).expect("jet shape mismatch")
    }
}

impl<T: Scalar> Sub for &Jet<T> {
    type Output = Jet<T>;
    fn sub(self, rhs: Self) -> Jet<T> {
        self.checked_sub(rhs).expect("jet shape mismatch")
    }
}

impl<T: Scalar> Mul for &Jet<T> {
    type Output = Jet<T>;
    fn mul(self, rhs: Self) -> Jet<T> {
        self.checked_mul(rhs).expect("jet shape mismatch")
    }
}

impl<T: Scalar> Neg for &Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.map(|c| -c)
    }
}
