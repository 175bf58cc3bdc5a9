//! Smooth functions as inspectable expression trees.
//!
//! A [`SmoothMap`] evaluates on points and on jets in any subset of its
//! variables. Compact support is declared by the constructors that know it
//! (bumps, radial profiles) and propagated through sums and products; it is
//! never inferred from the tree.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::jets::{self, Jet};
use crate::sampling::Rng;
use crate::{Error, Result};

/// Univariate building blocks with exact Taylor coefficients.
///
/// The bump family is built on the flat step `h(s) = σ(s) / (σ(s) + σ(1-s))`
/// with `σ(s) = exp(-1/s)` for `s > 0`, which is 0 for `s <= 0`, 1 for
/// `s >= 1` and flat at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Elementary {
    Exp,
    /// `χ(t) = 1 - h((|t| - r) / eps)`: 1 on `[0, r]`, 0 beyond `r + eps`, even.
    Bump {
        r: f64,
        eps: f64,
    },
    /// `χ(√u)` for a squared norm `u >= 0`.
    RadialBump {
        r: f64,
        eps: f64,
    },
    /// `exp(-2β(√u))` with `β(t) = h((t - r)/eps) / (r + eps - t)`; 1 on the
    /// inner ball, flat zero at and beyond `r + eps`.
    BallDecay {
        r: f64,
        eps: f64,
    },
    /// `2β'(u) / (1 + 2β'(u) u)`, derivative taken in `u`; zero outside the annulus.
    BallShear {
        r: f64,
        eps: f64,
    },
}

fn var1(x0: f64, order: usize) -> Jet {
    Jet::variable(0, &[x0], order).expect("one variable")
}

fn exp_jet(j: &Jet) -> Jet {
    let e = j.value().exp();
    let mut c = Vec::with_capacity(j.order() + 1);
    let mut term = e;
    for k in 0..=j.order() {
        c.push(term);
        term /= (k + 1) as f64;
    }
    j.compose_univariate(&c).expect("length matches")
}

fn recip_jet(j: &Jet) -> Jet {
    let x0 = j.value();
    let mut c = Vec::with_capacity(j.order() + 1);
    let mut term = 1.0 / x0;
    for _ in 0..=j.order() {
        c.push(term);
        term *= -1.0 / x0;
    }
    j.compose_univariate(&c).expect("length matches")
}

fn sqrt_jet(j: &Jet) -> Jet {
    let x0 = j.value();
    let mut c = Vec::with_capacity(j.order() + 1);
    let mut term = x0.sqrt();
    for k in 0..=j.order() {
        c.push(term);
        term *= (0.5 - k as f64) / ((k + 1) as f64 * x0);
    }
    j.compose_univariate(&c).expect("length matches")
}

fn sigma_jet(s: &Jet) -> Jet {
    exp_jet(&-&recip_jet(s))
}

/// The flat step `h` applied to a one-variable jet.
fn step_jet(s: &Jet) -> Jet {
    let s0 = s.value();
    if s0 <= 0.0 {
        return s.zero_like();
    }
    if s0 >= 1.0 {
        return s.constant_like(1.0);
    }
    let a = sigma_jet(s);
    let b = sigma_jet(&(-s).add_scalar(1.0));
    if a.value() == 0.0 {
        return s.zero_like();
    }
    if b.value() == 0.0 {
        return s.constant_like(1.0);
    }
    &a * &recip_jet(&(&a + &b))
}

/// `χ(t)` for a jet with non-negative value.
fn profile_jet(t: &Jet, r: f64, eps: f64) -> Jet {
    let s = t.add_scalar(-r).scale(1.0 / eps);
    (-&step_jet(&s)).add_scalar(1.0)
}

/// `β(√u)` on a jet in `u` with value strictly inside the annulus.
fn ball_exponent(u: &Jet, r: f64, eps: f64) -> Jet {
    let t = sqrt_jet(u);
    let s = t.add_scalar(-r).scale(1.0 / eps);
    let gap = (-&t).add_scalar(r + eps);
    &step_jet(&s) * &recip_jet(&gap)
}

impl Elementary {
    /// Normalized Taylor coefficients at `x0` up to `order`.
    pub fn taylor(&self, x0: f64, order: usize) -> Vec<f64> {
        let jet = match *self {
            Elementary::Exp => exp_jet(&var1(x0, order)),
            Elementary::Bump { r, eps } => {
                let t = var1(x0, order);
                if x0.abs() <= r {
                    t.constant_like(1.0)
                } else if x0 < 0.0 {
                    profile_jet(&-&t, r, eps)
                } else {
                    profile_jet(&t, r, eps)
                }
            }
            Elementary::RadialBump { r, eps } => {
                let u = var1(x0, order);
                if x0 <= r * r {
                    u.constant_like(1.0)
                } else if x0 >= (r + eps) * (r + eps) {
                    u.zero_like()
                } else {
                    profile_jet(&sqrt_jet(&u), r, eps)
                }
            }
            Elementary::BallDecay { r, eps } => {
                let u = var1(x0, order);
                if x0 <= r * r {
                    u.constant_like(1.0)
                } else if x0 >= (r + eps) * (r + eps) {
                    u.zero_like()
                } else {
                    exp_jet(&ball_exponent(&u, r, eps).scale(-2.0))
                }
            }
            Elementary::BallShear { r, eps } => {
                let u = var1(x0, order + 1);
                if x0 <= r * r || x0 >= (r + eps) * (r + eps) {
                    u.zero_like().truncate(order)
                } else {
                    let slope = ball_exponent(&u, r, eps).derivative(0).expect("order >= 1").scale(2.0);
                    let u = u.truncate(order);
                    &slope * &recip_jet(&(&slope * &u).add_scalar(1.0))
                }
            }
        };
        jet.coeffs().to_vec()
    }

    fn outer_radius(&self) -> Option<f64> {
        match *self {
            Elementary::Exp => None,
            Elementary::Bump { r, eps }
            | Elementary::RadialBump { r, eps }
            | Elementary::BallDecay { r, eps }
            | Elementary::BallShear { r, eps } => Some(r + eps),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Elementary::Exp => Ok(()),
            Elementary::Bump { r, eps }
            | Elementary::RadialBump { r, eps }
            | Elementary::BallDecay { r, eps }
            | Elementary::BallShear { r, eps } => {
                if r > 0.0 && eps > 0.0 && r.is_finite() && eps.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "bump radii must be positive, got r = {r}, eps = {eps}"
                    )))
                }
            }
        }
    }
}

/// Declared support: the function vanishes wherever `‖x[vars]‖ >= radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub vars: Vec<usize>,
    pub radius: f64,
}

impl Support {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.vars.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt() < self.radius
    }

    fn for_sum(terms: &[SmoothMap]) -> Option<Support> {
        let first = terms.first()?.support.clone()?;
        let mut radius = first.radius;
        for t in &terms[1..] {
            let s = t.support.as_ref()?;
            if s.vars != first.vars {
                return None;
            }
            radius = radius.max(s.radius);
        }
        Some(Support {
            vars: first.vars,
            radius,
        })
    }

    fn for_product(factors: &[SmoothMap]) -> Option<Support> {
        let mut acc: Option<Support> = None;
        for s in factors.iter().filter_map(|f| f.support.as_ref()) {
            acc = Some(match acc {
                None => s.clone(),
                Some(a) if a.vars == s.vars => Support {
                    vars: a.vars,
                    radius: a.radius.min(s.radius),
                },
                Some(a) if a.vars.iter().all(|v| !s.vars.contains(v)) => {
                    let mut vars = a.vars.clone();
                    vars.extend(&s.vars);
                    vars.sort_unstable();
                    Support {
                        vars,
                        radius: a.radius.hypot(s.radius),
                    }
                }
                Some(a) => a,
            });
        }
        acc
    }
}

#[derive(Debug)]
pub enum Node {
    Coordinate(usize),
    Constant(f64),
    Sum(Vec<SmoothMap>),
    Product(Vec<SmoothMap>),
    Scale(f64, SmoothMap),
    Power(SmoothMap, u32),
    /// `x ↦ inner(A x + b)`.
    AffinePullback {
        matrix: DMatrix<f64>,
        offset: Vec<f64>,
        inner: SmoothMap,
    },
    Univariate(Elementary, SmoothMap),
    /// `x ↦ xᵀ A x`.
    QuadraticForm(DMatrix<f64>),
    /// `∂ inner / ∂x_i`.
    Partial(usize, SmoothMap),
}

/// A smooth function on `R^dim`.
#[derive(Clone)]
pub struct SmoothMap {
    dim: usize,
    node: Arc<Node>,
    support: Option<Support>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", MapSpec::from(self.clone()))
    }
}

/// Affine seed of one variable in terms of the jet variables.
#[derive(Clone)]
struct Seed {
    value: f64,
    grad: Vec<f64>,
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

impl SmoothMap {
    fn from_node(dim: usize, node: Node, support: Option<Support>) -> Self {
        SmoothMap {
            dim,
            node: Arc::new(node),
            support,
        }
    }

    pub fn coordinate(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "coordinate {index} out of range for dimension {dim}"
            )));
        }
        Ok(Self::from_node(dim, Node::Coordinate(index), None))
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Self::from_node(dim, Node::Constant(value), None)
    }

    pub fn sum(terms: Vec<SmoothMap>) -> Result<Self> {
        let dim = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty sum".into()))?
            .dim;
        for t in &terms {
            check_dim(dim, t.dim)?;
        }
        let support = Support::for_sum(&terms);
        Ok(Self::from_node(dim, Node::Sum(terms), support))
    }

    pub fn product(factors: Vec<SmoothMap>) -> Result<Self> {
        let dim = factors
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty product".into()))?
            .dim;
        for f in &factors {
            check_dim(dim, f.dim)?;
        }
        let support = Support::for_product(&factors);
        Ok(Self::from_node(dim, Node::Product(factors), support))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::from_node(self.dim, Node::Scale(factor, self.clone()), self.support.clone())
    }

    pub fn power(&self, exponent: u32) -> Self {
        let support = if exponent > 0 { self.support.clone() } else { None };
        Self::from_node(self.dim, Node::Power(self.clone(), exponent), support)
    }

    /// `x ↦ self(A x + b)` where `A` maps the new `A.ncols()`-dimensional
    /// space into this function's domain.
    pub fn pullback_affine(&self, matrix: DMatrix<f64>, offset: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, matrix.nrows())?;
        check_dim(self.dim, offset.len())?;
        let dim = matrix.ncols();
        Ok(Self::from_node(
            dim,
            Node::AffinePullback {
                matrix,
                offset,
                inner: self.clone(),
            },
            None,
        ))
    }

    pub fn univariate(function: Elementary, inner: &SmoothMap) -> Result<Self> {
        function.validate()?;
        Ok(Self::from_node(
            inner.dim,
            Node::Univariate(function, inner.clone()),
            None,
        ))
    }

    /// `χ(x_var)` with `χ = 1` on `[-r, r]` and support in `|x_var| < r + eps`.
    pub fn bump(var: usize, r: f64, eps: f64, dim: usize) -> Result<Self> {
        let function = Elementary::Bump { r, eps };
        function.validate()?;
        let inner = Self::coordinate(var, dim)?;
        Ok(Self::from_node(
            dim,
            Node::Univariate(function, inner),
            Some(Support {
                vars: vec![var],
                radius: r + eps,
            }),
        ))
    }

    /// A radial profile of `‖x[vars]‖²`: one of the bump-family elementaries,
    /// declared to vanish for `‖x[vars]‖ >= r + eps`.
    pub fn radial(function: Elementary, vars: &[usize], dim: usize) -> Result<Self> {
        function.validate()?;
        let radius = function
            .outer_radius()
            .ok_or_else(|| Error::InvalidArgument("radial profiles must come from the bump family".into()))?;
        let inner = Self::squared_norm(vars, dim)?;
        let mut vars = vars.to_vec();
        vars.sort_unstable();
        Ok(Self::from_node(
            dim,
            Node::Univariate(function, inner),
            Some(Support { vars, radius }),
        ))
    }

    pub fn quadratic_form(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!(
                "quadratic form needs a square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dim = matrix.nrows();
        Ok(Self::from_node(dim, Node::QuadraticForm(matrix), None))
    }

    /// `Σ_{i ∈ vars} x_i²`.
    pub fn squared_norm(vars: &[usize], dim: usize) -> Result<Self> {
        let mut m = DMatrix::zeros(dim, dim);
        for &i in vars {
            if i >= dim {
                return Err(Error::InvalidArgument(format!(
                    "variable {i} out of range for dimension {dim}"
                )));
            }
            m[(i, i)] = 1.0;
        }
        Self::quadratic_form(m)
    }

    /// `Σ_i weights[i] x_i`.
    pub fn linear(weights: &[f64]) -> Self {
        let dim = weights.len();
        let terms: Vec<_> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, &w)| Self::from_node(dim, Node::Coordinate(i), None).scale(w))
            .collect();
        if terms.is_empty() {
            Self::constant(0.0, dim)
        } else {
            Self::sum(terms).expect("same dimension")
        }
    }

    /// `coeff · Π x_i^{powers_i}`.
    pub fn monomial(coeff: f64, powers: &[(usize, u32)], dim: usize) -> Result<Self> {
        let mut factors = vec![Self::constant(coeff, dim)];
        for &(i, k) in powers {
            if k > 0 {
                factors.push(Self::coordinate(i, dim)?.power(k));
            }
        }
        Self::product(factors)
    }

    pub fn partial(&self, index: usize) -> Result<Self> {
        if index >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "partial {index} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(Self::from_node(
            self.dim,
            Node::Partial(index, self.clone()),
            self.support.clone(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn support(&self) -> Option<&Support> {
        self.support.as_ref()
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(*self.node, Node::Constant(c) if c == 0.0)
    }

    fn eval_seeds(&self, seeds: &[Seed], base: &Arc<[f64]>, order: usize) -> Jet {
        match &*self.node {
            Node::Coordinate(i) => {
                let s = &seeds[*i];
                Jet::affine(s.value, &s.grad, base.clone(), order)
            }
            Node::Constant(c) => Jet::constant(*c, base.clone(), order),
            Node::Sum(terms) => {
                let mut acc = terms[0].eval_seeds(seeds, base, order);
                for t in &terms[1..] {
                    acc = &acc + &t.eval_seeds(seeds, base, order);
                }
                acc
            }
            Node::Product(factors) => {
                let mut acc = factors[0].eval_seeds(seeds, base, order);
                for f in &factors[1..] {
                    acc = &acc * &f.eval_seeds(seeds, base, order);
                }
                acc
            }
            Node::Scale(a, inner) => inner.eval_seeds(seeds, base, order).scale(*a),
            Node::Power(inner, k) => {
                let x = inner.eval_seeds(seeds, base, order);
                if *k == 0 {
                    return x.constant_like(1.0);
                }
                let mut acc = x.clone();
                for _ in 1..*k {
                    acc = &acc * &x;
                }
                acc
            }
            Node::AffinePullback { matrix, offset, inner } => {
                let inner_seeds = affine_seeds(matrix, offset, seeds);
                inner.eval_seeds(&inner_seeds, base, order)
            }
            Node::Univariate(function, inner) => {
                let x = inner.eval_seeds(seeds, base, order);
                let outer = function.taylor(x.value(), order);
                x.compose_univariate(&outer).expect("length matches")
            }
            Node::QuadraticForm(a) => {
                let images = affine_seeds(a, &vec![0.0; a.nrows()], seeds);
                let mut acc = Jet::constant(0.0, base.clone(), order);
                for (s, y) in seeds.iter().zip(&images) {
                    let xj = Jet::affine(s.value, &s.grad, base.clone(), order);
                    let yj = Jet::affine(y.value, &y.grad, base.clone(), order);
                    acc = &acc + &(&xj * &yj);
                }
                acc
            }
            Node::Partial(i, inner) => {
                // differentiate along an extra jet variable s with x_i ↦ x_i + s
                let mut ext_base = base.to_vec();
                ext_base.push(0.0);
                let ext_base: Arc<[f64]> = ext_base.into();
                let ext_seeds: Vec<Seed> = seeds
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let mut grad = s.grad.clone();
                        grad.push(if k == *i { 1.0 } else { 0.0 });
                        Seed { value: s.value, grad }
                    })
                    .collect();
                let last = base.len();
                inner
                    .eval_seeds(&ext_seeds, &ext_base, order + 1)
                    .derivative(last)
                    .expect("order >= 1")
                    .drop_last_variable()
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let seeds: Vec<Seed> = x
            .iter()
            .map(|&value| Seed {
                value,
                grad: Vec::new(),
            })
            .collect();
        Ok(self.eval_seeds(&seeds, &Arc::from(Vec::new()), 0).value())
    }

    /// Jet in all variables at `x`.
    pub fn eval_jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let vars: Vec<usize> = (0..self.dim).collect();
        self.eval_jet_in(x, &vars, order)
    }

    /// Jet in the variables `vars` at `x`, all other variables frozen.
    pub fn eval_jet_in(&self, x: &[f64], vars: &[usize], order: usize) -> Result<Jet> {
        check_dim(self.dim, x.len())?;
        let mut seeds: Vec<Seed> = x
            .iter()
            .map(|&value| Seed {
                value,
                grad: vec![0.0; vars.len()],
            })
            .collect();
        for (k, &i) in vars.iter().enumerate() {
            if i >= self.dim {
                return Err(Error::InvalidArgument(format!(
                    "jet variable {i} out of range for dimension {}",
                    self.dim
                )));
            }
            seeds[i].grad[k] = 1.0;
        }
        let base: Arc<[f64]> = vars.iter().map(|&i| x[i]).collect();
        Ok(self.eval_seeds(&seeds, &base, order))
    }

    /// Jet of `s ↦ f(x + Σ_k s_k d_k)` at `s = 0`.
    pub fn eval_jet_along(&self, x: &[f64], directions: &[Vec<f64>], order: usize) -> Result<Jet> {
        check_dim(self.dim, x.len())?;
        for d in directions {
            check_dim(self.dim, d.len())?;
        }
        let seeds: Vec<Seed> = (0..self.dim)
            .map(|i| Seed {
                value: x[i],
                grad: directions.iter().map(|d| d[i]).collect(),
            })
            .collect();
        let base: Arc<[f64]> = vec![0.0; directions.len()].into();
        Ok(self.eval_seeds(&seeds, &base, order))
    }
}

fn affine_seeds(matrix: &DMatrix<f64>, offset: &[f64], seeds: &[Seed]) -> Vec<Seed> {
    let width = seeds.first().map_or(0, |s| s.grad.len());
    (0..matrix.nrows())
        .map(|k| {
            let mut value = offset[k];
            let mut grad = vec![0.0; width];
            for (j, s) in seeds.iter().enumerate() {
                let a = matrix[(k, j)];
                if a != 0.0 {
                    value += a * s.value;
                    for (g, &sg) in grad.iter_mut().zip(&s.grad) {
                        *g += a * sg;
                    }
                }
            }
            Seed { value, grad }
        })
        .collect()
}

impl Add for &SmoothMap {
    type Output = SmoothMap;
    fn add(self, rhs: Self) -> SmoothMap {
        SmoothMap::sum(vec![self.clone(), rhs.clone()]).expect("dimension mismatch")
    }
}

impl Sub for &SmoothMap {
    type Output = SmoothMap;
    fn sub(self, rhs: Self) -> SmoothMap {
        SmoothMap::sum(vec![self.clone(), rhs.scale(-1.0)]).expect("dimension mismatch")
    }
}

impl Mul for &SmoothMap {
    type Output = SmoothMap;
    fn mul(self, rhs: Self) -> SmoothMap {
        SmoothMap::product(vec![self.clone(), rhs.clone()]).expect("dimension mismatch")
    }
}

impl Neg for &SmoothMap {
    type Output = SmoothMap;
    fn neg(self) -> SmoothMap {
        self.scale(-1.0)
    }
}

/// Complex-valued function `re + i·im`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexMap {
    pub re: SmoothMap,
    pub im: SmoothMap,
}

impl ComplexMap {
    pub fn new(re: SmoothMap, im: SmoothMap) -> Result<Self> {
        check_dim(re.dim, im.dim)?;
        Ok(ComplexMap { re, im })
    }

    pub fn pullback_affine(&self, matrix: &DMatrix<f64>, offset: &[f64]) -> Result<Self> {
        Ok(ComplexMap {
            re: self.re.pullback_affine(matrix.clone(), offset.to_vec())?,
            im: self.im.pullback_affine(matrix.clone(), offset.to_vec())?,
        })
    }

    pub fn conj(&self) -> Self {
        ComplexMap {
            re: self.re.clone(),
            im: self.im.scale(-1.0),
        }
    }
}

impl From<SmoothMap> for ComplexMap {
    fn from(re: SmoothMap) -> Self {
        let im = SmoothMap::constant(0.0, re.dim);
        ComplexMap { re, im }
    }
}

/// Anything that can hand out complex jets: real or complex functions.
pub trait Observable: Send + Sync {
    fn dim(&self) -> usize;

    fn jet_in(&self, x: &[f64], vars: &[usize], order: usize) -> Result<Jet<Complex64>>;

    fn jet_along(&self, x: &[f64], directions: &[Vec<f64>], order: usize) -> Result<Jet<Complex64>>;

    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(self.jet_in(x, &[], 0)?.value())
    }
}

impl Observable for SmoothMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet_in(&self, x: &[f64], vars: &[usize], order: usize) -> Result<Jet<Complex64>> {
        Ok(self.eval_jet_in(x, vars, order)?.to_complex())
    }

    fn jet_along(&self, x: &[f64], directions: &[Vec<f64>], order: usize) -> Result<Jet<Complex64>> {
        Ok(self.eval_jet_along(x, directions, order)?.to_complex())
    }
}

fn combine(re: Jet, im: Jet) -> Jet<Complex64> {
    let coeffs = re
        .coeffs()
        .iter()
        .zip(im.coeffs())
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect();
    Jet::from_coeffs(re.base_arc().clone(), re.order(), coeffs).expect("same layout")
}

impl Observable for ComplexMap {
    fn dim(&self) -> usize {
        self.re.dim
    }

    fn jet_in(&self, x: &[f64], vars: &[usize], order: usize) -> Result<Jet<Complex64>> {
        Ok(combine(
            self.re.eval_jet_in(x, vars, order)?,
            self.im.eval_jet_in(x, vars, order)?,
        ))
    }

    fn jet_along(&self, x: &[f64], directions: &[Vec<f64>], order: usize) -> Result<Jet<Complex64>> {
        Ok(combine(
            self.re.eval_jet_along(x, directions, order)?,
            self.im.eval_jet_along(x, directions, order)?,
        ))
    }
}

/// Random polynomial `Σ c_α (x - center)^α` in the variables `vars` with
/// `min_degree <= |α| <= max_degree` and coefficients uniform in `[-1, 1]`.
pub fn random_polynomial(
    rng: &mut Rng,
    dim: usize,
    vars: &[usize],
    center: &[f64],
    min_degree: u32,
    max_degree: u32,
) -> Result<SmoothMap> {
    check_dim(vars.len(), center.len())?;
    let shifted: Vec<SmoothMap> = vars
        .iter()
        .zip(center)
        .map(|(&i, &c)| Ok(&SmoothMap::coordinate(i, dim)? - &SmoothMap::constant(c, dim)))
        .collect::<Result<_>>()?;
    let mut terms = Vec::new();
    for alpha in exponents(vars.len(), min_degree, max_degree) {
        let mut factors = vec![SmoothMap::constant(rng.gen_range(-1.0..=1.0), dim)];
        for (k, &a) in alpha.iter().enumerate() {
            if a > 0 {
                factors.push(shifted[k].power(a));
            }
        }
        terms.push(SmoothMap::product(factors)?);
    }
    if terms.is_empty() {
        return Ok(SmoothMap::constant(0.0, dim));
    }
    SmoothMap::sum(terms)
}

/// All exponent vectors in `n` variables with total degree in `[lo, hi]`.
pub fn exponents(n: usize, lo: u32, hi: u32) -> Vec<Vec<u32>> {
    let layout = jets::layout(n, hi as usize);
    (0..layout.len())
        .map(|k| layout.multi_index(k).iter().map(|&m| m as u32).collect::<Vec<u32>>())
        .filter(|a| a.iter().sum::<u32>() >= lo)
        .collect()
}

/// Serialized form of a [`SmoothMap`]; deserialization re-runs the constructors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum MapSpec {
    Coordinate {
        index: usize,
        dim: usize,
    },
    Constant {
        value: f64,
        dim: usize,
    },
    Sum {
        terms: Vec<MapSpec>,
    },
    Product {
        factors: Vec<MapSpec>,
    },
    Scale {
        factor: f64,
        inner: Box<MapSpec>,
    },
    Power {
        exponent: u32,
        inner: Box<MapSpec>,
    },
    AffinePullback {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        inner: Box<MapSpec>,
    },
    Univariate {
        function: Elementary,
        inner: Box<MapSpec>,
    },
    QuadraticForm {
        matrix: Vec<Vec<f64>>,
    },
    Partial {
        index: usize,
        inner: Box<MapSpec>,
    },
    Bump {
        var: usize,
        r: f64,
        eps: f64,
        dim: usize,
    },
    Radial {
        function: Elementary,
        vars: Vec<usize>,
        dim: usize,
    },
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<SmoothMap> for MapSpec {
    fn from(f: SmoothMap) -> Self {
        let boxed = |g: &SmoothMap| Box::new(MapSpec::from(g.clone()));
        match &*f.node {
            Node::Coordinate(index) => MapSpec::Coordinate {
                index: *index,
                dim: f.dim,
            },
            Node::Constant(value) => MapSpec::Constant {
                value: *value,
                dim: f.dim,
            },
            Node::Sum(t) => MapSpec::Sum {
                terms: t.iter().cloned().map(MapSpec::from).collect(),
            },
            Node::Product(t) => MapSpec::Product {
                factors: t.iter().cloned().map(MapSpec::from).collect(),
            },
            Node::Scale(factor, inner) => MapSpec::Scale {
                factor: *factor,
                inner: boxed(inner),
            },
            Node::Power(inner, exponent) => MapSpec::Power {
                exponent: *exponent,
                inner: boxed(inner),
            },
            Node::AffinePullback { matrix, offset, inner } => MapSpec::AffinePullback {
                matrix: matrix_to_rows(matrix),
                offset: offset.clone(),
                inner: boxed(inner),
            },
            Node::Univariate(function, inner) => match (&f.support, &*inner.node) {
                (Some(_), Node::Coordinate(var)) => {
                    let Elementary::Bump { r, eps } = *function else {
                        unreachable!("only bump() declares support on a coordinate")
                    };
                    MapSpec::Bump {
                        var: *var,
                        r,
                        eps,
                        dim: f.dim,
                    }
                }
                (Some(s), _) => MapSpec::Radial {
                    function: function.clone(),
                    vars: s.vars.clone(),
                    dim: f.dim,
                },
                (None, _) => MapSpec::Univariate {
                    function: function.clone(),
                    inner: boxed(inner),
                },
            },
            Node::QuadraticForm(m) => MapSpec::QuadraticForm {
                matrix: matrix_to_rows(m),
            },
            Node::Partial(index, inner) => MapSpec::Partial {
                index: *index,
                inner: boxed(inner),
            },
        }
    }
}

impl TryFrom<MapSpec> for SmoothMap {
    type Error = Error;

    fn try_from(spec: MapSpec) -> Result<Self> {
        let build = |s: Box<MapSpec>| SmoothMap::try_from(*s);
        match spec {
            MapSpec::Coordinate { index, dim } => SmoothMap::coordinate(index, dim),
            MapSpec::Constant { value, dim } => Ok(SmoothMap::constant(value, dim)),
            MapSpec::Sum { terms } => {
                SmoothMap::sum(terms.into_iter().map(SmoothMap::try_from).collect::<Result<_>>()?)
            }
            MapSpec::Product { factors } => {
                SmoothMap::product(factors.into_iter().map(SmoothMap::try_from).collect::<Result<_>>()?)
            }
            MapSpec::Scale { factor, inner } => Ok(build(inner)?.scale(factor)),
            MapSpec::Power { exponent, inner } => Ok(build(inner)?.power(exponent)),
            MapSpec::AffinePullback { matrix, offset, inner } => {
                build(inner)?.pullback_affine(rows_to_matrix(&matrix)?, offset)
            }
            MapSpec::Univariate { function, inner } => SmoothMap::univariate(function, &build(inner)?),
            MapSpec::QuadraticForm { matrix } => SmoothMap::quadratic_form(rows_to_matrix(&matrix)?),
            MapSpec::Partial { index, inner } => build(inner)?.partial(index),
            MapSpec::Bump { var, r, eps, dim } => SmoothMap::bump(var, r, eps, dim),
            MapSpec::Radial { function, vars, dim } => SmoothMap::radial(function, &vars, dim),
        }
    }
}

impl Serialize for SmoothMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MapSpec::from(self.clone()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SmoothMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = MapSpec::deserialize(deserializer)?;
        SmoothMap::try_from(spec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn minkowski_square() {
        let eta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0, -1.0, -1.0]));
        let f = SmoothMap::quadratic_form(eta).unwrap();
        assert_eq!(f.eval(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(f.eval(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            f.eval(&[1.0]),
            Err(Error::DimensionMismatch { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn bump_values() {
        let chi = SmoothMap::bump(0, 1.0, 1.0, 1).unwrap();
        assert_eq!(chi.eval(&[0.0]).unwrap(), 1.0);
        assert_eq!(chi.eval(&[2.5]).unwrap(), 0.0);
        let mid = chi.eval(&[1.5]).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        // the step is symmetric about s = 1/2
        assert!((mid - 0.5).abs() < 1e-15);
        assert_eq!(chi.eval(&[-1.3]).unwrap(), chi.eval(&[1.3]).unwrap());
        assert!(SmoothMap::bump(0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn bump_is_strictly_decreasing_on_the_ramp() {
        let chi = SmoothMap::bump(0, 1.0, 0.5, 1).unwrap();
        let vals: Vec<f64> = (1..50)
            .map(|k| chi.eval(&[1.0 + 0.5 * k as f64 / 50.0]).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bump_jets_vanish_beyond_support() {
        let chi = SmoothMap::bump(1, 0.5, 0.25, 2).unwrap();
        for order in 0..5 {
            assert!(chi.eval_jet(&[0.3, 0.75], order).unwrap().is_zero());
            assert!(chi.eval_jet(&[0.3, -2.0], order).unwrap().is_zero());
        }
        // plateau is flat too
        let j = chi.eval_jet(&[0.0, 0.2], 4).unwrap();
        assert_eq!(j.value(), 1.0);
        assert!(j.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn quadratic_form_jet() {
        let f = SmoothMap::quadratic_form(DMatrix::identity(2, 2)).unwrap();
        let j = f.eval_jet(&[1.0, 1.0], 2).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.partial(&[1, 0]).unwrap(), 2.0);
        assert_eq!(j.partial(&[0, 1]).unwrap(), 2.0);
        assert_eq!(j.partial(&[2, 0]).unwrap(), 2.0);
        assert_eq!(j.partial(&[1, 1]).unwrap(), 0.0);
        assert_eq!(j.partial(&[0, 2]).unwrap(), 2.0);
    }

    #[test]
    fn exp_of_product_matches_finite_differences() {
        let x = SmoothMap::coordinate(0, 2).unwrap();
        let y = SmoothMap::coordinate(1, 2).unwrap();
        let f = SmoothMap::univariate(Elementary::Exp, &(&x * &y)).unwrap();
        let j = f.eval_jet(&[1.0, 1.0], 2).unwrap();
        let h = 1e-4;
        let ev = |a: f64, b: f64| f.eval(&[a, b]).unwrap();
        let fxx = (ev(1.0 + h, 1.0) - 2.0 * ev(1.0, 1.0) + ev(1.0 - h, 1.0)) / (h * h);
        let fxy =
            (ev(1.0 + h, 1.0 + h) - ev(1.0 + h, 1.0 - h) - ev(1.0 - h, 1.0 + h) + ev(1.0 - h, 1.0 - h)) / (4.0 * h * h);
        let fx = (ev(1.0 + h, 1.0) - ev(1.0 - h, 1.0)) / (2.0 * h);
        assert!(close(j.partial(&[1, 0]).unwrap(), fx, 1e-6));
        assert!(close(j.partial(&[2, 0]).unwrap(), fxx, 1e-6));
        assert!(close(j.partial(&[1, 1]).unwrap(), fxy, 1e-6));
    }

    #[test]
    fn pullback_to_the_diagonal() {
        // f(q, q') = q^2 + 3 q q' on R x R, Φ(p, v) = (p - v, p + v)
        let q = SmoothMap::coordinate(0, 2).unwrap();
        let qp = SmoothMap::coordinate(1, 2).unwrap();
        let f = &(&q * &q) + &(&q * &qp).scale(3.0);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let g = f.pullback_affine(phi, vec![0.0, 0.0]).unwrap();
        for p in [-1.0, 0.3, 2.0] {
            assert_eq!(g.eval(&[p, 0.0]).unwrap(), f.eval(&[p, p]).unwrap());
        }
        let id = f.pullback_affine(DMatrix::identity(2, 2), vec![0.0, 0.0]).unwrap();
        assert_eq!(id.eval(&[0.4, -0.9]).unwrap(), f.eval(&[0.4, -0.9]).unwrap());
        assert!(f.pullback_affine(DMatrix::identity(3, 3), vec![0.0; 3]).is_err());
    }

    #[test]
    fn partial_node_differentiates() {
        let x = SmoothMap::coordinate(0, 2).unwrap();
        let y = SmoothMap::coordinate(1, 2).unwrap();
        let f = &(&(&x * &x) * &y) + &y.power(3);
        let fx = f.partial(0).unwrap();
        let fxy = fx.partial(1).unwrap();
        assert_eq!(fx.eval(&[2.0, 3.0]).unwrap(), 12.0);
        assert_eq!(fxy.eval(&[2.0, 3.0]).unwrap(), 4.0);
        let j = fx.eval_jet(&[2.0, 3.0], 2).unwrap();
        assert_eq!(j.partial(&[1, 1]).unwrap(), 2.0);
    }

    #[test]
    fn support_propagation() {
        let a = SmoothMap::bump(0, 1.0, 1.0, 3).unwrap();
        let b = SmoothMap::bump(1, 1.0, 1.0, 3).unwrap();
        let prod = &a * &b;
        let s = prod.support().unwrap();
        assert_eq!(s.vars, vec![0, 1]);
        assert!((s.radius - 8f64.sqrt()).abs() < 1e-15);
        assert!((&a + &b).support().is_none());
        let r = SmoothMap::radial(Elementary::RadialBump { r: 1.0, eps: 0.5 }, &[1, 2], 3).unwrap();
        assert_eq!((&r + &r.scale(2.0)).support().unwrap().radius, 1.5);
        assert_eq!(
            (&r * &SmoothMap::coordinate(0, 3).unwrap()).support().unwrap().radius,
            1.5
        );
        assert!(SmoothMap::radial(Elementary::Exp, &[0], 3).is_err());
    }

    #[test]
    fn spec_round_trip_keeps_support() {
        let r = SmoothMap::radial(Elementary::RadialBump { r: 1.0, eps: 0.5 }, &[1, 2], 3).unwrap();
        let b = SmoothMap::bump(0, 0.5, 0.5, 3).unwrap();
        let f = &(&r * &b) + &SmoothMap::coordinate(2, 3).unwrap().partial(2).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let g: SmoothMap = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&g).unwrap(), json);
        assert_eq!(g.eval(&[0.2, 0.3, -0.4]).unwrap(), f.eval(&[0.2, 0.3, -0.4]).unwrap());
        let rb: SmoothMap = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(rb.support(), r.support());
    }

    #[test]
    fn ball_profiles_near_the_boundary() {
        let decay = Elementary::BallDecay { r: 0.5, eps: 0.5 };
        let shear = Elementary::BallShear { r: 0.5, eps: 0.5 };
        // u = t^2 with t within 0.01 of the outer radius 1
        let u = 0.995f64.powi(2);
        let c = decay.taylor(u, 4);
        assert!(c.iter().all(|x| x.abs() < 1e-8), "{c:?}");
        assert!(decay.taylor(1.0, 4).iter().all(|&x| x == 0.0));
        // the shear saturates at 1/u and only the product with the decay is flat
        assert!((shear.taylor(u, 0)[0] - 1.0 / u).abs() < 1e-3);
        assert_eq!(shear.taylor(0.2, 2), vec![0.0; 3]);
        assert_eq!(
            Elementary::BallDecay { r: 0.5, eps: 0.5 }.taylor(0.1, 3),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn point_value_is_order_zero_coefficient() {
        let mut rng = crate::sampling::rng(11);
        let f = random_polynomial(&mut rng, 3, &[0, 1, 2], &[0.1, 0.2, 0.3], 0, 3).unwrap();
        let g = SmoothMap::univariate(Elementary::Exp, &f).unwrap();
        let h = &SmoothMap::radial(Elementary::RadialBump { r: 0.3, eps: 0.6 }, &[0, 1], 3).unwrap() * &g;
        for x in [[0.4, -0.2, 0.1], [0.0, 0.5, 0.7], [0.3, 0.3, -0.9]] {
            for order in 0..4 {
                assert_eq!(h.eval(&x).unwrap(), h.eval_jet(&x, order).unwrap().value());
            }
        }
    }
}
