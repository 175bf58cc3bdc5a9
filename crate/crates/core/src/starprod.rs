//! Vertical star products up to a finite order in λ.
//!
//! Products are evaluated on jets in the fiber variables with the base point
//! frozen: every bidifferential operator differentiates fiber directions only,
//! so this is exact. A formal series of jets is a [`JetSeries`]; the product
//! `(F ⋆ G)_m = Σ_{r+s+t=m} C_r(F_s, G_t)` lowers jet order by `r`, so inputs
//! of order `K` give coefficient `m` to order `K - m`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::formal::{FormalSeries, MAX_ORDER};
use crate::jets::Jet;
use crate::poisson::VerticalMultivector;
use crate::sampling;
use crate::smoothfn::{ComplexMap, Observable, SmoothMap};
use crate::{Error, Result};

pub type CJet = Jet<Complex64>;

/// Highest λ-order available for general vertical products.
pub const GENERAL_MAX_ORDER: usize = 2;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Formal series in λ with jet coefficients.
#[derive(Clone, Debug)]
pub struct JetSeries {
    terms: Vec<CJet>,
}

impl JetSeries {
    pub fn new(terms: Vec<CJet>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("empty jet series".into()));
        }
        Ok(JetSeries { terms })
    }

    /// `j` as a series with vanishing higher coefficients.
    pub fn from_jet(j: CJet, lambda_order: usize) -> Self {
        let mut terms = Vec::with_capacity(lambda_order + 1);
        for m in 1..=lambda_order {
            terms.push(j.truncate(j.order().saturating_sub(m)).zero_like());
        }
        terms.insert(0, j);
        JetSeries { terms }
    }

    pub fn lambda_order(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn terms(&self) -> &[CJet] {
        &self.terms
    }

    pub fn term(&self, m: usize) -> &CJet {
        &self.terms[m]
    }

    /// Order-0 coefficients of the jets: the series of values at the base point.
    pub fn values(&self) -> FormalSeries<Complex64> {
        FormalSeries::new(self.terms.iter().map(|j| j.value()).collect()).expect("non-empty")
    }

    fn zip(&self, other: &Self, f: impl Fn(&CJet, &CJet) -> CJet) -> Result<Self> {
        if self.terms.len() != other.terms.len() {
            return Err(Error::Series(crate::formal::SeriesError::OrderMismatch(
                self.lambda_order(),
                other.lambda_order(),
            )));
        }
        let terms = self
            .terms
            .iter()
            .zip(&other.terms)
            .map(|(a, b)| {
                let k = a.order().min(b.order());
                f(&a.truncate(k), &b.truncate(k))
            })
            .collect();
        Ok(JetSeries { terms })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        JetSeries {
            terms: self.terms.iter().map(|j| j.scale(c)).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        JetSeries {
            terms: self.terms.iter().map(|j| j.conj()).collect(),
        }
    }

    /// Adds the scalar series `c` to the constant parts.
    pub fn add_constants(&self, c: &FormalSeries<Complex64>) -> Result<Self> {
        if c.order() != self.lambda_order() {
            return Err(Error::Series(crate::formal::SeriesError::OrderMismatch(
                self.lambda_order(),
                c.order(),
            )));
        }
        Ok(JetSeries {
            terms: self
                .terms
                .iter()
                .zip(c.coeffs())
                .map(|(j, &a)| j.add_scalar(a))
                .collect(),
        })
    }
}

/// One term `coeff · ∂^α a · ∂^β b` of a Moyal operator.
#[derive(Clone, Debug)]
struct MoyalTerm {
    alpha: Vec<u8>,
    beta: Vec<u8>,
    coeff: Complex64,
}

/// Terms of `C_r = (1/r!) (i/2)^r (Σ Θ^{ij} ∂_i ⊗ ∂_j)^r` for `r = 0..=order`.
fn moyal_terms(theta: &DMatrix<f64>, order: usize) -> Vec<Vec<MoyalTerm>> {
    let n = theta.nrows();
    let mut poly: BTreeMap<(Vec<u8>, Vec<u8>), f64> = BTreeMap::new();
    poly.insert((vec![0; n], vec![0; n]), 1.0);
    let mut out = Vec::with_capacity(order + 1);
    let mut prefactor = Complex64::new(1.0, 0.0);
    for r in 0..=order {
        if r > 0 {
            let mut next: BTreeMap<(Vec<u8>, Vec<u8>), f64> = BTreeMap::new();
            for ((a, b), c) in &poly {
                for i in 0..n {
                    for j in 0..n {
                        let t = theta[(i, j)];
                        if t == 0.0 {
                            continue;
                        }
                        let (mut a2, mut b2) = (a.clone(), b.clone());
                        a2[i] += 1;
                        b2[j] += 1;
                        *next.entry((a2, b2)).or_default() += c * t;
                    }
                }
            }
            poly = next;
            prefactor *= I * 0.5 / r as f64;
        }
        out.push(
            poly.iter()
                .filter(|(_, &c)| c != 0.0)
                .map(|((alpha, beta), &c)| MoyalTerm {
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                    coeff: prefactor * c,
                })
                .collect(),
        );
    }
    out
}

#[derive(Clone, Debug)]
pub enum StarMode {
    /// Weyl-Moyal product of a constant antisymmetric matrix.
    MoyalConstant(DMatrix<f64>),
    /// Weyl-Moyal product on each fiber with `Θ` depending on the base point.
    MoyalFiberwise(VerticalMultivector),
    /// Order-2 vertical product of a Poisson bivector.
    GeneralVertical(VerticalMultivector),
}

/// Weights of the order-2 operator
/// `C₂ = a T₁ + b T₂ + c T₃` with
/// `T₁ = θ^{ij}θ^{kl} ∂_i∂_k f ∂_j∂_l g`,
/// `T₂ = (∂_lθ^{ij}) θ^{kl} (∂_i∂_k f ∂_j g - ∂_i f ∂_j∂_k g)` and
/// `T₃ = (∂_lθ^{ij})(∂_jθ^{kl}) ∂_i f ∂_k g`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct C2Weights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Largest associativity defect left by the least-squares fit.
    pub residual: f64,
}

impl C2Weights {
    pub const MOYAL: C2Weights = C2Weights {
        a: -0.125,
        b: 0.0,
        c: 0.0,
        residual: 0.0,
    };
}

/// Test data for [`solve_c2`]: monomial triples evaluated at points.
#[derive(Clone, Debug)]
pub struct C2Plan {
    pub points: Vec<Vec<f64>>,
    pub triples: usize,
    pub max_degree: u32,
    pub seed: u64,
}

impl C2Plan {
    /// Points in the support ball (or the unit ball) at base point 0.
    pub fn default_for(theta: &VerticalMultivector) -> Self {
        let n = theta.fiber_dim();
        let radius = theta.support_radius().unwrap_or(1.0);
        C2Plan {
            points: VerticalMultivector::sample_plan(&vec![0.0; theta.base_dim()], n, radius, 24, 0),
            triples: 8,
            max_degree: 3,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StarProduct {
    n: usize,
    mode: StarMode,
    lambda_order: usize,
    jet_order: usize,
    weights: C2Weights,
    constant_terms: Option<Vec<Vec<MoyalTerm>>>,
}

/// Bivector data at one point.
enum ThetaAt<'a> {
    Moyal(std::borrow::Cow<'a, [Vec<MoyalTerm>]>),
    /// Full antisymmetric matrix of coefficient jets (`None` for zero entries).
    Jets(Vec<Vec<Option<CJet>>>),
}

fn check_theta(theta: &VerticalMultivector) -> Result<()> {
    if theta.degree() != 2 || theta.base_dim() != theta.fiber_dim() {
        return Err(Error::InvalidArgument(format!(
            "star products need a bivector on TM, got degree {} with base {} and fiber {}",
            theta.degree(),
            theta.base_dim(),
            theta.fiber_dim()
        )));
    }
    Ok(())
}

impl StarProduct {
    fn build(n: usize, mode: StarMode, lambda_order: usize) -> Result<Self> {
        if lambda_order > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order: lambda_order,
                max: MAX_ORDER,
            });
        }
        Ok(StarProduct {
            n,
            mode,
            lambda_order,
            jet_order: 2 * lambda_order,
            weights: C2Weights::MOYAL,
            constant_terms: None,
        })
    }

    pub fn moyal_constant(theta: &DMatrix<f64>, lambda_order: usize) -> Result<Self> {
        // reuse the validation of the constant lift
        VerticalMultivector::constant(theta)?;
        let mut sp = Self::build(theta.nrows(), StarMode::MoyalConstant(theta.clone()), lambda_order)?;
        sp.constant_terms = Some(moyal_terms(theta, lambda_order));
        Ok(sp)
    }

    /// `theta` must not depend on the fiber variables.
    pub fn moyal_fiberwise(theta: VerticalMultivector, lambda_order: usize) -> Result<Self> {
        check_theta(&theta)?;
        Self::build(theta.fiber_dim(), StarMode::MoyalFiberwise(theta), lambda_order)
    }

    /// Order-2 product of a Poisson bivector with weights from [`solve_c2`].
    pub fn general_vertical(theta: VerticalMultivector, lambda_order: usize) -> Result<Self> {
        let plan = C2Plan::default_for(&theta);
        let weights = solve_c2(&theta, &plan)?;
        Self::general_vertical_with(theta, lambda_order, weights)
    }

    pub fn general_vertical_with(theta: VerticalMultivector, lambda_order: usize, weights: C2Weights) -> Result<Self> {
        check_theta(&theta)?;
        if lambda_order > GENERAL_MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order: lambda_order,
                max: GENERAL_MAX_ORDER,
            });
        }
        let mut sp = Self::build(theta.fiber_dim(), StarMode::GeneralVertical(theta), lambda_order)?;
        sp.weights = weights;
        Ok(sp)
    }

    /// Overrides the jet order (default `2 N_λ`).
    pub fn with_jet_order(mut self, jet_order: usize) -> Result<Self> {
        if jet_order < self.lambda_order {
            return Err(Error::JetOrder {
                have: jet_order,
                need: self.lambda_order,
            });
        }
        self.jet_order = jet_order;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> &StarMode {
        &self.mode
    }

    pub fn lambda_order(&self) -> usize {
        self.lambda_order
    }

    pub fn jet_order(&self) -> usize {
        self.jet_order
    }

    pub fn weights(&self) -> C2Weights {
        self.weights
    }

    /// Support radius of `θ` in the fiber, if declared.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.mode {
            StarMode::MoyalConstant(_) => None,
            StarMode::MoyalFiberwise(t) | StarMode::GeneralVertical(t) => t.support_radius(),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != 2 * self.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Unit vectors along the fiber coordinates of `TM`.
    pub fn fiber_directions(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut d = vec![0.0; 2 * self.n];
                d[self.n + i] = 1.0;
                d
            })
            .collect()
    }

    /// Directions `-e_i ⊕ e_i` in `M x M`: the fiber derivatives after
    /// pulling back along `(p, v) ↦ (p - v, p + v)`.
    pub fn pair_directions(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut d = vec![0.0; 2 * self.n];
                d[i] = -1.0;
                d[self.n + i] = 1.0;
                d
            })
            .collect()
    }

    /// Fiber jet of `f` at `x ∈ TM` as a series.
    pub fn lift(&self, f: &dyn Observable, x: &[f64]) -> Result<JetSeries> {
        self.check_point(x)?;
        let j = f.jet_along(x, &self.fiber_directions(), self.jet_order)?;
        Ok(JetSeries::from_jet(j, self.lambda_order))
    }

    fn theta_at(&self, x: &[f64]) -> Result<ThetaAt<'_>> {
        self.check_point(x)?;
        Ok(match &self.mode {
            StarMode::MoyalConstant(_) => ThetaAt::Moyal(std::borrow::Cow::Borrowed(
                self.constant_terms.as_deref().expect("built with terms"),
            )),
            StarMode::MoyalFiberwise(theta) => ThetaAt::Moyal(std::borrow::Cow::Owned(moyal_terms(
                &theta.matrix_at(x)?,
                self.lambda_order,
            ))),
            StarMode::GeneralVertical(theta) => {
                let dirs = self.fiber_directions();
                let mut m: Vec<Vec<Option<CJet>>> = vec![vec![None; self.n]; self.n];
                for (k, f) in theta.components() {
                    let j = f.jet_along(x, &dirs, self.jet_order)?;
                    if j.is_zero() {
                        continue;
                    }
                    m[k[1]][k[0]] = Some(-&j);
                    m[k[0]][k[1]] = Some(j);
                }
                ThetaAt::Jets(m)
            }
        })
    }

    /// `C_r(a, b)`, truncated to `min(order a, order b) - r`.
    fn c_r(&self, theta: &ThetaAt<'_>, r: usize, a: &CJet, b: &CJet) -> Result<CJet> {
        let k = a.order().min(b.order());
        if k < r {
            return Err(Error::JetOrder { have: k, need: r });
        }
        let (a, b) = (a.truncate(k), b.truncate(k));
        if r == 0 {
            return Ok(&a * &b);
        }
        let target = k - r;
        match theta {
            ThetaAt::Moyal(terms) => {
                let mut da: HashMap<&[u8], CJet> = HashMap::new();
                let mut db: HashMap<&[u8], CJet> = HashMap::new();
                let mut acc = a.truncate(target).zero_like();
                for t in &terms[r] {
                    if !da.contains_key(t.alpha.as_slice()) {
                        da.insert(&t.alpha, a.derivative_multi(&t.alpha)?.truncate(target));
                    }
                    if !db.contains_key(t.beta.as_slice()) {
                        db.insert(&t.beta, b.derivative_multi(&t.beta)?.truncate(target));
                    }
                    let prod = &da[t.alpha.as_slice()] * &db[t.beta.as_slice()];
                    acc = &acc + &prod.scale(t.coeff);
                }
                Ok(acc)
            }
            ThetaAt::Jets(m) => match r {
                1 => Ok(self.c1(m, &a, &b, target)?.scale(I * 0.5)),
                2 => self.c2(m, &a, &b, target),
                _ => Err(Error::UnsupportedOrder {
                    order: r,
                    max: GENERAL_MAX_ORDER,
                }),
            },
        }
    }

    /// `θ^{ij} ∂_i a ∂_j b` to order `target`.
    fn c1(&self, m: &[Vec<Option<CJet>>], a: &CJet, b: &CJet, target: usize) -> Result<CJet> {
        let n = self.n;
        let da: Vec<CJet> = (0..n)
            .map(|i| Ok(a.derivative(i)?.truncate(target)))
            .collect::<Result<_>>()?;
        let db: Vec<CJet> = (0..n)
            .map(|i| Ok(b.derivative(i)?.truncate(target)))
            .collect::<Result<_>>()?;
        let mut acc = a.truncate(target).zero_like();
        for i in 0..n {
            for j in 0..n {
                if let Some(t) = &m[i][j] {
                    acc = &acc + &(&t.truncate(target) * &(&da[i] * &db[j]));
                }
            }
        }
        Ok(acc)
    }

    fn c2(&self, m: &[Vec<Option<CJet>>], a: &CJet, b: &CJet, target: usize) -> Result<CJet> {
        let w = self.weights;
        let parts = c2_parts(self.n, m, a, b, target)?;
        Ok(&(&parts[0].scale(w.a.into()) + &parts[1].scale(w.b.into())) + &parts[2].scale(w.c.into()))
    }

    fn product(&self, theta: &ThetaAt<'_>, a: &JetSeries, b: &JetSeries) -> Result<JetSeries> {
        let n_lambda = self.lambda_order;
        if a.lambda_order() != n_lambda || b.lambda_order() != n_lambda {
            return Err(Error::Series(crate::formal::SeriesError::OrderMismatch(
                a.lambda_order(),
                b.lambda_order(),
            )));
        }
        let mut terms = Vec::with_capacity(n_lambda + 1);
        for m in 0..=n_lambda {
            let mut parts = Vec::new();
            for s in 0..=m {
                for t in 0..=m - s {
                    parts.push(self.c_r(theta, m - s - t, a.term(s), b.term(t))?);
                }
            }
            let k = parts.iter().map(|p| p.order()).min().expect("non-empty");
            let mut acc = parts[0].truncate(k);
            for p in &parts[1..] {
                acc = &acc + &p.truncate(k);
            }
            terms.push(acc);
        }
        Ok(JetSeries { terms })
    }

    /// `A ⋆ B` for jet series at `x ∈ TM` (jets along the fiber directions).
    pub fn star_series(&self, x: &[f64], a: &JetSeries, b: &JetSeries) -> Result<JetSeries> {
        let theta = self.theta_at(x)?;
        self.product(&theta, a, b)
    }

    /// Coefficients of `(f ⋆ g)(x)`.
    pub fn star_at(&self, f: &dyn Observable, g: &dyn Observable, x: &[f64]) -> Result<FormalSeries<Complex64>> {
        let theta = self.theta_at(x)?;
        Ok(self.product(&theta, &self.lift(f, x)?, &self.lift(g, x)?)?.values())
    }

    /// Coefficients of `[f, g]_⋆ (x)`.
    pub fn commutator_at(&self, f: &dyn Observable, g: &dyn Observable, x: &[f64]) -> Result<FormalSeries<Complex64>> {
        let theta = self.theta_at(x)?;
        let (a, b) = (self.lift(f, x)?, self.lift(g, x)?);
        Ok(self
            .product(&theta, &a, &b)?
            .sub(&self.product(&theta, &b, &a)?)?
            .values())
    }

    /// `(f ⋆ g) ⋆ h - f ⋆ (g ⋆ h)` at `x`.
    pub fn associator_at(
        &self,
        f: &dyn Observable,
        g: &dyn Observable,
        h: &dyn Observable,
        x: &[f64],
    ) -> Result<FormalSeries<Complex64>> {
        let theta = self.theta_at(x)?;
        let (a, b, c) = (self.lift(f, x)?, self.lift(g, x)?, self.lift(h, x)?);
        let left = self.product(&theta, &self.product(&theta, &a, &b)?, &c)?;
        let right = self.product(&theta, &a, &self.product(&theta, &b, &c)?)?;
        Ok(left.sub(&right)?.values())
    }

    /// Per-order maximum of the associator over the samples.
    pub fn associativity_defect(
        &self,
        f: &dyn Observable,
        g: &dyn Observable,
        h: &dyn Observable,
        samples: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let per_point: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|x| {
                Ok(self
                    .associator_at(f, g, h, x)?
                    .coeffs()
                    .iter()
                    .map(|c| c.norm())
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(fold_max(self.lambda_order, per_point))
    }

    /// `f ⋆̃ g` at `(q, q')` for functions on `M x M`, differentiating along
    /// the line through `q` and `q'`.
    pub fn pair_picture_star(
        &self,
        f: &dyn Observable,
        g: &dyn Observable,
        qq: &[f64],
    ) -> Result<FormalSeries<Complex64>> {
        self.check_point(qq)?;
        let n = self.n;
        let x: Vec<f64> = (0..n)
            .map(|i| 0.5 * (qq[i] + qq[n + i]))
            .chain((0..n).map(|i| 0.5 * (qq[n + i] - qq[i])))
            .collect();
        let theta = self.theta_at(&x)?;
        let dirs = self.pair_directions();
        let a = JetSeries::from_jet(f.jet_along(qq, &dirs, self.jet_order)?, self.lambda_order);
        let b = JetSeries::from_jet(g.jet_along(qq, &dirs, self.jet_order)?, self.lambda_order);
        Ok(self.product(&theta, &a, &b)?.values())
    }

    /// `max |τ*(f ⋆ g) - τ*f ⋆ τ*g|` per order, `τ(p, v) = (p, -v)`.
    pub fn check_flip_symmetry(&self, pairs: &[(ComplexMap, ComplexMap)], samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        let tau = self.flip_matrix();
        let zero = vec![0.0; 2 * self.n];
        let mut per_point = Vec::new();
        for (f, g) in pairs {
            let (tf, tg) = (f.pullback_affine(&tau, &zero)?, g.pullback_affine(&tau, &zero)?);
            for x in samples {
                let tx: Vec<f64> = (&tau * nalgebra::DVector::from_column_slice(x))
                    .iter()
                    .copied()
                    .collect();
                let lhs = self.star_at(f, g, &tx)?;
                let rhs = self.star_at(&tf, &tg, x)?;
                per_point.push(diff(&lhs, &rhs)?);
            }
        }
        Ok(fold_max(self.lambda_order, per_point))
    }

    fn flip_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2 * self.n, 2 * self.n, |i, j| {
            if i != j {
                0.0
            } else if i < self.n {
                1.0
            } else {
                -1.0
            }
        })
    }

    /// `max |conj(f ⋆ g) - conj(g) ⋆ conj(f)|` per order.
    pub fn check_hermitean(&self, pairs: &[(ComplexMap, ComplexMap)], samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut per_point = Vec::new();
        for (f, g) in pairs {
            let (cf, cg) = (f.conj(), g.conj());
            for x in samples {
                let lhs = self.star_at(f, g, x)?.conjugate();
                let rhs = self.star_at(&cg, &cf, x)?;
                per_point.push(diff(&lhs, &rhs)?);
            }
        }
        Ok(fold_max(self.lambda_order, per_point))
    }

    /// `max |f ⋆ π*u - f π*u|` and `max |π*u ⋆ f - π*u f|` per order, where
    /// each `u` is a function on the base `R^n`.
    pub fn check_verticality(&self, pairs: &[(ComplexMap, SmoothMap)], samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut per_point = Vec::new();
        for (f, u) in pairs {
            let pu = base_lift(u, self.n)?;
            let pu_c = ComplexMap::from(pu.clone());
            let prod = ComplexMap::new(&f.re * &pu, &f.im * &pu)?;
            for x in samples {
                let pointwise = FormalSeries::<Complex64>::constant(prod.value(x)?, self.lambda_order);
                per_point.push(diff(&self.star_at(f, &pu_c, x)?, &pointwise)?);
                per_point.push(diff(&self.star_at(&pu_c, f, x)?, &pointwise)?);
            }
        }
        Ok(fold_max(self.lambda_order, per_point))
    }
}

/// `[T₁, T₂, T₃]` of [`C2Weights`] applied to `a, b`.
fn c2_parts(n: usize, m: &[Vec<Option<CJet>>], a: &CJet, b: &CJet, target: usize) -> Result<[CJet; 3]> {
    let d = |j: &CJet, i: usize| -> Result<CJet> { Ok(j.derivative(i)?) };
    let da: Vec<CJet> = (0..n).map(|i| d(a, i)).collect::<Result<_>>()?;
    let db: Vec<CJet> = (0..n).map(|i| d(b, i)).collect::<Result<_>>()?;
    let dda: Vec<Vec<CJet>> = da
        .iter()
        .map(|j| (0..n).map(|k| Ok(d(j, k)?.truncate(target))).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let ddb: Vec<Vec<CJet>> = db
        .iter()
        .map(|j| (0..n).map(|k| Ok(d(j, k)?.truncate(target))).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let da: Vec<CJet> = da.iter().map(|j| j.truncate(target)).collect();
    let db: Vec<CJet> = db.iter().map(|j| j.truncate(target)).collect();
    let th: Vec<Vec<Option<CJet>>> = m
        .iter()
        .map(|row| row.iter().map(|t| t.as_ref().map(|t| t.truncate(target))).collect())
        .collect();
    // dth[i][j][l] = ∂_l θ^{ij}
    let dth: Vec<Vec<Option<Vec<CJet>>>> = m
        .iter()
        .map(|row| {
            row.iter()
                .map(|t| {
                    t.as_ref()
                        .map(|t| {
                            (0..n)
                                .map(|l| Ok(t.derivative(l)?.truncate(target)))
                                .collect::<Result<Vec<_>>>()
                        })
                        .transpose()
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let zero = a.truncate(target).zero_like();
    let (mut t1, mut t2, mut t3) = (zero.clone(), zero.clone(), zero);
    for i in 0..n {
        for j in 0..n {
            if let Some(tij) = &th[i][j] {
                for k in 0..n {
                    for l in 0..n {
                        if let Some(tkl) = &th[k][l] {
                            t1 = &t1 + &(&(tij * tkl) * &(&dda[i][k] * &ddb[j][l]));
                        }
                    }
                }
            }
            if let Some(dij) = &dth[i][j] {
                for k in 0..n {
                    for l in 0..n {
                        if let Some(tkl) = &th[k][l] {
                            let ops = &(&dda[i][k] * &db[j]) - &(&da[i] * &ddb[j][k]);
                            t2 = &t2 + &(&(&dij[l] * tkl) * &ops);
                        }
                        if let Some(dkl) = &dth[k][l] {
                            t3 = &t3 + &(&(&dij[l] * &dkl[j]) * &(&da[i] * &db[k]));
                        }
                    }
                }
            }
        }
    }
    Ok([t1, t2, t3])
}

fn diff(a: &FormalSeries<Complex64>, b: &FormalSeries<Complex64>) -> Result<Vec<f64>> {
    Ok(a.checked_sub(b)?.coeffs().iter().map(|c| c.norm()).collect())
}

fn fold_max(order: usize, rows: Vec<Vec<f64>>) -> Vec<f64> {
    rows.into_iter().fold(vec![0.0; order + 1], |mut acc, row| {
        for (a, r) in acc.iter_mut().zip(row) {
            *a = a.max(r);
        }
        acc
    })
}

/// `π*u`: a function on the base `R^n` as a function on `TM`.
pub fn base_lift(u: &SmoothMap, n: usize) -> Result<SmoothMap> {
    let mut proj = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        proj[(i, i)] = 1.0;
    }
    u.pullback_affine(proj, vec![0.0; n])
}

/// Fits the weights of the order-2 operator so that the λ² associator vanishes
/// on monomial test triples, taking the minimal-norm least-squares solution.
/// Falls back to the Moyal weights when `θ` vanishes at every test point.
pub fn solve_c2(theta: &VerticalMultivector, plan: &C2Plan) -> Result<C2Weights> {
    check_theta(theta)?;
    let n = theta.fiber_dim();
    let dim = 2 * n;
    let unit = |a, b, c| C2Weights { a, b, c, residual: 0.0 };
    let probes = [
        unit(0.0, 0.0, 0.0),
        unit(1.0, 0.0, 0.0),
        unit(0.0, 1.0, 0.0),
        unit(0.0, 0.0, 1.0),
    ];
    let products: Vec<StarProduct> = probes
        .iter()
        .map(|&w| StarProduct::general_vertical_with(theta.clone(), 2, w)?.with_jet_order(2))
        .collect::<Result<_>>()?;

    let mut rng = sampling::rng(plan.seed);
    let fiber: Vec<usize> = (n..dim).collect();
    let monomials = crate::smoothfn::exponents(n, 1, plan.max_degree);
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for x in &plan.points {
        for _ in 0..plan.triples {
            let mut pick = || -> Result<SmoothMap> {
                use rand::Rng as _;
                let alpha = &monomials[rng.gen_range(0..monomials.len())];
                let powers: Vec<(usize, u32)> = fiber.iter().copied().zip(alpha.iter().copied()).collect();
                SmoothMap::monomial(1.0, &powers, dim)
            };
            let (f, g, h) = (pick()?, pick()?, pick()?);
            let d: Vec<Complex64> = products
                .iter()
                .map(|sp| Ok(*sp.associator_at(&f, &g, &h, x)?.coeff(2)))
                .collect::<Result<_>>()?;
            for part in [|c: Complex64| c.re, |c: Complex64| c.im] {
                rows.push([-part(d[0]), part(d[1] - d[0]), part(d[2] - d[0]), part(d[3] - d[0])]);
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j + 1]);
    let rhs = nalgebra::DVector::from_fn(rows.len(), |i, _| rows[i][0]);
    let scale = a.abs().max();
    if scale == 0.0 {
        return Ok(C2Weights::MOYAL);
    }
    let svd = a.clone().svd(true, true);
    let w = svd
        .solve(&rhs, 1e-8 * scale)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let residual = (&a * &w - &rhs).abs().max();
    if residual > 1e-6 * scale.max(1.0) {
        return Err(Error::Singular(format!(
            "order-2 associativity cannot be met by the ansatz (residual {residual:e}); is θ Poisson?"
        )));
    }
    Ok(C2Weights {
        a: w[0],
        b: w[1],
        c: w[2],
        residual,
    })
}
