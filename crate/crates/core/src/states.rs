//! Deformed point evaluations and what they measure.
//!
//! A [`StateFunctional`] is a convex combination of point masses on `TM`,
//! optionally deformed by the coherent-state operator
//! `S = e^{λΔ_g/4} = Σ_k (1/k!) (λ/4)^k Δ_g^k`, `Δ_g = g^{ij} ∂_{v^i} ∂_{v^j}`,
//! truncated at the product's λ-order.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::formal::{FormalSeries, Sign, ZERO_TOL};
use crate::sampling::{self, Rng};
use crate::smoothfn::{ComplexMap, Observable, SmoothMap};
use crate::starprod::{CJet, JetSeries, StarMode, StarProduct};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct StateFunctional {
    n: usize,
    atoms: Vec<(f64, Vec<f64>)>,
    metric_inv: DMatrix<f64>,
    deformed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Uncertainty {
    /// `4 Var(f) Var(g)`.
    pub lhs: FormalSeries<f64>,
    /// `|ω([f, g]_⋆)|²`.
    pub rhs: FormalSeries<f64>,
    pub sign: Sign,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub function: ComplexMap,
    /// `ω(conj(f) ⋆ f)`.
    pub value: FormalSeries<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityReport {
    pub ok: bool,
    pub checked: usize,
    pub witness: Option<Witness>,
}

fn check_metric(n: usize, metric_inv: &DMatrix<f64>) -> Result<()> {
    if metric_inv.nrows() != n || metric_inv.ncols() != n {
        return Err(Error::Shape(format!(
            "metric must be {n}x{n}, got {}x{}",
            metric_inv.nrows(),
            metric_inv.ncols()
        )));
    }
    if (metric_inv - metric_inv.transpose()).abs().max() > 1e-12 {
        return Err(Error::InvalidArgument("metric must be symmetric".into()));
    }
    if metric_inv.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("metric must be positive definite".into()));
    }
    Ok(())
}

impl StateFunctional {
    /// Coherent-state deformation of the point evaluation at `point = (p, v)`.
    pub fn coherent(point: &[f64], metric_inv: &DMatrix<f64>) -> Result<Self> {
        Self::mixture(vec![(1.0, point.to_vec())], metric_inv, true)
    }

    /// The undeformed point evaluation (`S = id`).
    pub fn delta(point: &[f64]) -> Result<Self> {
        if !point.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument("points of TM have even dimension".into()));
        }
        let n = point.len() / 2;
        Self::mixture(vec![(1.0, point.to_vec())], &DMatrix::identity(n, n), false)
    }

    /// Coherent state at the midpoint picture of the pair `(q, q')`.
    pub fn from_pair(q: &[f64], q_prime: &[f64], metric_inv: &DMatrix<f64>) -> Result<Self> {
        if q.len() != q_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: q_prime.len(),
            });
        }
        let point: Vec<f64> = q
            .iter()
            .zip(q_prime)
            .map(|(a, b)| 0.5 * (a + b))
            .chain(q.iter().zip(q_prime).map(|(a, b)| 0.5 * (b - a)))
            .collect();
        Self::coherent(&point, metric_inv)
    }

    /// Convex combination `Σ w_k ω_{x_k}` of (deformed) point evaluations.
    pub fn mixture(atoms: Vec<(f64, Vec<f64>)>, metric_inv: &DMatrix<f64>, deformed: bool) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidArgument("a state needs at least one point".into()))?;
        if first.1.len() % 2 != 0 {
            return Err(Error::InvalidArgument("points of TM have even dimension".into()));
        }
        let n = first.1.len() / 2;
        for (w, x) in &atoms {
            if x.len() != 2 * n {
                return Err(Error::DimensionMismatch {
                    expected: 2 * n,
                    got: x.len(),
                });
            }
            if !(*w > 0.0) {
                return Err(Error::InvalidArgument(format!("weights must be positive, got {w}")));
            }
        }
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {total}")));
        }
        check_metric(n, metric_inv)?;
        Ok(StateFunctional {
            n,
            atoms,
            metric_inv: metric_inv.clone(),
            deformed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn atoms(&self) -> &[(f64, Vec<f64>)] {
        &self.atoms
    }

    pub fn metric_inv(&self) -> &DMatrix<f64> {
        &self.metric_inv
    }

    pub fn is_deformed(&self) -> bool {
        self.deformed
    }

    fn check_product(&self, sp: &StarProduct) -> Result<()> {
        if sp.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: sp.n(),
            });
        }
        Ok(())
    }

    fn laplacian(&self, j: &CJet) -> Result<CJet> {
        let mut acc: Option<CJet> = None;
        for i in 0..self.n {
            let di = j.derivative(i)?;
            for k in 0..self.n {
                let g = self.metric_inv[(i, k)];
                if g == 0.0 {
                    continue;
                }
                let term = di.derivative(k)?.scale(g.into());
                acc = Some(match acc {
                    None => term,
                    Some(a) => &a + &term,
                });
            }
        }
        Ok(acc.expect("positive definite metric has a nonzero entry"))
    }

    /// `ω` applied to a jet series taken at the atom's base point:
    /// coefficient `r` is `Σ_k (1/k!)(1/4)^k (Δ_g^k F_{r-k})(base)`.
    pub fn apply_at_atom(&self, series: &JetSeries) -> Result<FormalSeries<Complex64>> {
        let order = series.lambda_order();
        let mut out = vec![Complex64::new(0.0, 0.0); order + 1];
        for (s, term) in series.terms().iter().enumerate() {
            let mut j = term.clone();
            let mut factor = 1.0;
            for k in 0..=order - s {
                if k > 0 {
                    if !self.deformed {
                        break;
                    }
                    if j.order() < 2 {
                        return Err(Error::JetOrder {
                            have: term.order(),
                            need: 2 * (order - s),
                        });
                    }
                    j = self.laplacian(&j)?;
                    factor *= 0.25 / k as f64;
                }
                out[s + k] += j.value() * factor;
            }
        }
        Ok(FormalSeries::new(out)?)
    }

    /// `Σ_k w_k ω_{x_k}(F)` where `series(x)` builds the jet series of `F` at `x`.
    pub fn expect_with(
        &self,
        sp: &StarProduct,
        series: impl Fn(&[f64]) -> Result<JetSeries>,
    ) -> Result<FormalSeries<Complex64>> {
        self.check_product(sp)?;
        let mut total = FormalSeries::<Complex64>::constant(Complex64::new(0.0, 0.0), sp.lambda_order());
        for (w, x) in &self.atoms {
            let value = self.apply_at_atom(&series(x)?)?;
            total = total.checked_add(&value.scale((*w).into()))?;
        }
        Ok(total)
    }

    /// `ω(f)`.
    pub fn expect(&self, sp: &StarProduct, f: &dyn Observable) -> Result<FormalSeries<Complex64>> {
        self.expect_with(sp, |x| sp.lift(f, x))
    }

    /// `ω(f ⋆ g)`.
    pub fn expect_product(
        &self,
        sp: &StarProduct,
        f: &dyn Observable,
        g: &dyn Observable,
    ) -> Result<FormalSeries<Complex64>> {
        self.expect_with(sp, |x| sp.star_series(x, &sp.lift(f, x)?, &sp.lift(g, x)?))
    }

    /// `ω(conj(f) ⋆ f)`, real for Hermitean products.
    pub fn expect_square(&self, sp: &StarProduct, f: &dyn Observable) -> Result<FormalSeries<f64>> {
        let value = self.expect_with(sp, |x| {
            let a = sp.lift(f, x)?;
            sp.star_series(x, &a.conj(), &a)
        })?;
        real(&value)
    }

    /// `ω(conj(f - ω(f)) ⋆ (f - ω(f)))`.
    pub fn variance(&self, sp: &StarProduct, f: &dyn Observable) -> Result<FormalSeries<f64>> {
        let mean = self.expect(sp, f)?;
        let shift = -&mean;
        let value = self.expect_with(sp, |x| {
            let a = sp.lift(f, x)?.add_constants(&shift)?;
            sp.star_series(x, &a.conj(), &a)
        })?;
        real(&value)
    }

    pub fn uncertainty_check(&self, sp: &StarProduct, f: &dyn Observable, g: &dyn Observable) -> Result<Uncertainty> {
        let lhs = self.variance(sp, f)?.checked_mul(&self.variance(sp, g)?)?.scale(4.0);
        let c = self
            .expect_product(sp, f, g)?
            .checked_sub(&self.expect_product(sp, g, f)?)?;
        let rhs = real(&c.checked_mul(&c.conjugate())?)?;
        let sign = lhs.checked_sub(&rhs)?.formal_sign(ZERO_TOL);
        Ok(Uncertainty {
            lhs,
            rhs,
            holds: sign != Sign::Negative,
            sign,
        })
    }

    /// Checks formal positivity of `ω(conj(f) ⋆ f)` on `count` draws from
    /// `family`, stopping at the first violation.
    pub fn positivity_scan(
        &self,
        sp: &StarProduct,
        family: &dyn Fn(&mut Rng) -> Result<ComplexMap>,
        count: usize,
        seed: u64,
    ) -> Result<PositivityReport> {
        let mut rng = sampling::rng(seed);
        for checked in 1..=count {
            let f = family(&mut rng)?;
            let value = self.expect_square(sp, &f)?;
            if value.formal_sign(ZERO_TOL) == Sign::Negative {
                return Ok(PositivityReport {
                    ok: false,
                    checked,
                    witness: Some(Witness { function: f, value }),
                });
            }
        }
        Ok(PositivityReport {
            ok: true,
            checked: count,
            witness: None,
        })
    }

    /// Complex polynomials in `v - v_base` of degree 1 to 3 with real and
    /// imaginary coefficients uniform in `[-1, 1]`, `v_base` the fiber point
    /// of the first atom.
    pub fn default_family(&self) -> impl Fn(&mut Rng) -> Result<ComplexMap> + '_ {
        move |rng: &mut Rng| {
            let n = self.n;
            let center = &self.atoms[0].1[n..];
            let vars: Vec<usize> = (n..2 * n).collect();
            let re = crate::smoothfn::random_polynomial(rng, 2 * n, &vars, center, 1, 3)?;
            let im = crate::smoothfn::random_polynomial(rng, 2 * n, &vars, center, 1, 3)?;
            ComplexMap::new(re, im)
        }
    }

    /// Whether positivity of this state for `sp` follows from theory rather
    /// than from scans: Gaussian states over a constant `Θ` need
    /// `g⁻¹ + iΘ ⪰ 0`, and point masses outside a declared support of `θ`
    /// are classical.
    pub fn positivity_guaranteed(&self, sp: &StarProduct) -> bool {
        if let Some(radius) = sp.support_radius() {
            let outside = self.atoms.iter().all(|(_, x)| sampling::norm(&x[self.n..]) >= radius);
            if outside {
                return true;
            }
        }
        match sp.mode() {
            StarMode::MoyalConstant(theta) if self.deformed => {
                let h = DMatrix::from_fn(self.n, self.n, |i, j| {
                    Complex64::new(self.metric_inv[(i, j)], theta[(i, j)])
                });
                h.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12)
            }
            _ => false,
        }
    }
}

fn real(c: &FormalSeries<Complex64>) -> Result<FormalSeries<f64>> {
    let tol = 1e-9 * c.max_abs().max(1.0);
    c.real_within(tol)
        .ok_or_else(|| Error::Numeric(format!("expected a real series, got {:?}", c.coeffs())))
}

/// `f_A(v) = vᵀ A v` on the fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObservable {
    a: DMatrix<f64>,
}

impl QuadraticObservable {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("quadratic observables need a square matrix".into()));
        }
        if (&a - a.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidArgument(
                "quadratic observables need a symmetric matrix".into(),
            ));
        }
        Ok(QuadraticObservable { a })
    }

    /// Minkowski `η = diag(+1, -1, ..., -1)` on `R^n`.
    pub fn eta(n: usize) -> Self {
        let mut d = vec![-1.0; n];
        d[0] = 1.0;
        QuadraticObservable {
            a: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(v);
        v.dot(&(&self.a * &v))
    }

    /// The observable as a function on `TM` (constant in `p`).
    pub fn to_map(&self) -> SmoothMap {
        let n = self.a.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((n, n), (n, n)).copy_from(&self.a);
        SmoothMap::quadratic_form(m).expect("square")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
}

/// Sign of `v₀² - λ - |v⃗|²`, lightlike within `1e-12`.
pub fn causal_class(lambda: f64, v: &[f64]) -> Result<CausalClass> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let (t, x) = v
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty vector".into()))?;
    let q = t * t - lambda - x.iter().map(|c| c * c).sum::<f64>();
    Ok(if q.abs() <= 1e-12 {
        CausalClass::Lightlike
    } else if q > 0.0 {
        CausalClass::Timelike
    } else {
        CausalClass::Spacelike
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConePoint {
    pub spatial_norm: f64,
    pub v0: f64,
    /// Collapsed expectation of the Lorentz square at the root.
    pub residual: f64,
}

/// Symplectic pairing `(0,1), (2,3), ...` on `R^n`.
pub fn standard_symplectic(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for a in (0..n.saturating_sub(1)).step_by(2) {
        m[(a, a + 1)] = 1.0;
        m[(a + 1, a)] = -1.0;
    }
    m
}

/// Positive root `v₀` of the deformed Lorentz square `λ ↦ ω(f_η)` collapsed at
/// `lambda`, for `v = (v₀, s, 0, 0)` in four dimensions with the coherent
/// state over the standard symplectic Moyal product.
pub fn lightcone_profile(lambda: f64, spatial_norms: &[f64]) -> Result<Vec<ConePoint>> {
    let n = 4;
    let sp = StarProduct::moyal_constant(&standard_symplectic(n), 1)?;
    lightcone_roots(&sp, Some(&DMatrix::identity(n, n)), lambda, spatial_norms)
}

/// Positive root `v₀` of `ω(f_η)` at `v = (v₀, s, 0, ...)` over the base
/// origin, collapsed at `lambda`. `metric_inv = None` uses the undeformed
/// point evaluation.
pub fn lightcone_roots(
    sp: &StarProduct,
    metric_inv: Option<&DMatrix<f64>>,
    lambda: f64,
    spatial_norms: &[f64],
) -> Result<Vec<ConePoint>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let n = sp.n();
    if n < 2 {
        return Err(Error::InvalidArgument("the light cone needs n >= 2".into()));
    }
    let f = QuadraticObservable::eta(n).to_map();
    let square = |v0: f64, s: f64| -> Result<f64> {
        let mut point = vec![0.0; 2 * n];
        point[n] = v0;
        point[n + 1] = s;
        let state = match metric_inv {
            Some(g) => StateFunctional::coherent(&point, g)?,
            None => StateFunctional::delta(&point)?,
        };
        Ok(state.expect(sp, &f)?.re().eval_at(lambda))
    };
    spatial_norms
        .iter()
        .map(|&s| {
            if s < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "spatial norm must be non-negative, got {s}"
                )));
            }
            let mut lo = 0.0;
            let mut hi = s.max(1.0);
            while square(hi, s)? <= 0.0 {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Numeric("no sign change for the light-cone root".into()));
                }
            }
            if square(lo, s)? > 0.0 {
                return Err(Error::Numeric(format!(
                    "no light-cone root at |v| = {s}: the time axis is timelike"
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if square(mid, s)? <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let v0 = if square(lo, s)?.abs() <= square(hi, s)?.abs() {
                lo
            } else {
                hi
            };
            let residual = square(v0, s)?;
            if residual.abs() > 1e-12 * v0.max(1.0).powi(2) {
                return Err(Error::Numeric(format!("light-cone residual {residual:e} at |v| = {s}")));
            }
            Ok(ConePoint {
                spatial_norm: s,
                v0,
                residual,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::VerticalMultivector;

    fn id(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    fn coord(i: usize, dim: usize) -> SmoothMap {
        SmoothMap::coordinate(i, dim).unwrap()
    }

    fn close(a: &FormalSeries<f64>, b: &[f64], tol: f64) -> bool {
        a.coeffs().len() == b.len() && a.coeffs().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalization_and_classical_limit() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2).unwrap();
        let x = [0.3, -0.4, 0.7, 0.2];
        let w = StateFunctional::coherent(&x, &id(2)).unwrap();
        let one = SmoothMap::constant(1.0, 4);
        let e = w.expect(&sp, &one).unwrap();
        assert_eq!(e.re().coeffs(), &[1.0, 0.0, 0.0]);
        let f = &(&coord(2, 4) * &coord(3, 4)) + &coord(0, 4);
        let classical = StarProduct::moyal_constant(&standard_symplectic(2), 0).unwrap();
        assert_eq!(w.expect(&classical, &f).unwrap().coeff(0).re, f.eval(&x).unwrap());
    }

    #[test]
    fn lorentz_square_offset() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(4), 2).unwrap();
        let f = QuadraticObservable::eta(4).to_map();
        let w = StateFunctional::coherent(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], &id(4)).unwrap();
        assert!(close(&w.expect(&sp, &f).unwrap().re(), &[1.0, -1.0, 0.0], 1e-12));
        let origin = StateFunctional::coherent(&[0.0; 8], &id(4)).unwrap();
        assert!(close(&origin.expect(&sp, &f).unwrap().re(), &[0.0, -1.0, 0.0], 1e-12));
    }

    #[test]
    fn coordinate_variance_and_uncertainty() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2).unwrap();
        let w = StateFunctional::coherent(&[0.0; 4], &id(2)).unwrap();
        let (f, g) = (coord(2, 4), coord(3, 4));
        assert!(close(&w.variance(&sp, &f).unwrap(), &[0.0, 0.5, 0.0], 1e-12));
        let u = w.uncertainty_check(&sp, &f, &g).unwrap();
        assert!(close(&u.lhs, &[0.0, 0.0, 1.0], 1e-12));
        assert!(close(&u.rhs, &[0.0, 0.0, 1.0], 1e-12));
        assert!(u.holds);
        assert_eq!(u.sign, Sign::Zero);
        let same = w.uncertainty_check(&sp, &f, &f).unwrap();
        assert!(same.rhs.max_abs() < 1e-15 && same.holds);
        let constant = SmoothMap::constant(3.0, 4);
        assert!(w.variance(&sp, &constant).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn bare_delta_is_not_positive() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2).unwrap();
        let z = ComplexMap::new(coord(2, 4), coord(3, 4)).unwrap();
        let delta = StateFunctional::delta(&[0.0; 4]).unwrap();
        let value = delta.expect_square(&sp, &z).unwrap();
        assert!(close(&value, &[0.0, -1.0, 0.0], 1e-12));
        let coherent = StateFunctional::coherent(&[0.0; 4], &id(2)).unwrap();
        assert_eq!(
            coherent.expect_square(&sp, &z).unwrap().formal_sign(ZERO_TOL),
            Sign::Zero
        );
        assert_eq!(
            coherent.expect_square(&sp, &z.conj()).unwrap().formal_sign(ZERO_TOL),
            Sign::Positive
        );
    }

    #[test]
    fn scans() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2).unwrap();
        let delta = StateFunctional::delta(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let report = delta.positivity_scan(&sp, &delta.default_family(), 500, 1).unwrap();
        assert!(!report.ok);
        assert!(report.witness.is_some());
        let coherent = StateFunctional::coherent(&[0.1, 0.2, 0.3, 0.4], &id(2)).unwrap();
        assert!(
            coherent
                .positivity_scan(&sp, &coherent.default_family(), 200, 1)
                .unwrap()
                .ok
        );
        assert!(coherent.positivity_guaranteed(&sp));
        let squeezed = StateFunctional::coherent(&[0.0; 4], &id(2).scale(0.5)).unwrap();
        assert!(!squeezed.positivity_guaranteed(&sp));
    }

    #[test]
    fn far_from_the_support_nothing_is_deformed() {
        let theta = VerticalMultivector::ball_compact(&standard_symplectic(2), 0.5, 0.5).unwrap();
        let sp = StarProduct::general_vertical(theta, 2).unwrap();
        let x = [0.0, 0.0, 1.2, -0.3];
        let w = StateFunctional::delta(&x).unwrap();
        let (f, g) = (&coord(2, 4) * &coord(3, 4), coord(3, 4).power(2));
        let fg = &f * &g;
        assert_eq!(w.expect_product(&sp, &f, &g).unwrap(), w.expect(&sp, &fg).unwrap());
        assert!(w.positivity_guaranteed(&sp));
    }

    #[test]
    fn mixtures_are_linear() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2).unwrap();
        let (a, b) = ([0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]);
        let f = &coord(2, 4).power(2) + &coord(3, 4).power(3);
        let mix = StateFunctional::mixture(vec![(0.25, a.to_vec()), (0.75, b.to_vec())], &id(2), true).unwrap();
        let wa = StateFunctional::coherent(&a, &id(2)).unwrap().expect(&sp, &f).unwrap();
        let wb = StateFunctional::coherent(&b, &id(2)).unwrap().expect(&sp, &f).unwrap();
        let expected = &wa.scale(0.25.into()) + &wb.scale(0.75.into());
        assert!((&mix.expect(&sp, &f).unwrap() - &expected).max_abs() < 1e-14);
        assert!(StateFunctional::mixture(vec![(0.5, a.to_vec())], &id(2), true).is_err());
        assert!(StateFunctional::coherent(&a, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn jet_order_must_cover_the_laplacians() {
        let sp = StarProduct::moyal_constant(&standard_symplectic(2), 2)
            .unwrap()
            .with_jet_order(2)
            .unwrap();
        let w = StateFunctional::coherent(&[0.0; 4], &id(2)).unwrap();
        assert!(matches!(w.expect(&sp, &coord(2, 4)), Err(Error::JetOrder { .. })));
    }

    #[test]
    fn causal_classes_and_cone() {
        assert_eq!(causal_class(0.5, &[1.0, 0.0, 0.0, 0.0]).unwrap(), CausalClass::Timelike);
        assert_eq!(
            causal_class(0.01, &[1.0, 1.0, 0.0, 0.0]).unwrap(),
            CausalClass::Spacelike
        );
        assert_eq!(causal_class(0.0, &[0.0; 4]).unwrap(), CausalClass::Lightlike);
        assert!(causal_class(-1.0, &[0.0; 4]).is_err());
        let cone = lightcone_profile(0.01, &[0.0, 0.1]).unwrap();
        assert!((cone[0].v0 - 0.1).abs() < 1e-12);
        assert!((cone[1].v0 - 0.02f64.sqrt()).abs() < 1e-12);
        let classical = lightcone_profile(0.0, &[0.0, 0.7]).unwrap();
        assert_eq!(classical[0].v0, 0.0);
        assert!((classical[1].v0 - 0.7).abs() < 1e-15);
        assert!(lightcone_profile(-0.1, &[0.0]).is_err());
    }
}
