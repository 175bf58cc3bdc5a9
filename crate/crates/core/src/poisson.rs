//! Vertical multivector fields on `TM = R^n x R^n`.
//!
//! A degree-`k` field is stored as a map from strictly increasing fiber index
//! tuples `(i_1 < ... < i_k)` to coefficient functions of `(p, v)`; only fiber
//! directions can appear, so verticality holds by construction. After
//! [`VerticalMultivector::restrict_to_fiber`] the base part is empty and the
//! coefficients are functions of `v` alone.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::sampling;
use crate::smoothfn::{Elementary, Observable, SmoothMap};
use crate::{Error, Result};

/// Tolerance for the antisymmetry check of user supplied matrices.
const ANTISYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct VerticalMultivector {
    base_dim: usize,
    fiber_dim: usize,
    degree: usize,
    components: BTreeMap<Vec<usize>, SmoothMap>,
    support_radius: Option<f64>,
}

/// `ξ_a ξ_b` in the Grassmann algebra: the sorted index tuple and the sign of
/// the sorting permutation, or `None` if an index repeats.
fn merge(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut all: Vec<usize> = a.iter().chain(b).copied().collect();
    let mut inversions = 0usize;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            match all[i].cmp(&all[j]) {
                std::cmp::Ordering::Greater => inversions += 1,
                std::cmp::Ordering::Equal => return None,
                std::cmp::Ordering::Less => {}
            }
        }
    }
    all.sort_unstable();
    Some((all, if inversions.is_multiple_of(2) { 1.0 } else { -1.0 }))
}

/// One term `sign · X^I · ∂_{v^i} Y^J` contributing to component `target`.
struct BracketTerm<'a> {
    target: Vec<usize>,
    sign: f64,
    x: &'a [usize],
    i: usize,
    y: &'a [usize],
}

/// Terms of `Σ_i (X ←∂/∂ξ_i)(∂Y/∂v^i)`, each scaled by `factor`.
fn half_bracket<'a>(
    xs: &'a BTreeMap<Vec<usize>, SmoothMap>,
    ys: &'a BTreeMap<Vec<usize>, SmoothMap>,
    factor: f64,
    out: &mut Vec<BracketTerm<'a>>,
) {
    for x in xs.keys() {
        let k = x.len();
        for (p, &i) in x.iter().enumerate() {
            // right derivative moves ξ_i past the k - 1 - p factors after it
            let s1 = if (k - 1 - p) % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<usize> = x.iter().copied().filter(|&j| j != i).collect();
            for y in ys.keys() {
                if let Some((target, s2)) = merge(&rest, y) {
                    out.push(BracketTerm {
                        target,
                        sign: factor * s1 * s2,
                        x,
                        i,
                        y,
                    });
                }
            }
        }
    }
}

fn check_antisymmetric(theta: &DMatrix<f64>) -> Result<()> {
    if !theta.is_square() {
        return Err(Error::Shape(format!(
            "Theta must be square, got {}x{}",
            theta.nrows(),
            theta.ncols()
        )));
    }
    let violation = (theta + theta.transpose()).abs().max();
    if violation > ANTISYMMETRY_TOL {
        return Err(Error::NotAntisymmetric(violation));
    }
    Ok(())
}

impl VerticalMultivector {
    /// Builds a field from its components, dropping identically zero ones.
    /// The support radius is the largest declared radius if every component
    /// declares support in exactly the fiber variables.
    pub fn from_components(
        base_dim: usize,
        fiber_dim: usize,
        degree: usize,
        components: BTreeMap<Vec<usize>, SmoothMap>,
    ) -> Result<Self> {
        let dim = base_dim + fiber_dim;
        let fiber_vars: Vec<usize> = (base_dim..dim).collect();
        let mut kept = BTreeMap::new();
        let mut radius: Option<f64> = Some(0.0);
        for (index, f) in components {
            if index.len() != degree || index.windows(2).any(|w| w[0] >= w[1]) || index.iter().any(|&i| i >= fiber_dim)
            {
                return Err(Error::InvalidArgument(format!(
                    "component index {index:?} is not an increasing {degree}-tuple below {fiber_dim}"
                )));
            }
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.dim(),
                });
            }
            if f.is_constant_zero() {
                continue;
            }
            radius = match (radius, f.support()) {
                (Some(r), Some(s)) if s.vars == fiber_vars => Some(r.max(s.radius)),
                _ => None,
            };
            kept.insert(index, f);
        }
        if kept.is_empty() {
            radius = None;
        }
        Ok(VerticalMultivector {
            base_dim,
            fiber_dim,
            degree,
            components: kept,
            support_radius: radius,
        })
    }

    pub fn zero(n: usize, degree: usize) -> Self {
        VerticalMultivector {
            base_dim: n,
            fiber_dim: n,
            degree,
            components: BTreeMap::new(),
            support_radius: None,
        }
    }

    /// Vertical lift of a constant antisymmetric matrix: `θ = ½ Θ^{ij} ∂_i ∧ ∂_j`.
    pub fn constant(theta: &DMatrix<f64>) -> Result<Self> {
        check_antisymmetric(theta)?;
        let n = theta.nrows();
        let mut comps = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                comps.insert(vec![i, j], SmoothMap::constant(theta[(i, j)], 2 * n));
            }
        }
        Self::from_components(n, n, 2, comps)
    }

    /// A bivector whose coefficients depend on the base point only; entries
    /// are functions on `R^n` keyed by `(i, j)` with `i < j`.
    pub fn fiberwise(n: usize, entries: BTreeMap<(usize, usize), SmoothMap>) -> Result<Self> {
        let mut lift = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            lift[(i, i)] = 1.0;
        }
        let mut comps = BTreeMap::new();
        for ((i, j), f) in entries {
            comps.insert(vec![i, j], f.pullback_affine(lift.clone(), vec![0.0; n])?);
        }
        Self::from_components(n, n, 2, comps)
    }

    /// Linear Poisson structure `θ^{ij}(v) = c^{ij}_k v^k` of a fiberwise Lie
    /// algebra, with `structure[i][j][k] = c^{ij}_k`.
    pub fn lie_linear(structure: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = structure.len();
        let mut comps = BTreeMap::new();
        if structure.iter().any(|s| s.len() != n || s.iter().any(|c| c.len() != n)) {
            return Err(Error::Shape("structure constants must be n x n x n".into()));
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d = structure[i][j][k] + structure[j][i][k];
                    if d.abs() > ANTISYMMETRY_TOL {
                        return Err(Error::NotAntisymmetric(d.abs()));
                    }
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let mut weights = vec![0.0; 2 * n];
                weights[n..].copy_from_slice(&structure[i][j]);
                comps.insert(vec![i, j], SmoothMap::linear(&weights));
            }
        }
        Self::from_components(n, n, 2, comps)
    }

    /// Structure constants `ε_{ijk}` of `so(3)`.
    pub fn so3_structure() -> Vec<Vec<Vec<f64>>> {
        let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            c[i][j][k] = 1.0;
            c[j][i][k] = -1.0;
        }
        c
    }

    /// `θ = ½ Θ^{αβ} X_α ∧ X_β` with the pairwise commuting fields
    /// `X_α = χ(v^α) ∂_α`, so `θ^{αβ} = Θ^{αβ} χ(v^α) χ(v^β)`.
    pub fn commuting_compact(theta: &DMatrix<f64>, r: f64, eps: f64) -> Result<Self> {
        check_antisymmetric(theta)?;
        let n = theta.nrows();
        let bumps: Vec<SmoothMap> = (0..n)
            .map(|a| SmoothMap::bump(n + a, r, eps, 2 * n))
            .collect::<Result<_>>()?;
        let mut comps = BTreeMap::new();
        for a in 0..n {
            for b in a + 1..n {
                if theta[(a, b)] != 0.0 {
                    comps.insert(
                        vec![a, b],
                        SmoothMap::product(vec![
                            SmoothMap::constant(theta[(a, b)], 2 * n),
                            bumps[a].clone(),
                            bumps[b].clone(),
                        ])?,
                    );
                }
            }
        }
        Self::from_components(n, n, 2, comps)
    }

    /// Pushforward of the constant `Θ` along a radial diffeomorphism of the
    /// whole fiber onto the open ball of radius `r + eps`, extended by zero.
    /// Equals `Θ` on the ball of radius `r`.
    pub fn ball_compact(theta: &DMatrix<f64>, r: f64, eps: f64) -> Result<Self> {
        check_antisymmetric(theta)?;
        let n = theta.nrows();
        let dim = 2 * n;
        let fiber: Vec<usize> = (n..dim).collect();
        let decay = SmoothMap::radial(Elementary::BallDecay { r, eps }, &fiber, dim)?;
        let shear = SmoothMap::radial(Elementary::BallShear { r, eps }, &fiber, dim)?;
        let v: Vec<SmoothMap> = (0..n)
            .map(|i| SmoothMap::coordinate(n + i, dim))
            .collect::<Result<_>>()?;
        // lin[j] = (vᵀΘ)_j = -(Θv)_j
        let lin: Vec<SmoothMap> = (0..n)
            .map(|j| {
                let mut w = vec![0.0; dim];
                for k in 0..n {
                    w[n + k] = theta[(k, j)];
                }
                SmoothMap::linear(&w)
            })
            .collect();
        let mut comps = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                let cross = &(&v[i] * &lin[j]) - &(&lin[i] * &v[j]);
                let inner = &SmoothMap::constant(theta[(i, j)], dim) - &(&shear * &cross);
                comps.insert(vec![i, j], &decay * &inner);
            }
        }
        Self::from_components(n, n, 2, comps)
    }

    /// `θ = χ(|v|) Θ`. Poisson for two-dimensional fibers only.
    pub fn radial_scaled(theta: &DMatrix<f64>, r: f64, eps: f64) -> Result<Self> {
        check_antisymmetric(theta)?;
        let n = theta.nrows();
        let fiber: Vec<usize> = (n..2 * n).collect();
        let chi = SmoothMap::radial(Elementary::RadialBump { r, eps }, &fiber, 2 * n)?;
        let mut comps = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                if theta[(i, j)] != 0.0 {
                    comps.insert(vec![i, j], chi.scale(theta[(i, j)]));
                }
            }
        }
        Self::from_components(n, n, 2, comps)
    }

    /// Vertical vector field `Σ_i X^i ∂_{v^i}`.
    pub fn vector_field(n: usize, coefficients: Vec<SmoothMap>) -> Result<Self> {
        if coefficients.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: coefficients.len(),
            });
        }
        let comps = coefficients
            .into_iter()
            .enumerate()
            .map(|(i, f)| (vec![i], f))
            .collect();
        Self::from_components(n, n, 1, comps)
    }

    /// A function viewed as a degree-0 field.
    pub fn function(n: usize, f: SmoothMap) -> Result<Self> {
        Self::from_components(n, n, 0, BTreeMap::from([(Vec::new(), f)]))
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    /// Number of variables of the coefficient functions.
    pub fn dim(&self) -> usize {
        self.base_dim + self.fiber_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> &BTreeMap<Vec<usize>, SmoothMap> {
        &self.components
    }

    pub fn component(&self, index: &[usize]) -> Option<&SmoothMap> {
        self.components.get(index)
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    /// Fiber variable indices within the coefficient functions' domain.
    pub fn fiber_vars(&self) -> Vec<usize> {
        (self.base_dim..self.dim()).collect()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.base_dim != other.base_dim || self.fiber_dim != other.fiber_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    fn collect(&self, degree: usize, terms: BTreeMap<Vec<usize>, Vec<SmoothMap>>) -> Result<Self> {
        let comps = terms
            .into_iter()
            .map(|(k, ts)| Ok((k, SmoothMap::sum(ts)?)))
            .collect::<Result<_>>()?;
        Self::from_components(self.base_dim, self.fiber_dim, degree, comps)
    }

    pub fn wedge(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let degree = self.degree + other.degree;
        let mut terms: BTreeMap<Vec<usize>, Vec<SmoothMap>> = BTreeMap::new();
        for (a, fa) in &self.components {
            for (b, fb) in &other.components {
                if let Some((k, s)) = merge(a, b) {
                    terms.entry(k).or_default().push((fa * fb).scale(s));
                }
            }
        }
        self.collect(degree, terms)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        if self.degree != other.degree {
            return Err(Error::InvalidArgument("sum of fields of different degree".into()));
        }
        let mut terms: BTreeMap<Vec<usize>, Vec<SmoothMap>> = BTreeMap::new();
        for (k, f) in self.components.iter().chain(&other.components) {
            terms.entry(k.clone()).or_default().push(f.clone());
        }
        self.collect(self.degree, terms)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let comps = self
            .components
            .iter()
            .map(|(k, f)| (k.clone(), f.scale(factor)))
            .collect();
        Self::from_components(self.base_dim, self.fiber_dim, self.degree, comps).expect("same shape")
    }

    /// `(-1)^{(k-1)(l-1)}`.
    fn swap_sign(&self, other: &Self) -> f64 {
        if ((self.degree + 1) * (other.degree + 1)).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Schouten-Nijenhuis bracket as an expression tree.
    pub fn schouten(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        if self.degree + other.degree == 0 {
            return Err(Error::InvalidArgument("bracket of two functions".into()));
        }
        let degree = self.degree + other.degree - 1;
        let mut terms: BTreeMap<Vec<usize>, Vec<SmoothMap>> = BTreeMap::new();
        let forward = {
            let mut out = Vec::new();
            half_bracket(&self.components, &other.components, 1.0, &mut out);
            out
        };
        let backward = {
            let mut out = Vec::new();
            half_bracket(&other.components, &self.components, -self.swap_sign(other), &mut out);
            out
        };
        for (t, (xs, ys)) in forward
            .iter()
            .map(|t| (t, (&self.components, &other.components)))
            .chain(backward.iter().map(|t| (t, (&other.components, &self.components))))
        {
            let dy = &ys[t.y];
            if matches!(dy.node(), crate::smoothfn::Node::Constant(_)) {
                continue;
            }
            let term = (&xs[t.x] * &dy.partial(self.base_dim + t.i)?).scale(t.sign);
            terms.entry(t.target.clone()).or_default().push(term);
        }
        self.collect(degree, terms)
    }

    /// Component values at a point of the coefficient domain.
    pub fn values_at(&self, x: &[f64]) -> Result<BTreeMap<Vec<usize>, f64>> {
        self.components
            .iter()
            .map(|(k, f)| Ok((k.clone(), f.eval(x)?)))
            .collect()
    }

    /// Coefficient matrix `θ^{ij}` of a bivector at a point.
    pub fn matrix_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if self.degree != 2 {
            return Err(Error::InvalidArgument(format!(
                "matrix_at needs a bivector, got degree {}",
                self.degree
            )));
        }
        let mut m = DMatrix::zeros(self.fiber_dim, self.fiber_dim);
        for (k, value) in self.values_at(x)? {
            m[(k[0], k[1])] = value;
            m[(k[1], k[0])] = -value;
        }
        Ok(m)
    }

    /// Largest component magnitude at a point.
    pub fn max_abs_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values_at(x)?.values().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Bracket components at a point, computed from first-order jets of the
    /// operands without building the expression tree.
    pub fn schouten_at(&self, other: &Self, x: &[f64]) -> Result<BTreeMap<Vec<usize>, f64>> {
        self.check_compatible(other)?;
        let vars = self.fiber_vars();
        let jets = |m: &Self| -> Result<BTreeMap<Vec<usize>, (f64, Vec<f64>)>> {
            m.components
                .iter()
                .map(|(k, f)| {
                    let j = f.eval_jet_in(x, &vars, 1)?;
                    let grad = (1..=vars.len()).map(|r| j.coeffs()[r]).collect();
                    Ok((k.clone(), (j.value(), grad)))
                })
                .collect()
        };
        let (jx, jy) = (jets(self)?, jets(other)?);
        let mut out: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut forward = Vec::new();
        half_bracket(&self.components, &other.components, 1.0, &mut forward);
        for t in &forward {
            *out.entry(t.target.clone()).or_default() += t.sign * jx[t.x].0 * jy[t.y].1[t.i];
        }
        let mut backward = Vec::new();
        half_bracket(
            &other.components,
            &self.components,
            -self.swap_sign(other),
            &mut backward,
        );
        for t in &backward {
            *out.entry(t.target.clone()).or_default() += t.sign * jy[t.x].0 * jx[t.y].1[t.i];
        }
        Ok(out)
    }

    /// `max |⟦θ, θ⟧|` over the samples and components.
    pub fn jacobi_defect(&self, samples: &[Vec<f64>]) -> Result<f64> {
        if self.degree != 2 {
            return Err(Error::InvalidArgument(format!(
                "jacobi_defect needs a bivector, got degree {}",
                self.degree
            )));
        }
        let defects: Vec<f64> = samples
            .par_iter()
            .map(|x| Ok(self.schouten_at(self, x)?.values().fold(0.0f64, |m, v| m.max(v.abs()))))
            .collect::<Result<_>>()?;
        Ok(defects.into_iter().fold(0.0, f64::max))
    }

    /// Freezes the base point: coefficients become functions of `v` only.
    pub fn restrict_to_fiber(&self, p: &[f64]) -> Result<Self> {
        if p.len() != self.base_dim {
            return Err(Error::DimensionMismatch {
                expected: self.base_dim,
                got: p.len(),
            });
        }
        let n = self.fiber_dim;
        let mut embed = DMatrix::zeros(self.dim(), n);
        for i in 0..n {
            embed[(self.base_dim + i, i)] = 1.0;
        }
        let mut offset = p.to_vec();
        offset.extend(std::iter::repeat_n(0.0, n));
        let comps = self
            .components
            .iter()
            .map(|(k, f)| Ok((k.clone(), f.pullback_affine(embed.clone(), offset.clone())?)))
            .collect::<Result<_>>()?;
        let mut out = Self::from_components(0, n, self.degree, comps)?;
        out.support_radius = self.support_radius;
        Ok(out)
    }

    /// The HKR operator `(f_1, ..., f_k) ↦ (1/k!) ⟨X, df_1 ⊗ ... ⊗ df_k⟩`.
    pub fn hkr(&self) -> Hkr<'_> {
        Hkr { field: self }
    }

    /// `max |θ(p, -v) - θ(p, v)|` over samples.
    pub fn check_flip(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut worst = 0.0f64;
        for x in samples {
            let flipped = self.flip_point(x);
            let a = self.values_at(x)?;
            let b = self.values_at(&flipped)?;
            for (k, va) in &a {
                worst = worst.max((va - b[k]).abs());
            }
        }
        Ok(worst)
    }

    fn flip_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &c)| if i >= self.base_dim { -c } else { c })
            .collect()
    }

    fn fiber_norm(&self, x: &[f64]) -> f64 {
        sampling::norm(&x[self.base_dim..])
    }

    /// `max |component|` over samples whose fiber norm is at least the
    /// declared radius; `None` if no radius is declared.
    pub fn check_support(&self, samples: &[Vec<f64>]) -> Result<Option<f64>> {
        let Some(radius) = self.support_radius else {
            return Ok(None);
        };
        let mut worst = 0.0f64;
        for x in samples.iter().filter(|x| self.fiber_norm(x) >= radius) {
            worst = worst.max(self.max_abs_at(x)?);
        }
        Ok(Some(worst))
    }

    /// `max |θ(p, Rv) - R θ(p, v) Rᵀ|` over samples and the given orthogonal maps.
    pub fn check_rotation(&self, samples: &[Vec<f64>], rotations: &[DMatrix<f64>]) -> Result<f64> {
        let mut worst = 0.0f64;
        for x in samples {
            let m = self.matrix_at(x)?;
            let v = nalgebra::DVector::from_column_slice(&x[self.base_dim..]);
            for r in rotations {
                let rv = r * &v;
                let mut y = x[..self.base_dim].to_vec();
                y.extend(rv.iter());
                let lhs = self.matrix_at(&y)?;
                let rhs = r * &m * r.transpose();
                worst = worst.max((lhs - rhs).abs().max());
            }
        }
        Ok(worst)
    }

    /// Default sampling plan for defect checks at base point `p`: `inside`
    /// low-discrepancy fiber points in the ball of `radius` and `boundary`
    /// points in the shell from `0.9 radius` to `1.1 radius`.
    pub fn sample_plan(p: &[f64], fiber_dim: usize, radius: f64, inside: usize, boundary: usize) -> Vec<Vec<f64>> {
        sampling::ball_points(fiber_dim, radius, inside)
            .into_iter()
            .chain(sampling::shell_points(fiber_dim, 0.9 * radius, 1.1 * radius, boundary))
            .map(|v| p.iter().copied().chain(v).collect())
            .collect()
    }
}

/// Multidifferential operator attached to a vertical multivector.
pub struct Hkr<'a> {
    field: &'a VerticalMultivector,
}

impl Hkr<'_> {
    pub fn arity(&self) -> usize {
        self.field.degree
    }

    pub fn apply(&self, fs: &[&dyn Observable], x: &[f64]) -> Result<num_complex::Complex64> {
        let k = self.field.degree;
        if fs.len() != k {
            return Err(Error::Arity {
                expected: k,
                got: fs.len(),
            });
        }
        let vars = self.field.fiber_vars();
        let grads: Vec<Vec<num_complex::Complex64>> = fs
            .iter()
            .map(|f| {
                let j = f.jet_in(x, &vars, 1)?;
                Ok(j.coeffs()[1..].to_vec())
            })
            .collect::<Result<_>>()?;
        let factorial: f64 = (1..=k).map(|m| m as f64).product();
        let mut total = num_complex::Complex64::new(0.0, 0.0);
        for (index, coeff) in &self.field.components {
            let m = DMatrix::from_fn(k, k, |a, b| grads[b][index[a]]);
            total += m.determinant() * coeff.eval(x)?;
        }
        Ok(total / factorial)
    }
}

/// `⟨θ, df ⊗ dg⟩ = θ^{ij} ∂_i f ∂_j g` summed over all fiber indices.
pub fn pairing(
    theta: &VerticalMultivector,
    f: &dyn Observable,
    g: &dyn Observable,
    x: &[f64],
) -> Result<num_complex::Complex64> {
    let m = theta.matrix_at(x)?;
    let vars = theta.fiber_vars();
    let df = f.jet_in(x, &vars, 1)?;
    let dg = g.jet_in(x, &vars, 1)?;
    let n = vars.len();
    let mut total = num_complex::Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            total += m[(i, j)] * df.coeffs()[1 + i] * dg.coeffs()[1 + j];
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{rng, uniform_box};
    use crate::smoothfn::random_polynomial;

    fn symplectic(n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for a in (0..n - 1).step_by(2) {
            m[(a, a + 1)] = 1.0;
            m[(a + 1, a)] = -1.0;
        }
        m
    }

    fn random_field(r: &mut sampling::Rng, n: usize, degree: usize) -> VerticalMultivector {
        let dim = 2 * n;
        let all: Vec<usize> = (0..dim).collect();
        let mut comps = BTreeMap::new();
        for index in crate::smoothfn::exponents(n, degree as u32, degree as u32) {
            if index.iter().any(|&e| e > 1) {
                continue;
            }
            let key: Vec<usize> = (0..n).filter(|&i| index[i] == 1).collect();
            comps.insert(key, random_polynomial(r, dim, &all, &vec![0.0; dim], 0, 2).unwrap());
        }
        VerticalMultivector::from_components(n, n, degree, comps).unwrap()
    }

    fn max_diff(a: &VerticalMultivector, b: &VerticalMultivector, x: &[f64]) -> f64 {
        let va = a.values_at(x).unwrap();
        let vb = b.values_at(x).unwrap();
        let keys: std::collections::BTreeSet<_> = va.keys().chain(vb.keys()).collect();
        keys.into_iter()
            .map(|k| (va.get(k).unwrap_or(&0.0) - vb.get(k).unwrap_or(&0.0)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn merge_signs() {
        assert_eq!(merge(&[0], &[1]), Some((vec![0, 1], 1.0)));
        assert_eq!(merge(&[1], &[0]), Some((vec![0, 1], -1.0)));
        assert_eq!(merge(&[0, 2], &[1]), Some((vec![0, 1, 2], -1.0)));
        assert_eq!(merge(&[0], &[0, 1]), None);
    }

    #[test]
    fn lie_bracket_of_vector_fields() {
        // X = v1 ∂0, Y = v0 ∂1 on R^2: [X, Y] = v1 ∂1 - v0 ∂0
        let n = 2;
        let v = |i| SmoothMap::coordinate(n + i, 2 * n).unwrap();
        let zero = SmoothMap::constant(0.0, 2 * n);
        let x = VerticalMultivector::vector_field(n, vec![v(1), zero.clone()]).unwrap();
        let y = VerticalMultivector::vector_field(n, vec![zero, v(0)]).unwrap();
        let b = x.schouten(&y).unwrap();
        let pt = [0.3, -0.2, 0.7, 1.1];
        let vals = b.values_at(&pt).unwrap();
        assert!((vals[&vec![0]] + 0.7).abs() < 1e-15);
        assert!((vals[&vec![1]] - 1.1).abs() < 1e-15);
        let numeric = x.schouten_at(&y, &pt).unwrap();
        assert!((numeric[&vec![0]] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn vertical_lifts_commute() {
        let theta = VerticalMultivector::constant(&symplectic(4)).unwrap();
        assert!(theta.schouten(&theta).unwrap().is_zero());
        let samples = VerticalMultivector::sample_plan(&[0.0; 4], 4, 1.0, 50, 10);
        assert_eq!(theta.jacobi_defect(&samples).unwrap(), 0.0);
        assert!(VerticalMultivector::constant(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0])).is_err());
    }

    #[test]
    fn separated_bump_fields_commute() {
        let n = 2;
        let x = VerticalMultivector::vector_field(
            n,
            vec![SmoothMap::bump(2, 0.5, 0.5, 4).unwrap(), SmoothMap::constant(0.0, 4)],
        )
        .unwrap();
        let y = VerticalMultivector::vector_field(
            n,
            vec![SmoothMap::constant(0.0, 4), SmoothMap::bump(3, 0.5, 0.5, 4).unwrap()],
        )
        .unwrap();
        let mut r = rng(5);
        for _ in 0..1000 {
            let pt = uniform_box(&mut r, 4, 1.2);
            let b = x.schouten_at(&y, &pt).unwrap();
            assert!(b.values().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn so3_is_poisson() {
        let theta = VerticalMultivector::lie_linear(&VerticalMultivector::so3_structure()).unwrap();
        let samples = VerticalMultivector::sample_plan(&[0.0; 3], 3, 2.0, 200, 20);
        assert!(theta.jacobi_defect(&samples).unwrap() < 1e-10);
    }

    #[test]
    fn generic_linear_structure_is_not_poisson() {
        let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
        c[0][1] = vec![0.0, 0.0, 1.0];
        c[1][0] = vec![0.0, 0.0, -1.0];
        c[1][2] = vec![0.0, 1.0, 0.0];
        c[2][1] = vec![0.0, -1.0, 0.0];
        let theta = VerticalMultivector::lie_linear(&c).unwrap();
        let samples = VerticalMultivector::sample_plan(&[0.0; 3], 3, 1.0, 50, 0);
        assert!(theta.jacobi_defect(&samples).unwrap() > 1e-3);
    }

    #[test]
    fn two_dimensional_fibers_are_free() {
        let theta = VerticalMultivector::radial_scaled(&symplectic(2), 0.5, 0.5).unwrap();
        assert!(theta.schouten(&theta).unwrap().is_zero());
    }

    #[test]
    fn compact_constructions_match_theta_at_zero() {
        let t = symplectic(4);
        for theta in [
            VerticalMultivector::commuting_compact(&t, 0.5, 0.5).unwrap(),
            VerticalMultivector::ball_compact(&t, 0.5, 0.5).unwrap(),
        ] {
            let m = theta.matrix_at(&[0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
            assert!((m - &t).abs().max() < 1e-15);
        }
        let ball = VerticalMultivector::ball_compact(&t, 0.5, 0.5).unwrap();
        assert_eq!(ball.support_radius(), Some(1.0));
        assert!(VerticalMultivector::commuting_compact(&t, 0.5, 0.5)
            .unwrap()
            .support_radius()
            .is_none());
        let two = VerticalMultivector::commuting_compact(&symplectic(2), 0.5, 0.5).unwrap();
        assert!((two.support_radius().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(VerticalMultivector::commuting_compact(&DMatrix::zeros(2, 2), 0.5, 0.5)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn ball_construction_is_flat_at_the_boundary() {
        let theta = VerticalMultivector::ball_compact(&symplectic(4), 0.5, 0.5).unwrap();
        let vars = theta.fiber_vars();
        for v in sampling::shell_points(4, 0.99, 1.0, 50) {
            let mut x = vec![0.0; 4];
            x.extend(v);
            for f in theta.components().values() {
                let j = f.eval_jet_in(&x, &vars, 4).unwrap();
                assert!(j.max_abs() < 1e-8);
            }
        }
    }

    #[test]
    fn graded_antisymmetry_and_leibniz() {
        let mut r = rng(17);
        let n = 3;
        for (k, l, m) in [(1, 1, 1), (1, 2, 1), (2, 2, 0), (2, 1, 2), (0, 2, 1)] {
            let x = random_field(&mut r, n, k);
            let y = random_field(&mut r, n, l);
            let z = random_field(&mut r, n, m);
            let pt = uniform_box(&mut r, 2 * n, 1.0);
            let xy = x.schouten(&y).unwrap();
            let yx = y.schouten(&x).unwrap();
            let sign = if (k + 1) * (l + 1) % 2 == 0 { -1.0 } else { 1.0 };
            assert!(max_diff(&xy, &yx.scale(sign), &pt) < 1e-9, "antisymmetry {k} {l}");
            // [X, Y∧Z] = [X,Y]∧Z + (-1)^{(k-1)l} Y∧[X,Z]
            let lhs = x.schouten(&y.wedge(&z).unwrap()).unwrap();
            let s2 = if (k + 1) * l % 2 == 0 { 1.0 } else { -1.0 };
            let rhs = xy
                .wedge(&z)
                .unwrap()
                .add(&y.wedge(&x.schouten(&z).unwrap()).unwrap().scale(s2))
                .unwrap();
            assert!(max_diff(&lhs, &rhs, &pt) < 1e-9, "leibniz {k} {l} {m}");
            // the jet evaluation agrees with the tree
            let numeric = x.schouten_at(&y, &pt).unwrap();
            let tree = xy.values_at(&pt).unwrap();
            for (key, value) in numeric {
                assert!((tree.get(&key).unwrap_or(&0.0) - value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn restriction_is_a_homomorphism() {
        let mut r = rng(23);
        let n = 2;
        for _ in 0..5 {
            let x = random_field(&mut r, n, 2);
            let y = random_field(&mut r, n, 1);
            let p = uniform_box(&mut r, n, 1.0);
            let v = uniform_box(&mut r, n, 1.0);
            let full: Vec<f64> = p.iter().chain(&v).copied().collect();
            let br = x.schouten(&y).unwrap().restrict_to_fiber(&p).unwrap();
            let rb = x
                .restrict_to_fiber(&p)
                .unwrap()
                .schouten(&y.restrict_to_fiber(&p).unwrap())
                .unwrap();
            assert!(max_diff(&br, &rb, &v) < 1e-10);
            let w1 = x.wedge(&y).unwrap().restrict_to_fiber(&p).unwrap();
            let w2 = x
                .restrict_to_fiber(&p)
                .unwrap()
                .wedge(&y.restrict_to_fiber(&p).unwrap())
                .unwrap();
            assert!(max_diff(&w1, &w2, &v) < 1e-12);
            assert!(
                (x.restrict_to_fiber(&p).unwrap().max_abs_at(&v).unwrap() - x.max_abs_at(&full).unwrap()).abs() < 1e-14
            );
        }
        let theta = VerticalMultivector::commuting_compact(&symplectic(2), 0.5, 0.5).unwrap();
        let fiber = theta.restrict_to_fiber(&[0.3, 0.1]).unwrap();
        let samples = VerticalMultivector::sample_plan(&[], 2, 1.5, 100, 10);
        assert!(fiber.jacobi_defect(&samples).unwrap() < 1e-9);
        let lift = VerticalMultivector::constant(&symplectic(2))
            .unwrap()
            .restrict_to_fiber(&[1.0, 2.0])
            .unwrap();
        assert!(lift
            .components()
            .values()
            .all(|f| matches!(f.node(), crate::smoothfn::Node::AffinePullback { .. })));
        assert_eq!(lift.matrix_at(&[5.0, -3.0]).unwrap(), symplectic(2));
    }

    #[test]
    fn hkr_reproduces_the_bracket() {
        let mut r = rng(31);
        let n = 2;
        let theta = VerticalMultivector::ball_compact(&symplectic(2), 0.6, 0.6).unwrap();
        let all: Vec<usize> = (0..2 * n).collect();
        for _ in 0..20 {
            let f = random_polynomial(&mut r, 2 * n, &all, &[0.0; 4], 0, 3).unwrap();
            let g = random_polynomial(&mut r, 2 * n, &all, &[0.0; 4], 0, 3).unwrap();
            let x = uniform_box(&mut r, 2 * n, 0.8);
            let h = theta.hkr();
            let antisym = h.apply(&[&f, &g], &x).unwrap() - h.apply(&[&g, &f], &x).unwrap();
            let bracket = pairing(&theta, &f, &g, &x).unwrap();
            assert!((antisym - bracket).norm() < 1e-9);
        }
        assert!(matches!(
            theta.hkr().apply(&[], &[0.0; 4]),
            Err(Error::Arity { expected: 2, got: 0 })
        ));
        // degree one: a directional derivative
        let field =
            VerticalMultivector::vector_field(n, vec![SmoothMap::constant(2.0, 4), SmoothMap::constant(-1.0, 4)])
                .unwrap();
        let f = random_polynomial(&mut r, 4, &all, &[0.0; 4], 1, 3).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let j = f.eval_jet(&x, 1).unwrap();
        let expected = 2.0 * j.coeffs()[3] - j.coeffs()[4];
        assert!((field.hkr().apply(&[&f], &x).unwrap().re - expected).abs() < 1e-12);
        // a function of the base point only has no vertical derivative
        let u = SmoothMap::coordinate(0, 4).unwrap();
        assert_eq!(field.hkr().apply(&[&u], &x).unwrap().norm(), 0.0);
    }

    #[test]
    fn flip_support_and_rotation_checks() {
        let t = symplectic(2);
        let samples = VerticalMultivector::sample_plan(&[0.2, -0.1], 2, 2.0, 300, 100);
        let theta = VerticalMultivector::commuting_compact(&t, 0.5, 0.5).unwrap();
        assert!(theta.check_flip(&samples).unwrap() < 1e-12);
        assert_eq!(theta.check_support(&samples).unwrap(), Some(0.0));
        let ball = VerticalMultivector::ball_compact(&t, 0.5, 0.5).unwrap();
        assert!(ball.check_flip(&samples).unwrap() < 1e-12);
        assert_eq!(ball.check_support(&samples).unwrap(), Some(0.0));
        assert_eq!(
            VerticalMultivector::lie_linear(&VerticalMultivector::so3_structure())
                .unwrap()
                .check_support(&samples)
                .unwrap(),
            None
        );

        let mut r = rng(2);
        let rotations: Vec<_> = (0..5).map(|_| sampling::random_orthogonal(&mut r, 2, true)).collect();
        let reflections: Vec<_> = (0..5)
            .map(|_| sampling::random_orthogonal(&mut r, 2, false))
            .filter(|q| q.determinant() < 0.0)
            .collect();
        for theta in [t.clone(), t.scale(-2.5)] {
            let radial = VerticalMultivector::radial_scaled(&theta, 0.5, 0.5).unwrap();
            assert!(radial.check_rotation(&samples, &rotations).unwrap() < 1e-12);
            if !reflections.is_empty() {
                assert!(radial.check_rotation(&samples[..10], &reflections).unwrap() > 0.1);
            }
        }
        // separated bumps are only invariant under the symmetries of the square
        assert!(theta.check_rotation(&samples, &rotations).unwrap() > 1e-3);
    }
}
