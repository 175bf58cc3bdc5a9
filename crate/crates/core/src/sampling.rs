//! Seeded random and quasi-random sample generation.
//!
//! All randomness goes through [`Rng`], a ChaCha8 stream seeded from a `u64`;
//! its output is specified and identical across platforms.

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut f = 1.0;
    let mut out = 0.0;
    while index > 0 {
        f /= b;
        out += f * (index % base as u64) as f64;
        index /= base as u64;
    }
    out
}

/// Halton point number `index + 1` mapped to `[-1, 1]^dim`.
fn halton_cube(index: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| 2.0 * halton(index + 1, PRIMES[d % PRIMES.len()]) - 1.0)
        .collect()
}

/// `count` low-discrepancy points in the closed ball of `radius` around 0.
pub fn ball_points(dim: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let x = halton_cube(index, dim);
        index += 1;
        if norm(&x) <= 1.0 {
            out.push(x.into_iter().map(|c| c * radius).collect());
        }
    }
    out
}

/// `count` low-discrepancy points with norm in `[inner, outer]`.
pub fn shell_points(dim: usize, inner: f64, outer: f64, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let x = halton_cube(index, dim + 1);
        index += 1;
        let dir = &x[..dim];
        let len = norm(dir);
        if !(1e-3..=1.0).contains(&len) {
            continue;
        }
        let t = 0.5 * (x[dim] + 1.0);
        let radius = inner + t * (outer - inner);
        out.push(dir.iter().map(|c| c * radius / len).collect());
    }
    out
}

/// Uniform point in `[-half_width, half_width]^dim`.
pub fn uniform_box(rng: &mut Rng, dim: usize, half_width: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-half_width..=half_width)).collect()
}

/// Uniform direction scaled to a norm drawn uniformly from `[inner, outer]`.
pub fn uniform_shell(rng: &mut Rng, dim: usize, inner: f64, outer: f64) -> Vec<f64> {
    loop {
        let x = uniform_box(rng, dim, 1.0);
        let len = norm(&x);
        if len <= 1.0 && len > 1e-3 {
            let radius = rng.gen_range(inner..=outer);
            return x.into_iter().map(|c| c * radius / len).collect();
        }
    }
}

/// Random orthogonal matrix (Gram-Schmidt on a random box matrix); `proper`
/// forces determinant +1.
pub fn random_orthogonal(rng: &mut Rng, dim: usize, proper: bool) -> DMatrix<f64> {
    loop {
        let m = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        if m.determinant().abs() < 1e-3 {
            continue;
        }
        let mut q = m.qr().q();
        if proper && q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        return q;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
    }

    #[test]
    fn ball_points_stay_inside() {
        let pts = ball_points(4, 2.0, 200);
        assert_eq!(pts.len(), 200);
        assert!(pts.iter().all(|p| norm(p) <= 2.0 + 1e-12));
    }

    #[test]
    fn shell_points_respect_bounds() {
        for p in shell_points(3, 0.9, 1.1, 100) {
            let r = norm(&p);
            assert!((0.9 - 1e-12..=1.1 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn seeded_stream_is_reproducible() {
        let a = uniform_box(&mut rng(7), 5, 1.0);
        let b = uniform_box(&mut rng(7), 5, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_matrices() {
        let mut r = rng(3);
        let q = random_orthogonal(&mut r, 3, true);
        assert!((q.determinant() - 1.0).abs() < 1e-12);
        let id = &q * q.transpose();
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }
}
