//! Shared fixtures for the criterion benchmarks.

use vstar_core::sampling::{self, Rng};
use vstar_core::smoothfn::random_polynomial;
use vstar_core::states::standard_symplectic;
use vstar_core::{Jet, SmoothMap, StarProduct, VerticalMultivector};

/// Named star products covering every mode, on four-dimensional fibers.
pub fn products(order: usize) -> Vec<(&'static str, StarProduct)> {
    let j = standard_symplectic(4);
    let theta = VerticalMultivector::constant(&j).expect("constant theta");
    let ball = VerticalMultivector::ball_compact(&j, 0.5, 0.5).expect("ball theta");
    vec![
        ("moyal_constant", StarProduct::moyal_constant(&j, order).expect("moyal")),
        (
            "moyal_fiberwise",
            StarProduct::moyal_fiberwise(theta, order).expect("fiberwise"),
        ),
        (
            "general_ball",
            StarProduct::general_vertical(ball, order.min(2)).expect("general"),
        ),
    ]
}

/// Three random fiber polynomials of degree at most 3 and a point of `TM`.
pub fn triple(seed: u64, n: usize) -> ([SmoothMap; 3], Vec<f64>) {
    let mut rng: Rng = sampling::rng(seed);
    let fiber: Vec<usize> = (n..2 * n).collect();
    let center = vec![0.0; n];
    let mut poly = || random_polynomial(&mut rng, 2 * n, &fiber, &center, 0, 3).expect("polynomial");
    let maps = [poly(), poly(), poly()];
    let x = sampling::uniform_box(&mut rng, 2 * n, 0.8);
    (maps, x)
}

/// A dense jet with nonzero coefficients in every slot.
pub fn dense_jet(dim: usize, order: usize, seed: u64) -> Jet {
    let mut rng = sampling::rng(seed);
    let base = vec![0.0; dim];
    let layout = vstar_core::jets::layout(dim, order);
    let coeffs = sampling::uniform_box(&mut rng, layout.len(), 1.0);
    Jet::from_coeffs(base.into(), order, coeffs).expect("dense jet")
}
