//! Shared test oracles: central finite differences and random tensors.
#![allow(dead_code)] // each test binary uses a different subset

use miniseg_core::rng::Xoshiro256pp;
use miniseg_core::{Shape, Tensor};

pub const FD_EPS: f64 = 1e-5;

/// Relative error with a small-magnitude floor: below the floor the
/// comparison degrades to an absolute tolerance, which keeps pure
/// finite-difference noise (~1e-11 here in f64) from failing exact zeros.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Central finite difference of a scalar-valued function at `x[i]`.
pub fn central_diff(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, i: usize) -> f64 {
    let mut xp = x.clone();
    xp.data_mut()[i] += FD_EPS;
    let fp = f(&xp);
    let mut xm = x.clone();
    xm.data_mut()[i] -= FD_EPS;
    let fm = f(&xm);
    (fp - fm) / (2.0 * FD_EPS)
}

/// Check an analytic gradient against central differences at every entry
/// of `x`. `scalar` must be the map whose gradient `analytic` claims to be.
pub fn assert_grad_matches(
    scalar: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    tol: f64,
    what: &str,
) {
    assert_eq!(x.shape(), analytic.shape());
    for i in 0..x.numel() {
        let numeric = central_diff(scalar, x, i);
        let a = analytic.data()[i];
        let e = rel_err(a, numeric);
        assert!(
            e < tol,
            "{what}: entry {i}: analytic {a} vs numeric {numeric} (rel err {e:.3e} >= {tol:.0e})"
        );
    }
}

pub fn random_tensor(rng: &mut Xoshiro256pp, shape: Shape, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random tensor staying at least `margin` away from zero (for kinked
/// functions like ReLU).
pub fn random_tensor_away_from_zero(
    rng: &mut Xoshiro256pp,
    shape: Shape,
    margin: f64,
) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform(margin, 1.0)
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random binary mask tensor.
pub fn random_mask(rng: &mut Xoshiro256pp, shape: Shape) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}
