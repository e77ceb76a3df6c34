//! Shared test oracles, independent of the solver paths they check.
#![allow(dead_code)] // each test binary uses a different subset

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use riskcert::risk::{MomentSet, QuadraticLoss, RiskLevel};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Independent WC-CVaR oracle via the spectral reduction: for fixed β, the
/// inner minimization over N has the closed form Tr((Ω^{1/2}H(β)Ω^{1/2})₊),
/// so the value is a one-dimensional convex minimization in β solved here by
/// golden-section search. No cone solver involved.
pub fn wc_cvar_spectral_oracle(loss: &QuadraticLoss, ms: &MomentSet, eps: RiskLevel) -> f64 {
    let n = ms.dim();
    let omega = ms.omega().matrix().clone();
    let eig = omega.clone().symmetric_eigen();
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();

    let h0 = loss.lifted();
    let g = |beta: f64| -> f64 {
        let mut h = h0.clone();
        h[(n, n)] -= beta;
        let m = &root * h * &root;
        let positive_part: f64 = m
            .symmetric_eigenvalues()
            .iter()
            .map(|&v| v.max(0.0))
            .sum();
        beta + positive_part / eps.value()
    };

    // Expand a bracket until the ends rise above the midpoint.
    let mut lo = -1.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (glo, gm, ghi) = (g(lo), g(mid), g(hi));
        let mut grown = false;
        if glo <= gm {
            lo = lo - (hi - lo);
            grown = true;
        }
        if ghi <= gm {
            hi = hi + (hi - lo);
            grown = true;
        }
        if !grown {
            break;
        }
    }
    // Golden-section search.
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-11 {
            break;
        }
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    g(0.5 * (a + b))
}

/// Analytic CVaR of the standard normal at level ε: φ(z_{1−ε})/ε.
pub fn gaussian_cvar_analytic(eps: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z = normal.inverse_cdf(1.0 - eps);
    normal.pdf(z) / eps
}

pub fn random_psd(rng: &mut impl Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

pub fn random_moment_set(rng: &mut impl Rng, n: usize) -> MomentSet {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    MomentSet::new(mean, random_psd(rng, n, 0.2)).unwrap()
}

pub fn random_loss(rng: &mut impl Rng, n: usize) -> QuadraticLoss {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let quad = 0.5 * (&raw + raw.transpose()); // symmetric, possibly indefinite
    let lin = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    QuadraticLoss::new(quad, lin, rng.random_range(-1.0..1.0)).unwrap()
}
