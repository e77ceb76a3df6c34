//! Bundled toy problems: the 2-3-1 reachability controller and a small
//! trained classifier on synthetic separable blobs. Both are deterministic
//! functions of their seeds, so the checked-in weight files can be
//! regenerated and byte-compared at any time.

use super::AppError;
use crate::network::{Layer, Network};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Stabilizing gain used by the closed-loop case study.
pub fn controller_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[-1.0, 2.0])
}

/// 2-3-1 ReLU controller computing exactly f(x) = [-1 2]·x.
pub fn controller_2_3_1() -> Network {
    Network::linear_gain(&controller_gain(), 3).expect("gain split is well-formed")
}

/// Collinear Gaussian blobs in the plane, one per class. The collinear
/// layout means a sample leaves its class region only by moving along the
/// class axis, which keeps the bounded-support families clear of the
/// decision boundary while heavy tails can still cross it.
pub fn blob_centers() -> [DVector<f64>; 3] {
    [
        DVector::from_column_slice(&[2.0, 0.0]),
        DVector::from_column_slice(&[0.0, 0.0]),
        DVector::from_column_slice(&[-2.0, 0.0]),
    ]
}

pub const BLOB_STD: f64 = 0.3;

/// Draws `per_class` points per blob; rows grouped by class label.
pub fn make_blobs(per_class: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let centers = blob_centers();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(3 * per_class, 2);
    let mut labels = Vec::with_capacity(3 * per_class);
    for (cls, center) in centers.iter().enumerate() {
        for i in 0..per_class {
            let r = cls * per_class + i;
            for k in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[(r, k)] = center[k] + BLOB_STD * z;
            }
            labels.push(cls);
        }
    }
    (data, labels)
}

/// Fits a one-hidden-layer classifier by full-batch gradient descent on the
/// squared pairwise-margin residual Σ (f_y − f_i − target)², i ≠ y.
///
/// Unlike a cross-entropy fit, this drives every training margin *onto* the
/// target, so the margin surface is flat across each class cloud and falls
/// off linearly beyond it. Deterministic in `seed`.
pub fn train_classifier(
    data: &DMatrix<f64>,
    labels: &[usize],
    hidden: usize,
    classes: usize,
    epochs: usize,
    lr: f64,
    margin_target: f64,
    seed: u64,
) -> Result<Network, AppError> {
    let n = data.nrows();
    if n != labels.len() {
        return Err(AppError::DimensionMismatch(format!(
            "{n} rows but {} labels",
            labels.len()
        )));
    }
    let dim = data.ncols();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale0 = (2.0 / dim as f64).sqrt();
    let scale1 = (2.0 / hidden as f64).sqrt();
    let mut w0 = DMatrix::from_fn(hidden, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale0
    });
    let mut b0 = DVector::zeros(hidden);
    let mut w1 = DMatrix::from_fn(classes, hidden, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale1
    });
    let mut b1 = DVector::zeros(classes);
    let weight_decay = 1e-4;

    for _ in 0..epochs {
        let z1 = data * w0.transpose() + DMatrix::from_fn(n, hidden, |_, j| b0[j]);
        let a1 = z1.map(|v| v.max(0.0));
        let logits = &a1 * w1.transpose() + DMatrix::from_fn(n, classes, |_, j| b1[j]);

        let mut g = DMatrix::zeros(n, classes);
        for r in 0..n {
            let y = labels[r];
            for j in 0..classes {
                if j == y {
                    continue;
                }
                let residual = logits[(r, y)] - logits[(r, j)] - margin_target;
                let e = 2.0 * residual / n as f64;
                g[(r, y)] += e;
                g[(r, j)] -= e;
            }
        }

        let gw1 = g.transpose() * &a1 + &w1 * weight_decay;
        let gb1 = g.transpose() * DVector::from_element(n, 1.0);
        let ga1 = &g * &w1;
        let gz1 = ga1.zip_map(&z1, |gv, zv| if zv > 0.0 { gv } else { 0.0 });
        let gw0 = gz1.transpose() * data + &w0 * weight_decay;
        let gb0 = gz1.transpose() * DVector::from_element(n, 1.0);

        w1 -= gw1 * lr;
        b1 -= gb1 * lr;
        w0 -= gw0 * lr;
        b0 -= gb0 * lr;
    }

    Ok(Network::new(
        vec![Layer::new(w0, b0)?],
        Layer::new(w1, b1)?,
    )?
    .with_metadata(serde_json::json!({
        "method": "pairwise_margin_least_squares",
        "margin_target": margin_target,
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
        "weight_decay": weight_decay,
        "blob_std": BLOB_STD,
    })))
}

/// The bundled classifier: 2-6-3 on the standard blobs, fixed seed.
pub fn toy_classifier() -> Result<Network, AppError> {
    let (data, labels) = make_blobs(100, 2024);
    train_classifier(&data, &labels, 6, 3, 12_000, 0.02, 8.0, 7)
}

/// Training accuracy of a classifier on labelled rows.
pub fn accuracy(net: &Network, data: &DMatrix<f64>, labels: &[usize]) -> Result<f64, AppError> {
    let mut correct = 0usize;
    for r in 0..data.nrows() {
        let f = net.eval(&data.row(r).transpose())?;
        let pred = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if pred == labels[r] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.nrows() as f64)
}
