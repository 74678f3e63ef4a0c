mod common;

use common::*;
use foma::data::synthetic_manifold;
use foma::dimension::{explained_variance_k, twonn_id};
use nalgebra::DMatrix;

#[test]
fn twonn_hand_case() {
    // Points {0, 1, 3, 7} on the real line. Nearest/second-nearest distances
    // give mu = [3, 2, 1.5, 1.5] (sorted: [1.5, 1.5, 2, 3]); the
    // through-origin fit against -log(1 - i/(N+1)) was evaluated by hand
    // beforehand and frozen here.
    let pts = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 3.0, 7.0]);
    let est = twonn_id(&pts, 0.0).unwrap();
    assert!((est.d_hat - 1.339581200591631).abs() < 1e-12, "{}", est.d_hat);
    assert_eq!(est.n_used, 4);
    assert_eq!(est.n_duplicates, 0);
    assert_eq!(est.k, 1); // round(1.34) clamped to [1, min(4, 1)]
}

#[test]
fn twonn_square_in_10d() {
    let cloud = synthetic_manifold(2, 10, 2000, 0).unwrap();
    let est = twonn_id(&cloud, 0.0).unwrap();
    assert!(
        est.d_hat > 1.5 && est.d_hat < 2.5,
        "d_hat = {} for a 2-plane",
        est.d_hat
    );
    assert_eq!(est.k, 2);
}

#[test]
fn twonn_segment_in_5d() {
    let cloud = synthetic_manifold(1, 5, 2000, 1).unwrap();
    let est = twonn_id(&cloud, 0.0).unwrap();
    assert!(
        est.d_hat > 0.7 && est.d_hat < 1.3,
        "d_hat = {} for a segment",
        est.d_hat
    );
}

#[test]
fn twonn_rotation_and_scale_invariant() {
    let cloud = synthetic_manifold(2, 5, 500, 2).unwrap();
    let base = twonn_id(&cloud, 0.0).unwrap().d_hat;

    // Uniform scaling leaves every distance ratio unchanged.
    let scaled = 3.7 * cloud.clone();
    let scaled_est = twonn_id(&scaled, 0.0).unwrap().d_hat;
    assert!((scaled_est - base).abs() < 1e-9);

    // Rotation preserves distances.
    let mut r = rng(99);
    let gauss = rand_matrix(&mut r, 5, 5);
    let q = gauss.qr().q();
    let rotated = &cloud * q;
    let rot_est = twonn_id(&rotated, 0.0).unwrap().d_hat;
    assert!((rot_est - base).abs() < 1e-6);
}

#[test]
fn twonn_collapses_duplicates() {
    let mut pts = DMatrix::zeros(6, 1);
    for (i, v) in [0.0, 1.0, 3.0, 7.0, 1.0, 3.0].iter().enumerate() {
        pts[(i, 0)] = *v;
    }
    let est = twonn_id(&pts, 0.0).unwrap();
    assert_eq!(est.n_duplicates, 2);
    // After collapsing, this is the hand case again.
    assert!((est.d_hat - 1.339581200591631).abs() < 1e-12);
}

#[test]
fn twonn_rejects_degenerate_inputs() {
    let two = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    assert!(twonn_id(&two, 0.0).is_err());

    // All points identical: fewer than 3 distinct rows.
    let dup = DMatrix::from_element(10, 2, 1.0);
    assert!(twonn_id(&dup, 0.0).is_err());

    let pts = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 3.0, 7.0]);
    assert!(twonn_id(&pts, 0.5).is_err()); // discard_fraction out of range
    assert!(twonn_id(&pts, -0.1).is_err());
}

#[test]
fn explained_variance_hand_cases() {
    assert_eq!(explained_variance_k(&[9.0, 1.0], 0.9).unwrap(), 1);
    assert_eq!(explained_variance_k(&[5.0, 3.0, 2.0], 0.8).unwrap(), 2);
    assert_eq!(explained_variance_k(&[1.0, 1.0, 1.0, 1.0], 0.5).unwrap(), 2);
    // Even k = 1 exceeding rho still returns 1.
    assert_eq!(explained_variance_k(&[9.0, 1.0], 0.5).unwrap(), 1);
    // rho = 1 keeps everything.
    assert_eq!(explained_variance_k(&[5.0, 3.0, 2.0], 1.0).unwrap(), 3);
}

#[test]
fn explained_variance_monotone_in_rho() {
    let s = [7.0, 4.0, 2.5, 1.0, 0.5];
    let mut prev = 0;
    for step in 1..=20 {
        let rho = step as f64 / 20.0;
        let k = explained_variance_k(&s, rho).unwrap();
        assert!(k >= prev, "k decreased at rho = {rho}");
        prev = k;
    }
}

#[test]
fn explained_variance_scale_invariant() {
    let s = [7.0, 4.0, 2.5, 1.0, 0.5];
    let scaled: Vec<f64> = s.iter().map(|x| x * 123.456).collect();
    for step in 1..=10 {
        let rho = step as f64 / 10.0;
        assert_eq!(
            explained_variance_k(&s, rho).unwrap(),
            explained_variance_k(&scaled, rho).unwrap()
        );
    }
}

#[test]
fn explained_variance_rejects_bad_input() {
    assert!(explained_variance_k(&[0.0, 0.0], 0.9).is_err()); // all-zero
    assert!(explained_variance_k(&[], 0.9).is_err());
    assert!(explained_variance_k(&[1.0, 2.0], 0.9).is_err()); // increasing
    assert!(explained_variance_k(&[1.0], 0.0).is_err()); // rho out of range
    assert!(explained_variance_k(&[1.0], 1.5).is_err());
}
