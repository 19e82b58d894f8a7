//! Small dense helpers over row-major `&[f64]` matrices.

use nalgebra::{DMatrix, SymmetricEigen};

/// `out += scale * m * z` for a `d × d` row-major `m`.
#[inline]
pub fn mat_vec_acc(m: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
    let d = out.len();
    debug_assert_eq!(m.len(), d * z.len());
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * z.len()..(i + 1) * z.len()];
        let dot: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
        *o += scale * dot;
    }
}

/// `acc += weight * s sᵀ` for a square row-major `s`.
pub fn outer_acc(s: &[f64], d: usize, weight: f64, acc: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for l in 0..d {
                v += s[i * d + l] * s[j * d + l];
            }
            acc[i * d + j] += weight * v;
        }
    }
}

/// Symmetric PSD square root. The input is symmetrized and negative
/// eigenvalues are clamped to zero before taking the root.
pub fn psd_sqrt(m: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![m[0].max(0.0).sqrt()];
    }
    let eig = SymmetricEigen::new(symmetrized(m, d));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    row_major(&r)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    if d == 1 {
        return m[0];
    }
    SymmetricEigen::new(symmetrized(m, d))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_sq(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn symmetrized(m: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i * d + j] + m[j * d + i]))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}
