//! Gauss–Hermite rules for the standard normal weight.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights exact for polynomials of degree `< 2n` against `N(0, 1)`;
/// the weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    // Jacobi matrix of the probabilists' Hermite recurrence
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect())
}
