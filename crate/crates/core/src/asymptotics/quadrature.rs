//! Gauss–Hermite rules for expectations over a standard Gaussian.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of Hermite nodes used by the system solver.
pub const DEFAULT_HERMITE_ORDER: usize = 81;

/// Nodes and weights with `Σ w_i f(z_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials. Weights are the squared first eigenvector components.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter(
                "Hermite order must be positive".into(),
            ));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrise to remove eigen-solver asymmetry.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let z = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-z, w);
            pairs[j] = (z, w);
        }
        if order % 2 == 1 {
            pairs[order / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}
