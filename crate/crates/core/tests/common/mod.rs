#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use robust_risk::data::Dataset;
use robust_risk::loss::ScaledLoss;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

/// Gaussian design, t(df) noise, β⋆ = 0.
pub fn t_noise_data(n: usize, p: usize, df: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(n, p, &mut r);
    let t = StudentT::new(df).unwrap();
    let y = DVector::from_fn(n, |_, _| t.sample(&mut r));
    Dataset::new(x, y)
        .unwrap()
        .with_beta_star(DVector::zeros(p))
        .unwrap()
}

/// Minimiser of `(x − u)²/2 + κ ρ_λ(u)` on [lo, hi] by golden-section search.
/// Points are compared through the difference of objective values with the
/// quadratic part cancelled analytically.
pub fn golden_section_prox(loss: &ScaledLoss, kappa: f64, x: f64, lo: f64, hi: f64) -> f64 {
    let diff =
        |a: f64, b: f64| (b - a) * (2.0 * x - a - b) / 2.0 + kappa * (loss.rho(a) - loss.rho(b));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if diff(c, d) < 0.0 {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
        if b - a < 1e-13 {
            break;
        }
    }
    0.5 * (a + b)
}
