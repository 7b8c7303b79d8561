//! Oracles shared by the integration tests. Nothing here calls into the library's
//! quadrature or Legendre code.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1] from the Jacobi matrix eigenproblem.
pub fn golub_welsch(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binom(n: f64, k: usize) -> f64 {
    (0..k).map(|i| (n - i as f64) / (i + 1) as f64).product()
}

/// Associated Legendre function with Condon-Shortley phase, from the closed-form sum
/// `P_l^m(x) = (-1)^m 2^l (1-x^2)^{m/2} sum_{k=m}^l k!/(k-m)! x^{k-m} C(l,k) C((l+k-1)/2, l)`.
/// Accurate for small degrees only.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    let mut s = 0.0;
    for k in m..=l {
        s += factorial(k) / factorial(k - m) * x.powi((k - m) as i32) * binom(l as f64, k) * binom((l + k) as f64 / 2.0 - 0.5, l);
    }
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    sign * 2f64.powi(l as i32) * (1.0 - x * x).powf(m as f64 / 2.0) * s
}

/// Orthonormal `Y_{l,m}` for `m >= 0`.
pub fn ylm_oracle(l: usize, m: usize, theta: f64, phi: f64) -> Complex64 {
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - m) / factorial(l + m)).sqrt();
    norm * assoc_legendre(l, m, theta.cos()) * Complex64::from_polar(1.0, m as f64 * phi)
}

/// Tensor quadrature on the sphere: Gauss-Legendre in `cos theta`, `n_phi` equispaced longitudes.
pub struct SphereQuad {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub weight: Vec<f64>,
}

impl SphereQuad {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = golub_welsch(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut q = SphereQuad {
            theta: vec![],
            phi: vec![],
            weight: vec![],
        };
        for i in 0..n_theta {
            for j in 0..n_phi {
                q.theta.push(x[i].acos());
                q.phi.push(j as f64 * dphi);
                q.weight.push(w[i] * dphi);
            }
        }
        q
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        (0..self.weight.len()).map(|k| self.weight[k] * f(self.theta[k], self.phi[k])).sum()
    }

    pub fn integrate_c(&self, f: impl Fn(f64, f64) -> Complex64) -> Complex64 {
        (0..self.weight.len()).map(|k| self.weight[k] * f(self.theta[k], self.phi[k])).sum()
    }
}

/// Two-sided one-sample Kolmogorov-Smirnov p-value against a continuous CDF
/// (asymptotic distribution with the Stephens small-sample correction).
pub fn ks_pvalue(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let len = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Prints one acceptance line and returns the verdict.
pub fn report(criterion: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
