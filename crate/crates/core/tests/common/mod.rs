#![allow(dead_code)]

//! Closed-form coefficient oracles shared by the integration tests.
//!
//! For a scalar (or complex) rate `λ` the coefficient matrices reduce to
//! `Q = e^{λτ}` and `Mₙ = (n−1)!·τⁿ·φₙ(λτ)` with `φₙ(z) = Σ zᵏ/(k+n)!`.
//! Summing the series directly avoids the cancellation in
//! `(e^{λτ} − 1 − λτ)/λ²` for small `|λτ|`.

use etd_core::{DenseMatrix, EtdCoefficients};

/// Complex number as `(re, im)`; only what the series needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct C(pub f64, pub f64);

impl C {
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn scale(self, s: f64) -> C {
        C(self.0 * s, self.1 * s)
    }
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `φₙ(z)`: Taylor series for `|z| ≤ 2`, otherwise the recurrence
/// `φₙ = (φₙ₋₁ − 1/(n−1)!)/z` down to `φ₀ = e^z`.
pub fn phi(n: u32, z: C) -> C {
    if n == 0 {
        return exp(z);
    }
    if z.abs() <= 2.0 {
        let mut term = C(1.0 / factorial(n), 0.0);
        let mut sum = C(0.0, 0.0);
        for k in 0..80 {
            sum = sum.add(term);
            term = term.mul(z).scale(1.0 / f64::from(k + n + 1));
        }
        return sum;
    }
    let prev = phi(n - 1, z);
    let num = prev.add(C(-1.0 / factorial(n - 1), 0.0));
    let d = z.0 * z.0 + z.1 * z.1;
    num.mul(C(z.0 / d, -z.1 / d))
}

pub fn exp(z: C) -> C {
    let m = z.0.exp();
    C(m * z.1.cos(), m * z.1.sin())
}

/// `[Q, M₁, M₂, M₃]` for a complex rate.
pub fn coefficients(lambda: C, tau: f64) -> [C; 4] {
    let z = lambda.scale(tau);
    [
        exp(z),
        phi(1, z).scale(tau),
        phi(2, z).scale(tau * tau),
        phi(3, z).scale(2.0 * tau.powi(3)),
    ]
}

/// `[Q, M₁, M₂, M₃]` for a real rate.
pub fn scalar_coefficients(lambda: f64, tau: f64) -> [f64; 4] {
    coefficients(C(lambda, 0.0), tau).map(|c| c.0)
}

/// Exact bundle for a diagonal `L`.
pub fn diagonal_bundle(diag: &[f64], tau: f64) -> EtdCoefficients {
    let build = |t: f64, k: usize| {
        DenseMatrix::from_diagonal(&diag.iter().map(|&l| scalar_coefficients(l, t)[k]).collect::<Vec<_>>())
    };
    EtdCoefficients::from_parts(
        tau,
        4,
        0.0,
        build(tau, 0),
        Some(build(tau / 2.0, 0)),
        build(tau, 1),
        Some(build(tau / 2.0, 1)),
        build(tau, 2),
        Some(build(tau, 3)),
    )
    .unwrap()
}

/// Exact bundle for `L = a·I + b·J` with `J = [[0, 1], [−1, 0]]`.
pub fn rotation_bundle(a: f64, b: f64, tau: f64) -> EtdCoefficients {
    // (1, i) is an eigenvector with eigenvalue a + ib, and any function of L
    // has the form αI + βJ, so g(L) = Re g(a+ib)·I + Im g(a+ib)·J.
    let as_matrix = |c: C| DenseMatrix::from_rows(&[vec![c.0, c.1], vec![-c.1, c.0]]).unwrap();
    let lam = C(a, b);
    let full = coefficients(lam, tau);
    let half = coefficients(lam, tau / 2.0);
    EtdCoefficients::from_parts(
        tau,
        4,
        0.0,
        as_matrix(full[0]),
        Some(as_matrix(half[0])),
        as_matrix(full[1]),
        Some(as_matrix(half[1])),
        as_matrix(full[2]),
        Some(as_matrix(full[3])),
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Least-squares slope of `log(err)` against `log(tau)`.
pub fn loglog_slope(taus: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
