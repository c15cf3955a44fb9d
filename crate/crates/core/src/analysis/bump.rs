//! Smooth compactly supported test functions.
//!
//! The standard bump `phi(t) = exp(-1 / (1 - u^2))` with
//! `u = (t - center) / width`, extended by zero outside `|u| < 1`, is
//! infinitely differentiable. Its derivatives have the closed form
//! `phi^(k)(t) = P_k(u) / (1 - u^2)^(2k) * phi(t) / width^k` with polynomials
//! `P_k` obeying
//!
//! ```text
//! P_0 = 1,
//! P_{k+1} = P_k' (1 - u^2)^2 + 4 k u (1 - u^2) P_k - 2 u P_k,
//! ```
//!
//! which the constructor precomputes, so derivative evaluation is exact
//! rational-times-exponential arithmetic rather than finite differencing.

use crate::error::{Error, Result};

/// Highest derivative order the recursion is precomputed for.
pub const MAX_DERIVATIVE_ORDER: usize = 8;

/// Below this value of `s = 1 - u^2` the exponential underflows any
/// polynomial growth of the rational prefactor; the function is zero for
/// all practical purposes and returning 0 avoids 0 * inf.
const S_CUTOFF: f64 = 1.0 / 700.0;

/// A smooth bump supported on `[center - width, center + width]`, a strict
/// subset of `(0, a)`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    a: f64,
    center: f64,
    width: f64,
    /// `polys[k]` holds the coefficients of `P_k` (ascending powers of `u`).
    polys: Vec<Vec<f64>>,
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    if p.len() <= 1 {
        return vec![0.0];
    }
    (1..p.len()).map(|i| i as f64 * p[i]).collect()
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len().max(q.len())];
    for (i, a) in p.iter().enumerate() {
        out[i] += a;
    }
    for (i, b) in q.iter().enumerate() {
        out[i] += b;
    }
    out
}

fn poly_eval(p: &[f64], u: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// Builds the bump with support `[center - width, center + width]` inside
/// `(0, a)`. Supports touching the interval boundary are rejected.
pub fn make_bump(a: f64, center: f64, width: f64) -> Result<TestFunction> {
    if !a.is_finite() || a <= 0.0 {
        return Err(Error::invalid(format!("a must be positive, got {a}")));
    }
    if !width.is_finite() || width <= 0.0 {
        return Err(Error::invalid(format!("width must be positive, got {width}")));
    }
    if !center.is_finite() || center - width <= 0.0 || center + width >= a {
        return Err(Error::invalid(format!(
            "support [{}, {}] must lie strictly inside (0, {a})",
            center - width,
            center + width
        )));
    }

    // P_{k+1} = P_k' (1-u^2)^2 + 4k u (1-u^2) P_k - 2u P_k
    let s = [1.0, 0.0, -1.0]; // 1 - u^2
    let s_sq = poly_mul(&s, &s);
    let mut polys = vec![vec![1.0]];
    for k in 0..MAX_DERIVATIVE_ORDER {
        let p = &polys[k];
        let term1 = poly_mul(&poly_derivative(p), &s_sq);
        let term2 = poly_mul(&poly_mul(&[0.0, 4.0 * k as f64], &s), p);
        let term3 = poly_mul(&[0.0, -2.0], p);
        polys.push(poly_add(&poly_add(&term1, &term2), &term3));
    }
    Ok(TestFunction { a, center, width, polys })
}

impl TestFunction {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.width, self.center + self.width)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(0, t)
    }

    /// `k`-th derivative at `t`; zero outside the support. Panics for
    /// `k > MAX_DERIVATIVE_ORDER`.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        assert!(
            k <= MAX_DERIVATIVE_ORDER,
            "derivative order {k} exceeds precomputed maximum {MAX_DERIVATIVE_ORDER}"
        );
        let u = (t - self.center) / self.width;
        let s = 1.0 - u * u;
        if s <= S_CUTOFF {
            return 0.0;
        }
        let base = (-1.0 / s).exp();
        let rational = poly_eval(&self.polys[k], u) / s.powi(2 * k as i32);
        rational * base / self.width.powi(k as i32)
    }

    /// Conservative sup bound on `|phi^(k)|` over the support: dense scan
    /// with 10^4 points plus a 10% safety margin.
    pub fn sup_bound(&self, k: usize) -> f64 {
        let points = 10_000;
        let (lo, hi) = self.support();
        let mut max = 0.0f64;
        for i in 0..=points {
            let t = lo + (hi - lo) * i as f64 / points as f64;
            max = max.max(self.derivative(k, t).abs());
        }
        1.1 * max
    }
}
