//! Closed-form moment-growth and tracking-bound calculators.
//!
//! With a certificate `(lambda1..lambda4, c1, c2, V, W, theta)`, noise
//! parameters `gamma_i = w_i(0)^2 + alpha_i beta_i`, and a signal bound `M`,
//! the moment-growth estimate reads
//!
//! ```text
//! E sup_{0<=s<=t} |y(s)|^2 <= (N1 + N2/N3) exp(N3 t) / lambda1
//! ```
//!
//! and the mean-square tracking bound, for any `mu > 0` and admissible `r`,
//!
//! ```text
//! E|x_1(t) - v(t)|^2 <= (1 + 1/mu) Gamma / r + (1 + mu) sigma1^2 gamma1
//! ```
//!
//! uniformly in `t >= T`. All constants are evaluated verbatim from their
//! defining displays; `Gamma` does not depend on `r`.

use serde::Serialize;

use crate::design::{admissible_r_min, is_admissible, LyapunovCertificate};
use crate::error::{Error, Result};
use crate::simulate::{SignalModel, TdConfig};

/// Moment-growth constants `N1, N2, N3`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AppendixAConstants {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

/// Error-system initial state `y(0)` for deterministic initial data:
/// `y_1(0) = x_1(0) - v(0) - sigma1 w_1(0)`, `y_i(0) = x_i(0) / r^(i-1)`.
fn initial_error_state(config: &TdConfig, signal: &SignalModel) -> Vec<f64> {
    let n = config.order();
    let r = config.r();
    let mut y0 = vec![0.0; n];
    y0[0] = config.x0()[0] - signal.value(0.0) - config.sigma1 * config.noise1.w0();
    for i in 1..n {
        y0[i] = config.x0()[i] / r.powi(i as i32);
    }
    y0
}

/// Evaluates the three moment-growth constants:
///
/// ```text
/// N1 = 2 V(y(0)) + 32 c1^2 sigma1^2 alpha1^2 beta1 / r
/// N2 = c1^2 M^2 / r + c1^2 sigma1^2 alpha1^2 gamma1 / r
///      + 2 c2 sigma1^2 alpha1^2 beta1 / r + c1^2 sigma2^2 gamma2 / r^n
///      + c2 sigma3^2 / r^(2n-1) + 32 c1^2 sigma3^2 / (r^(2n-1) lambda1)
/// N3 = 2 / (lambda1 r) + 1 / (lambda1 r^n) + 2 / lambda1
/// ```
///
/// Initial data are deterministic, so the expectation in `N1` is a plain
/// evaluation of `V` at `y(0)`. `r >= 1` is guaranteed by [`TdConfig`].
pub fn appendix_a_constants(
    cert: &LyapunovCertificate,
    config: &TdConfig,
    signal: &SignalModel,
) -> AppendixAConstants {
    let r = config.r();
    let n = config.order() as i32;
    let c1 = cert.c1();
    let c2 = cert.c2();
    let lambda1 = cert.lambda1();
    let m = signal.bound_m();
    let (s1, s2, s3) = (config.sigma1, config.sigma2, config.sigma3);
    let a1 = config.noise1.alpha();
    let b1 = config.noise1.beta();
    let gamma1 = config.noise1.gamma();
    let gamma2 = config.noise2.gamma();

    let y0 = initial_error_state(config, signal);
    let v_y0 = cert.v().evaluate(&y0);

    let n1 = 2.0 * v_y0 + 32.0 * c1 * c1 * s1 * s1 * a1 * a1 * b1 / r;
    let n2 = c1 * c1 * m * m / r
        + c1 * c1 * s1 * s1 * a1 * a1 * gamma1 / r
        + 2.0 * c2 * s1 * s1 * a1 * a1 * b1 / r
        + c1 * c1 * s2 * s2 * gamma2 / r.powi(n)
        + c2 * s3 * s3 / r.powi(2 * n - 1)
        + 32.0 * c1 * c1 * s3 * s3 / (r.powi(2 * n - 1) * lambda1);
    let n3 = 2.0 / (lambda1 * r) + 1.0 / (lambda1 * r.powi(n)) + 2.0 / lambda1;
    AppendixAConstants { n1, n2, n3 }
}

/// Moment-growth bound `(N1 + N2/N3) exp(N3 t) / lambda1` on
/// `E sup_{0<=s<=t} |y(s)|^2`.
pub fn lemma1_moment_bound(
    cert: &LyapunovCertificate,
    config: &TdConfig,
    signal: &SignalModel,
    t: f64,
) -> f64 {
    assert!(t >= 0.0, "lemma1_moment_bound requires t >= 0, got {t}");
    let AppendixAConstants { n1, n2, n3 } = appendix_a_constants(cert, config, signal);
    (n1 + n2 / n3) * (n3 * t).exp() / cert.lambda1()
}

/// Minimizes `(1 + 1/mu) a + (1 + mu) b` over `mu > 0`. The minimizer is
/// `mu* = sqrt(a/b)` with value `(sqrt(a) + sqrt(b))^2`; when `b = 0` the
/// infimum `a` is approached as `mu -> inf` and no finite minimizer exists.
pub fn optimize_mu(a: f64, b: f64) -> (f64, Option<f64>) {
    if b <= 0.0 {
        (a, None)
    } else {
        ((a.sqrt() + b.sqrt()).powi(2), Some((a / b).sqrt()))
    }
}

/// All constants entering the mean-square tracking bound, evaluated for one
/// configuration at horizon `T` and weight `mu`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub lambda1: f64,
    pub big_gamma1: f64,
    pub big_gamma2: f64,
    pub big_gamma: f64,
    pub mu: f64,
    pub t_horizon: f64,
    pub r: f64,
    pub r_min: f64,
    /// `sigma1^2 gamma1`, the noise floor the bound approaches as `r -> inf`.
    pub asymptote: f64,
    /// Bound at the supplied `mu`.
    pub theorem1_bound: f64,
    /// Minimizer `sqrt((Gamma/r) / asymptote)` when the asymptote is
    /// positive.
    pub mu_star: Option<f64>,
    /// `(sqrt(Gamma/r) + sigma1 sqrt(gamma1))^2`, the sharpest reportable
    /// form of the bound.
    pub theorem1_bound_optimized: f64,
}

impl BoundReport {
    /// Moment-growth bound at scaled time `t`, from the same constants.
    pub fn lemma1_bound_at(&self, t: f64) -> f64 {
        assert!(t >= 0.0);
        (self.n1 + self.n2 / self.n3) * (self.n3 * t).exp() / self.lambda1
    }
}

/// Evaluates the tracking-bound constants:
///
/// ```text
/// Gamma1 = c1^2 M^2 / (2 lambda1) + c1^2 sigma1^2 alpha1^2 gamma1 / (2 lambda1)
///          + c2 sigma1^2 alpha1^2 beta1 + c1^2 sigma2^2 gamma2 / (2 lambda1)
///          + c2 sigma3^2 / 2
/// Gamma2 = sup_{r in R0} [ exp(-(1-theta) lambda3 r T / lambda2) r ]
///          * [ |x1(0) - v(0) - sigma1 w1(0)|^2 + sum_{i=1}^{n-1} |x_{i+1}(0)|^2 ]
/// Gamma  = lambda2 Gamma2 / lambda1 + lambda2 Gamma1 / ((1-theta) lambda3 lambda1)
/// ```
///
/// The supremum is closed-form: `g(r) = exp(-cTr) r` peaks at `r* = 1/(cT)`,
/// clipped to the admissible range `[r_min, inf)`. Rejects `mu <= 0`,
/// `T <= 0`, and `r` outside the admissible range.
pub fn theorem1_bound(
    cert: &LyapunovCertificate,
    config: &TdConfig,
    signal: &SignalModel,
    mu: f64,
    t_horizon: f64,
) -> Result<BoundReport> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    if !t_horizon.is_finite() || t_horizon <= 0.0 {
        return Err(Error::invalid(format!("T must be positive, got {t_horizon}")));
    }
    let n = config.order();
    let r = config.r();
    let r_min = admissible_r_min(cert, n);
    if !is_admissible(cert, n, r) {
        return Err(Error::NotAdmissible {
            r,
            reason: format!(
                "admissibility needs 1/r + 1/(2 r^(2n-1)) <= theta*lambda3/lambda2; smallest admissible r is {r_min:.6}"
            ),
        });
    }

    let c1 = cert.c1();
    let c2 = cert.c2();
    let (lambda1, lambda2, lambda3) = (cert.lambda1(), cert.lambda2(), cert.lambda3());
    let theta = cert.theta();
    let m = signal.bound_m();
    let (s1, s2, s3) = (config.sigma1, config.sigma2, config.sigma3);
    let a1 = config.noise1.alpha();
    let b1 = config.noise1.beta();
    let gamma1 = config.noise1.gamma();
    let gamma2 = config.noise2.gamma();

    let big_gamma1 = c1 * c1 * m * m / (2.0 * lambda1)
        + c1 * c1 * s1 * s1 * a1 * a1 * gamma1 / (2.0 * lambda1)
        + c2 * s1 * s1 * a1 * a1 * b1
        + c1 * c1 * s2 * s2 * gamma2 / (2.0 * lambda1)
        + c2 * s3 * s3 / 2.0;

    let decay = (1.0 - theta) * lambda3 / lambda2;
    let g = |r: f64| (-decay * t_horizon * r).exp() * r;
    let r_peak = (1.0 / (decay * t_horizon)).max(r_min);
    let y1_0 = config.x0()[0] - signal.value(0.0) - config.sigma1 * config.noise1.w0();
    let bracket = y1_0 * y1_0
        + config.x0()[1..].iter().map(|x| x * x).sum::<f64>();
    let big_gamma2 = g(r_peak) * bracket;

    let big_gamma = lambda2 * big_gamma2 / lambda1
        + lambda2 * big_gamma1 / ((1.0 - theta) * lambda3 * lambda1);

    let asymptote = s1 * s1 * gamma1;
    let per_r = big_gamma / r;
    let bound = (1.0 + 1.0 / mu) * per_r + (1.0 + mu) * asymptote;
    let (bound_opt, mu_star) = optimize_mu(per_r, asymptote);

    let AppendixAConstants { n1, n2, n3 } = appendix_a_constants(cert, config, signal);
    Ok(BoundReport {
        n1,
        n2,
        n3,
        lambda1,
        big_gamma1,
        big_gamma2,
        big_gamma,
        mu,
        t_horizon,
        r,
        r_min,
        asymptote,
        theorem1_bound: bound,
        mu_star,
        theorem1_bound_optimized: bound_opt,
    })
}
