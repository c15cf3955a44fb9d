//! TD design functions and their stability certificates.
//!
//! A design function `f: R^n -> R` drives the differentiator's top
//! integrator. Admissible designs make the nominal error system
//! `dz = (z2, ..., zn, f(z))` globally exponentially stable, witnessed by a
//! quadratic Lyapunov pair `(V, W)` with constants `lambda1..lambda4`,
//! `c1`, `c2`:
//!
//! ```text
//! lambda1 |z|^2 <= V(z) <= lambda2 |z|^2,
//! lambda3 |z|^2 <= W(z) <= lambda4 |z|^2,
//! sum_i dV/dz_i * z_{i+1} + dV/dz_n * f(z) <= -W(z),
//! |dV/dz_j| <= c1 |z|,  |d^2V/dz_j^2| <= c2   for j in {1, n}.
//! ```
//!
//! For linear designs the certificate is constructed automatically from the
//! Lyapunov equation `Q A + A^T Q = -I`. The certificate also determines the
//! admissible range of the tuning gain,
//! `R0 = { r >= 1 : 1/r + 1/(2 r^(2n-1)) <= theta lambda3 / lambda2 }`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::stream_rng;

/// Saturated-sine nonlinearity used by the builtin second-order design:
/// `-1/(4 pi)` below `-pi/2`, `sin(s)/(4 pi)` on `[-pi/2, pi/2]`,
/// `1/(4 pi)` above `pi/2`. Lipschitz and zero at zero.
pub fn saturated_sine(s: f64) -> f64 {
    let cap = 0.25 / std::f64::consts::PI;
    if s < -FRAC_PI_2 {
        -cap
    } else if s > FRAC_PI_2 {
        cap
    } else {
        cap * s.sin()
    }
}

type UserFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A TD design function together with its arity.
#[derive(Clone)]
pub enum TdFunction {
    /// `f(z) = a1 z1 + ... + an zn`.
    Linear(LinearDesign),
    /// The second-order design `f(z1, z2) = -2 z1 - 4 z2 - phi(z1)` with
    /// `phi` the saturated sine.
    BuiltinNonlinear2d,
    /// Caller-supplied function; must satisfy `f(0) = 0` and be total.
    User { order: usize, f: UserFn },
}

impl fmt::Debug for TdFunction {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TdFunction::Linear(d) => fm.debug_tuple("Linear").field(&d.coefficients).finish(),
            TdFunction::BuiltinNonlinear2d => fm.write_str("BuiltinNonlinear2d"),
            TdFunction::User { order, .. } => {
                fm.debug_struct("User").field("order", order).finish()
            }
        }
    }
}

/// Builds the design used in the second-order nonlinear example.
pub fn builtin_nonlinear_2d() -> TdFunction {
    TdFunction::BuiltinNonlinear2d
}

impl TdFunction {
    pub fn linear(coefficients: Vec<f64>) -> Result<Self> {
        Ok(TdFunction::Linear(LinearDesign::new(coefficients)?))
    }

    pub fn user(order: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!("order must be >= 2, got {order}")));
        }
        Ok(TdFunction::User { order, f: Arc::new(f) })
    }

    pub fn order(&self) -> usize {
        match self {
            TdFunction::Linear(d) => d.order(),
            TdFunction::BuiltinNonlinear2d => 2,
            TdFunction::User { order, .. } => *order,
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.order());
        match self {
            TdFunction::Linear(d) => d.evaluate(z),
            TdFunction::BuiltinNonlinear2d => -2.0 * z[0] - 4.0 * z[1] - saturated_sine(z[0]),
            TdFunction::User { f, .. } => f(z),
        }
    }

    /// Stable tag for config digests.
    pub fn kind_tag(&self) -> String {
        match self {
            TdFunction::Linear(d) => format!("linear{:?}", d.coefficients),
            TdFunction::BuiltinNonlinear2d => "builtin-nonlinear-2d".to_string(),
            TdFunction::User { order, .. } => format!("user-supplied(order={order})"),
        }
    }
}

/// Coefficients `a1..an` of a linear design and its companion matrix
/// (ones on the superdiagonal, coefficients in the last row).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    coefficients: Vec<f64>,
}

impl LinearDesign {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::invalid(format!(
                "linear design needs order >= 2, got {} coefficients",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("linear design coefficients must be finite"));
        }
        Ok(LinearDesign { coefficients })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.coefficients.iter().zip(z).map(|(a, zi)| a * zi).sum()
    }

    pub fn companion_matrix(&self) -> DMatrix<f64> {
        let n = self.order();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = self.coefficients[j];
        }
        a
    }
}

/// True iff every eigenvalue of the companion matrix has strictly negative
/// real part. A scale-aware tolerance keeps marginal spectra (eigenvalues on
/// the imaginary axis up to roundoff) classified as unstable.
pub fn hurwitz_check(design: &LinearDesign) -> bool {
    let a = design.companion_matrix();
    let scale = 1.0 + design.coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * scale;
    a.complex_eigenvalues().iter().all(|ev| ev.re < -tol)
}

/// Quadratic form `z^T M z` with a symmetric coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    matrix: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("quadratic form matrix must be square"));
        }
        let sym_tol = 1e-9 * (1.0 + matrix.amax());
        for i in 0..matrix.nrows() {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > sym_tol {
                    return Err(Error::invalid("quadratic form matrix must be symmetric"));
                }
            }
        }
        // Symmetrize exactly so gradients are consistent.
        let matrix = (matrix.transpose() + &matrix) * 0.5;
        Ok(QuadraticForm { matrix })
    }

    pub fn identity(n: usize) -> Self {
        QuadraticForm { matrix: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += z[i] * self.matrix[(i, j)] * z[j];
            }
        }
        acc
    }

    /// `d/dz_j (z^T M z) = 2 (M z)_j`, exact for quadratics.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| 2.0 * (0..n).map(|k| self.matrix[(j, k)] * z[k]).sum::<f64>())
            .collect()
    }

    /// `d^2/dz_j^2 (z^T M z) = 2 M_jj`, constant in `z`.
    pub fn second_derivative_diag(&self, j: usize) -> f64 {
        2.0 * self.matrix[(j, j)]
    }

    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let eig = self.matrix.clone().symmetric_eigen();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ev in eig.eigenvalues.iter() {
            lo = lo.min(*ev);
            hi = hi.max(*ev);
        }
        (lo, hi)
    }
}

/// Constants and quadratic forms witnessing the stability assumption, plus
/// the margin `theta` used by the admissible-range inequality.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
    c1: f64,
    c2: f64,
    v: QuadraticForm,
    w: QuadraticForm,
    theta: f64,
}

impl LyapunovCertificate {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        lambda3: f64,
        lambda4: f64,
        c1: f64,
        c2: f64,
        v: QuadraticForm,
        w: QuadraticForm,
        theta: f64,
    ) -> Result<Self> {
        for (name, val) in [
            ("lambda1", lambda1),
            ("lambda2", lambda2),
            ("lambda3", lambda3),
            ("lambda4", lambda4),
            ("c1", c1),
            ("c2", c2),
        ] {
            if !val.is_finite() || val <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {val}")));
            }
        }
        if lambda1 > lambda2 {
            return Err(Error::invalid("lambda1 must not exceed lambda2"));
        }
        if lambda3 > lambda4 {
            return Err(Error::invalid("lambda3 must not exceed lambda4"));
        }
        if !(0.0 < theta && theta < 1.0) {
            return Err(Error::invalid(format!("theta must be in (0, 1), got {theta}")));
        }
        if v.dim() != w.dim() {
            return Err(Error::invalid("V and W must have the same dimension"));
        }
        let tol = 1e-9;
        let (vlo, vhi) = v.eigenvalue_range();
        if vlo < lambda1 - tol || vhi > lambda2 + tol {
            return Err(Error::invalid(format!(
                "V eigenvalues [{vlo:.6}, {vhi:.6}] not contained in [lambda1, lambda2] = [{lambda1}, {lambda2}]"
            )));
        }
        let (wlo, whi) = w.eigenvalue_range();
        if wlo < lambda3 - tol || whi > lambda4 + tol {
            return Err(Error::invalid(format!(
                "W eigenvalues [{wlo:.6}, {whi:.6}] not contained in [lambda3, lambda4] = [{lambda3}, {lambda4}]"
            )));
        }
        Ok(LyapunovCertificate { lambda1, lambda2, lambda3, lambda4, c1, c2, v, w, theta })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }

    pub fn lambda4(&self) -> f64 {
        self.lambda4
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn v(&self) -> &QuadraticForm {
        &self.v
    }

    pub fn w(&self) -> &QuadraticForm {
        &self.w
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !(0.0 < theta && theta < 1.0) {
            return Err(Error::invalid(format!("theta must be in (0, 1), got {theta}")));
        }
        self.theta = theta;
        Ok(self)
    }
}

/// Solves `Q A + A^T Q = -I` for the companion matrix of a Hurwitz linear
/// design, via a dense linear system over the `n(n+1)/2` independent entries
/// of the symmetric `Q`. Returns `Q` and the certificate it induces:
/// `lambda1 = lambda_min(Q)`, `lambda2 = lambda_max(Q)`,
/// `lambda3 = lambda4 = 1`, `c1 = c2 = 2 lambda_max(Q)`, `V(z) = z^T Q z`,
/// `W(z) = |z|^2`, with margin `theta = 0.5` (adjust with
/// [`LyapunovCertificate::with_theta`]).
pub fn solve_lyapunov(design: &LinearDesign) -> Result<(DMatrix<f64>, LyapunovCertificate)> {
    if !hurwitz_check(design) {
        return Err(Error::NotHurwitz(format!(
            "coefficients {:?} give an unstable companion matrix",
            design.coefficients()
        )));
    }
    let n = design.order();
    let a = design.companion_matrix();
    let m = n * (n + 1) / 2;
    let idx = |i: usize, j: usize| -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        i * n - i * (i + 1) / 2 + j
    };

    let mut system = DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            // (Q A + A^T Q)_{ij} = sum_k Q_{ik} A_{kj} + A_{ki} Q_{kj}
            for k in 0..n {
                system[(row, idx(i, k))] += a[(k, j)];
                system[(row, idx(k, j))] += a[(k, i)];
            }
            rhs[row] = if i == j { -1.0 } else { 0.0 };
        }
    }
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz("Lyapunov system is singular".into()))?;

    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            q[(i, j)] = solution[idx(i, j)];
            q[(j, i)] = solution[idx(i, j)];
        }
    }

    let form = QuadraticForm::new(q.clone())?;
    let (lambda_min, lambda_max) = form.eigenvalue_range();
    if lambda_min <= 0.0 {
        return Err(Error::NotHurwitz(format!(
            "Lyapunov solution is not positive definite (lambda_min = {lambda_min})"
        )));
    }
    let cert = LyapunovCertificate::new(
        lambda_min,
        lambda_max,
        1.0,
        1.0,
        2.0 * lambda_max,
        2.0 * lambda_max,
        form,
        QuadraticForm::identity(n),
        0.5,
    )?;
    Ok((q, cert))
}

/// Sampling region and budget for [`verify_certificate`].
#[derive(Debug, Clone, Copy)]
pub struct SampleSpec {
    /// Half-width of the sampled cube `[-radius, radius]^n`.
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Normalized violation above which an inequality counts as broken.
    pub tol: f64,
}

impl SampleSpec {
    pub fn new(radius: f64, samples: usize, seed: u64) -> Self {
        SampleSpec { radius, samples, seed, tol: 1e-8 }
    }
}

/// Outcome of a sampled certificate check. `holds` refers to the sampled
/// region only; this is a falsifier, not a prover.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub holds: bool,
    /// Largest normalized violation `(lhs - rhs) / (1 + |z|^2)` observed.
    pub worst_violation: f64,
    /// Point attaining the worst violation.
    pub witness: Vec<f64>,
    pub radius: f64,
    pub samples: usize,
}

/// Checks all certificate inequalities (value sandwiches for `V` and `W`,
/// dissipation along the nominal field, and the gradient/Hessian bounds at
/// the first and last coordinate) at points sampled uniformly from
/// `[-radius, radius]^n`. Gradients and Hessians of the quadratic forms are
/// evaluated in closed form.
pub fn verify_certificate(
    f: &TdFunction,
    cert: &LyapunovCertificate,
    spec: &SampleSpec,
) -> CertificateReport {
    let n = cert.dim();
    debug_assert_eq!(f.order(), n);
    let mut rng = stream_rng(spec.seed, "certificate-samples");
    let mut worst = f64::NEG_INFINITY;
    let mut witness = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..spec.samples {
        for zi in z.iter_mut() {
            *zi = rng.random_range(-spec.radius..=spec.radius);
        }
        let norm_sq: f64 = z.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        let v_val = cert.v.evaluate(&z);
        let w_val = cert.w.evaluate(&z);
        let grad = cert.v.gradient(&z);
        let drift: f64 = (0..n - 1).map(|i| grad[i] * z[i + 1]).sum::<f64>()
            + grad[n - 1] * f.evaluate(&z);

        let violations = [
            cert.lambda1 * norm_sq - v_val,
            v_val - cert.lambda2 * norm_sq,
            cert.lambda3 * norm_sq - w_val,
            w_val - cert.lambda4 * norm_sq,
            drift + w_val,
            grad[0].abs() - cert.c1 * norm,
            grad[n - 1].abs() - cert.c1 * norm,
            cert.v.second_derivative_diag(0).abs() - cert.c2,
            cert.v.second_derivative_diag(n - 1).abs() - cert.c2,
        ];
        for viol in violations {
            let scaled = viol / (1.0 + norm_sq);
            if scaled > worst {
                worst = scaled;
                witness.copy_from_slice(&z);
            }
        }
    }
    CertificateReport {
        holds: worst <= spec.tol,
        worst_violation: worst,
        witness,
        radius: spec.radius,
        samples: spec.samples,
    }
}

/// Left-hand side of the admissibility inequality, `1/r + 1/(2 r^(2n-1))`.
/// Strictly decreasing in `r` on `[1, inf)`.
pub fn admissibility_lhs(r: f64, n: usize) -> f64 {
    1.0 / r + 0.5 / r.powi(2 * n as i32 - 1)
}

/// Membership test for the admissible range `R0`.
pub fn is_admissible(cert: &LyapunovCertificate, n: usize, r: f64) -> bool {
    r >= 1.0 && admissibility_lhs(r, n) <= cert.theta() * cert.lambda3() / cert.lambda2()
}

/// Smallest admissible tuning gain: the least `r >= 1` with
/// `1/r + 1/(2 r^(2n-1)) <= theta lambda3 / lambda2`, found by bisection on
/// the strictly decreasing left-hand side (absolute tolerance `1e-6`, upper
/// bracket end returned so the result is always admissible).
pub fn admissible_r_min(cert: &LyapunovCertificate, n: usize) -> f64 {
    assert!(n >= 2, "admissible_r_min requires n >= 2");
    let threshold = cert.theta() * cert.lambda3() / cert.lambda2();
    if admissibility_lhs(1.0, n) <= threshold {
        return 1.0;
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while admissibility_lhs(hi, n) > threshold {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if admissibility_lhs(mid, n) <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
