//! Generalized-derivative functionals of sampled trajectories.
//!
//! For a locally integrable `h` on `(0, a)` the distributional derivative of
//! order `i - 1` acts on a test function by
//! `h^(i-1)(phi) = (-1)^(i-1) integral h phi^(i-1) dt`, while a sampled state
//! component pairs directly: `x_i(phi) = integral x_i phi dt`. Comparing the
//! two tells how well `x_i` approximates the `(i-1)`-th derivative of the
//! reference signal in the distributional sense, with the mean-square gap
//! bounded by `a^2 sup|phi^(i-1)|^2 sigma1^2 gamma1`.

use serde::Serialize;

use crate::analysis::bump::TestFunction;
use crate::error::{Error, Result};
use crate::simulate::{SignalModel, SimulationGrid, TdConfig, Trajectory};

/// Composite trapezoid rule on a uniform grid.
///
/// Diffusion paths are only Holder continuous in time, so higher-order
/// rules would not converge any faster; the smooth test-function factor
/// keeps the product at the trapezoid rate in expectation.
pub fn trapezoid(dt: f64, values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    dt * (0.5 * (values[0] + values[values.len() - 1]) + interior)
}

/// Functional values for one derivative order.
#[derive(Debug, Clone, Serialize)]
pub struct GeneralizedDerivativeReport {
    pub order: usize,
    /// `integral x_i phi dt` over `(0, a)`.
    pub x_functional: f64,
    /// `(-1)^(i-1) integral v phi^(i-1) dt`, the distributional pairing.
    pub v_functional: f64,
    /// `integral v^(i-1) phi dt` where the signal provides the classical
    /// derivative; agrees with `v_functional` up to quadrature error.
    pub v_functional_direct: Option<f64>,
    pub abs_error: f64,
    /// `a^2 sup|phi^(i-1)|^2 sigma1^2 gamma1`.
    pub theorem2_bound: f64,
}

/// Pairs the `order`-th state component of `traj` against `phi` and the
/// reference signal against `phi^(order-1)`, both by trapezoid quadrature on
/// the trajectory grid clipped to `[0, a]`.
pub fn generalized_derivative_check(
    traj: &Trajectory,
    config: &TdConfig,
    signal: &SignalModel,
    phi: &TestFunction,
    order: usize,
) -> Result<GeneralizedDerivativeReport> {
    let n = config.order();
    if order < 2 || order > n {
        return Err(Error::invalid(format!("order must be in [2, {n}], got {order}")));
    }
    let t_end = *traj.times.last().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let grid = SimulationGrid::new(t_end, traj.meta.dt)?;
    let expected = config.digest(signal, &grid);
    if expected != traj.meta.config_digest {
        return Err(Error::DigestMismatch { found: traj.meta.config_digest.clone(), expected });
    }
    let a = phi.a();
    if t_end + 1e-9 < a {
        return Err(Error::invalid(format!(
            "trajectory ends at t = {t_end}, before the test interval (0, {a})"
        )));
    }
    let dt = traj.meta.dt;
    let (_, support_hi) = phi.support();
    // The quadrature stops at the last grid point inside [0, a]; that is
    // exact only if phi has already vanished there.
    let cutoff = (a / dt).floor() as usize;
    let cutoff = cutoff.min(traj.len() - 1);
    if traj.times[cutoff] < support_hi {
        return Err(Error::invalid(format!(
            "grid too coarse: last quadrature node {} lies inside the support (ends {})",
            traj.times[cutoff], support_hi
        )));
    }

    let k = order - 1;
    let x_weighted: Vec<f64> =
        (0..=cutoff).map(|j| traj.states[j][order - 1] * phi.value(traj.times[j])).collect();
    let x_functional = trapezoid(dt, &x_weighted);

    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let v_weighted: Vec<f64> =
        (0..=cutoff).map(|j| traj.v_values[j] * phi.derivative(k, traj.times[j])).collect();
    let v_functional = sign * trapezoid(dt, &v_weighted);

    let v_functional_direct = signal.higher_derivative(k, 0.0).map(|_| {
        let direct: Vec<f64> = (0..=cutoff)
            .map(|j| {
                signal.higher_derivative(k, traj.times[j]).expect("availability checked")
                    * phi.value(traj.times[j])
            })
            .collect();
        trapezoid(dt, &direct)
    });

    let sup = phi.sup_bound(k);
    let theorem2_bound = a * a * sup * sup * config.sigma1 * config.sigma1 * config.noise1.gamma();

    Ok(GeneralizedDerivativeReport {
        order,
        x_functional,
        v_functional,
        v_functional_direct,
        abs_error: (x_functional - v_functional).abs(),
        theorem2_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::make_bump;
    use crate::design::TdFunction;
    use crate::noise::OuParams;
    use crate::simulate::simulate_td;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let dt = 0.1;
        let values: Vec<f64> = (0..=10).map(|k| 2.0 * k as f64 * dt).collect();
        assert_abs_diff_eq!(trapezoid(dt, &values), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn by_parts_identity_for_linear_signal() {
        // v(t) = t on (0, 1): -integral t phi' dt = integral phi dt.
        let phi = make_bump(1.0, 0.5, 0.3).unwrap();
        let steps = 10_000;
        let dt = 1.0 / steps as f64;
        let by_parts: Vec<f64> =
            (0..=steps).map(|k| k as f64 * dt * phi.derivative(1, k as f64 * dt)).collect();
        let direct: Vec<f64> = (0..=steps).map(|k| phi.value(k as f64 * dt)).collect();
        assert_abs_diff_eq!(
            -trapezoid(dt, &by_parts),
            trapezoid(dt, &direct),
            epsilon = 1e-6
        );
    }

    #[test]
    fn quadrature_duality_for_smooth_integrand() {
        // |integral h phi^(k) - (-1)^k integral h^(k) phi| small at dt = 1e-3
        // for h = sin.
        let phi = make_bump(5.0, 2.5, 1.5).unwrap();
        let steps = 5000;
        let dt = 5.0 / steps as f64;
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();

        for k in 1..=2usize {
            let h = |t: f64| t.sin();
            let h_deriv = |t: f64| (t + k as f64 * std::f64::consts::FRAC_PI_2).sin();
            let lhs_vals: Vec<f64> = times.iter().map(|&t| h(t) * phi.derivative(k, t)).collect();
            let rhs_vals: Vec<f64> = times.iter().map(|&t| h_deriv(t) * phi.value(t)).collect();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let gap = (trapezoid(dt, &lhs_vals) - sign * trapezoid(dt, &rhs_vals)).abs();
            assert!(gap <= 1e-4, "duality gap {gap} at order {k}");
        }
    }

    fn setup() -> (TdConfig, SignalModel, SimulationGrid) {
        let config = TdConfig::new(
            TdFunction::linear(vec![-2.0, -4.0]).unwrap(),
            30.0,
            0.2,
            2.0,
            2.0,
            OuParams::new(3.0, 1.0 / 18.0, 1.0).unwrap(),
            OuParams::new(3.0, 1.0 / 18.0, -1.0).unwrap(),
            vec![1.0f64.sin(), 0.0],
        )
        .unwrap();
        let signal = SignalModel::sinusoid(1.0, 3.0, 1.0);
        let grid = SimulationGrid::new(5.0, 0.001).unwrap();
        (config, signal, grid)
    }

    #[test]
    fn report_fields_consistent() {
        let (config, signal, grid) = setup();
        let traj = simulate_td(&config, &signal, &grid, 21).unwrap();
        let phi = make_bump(5.0, 2.5, 1.5).unwrap();
        let report = generalized_derivative_check(&traj, &config, &signal, &phi, 2).unwrap();
        assert_abs_diff_eq!(
            report.abs_error,
            (report.x_functional - report.v_functional).abs(),
            epsilon = 1e-15
        );
        // Direct and by-parts evaluations of the signal functional agree.
        let direct = report.v_functional_direct.unwrap();
        assert_abs_diff_eq!(direct, report.v_functional, epsilon = 1e-4);
        assert!(report.theorem2_bound > 0.0);
    }

    #[test]
    fn rejects_bad_order_and_short_grid() {
        let (config, signal, grid) = setup();
        let traj = simulate_td(&config, &signal, &grid, 22).unwrap();
        let phi = make_bump(5.0, 2.5, 1.5).unwrap();
        assert!(generalized_derivative_check(&traj, &config, &signal, &phi, 1).is_err());
        assert!(generalized_derivative_check(&traj, &config, &signal, &phi, 3).is_err());

        let short = SimulationGrid::new(2.0, 0.001).unwrap();
        let short_traj = simulate_td(&config, &signal, &short, 22).unwrap();
        assert!(generalized_derivative_check(&short_traj, &config, &signal, &phi, 2).is_err());
    }

    #[test]
    fn x2_functional_approximates_derivative_pairing() {
        // sigma1 = 0: the gap between x_2(phi) and v'(phi) is small at
        // r = 30 and smaller than at r = 5 under a matched seed.
        let mk = |r: f64| {
            TdConfig::new(
                TdFunction::linear(vec![-2.0, -4.0]).unwrap(),
                r,
                0.0,
                2.0,
                2.0,
                OuParams::new(3.0, 1.0 / 18.0, 1.0).unwrap(),
                OuParams::new(3.0, 1.0 / 18.0, -1.0).unwrap(),
                vec![1.0f64.sin(), 0.0],
            )
            .unwrap()
        };
        let signal = SignalModel::sinusoid(1.0, 3.0, 1.0);
        let grid = SimulationGrid::new(5.0, 0.001).unwrap();
        let phi = make_bump(5.0, 2.5, 1.5).unwrap();
        let err = |r: f64| {
            let config = mk(r);
            let traj = simulate_td(&config, &signal, &grid, 33).unwrap();
            generalized_derivative_check(&traj, &config, &signal, &phi, 2).unwrap().abs_error
        };
        let at_5 = err(5.0);
        let at_30 = err(30.0);
        assert!(at_30 < at_5, "abs_error at r=30 ({at_30}) vs r=5 ({at_5})");
        assert!(at_30 < 0.05, "abs_error at r=30 too large: {at_30}");
    }
}
