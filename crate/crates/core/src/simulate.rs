//! Euler-Maruyama integration of the coupled differentiator + noise system.
//!
//! The tracking differentiator of order `n` with gain `r` is the Ito system
//!
//! ```text
//! dx_i = x_{i+1} dt                                   (i < n)
//! dx_n = [r^n f(x_1 - v*(t), x_2/r, ..., x_n/r^(n-1)) + sigma2 w_2(t)] dt
//!        + sigma3 dB_3(t),
//! ```
//!
//! fed the corrupted signal `v*(t) = v(t) + sigma1 w_1(t)`, with `w_1, w_2`
//! Ornstein-Uhlenbeck states advanced concurrently. Drift and diffusion are
//! evaluated at the left endpoint of each step; `v*` inside `f` uses the
//! same `w_1` sample as that step's noise-state update.
//!
//! The module also integrates the time-scaled error system in the variables
//! `y_1(t) = x_1(t/r) - v*(t/r)`, `y_i(t) = x_i(t/r) / r^(i-1)`, which the
//! error analysis works in, and provides the exact algebraic transform
//! between the two representations for cross-validation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::design::TdFunction;
use crate::error::{Error, Result};
use crate::noise::{ou_euler_step, stream_rng, OuParams, RNG_DESCRIPTION};

type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The reference signal `v` with its derivative and a declared bound
/// `M >= sup (|v| + |v_dot|)`.
#[derive(Clone)]
pub enum SignalModel {
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
    User { v: TimeFn, v_dot: TimeFn, bound_m: f64 },
}

impl std::fmt::Debug for SignalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SignalModel::Sinusoid { amplitude, frequency, phase } => f
                .debug_struct("Sinusoid")
                .field("amplitude", amplitude)
                .field("frequency", frequency)
                .field("phase", phase)
                .finish(),
            SignalModel::User { bound_m, .. } => {
                f.debug_struct("User").field("bound_m", bound_m).finish()
            }
        }
    }
}

impl SignalModel {
    pub fn sinusoid(amplitude: f64, frequency: f64, phase: f64) -> Self {
        SignalModel::Sinusoid { amplitude, frequency, phase }
    }

    pub fn user(
        v: impl Fn(f64) -> f64 + Send + Sync + 'static,
        v_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bound_m: f64,
    ) -> Result<Self> {
        if !bound_m.is_finite() || bound_m <= 0.0 {
            return Err(Error::invalid(format!("bound_m must be positive, got {bound_m}")));
        }
        Ok(SignalModel::User { v: Arc::new(v), v_dot: Arc::new(v_dot), bound_m })
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            SignalModel::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (frequency * t + phase).sin()
            }
            SignalModel::User { v, .. } => v(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            SignalModel::Sinusoid { amplitude, frequency, phase } => {
                amplitude * frequency * (frequency * t + phase).cos()
            }
            SignalModel::User { v_dot, .. } => v_dot(t),
        }
    }

    /// `k`-th derivative where available: any order for the sinusoid
    /// (`A w^k sin(w t + p + k pi/2)`), orders 0 and 1 for user signals.
    pub fn higher_derivative(&self, k: usize, t: f64) -> Option<f64> {
        match (k, self) {
            (0, _) => Some(self.value(t)),
            (1, _) => Some(self.derivative(t)),
            (_, SignalModel::Sinusoid { amplitude, frequency, phase }) => {
                let shift = k as f64 * std::f64::consts::FRAC_PI_2;
                Some(amplitude * frequency.powi(k as i32) * (frequency * t + phase + shift).sin())
            }
            _ => None,
        }
    }

    /// Declared sup bound on `|v| + |v_dot|`. For the sinusoid the simple
    /// envelope `|A| (1 + |w|)` is used.
    pub fn bound_m(&self) -> f64 {
        match self {
            SignalModel::Sinusoid { amplitude, frequency, .. } => {
                amplitude.abs() * (1.0 + frequency.abs())
            }
            SignalModel::User { bound_m, .. } => *bound_m,
        }
    }

    /// Per-run check of the declared bound at an evaluated grid point.
    fn check_bound(&self, t: f64) -> Result<()> {
        let total = self.value(t).abs() + self.derivative(t).abs();
        if total > self.bound_m() * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "signal bound violated: |v| + |v_dot| = {total} > M = {} at t = {t}",
                self.bound_m()
            )));
        }
        Ok(())
    }

    pub fn kind_tag(&self) -> String {
        match self {
            SignalModel::Sinusoid { amplitude, frequency, phase } => {
                format!("sinusoid({amplitude},{frequency},{phase})")
            }
            SignalModel::User { bound_m, .. } => format!("user-supplied(M={bound_m})"),
        }
    }
}

/// Everything that defines one differentiator instance.
#[derive(Debug, Clone)]
pub struct TdConfig {
    n: usize,
    r: f64,
    f: TdFunction,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub noise1: OuParams,
    pub noise2: OuParams,
    x0: Vec<f64>,
}

impl TdConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f: TdFunction,
        r: f64,
        sigma1: f64,
        sigma2: f64,
        sigma3: f64,
        noise1: OuParams,
        noise2: OuParams,
        x0: Vec<f64>,
    ) -> Result<Self> {
        let n = f.order();
        if n < 2 {
            return Err(Error::invalid(format!("order must be >= 2, got {n}")));
        }
        if !r.is_finite() || r < 1.0 {
            return Err(Error::invalid(format!("r must satisfy r >= 1, got {r}")));
        }
        for (name, s) in [("sigma1", sigma1), ("sigma2", sigma2), ("sigma3", sigma3)] {
            if !s.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {s}")));
            }
        }
        if x0.len() != n {
            return Err(Error::invalid(format!("x0 has length {}, expected order {n}", x0.len())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0 entries must be finite"));
        }
        Ok(TdConfig { n, r, f, sigma1, sigma2, sigma3, noise1, noise2, x0 })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn f(&self) -> &TdFunction {
        &self.f
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Stable hash of the simulation inputs, recorded in trajectory
    /// metadata and re-checked by coordinate transforms.
    pub fn digest(&self, signal: &SignalModel, grid: &SimulationGrid) -> String {
        #[derive(Serialize)]
        struct DigestInput<'a> {
            n: usize,
            r: f64,
            f: String,
            sigma: [f64; 3],
            noise1: (f64, f64, f64),
            noise2: (f64, f64, f64),
            x0: &'a [f64],
            signal: String,
            t_end: f64,
            dt: f64,
        }
        let input = DigestInput {
            n: self.n,
            r: self.r,
            f: self.f.kind_tag(),
            sigma: [self.sigma1, self.sigma2, self.sigma3],
            noise1: (self.noise1.alpha(), self.noise1.beta(), self.noise1.w0()),
            noise2: (self.noise2.alpha(), self.noise2.beta(), self.noise2.w0()),
            x0: &self.x0,
            signal: signal.kind_tag(),
            t_end: grid.t_end(),
            dt: grid.dt(),
        };
        let json = serde_json::to_string(&input).expect("digest input serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Uniform time grid with `steps * dt = t_end` (up to rounding slack).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    t_end: f64,
    dt: f64,
    steps: usize,
}

impl SimulationGrid {
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(Error::invalid(format!("t_end must be positive, got {t_end}")));
        }
        let steps = (t_end / dt).round() as usize;
        if steps == 0 {
            return Err(Error::invalid("grid must contain at least one step"));
        }
        let slack = (steps as f64 * dt - t_end).abs();
        if slack > 1e-9 * t_end.max(1.0) {
            return Err(Error::invalid(format!(
                "t_end = {t_end} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(SimulationGrid { t_end, dt, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub dt: f64,
    pub config_digest: String,
    pub rng: String,
}

/// Sampled paths of the differentiator state, the two noise states, and the
/// reference signal, on a uniform grid. Also used for the time-scaled error
/// system, in which case `states` holds `y` and the noise/signal columns are
/// evaluated at the slowed time `t/r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `steps + 1` rows of the `n`-dimensional state.
    pub states: Vec<Vec<f64>>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub v_values: Vec<f64>,
    pub v_star_values: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn order(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Column of one state component.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|row| row[i]).collect()
    }

    /// Writes the trajectory as CSV: metadata as `#` comment lines, then
    /// `t,x1,...,xn,w1,w2,v,vstar` with one row per grid point.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed: {}", self.meta.seed)?;
        writeln!(out, "# dt: {}", self.meta.dt)?;
        writeln!(out, "# config: {}", self.meta.config_digest)?;
        writeln!(out, "# rng: {}", self.meta.rng)?;
        let n = self.order();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain(["w1", "w2", "v", "vstar"].map(str::to_string))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut fields = Vec::with_capacity(n + 5);
            fields.push(self.times[k].to_string());
            for i in 0..n {
                fields.push(self.states[k][i].to_string());
            }
            fields.push(self.w1[k].to_string());
            fields.push(self.w2[k].to_string());
            fields.push(self.v_values[k].to_string());
            fields.push(self.v_star_values[k].to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// The error-system state `y` at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledErrorState {
    pub y: Vec<f64>,
}

fn ensure_finite(state: &[f64], step: usize, time: f64, r_dt: f64) -> Result<()> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step, time, r_dt, state: state.to_vec() });
    }
    Ok(())
}

fn warn_if_stiff(r: f64, dt: f64) {
    if r * dt > 0.1 {
        log::warn!(
            "r * dt = {:.4} exceeds 0.1; the explicit scheme may be unstable for the default linear designs",
            r * dt
        );
    }
}

/// Integrates the differentiator fed by the corrupted signal, together with
/// both noise states, by the explicit Euler-Maruyama scheme on `grid`.
pub fn simulate_td(
    config: &TdConfig,
    signal: &SignalModel,
    grid: &SimulationGrid,
    seed: u64,
) -> Result<Trajectory> {
    let n = config.order();
    let r = config.r();
    let dt = grid.dt();
    let steps = grid.steps();
    warn_if_stiff(r, dt);

    let mut rng1 = stream_rng(seed, "B1");
    let mut rng2 = stream_rng(seed, "B2");
    let mut rng3 = stream_rng(seed, "B3");
    let sqrt_dt = dt.sqrt();

    let r_pow: Vec<f64> = (0..n).map(|i| r.powi(i as i32)).collect();
    let r_n = r.powi(n as i32);

    let mut x = config.x0().to_vec();
    let mut w1 = config.noise1.w0();
    let mut w2 = config.noise2.w0();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut w1_path = Vec::with_capacity(steps + 1);
    let mut w2_path = Vec::with_capacity(steps + 1);
    let mut v_values = Vec::with_capacity(steps + 1);
    let mut v_star_values = Vec::with_capacity(steps + 1);

    signal.check_bound(0.0)?;
    times.push(0.0);
    states.push(x.clone());
    w1_path.push(w1);
    w2_path.push(w2);
    v_values.push(signal.value(0.0));
    v_star_values.push(signal.value(0.0) + config.sigma1 * w1);

    let mut z = vec![0.0; n];
    for k in 0..steps {
        let v_star = v_star_values[k];
        z[0] = x[0] - v_star;
        for i in 1..n {
            z[i] = x[i] / r_pow[i];
        }
        let f_val = config.f().evaluate(&z);

        let db1 = sqrt_dt * rng1.sample::<f64, _>(StandardNormal);
        let db2 = sqrt_dt * rng2.sample::<f64, _>(StandardNormal);
        let db3 = sqrt_dt * rng3.sample::<f64, _>(StandardNormal);

        // Ascending order reads each x[i + 1] before it is overwritten, so
        // the whole update uses left-endpoint values.
        for i in 0..n - 1 {
            x[i] += x[i + 1] * dt;
        }
        x[n - 1] += (r_n * f_val + config.sigma2 * w2) * dt + config.sigma3 * db3;
        w1 = ou_euler_step(&config.noise1, w1, dt, db1);
        w2 = ou_euler_step(&config.noise2, w2, dt, db2);

        let t_next = (k + 1) as f64 * dt;
        ensure_finite(&x, k + 1, t_next, r * dt)?;
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::NonFinite { step: k + 1, time: t_next, r_dt: r * dt, state: vec![w1, w2] });
        }

        signal.check_bound(t_next)?;
        let v = signal.value(t_next);
        times.push(t_next);
        states.push(x.clone());
        w1_path.push(w1);
        w2_path.push(w2);
        v_values.push(v);
        v_star_values.push(v + config.sigma1 * w1);
    }

    Ok(Trajectory {
        times,
        states,
        w1: w1_path,
        w2: w2_path,
        v_values,
        v_star_values,
        meta: TrajectoryMeta {
            seed,
            dt,
            config_digest: config.digest(signal, grid),
            rng: RNG_DESCRIPTION.to_string(),
        },
    })
}

/// Integrates the time-scaled error system directly. `grid` is interpreted
/// in the scaled time variable, so the run covers physical time
/// `[0, t_end / r]`. The state is
///
/// ```text
/// dy_1 = [y_2 - v_dot(t/r)/r + (sigma1 alpha1 / r) w_1(t/r)] dt
///        - (sigma1 alpha1 sqrt(2 beta1) / sqrt(r)) dB1^(t)
/// dy_i = y_{i+1} dt                                  (1 < i < n)
/// dy_n = [f(y) + (sigma2 / r^n) w_2(t/r)] dt + (sigma3 / r^(n-1/2)) dB3^(t)
/// ```
///
/// where `B^` are the time-scaled Brownian motions. The slowed noise states
/// `w_i(t/r)` are advanced concurrently with drift `-alpha_i/r` and
/// diffusion `alpha_i sqrt(2 beta_i) / sqrt(r)`; the same scaled increment
/// drives `w_1` and the `y_1` diffusion term, as they share one Brownian
/// motion.
pub fn simulate_scaled_error(
    config: &TdConfig,
    signal: &SignalModel,
    grid: &SimulationGrid,
    seed: u64,
) -> Result<Trajectory> {
    let n = config.order();
    let r = config.r();
    let dt = grid.dt();
    let steps = grid.steps();

    let mut rng1 = stream_rng(seed, "B1");
    let mut rng2 = stream_rng(seed, "B2");
    let mut rng3 = stream_rng(seed, "B3");
    let sqrt_dt = dt.sqrt();

    let alpha1 = config.noise1.alpha();
    let alpha2 = config.noise2.alpha();
    let beta1 = config.noise1.beta();
    let beta2 = config.noise2.beta();
    let sqrt_r = r.sqrt();
    let r_n = r.powi(n as i32);
    // sigma3 / r^(n - 1/2)
    let diff_n = config.sigma3 / (r.powi(n as i32 - 1) * sqrt_r);
    let diff_1 = config.sigma1 * alpha1 * (2.0 * beta1).sqrt() / sqrt_r;

    let mut y = vec![0.0; n];
    y[0] = config.x0()[0] - signal.value(0.0) - config.sigma1 * config.noise1.w0();
    for i in 1..n {
        y[i] = config.x0()[i] / r.powi(i as i32);
    }
    let mut w1 = config.noise1.w0();
    let mut w2 = config.noise2.w0();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut w1_path = Vec::with_capacity(steps + 1);
    let mut w2_path = Vec::with_capacity(steps + 1);
    let mut v_values = Vec::with_capacity(steps + 1);
    let mut v_star_values = Vec::with_capacity(steps + 1);

    let mut record = |s: f64, y: &[f64], w1: f64, w2: f64| -> Result<()> {
        let t_phys = s / r;
        signal.check_bound(t_phys)?;
        let v = signal.value(t_phys);
        times.push(s);
        states.push(y.to_vec());
        w1_path.push(w1);
        w2_path.push(w2);
        v_values.push(v);
        v_star_values.push(v + config.sigma1 * w1);
        Ok(())
    };
    record(0.0, &y, w1, w2)?;

    for k in 0..steps {
        let s = k as f64 * dt;
        let t_phys = s / r;
        let v_dot = signal.derivative(t_phys);
        let f_val = config.f().evaluate(&y);

        let db1 = sqrt_dt * rng1.sample::<f64, _>(StandardNormal);
        let db2 = sqrt_dt * rng2.sample::<f64, _>(StandardNormal);
        let db3 = sqrt_dt * rng3.sample::<f64, _>(StandardNormal);

        for i in 0..n - 1 {
            y[i] += y[i + 1] * dt;
        }
        // Extra drift and diffusion on the first component (signal slope and
        // input-noise channel), evaluated at the step's left endpoint.
        y[0] += (-v_dot / r + config.sigma1 * alpha1 / r * w1) * dt - diff_1 * db1;
        y[n - 1] += (f_val + config.sigma2 / r_n * w2) * dt + diff_n * db3;

        w1 += -(alpha1 / r) * w1 * dt + alpha1 * (2.0 * beta1).sqrt() / sqrt_r * db1;
        w2 += -(alpha2 / r) * w2 * dt + alpha2 * (2.0 * beta2).sqrt() / sqrt_r * db2;

        let s_next = (k + 1) as f64 * dt;
        ensure_finite(&y, k + 1, s_next, r * dt)?;
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::NonFinite { step: k + 1, time: s_next, r_dt: r * dt, state: vec![w1, w2] });
        }
        record(s_next, &y, w1, w2)?;
    }

    Ok(Trajectory {
        times,
        states,
        w1: w1_path,
        w2: w2_path,
        v_values,
        v_star_values,
        meta: TrajectoryMeta {
            seed,
            dt,
            config_digest: config.digest(signal, grid),
            rng: RNG_DESCRIPTION.to_string(),
        },
    })
}

/// Maps a trajectory of the original system into error coordinates: entry
/// `k` is the error state at scaled time `r * times[k]`,
/// `y_1 = x_1 - v*`, `y_i = x_i / r^(i-1)`. Rejects trajectories whose
/// metadata digest does not match `(config, signal, grid)`.
pub fn transform_to_error_coordinates(
    traj: &Trajectory,
    config: &TdConfig,
    signal: &SignalModel,
) -> Result<Vec<ScaledErrorState>> {
    let t_end = *traj.times.last().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let grid = SimulationGrid::new(t_end, traj.meta.dt)?;
    let expected = config.digest(signal, &grid);
    if expected != traj.meta.config_digest {
        return Err(Error::DigestMismatch {
            found: traj.meta.config_digest.clone(),
            expected,
        });
    }
    let n = config.order();
    let r = config.r();
    let states = (0..traj.len())
        .map(|k| {
            let mut y = vec![0.0; n];
            y[0] = traj.states[k][0] - traj.v_star_values[k];
            for i in 1..n {
                y[i] = traj.states[k][i] / r.powi(i as i32);
            }
            ScaledErrorState { y }
        })
        .collect();
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{LinearDesign, TdFunction};
    use approx::assert_abs_diff_eq;

    pub(crate) fn section4_linear_config(r: f64, sigmas: (f64, f64, f64)) -> TdConfig {
        let f = TdFunction::Linear(LinearDesign::new(vec![-2.0, -4.0]).unwrap());
        TdConfig::new(
            f,
            r,
            sigmas.0,
            sigmas.1,
            sigmas.2,
            OuParams::new(3.0, 1.0 / 18.0, 1.0).unwrap(),
            OuParams::new(3.0, 1.0 / 18.0, -1.0).unwrap(),
            vec![1.0f64.sin(), 0.0],
        )
        .unwrap()
    }

    fn section4_signal() -> SignalModel {
        SignalModel::sinusoid(1.0, 3.0, 1.0)
    }

    fn zero_signal() -> SignalModel {
        SignalModel::user(|_| 0.0, |_| 0.0, 1.0).unwrap()
    }

    #[test]
    fn grid_rejects_mismatched_t_end() {
        assert!(SimulationGrid::new(1.0, 0.3).is_err());
        assert!(SimulationGrid::new(1.0, 0.001).is_ok());
        assert!(SimulationGrid::new(0.0, 0.001).is_err());
        assert!(SimulationGrid::new(1.0, -0.1).is_err());
    }

    #[test]
    fn zero_equilibrium_is_exact() {
        let f = TdFunction::Linear(LinearDesign::new(vec![-2.0, -4.0]).unwrap());
        let config = TdConfig::new(
            f,
            30.0,
            0.0,
            0.0,
            0.0,
            OuParams::new(3.0, 1.0 / 18.0, 0.0).unwrap(),
            OuParams::new(3.0, 1.0 / 18.0, 0.0).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let grid = SimulationGrid::new(1.0, 0.001).unwrap();
        let traj = simulate_td(&config, &zero_signal(), &grid, 3).unwrap();
        for row in &traj.states {
            assert_eq!(row, &vec![0.0, 0.0]);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let grid = SimulationGrid::new(1.0, 0.001).unwrap();
        let a = simulate_td(&config, &section4_signal(), &grid, 42).unwrap();
        let b = simulate_td(&config, &section4_signal(), &grid, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_td(&config, &section4_signal(), &grid, 43).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn deterministic_first_order_convergence() {
        // All sigma = 0: halving dt shrinks the terminal-state difference by
        // a factor 2 +/- 0.5.
        let config = section4_linear_config(30.0, (0.0, 0.0, 0.0));
        let signal = section4_signal();
        let terminal = |dt: f64| {
            let grid = SimulationGrid::new(1.0, dt).unwrap();
            simulate_td(&config, &signal, &grid, 1).unwrap().states.last().unwrap().clone()
        };
        let coarse = terminal(1e-3);
        let mid = terminal(5e-4);
        let fine = terminal(2.5e-4);
        let diff = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let d1 = diff(&coarse, &mid);
        let d2 = diff(&mid, &fine);
        let ratio = d1 / d2;
        assert!((1.5..=2.5).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn section4_run_tracks_without_peaking() {
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(5.0, 0.001).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 7).unwrap();

        // No peaking overshoot beyond max |v_dot| + 2 anywhere on [0, 5].
        let max_x2 = traj.component(1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_x2 <= 3.0 + 2.0, "x2 peaked at {max_x2}");

        // x1 tracks v after the transient.
        let from = (2.0 / 0.001) as usize;
        let errs: Vec<f64> = (from..traj.len())
            .map(|k| (traj.states[k][0] - traj.v_values[k]).abs())
            .collect();
        let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean_err < 0.4, "mean tracking error {mean_err}");
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let config = section4_linear_config(30.0, (0.0, 0.0, 0.0));
        let grid = SimulationGrid::new(100.0, 0.5).unwrap();
        match simulate_td(&config, &section4_signal(), &grid, 1) {
            Err(Error::NonFinite { step, r_dt, .. }) => {
                assert!(step > 0);
                assert_abs_diff_eq!(r_dt, 15.0, epsilon = 1e-12);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn scaled_error_decays_for_constant_signal() {
        // With all sigma = 0 and v constant, the error system is the nominal
        // linear ODE; |y| must decay at least as fast as 90% of the slowest
        // mode (eigenvalues -2 +/- sqrt(2), slowest 0.586).
        let f = TdFunction::Linear(LinearDesign::new(vec![-2.0, -4.0]).unwrap());
        let config = TdConfig::new(
            f,
            3.0,
            0.0,
            0.0,
            0.0,
            OuParams::new(3.0, 1.0 / 18.0, 0.0).unwrap(),
            OuParams::new(3.0, 1.0 / 18.0, 0.0).unwrap(),
            vec![1.5, 0.0],
        )
        .unwrap();
        let signal = SignalModel::user(|_| 1.0, |_| 0.0, 1.0).unwrap();
        let grid = SimulationGrid::new(8.0, 0.001).unwrap();
        let traj = simulate_scaled_error(&config, &signal, &grid, 5).unwrap();

        let norm = |k: usize| traj.states[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        let (k1, k2) = (2000, 6000); // scaled times 2 and 6
        let rate = -(norm(k2) / norm(k1)).ln() / 4.0;
        let slowest = 2.0 - 2.0f64.sqrt();
        assert!(rate >= 0.9 * slowest, "observed decay rate {rate}");
    }

    #[test]
    fn scaled_error_initial_state_matches_transform() {
        // x1(0) = v(0), sigma1 = 0, rest zero: y(0) = 0.
        let config = section4_linear_config(30.0, (0.0, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(1.0, 0.001).unwrap();
        let traj = simulate_scaled_error(&config, &signal, &grid, 1).unwrap();
        assert_eq!(traj.states[0], vec![0.0, 0.0]);
    }

    #[test]
    fn deterministic_time_change_identity() {
        // sigma = 0: the transformed direct simulation and the scaled-error
        // simulation follow the same ODE on matched grids.
        let config = section4_linear_config(30.0, (0.0, 0.0, 0.0));
        let signal = section4_signal();
        let dt_x = 1e-3;
        let grid_x = SimulationGrid::new(1.0, dt_x).unwrap();
        let traj_x = simulate_td(&config, &signal, &grid_x, 2).unwrap();
        let transformed = transform_to_error_coordinates(&traj_x, &config, &signal).unwrap();

        let grid_y = SimulationGrid::new(30.0, 30.0 * dt_x).unwrap();
        let traj_y = simulate_scaled_error(&config, &signal, &grid_y, 2).unwrap();

        assert_eq!(transformed.len(), traj_y.len());
        let mut max_diff = 0.0f64;
        for (a, b) in transformed.iter().zip(&traj_y.states) {
            for (x, y) in a.y.iter().zip(b) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
        assert!(max_diff <= 2e-3, "max componentwise difference {max_diff}");
    }

    #[test]
    fn transform_r_equal_one_is_plain_error() {
        let f = TdFunction::Linear(LinearDesign::new(vec![-2.0, -4.0]).unwrap());
        let config = TdConfig::new(
            f,
            1.0,
            0.2,
            1.0,
            1.0,
            OuParams::new(3.0, 1.0 / 18.0, 1.0).unwrap(),
            OuParams::new(3.0, 1.0 / 18.0, -1.0).unwrap(),
            vec![0.3, 0.7],
        )
        .unwrap();
        let signal = section4_signal();
        let grid = SimulationGrid::new(1.0, 0.01).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 9).unwrap();
        let y = transform_to_error_coordinates(&traj, &config, &signal).unwrap();
        for k in 0..traj.len() {
            assert_eq!(y[k].y[0], traj.states[k][0] - traj.v_star_values[k]);
            assert_eq!(y[k].y[1], traj.states[k][1]);
        }
    }

    #[test]
    fn transform_index_arithmetic_r30() {
        // Entry k of the transform lives at scaled time 30 * t_k, so the
        // error state at scaled time 3 is built from x(0.1).
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(0.2, 0.001).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 11).unwrap();
        let y = transform_to_error_coordinates(&traj, &config, &signal).unwrap();
        let k = 100; // t_k = 0.1, scaled time 3.0
        assert_abs_diff_eq!(y[k].y[1], traj.states[k][1] / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn transform_inverse_recovers_state() {
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(1.0, 0.001).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 13).unwrap();
        let y = transform_to_error_coordinates(&traj, &config, &signal).unwrap();
        for k in 0..traj.len() {
            let x1 = y[k].y[0] + traj.v_star_values[k];
            let x2 = y[k].y[1] * 30.0;
            assert_abs_diff_eq!(x1, traj.states[k][0], epsilon = 1e-12);
            assert_abs_diff_eq!(x2, traj.states[k][1], epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_rejects_mismatched_config() {
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(1.0, 0.001).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 17).unwrap();
        let other = section4_linear_config(15.0, (0.2, 2.0, 2.0));
        match transform_to_error_coordinates(&traj, &other, &signal) {
            Err(Error::DigestMismatch { .. }) => {}
            other => panic!("expected digest mismatch, got {other:?}"),
        }
    }

    #[test]
    fn coupled_ou_second_moment_stays_bounded() {
        // Ensemble second moment of w1 inside the coupled simulation stays
        // below gamma1 + 3 standard errors at every grid time.
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(2.0, 0.01).unwrap();
        let paths = 300;
        let len = grid.steps() + 1;
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        for p in 0..paths {
            let traj = simulate_td(&config, &signal, &grid, 100 + p as u64).unwrap();
            for k in 0..len {
                let sq = traj.w1[k] * traj.w1[k];
                sum[k] += sq;
                sum_sq[k] += sq * sq;
            }
        }
        let gamma1 = config.noise1.gamma();
        let n = paths as f64;
        for k in 0..len {
            let mean = sum[k] / n;
            let se = ((sum_sq[k] / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
            assert!(
                mean <= gamma1 + 3.0 * se,
                "w1 second moment {mean} exceeds gamma {gamma1} + 3se at k = {k}"
            );
        }
    }

    #[test]
    fn csv_export_shape() {
        let config = section4_linear_config(30.0, (0.2, 2.0, 2.0));
        let signal = section4_signal();
        let grid = SimulationGrid::new(0.01, 0.001).unwrap();
        let traj = simulate_td(&config, &signal, &grid, 1).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# seed: 1"));
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "t,x1,x2,w1,w2,v,vstar");
        assert_eq!(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), 12);
    }
}
