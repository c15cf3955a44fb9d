//! JSON experiment configuration: parsing, presets, digests, and the
//! translation into the typed simulation objects.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{
    builtin_nonlinear_2d, solve_lyapunov, LinearDesign, LyapunovCertificate, QuadraticForm,
    TdFunction,
};
use crate::error::{Error, Result};
use crate::noise::OuParams;
use crate::simulate::{SignalModel, SimulationGrid, TdConfig};

/// Names of the bundled presets (loadable by name through the CLI).
pub const PRESET_NAMES: [&str; 4] =
    ["fig1_linear_r30", "fig2_nonlinear_r30", "fig3_nonlinear_r15", "zero_noise_baseline"];

/// Bundled preset JSON by name (with or without the `.json` suffix).
pub fn preset_json(name: &str) -> Option<&'static str> {
    match name.strip_suffix(".json").unwrap_or(name) {
        "fig1_linear_r30" => Some(include_str!("../presets/fig1_linear_r30.json")),
        "fig2_nonlinear_r30" => Some(include_str!("../presets/fig2_nonlinear_r30.json")),
        "fig3_nonlinear_r15" => Some(include_str!("../presets/fig3_nonlinear_r15.json")),
        "zero_noise_baseline" => Some(include_str!("../presets/zero_noise_baseline.json")),
        _ => None,
    }
}

/// The JSON schema shipped with the config format.
pub const CONFIG_SCHEMA: &str = include_str!("../presets/config.schema.json");

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: differentiator, signal, grid, ensemble, bound and
/// test-function parameters. Round-trips losslessly through JSON; the
/// digest of the canonical serialization identifies the experiment in every
/// output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub td: TdSection,
    pub signal: SignalSection,
    pub grid: GridSection,
    pub ensemble: EnsembleSection,
    pub bounds: BoundsSection,
    pub gendiff: GendiffSection,
    #[serde(default)]
    pub certificate: Option<CertificateSection>,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdSection {
    pub n: usize,
    pub r: f64,
    pub f: FunctionSection,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub noise1: NoiseSection,
    pub noise2: NoiseSection,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSection {
    Linear { coefficients: Vec<f64> },
    BuiltinNonlinear2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub alpha: f64,
    pub beta: f64,
    pub w0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSection {
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub paths: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub theta: f64,
    pub mu: f64,
    #[serde(rename = "T")]
    pub t_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GendiffSection {
    pub a: f64,
    pub center: f64,
    pub width: f64,
    pub orders: Vec<usize>,
}

/// Certificate constants with the quadratic forms as row-major matrices.
/// The margin `theta` comes from the `bounds` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_matrix: Vec<Vec<f64>>,
    pub w_matrix: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a square row-major matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

/// Fully constructed experiment: typed simulation inputs plus the resolved
/// certificate (explicit, derived from the linear design, or absent).
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub td: TdConfig,
    pub signal: SignalModel,
    pub grid: SimulationGrid,
    pub certificate: Option<LyapunovCertificate>,
    pub digest: String,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Loads from a filesystem path, falling back to a bundled preset name.
    pub fn resolve(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            return Self::from_path(path);
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(spec);
        if let Some(json) = preset_json(stem) {
            return Self::from_str(json);
        }
        Err(Error::Config(format!(
            "config '{spec}' is neither a readable file nor one of the bundled presets {PRESET_NAMES:?}"
        )))
    }

    /// Canonical serialization (compact JSON, fixed field order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Builds the typed experiment, resolving the certificate: an explicit
    /// section wins; a linear design without one gets the automatic
    /// Lyapunov-equation certificate; a nonlinear design without one runs
    /// uncertified.
    pub fn build(&self) -> Result<Experiment> {
        let f = match &self.td.f {
            FunctionSection::Linear { coefficients } => {
                TdFunction::Linear(LinearDesign::new(coefficients.clone())?)
            }
            FunctionSection::BuiltinNonlinear2d => builtin_nonlinear_2d(),
        };
        if f.order() != self.td.n {
            return Err(Error::Config(format!(
                "td.n = {} does not match the design function order {}",
                self.td.n,
                f.order()
            )));
        }
        let noise1 = OuParams::new(self.td.noise1.alpha, self.td.noise1.beta, self.td.noise1.w0)?;
        let noise2 = OuParams::new(self.td.noise2.alpha, self.td.noise2.beta, self.td.noise2.w0)?;
        let td = TdConfig::new(
            f,
            self.td.r,
            self.td.sigma1,
            self.td.sigma2,
            self.td.sigma3,
            noise1,
            noise2,
            self.td.x0.clone(),
        )?;
        let signal = match &self.signal {
            SignalSection::Sinusoid { amplitude, frequency, phase } => {
                SignalModel::sinusoid(*amplitude, *frequency, *phase)
            }
        };
        let grid = SimulationGrid::new(self.grid.t_end, self.grid.dt)?;

        let theta = self.bounds.theta;
        let certificate = match &self.certificate {
            Some(section) => {
                let v = QuadraticForm::new(matrix_from_rows(&section.v_matrix, "v_matrix")?)?;
                let w = QuadraticForm::new(matrix_from_rows(&section.w_matrix, "w_matrix")?)?;
                Some(LyapunovCertificate::new(
                    section.lambda1,
                    section.lambda2,
                    section.lambda3,
                    section.lambda4,
                    section.c1,
                    section.c2,
                    v,
                    w,
                    theta,
                )?)
            }
            None => match &self.td.f {
                FunctionSection::Linear { coefficients } => {
                    let design = LinearDesign::new(coefficients.clone())?;
                    Some(solve_lyapunov(&design)?.1.with_theta(theta)?)
                }
                FunctionSection::BuiltinNonlinear2d => None,
            },
        };

        Ok(Experiment {
            config: self.clone(),
            td,
            signal,
            grid,
            certificate,
            digest: self.digest(),
        })
    }
}
