//! JSON run configuration. One file pins a scenario end to end: the system,
//! the dictionary, the sampling box, the data budget, the prediction setup,
//! and optionally a certification problem, an eDMDc baseline, and a sweep.
//! Unknown fields are rejected so a typo cannot silently become a default.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use koopman_core::dictionary::{fem_dictionary, monomial_dictionary, Dictionary, FemMesh};
use koopman_core::{BoxDomain, Constraint, ControlAffineSystem, ControlSignal};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub dictionary: DictionarySpec,
    /// Box the training states are drawn from; also the quadrature domain
    /// for references and projections.
    pub sampling: BoxSpec,
    pub data: DataSpec,
    pub prediction: PredictionSpec,
    #[serde(default)]
    pub certification: Option<CertificationSpec>,
    #[serde(default)]
    pub edmdc: Option<EdmdcSpec>,
    #[serde(default)]
    pub sweep: Option<SweepKindSpec>,
}

/// A parsed config together with the SHA-256 of the exact bytes it was
/// parsed from, so every artifact can state which input produced it.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, Failure> {
    let bytes = fs::read(path).map_err(|e| {
        Failure::usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let config: RunConfig = serde_json::from_slice(&bytes).map_err(|e| {
        Failure::usage(format!(
            "invalid config {} (line {}, column {}): {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    Ok(LoadedConfig {
        config,
        sha256: sha256_hex(&bytes),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `x1' = x2`, `x2' = -delta x2 - alpha x1 - 2 beta x1^3 u`.
    Duffing { alpha: f64, beta: f64, delta: f64 },
    /// Scalar `x' = a x + b u`.
    Linear1d { a: f64, b: f64 },
    /// Scalar `x' = a x`, no control channel.
    Autonomous1d { a: f64 },
}

impl SystemSpec {
    pub fn build(&self) -> ControlAffineSystem {
        match *self {
            SystemSpec::Duffing { alpha, beta, delta } => {
                ControlAffineSystem::duffing(alpha, beta, delta)
            }
            SystemSpec::Linear1d { a, b } => ControlAffineSystem::linear_1d(a, b),
            SystemSpec::Autonomous1d { a } => ControlAffineSystem::autonomous_1d(a),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    /// All monomials up to the total degree, over the sampling box dimension.
    Monomial { degree: u32 },
    /// Piecewise-linear hat functions on a uniform mesh over the sampling box.
    Hat { mesh_size: f64 },
}

impl DictionarySpec {
    pub fn build(&self, bounds: &BoxDomain) -> Result<Dictionary, Failure> {
        let dict = match *self {
            DictionarySpec::Monomial { degree } => monomial_dictionary(bounds.dim(), degree)?,
            DictionarySpec::Hat { mesh_size } => {
                fem_dictionary(&FemMesh::new(bounds.clone(), mesh_size)?)?
            }
        };
        Ok(dict)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    pub fn build(&self) -> Result<BoxDomain, Failure> {
        Ok(BoxDomain::from_slices(&self.lower, &self.upper)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Training sample count.
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSpec {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub control: ControlSpec,
    /// The scalar function to propagate and compare against ground truth.
    pub observable: AffineFunctionSpec,
    /// Gauss-Legendre order per cell when the observable has to be
    /// projected onto the dictionary span.
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    6
}

impl PredictionSpec {
    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// No control input (for systems without control channels).
    None,
    Constant { values: Vec<f64> },
    /// Zero-order hold: `values[k]` on `[k*segment, (k+1)*segment)`.
    PiecewiseConstant { segment: f64, values: Vec<Vec<f64>> },
}

impl ControlSpec {
    pub fn build(&self) -> Result<ControlSignal, Failure> {
        let u = match self {
            ControlSpec::None => ControlSignal::none(),
            ControlSpec::Constant { values } => {
                ControlSignal::constant(DVector::from_column_slice(values))
            }
            ControlSpec::PiecewiseConstant { segment, values } => ControlSignal::zoh(
                values
                    .iter()
                    .map(|v| DVector::from_column_slice(v))
                    .collect(),
                *segment,
            )?,
        };
        Ok(u)
    }
}

/// Affine scalar function `a . x + b`, used both as an observable and as a
/// constraint (`a . x + b <= 0`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineFunctionSpec {
    pub label: String,
    pub a: Vec<f64>,
    pub b: f64,
}

impl AffineFunctionSpec {
    pub fn build(&self) -> Constraint {
        Constraint::affine(
            self.label.clone(),
            DVector::from_column_slice(&self.a),
            self.b,
        )
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let a = DVector::from_column_slice(&self.a);
        a.dot(x) + self.b
    }

    /// The same function as a plain closure pair, for sweep specs that take
    /// ownership of a [`Constraint`].
    pub fn to_constraint(&self) -> Constraint {
        let a = Arc::new(DVector::from_column_slice(&self.a));
        let a2 = Arc::clone(&a);
        let b = self.b;
        Constraint::new(
            self.label.clone(),
            move |x: &DVector<f64>| a.dot(x) + b,
            move |_: &DVector<f64>| (*a2).clone(),
        )
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub dt_check: f64,
    pub constraints: Vec<AffineFunctionSpec>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdmdcSpec {
    /// Snapshot pairs for the discrete baseline.
    pub pairs: usize,
    /// Sampling interval between a snapshot and its successor.
    pub interval: f64,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepKindSpec {
    /// Generator-matrix error vs sample count, against the quadrature
    /// reference, with per-threshold success probabilities.
    Generator {
        m_values: Vec<usize>,
        trials: usize,
        epsilons: Vec<f64>,
        master_seed: u64,
    },
    /// Lifted-trajectory sup error vs sample count under the configured
    /// control signal.
    Trajectory {
        m_values: Vec<usize>,
        trials: usize,
        epsilons: Vec<f64>,
        master_seed: u64,
    },
    /// Observable error of hat-function dictionaries under mesh refinement.
    MeshRefinement {
        mesh_sizes: Vec<f64>,
        m_values: Vec<usize>,
        trials: usize,
        master_seed: u64,
        #[serde(default = "default_quad_order")]
        quad_order: usize,
        #[serde(default)]
        embed_observable: bool,
    },
}
