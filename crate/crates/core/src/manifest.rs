//! Run manifests: a TOML file naming the simulation settings, the objective,
//! the initial density and the output files.
//!
//! ```toml
//! schema_version = 1
//!
//! [config]
//! beta = 1.0
//! dt = 0.01
//! t_final = 5.0
//! n_particles = 500
//! seed = 7
//! gain_method = "affine"     # affine | galerkin | kernel | gradient_descent | sisr
//!
//! [config.method_params]     # optional, see `MethodParams`
//! epsilon = 0.5
//!
//! [objective]
//! name = "quadratic"         # quadratic | isotropic_quadratic | double_well
//! hessian = [[1.0]]
//! minimizer = [0.0]
//!
//! [init]
//! kind = "gaussian"          # gaussian | isotropic_gaussian | gaussian_mixture
//! mean = [1.0]
//! cov = [[1.0]]
//!
//! [outputs]                  # optional; paths are relative to --out-dir
//! trajectory = "trajectory.csv"
//!
//! [mc]                       # only for mc-variance
//! grid_kind = "n"            # n | d
//! values = [50, 100, 200]
//! replicates = 100
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{self, Objective};
use crate::sim::{GridKind, Initializer, MixtureComponent, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: SimConfig,
    pub objective: ObjectiveSpec,
    pub init: InitSpec,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½(x − x̄)ᵀH(x − x̄) + c`.
    Quadratic {
        hessian: Vec<Vec<f64>>,
        minimizer: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `½ scale |x − center·1|² + offset` in `dim` dimensions.
    IsotropicQuadratic {
        dim: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: f64,
        #[serde(default)]
        offset: f64,
    },
    DoubleWell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// `N(mean·1, var·I)`; the dimension defaults to the objective's.
    IsotropicGaussian {
        #[serde(default)]
        dim: Option<usize>,
        mean: f64,
        var: f64,
    },
    GaussianMixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub trajectory: String,
    pub snapshots: Option<String>,
    pub sidecar: String,
    pub mc_variance: String,
    pub compare: String,
    pub compare_ks: String,
    pub hhat_backends: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            trajectory: "trajectory.csv".into(),
            snapshots: None,
            sidecar: "run.json".into(),
            mc_variance: "mc_variance.csv".into(),
            compare: "compare.csv".into(),
            compare_ks: "compare_ks.csv".into(),
            hhat_backends: "hhat_backends.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub grid_kind: GridKind,
    pub values: Vec<usize>,
    pub replicates: usize,
}

fn one() -> f64 {
    1.0
}

fn matrix(rows: &[Vec<f64>], field: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(field, "must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ObjectiveSpec {
    pub fn dim(&self) -> Option<usize> {
        match self {
            ObjectiveSpec::Quadratic { minimizer, .. } => Some(minimizer.len()),
            ObjectiveSpec::IsotropicQuadratic { dim, .. } => Some(*dim),
            ObjectiveSpec::DoubleWell => Some(1),
        }
    }

    pub fn build(&self) -> Result<Objective> {
        match self {
            ObjectiveSpec::Quadratic {
                hessian,
                minimizer,
                offset,
            } => {
                let h = matrix(hessian, "hessian")?;
                if minimizer.len() != h.nrows() {
                    return Err(Error::invalid("minimizer", "length must match the hessian"));
                }
                objective::quadratic(h, DVector::from_column_slice(minimizer), *offset)
                    .map_err(|_| Error::invalid("hessian", "must be symmetric positive definite"))
            }
            ObjectiveSpec::IsotropicQuadratic {
                dim,
                scale,
                center,
                offset,
            } => objective::isotropic_quadratic(*dim, *scale, *center, *offset),
            ObjectiveSpec::DoubleWell => Ok(objective::double_well()),
        }
    }

    /// The same objective family in dimension `d`, for dimension sweeps.
    pub fn with_dim(&self, d: usize) -> Result<ObjectiveSpec> {
        match self {
            ObjectiveSpec::IsotropicQuadratic {
                scale, center, offset, ..
            } => Ok(ObjectiveSpec::IsotropicQuadratic {
                dim: d,
                scale: *scale,
                center: *center,
                offset: *offset,
            }),
            _ => Err(Error::invalid("objective", "dimension sweeps need an isotropic_quadratic objective")),
        }
    }
}

impl InitSpec {
    pub fn build(&self, objective_dim: Option<usize>) -> Result<Initializer> {
        let init = match self {
            InitSpec::Gaussian { mean, cov } => {
                let c = matrix(cov, "cov")?;
                if mean.len() != c.nrows() {
                    return Err(Error::invalid("mean", "length must match cov"));
                }
                Initializer::gaussian(DVector::from_column_slice(mean), c)
                    .map_err(|_| Error::invalid("cov", "must be symmetric positive semidefinite"))?
            }
            InitSpec::IsotropicGaussian { dim, mean, var } => {
                let d = dim.or(objective_dim).ok_or_else(|| Error::invalid("dim", "cannot infer dimension"))?;
                if !(*var >= 0.0) {
                    return Err(Error::invalid("var", "must be non-negative"));
                }
                Initializer::isotropic(d, *mean, *var)?
            }
            InitSpec::GaussianMixture { components } => Initializer::mixture(components.clone())?,
        };
        if let Some(d) = objective_dim {
            if init.dim() != d {
                return Err(Error::invalid(
                    "init",
                    format!("dimension {} does not match objective dimension {d}", init.dim()),
                ));
            }
        }
        Ok(init)
    }

    pub fn with_dim(&self, d: usize) -> Result<InitSpec> {
        match self {
            InitSpec::IsotropicGaussian { mean, var, .. } => Ok(InitSpec::IsotropicGaussian {
                dim: Some(d),
                mean: *mean,
                var: *var,
            }),
            _ => Err(Error::invalid("init", "dimension sweeps need an isotropic_gaussian init")),
        }
    }
}

/// A manifest with its objective and initializer resolved.
pub struct Resolved {
    pub manifest: RunManifest,
    pub objective: Objective,
    pub init: Initializer,
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: RunManifest = toml::from_str(text).map_err(|e| Error::invalid("manifest", e.message().to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Validates every section and builds the objective and initial density.
    pub fn resolve(self) -> Result<Resolved> {
        self.config.validate()?;
        let objective = self.objective.build()?;
        let init = self.init.build(self.objective.dim())?;
        if let Some(mc) = &self.mc {
            if mc.replicates < 2 {
                return Err(Error::invalid("replicates", "Monte-Carlo variance needs at least 2 replicates"));
            }
            if mc.values.is_empty() || mc.values.contains(&0) {
                return Err(Error::invalid("values", "grid values must be positive"));
            }
            if mc.grid_kind == GridKind::D {
                self.objective.with_dim(1)?;
                self.init.with_dim(1)?;
            } else if mc.values.contains(&1) {
                return Err(Error::invalid("values", "particle counts must be at least 2"));
            }
        }
        Ok(Resolved {
            manifest: self,
            objective,
            init,
        })
    }
}
