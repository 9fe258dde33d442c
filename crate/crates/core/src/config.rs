//! JSON problem and sweep descriptions.
//!
//! ```json
//! {
//!   "kind": "general",
//!   "matrix": [[1, 0], [0, 3]],
//!   "H": { "kernel": "euclidean", "alpha": 1 },
//!   "perturbation": { "family": "power_decay", "m": 0.1, "delta": 0.5 },
//!   "y0": [1, 1],
//!   "control": { "rel_tol": 1e-9, "norm_cap": 1e6 }
//! }
//! ```

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::asymptotics::AnalysisOptions;
use crate::envelope::{Envelope, EnvelopeError};
use crate::homogeneous::{HomogeneousError, HomogeneousFn, Kernel, Monomial};
use crate::integrator::Control;
use crate::problem::{
    certified_profile, manufactured, manufactured_reference, Corrector, Forcing,
    ManufacturedSolution, Perturbation, ProblemError, ProblemSpec,
};
use crate::spectral::{decompose, matrix_from_rows, SpectralData, SpectralError};

/// Tolerance passed to the eigen-decomposition of configured matrices.
pub const SPECTRAL_TOL: f64 = 1e-10;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Homogeneous(#[from] HomogeneousError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindConfig {
    General,
    Forced,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Euclidean {
        alpha: f64,
    },
    QuadraticForm {
        alpha: f64,
        matrix: Vec<Vec<f64>>,
    },
    PNorm {
        alpha: f64,
        p: f64,
    },
    Polynomial {
        alpha: f64,
        monomials: Vec<Monomial>,
    },
}

impl KernelConfig {
    pub fn alpha(&self) -> f64 {
        match self {
            KernelConfig::Euclidean { alpha }
            | KernelConfig::QuadraticForm { alpha, .. }
            | KernelConfig::PNorm { alpha, .. }
            | KernelConfig::Polynomial { alpha, .. } => *alpha,
        }
    }

    pub fn build(&self, dim: usize) -> Result<HomogeneousFn, ConfigError> {
        let kernel = match self {
            KernelConfig::Euclidean { .. } => Kernel::Euclidean,
            KernelConfig::QuadraticForm { matrix, .. } => {
                Kernel::QuadraticForm(matrix_from_rows(matrix)?)
            }
            KernelConfig::PNorm { p, .. } => Kernel::PNorm(*p),
            KernelConfig::Polynomial { monomials, .. } => {
                Kernel::CustomPolynomial(monomials.clone())
            }
        };
        Ok(HomogeneousFn::new(dim, self.alpha(), kernel)?)
    }
}

fn default_power_r_star() -> f64 {
    1.0
}

fn default_log_r_star() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationConfig {
    Zero,
    PowerDecay {
        m: f64,
        delta: f64,
        #[serde(default = "default_power_r_star")]
        r_star: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    LogDecay {
        m: f64,
        p: f64,
        #[serde(default = "default_log_r_star")]
        r_star: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    Linear {
        c: f64,
    },
}

impl PerturbationConfig {
    pub fn build(&self) -> Perturbation {
        let dir = |d: &Option<Vec<f64>>| d.as_ref().map(|v| DVector::from_vec(v.clone()));
        match self {
            PerturbationConfig::Zero => Perturbation::Zero,
            PerturbationConfig::PowerDecay {
                m,
                delta,
                r_star,
                direction,
            } => Perturbation::PowerDecay {
                m: *m,
                delta: *delta,
                r_star: *r_star,
                direction: dir(direction),
            },
            PerturbationConfig::LogDecay {
                m,
                p,
                r_star,
                direction,
            } => Perturbation::LogDecay {
                m: *m,
                p: *p,
                r_star: *r_star,
                direction: dir(direction),
            },
            PerturbationConfig::Linear { c } => Perturbation::Linear { c: *c },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrectorConfig {
    Constant,
    Power { c: f64, delta: f64, w: Vec<f64> },
    Log { c: f64, q: f64, w: Vec<f64> },
}

impl CorrectorConfig {
    pub fn build(&self) -> Corrector {
        match self {
            CorrectorConfig::Constant => Corrector::Constant,
            CorrectorConfig::Power { c, delta, w } => Corrector::Power {
                c: *c,
                delta: *delta,
                w: DVector::from_vec(w.clone()),
            },
            CorrectorConfig::Log { c, q, w } => Corrector::Log {
                c: *c,
                q: *q,
                w: DVector::from_vec(w.clone()),
            },
        }
    }
}

/// Target profile of a manufactured solution: either `xi` itself, or an
/// eigen`direction` with its eigenvalue `lambda`, scaled so that
/// `αλH(ξ) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileConfig {
    Explicit { xi: Vec<f64> },
    Certified { direction: Vec<f64>, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    Zero,
    Manufactured {
        profile: ProfileConfig,
        tstar: f64,
        corrector: CorrectorConfig,
    },
}

/// Envelope `E₀` declared for a forcing; `tstar` defaults to `t0 + 0.5` and
/// is replaced by the estimate during analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeConfig {
    Zero {
        #[serde(default)]
        tstar: Option<f64>,
    },
    Power {
        m: f64,
        delta: f64,
        #[serde(default)]
        tstar: Option<f64>,
    },
    Log {
        m: f64,
        p: f64,
        #[serde(default)]
        tstar: Option<f64>,
    },
}

impl EnvelopeConfig {
    pub fn build(&self, t0: f64) -> Result<Envelope, ConfigError> {
        let at = |t: &Option<f64>| t.unwrap_or(t0 + 0.5);
        Ok(match self {
            EnvelopeConfig::Zero { tstar } => Envelope::zero(at(tstar), t0)?,
            EnvelopeConfig::Power { m, delta, tstar } => {
                Envelope::power(*m, *delta, at(tstar), t0)?
            }
            EnvelopeConfig::Log { m, p, tstar } => Envelope::log(*m, *p, at(tstar), t0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: KindConfig,
    /// `A` by rows; general and forced systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Coefficient of the reference equation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(rename = "H")]
    pub h: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<ForcingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default)]
    pub t0: f64,
    /// Required unless the forcing is manufactured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub control: Control,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

/// A validated problem ready to integrate.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub spec: ProblemSpec,
    pub sd: SpectralData,
    /// Exact solution, for manufactured forcings.
    pub oracle: Option<Arc<ManufacturedSolution>>,
    pub control: Control,
    pub analysis: AnalysisOptions,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read(path)?)
    }

    pub fn build(&self) -> Result<BuiltProblem, ConfigError> {
        let ctrl = &self.control;
        if !(ctrl.rel_tol > 0.0 && ctrl.abs_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        let dim = self.dimension()?;
        let alpha = self.h.alpha();
        let matrix = match (self.kind, &self.matrix, self.a) {
            (KindConfig::Reference, None, Some(a)) => {
                if !matches!(self.h, KernelConfig::Euclidean { .. }) {
                    return invalid("the reference equation uses the euclidean kernel");
                }
                nalgebra::DMatrix::identity(dim, dim) * a
            }
            (KindConfig::Reference, _, _) => {
                return invalid("reference kind needs `a` and no `matrix`")
            }
            (_, Some(rows), None) => matrix_from_rows(rows)?,
            (_, _, _) => return invalid("general and forced kinds need `matrix` and no `a`"),
        };
        let sd = decompose(&matrix, SPECTRAL_TOL)?;
        let h = self.h.build(dim)?;

        let y0 = self.y0.as_ref().map(|v| DVector::from_vec(v.clone()));
        let (spec, oracle) = match self.kind {
            KindConfig::General => {
                if self.forcing.is_some() || self.envelope.is_some() {
                    return invalid(
                        "general kind takes `perturbation`, not `forcing` or `envelope`",
                    );
                }
                let g = self
                    .perturbation
                    .as_ref()
                    .map_or(Perturbation::Zero, |p| p.build());
                let y0 = y0.ok_or_else(|| ConfigError::Invalid("missing y0".into()))?;
                (ProblemSpec::general(matrix, h, g, self.t0, y0)?, None)
            }
            KindConfig::Forced | KindConfig::Reference => {
                if self.perturbation.is_some() {
                    return invalid(
                        "forced and reference kinds take `forcing`, not `perturbation`",
                    );
                }
                match self.forcing.as_ref().unwrap_or(&ForcingConfig::Zero) {
                    ForcingConfig::Zero => {
                        let env = self
                            .envelope
                            .as_ref()
                            .map(|e| e.build(self.t0))
                            .transpose()?;
                        let y0 = y0.ok_or_else(|| ConfigError::Invalid("missing y0".into()))?;
                        let spec = match self.kind {
                            KindConfig::Reference => ProblemSpec::reference(
                                self.a.unwrap(),
                                alpha,
                                Forcing::Zero,
                                env,
                                self.t0,
                                y0,
                            )?,
                            _ => ProblemSpec::forced(matrix, h, Forcing::Zero, env, self.t0, y0)?,
                        };
                        (spec, None)
                    }
                    ForcingConfig::Manufactured {
                        profile,
                        tstar,
                        corrector,
                    } => {
                        if y0.is_some() || self.envelope.is_some() {
                            return invalid("a manufactured forcing implies y0 and the envelope");
                        }
                        let xi = match profile {
                            ProfileConfig::Explicit { xi } => DVector::from_vec(xi.clone()),
                            ProfileConfig::Certified { direction, lambda } => certified_profile(
                                &DVector::from_vec(direction.clone()),
                                *lambda,
                                &h,
                            )?,
                        };
                        let corr = corrector.build();
                        let (spec, sol) = match self.kind {
                            KindConfig::Reference => manufactured_reference(
                                self.a.unwrap(),
                                alpha,
                                xi,
                                corr,
                                *tstar,
                                self.t0,
                            )?,
                            _ => manufactured(xi, corr, *tstar, self.t0, &sd, &h)?,
                        };
                        (spec, Some(sol))
                    }
                }
            }
        };
        if let Some(cap) = ctrl.norm_cap {
            if !(cap > spec.y0.norm()) {
                return invalid(format!(
                    "norm_cap {cap} must exceed |y0| = {}",
                    spec.y0.norm()
                ));
            }
        }
        Ok(BuiltProblem {
            spec,
            sd,
            oracle,
            control: self.control,
            analysis: self.analysis,
        })
    }

    fn dimension(&self) -> Result<usize, ConfigError> {
        if let Some(y0) = &self.y0 {
            return Ok(y0.len());
        }
        if let Some(ForcingConfig::Manufactured { profile, .. }) = &self.forcing {
            return Ok(match profile {
                ProfileConfig::Explicit { xi } => xi.len(),
                ProfileConfig::Certified { direction, .. } => direction.len(),
            });
        }
        invalid("missing y0")
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A grid over one parameter of a base problem. `parameter` is a JSON
/// pointer into the base config, e.g. `/forcing/corrector/delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    pub parameter: String,
    pub values: Vec<Value>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read(path)?)
    }

    /// The base config with the parameter set to each grid value, in order.
    /// Points that fail to parse are returned as errors so that a sweep can
    /// record them per row.
    pub fn points(&self) -> Result<Vec<(Value, Result<ProblemConfig, ConfigError>)>, ConfigError> {
        if self.values.is_empty() {
            return invalid("sweep grid is empty");
        }
        if self.base.pointer(&self.parameter).is_none() {
            return invalid(format!(
                "parameter {} is not present in the base config",
                self.parameter
            ));
        }
        Ok(self
            .values
            .iter()
            .map(|v| {
                let mut cfg = self.base.clone();
                *cfg.pointer_mut(&self.parameter).unwrap() = v.clone();
                (v.clone(), ProblemConfig::from_value(cfg))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::SystemKind;
    use approx::assert_relative_eq;

    #[test]
    fn general_config_builds() {
        let cfg = ProblemConfig::from_json(
            r#"{"kind": "general", "matrix": [[1, 0], [0, 3]],
                "H": {"kernel": "euclidean", "alpha": 1},
                "perturbation": {"family": "power_decay", "m": 0.1, "delta": 0.5},
                "y0": [1, 1], "control": {"rel_tol": 1e-9}}"#,
        )
        .unwrap();
        let b = cfg.build().unwrap();
        assert_eq!(b.spec.dim(), 2);
        assert_eq!(b.control.rel_tol, 1e-9);
        assert_eq!(b.control.abs_tol, Control::default().abs_tol);
        assert!(matches!(
            b.spec.kind,
            SystemKind::General {
                g: Perturbation::PowerDecay { r_star, .. }
            } if r_star == 1.0
        ));
        assert_eq!(b.sd.distinct_eigenvalues(), &[1.0, 3.0]);
    }

    #[test]
    fn manufactured_reference_config_implies_y0() {
        let cfg = ProblemConfig::from_json(
            r#"{"kind": "reference", "a": 1, "H": {"kernel": "euclidean", "alpha": 2},
                "forcing": {"type": "manufactured", "profile": {"direction": [1], "lambda": 1},
                            "tstar": 1, "corrector": {"type": "power", "c": 0.1, "delta": 0.5, "w": [1]}}}"#,
        )
        .unwrap();
        let b = cfg.build().unwrap();
        let sol = b.oracle.unwrap();
        assert_relative_eq!(sol.xi[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b.spec.y0[0], sol.y_exact(0.0)[0]);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let bad = [
            r#"{"kind": "general", "a": 1, "H": {"kernel": "euclidean", "alpha": 1}, "y0": [1]}"#,
            r#"{"kind": "general", "matrix": [[1]], "H": {"kernel": "euclidean", "alpha": 1}}"#,
            r#"{"kind": "general", "matrix": [[-1]], "H": {"kernel": "euclidean", "alpha": 1}, "y0": [1]}"#,
            r#"{"kind": "reference", "a": 1, "H": {"kernel": "p_norm", "alpha": 1, "p": 3}, "y0": [1]}"#,
            r#"{"kind": "reference", "a": 1, "H": {"kernel": "euclidean", "alpha": 1}, "y0": [1],
                "control": {"norm_cap": 0.5}}"#,
            r#"{"kind": "reference", "a": 1, "H": {"kernel": "euclidean", "alpha": 1}, "y0": [1],
                "control": {"rel_tol": -1}}"#,
        ];
        for text in bad {
            assert!(
                ProblemConfig::from_json(text).unwrap().build().is_err(),
                "{text}"
            );
        }
        assert!(matches!(
            ProblemConfig::from_json(r#"{"kind": "sideways"}"#),
            Err(ConfigError::Json(_))
        ));
    }

    #[test]
    fn sweep_substitutes_each_value() {
        let sweep = SweepConfig::from_json(
            r#"{"base": {"kind": "reference", "a": 1, "H": {"kernel": "euclidean", "alpha": 1},
                         "y0": [1], "envelope": {"family": "power", "m": 1, "delta": 0.5}},
                "parameter": "/envelope/delta", "values": [0.25, 1.0]}"#,
        )
        .unwrap();
        let pts = sweep.points().unwrap();
        assert_eq!(pts.len(), 2);
        let cfg = pts[1].1.as_ref().unwrap();
        assert_eq!(
            cfg.envelope,
            Some(EnvelopeConfig::Power {
                m: 1.0,
                delta: 1.0,
                tstar: None
            })
        );
        let empty = SweepConfig {
            values: vec![],
            ..sweep.clone()
        };
        assert!(empty.points().is_err());
        let missing = SweepConfig {
            parameter: "/nope".into(),
            ..sweep
        };
        assert!(missing.points().is_err());
    }
}
