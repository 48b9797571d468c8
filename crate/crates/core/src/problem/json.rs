//! JSON form of a problem. Matrices are row-major nested arrays, vectors are
//! flat arrays; a time-varying entry is written `{"grid_n": N, "values": [...]}`
//! with one value per grid interval.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    build_lq_problem, build_smooth_convex_problem, CertificateMode, CoefficientSet, CostFamily, Dimensions,
    LQData, ProblemSpec, QuadraticCost, SmoothFamily, SmoothFamilyParams, SmoothTerms, TimeVarying,
};
use crate::error::{structural, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Constant(Vec<Vec<f64>>),
    Piecewise { grid_n: usize, values: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorEntry {
    Constant(Vec<f64>),
    Piecewise { grid_n: usize, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct CoefficientsDocument {
    pub A: MatrixEntry,
    pub B: MatrixEntry,
    pub C: Vec<MatrixEntry>,
    pub D: Vec<MatrixEntry>,
    pub b: VectorEntry,
    pub sigma: Vec<VectorEntry>,
}

/// Cost parameters. Missing quadratic entries default to zero; for the
/// smooth families the quadratic entries are the extra terms added on top
/// of the family's δ-term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct CostParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub G: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Q: Option<MatrixEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub S: Option<MatrixEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub R: Option<MatrixEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<VectorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<VectorEntry>,
    #[serde(default)]
    pub kappa_x: f64,
    #[serde(default)]
    pub kappa_u: f64,
    #[serde(default)]
    pub kappa_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDocument {
    pub family: CostFamily,
    #[serde(default)]
    pub params: CostParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LipschitzEntry {
    Value(f64),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateDocument {
    pub delta: f64,
    pub mode: CertificateMode,
    #[serde(default = "auto_lip")]
    pub k_lip: LipschitzEntry,
}

fn auto_lip() -> LipschitzEntry {
    LipschitzEntry::Auto(AutoKeyword::Auto)
}

/// Top-level problem document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub dims: Dimensions,
    pub horizon: f64,
    pub coefficients: CoefficientsDocument,
    pub cost: CostDocument,
    pub certificate: CertificateDocument,
}

fn matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(structural(format!(
            "{name}: expected a {}×{} matrix, got {} rows",
            shape.0,
            shape.1,
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<DMatrix<f64>> {
    if v.len() != len {
        return Err(structural(format!("{name}: expected length {len}, got {}", v.len())));
    }
    Ok(DMatrix::from_column_slice(len, 1, v))
}

fn spacing(name: &str, grid_n: usize, count: usize, horizon: f64) -> Result<f64> {
    if grid_n == 0 || count != grid_n {
        return Err(structural(format!("{name}: piecewise entry needs grid_n ≥ 1 values, got grid_n={grid_n} with {count}")));
    }
    Ok(horizon / grid_n as f64)
}

fn matrix_entry(name: &str, e: &MatrixEntry, shape: (usize, usize), horizon: f64) -> Result<TimeVarying<DMatrix<f64>>> {
    match e {
        MatrixEntry::Constant(rows) => Ok(TimeVarying::Constant(matrix(name, rows, shape)?)),
        MatrixEntry::Piecewise { grid_n, values } => Ok(TimeVarying::Piecewise {
            spacing: spacing(name, *grid_n, values.len(), horizon)?,
            values: values.iter().map(|v| matrix(name, v, shape)).collect::<Result<_>>()?,
        }),
    }
}

fn vector_entry(name: &str, e: &VectorEntry, len: usize, horizon: f64) -> Result<TimeVarying<DMatrix<f64>>> {
    match e {
        VectorEntry::Constant(v) => Ok(TimeVarying::Constant(vector(name, v, len)?)),
        VectorEntry::Piecewise { grid_n, values } => Ok(TimeVarying::Piecewise {
            spacing: spacing(name, *grid_n, values.len(), horizon)?,
            values: values.iter().map(|v| vector(name, v, len)).collect::<Result<_>>()?,
        }),
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_doc(tv: &TimeVarying<DMatrix<f64>>) -> MatrixEntry {
    match tv {
        TimeVarying::Constant(m) => MatrixEntry::Constant(rows_of(m)),
        TimeVarying::Piecewise { values, .. } => MatrixEntry::Piecewise {
            grid_n: values.len(),
            values: values.iter().map(rows_of).collect(),
        },
    }
}

fn vector_doc(tv: &TimeVarying<DMatrix<f64>>) -> VectorEntry {
    match tv {
        TimeVarying::Constant(m) => VectorEntry::Constant(m.as_slice().to_vec()),
        TimeVarying::Piecewise { values, .. } => VectorEntry::Piecewise {
            grid_n: values.len(),
            values: values.iter().map(|m| m.as_slice().to_vec()).collect(),
        },
    }
}

impl ProblemDocument {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and checks the problem described by this document.
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let dims = Dimensions::new(self.dims.n, self.dims.m, self.dims.d)?;
        let Dimensions { n, m, d } = dims;
        let t = self.horizon;
        if !(t > 0.0 && t.is_finite()) {
            return Err(structural(format!("horizon must be positive, got {t}")));
        }
        let c = &self.coefficients;
        if c.C.len() != d || c.D.len() != d || c.sigma.len() != d {
            return Err(structural(format!("C, D and sigma must each list d = {d} entries")));
        }
        let coeffs = CoefficientSet {
            a: matrix_entry("A", &c.A, (n, n), t)?,
            b: matrix_entry("B", &c.B, (n, m), t)?,
            c: c.C.iter().map(|e| matrix_entry("C", e, (n, n), t)).collect::<Result<_>>()?,
            d: c.D.iter().map(|e| matrix_entry("D", e, (n, m), t)).collect::<Result<_>>()?,
            drift: vector_entry("b", &c.b, n, t)?,
            sigma: c.sigma.iter().map(|e| vector_entry("sigma", e, n, t)).collect::<Result<_>>()?,
        };

        let p = &self.cost.params;
        let mut quad = QuadraticCost::zeros(n, m);
        if let Some(g) = &p.G {
            quad.terminal_weight = matrix("G", g, (n, n))?;
        }
        if let Some(r) = &p.r {
            quad.terminal_linear = vector("r", r, n)?;
        }
        if let Some(e) = &p.Q {
            quad.state_weight = matrix_entry("Q", e, (n, n), t)?;
        }
        if let Some(e) = &p.S {
            quad.cross_weight = matrix_entry("S", e, (m, n), t)?;
        }
        if let Some(e) = &p.R {
            quad.control_weight = matrix_entry("R", e, (m, m), t)?;
        }
        if let Some(e) = &p.q {
            quad.state_linear = vector_entry("q", e, n, t)?;
        }
        if let Some(e) = &p.rho {
            quad.control_linear = vector_entry("rho", e, m, t)?;
        }

        let label = self.label.clone().unwrap_or_else(|| "problem".to_string());
        let cert = &self.certificate;
        let smooth = SmoothTerms { kappa_x: p.kappa_x, kappa_u: p.kappa_u, kappa_g: p.kappa_g };
        let mut spec = match self.cost.family {
            CostFamily::Quadratic => {
                if !smooth.is_zero() {
                    return Err(structural("the quadratic family takes no kappa terms"));
                }
                build_lq_problem(LQData {
                    dims,
                    horizon: t,
                    coeffs,
                    cost: quad,
                    delta: cert.delta,
                    mode: cert.mode,
                    label,
                })?
            }
            CostFamily::Case1Smooth | CostFamily::Case2Smooth => {
                let family = if self.cost.family == CostFamily::Case1Smooth {
                    SmoothFamily::Case1
                } else {
                    SmoothFamily::Case2
                };
                let mut spec = build_smooth_convex_problem(SmoothFamilyParams {
                    family,
                    dims,
                    horizon: t,
                    coeffs,
                    delta: cert.delta,
                    smooth,
                    extra: quad,
                    label,
                })?;
                spec.certificate.mode = cert.mode;
                spec
            }
        };
        if let LipschitzEntry::Value(k) = cert.k_lip {
            spec.certificate.k_lip = Some(k);
        }
        spec.check()?;
        Ok(spec)
    }

    /// The document describing `spec`.
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        let c = &spec.coeffs;
        let mut q = spec.cost.quadratic.clone();
        // the smooth families store their δ-term inside the quadratic part
        match (spec.cost.family, spec.cost.family_delta) {
            (CostFamily::Case1Smooth, Some(delta)) => {
                let eye = DMatrix::<f64>::identity(spec.dims.m, spec.dims.m) * delta;
                q.control_weight = q.control_weight.map(|r| r - &eye);
            }
            (CostFamily::Case2Smooth, Some(delta)) => {
                q.terminal_weight -= DMatrix::<f64>::identity(spec.dims.n, spec.dims.n) * delta;
            }
            _ => {}
        }
        ProblemDocument {
            label: Some(spec.label.clone()),
            dims: spec.dims,
            horizon: spec.horizon,
            coefficients: CoefficientsDocument {
                A: matrix_doc(&c.a),
                B: matrix_doc(&c.b),
                C: c.c.iter().map(matrix_doc).collect(),
                D: c.d.iter().map(matrix_doc).collect(),
                b: vector_doc(&c.drift),
                sigma: c.sigma.iter().map(vector_doc).collect(),
            },
            cost: CostDocument {
                family: spec.cost.family,
                params: CostParams {
                    G: Some(rows_of(&q.terminal_weight)),
                    r: Some(q.terminal_linear.as_slice().to_vec()),
                    Q: Some(matrix_doc(&q.state_weight)),
                    S: Some(matrix_doc(&q.cross_weight)),
                    R: Some(matrix_doc(&q.control_weight)),
                    q: Some(vector_doc(&q.state_linear)),
                    rho: Some(vector_doc(&q.control_linear)),
                    kappa_x: spec.cost.smooth.kappa_x,
                    kappa_u: spec.cost.smooth.kappa_u,
                    kappa_g: spec.cost.smooth.kappa_g,
                },
            },
            certificate: CertificateDocument {
                delta: spec.certificate.delta,
                mode: spec.certificate.mode,
                k_lip: match spec.certificate.k_lip {
                    Some(k) => LipschitzEntry::Value(k),
                    None => auto_lip(),
                },
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::LcfError;
    use crate::problem::presets;

    const P1_JSON: &str = r#"{
        "dims": {"n": 1, "m": 1, "d": 1},
        "horizon": 1.0,
        "coefficients": {"A": [[0]], "B": [[1]], "C": [[[0]]], "D": [[[0]]], "b": [0], "sigma": [[0.3]]},
        "cost": {"family": "quadratic", "params": {"G": [[1]], "Q": [[1]], "R": [[1]]}},
        "certificate": {"delta": 1.0, "mode": "case1", "k_lip": "auto"}
    }"#;

    #[test]
    fn parses_p1() {
        let spec = ProblemDocument::from_json_str(P1_JSON).unwrap().to_spec().unwrap();
        let mut reference = presets::p1(0.3);
        reference.label = "problem".into();
        assert_eq!(spec, reference);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = P1_JSON.replace("\"horizon\"", "\"horizn\": 2, \"horizon\"");
        assert!(matches!(ProblemDocument::from_json_str(&bad), Err(LcfError::Json(_))));
        let bad = P1_JSON.replace("\"k_lip\": \"auto\"", "\"k_lip\": \"fast\"");
        assert!(ProblemDocument::from_json_str(&bad).is_err());
    }

    #[test]
    fn wrong_shape_is_structural() {
        let bad = P1_JSON.replace("\"B\": [[1]]", "\"B\": [[1, 2]]");
        let err = ProblemDocument::from_json_str(&bad).unwrap().to_spec().unwrap_err();
        assert!(matches!(err, LcfError::Structural(_)));
    }

    #[test]
    fn presets_survive_a_document_trip() {
        for spec in [presets::p1(0.3), presets::p2(), presets::coupled_lq_2d()] {
            let doc = ProblemDocument::from_spec(&spec);
            let text = doc.to_json_string().unwrap();
            let back = ProblemDocument::from_json_str(&text).unwrap().to_spec().unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn piecewise_entries_use_the_horizon() {
        let text = P1_JSON.replace("\"A\": [[0]]", "\"A\": {\"grid_n\": 2, \"values\": [[[0]], [[-1]]]}");
        let spec = ProblemDocument::from_json_str(&text).unwrap().to_spec().unwrap();
        assert_eq!(spec.coeffs.a.at(0.25)[(0, 0)], 0.0);
        assert_eq!(spec.coeffs.a.at(0.5)[(0, 0)], -1.0);
    }
}
