//! Class probabilities as linear constraints on gate error terms, and their
//! weighted non-negative solution with identifiability analysis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::circuit::{GateErrorModel, GateKind, ModelSet, StabilizerType};
use crate::error::{Error, Result};
use crate::extract::{EstimatedNest, MIN_BATCHES};
use crate::nest::{odd_parity, Nest};
use crate::nnls::{nnls, NnlsOptions};
use crate::propagation::DetectionPattern;

pub const FIT_SCHEMA: &str = "fitreport.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// One unknown per (gate instance, Pauli).
    PerTerm,
    /// One depolarizing rate per gate instance.
    PerGateDepolarizing,
    /// One depolarizing rate per gate kind.
    PerKindDepolarizing,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerTerm => "per-term",
            Self::PerGateDepolarizing => "per-gate",
            Self::PerKindDepolarizing => "per-kind",
        })
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "per-term" => Ok(Self::PerTerm),
            "per-gate" | "per-gate-depolarizing" => Ok(Self::PerGateDepolarizing),
            "per-kind" | "per-kind-depolarizing" => Ok(Self::PerKindDepolarizing),
            _ => Err(Error::InvalidArgument(format!("unknown parameterization {s:?}"))),
        }
    }
}

/// An unknown of the system. `gate` is qualified by circuit name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Parameter {
    pub kind: GateKind,
    pub circuit: Option<String>,
    pub gate: Option<String>,
    pub pauli: Option<String>,
}

impl Parameter {
    pub fn name(&self) -> String {
        let mut s = match (&self.circuit, &self.gate) {
            (Some(c), Some(g)) => format!("{c}:{g}"),
            _ => self.kind.name().to_string(),
        };
        if let Some(p) = &self.pauli {
            s.push_str(&format!("({p})"));
        }
        s
    }

    fn key(param: Parameterization, circuit: &str, gate: &str, kind: GateKind, pauli: &str) -> Self {
        match param {
            Parameterization::PerKindDepolarizing => Self { kind, circuit: None, gate: None, pauli: None },
            Parameterization::PerGateDepolarizing => Self { kind, circuit: Some(circuit.into()), gate: Some(gate.into()), pauli: None },
            Parameterization::PerTerm => Self { kind, circuit: Some(circuit.into()), gate: Some(gate.into()), pauli: Some(pauli.into()) },
        }
    }

    /// Contribution of one unit of this parameter to a single term.
    fn weight(param: Parameterization, kind: GateKind) -> f64 {
        match param {
            Parameterization::PerTerm => 1.0,
            _ => 1.0 / kind.legal_labels().len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowInfo {
    pub circuit_id: String,
    pub circuit_name: String,
    pub stabilizer_type: StabilizerType,
    pub pattern: DetectionPattern,
}

/// Sparse (column, coefficient) list whose dot product with the parameters
/// is the pooled probability of one independent mechanism.
pub type Mechanism = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub parameterization: Parameterization,
    pub parameters: Vec<Parameter>,
    pub rows: Vec<RowInfo>,
    /// rows x parameters; entry = summed per-term weight of the parameter in the class.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub sigma: DVector<f64>,
    /// Row covariance of `rhs`. Diagonal is `sigma` squared; rows estimated
    /// from one record are coupled through their batch influences.
    pub covariance: DMatrix<f64>,
    /// Per row, the independent mechanisms of the class.
    pub mechanisms: Vec<Vec<Mechanism>>,
}

impl ConstraintSystem {
    /// Class probabilities predicted to first order.
    pub fn first_order(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// Class occurrence probabilities: odd parity over independent mechanisms.
    pub fn occurrence(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.mechanisms.iter().map(|row| odd_parity(row.iter().map(|m| m.iter().map(|&(c, w)| w * x[c]).sum::<f64>()))),
        )
    }

    pub fn with_rhs(&self, rhs: DVector<f64>) -> Self {
        Self { rhs, ..self.clone() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name() == name)
    }
}

/// One row per analytic class; rhs and sigma from the matching estimate.
/// Nests should be structural (every legal term present, see
/// [`crate::nest::structural_nest`]) so that no term is silently missing.
pub fn build_system(inputs: &[(&Nest, &EstimatedNest)], param: Parameterization) -> Result<ConstraintSystem> {
    let mut columns: BTreeMap<Parameter, usize> = BTreeMap::new();
    for (nest, _) in inputs {
        let all = nest.classes.iter().flat_map(|c| &c.contributors).chain(&nest.undetectable);
        for c in all {
            columns.entry(Parameter::key(param, &nest.circuit_name, &c.gate, c.kind, &c.pauli)).or_insert(0);
        }
    }
    for (i, v) in columns.values_mut().enumerate() {
        *v = i;
    }
    let parameters: Vec<Parameter> = columns.keys().cloned().collect();
    let mut rows = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs = Vec::new();
    let mut sigma = Vec::new();
    let mut mechanisms = Vec::new();
    let mut influence: Vec<(&str, Vec<f64>)> = Vec::new();
    for (nest, est) in inputs {
        if nest.circuit_id != est.circuit_id || nest.stabilizer_type != est.stabilizer_type {
            return Err(Error::CircuitMismatch { expected: nest.circuit_id.clone(), found: est.circuit_id.clone() });
        }
        let patterns: Vec<&DetectionPattern> = nest.classes.iter().map(|c| &c.pattern).collect();
        let estimated: Vec<&DetectionPattern> = est.classes.iter().map(|c| &c.pattern).collect();
        if patterns != estimated {
            return Err(Error::InvalidArgument(format!(
                "estimated classes of {} ({}) do not match the analytic nest",
                nest.circuit_name, nest.stabilizer_type
            )));
        }
        for (class, e) in nest.classes.iter().zip(&est.classes) {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            let mut pooled: BTreeMap<(&str, i64), BTreeMap<usize, f64>> = BTreeMap::new();
            for c in &class.contributors {
                let col = columns[&Parameter::key(param, &nest.circuit_name, &c.gate, c.kind, &c.pauli)];
                let w = Parameter::weight(param, c.kind);
                *row.entry(col).or_default() += w;
                *pooled.entry((c.gate.as_str(), c.offset)).or_default().entry(col).or_default() += w;
            }
            rows.push(RowInfo {
                circuit_id: nest.circuit_id.clone(),
                circuit_name: nest.circuit_name.clone(),
                stabilizer_type: nest.stabilizer_type,
                pattern: class.pattern.clone(),
            });
            entries.push(row.into_iter().collect());
            mechanisms.push(pooled.into_values().map(|m| m.into_iter().collect()).collect());
            rhs.push(e.corrected);
            sigma.push(e.sigma);
            influence.push((est.circuit_id.as_str(), e.influence()));
        }
    }
    let mut matrix = DMatrix::zeros(rows.len(), parameters.len());
    for (r, row) in entries.iter().enumerate() {
        for &(c, w) in row {
            matrix[(r, c)] = w;
        }
    }
    let n = rows.len();
    let covariance = DMatrix::from_fn(n, n, |r, s| {
        if r == s {
            return sigma[r] * sigma[r];
        }
        let ((id_r, inf_r), (id_s, inf_s)) = (&influence[r], &influence[s]);
        let batches = inf_r.len();
        if id_r != id_s || batches != inf_s.len() || batches < MIN_BATCHES {
            return 0.0;
        }
        let b = batches as f64;
        inf_r.iter().zip(inf_s).map(|(x, y)| x * y).sum::<f64>() * b / (b - 1.0)
    });
    Ok(ConstraintSystem {
        parameterization: param,
        parameters,
        rows,
        matrix,
        rhs: DVector::from_vec(rhs),
        sigma: DVector::from_vec(sigma),
        covariance,
        mechanisms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fixed-point passes replacing the first-order model by class
    /// occurrence probabilities; 0 fits the linear system as is.
    pub composition_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        let n = NnlsOptions::default();
        Self { tolerance: n.tolerance, max_iterations: n.max_iterations, composition_iterations: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParameter {
    pub name: String,
    pub parameter: Parameter,
    /// Absent when the parameter is not determined by the data.
    pub estimate: Option<f64>,
    pub sigma: Option<f64>,
    pub ci: Option<[f64; 2]>,
    /// Minimum-norm non-negative value, reported for every parameter.
    pub min_norm: f64,
}

/// A sum of unidentifiable parameters that the data does determine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub members: Vec<String>,
    pub estimate: f64,
    pub sigma: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResidual {
    pub circuit_name: String,
    pub stabilizer_type: StabilizerType,
    pub pattern: DetectionPattern,
    pub observed: f64,
    pub predicted: f64,
    pub sigma: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub parameterization: Parameterization,
    pub rank: usize,
    pub parameters: Vec<FittedParameter>,
    pub combinations: Vec<Combination>,
    /// Orthonormal nullspace basis, sparse (name, component).
    pub unidentifiable_directions: Vec<Vec<(String, f64)>>,
    /// Parameters that no class depends on at all.
    pub invisible: Vec<String>,
    pub residuals: Vec<RowResidual>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: Option<f64>,
    pub nnls_iterations: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct FitDoc {
    schema: String,
    #[serde(flatten)]
    report: FitReport,
}

impl FitReport {
    pub fn parameter(&self, name: &str) -> Option<&FittedParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FitDoc { schema: FIT_SCHEMA.into(), report: self.clone() }).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<FitReport> {
        let doc: FitDoc = serde_json::from_str(text)?;
        crate::circuit::check_schema(FIT_SCHEMA, &doc.schema)?;
        Ok(doc.report)
    }

    fn value(p: &FittedParameter) -> f64 {
        p.estimate.unwrap_or(p.min_norm)
    }

    /// Fitted models for one circuit; unidentifiable parameters take their
    /// minimum-norm value.
    pub fn models_for(&self, circuit_name: &str) -> Result<ModelSet> {
        let mut set = ModelSet::noiseless();
        match self.parameterization {
            Parameterization::PerKindDepolarizing => {
                for p in &self.parameters {
                    set.by_kind.insert(p.parameter.kind, GateErrorModel::depolarizing(p.parameter.kind, Self::value(p).min(1.0))?);
                }
            }
            Parameterization::PerGateDepolarizing => {
                for p in self.parameters.iter().filter(|p| p.parameter.circuit.as_deref() == Some(circuit_name)) {
                    let gate = p.parameter.gate.clone().expect("per-gate parameter");
                    set.by_gate.insert(gate, GateErrorModel::depolarizing(p.parameter.kind, Self::value(p).min(1.0))?);
                }
            }
            Parameterization::PerTerm => {
                let mut terms: BTreeMap<(String, GateKind), BTreeMap<String, f64>> = BTreeMap::new();
                for p in self.parameters.iter().filter(|p| p.parameter.circuit.as_deref() == Some(circuit_name)) {
                    let gate = p.parameter.gate.clone().expect("per-term parameter");
                    let pauli = p.parameter.pauli.clone().expect("per-term parameter");
                    terms.entry((gate, p.parameter.kind)).or_default().insert(pauli, Self::value(p));
                }
                for ((gate, kind), mut t) in terms {
                    let total: f64 = t.values().sum();
                    if total > 1.0 {
                        t.values_mut().for_each(|v| *v /= total);
                    }
                    set.by_gate.insert(gate, GateErrorModel::new(kind, t)?);
                }
            }
        }
        Ok(set)
    }
}

const NULL_EIGEN_RELATIVE: f64 = 1e-12;
const NULL_PROJECTION: f64 = 1e-9;

pub fn solve(system: &ConstraintSystem, options: &SolveOptions) -> Result<FitReport> {
    let a = &system.matrix;
    if a.nrows() == 0 || a.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("constraint matrix is empty or all zero".into()));
    }
    for (r, (&y, &s)) in system.rhs.iter().zip(system.sigma.iter()).enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("row {r} has non-positive sigma {s}")));
        }
        if y < -3.0 * s {
            return Err(Error::InvalidArgument(format!("row {r} has negative probability {y}")));
        }
    }
    let inv_sigma = system.sigma.map(|s| 1.0 / s);
    let weighted = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * inv_sigma[r]);
    let nnls_opts = NnlsOptions { tolerance: options.tolerance, max_iterations: options.max_iterations };
    let n = a.ncols();
    let normal = weighted.transpose() * &weighted;
    let eig = SymmetricEigen::new(normal);
    let lambda_max = eig.eigenvalues.amax();
    let threshold = NULL_EIGEN_RELATIVE * lambda_max;
    let null: Vec<DVector<f64>> =
        (0..n).filter(|&i| eig.eigenvalues[i] <= threshold).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
    let mut cov = DMatrix::zeros(n, n);
    for i in (0..n).filter(|&i| eig.eigenvalues[i] > threshold) {
        let v = eig.eigenvectors.column(i);
        cov += (v * v.transpose()) / eig.eigenvalues[i];
    }
    // Sandwich form: weights stay diagonal, row correlations enter the spread.
    let w = a.transpose() * DMatrix::from_diagonal(&inv_sigma.map(|v| v * v));
    let cov = &cov * (&w * &system.covariance * w.transpose()) * &cov;
    let projection: Vec<f64> = (0..n).map(|j| null.iter().map(|v| v[j] * v[j]).sum()).collect();
    let min_norm = |x: DVector<f64>| {
        let mut shifted = x.clone();
        for v in &null {
            shifted -= v * v.dot(&x);
        }
        let floor = -1e-12 * x.amax().max(1e-300);
        if shifted.iter().all(|&v| v >= floor) {
            shifted.map(|v| v.max(0.0))
        } else {
            x
        }
    };
    let fit = |target: &DVector<f64>| nnls(&weighted, &target.component_mul(&inv_sigma), &nnls_opts);
    let sol = fit(&system.rhs);
    let mut iterations = sol.iterations;
    let mut converged = sol.converged;
    let mut x = min_norm(sol.x);
    for _ in 0..options.composition_iterations {
        let target = &system.rhs + system.first_order(&x) - system.occurrence(&x);
        let sol = fit(&target);
        iterations += sol.iterations;
        converged &= sol.converged;
        x = min_norm(sol.x);
    }
    let names: Vec<String> = system.parameters.iter().map(Parameter::name).collect();
    let parameters = (0..n)
        .map(|j| {
            let identifiable = projection[j] <= NULL_PROJECTION;
            let sd = cov[(j, j)].max(0.0).sqrt();
            FittedParameter {
                name: names[j].clone(),
                parameter: system.parameters[j].clone(),
                estimate: identifiable.then_some(x[j]),
                sigma: identifiable.then_some(sd),
                ci: identifiable.then_some([(x[j] - 1.96 * sd).max(0.0), x[j] + 1.96 * sd]),
                min_norm: x[j],
            }
        })
        .collect();
    let combinations = identifiable_sums(&null, &projection, &cov, &x, &names);
    let predicted = if options.composition_iterations > 0 { system.occurrence(&x) } else { system.first_order(&x) };
    let residuals: Vec<RowResidual> = system
        .rows
        .iter()
        .enumerate()
        .map(|(r, info)| RowResidual {
            circuit_name: info.circuit_name.clone(),
            stabilizer_type: info.stabilizer_type,
            pattern: info.pattern.clone(),
            observed: system.rhs[r],
            predicted: predicted[r],
            sigma: system.sigma[r],
            z: (system.rhs[r] - predicted[r]) / system.sigma[r],
        })
        .collect();
    let chi2: f64 = residuals.iter().map(|r| r.z * r.z).sum();
    let rank = n - null.len();
    let dof = system.rows.len().saturating_sub(rank);
    let p_value = (dof > 0).then(|| 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(chi2));
    Ok(FitReport {
        parameterization: system.parameterization,
        rank,
        parameters,
        combinations,
        unidentifiable_directions: null
            .iter()
            .map(|v| (0..n).filter(|&j| v[j].abs() > 1e-9).map(|j| (names[j].clone(), v[j])).collect())
            .collect(),
        invisible: (0..n).filter(|&j| a.column(j).iter().all(|&v| v == 0.0)).map(|j| names[j].clone()).collect(),
        residuals,
        chi2,
        dof,
        p_value,
        nnls_iterations: iterations,
        converged,
    })
}

/// Groups of unidentifiable parameters linked through nullspace vectors
/// whose plain sum is orthogonal to the nullspace.
fn identifiable_sums(
    null: &[DVector<f64>],
    projection: &[f64],
    cov: &DMatrix<f64>,
    x: &DVector<f64>,
    names: &[String],
) -> Vec<Combination> {
    let n = projection.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while g[r] != r {
            r = g[r];
        }
        g[i] = r;
        r
    }
    for v in null {
        let support: Vec<usize> = (0..n).filter(|&j| v[j].abs() > 1e-6).collect();
        for w in support.windows(2) {
            let (a, b) = (root(&mut group, w[0]), root(&mut group, w[1]));
            group[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for j in (0..n).filter(|&j| projection[j] > NULL_PROJECTION) {
        let r = root(&mut group, j);
        groups.entry(r).or_default().push(j);
    }
    groups
        .into_values()
        .filter(|g| g.len() > 1)
        .filter(|g| null.iter().all(|v| g.iter().map(|&j| v[j]).sum::<f64>().abs() < 1e-9))
        .map(|g| {
            let estimate: f64 = g.iter().map(|&j| x[j]).sum();
            let var: f64 = g.iter().flat_map(|&i| g.iter().map(move |&j| (i, j))).map(|(i, j)| cov[(i, j)]).sum();
            let sigma = var.max(0.0).sqrt();
            Combination {
                members: g.iter().map(|&j| names[j].clone()).collect(),
                estimate,
                sigma,
                ci: [(estimate - 1.96 * sigma).max(0.0), estimate + 1.96 * sigma],
            }
        })
        .collect()
}
