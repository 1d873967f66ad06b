//! End-to-end run: build nests, simulate, extract, invert, validate and
//! correlate, with every intermediate artifact written under one directory.
//!
//! Layout of `output_dir`:
//!
//! ```text
//! config.json  truth.json  fit.json  models/<circuit>.json
//! circuits/<circuit>.json  nests/<circuit>-<z|x>.json
//! records/<circuit>-<shard>.mrec (+ .json sidecar)
//! estimates/<circuit>-<z|x>.json  validation.json  correlation-<circuit>.json
//! report.json  metadata.json
//! ```
//!
//! `report.json` depends only on the config; wall-clock data lives in
//! `metadata.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::circuit::{build_parity_square_circuit, build_repetition_circuit, Circuit, GateKind, ModelSet, StabilizerType};
use crate::correlation::{cross_correlate, temporal_autocorrelate, Autocorrelation, CrossCorrelationReport, DEFAULT_WINDOW};
use crate::decoder::{
    compare_predicted_vs_observed, logical_error_rate_with, trial_seed, Comparison, LogicalTrialResult, MatchingGraph, Verdict,
    DEFAULT_ALPHA,
};
use crate::error::Error;
use crate::extract::{estimate_nest, ClusterPolicy, EstimatedNest};
use crate::inversion::{build_system, solve, FitReport, Parameter, Parameterization, SolveOptions};
use crate::nest::{build_nest, export_nest, structural_nest, Nest};
use crate::record::write_record;
use crate::sim::{simulate_with, ExtraChannel};

pub const CONFIG_SCHEMA: &str = "pipeline.v1";
pub const REPORT_SCHEMA: &str = "report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CircuitSpec {
    Repetition {
        distance: usize,
    },
    ParitySquare,
    /// `circuit.v1` file; its models are replaced by the truth models.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    /// One depolarizing rate per gate kind; kinds left out are noiseless.
    PerKind { rates: BTreeMap<GateKind, f64> },
    /// `errormodel.v1` file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub enabled: bool,
    pub trials: u64,
    pub rounds_per_trial: u64,
    pub alpha: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { enabled: true, trials: 100_000, rounds_per_trial: 5, alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub enabled: bool,
    pub window: u64,
    pub max_lag: u64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self { enabled: true, window: DEFAULT_WINDOW, max_lag: 4 }
    }
}

/// Per-kind rates of the default truth: CZ 0.5%, H 0.1%, idle 0.2%, M 0.5%, init 0.5%.
pub fn default_truth_rates() -> BTreeMap<GateKind, f64> {
    [
        (GateKind::Cz, 0.005),
        (GateKind::Hadamard, 0.001),
        (GateKind::IdleMemory, 0.002),
        (GateKind::MeasureZ, 0.005),
        (GateKind::Init0, 0.005),
    ]
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_circuits")]
    pub circuits: Vec<CircuitSpec>,
    #[serde(default = "default_truth")]
    pub truth: ModelSpec,
    /// Channels simulated on top of the truth models, keyed by circuit name;
    /// invisible to the fit.
    #[serde(default)]
    pub extra: BTreeMap<String, Vec<ExtraChannel>>,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub shards: u64,
    #[serde(default)]
    pub policy: ClusterPolicy,
    #[serde(default = "default_parameterization")]
    pub parameterization: Parameterization,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    pub output_dir: PathBuf,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.into()
}
fn default_circuits() -> Vec<CircuitSpec> {
    vec![CircuitSpec::Repetition { distance: 3 }, CircuitSpec::ParitySquare]
}
fn default_truth() -> ModelSpec {
    ModelSpec::PerKind { rates: default_truth_rates() }
}
fn default_rounds() -> u64 {
    1_000_000
}
fn default_shards() -> u64 {
    1
}
fn default_parameterization() -> Parameterization {
    Parameterization::PerKindDepolarizing
}

impl PipelineConfig {
    pub fn new(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema: default_schema(),
            circuits: default_circuits(),
            truth: default_truth(),
            extra: BTreeMap::new(),
            rounds: default_rounds(),
            seed,
            shards: default_shards(),
            policy: ClusterPolicy::default(),
            parameterization: default_parameterization(),
            solve: SolveOptions::default(),
            validation: ValidationConfig::default(),
            correlation: CorrelationConfig::default(),
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        crate::circuit::check_schema(CONFIG_SCHEMA, &c.schema)?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every value and loads every referenced file; nothing is written.
    pub fn resolve(&self) -> crate::Result<(Vec<Circuit>, ModelSet)> {
        crate::circuit::check_schema(CONFIG_SCHEMA, &self.schema)?;
        if self.rounds == 0 {
            return Err(Error::ZeroRounds);
        }
        if self.shards == 0 || self.rounds / self.shards < 1000 {
            return Err(Error::InvalidArgument(format!(
                "{} rounds in {} shards leaves under 1000 rounds per shard",
                self.rounds, self.shards
            )));
        }
        if self.circuits.is_empty() {
            return Err(Error::InvalidArgument("no circuits configured".into()));
        }
        self.policy.validate()?;
        if self.validation.enabled && (self.validation.trials == 0 || self.validation.rounds_per_trial == 0) {
            return Err(Error::InvalidArgument("validation trials and rounds_per_trial must be positive".into()));
        }
        if !(self.validation.alpha > 0.0 && self.validation.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.validation.alpha)));
        }
        if self.correlation.enabled && (self.correlation.window == 0 || self.correlation.max_lag == 0) {
            return Err(Error::InvalidArgument("correlation window and max_lag must be positive".into()));
        }
        let truth = match &self.truth {
            ModelSpec::PerKind { rates } => {
                let mut m = ModelSet::noiseless();
                for (&kind, &rate) in rates {
                    m.by_kind.insert(kind, crate::circuit::GateErrorModel::depolarizing(kind, rate)?);
                }
                m
            }
            ModelSpec::File { path } => ModelSet::from_json(&read(path)?)?,
        };
        let mut circuits = Vec::new();
        for spec in &self.circuits {
            let c = match spec {
                CircuitSpec::Repetition { distance } => build_repetition_circuit(*distance, &truth.by_kind)?,
                CircuitSpec::ParitySquare => build_parity_square_circuit(&truth.by_kind)?,
                CircuitSpec::File { path } => Circuit::from_json(&read(path)?)?.with_models(truth.clone())?,
            };
            if circuits.iter().any(|o: &Circuit| o.name == c.name) {
                return Err(Error::InvalidArgument(format!("circuit {} listed twice", c.name)));
            }
            circuits.push(c);
        }
        for name in self.extra.keys() {
            let c = circuits
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::InvalidArgument(format!("extra channels for unknown circuit {name}")))?;
            simulate_with(c, 1, 0, &self.extra[name])?;
        }
        Ok((circuits, truth))
    }
}

fn read(path: &Path) -> crate::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(Error),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Error },
}

impl PipelineError {
    /// 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 3,
        }
    }
}

pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredRate {
    pub name: String,
    pub injected: f64,
    pub estimate: Option<f64>,
    pub sigma: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub z: Option<f64>,
    pub within_3_sigma: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub circuit: String,
    pub stabilizer_type: StabilizerType,
    pub pattern: String,
    pub isolated: u64,
    pub estimate: f64,
    pub sigma: f64,
    pub analytic: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub circuit: String,
    pub observed: LogicalTrialResult,
    pub predicted: LogicalTrialResult,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub circuit: String,
    pub cells: usize,
    pub significant_excess: usize,
    pub strongest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema: String,
    pub seed: u64,
    pub rounds: u64,
    pub parameterization: Parameterization,
    pub rates: Vec<RecoveredRate>,
    /// Identifiable sums of unidentifiable parameters.
    pub combinations: Vec<RecoveredRate>,
    pub unidentifiable: Vec<String>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: Option<f64>,
    pub classes: Vec<ClassCheck>,
    pub validation: Vec<ValidationOutcome>,
    pub correlation: Vec<CorrelationSummary>,
    pub all_rates_within_3_sigma: bool,
    pub validation_consistent: bool,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        crate::circuit::check_schema(REPORT_SCHEMA, &r.schema)?;
        Ok(r)
    }

    /// Statistical acceptance of a round trip.
    pub fn accepted(&self) -> bool {
        self.all_rates_within_3_sigma && self.validation_consistent
    }
}

/// Injected value of a fitted parameter: the total rate of its gate(s), or one term.
pub fn injected_value(parameter: &Parameter, circuits: &[Circuit]) -> f64 {
    let gates = circuits.iter().flat_map(|c| c.gates.iter().map(move |g| (c, g)));
    let mut values = gates.filter(|(c, g)| {
        g.kind == parameter.kind
            && parameter.circuit.as_ref().is_none_or(|n| n == &c.name)
            && parameter.gate.as_ref().is_none_or(|id| id == &g.id)
    });
    let Some((c, g)) = values.next() else { return 0.0 };
    let model = c.model_for(g);
    match &parameter.pauli {
        Some(p) => model.probability(p),
        None => model.total(),
    }
}

fn tag(s: StabilizerType) -> &'static str {
    match s {
        StabilizerType::ZType => "z",
        StabilizerType::XType => "x",
    }
}

struct Writer<'a> {
    root: &'a Path,
}

impl Writer<'_> {
    fn put(&self, rel: &str, text: &str) -> crate::Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
        Ok(())
    }
}

fn stage<T>(name: &'static str, r: crate::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|source| PipelineError::Stage { stage: name, source })
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let started = SystemTime::now();
    let (circuits, truth) = config.resolve().map_err(PipelineError::Config)?;
    let out = Writer { root: &config.output_dir };
    let mut timings: Vec<(&str, f64)> = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    stage(
        "build-nest",
        (|| {
            out.put("config.json", &config.to_json())?;
            out.put("truth.json", &truth.to_json())?;
            for c in &circuits {
                out.put(&format!("circuits/{}.json", c.name), &c.to_json())?;
            }
            Ok(())
        })(),
    )?;
    let mut nests: Vec<(usize, Nest, Nest)> = Vec::new();
    for (i, c) in circuits.iter().enumerate() {
        for s in c.stabilizer_types() {
            let structural = stage("build-nest", structural_nest(c, s))?;
            let analytic = stage("build-nest", build_nest(c, s))?;
            stage("build-nest", out.put(&format!("nests/{}-{}.json", c.name, tag(s)), &export_nest(&analytic)))?;
            nests.push((i, structural, analytic));
        }
    }
    lap("build-nest", &mut timings);

    stage("simulate", fs::create_dir_all(config.output_dir.join("records")).map_err(Error::from))?;
    let per_shard = config.rounds / config.shards;
    let mut records = Vec::new();
    for (i, c) in circuits.iter().enumerate() {
        let extra = config.extra.get(&c.name).map_or(&[][..], |v| v.as_slice());
        let mut shards = Vec::new();
        for k in 0..config.shards {
            let rounds = if k + 1 == config.shards { config.rounds - per_shard * k } else { per_shard };
            let seed = trial_seed(config.seed, (i as u64) << 32 | k);
            let rec = stage("simulate", simulate_with(c, rounds, seed, extra))?;
            stage("simulate", write_record(&config.output_dir.join(format!("records/{}-{k}.mrec", c.name)), &rec))?;
            shards.push(rec);
        }
        records.push(shards);
    }
    lap("simulate", &mut timings);

    let mut estimates: Vec<EstimatedNest> = Vec::new();
    for (i, structural, _) in &nests {
        let mut merged: Option<EstimatedNest> = None;
        for rec in &records[*i] {
            let e = stage("extract", estimate_nest(rec, structural, &config.policy))?;
            merged = Some(match merged {
                None => e,
                Some(m) => stage("extract", m.merge(&e, structural))?,
            });
        }
        let e = merged.expect("at least one shard");
        stage("extract", out.put(&format!("estimates/{}-{}.json", circuits[*i].name, tag(structural.stabilizer_type)), &e.to_json()))?;
        estimates.push(e);
    }
    lap("extract", &mut timings);

    let pairs: Vec<(&Nest, &EstimatedNest)> = nests.iter().map(|(_, s, _)| s).zip(&estimates).collect();
    let system = stage("invert", build_system(&pairs, config.parameterization))?;
    let fit = stage("invert", solve(&system, &config.solve))?;
    stage("invert", out.put("fit.json", &fit.to_json()))?;
    let mut fitted = Vec::new();
    for c in &circuits {
        let models = stage("invert", fit.models_for(&c.name))?;
        stage("invert", out.put(&format!("models/{}.json", c.name), &models.to_json()))?;
        fitted.push(stage("invert", c.with_models(models))?);
    }
    lap("invert", &mut timings);

    let mut validation = Vec::new();
    if config.validation.enabled {
        for (i, (c, f)) in circuits.iter().zip(&fitted).enumerate() {
            if c.stabilizer_types() != [StabilizerType::ZType] {
                continue;
            }
            let v = &config.validation;
            let extra = config.extra.get(&c.name).map_or(&[][..], |v| v.as_slice());
            let graph = stage("validate", MatchingGraph::new(f))?;
            let base = trial_seed(config.seed, 0xfeed_0000 + i as u64);
            let predicted = stage("validate", logical_error_rate_with(f, &[], &graph, v.trials, v.rounds_per_trial, trial_seed(base, 0)))?;
            let observed = stage("validate", logical_error_rate_with(c, extra, &graph, v.trials, v.rounds_per_trial, trial_seed(base, 1)))?;
            let comparison = stage("validate", compare_predicted_vs_observed(&observed, &predicted, v.alpha))?;
            validation.push(ValidationOutcome { circuit: c.name.clone(), observed, predicted, comparison });
        }
        stage("validate", out.put("validation.json", &serde_json::to_string_pretty(&validation).expect("serializes")))?;
    }
    lap("validate", &mut timings);

    let mut correlation = Vec::new();
    if config.correlation.enabled {
        for (i, c) in circuits.iter().enumerate() {
            if c.stabilizer_types().len() < 2 {
                continue;
            }
            let rec = &records[i][0];
            let cross = stage("correlate", cross_correlate(rec, c, config.correlation.window, &config.policy))?;
            let temporal = stage("correlate", temporal_autocorrelate(rec, config.correlation.max_lag))?;
            #[derive(Serialize)]
            struct Doc<'a> {
                cross: &'a CrossCorrelationReport,
                temporal: &'a [Autocorrelation],
            }
            let text = serde_json::to_string_pretty(&Doc { cross: &cross, temporal: &temporal }).expect("serializes");
            stage("correlate", out.put(&format!("correlation-{}.json", c.name), &text))?;
            let cells: Vec<_> = cross.z_given_x.cells.iter().filter(|c| c.target.is_some()).collect();
            let significant: Vec<_> = cells.iter().filter(|c| c.significant() && c.excess > 0.0).collect();
            let strongest = significant.iter().max_by(|a, b| a.excess.total_cmp(&b.excess)).map(|c| {
                format!("Z {} given X {} at offset {}: excess {:.4}", c.target.as_ref().expect("filtered"), c.given, c.offset, c.excess)
            });
            correlation.push(CorrelationSummary {
                circuit: c.name.clone(),
                cells: cells.len(),
                significant_excess: significant.len(),
                strongest,
            });
        }
    }
    lap("correlate", &mut timings);

    let report = assemble(config, &circuits, &nests, &estimates, &fit, validation, correlation);
    stage("report", out.put("report.json", &report.to_json()))?;
    let finished = SystemTime::now();
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let metadata = serde_json::json!({
        "started_unix": secs(started),
        "finished_unix": secs(finished),
        "stage_seconds": timings.iter().map(|(n, s)| (n.to_string(), *s)).collect::<BTreeMap<_, _>>(),
        "threads": rayon::current_num_threads(),
    });
    stage("report", out.put("metadata.json", &serde_json::to_string_pretty(&metadata).expect("serializes")))?;
    Ok(report)
}

fn rate(name: String, injected: f64, estimate: Option<f64>, sigma: Option<f64>, ci: Option<[f64; 2]>) -> RecoveredRate {
    let z = estimate.zip(sigma).filter(|(_, s)| *s > 0.0).map(|(e, s)| (e - injected) / s);
    RecoveredRate { name, injected, estimate, sigma, ci, z, within_3_sigma: z.map(|z| z.abs() <= 3.0) }
}

fn assemble(
    config: &PipelineConfig,
    circuits: &[Circuit],
    nests: &[(usize, Nest, Nest)],
    estimates: &[EstimatedNest],
    fit: &FitReport,
    validation: Vec<ValidationOutcome>,
    correlation: Vec<CorrelationSummary>,
) -> PipelineReport {
    let rates: Vec<RecoveredRate> =
        fit.parameters.iter().map(|p| rate(p.name.clone(), injected_value(&p.parameter, circuits), p.estimate, p.sigma, p.ci)).collect();
    let combinations: Vec<RecoveredRate> = fit
        .combinations
        .iter()
        .map(|c| {
            let injected = c.members.iter().filter_map(|m| rates.iter().find(|r| &r.name == m)).map(|r| r.injected).sum();
            rate(c.members.join(" + "), injected, Some(c.estimate), Some(c.sigma), Some(c.ci))
        })
        .collect();
    let mut classes = Vec::new();
    for ((i, _, analytic), est) in nests.iter().zip(estimates) {
        for e in &est.classes {
            let truth = analytic.classes.iter().find(|c| c.pattern == e.pattern).map_or(0.0, |c| c.occurrence_probability);
            classes.push(ClassCheck {
                circuit: circuits[*i].name.clone(),
                stabilizer_type: est.stabilizer_type,
                pattern: e.pattern.to_string(),
                isolated: e.count,
                estimate: e.corrected,
                sigma: e.sigma_binomial,
                analytic: truth,
                z: (e.corrected - truth) / e.sigma_binomial,
            });
        }
    }
    let judged = rates.iter().chain(&combinations).filter_map(|r| r.within_3_sigma);
    let all_rates_within_3_sigma = judged.clone().count() > 0 && judged.into_iter().all(|ok| ok);
    let validation_consistent = validation.iter().all(|v| v.comparison.verdict == Verdict::Consistent);
    PipelineReport {
        schema: REPORT_SCHEMA.into(),
        seed: config.seed,
        rounds: config.rounds,
        parameterization: fit.parameterization,
        rates,
        combinations,
        unidentifiable: fit.parameters.iter().filter(|p| p.estimate.is_none()).map(|p| p.name.clone()).collect(),
        chi2: fit.chi2,
        dof: fit.dof,
        p_value: fit.p_value,
        classes,
        validation,
        correlation,
        all_rates_within_3_sigma,
        validation_consistent,
    }
}
