use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use nestfit::circuit::{build_parity_square_circuit, build_repetition_circuit, Circuit, ModelSet, StabilizerType};
use nestfit::correlation::{cross_correlate, DEFAULT_WINDOW};
use nestfit::decoder::{compare_predicted_vs_observed, logical_error_rate_with, trial_seed, MatchingGraph, DEFAULT_ALPHA};
use nestfit::extract::{estimate_nest, ClusterPolicy, EstimatedNest};
use nestfit::inversion::{build_system, solve, Parameterization, SolveOptions};
use nestfit::nest::{build_nest, export_nest, import_nest, plot_cylinders, Nest};
use nestfit::pipeline::{run_pipeline, PipelineConfig, PipelineError, EXIT_ACCEPTANCE};
use nestfit::propagation::{format_oracle_table, oracle_table, propagate_single, ErrorLocation};
use nestfit::record::{read_record, write_record};
use nestfit::sim::{simulate_with, ExtraChannel};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nestfit", version, about = "Simulate cyclic error-detection circuits and recover their error models")]
struct Cli {
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a circuit.v1 document.
    BuildCircuit {
        /// `repetition` or `square`.
        #[arg(long)]
        code: String,
        #[arg(long, default_value_t = 3)]
        distance: usize,
        /// errormodel.v1 file; noiseless when absent.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Depolarizing rate for every gate kind.
        #[arg(long, conflicts_with = "models")]
        uniform: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the analytic nest of one stabilizer type.
    BuildNest {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, default_value = "Z")]
        stabilizer: StabilizerType,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        plot_layers: usize,
    },
    /// Sample a measurement record.
    Simulate {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        rounds: u64,
        #[arg(long)]
        seed: u64,
        /// JSON list of extra channels.
        #[arg(long)]
        extra: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection pattern of a single error, or the full single-error table.
    Oracle {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, required_unless_present = "table")]
        gate: Option<String>,
        #[arg(long, required_unless_present = "table")]
        pauli: Option<String>,
        #[arg(long, default_value_t = 0)]
        offset: i64,
        #[arg(long)]
        table: bool,
        /// With --table, print tab-separated text instead of JSON.
        #[arg(long, requires = "table")]
        text: bool,
    },
    /// Estimate class probabilities from a record.
    Extract {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        nest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Fit error models to estimated nests.
    Invert {
        #[arg(long = "est", required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long = "nest", required = true)]
        nests: Vec<PathBuf>,
        #[arg(long, default_value = "per-kind")]
        param: Parameterization,
        /// Receives the fitted errormodel.v1 of `--circuit-name`, or of the first circuit.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        circuit_name: Option<String>,
        /// Fit report; defaults to `<out stem>.fit.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare logical error rates predicted by fitted models with those of the truth.
    Validate {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        extra: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 5)]
        rounds: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-nest correlations of a two-type circuit.
    Correlate {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Full pipeline from a config file; flags override config values.
    Roundtrip(RoundtripArgs),
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long)]
    space_cells: Option<u32>,
    #[arg(long)]
    time_rounds: Option<u32>,
    #[arg(long)]
    max_cluster_size: Option<usize>,
}

impl PolicyArgs {
    fn policy(&self) -> ClusterPolicy {
        let mut p = ClusterPolicy::default();
        if let Some(s) = self.space_cells {
            p.space_cells = s;
        }
        if let Some(t) = self.time_rounds {
            p.time_rounds = t;
        }
        if let Some(m) = self.max_cluster_size {
            p.max_cluster_size = m;
        }
        p
    }
}

#[derive(Args)]
struct RoundtripArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    shards: Option<u64>,
    #[arg(long)]
    param: Option<Parameterization>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    rounds_per_trial: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    no_validation: bool,
    #[arg(long)]
    no_correlation: bool,
}

/// Bad input: missing files, unparsable documents, invalid values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load<T>(path: &Path, parse: impl FnOnce(&str) -> nestfit::Result<T>) -> Result<T> {
    parse(&read(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_extra(path: Option<&Path>) -> Result<Vec<ExtraChannel>> {
    match path {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| config_err(format!("{}: {e}", p.display()))),
        None => Ok(Vec::new()),
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::BuildCircuit { code, distance, models, uniform, out } => {
            let models = match (models, uniform) {
                (Some(p), _) => load(&p, ModelSet::from_json)?,
                (None, Some(r)) => ModelSet::uniform(r).map_err(config_err)?,
                (None, None) => ModelSet::noiseless(),
            };
            let c = match code.as_str() {
                "repetition" => build_repetition_circuit(distance, &models.by_kind).map_err(config_err)?,
                "square" | "parity-square" => build_parity_square_circuit(&models.by_kind).map_err(config_err)?,
                other => return Err(config_err(format!("unknown code {other:?}; expected repetition or square"))),
            };
            let c = c.with_models(models).map_err(config_err)?;
            write(&out, &c.to_json())?;
        }
        Command::BuildNest { circuit, stabilizer, out, plot_data, plot_layers } => {
            let c = load(&circuit, Circuit::from_json)?;
            let nest = build_nest(&c, stabilizer)?;
            write(&out, &export_nest(&nest))?;
            if let Some(p) = plot_data {
                write(&p, &serde_json::to_string_pretty(&plot_cylinders(&nest, plot_layers))?)?;
            }
        }
        Command::Simulate { circuit, rounds, seed, extra, out } => {
            let c = load(&circuit, Circuit::from_json)?;
            let extra = load_extra(extra.as_deref())?;
            if rounds == 0 {
                return Err(config_err("rounds must be positive"));
            }
            write_record(&out, &simulate_with(&c, rounds, seed, &extra)?)?;
        }
        Command::Oracle { circuit, gate, pauli, offset, table, text } => {
            let c = load(&circuit, Circuit::from_json)?;
            if table {
                let rows = oracle_table(&c)?;
                if text {
                    print!("{}", format_oracle_table(&c, &rows));
                } else {
                    println!("{}", serde_json::to_string_pretty(&rows)?);
                }
            } else {
                let (gate, pauli) = (gate.expect("required by clap"), pauli.expect("required by clap"));
                let loc = ErrorLocation::new(&gate, &pauli, offset).map_err(config_err)?;
                let pattern = propagate_single(&c, &loc).map_err(config_err)?;
                println!("{}", serde_json::to_string_pretty(&json!({ "gate": gate, "pauli": pauli, "events": pattern }))?);
            }
        }
        Command::Extract { record, nest, out, policy } => {
            let nest = load(&nest, import_nest)?;
            let rec = read_record(&record).map_err(|e| config_err(format!("{}: {e}", record.display())))?;
            let policy = policy.policy();
            policy.validate().map_err(config_err)?;
            write(&out, &estimate_nest(&rec, &nest, &policy)?.to_json())?;
        }
        Command::Invert { estimates, nests, param, out, circuit_name, report } => {
            if estimates.len() != nests.len() {
                return Err(config_err(format!("{} --est files but {} --nest files", estimates.len(), nests.len())));
            }
            let ests = estimates.iter().map(|p| load(p, EstimatedNest::from_json)).collect::<Result<Vec<_>>>()?;
            let nests = nests.iter().map(|p| load(p, import_nest)).collect::<Result<Vec<Nest>>>()?;
            let pairs: Vec<(&Nest, &EstimatedNest)> = nests.iter().zip(&ests).collect();
            let system = build_system(&pairs, param).map_err(config_err)?;
            let fit = solve(&system, &SolveOptions::default())?;
            let name = circuit_name.unwrap_or_else(|| nests[0].circuit_name.clone());
            let models = fit.models_for(&name)?;
            write(&out, &models.to_json())?;
            let report = report.unwrap_or_else(|| out.with_extension("fit.json"));
            write(&report, &fit.to_json())?;
            eprintln!("chi2 {:.2} on {} dof; rank {}; invisible: {:?}", fit.chi2, fit.dof, fit.rank, fit.invisible);
        }
        Command::Validate { circuit, models, truth, extra, trials, rounds, seed, alpha, out } => {
            let c = load(&circuit, Circuit::from_json)?;
            let fitted = c.with_models(load(&models, ModelSet::from_json)?).map_err(config_err)?;
            let truth = c.with_models(load(&truth, ModelSet::from_json)?).map_err(config_err)?;
            let extra = load_extra(extra.as_deref())?;
            if trials == 0 || rounds == 0 || !(alpha > 0.0 && alpha < 1.0) {
                return Err(config_err("trials and rounds must be positive and alpha inside (0, 1)"));
            }
            let graph = MatchingGraph::new(&fitted).map_err(config_err)?;
            let predicted = logical_error_rate_with(&fitted, &[], &graph, trials, rounds, trial_seed(seed, 0))?;
            let observed = logical_error_rate_with(&truth, &extra, &graph, trials, rounds, trial_seed(seed, 1))?;
            let comparison = compare_predicted_vs_observed(&observed, &predicted, alpha)?;
            let doc = serde_json::to_string_pretty(&json!({
                "schema": "validation.v1",
                "circuit": c.name,
                "predicted": predicted,
                "observed": observed,
                "comparison": comparison,
            }))?;
            match out {
                Some(p) => write(&p, &doc)?,
                None => println!("{doc}"),
            }
        }
        Command::Correlate { record, circuit, window, out, policy } => {
            let c = load(&circuit, Circuit::from_json)?;
            let rec = read_record(&record).map_err(|e| config_err(format!("{}: {e}", record.display())))?;
            let report = cross_correlate(&rec, &c, window, &policy.policy()).map_err(config_err)?;
            write(&out, &report.to_json())?;
        }
        Command::Roundtrip(args) => return roundtrip(args),
    }
    Ok(0)
}

fn roundtrip(args: RoundtripArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(p) => load(p, PipelineConfig::from_json)?,
        None => {
            let seed = args.seed.ok_or_else(|| config_err("--seed is required without --config"))?;
            let out = args.out.clone().ok_or_else(|| config_err("--out is required without --config"))?;
            PipelineConfig::new(seed, out)
        }
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.out {
        config.output_dir = v;
    }
    if let Some(v) = args.rounds {
        config.rounds = v;
    }
    if let Some(v) = args.shards {
        config.shards = v;
    }
    if let Some(v) = args.param {
        config.parameterization = v;
    }
    if let Some(v) = args.trials {
        config.validation.trials = v;
    }
    if let Some(v) = args.rounds_per_trial {
        config.validation.rounds_per_trial = v;
    }
    if let Some(v) = args.alpha {
        config.validation.alpha = v;
    }
    if let Some(v) = args.window {
        config.correlation.window = v;
    }
    config.validation.enabled &= !args.no_validation;
    config.correlation.enabled &= !args.no_correlation;
    match run_pipeline(&config) {
        Ok(report) => {
            for r in report.rates.iter().chain(&report.combinations) {
                let est = r.estimate.map_or("unidentifiable".to_string(), |e| format!("{e:.5} ± {:.5}", r.sigma.unwrap_or(0.0)));
                println!("{:<24} injected {:.5}  recovered {est}", r.name, r.injected);
            }
            for v in &report.validation {
                println!(
                    "{:<24} logical rate observed {:.3e} predicted {:.3e}: {:?}",
                    v.circuit, v.observed.rate, v.predicted.rate, v.comparison.verdict
                );
            }
            println!("report written to {}", config.output_dir.join("report.json").display());
            Ok(if report.accepted() { 0 } else { EXIT_ACCEPTANCE })
        }
        Err(e @ PipelineError::Config(_)) => Err(config_err(e)),
        Err(e) => Err(anyhow!(e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| c.is::<ConfigError>());
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
