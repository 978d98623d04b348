//! Command-line front end: gradient certification, data-driven selection,
//! training runs, and the two analysis reports.
//!
//! Contract: machine-parseable JSON on stdout, diagnostics on stderr.
//! Exit codes: 0 success, 1 analysis/check failure, 2 input or config
//! error. The PREFK_SEED environment variable overrides the config seed;
//! an explicit --seed flag overrides both.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use prefk::analysis::{davies_bouldin, weighted_alpha, ClusterAssignment, TailRule};
use prefk::divergence::DivergenceKind;
use prefk::io::{
    parse_dataset, parse_labeled_points, parse_layer_matrices, trace_to_csv, Dataset,
    DivergenceSelectionSection, KernelSelectionSection, RunConfigFile, SelectionReport,
    TrainSummary,
};
use prefk::kernel::KernelSpec;
use prefk::loss::{certification_scenario, grad_check, KernelChoice, ObjectiveConfig};
use prefk::mixture::{collapse_detect, HmkState, MixtureSpecs};
use prefk::num::RandomSeed;
use prefk::selection::{
    divergence_metrics, kernel_metrics, select_divergence, select_kernel, PndForm, Thresholds,
};
use prefk::train::{gen_synthetic, train_run, GeneratorKind, SyntheticData, TrainConfig};

#[derive(Parser)]
#[command(name = "prefk", version, about = "Kernelized preference-optimization engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GeneratorArg {
    #[value(name = "separable_clusters")]
    SeparableClusters,
    #[value(name = "local_structure")]
    LocalStructure,
    #[value(name = "random")]
    Random,
}

impl From<GeneratorArg> for GeneratorKind {
    fn from(value: GeneratorArg) -> Self {
        match value {
            GeneratorArg::SeparableClusters => GeneratorKind::SeparableClusters,
            GeneratorArg::LocalStructure => GeneratorKind::LocalStructure,
            GeneratorArg::Random => GeneratorKind::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnalyzeKindArg {
    #[value(name = "clusters")]
    Clusters,
    #[value(name = "htsr")]
    Htsr,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PndFormArg {
    #[value(name = "ratio")]
    Ratio,
    #[value(name = "difference")]
    Difference,
}

#[derive(Subcommand)]
enum Command {
    /// Certify analytic gradients against finite differences over the full
    /// kernel-divergence grid.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random configurations per kernel-divergence pair.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute selection metrics for a JSONL dataset and recommend a
    /// kernel and divergence.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ratio")]
        pnd_form: PndFormArg,
    },
    /// Run the training loop and write trace, snapshots, and summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON bundle with an initial policy and records (alternative to
        /// --generator).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        generator: Option<GeneratorArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster-separation or heavy-tailed spectral analysis.
    Analyze {
        #[arg(value_enum)]
        subkind: AnalyzeKindArg,
        #[arg(long)]
        input: PathBuf,
    },
}

/// Failure carrying the process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: Option<&PathBuf>) -> CliResult<RunConfigFile> {
    match path {
        None => Ok(RunConfigFile::default()),
        Some(p) => {
            let text = read_file(p)?;
            RunConfigFile::from_json(&text).map_err(|e| CliError::input(e.to_string()))
        }
    }
}

/// --seed flag beats PREFK_SEED, which beats the config value.
fn resolve_seed(flag: Option<u64>, config_seed: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PREFK_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|_| CliError::input(format!("PREFK_SEED is not a u64: {text:?}"))),
        Err(_) => Ok(config_seed),
    }
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gradcheck {
            config,
            trials,
            seed,
        } => cmd_gradcheck(config.as_ref(), trials, seed),
        Command::Select {
            data,
            thresholds,
            pnd_form,
        } => cmd_select(&data, thresholds.as_ref(), pnd_form),
        Command::Train {
            config,
            data,
            generator,
            out,
            steps,
            seed,
        } => cmd_train(config.as_ref(), data.as_ref(), generator, &out, steps, seed),
        Command::Analyze { subkind, input } => cmd_analyze(subkind, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// The six kernel configurations of the certification grid.
fn gradcheck_kernels() -> Vec<(String, KernelChoice)> {
    let specs = MixtureSpecs::default_scalar();
    vec![
        ("identity".into(), KernelChoice::Identity),
        (
            "polynomial".into(),
            KernelChoice::Single {
                spec: KernelSpec::Polynomial { c: 1.0, degree: 2 },
            },
        ),
        (
            "rbf".into(),
            KernelChoice::Single {
                spec: KernelSpec::Rbf { sigma: 1.0 },
            },
        ),
        (
            "spectral".into(),
            KernelChoice::Single {
                spec: KernelSpec::Spectral {
                    lambdas: vec![1.0, 0.5],
                    basis: Default::default(),
                },
            },
        ),
        (
            "mahalanobis".into(),
            KernelChoice::Single {
                spec: KernelSpec::MahalanobisScalar {
                    mu: 0.1,
                    sigma: 1.2,
                    mu_prime: 0.2,
                    sigma_prime: 0.9,
                },
            },
        ),
        (
            "hmk".into(),
            KernelChoice::Hmk {
                state: HmkState::new([0.1, -0.1, 0.2, 0.0], [0.15, -0.05])
                    .expect("finite logits"),
                specs,
            },
        ),
    ]
}

fn gradcheck_divergences() -> Vec<(String, DivergenceKind)> {
    vec![
        ("kl".into(), DivergenceKind::Kl),
        ("jensen_shannon".into(), DivergenceKind::JensenShannon),
        ("hellinger".into(), DivergenceKind::Hellinger),
        ("renyi_2".into(), DivergenceKind::Renyi { alpha: 2.0 }),
        ("bhattacharyya".into(), DivergenceKind::Bhattacharyya),
        ("wasserstein_1d".into(), DivergenceKind::Wasserstein1d),
        (
            "f_div_chi_squared".into(),
            DivergenceKind::FDiv(prefk::divergence::ConvexFn::chi_squared()),
        ),
    ]
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn cmd_gradcheck(config: Option<&PathBuf>, trials: usize, seed: Option<u64>) -> CliResult<()> {
    let config = load_config(config)?;
    if trials == 0 {
        return Err(CliError::input("gradcheck needs at least one trial"));
    }
    let base_seed = resolve_seed(seed, config.seed)?;

    let mut pair_reports = Vec::new();
    let mut overall_worst: f64 = 0.0;
    let mut failures = 0usize;
    let mut scenario_seed = base_seed;
    for (kernel_name, kernel) in gradcheck_kernels() {
        for (div_name, div) in gradcheck_divergences() {
            let objective = ObjectiveConfig::new(
                config.alpha,
                config.beta,
                config.gamma,
                kernel.clone(),
                div.clone(),
            )
            .map_err(|e| CliError::input(e.to_string()))?;
            let mut worst: f64 = 0.0;
            let mut worst_abs = 0.0;
            for _ in 0..trials {
                scenario_seed = scenario_seed.wrapping_add(1);
                let scenario = certification_scenario(RandomSeed(scenario_seed), 4, 4, 3)
                    .map_err(|e| CliError::input(e.to_string()))?;
                let report = grad_check(
                    &objective,
                    &scenario.policy,
                    &scenario.records,
                    &scenario.ref_dists,
                )
                .map_err(|e| CliError::failure(format!("{kernel_name}/{div_name}: {e}")))?;
                if report.max_rel_err > worst {
                    worst = report.max_rel_err;
                    // Absolute gap at the worst coordinate, for judging
                    // whether a relative outlier is a real disagreement or
                    // finite-difference noise on a near-zero gradient.
                    worst_abs = report
                        .analytic
                        .iter()
                        .zip(&report.numeric)
                        .map(|(a, n)| (a - n).abs())
                        .fold(0.0, f64::max);
                }
            }
            if worst > GRADCHECK_TOLERANCE {
                failures += 1;
            }
            overall_worst = overall_worst.max(worst);
            pair_reports.push(json!({
                "kernel": kernel_name,
                "divergence": div_name,
                "trials": trials,
                "worst_rel_err": worst,
                "worst_abs_err": worst_abs,
                "pass": worst <= GRADCHECK_TOLERANCE,
            }));
        }
    }
    pair_reports.sort_by(|a, b| {
        let av = a["worst_rel_err"].as_f64().unwrap_or(0.0);
        let bv = b["worst_rel_err"].as_f64().unwrap_or(0.0);
        bv.partial_cmp(&av).unwrap_or(std::cmp::Ordering::Equal)
    });
    let pass = failures == 0;
    emit(&json!({
        "seed": base_seed,
        "tolerance": GRADCHECK_TOLERANCE,
        "trials_per_pair": trials,
        "pairs": pair_reports,
        "overall_worst_rel_err": overall_worst,
        "pass": pass,
    }));
    if pass {
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "{failures} kernel-divergence pairs exceeded the tolerance"
        )))
    }
}

fn cmd_select(
    data: &PathBuf,
    thresholds: Option<&PathBuf>,
    pnd_form: PndFormArg,
) -> CliResult<()> {
    let file = fs::File::open(data)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", data.display())))?;
    let dataset: Dataset =
        parse_dataset(BufReader::new(file)).map_err(|e| CliError::input(e.to_string()))?;
    let thresholds: Thresholds = match thresholds {
        None => Thresholds::default(),
        Some(p) => {
            let text = read_file(p)?;
            let th: Thresholds = serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("thresholds: {e}")))?;
            th.validate().map_err(|e| CliError::input(e.to_string()))?;
            th
        }
    };
    let pnd_form = match pnd_form {
        PndFormArg::Ratio => PndForm::Ratio,
        PndFormArg::Difference => PndForm::Difference,
    };

    let kmetrics = kernel_metrics(&dataset.triplets, pnd_form)
        .map_err(|e| CliError::input(e.to_string()))?;
    let (kernel_name, kernel_rule) = select_kernel(&kmetrics, &thresholds);
    let kernel_section = KernelSelectionSection {
        metrics: kmetrics,
        recommended: kernel_name,
        rule_fired: kernel_rule,
    };

    let divergence_section = match (&dataset.distributions, &dataset.logp_gaps) {
        (Some(dists), Some(gaps)) => {
            let policy: Vec<_> = dists.iter().map(|(p, _)| p.clone()).collect();
            let reference: Vec<_> = dists.iter().map(|(_, q)| q.clone()).collect();
            match divergence_metrics(&dataset.triplets, &policy, &reference, &[], gaps, &thresholds)
            {
                Ok(metrics) => {
                    let (name, rule) = select_divergence(&metrics, &thresholds);
                    DivergenceSelectionSection::Computed {
                        metrics,
                        recommended: name,
                        rule_fired: rule,
                    }
                }
                // Degenerate statistics degrade the section, not the run.
                Err(e @ prefk::Error::KurtosisUndefined) => {
                    DivergenceSelectionSection::Insufficient {
                        insufficient_data: e.to_string(),
                    }
                }
                Err(e) => return Err(CliError::input(e.to_string())),
            }
        }
        (None, _) => DivergenceSelectionSection::Insufficient {
            insufficient_data: "policy_dist/ref_dist fields absent".into(),
        },
        (_, None) => DivergenceSelectionSection::Insufficient {
            insufficient_data: "logp_pos/logp_neg fields absent (kurtosis samples unavailable)"
                .into(),
        },
    };

    let recommended_divergence = match &divergence_section {
        DivergenceSelectionSection::Computed { recommended, .. } => Some(*recommended),
        DivergenceSelectionSection::Insufficient { .. } => None,
    };
    let report = SelectionReport {
        records: dataset.triplets.len(),
        pnd_form,
        recommended_kernel: kernel_section.recommended,
        recommended_divergence,
        thresholds,
        kernel: kernel_section,
        divergence: divergence_section,
    };
    emit(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn cmd_train(
    config: Option<&PathBuf>,
    data: Option<&PathBuf>,
    generator: Option<GeneratorArg>,
    out: &Path,
    steps: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let file_config = load_config(config)?;
    let seed = resolve_seed(seed, file_config.seed)?;
    let mut train_config: TrainConfig = file_config
        .build_train_config()
        .map_err(|e| CliError::input(e.to_string()))?;
    train_config.seed = RandomSeed(seed);
    if let Some(s) = steps {
        train_config.steps = s;
    }

    let data: SyntheticData = match (data, generator) {
        (Some(_), Some(_)) => {
            return Err(CliError::input("--data and --generator are mutually exclusive"));
        }
        (Some(path), None) => {
            let text = read_file(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("data bundle: {e}")))?
        }
        (None, Some(kind)) => gen_synthetic(kind.into(), &file_config.generator, RandomSeed(seed))
            .map_err(|e| CliError::input(e.to_string()))?,
        (None, None) => {
            return Err(CliError::input("pass --data <bundle.json> or --generator <kind>"));
        }
    };

    fs::create_dir_all(out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", out.display())))?;

    let outcome = train_run(&train_config, &data).map_err(|e| CliError::input(e.to_string()))?;
    let trace = &outcome.trace;

    fs::write(out.join("trace.csv"), trace_to_csv(&trace.rows))
        .map_err(|e| CliError::input(format!("cannot write trace: {e}")))?;
    let snapshots = serde_json::to_string_pretty(&trace.snapshots).expect("snapshots serialize");
    fs::write(out.join("snapshots.json"), snapshots)
        .map_err(|e| CliError::input(format!("cannot write snapshots: {e}")))?;

    let lambda_trace = trace.lambda_trace();
    let collapse = if lambda_trace.is_empty() {
        None
    } else {
        Some(collapse_detect(&lambda_trace, 0.05).map_err(|e| CliError::input(e.to_string()))?)
    };

    let (final_lambda, final_tau) = match &trace.final_kernel {
        KernelChoice::FlatMixture { state, .. } => (Some(*state.lambda()), None),
        KernelChoice::Hmk { state, .. } => (Some(*state.lambda()), Some(*state.tau())),
        _ => (None, None),
    };
    let summary = TrainSummary {
        initial_loss: trace.rows.first().map(|r| r.loss.total).unwrap_or(f64::NAN),
        final_loss: trace.rows.last().map(|r| r.loss.total).unwrap_or(f64::NAN),
        collapsed: collapse.as_ref().map(|c| c.collapsed),
        dominant_index: collapse.as_ref().and_then(|c| c.dominant_index),
        final_lambda,
        final_tau,
        steps_completed: trace.rows.len().saturating_sub(1),
        aborted: outcome.failure.as_ref().map(|e| e.to_string()),
    };
    let summary_json = serde_json::to_value(&summary).expect("summary serializes");
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary_json).expect("summary serializes"),
    )
    .map_err(|e| CliError::input(format!("cannot write summary: {e}")))?;
    if let Some(report) = &collapse {
        fs::write(
            out.join("collapse.json"),
            serde_json::to_string_pretty(report).expect("collapse report serializes"),
        )
        .map_err(|e| CliError::input(format!("cannot write collapse report: {e}")))?;
    }
    emit(&summary_json);

    match outcome.failure {
        None => Ok(()),
        Some(e) => Err(CliError::failure(format!(
            "run aborted after {} steps: {e}",
            trace.rows.len().saturating_sub(1)
        ))),
    }
}

fn cmd_analyze(subkind: AnalyzeKindArg, input: &PathBuf) -> CliResult<()> {
    match subkind {
        AnalyzeKindArg::Clusters => {
            let file = fs::File::open(input)
                .map_err(|e| CliError::input(format!("cannot open {}: {e}", input.display())))?;
            let (points, labels) = parse_labeled_points(BufReader::new(file))
                .map_err(|e| CliError::input(e.to_string()))?;
            let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
            let assignment = ClusterAssignment::new(points, labels, k)
                .map_err(|e| CliError::input(e.to_string()))?;
            let dbs = davies_bouldin(&assignment).map_err(|e| match e {
                prefk::Error::DegenerateClusters => CliError::failure(e.to_string()),
                other => CliError::input(other.to_string()),
            })?;
            emit(&json!({ "dbs": dbs, "clusters": k }));
            Ok(())
        }
        AnalyzeKindArg::Htsr => {
            let text = read_file(input)?;
            let layers =
                parse_layer_matrices(&text).map_err(|e| CliError::input(e.to_string()))?;
            let report = weighted_alpha(&layers, &TailRule::default())
                .map_err(|e| CliError::input(e.to_string()))?;
            emit(&serde_json::to_value(&report).expect("report serializes"));
            Ok(())
        }
    }
}
