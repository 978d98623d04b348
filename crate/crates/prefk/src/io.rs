//! File formats shared with the command-line front end: JSONL datasets,
//! JSON run configs and reports, CSV run traces.
//!
//! Parsers report the 1-based line of the first offending record and treat
//! unknown keys as errors, so malformed files fail loudly rather than half
//! load. All of them accept any `BufRead`, which also makes them directly
//! drivable by the fuzz harnesses.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::divergence::{ConvexFn, DivergenceKind};
use crate::kernel::KernelSpec;
use crate::loss::{KernelChoice, ObjectiveConfig};
use crate::mixture::{EntropyRegConfig, HmkState, MixtureSpecs, MixtureState};
use crate::num::{ProbabilityDistribution, RandomSeed, RealMatrix, RealVector};
use crate::selection::{
    DivergenceName, DivergenceSelectionMetrics, EmbeddingTriplet, KernelName,
    KernelSelectionMetrics, PndForm, RuleFired, Thresholds,
};
use crate::train::{GeneratorSizes, TraceRow, TrainConfig};
use crate::{Error, Result};

/// A parse failure with its 1-based line number (0 for whole-file errors).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl From<ParseError> for Error {
    fn from(e: ParseError) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

/// One dataset line: embedding triplet plus optional log-probability and
/// distribution fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletFileRecord {
    pub x: Vec<f64>,
    pub y_pos: Vec<f64>,
    pub y_neg: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_pos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_neg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_dist: Option<Vec<f64>>,
}

/// A fully validated dataset: triplets plus the optional field groups,
/// which are either present for every record or absent for every record.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub triplets: Vec<EmbeddingTriplet>,
    pub logp_gaps: Option<Vec<f64>>,
    pub distributions: Option<Vec<(ProbabilityDistribution, ProbabilityDistribution)>>,
}

/// Parses a JSONL triplet dataset, enforcing a shared embedding dimension
/// and per-file consistency of the optional field groups.
pub fn parse_dataset(reader: impl BufRead) -> std::result::Result<Dataset, ParseError> {
    let mut triplets = Vec::new();
    let mut logp_gaps: Vec<f64> = Vec::new();
    let mut dists: Vec<(ProbabilityDistribution, ProbabilityDistribution)> = Vec::new();
    let mut has_logp: Option<bool> = None;
    let mut has_dists: Option<bool> = None;
    let mut dim: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let fail = |message: String| ParseError {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| fail(format!("read error: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletFileRecord =
            serde_json::from_str(&line).map_err(|e| fail(format!("invalid record: {e}")))?;

        let triplet = (|| -> Result<EmbeddingTriplet> {
            EmbeddingTriplet::new(
                RealVector::new(record.x.clone())?,
                RealVector::new(record.y_pos.clone())?,
                RealVector::new(record.y_neg.clone())?,
            )
        })()
        .map_err(|e| fail(e.to_string()))?;
        match dim {
            None => dim = Some(triplet.x.dim()),
            Some(d) if d != triplet.x.dim() => {
                return Err(fail(format!(
                    "embedding dimension {} differs from the file's {}",
                    triplet.x.dim(),
                    d
                )));
            }
            _ => {}
        }
        triplets.push(triplet);

        let logp_here = match (record.logp_pos, record.logp_neg) {
            (Some(p), Some(n)) => {
                if !(p.is_finite() && n.is_finite()) {
                    return Err(fail("log-probabilities must be finite".into()));
                }
                logp_gaps.push(p - n);
                true
            }
            (None, None) => false,
            _ => return Err(fail("logp_pos and logp_neg must appear together".into())),
        };
        match has_logp {
            None => has_logp = Some(logp_here),
            Some(expected) if expected != logp_here => {
                return Err(fail(
                    "log-probability fields must be present or absent consistently".into(),
                ));
            }
            _ => {}
        }

        let dists_here = match (&record.policy_dist, &record.ref_dist) {
            (Some(p), Some(q)) => {
                let p = ProbabilityDistribution::new(p.clone())
                    .map_err(|e| fail(format!("policy_dist: {e}")))?;
                let q = ProbabilityDistribution::new(q.clone())
                    .map_err(|e| fail(format!("ref_dist: {e}")))?;
                if p.dim() != q.dim() {
                    return Err(fail(format!(
                        "policy_dist has {} outcomes but ref_dist has {}",
                        p.dim(),
                        q.dim()
                    )));
                }
                dists.push((p, q));
                true
            }
            (None, None) => false,
            _ => return Err(fail("policy_dist and ref_dist must appear together".into())),
        };
        match has_dists {
            None => has_dists = Some(dists_here),
            Some(expected) if expected != dists_here => {
                return Err(fail(
                    "distribution fields must be present or absent consistently".into(),
                ));
            }
            _ => {}
        }
    }

    if triplets.is_empty() {
        return Err(ParseError {
            line: 0,
            message: "dataset has no records".into(),
        });
    }
    Ok(Dataset {
        triplets,
        logp_gaps: if has_logp == Some(true) {
            Some(logp_gaps)
        } else {
            None
        },
        distributions: if has_dists == Some(true) {
            Some(dists)
        } else {
            None
        },
    })
}

/// Named convex generators available to config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedConvexFn {
    TLnT,
    ChiSquared,
}

impl NamedConvexFn {
    pub fn build(&self) -> ConvexFn {
        match self {
            Self::TLnT => ConvexFn::t_ln_t(),
            Self::ChiSquared => ConvexFn::chi_squared(),
        }
    }
}

/// File-level divergence choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DivergenceConfig {
    Kl,
    JensenShannon,
    Hellinger,
    Renyi { alpha: f64 },
    Bhattacharyya,
    Wasserstein1d,
    FDiv { f: NamedConvexFn },
}

impl DivergenceConfig {
    pub fn build(&self) -> Result<DivergenceKind> {
        let kind = match self {
            Self::Kl => DivergenceKind::Kl,
            Self::JensenShannon => DivergenceKind::JensenShannon,
            Self::Hellinger => DivergenceKind::Hellinger,
            Self::Renyi { alpha } => DivergenceKind::Renyi { alpha: *alpha },
            Self::Bhattacharyya => DivergenceKind::Bhattacharyya,
            Self::Wasserstein1d => DivergenceKind::Wasserstein1d,
            Self::FDiv { f } => DivergenceKind::FDiv(f.build()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// File-level kernel choice. Mixture forms start from the given logits
/// (uniform when omitted) over the named family specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Identity,
    Single {
        spec: KernelSpec,
    },
    FlatMixture {
        #[serde(default)]
        theta: [f64; 4],
        specs: MixtureSpecs,
    },
    Hmk {
        #[serde(default)]
        theta: [f64; 4],
        #[serde(default)]
        psi: [f64; 2],
        specs: MixtureSpecs,
    },
}

impl KernelConfig {
    pub fn build(&self) -> Result<KernelChoice> {
        let choice = match self {
            Self::Identity => KernelChoice::Identity,
            Self::Single { spec } => KernelChoice::Single { spec: spec.clone() },
            Self::FlatMixture { theta, specs } => KernelChoice::FlatMixture {
                state: MixtureState::new(*theta)?,
                specs: specs.clone(),
            },
            Self::Hmk { theta, psi, specs } => KernelChoice::Hmk {
                state: HmkState::new(*theta, *psi)?,
                specs: specs.clone(),
            },
        };
        choice.validate()?;
        Ok(choice)
    }
}

fn default_alpha() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.5
}
fn default_eta() -> f64 {
    0.05
}
fn default_steps() -> usize {
    200
}
fn default_seed() -> u64 {
    0
}
fn default_entropy_weight() -> f64 {
    0.1
}
fn default_kernel() -> KernelConfig {
    KernelConfig::Single {
        spec: KernelSpec::Rbf { sigma: 1.0 },
    }
}
fn default_divergence() -> DivergenceConfig {
    DivergenceConfig::Kl
}

/// The run configuration file: objective and run hyperparameters with the
/// published defaults pre-filled, plus generator sizes and selection
/// thresholds. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelConfig,
    #[serde(default = "default_divergence")]
    pub divergence: DivergenceConfig,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_eta: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_entropy_weight")]
    pub entropy_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub generator: GeneratorSizes,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: default_gamma(),
            kernel: default_kernel(),
            divergence: default_divergence(),
            eta: default_eta(),
            weight_eta: None,
            steps: default_steps(),
            seed: default_seed(),
            entropy_weight: default_entropy_weight(),
            snapshot_every: None,
            generator: GeneratorSizes::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl RunConfigFile {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.build_objective()?;
        self.build_train_config()?;
        self.generator.validate()?;
        self.thresholds.validate()
    }

    pub fn build_objective(&self) -> Result<ObjectiveConfig> {
        ObjectiveConfig::new(
            self.alpha,
            self.beta,
            self.gamma,
            self.kernel.build()?,
            self.divergence.build()?,
        )
    }

    pub fn build_train_config(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::new(self.build_objective()?);
        config.eta = self.eta;
        config.weight_eta = self.weight_eta;
        config.steps = self.steps;
        config.seed = RandomSeed(self.seed);
        config.entropy = EntropyRegConfig::new(self.entropy_weight)?;
        config.snapshot_every = self.snapshot_every;
        config.validate()?;
        Ok(config)
    }
}

/// Columns of the run-trace CSV, in order.
pub const TRACE_HEADER: &str =
    "step,loss,prob_term,embed_term,regularizer,lambda_1,lambda_2,lambda_3,lambda_4,tau_1,tau_2,entropy,min_lambda";

/// Renders trace rows as CSV; mixture columns are empty for single-kernel
/// runs. Output is byte-deterministic for identical rows.
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for row in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let lambda = row
            .lambda
            .map(|l| l.map(|v| v.to_string()).join(","))
            .unwrap_or_else(|| ",,,".into());
        let tau = row
            .tau
            .map(|t| t.map(|v| v.to_string()).join(","))
            .unwrap_or_else(|| ",".into());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.step,
            row.loss.total,
            row.loss.prob_term,
            row.loss.embed_term,
            row.loss.regularizer,
            lambda,
            tau,
            opt(row.entropy),
            opt(row.min_lambda),
        ));
    }
    out
}

/// Kernel-metrics section of the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSelectionSection {
    pub metrics: KernelSelectionMetrics,
    pub recommended: KernelName,
    pub rule_fired: RuleFired,
}

/// Divergence-metrics section; `insufficient_data` carries the reason the
/// metrics could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DivergenceSelectionSection {
    Computed {
        metrics: DivergenceSelectionMetrics,
        recommended: DivergenceName,
        rule_fired: RuleFired,
    },
    Insufficient {
        insufficient_data: String,
    },
}

/// Output of the selection pipeline. The recommended names also appear at
/// the top level for one-line consumers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: usize,
    pub pnd_form: PndForm,
    pub recommended_kernel: KernelName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_divergence: Option<DivergenceName>,
    pub thresholds: Thresholds,
    pub kernel: KernelSelectionSection,
    pub divergence: DivergenceSelectionSection,
}

/// Output of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub collapsed: Option<bool>,
    pub dominant_index: Option<usize>,
    pub final_lambda: Option<[f64; 4]>,
    pub final_tau: Option<[f64; 2]>,
    pub steps_completed: usize,
    pub aborted: Option<String>,
}

/// Cluster-analysis input line: one labeled point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPointRecord {
    pub point: Vec<f64>,
    pub label: usize,
}

/// Parses the labeled-point JSONL format for cluster analysis.
pub fn parse_labeled_points(
    reader: impl BufRead,
) -> std::result::Result<(Vec<RealVector>, Vec<usize>), ParseError> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let fail = |message: String| ParseError {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| fail(format!("read error: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledPointRecord =
            serde_json::from_str(&line).map_err(|e| fail(format!("invalid record: {e}")))?;
        points.push(RealVector::new(record.point).map_err(|e| fail(e.to_string()))?);
        labels.push(record.label);
    }
    if points.is_empty() {
        return Err(ParseError {
            line: 0,
            message: "no labeled points".into(),
        });
    }
    Ok((points, labels))
}

/// Parses the layer-list JSON format (an array of row-major matrices) for
/// the spectral analysis.
pub fn parse_layer_matrices(text: &str) -> Result<Vec<RealMatrix>> {
    let raw: Vec<Vec<Vec<f64>>> = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("layer list: {e}")))?;
    if raw.is_empty() {
        return Err(Error::InvalidInput("layer list is empty".into()));
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, rows)| {
            RealMatrix::from_rows(rows)
                .map_err(|e| Error::InvalidInput(format!("layer {i}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossBreakdown;
    use std::io::Cursor;

    #[test]
    fn dataset_round_trip() {
        let lines = r#"{"x":[0.0,0.0],"y_pos":[1.0,0.0],"y_neg":[0.0,1.0]}
{"x":[1.0,1.0],"y_pos":[2.0,0.0],"y_neg":[0.0,2.0]}"#;
        let ds = parse_dataset(Cursor::new(lines)).unwrap();
        assert_eq!(ds.triplets.len(), 2);
        assert!(ds.logp_gaps.is_none());
        assert!(ds.distributions.is_none());
    }

    #[test]
    fn dataset_with_optional_fields() {
        let lines = r#"{"x":[0.0],"y_pos":[1.0],"y_neg":[2.0],"logp_pos":-0.5,"logp_neg":-1.5,"policy_dist":[0.5,0.5],"ref_dist":[0.25,0.75]}"#;
        let ds = parse_dataset(Cursor::new(lines)).unwrap();
        assert_eq!(ds.logp_gaps.as_deref(), Some(&[1.0][..]));
        assert_eq!(ds.distributions.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let bad_json = "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0]}\nnot json";
        let err = parse_dataset(Cursor::new(bad_json)).unwrap_err();
        assert_eq!(err.line, 2);

        let mixed_dims =
            "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0]}\n{\"x\":[0.0,1.0],\"y_pos\":[1.0,0.0],\"y_neg\":[2.0,0.0]}";
        let err = parse_dataset(Cursor::new(mixed_dims)).unwrap_err();
        assert_eq!(err.line, 2);

        let inconsistent = "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0],\"logp_pos\":-1.0,\"logp_neg\":-2.0}\n{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0]}";
        let err = parse_dataset(Cursor::new(inconsistent)).unwrap_err();
        assert_eq!(err.line, 2);

        let unknown = "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0],\"bogus\":1}";
        let err = parse_dataset(Cursor::new(unknown)).unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn config_defaults_round_trip() {
        let config = RunConfigFile::default();
        let json = config.to_json_pretty();
        let parsed = RunConfigFile::from_json(&json).unwrap();
        assert_eq!(config, parsed);
        // Defaults build a valid objective and train config.
        parsed.build_train_config().unwrap();
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_kernels() {
        assert!(RunConfigFile::from_json("{\"bogus\": 1}").is_err());
        let bad_kernel = r#"{"kernel": {"form": "single", "spec": {"type": "warp", "sigma": 1.0}}}"#;
        assert!(RunConfigFile::from_json(bad_kernel).is_err());
        let bad_sigma = r#"{"kernel": {"form": "single", "spec": {"type": "rbf", "sigma": -1.0}}}"#;
        assert!(RunConfigFile::from_json(bad_sigma).is_err());
    }

    #[test]
    fn empty_config_uses_defaults() {
        let parsed = RunConfigFile::from_json("{}").unwrap();
        assert_eq!(parsed, RunConfigFile::default());
    }

    #[test]
    fn trace_csv_shape() {
        let rows = vec![TraceRow {
            step: 0,
            loss: LossBreakdown {
                prob_term: 1.0,
                embed_term: 0.5,
                regularizer: 0.25,
                total: 1.125,
            },
            lambda: Some([0.25, 0.25, 0.25, 0.25]),
            tau: Some([0.5, 0.5]),
            entropy: Some(1.386),
            min_lambda: Some(0.25),
        }];
        let csv = trace_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        let data = lines.next().unwrap();
        assert_eq!(data.split(',').count(), 13);
        assert!(data.starts_with("0,1.125,1,0.5,0.25,"));
    }

    #[test]
    fn trace_csv_without_mixture_keeps_columns() {
        let rows = vec![TraceRow {
            step: 3,
            loss: LossBreakdown {
                prob_term: 1.0,
                embed_term: 0.0,
                regularizer: 0.0,
                total: 1.0,
            },
            lambda: None,
            tau: None,
            entropy: None,
            min_lambda: None,
        }];
        let csv = trace_to_csv(&rows);
        let data = csv.lines().nth(1).unwrap();
        assert_eq!(data.split(',').count(), 13);
    }

    #[test]
    fn parsers_never_panic_on_arbitrary_bytes() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        runner
            .run(
                &proptest::collection::vec(any::<u8>(), 0..512),
                |bytes| {
                    let _ = parse_dataset(Cursor::new(bytes.as_slice()));
                    let _ = parse_labeled_points(Cursor::new(bytes.as_slice()));
                    if let Ok(text) = std::str::from_utf8(&bytes) {
                        let _ = RunConfigFile::from_json(text);
                        let _ = parse_layer_matrices(text);
                    }
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn labeled_points_and_layers_parse() {
        let pts = "{\"point\":[0.0,1.0],\"label\":0}\n{\"point\":[4.0,1.0],\"label\":1}";
        let (points, labels) = parse_labeled_points(Cursor::new(pts)).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(labels, vec![0, 1]);

        let layers = parse_layer_matrices("[[[1.0,0.0],[0.0,1.0]]]").unwrap();
        assert_eq!(layers.len(), 1);
        assert!(parse_layer_matrices("[]").is_err());
        assert!(parse_layer_matrices("[[[1.0],[2.0,3.0]]]").is_err());
    }
}
