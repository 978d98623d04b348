//! Synthetic preference-data generators and the seeded full-batch
//! gradient-ascent loop.
//!
//! A run owns its policy; the reference policy is frozen at entry and the
//! divergence regularizer is computed against it throughout. When the
//! objective kernel is a mixture, the mixture logits are stepped alongside
//! the policy using the weight-space gradients of the same objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{
    analytic_grad, full_objective_for_policy, mixture_weight_grads, KernelChoice, LossBreakdown,
    ObjectiveConfig,
};
use crate::mixture::{entropy_reg, EntropyRegConfig};
use crate::num::{ProbabilityDistribution, RandomSeed, RealMatrix};
use crate::policy::{PreferenceRecord, ToyPolicy};
use crate::{Error, Result};

/// Which synthetic task to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Chosen/rejected outcome embeddings in two well-separated Gaussian
    /// blobs; contexts aligned with the separating axis.
    SeparableClusters,
    /// Tight per-context neighborhoods with moderate, bounded dot products.
    LocalStructure,
    /// Everything i.i.d. standard normal.
    Random,
}

/// Shape of a generated task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSizes {
    pub contexts: usize,
    pub outcomes: usize,
    pub embed_dim: usize,
    pub records: usize,
}

impl Default for GeneratorSizes {
    fn default() -> Self {
        Self {
            contexts: 4,
            outcomes: 6,
            embed_dim: 4,
            records: 32,
        }
    }
}

impl GeneratorSizes {
    pub fn validate(&self) -> Result<()> {
        if self.contexts == 0 || self.outcomes < 2 || self.embed_dim == 0 || self.records == 0 {
            return Err(Error::InvalidInput(
                "generator sizes must be positive (and outcomes >= 2)".into(),
            ));
        }
        Ok(())
    }
}

/// A generated task: initial policy, preference records, and the
/// chosen/rejected outcome split used by cluster diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub policy: ToyPolicy,
    pub records: Vec<PreferenceRecord>,
    pub chosen_outcomes: Vec<usize>,
    pub rejected_outcomes: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic synthetic task for a generator kind, sizes, and seed.
pub fn gen_synthetic(
    kind: GeneratorKind,
    sizes: &GeneratorSizes,
    seed: RandomSeed,
) -> Result<SyntheticData> {
    sizes.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let (x, c, m, n) = (
        sizes.contexts,
        sizes.outcomes,
        sizes.embed_dim,
        sizes.records,
    );
    let split = c / 2;
    let chosen: Vec<usize> = (0..split).collect();
    let rejected: Vec<usize> = (split..c).collect();

    match kind {
        GeneratorKind::SeparableClusters => {
            // Blob radius sigma and a centroid gap of at least 8 sigma,
            // widened with dimension so the initial separation score stays
            // comfortably small. Both blobs sit on the positive side of the
            // context direction, which keeps every context-outcome dot
            // product positive and bounded away from the ratio-form poles.
            let sigma_blob = 0.5;
            let gap = sigma_blob * (8.0_f64).max(5.0 * (m as f64).sqrt());
            let near = gap / 2.0;
            let far = near + gap;
            let mut v = Vec::with_capacity(c * m);
            for y in 0..c {
                let center = if y < split { near } else { far };
                for k in 0..m {
                    let mean = if k == 0 { center } else { 0.0 };
                    v.push(mean + sigma_blob * gaussian(&mut rng));
                }
            }
            // Contexts aligned with the separating axis.
            let mut u = Vec::with_capacity(x * m);
            for _ in 0..x {
                for k in 0..m {
                    let mean = if k == 0 { 1.0 } else { 0.0 };
                    u.push(mean + 0.15 * gaussian(&mut rng));
                }
            }
            let records = (0..n)
                .map(|_| {
                    let ctx = rng.gen_range(0..x);
                    let pos = chosen[rng.gen_range(0..chosen.len())];
                    let neg = rejected[rng.gen_range(0..rejected.len())];
                    PreferenceRecord::new(ctx, pos, neg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticData {
                policy: ToyPolicy::new(
                    RealMatrix::zeros(x, c)?,
                    RealMatrix::new(x, m, u)?,
                    RealMatrix::new(c, m, v)?,
                )?,
                records,
                chosen_outcomes: chosen,
                rejected_outcomes: rejected,
            })
        }
        GeneratorKind::LocalStructure => {
            // One anchor per context with a shared positive component, so
            // every cross dot product stays bounded away from zero; each
            // outcome sits in a tight neighborhood of one anchor.
            let mut anchors = vec![vec![0.0; m]; x];
            for anchor in anchors.iter_mut() {
                for (k, slot) in anchor.iter_mut().enumerate() {
                    let mean = if k == 0 { 1.0 } else { 0.0 };
                    *slot = mean + 0.25 * gaussian(&mut rng);
                }
            }
            let mut u = Vec::with_capacity(x * m);
            for anchor in &anchors {
                u.extend_from_slice(anchor);
            }
            let mut v = Vec::with_capacity(c * m);
            for y in 0..c {
                let home = &anchors[y % x];
                for item in home.iter().take(m) {
                    v.push(0.9 * item + 0.05 * gaussian(&mut rng));
                }
            }
            let records = (0..n)
                .map(|_| {
                    let ctx = rng.gen_range(0..x);
                    // Prefer an outcome from this context's neighborhood.
                    let home: Vec<usize> = (0..c).filter(|y| y % x == ctx).collect();
                    let away: Vec<usize> = (0..c).filter(|y| y % x != ctx).collect();
                    let (pos, neg) = if !home.is_empty() && !away.is_empty() {
                        (
                            home[rng.gen_range(0..home.len())],
                            away[rng.gen_range(0..away.len())],
                        )
                    } else {
                        let pos = rng.gen_range(0..c);
                        let mut neg = rng.gen_range(0..c);
                        while neg == pos {
                            neg = rng.gen_range(0..c);
                        }
                        (pos, neg)
                    };
                    PreferenceRecord::new(ctx, pos, neg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticData {
                policy: ToyPolicy::new(
                    RealMatrix::zeros(x, c)?,
                    RealMatrix::new(x, m, u)?,
                    RealMatrix::new(c, m, v)?,
                )?,
                records,
                chosen_outcomes: chosen,
                rejected_outcomes: rejected,
            })
        }
        GeneratorKind::Random => {
            let logits: Vec<f64> = (0..x * c).map(|_| gaussian(&mut rng)).collect();
            let u: Vec<f64> = (0..x * m).map(|_| gaussian(&mut rng)).collect();
            let v: Vec<f64> = (0..c * m).map(|_| gaussian(&mut rng)).collect();
            let records = (0..n)
                .map(|_| {
                    let ctx = rng.gen_range(0..x);
                    let pos = rng.gen_range(0..c);
                    let mut neg = rng.gen_range(0..c);
                    while neg == pos {
                        neg = rng.gen_range(0..c);
                    }
                    PreferenceRecord::new(ctx, pos, neg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticData {
                policy: ToyPolicy::new(
                    RealMatrix::new(x, c, logits)?,
                    RealMatrix::new(x, m, u)?,
                    RealMatrix::new(c, m, v)?,
                )?,
                records,
                chosen_outcomes: chosen,
                rejected_outcomes: rejected,
            })
        }
    }
}

/// Run parameters around an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Policy step size.
    pub eta: f64,
    /// Mixture-weight step size; defaults to `eta`.
    pub weight_eta: Option<f64>,
    pub steps: usize,
    pub seed: RandomSeed,
    pub objective: ObjectiveConfig,
    pub entropy: EntropyRegConfig,
    /// Snapshot the policy every this many steps (step 0 included).
    pub snapshot_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveConfig) -> Self {
        Self {
            eta: 0.05,
            weight_eta: None,
            steps: 200,
            seed: RandomSeed(0),
            objective,
            entropy: EntropyRegConfig::default(),
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if let Some(w) = self.weight_eta {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "weight step size must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }

    fn weight_eta(&self) -> f64 {
        self.weight_eta.unwrap_or(self.eta)
    }
}

/// One trace row: objective breakdown plus mixture diagnostics when a
/// mixture kernel is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lambda: Option<[f64; 4]>,
    pub tau: Option<[f64; 2]>,
    pub entropy: Option<f64>,
    pub min_lambda: Option<f64>,
}

/// Policy parameters captured at a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub step: usize,
    pub policy: ToyPolicy,
}

/// Full record of a run: one row per step (including step 0), optional
/// snapshots, and the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<PolicySnapshot>,
    pub final_policy: ToyPolicy,
    pub final_kernel: KernelChoice,
    /// The frozen reference distributionally regularized against.
    pub reference: ToyPolicy,
}

impl TrainTrace {
    /// The λ trajectory, when a mixture kernel was active.
    pub fn lambda_trace(&self) -> Vec<[f64; 4]> {
        self.rows.iter().filter_map(|r| r.lambda).collect()
    }
}

/// A run outcome: the trace, plus the error that aborted the run early (the
/// trace then holds every row completed before the failure).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub failure: Option<Error>,
}

#[derive(Default)]
struct MixtureDiagnostics {
    lambda: Option<[f64; 4]>,
    tau: Option<[f64; 2]>,
    entropy: Option<f64>,
    min_lambda: Option<f64>,
}

fn kernel_diagnostics(kernel: &KernelChoice) -> MixtureDiagnostics {
    let (lambda, tau) = match kernel {
        KernelChoice::FlatMixture { state, .. } => (*state.lambda(), None),
        KernelChoice::Hmk { state, .. } => (*state.lambda(), Some(*state.tau())),
        _ => return MixtureDiagnostics::default(),
    };
    MixtureDiagnostics {
        lambda: Some(lambda),
        tau,
        entropy: entropy_reg(&lambda).map(|(v, _)| v).ok(),
        min_lambda: Some(lambda.iter().cloned().fold(f64::INFINITY, f64::min)),
    }
}

/// Full-batch gradient ascent on the objective, with simultaneous mixture
/// weight updates when the kernel is a mixture.
///
/// Numerical failures abort the run and are reported in the outcome next
/// to the partial trace.
pub fn train_run(
    config: &TrainConfig,
    data: &SyntheticData,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.records.is_empty() {
        return Err(Error::InvalidInput("training needs at least one record".into()));
    }

    let reference = data.policy.clone();
    let ref_dists: Vec<ProbabilityDistribution> = data
        .records
        .iter()
        .map(|r| reference.distribution(r.x))
        .collect::<Result<Vec<_>>>()?;

    let mut policy = data.policy.clone();
    let mut objective = config.objective.clone();
    let mut rows = Vec::with_capacity(config.steps + 1);
    let mut snapshots = Vec::new();

    let record_state =
        |step: usize, policy: &ToyPolicy, objective: &ObjectiveConfig, rows: &mut Vec<TraceRow>, snapshots: &mut Vec<PolicySnapshot>| -> Result<()> {
            let loss = full_objective_for_policy(objective, policy, &data.records, &ref_dists)?;
            let diag = kernel_diagnostics(&objective.kernel);
            rows.push(TraceRow {
                step,
                loss,
                lambda: diag.lambda,
                tau: diag.tau,
                entropy: diag.entropy,
                min_lambda: diag.min_lambda,
            });
            if let Some(every) = config.snapshot_every {
                if every > 0 && step.is_multiple_of(every) {
                    snapshots.push(PolicySnapshot {
                        step,
                        policy: policy.clone(),
                    });
                }
            }
            Ok(())
        };

    let finish = |rows: Vec<TraceRow>,
                  snapshots: Vec<PolicySnapshot>,
                  policy: ToyPolicy,
                  objective: &ObjectiveConfig,
                  failure: Option<Error>| TrainOutcome {
        trace: TrainTrace {
            rows,
            snapshots,
            final_policy: policy,
            final_kernel: objective.kernel.clone(),
            reference: reference.clone(),
        },
        failure,
    };

    if let Err(e) = record_state(0, &policy, &objective, &mut rows, &mut snapshots) {
        return Ok(finish(rows, snapshots, policy, &objective, Some(e)));
    }

    for step in 1..=config.steps {
        // Mixture weight step from the pre-update signals.
        if objective.kernel.is_mixture() {
            let signals = match data
                .records
                .iter()
                .map(|r| policy.forward(r))
                .collect::<Result<Vec<_>>>()
            {
                Ok(s) => s,
                Err(e) => return Ok(finish(rows, snapshots, policy, &objective, Some(e))),
            };
            let step_result = (|| -> Result<ObjectiveConfig> {
                let (lambda_grad, tau_grad) = mixture_weight_grads(&objective, &signals)?;
                // The optimizer descends on the negated objective.
                let task_lambda: [f64; 4] = std::array::from_fn(|i| -lambda_grad[i]);
                let mut next = objective.clone();
                match &objective.kernel {
                    KernelChoice::FlatMixture { state, .. } => {
                        let new_state =
                            state.step(&task_lambda, &config.entropy, config.weight_eta())?;
                        next.kernel = objective.kernel.with_states(Some(new_state), None);
                    }
                    KernelChoice::Hmk { state, .. } => {
                        let tau_grad = tau_grad.expect("hmk has tau gradients");
                        let task_tau: [f64; 2] = std::array::from_fn(|i| -tau_grad[i]);
                        let new_state = state.step(
                            &task_lambda,
                            &task_tau,
                            &config.entropy,
                            config.weight_eta(),
                        )?;
                        next.kernel = objective.kernel.with_states(None, Some(new_state));
                    }
                    _ => unreachable!(),
                }
                Ok(next)
            })();
            match step_result {
                Ok(next) => objective = next,
                Err(e) => return Ok(finish(rows, snapshots, policy, &objective, Some(e))),
            }
        }

        // Policy ascent step.
        let grad = match analytic_grad(&objective, &policy, &data.records, &ref_dists) {
            Ok(g) => g,
            Err(e) => return Ok(finish(rows, snapshots, policy, &objective, Some(e))),
        };
        let mut flat = policy.to_flat();
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p += config.eta * g;
        }
        policy = match policy.with_flat(&flat) {
            Ok(p) => p,
            Err(e) => return Ok(finish(rows, snapshots, policy, &objective, Some(e))),
        };

        if let Err(e) = record_state(step, &policy, &objective, &mut rows, &mut snapshots) {
            return Ok(finish(rows, snapshots, policy, &objective, Some(e)));
        }
    }

    Ok(finish(rows, snapshots, policy, &objective, None))
}
