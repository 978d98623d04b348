//! Hybrid and kernelized losses, the full regularized objective, analytic
//! gradients, and the finite-difference oracle that certifies them.
//!
//! Sign convention: the objective is **maximized**. A breakdown always
//! satisfies `total = prob_term + gamma * embed_term - alpha * beta * regularizer`.

mod grad;

pub use grad::analytic_grad;

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_regularizer, DivergenceKind};
use crate::kernel::{embed_ratio, scalar_kernel, scalar_kernel_embed, KernelSpec};
use crate::mixture::{mix_flat, mix_hmk, HmkState, MixtureSpecs, MixtureState};
use crate::num::ProbabilityDistribution;
use crate::policy::{PreferenceRecord, ToyPolicy};
use crate::{Error, Result};

/// Per-triplet raw signals: log-probabilities of the preferred/rejected
/// outcomes and the embedding dot products against the context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletSignals {
    pub logp_pos: f64,
    pub logp_neg: f64,
    pub dot_pos: f64,
    pub dot_neg: f64,
}

impl TripletSignals {
    pub fn new(logp_pos: f64, logp_neg: f64, dot_pos: f64, dot_neg: f64) -> Result<Self> {
        for (name, v) in [
            ("logp_pos", logp_pos),
            ("logp_neg", logp_neg),
            ("dot_pos", dot_pos),
            ("dot_neg", dot_neg),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} is not finite: {v}")));
            }
        }
        Ok(Self {
            logp_pos,
            logp_neg,
            dot_pos,
            dot_neg,
        })
    }

    /// Log-probability gap z = ln π(y⁺|x) − ln π(y⁻|x).
    pub fn z(&self) -> f64 {
        self.logp_pos - self.logp_neg
    }

    /// Dot-product ratio r = dot_pos / dot_neg; fails when dot_neg is zero.
    pub fn ratio(&self) -> Result<f64> {
        embed_ratio(self.dot_pos, self.dot_neg)
    }
}

/// The kernel configuration of an objective: the identity (plain
/// contrastive) form, a single family, or a learned mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KernelChoice {
    /// No kernel transform; the hybrid loss itself.
    Identity,
    Single {
        spec: KernelSpec,
    },
    FlatMixture {
        state: MixtureState,
        specs: MixtureSpecs,
    },
    Hmk {
        state: HmkState,
        specs: MixtureSpecs,
    },
}

impl KernelChoice {
    pub fn name(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Single { spec } => spec.name().into(),
            Self::FlatMixture { .. } => "flat_mixture".into(),
            Self::Hmk { .. } => "hmk".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::Single { spec } => spec.validate(),
            Self::FlatMixture { specs, .. } | Self::Hmk { specs, .. } => specs.validate(),
        }
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, Self::FlatMixture { .. } | Self::Hmk { .. })
    }

    /// Replaces the mixture weights, leaving the family specs untouched.
    pub(crate) fn with_states(
        &self,
        flat: Option<MixtureState>,
        hmk: Option<HmkState>,
    ) -> Self {
        match self {
            Self::FlatMixture { specs, state } => Self::FlatMixture {
                state: flat.unwrap_or_else(|| state.clone()),
                specs: specs.clone(),
            },
            Self::Hmk { specs, state } => Self::Hmk {
                state: hmk.unwrap_or_else(|| state.clone()),
                specs: specs.clone(),
            },
            other => other.clone(),
        }
    }
}

/// Hyperparameters of the full objective.
///
/// Recommended ranges: alpha in [0.1, 1], beta in [0.5, 2], gamma in
/// [0.1, 1]; the constructor accepts any finite nonnegative override.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel: KernelChoice,
    pub divergence: DivergenceKind,
}

impl ObjectiveConfig {
    pub fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        kernel: KernelChoice,
        divergence: DivergenceKind,
    ) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        kernel.validate()?;
        divergence.validate()?;
        Ok(Self {
            alpha,
            beta,
            gamma,
            kernel,
            divergence,
        })
    }

    /// Paper-default strengths (alpha 0.5, beta 1.0, gamma 0.5) around the
    /// given kernel and divergence.
    pub fn with_defaults(kernel: KernelChoice, divergence: DivergenceKind) -> Result<Self> {
        Self::new(0.5, 1.0, 0.5, kernel, divergence)
    }
}

/// Value decomposition of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prob_term: f64,
    pub embed_term: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// Side-by-side analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

/// Plain hybrid loss z + γ·ln(dot_pos/dot_neg).
///
/// With γ = 0 this is the standard contrastive log-ratio and the embedding
/// signals are not touched.
pub fn hybrid_loss(signals: &TripletSignals, gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(signals.z());
    }
    let r = signals.ratio()?;
    if r <= 0.0 {
        return Err(Error::DegenerateRatio(format!(
            "embedding log needs a positive ratio, got {r}"
        )));
    }
    Ok(signals.z() + gamma * r.ln())
}

/// Probability-side kernel value κ(z) for a kernel choice.
pub(crate) fn prob_term(kernel: &KernelChoice, z: f64) -> Result<f64> {
    match kernel {
        KernelChoice::Identity => Ok(z),
        KernelChoice::Single { spec } => scalar_kernel(spec, z),
        KernelChoice::FlatMixture { state, specs } => {
            let vals = four_values(&specs.flat_order(), |s| scalar_kernel(s, z))?;
            Ok(mix_flat(state.lambda(), &vals))
        }
        KernelChoice::Hmk { state, specs } => {
            let vals = four_values(&specs.hmk_order(), |s| scalar_kernel(s, z))?;
            Ok(mix_hmk(state.lambda(), state.tau(), &vals))
        }
    }
}

/// Embedding-side kernel value for a kernel choice.
pub(crate) fn embed_term(kernel: &KernelChoice, signals: &TripletSignals) -> Result<f64> {
    match kernel {
        KernelChoice::Identity => {
            let r = signals.ratio()?;
            if r <= 0.0 {
                return Err(Error::DegenerateRatio(format!(
                    "embedding log needs a positive ratio, got {r}"
                )));
            }
            Ok(r.ln())
        }
        KernelChoice::Single { spec } => {
            scalar_kernel_embed(spec, signals.dot_pos, signals.dot_neg)
        }
        KernelChoice::FlatMixture { state, specs } => {
            let vals = four_values(&specs.flat_order(), |s| {
                scalar_kernel_embed(s, signals.dot_pos, signals.dot_neg)
            })?;
            Ok(mix_flat(state.lambda(), &vals))
        }
        KernelChoice::Hmk { state, specs } => {
            let vals = four_values(&specs.hmk_order(), |s| {
                scalar_kernel_embed(s, signals.dot_pos, signals.dot_neg)
            })?;
            Ok(mix_hmk(state.lambda(), state.tau(), &vals))
        }
    }
}

pub(crate) fn four_values<'a>(
    specs: &[&'a KernelSpec; 4],
    mut eval: impl FnMut(&'a KernelSpec) -> Result<f64>,
) -> Result<[f64; 4]> {
    Ok([
        eval(specs[0])?,
        eval(specs[1])?,
        eval(specs[2])?,
        eval(specs[3])?,
    ])
}

/// Kernelized hybrid loss κ(z) + γ·κ_embed for one triplet.
///
/// With γ = 0 the embedding side is skipped entirely, so the identity
/// kernel reduces exactly to z for any signals.
pub fn kernelized_hybrid_loss(
    kernel: &KernelChoice,
    signals: &TripletSignals,
    gamma: f64,
) -> Result<f64> {
    let p = prob_term(kernel, signals.z())?;
    if gamma == 0.0 {
        return Ok(p);
    }
    Ok(p + gamma * embed_term(kernel, signals)?)
}

/// Full objective over a batch: mean kernelized hybrid loss minus
/// alpha·beta times the mean divergence to the reference.
///
/// `policy_dists[i]` and `ref_dists[i]` are the distributions for the
/// context of triplet i. When alpha·beta = 0 the regularizer is disabled
/// and reported as zero; likewise the embedding term when gamma = 0.
pub fn full_objective(
    config: &ObjectiveConfig,
    signals: &[TripletSignals],
    policy_dists: &[ProbabilityDistribution],
    ref_dists: &[ProbabilityDistribution],
) -> Result<LossBreakdown> {
    if signals.is_empty() {
        return Err(Error::InvalidInput("objective needs a non-empty batch".into()));
    }
    let reg_active = config.alpha * config.beta != 0.0;
    if reg_active && (policy_dists.len() != signals.len() || ref_dists.len() != signals.len()) {
        return Err(Error::InvalidInput(format!(
            "distribution pairs ({}, {}) not aligned with {} triplets",
            policy_dists.len(),
            ref_dists.len(),
            signals.len()
        )));
    }

    let n = signals.len() as f64;
    let mut prob_sum = 0.0;
    let mut embed_sum = 0.0;
    for s in signals {
        prob_sum += prob_term(&config.kernel, s.z())?;
        if config.gamma != 0.0 {
            embed_sum += embed_term(&config.kernel, s)?;
        }
    }
    let prob_mean = prob_sum / n;
    let embed_mean = embed_sum / n;

    let regularizer = if reg_active {
        let pairs: Vec<_> = policy_dists
            .iter()
            .cloned()
            .zip(ref_dists.iter().cloned())
            .collect();
        divergence_regularizer(&config.divergence, &pairs)?
    } else {
        0.0
    };

    let total = prob_mean + config.gamma * embed_mean - config.alpha * config.beta * regularizer;
    if !total.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "objective is not finite: {total}"
        )));
    }
    Ok(LossBreakdown {
        prob_term: prob_mean,
        embed_term: embed_mean,
        regularizer,
        total,
    })
}

/// Evaluates the objective directly from a policy and preference records.
/// `ref_dists[i]` is the reference distribution for the context of record i.
pub fn full_objective_for_policy(
    config: &ObjectiveConfig,
    policy: &ToyPolicy,
    records: &[PreferenceRecord],
    ref_dists: &[ProbabilityDistribution],
) -> Result<LossBreakdown> {
    let signals = records
        .iter()
        .map(|r| policy.forward(r))
        .collect::<Result<Vec<_>>>()?;
    let policy_dists = records
        .iter()
        .map(|r| policy.distribution(r.x))
        .collect::<Result<Vec<_>>>()?;
    full_objective(config, &signals, &policy_dists, ref_dists)
}

/// Gradients of the batch objective with respect to the mixture weights:
/// (∂J/∂λ, ∂J/∂τ). τ is `None` for the flat mixture.
///
/// The objective is linear in the weights, so these are the mean per-kernel
/// term values, group-scaled for the hierarchical form.
pub fn mixture_weight_grads(
    config: &ObjectiveConfig,
    signals: &[TripletSignals],
) -> Result<([f64; 4], Option<[f64; 2]>)> {
    if signals.is_empty() {
        return Err(Error::InvalidInput("objective needs a non-empty batch".into()));
    }
    let n = signals.len() as f64;
    match &config.kernel {
        KernelChoice::FlatMixture { specs, .. } => {
            let mut sums = [0.0; 4];
            for s in signals {
                let order = specs.flat_order();
                for (i, spec) in order.iter().enumerate() {
                    let mut term = scalar_kernel(spec, s.z())?;
                    if config.gamma != 0.0 {
                        term +=
                            config.gamma * scalar_kernel_embed(spec, s.dot_pos, s.dot_neg)?;
                    }
                    sums[i] += term;
                }
            }
            for v in &mut sums {
                *v /= n;
            }
            Ok((sums, None))
        }
        KernelChoice::Hmk { state, specs } => {
            let mut kernel_means = [0.0; 4];
            for s in signals {
                let order = specs.hmk_order();
                for (i, spec) in order.iter().enumerate() {
                    let mut term = scalar_kernel(spec, s.z())?;
                    if config.gamma != 0.0 {
                        term +=
                            config.gamma * scalar_kernel_embed(spec, s.dot_pos, s.dot_neg)?;
                    }
                    kernel_means[i] += term;
                }
            }
            for v in &mut kernel_means {
                *v /= n;
            }
            let lambda = state.lambda();
            let tau = state.tau();
            let lambda_grad = [
                tau[0] * kernel_means[0],
                tau[0] * kernel_means[1],
                tau[1] * kernel_means[2],
                tau[1] * kernel_means[3],
            ];
            let tau_grad = [
                lambda[0] * kernel_means[0] + lambda[1] * kernel_means[1],
                lambda[2] * kernel_means[2] + lambda[3] * kernel_means[3],
            ];
            Ok((lambda_grad, Some(tau_grad)))
        }
        _ => Err(Error::InvalidInput(
            "mixture weight gradients need a mixture kernel".into(),
        )),
    }
}

/// Central finite differences of an arbitrary scalar function of a
/// parameter vector.
pub fn finite_diff(
    f: impl Fn(&[f64]) -> Result<f64>,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = work[i];
        work[i] = original + h;
        let plus = f(&work)?;
        work[i] = original - h;
        let minus = f(&work)?;
        work[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Default step for [`finite_diff_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central finite differences of the full objective over the policy's
/// flattened parameters (logits, then U, then V).
pub fn finite_diff_grad(
    config: &ObjectiveConfig,
    policy: &ToyPolicy,
    records: &[PreferenceRecord],
    ref_dists: &[ProbabilityDistribution],
    h: f64,
) -> Result<Vec<f64>> {
    let flat = policy.to_flat();
    finite_diff(
        |params| {
            let perturbed = policy.with_flat(params)?;
            Ok(full_objective_for_policy(config, &perturbed, records, ref_dists)?.total)
        },
        &flat,
        h,
    )
}

/// Relative disagreement |a − n| / max(1e-8, |a| + |n|), maximized over
/// coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1e-8_f64).max(a.abs() + n.abs()))
        .fold(0.0, f64::max)
}

/// Computes both gradients and their worst relative disagreement.
pub fn grad_check(
    config: &ObjectiveConfig,
    policy: &ToyPolicy,
    records: &[PreferenceRecord],
    ref_dists: &[ProbabilityDistribution],
) -> Result<GradientReport> {
    let analytic = analytic_grad(config, policy, records, ref_dists)?;
    let numeric = finite_diff_grad(config, policy, records, ref_dists, DEFAULT_FD_STEP)?;
    let err = max_rel_err(&analytic, &numeric);
    Ok(GradientReport {
        analytic,
        numeric,
        max_rel_err: err,
    })
}

/// A randomized configuration for gradient certification.
#[derive(Debug, Clone)]
pub struct CheckScenario {
    pub policy: ToyPolicy,
    pub records: Vec<PreferenceRecord>,
    pub ref_dists: Vec<ProbabilityDistribution>,
}

/// Builds a deterministic random scenario for certifying gradients: one
/// record per context, outcomes split into disjoint preferred and rejected
/// pools as in real preference data.
///
/// Both restrictions exist to keep coordinates with an *exactly* zero
/// analytic gradient out of the batch: reusing an outcome in both roles
/// for one context cancels its embedding gradient exactly, and two
/// records sharing a context can cancel their integer-signed Wasserstein
/// subgradients exactly. In either case the objective still depends on
/// the coordinate, so finite differences return one-ulp rounding noise,
/// which the relative-error floor amplifies past any tolerance.
/// Embedding tables carry a positive first coordinate so dot products stay
/// away from zero and ratio-form kernels remain in-domain.
pub fn certification_scenario(
    seed: crate::num::RandomSeed,
    contexts: usize,
    outcomes: usize,
    embed_dim: usize,
) -> Result<CheckScenario> {
    use crate::num::{softmax_distribution, RealMatrix, RealVector};
    use rand::{Rng, SeedableRng};
    if outcomes < 2 {
        return Err(Error::InvalidInput("certification needs >= 2 outcomes".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.0);
    let logits = RealMatrix::new(
        contexts,
        outcomes,
        (0..contexts * outcomes)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let mut table = |rows: usize| -> Result<RealMatrix> {
        RealMatrix::new(
            rows,
            embed_dim,
            (0..rows * embed_dim)
                .enumerate()
                .map(|(idx, _)| {
                    if idx % embed_dim == 0 {
                        1.0 + rng.gen_range(-0.2..0.2)
                    } else {
                        rng.gen_range(-0.4..0.4)
                    }
                })
                .collect(),
        )
    };
    let u = table(contexts)?;
    let v = table(outcomes)?;
    let policy = ToyPolicy::new(logits, u, v)?;

    let split = (outcomes / 2).max(1);
    let records = (0..contexts)
        .map(|x| {
            let pos = rng.gen_range(0..split);
            let neg = rng.gen_range(split..outcomes);
            PreferenceRecord::new(x, pos, neg)
        })
        .collect::<Result<Vec<_>>>()?;
    let ref_dists = records
        .iter()
        .map(|_| {
            let scores: Vec<f64> = (0..outcomes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            softmax_distribution(&RealVector::new(scores)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckScenario {
        policy,
        records,
        ref_dists,
    })
}
