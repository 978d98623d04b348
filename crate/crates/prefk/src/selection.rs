//! Data-driven kernel and divergence selection.
//!
//! Eight dataset metrics feed two first-match decision rules. The rule
//! cases are not mutually exclusive, so evaluation order is part of the
//! contract; with the default thresholds the Jensen-Shannon case absorbs
//! everything the first three cases reject, leaving the Hellinger and KL
//! cases as documented dead branches (asserted in tests).

use serde::{Deserialize, Serialize};

use crate::divergence::wasserstein_1d;
use crate::num::{euclidean_distance, ProbabilityDistribution, RealVector};
use crate::{Error, Result};

/// One embedded preference triplet: context x, preferred y⁺, rejected y⁻.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTriplet {
    pub x: RealVector,
    pub y_pos: RealVector,
    pub y_neg: RealVector,
}

impl EmbeddingTriplet {
    pub fn new(x: RealVector, y_pos: RealVector, y_neg: RealVector) -> Result<Self> {
        if x.dim() != y_pos.dim() || x.dim() != y_neg.dim() {
            return Err(Error::InvalidInput(format!(
                "triplet dims differ: x={}, y_pos={}, y_neg={}",
                x.dim(),
                y_pos.dim(),
                y_neg.dim()
            )));
        }
        Ok(Self { x, y_pos, y_neg })
    }
}

/// The two published forms of the positive-negative divergence statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PndForm {
    /// Mean of per-triplet distance ratios d⁺/d⁻; balanced at 1.
    #[default]
    Ratio,
    /// Mean of per-triplet distance differences d⁺ − d⁻; balanced at 0.
    Difference,
}

impl PndForm {
    /// The PND value of a perfectly balanced dataset under this form.
    pub fn balance(&self) -> f64 {
        match self {
            Self::Ratio => 1.0,
            Self::Difference => 0.0,
        }
    }
}

/// Geometry statistics driving kernel choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSelectionMetrics {
    pub pnd: f64,
    pub pnav: f64,
    pub tat: f64,
    pub nag: f64,
    pub pnd_form: PndForm,
}

/// Distribution statistics driving divergence choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSelectionMetrics {
    pub support_overlap: f64,
    pub drift: f64,
    pub kurtosis: f64,
    pub smoothness: f64,
}

/// Decision thresholds with the published defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Kernel rule: PNAV gate for the RBF case.
    pub kernel_eps1: f64,
    /// Kernel rule: TAT gate for the RBF case.
    pub kernel_eps2: f64,
    /// Kernel rule: PNAV gate for the Mahalanobis case.
    pub kernel_eps3: f64,
    /// Kernel rule: TAT gate for the spectral case.
    pub kernel_eps4: f64,
    /// Kernel rule: PND gate for the spectral case.
    pub kernel_eps5: f64,
    /// Divergence rule: support-overlap gate.
    pub divergence_eps1: f64,
    /// Divergence rule: drift gate.
    pub divergence_eps2: f64,
    /// Divergence rule: kurtosis gate.
    pub divergence_eps3: f64,
    /// Minimum mass for an index to count as supported.
    pub support_mass_floor: f64,
    /// "Low smoothness" gate.
    pub smoothness_eps: f64,
    /// Half-width of the "approximately balanced" windows in the
    /// polynomial kernel case.
    pub balance_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kernel_eps1: 0.5,
            kernel_eps2: 0.3,
            kernel_eps3: 0.2,
            kernel_eps4: 0.7,
            kernel_eps5: 0.1,
            divergence_eps1: 0.6,
            divergence_eps2: 0.3,
            divergence_eps3: 3.0,
            support_mass_floor: 1e-8,
            smoothness_eps: 0.1,
            balance_tol: 0.05,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("kernel_eps1", self.kernel_eps1),
            ("kernel_eps2", self.kernel_eps2),
            ("kernel_eps3", self.kernel_eps3),
            ("kernel_eps4", self.kernel_eps4),
            ("kernel_eps5", self.kernel_eps5),
            ("divergence_eps1", self.divergence_eps1),
            ("divergence_eps2", self.divergence_eps2),
            ("divergence_eps3", self.divergence_eps3),
            ("support_mass_floor", self.support_mass_floor),
            ("smoothness_eps", self.smoothness_eps),
            ("balance_tol", self.balance_tol),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "threshold {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Computes PND (in the requested form), PNAV, TAT, and NAG over a
/// non-empty triplet set, using Euclidean distances.
pub fn kernel_metrics(
    triplets: &[EmbeddingTriplet],
    pnd_form: PndForm,
) -> Result<KernelSelectionMetrics> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput("kernel metrics need at least one triplet".into()));
    }
    let n = triplets.len() as f64;
    let mut pnd_sum = 0.0;
    let mut pnav_sum = 0.0;
    let mut tat_sum = 0.0;
    let mut nag_sum = 0.0;
    for (i, t) in triplets.iter().enumerate() {
        let d_pos = euclidean_distance(t.x.as_slice(), t.y_pos.as_slice());
        let d_neg = euclidean_distance(t.x.as_slice(), t.y_neg.as_slice());
        match pnd_form {
            PndForm::Ratio => {
                if d_neg == 0.0 {
                    return Err(Error::DegenerateTriplet {
                        index: i,
                        reason: "zero distance to the rejected response".into(),
                    });
                }
                pnd_sum += d_pos / d_neg;
            }
            PndForm::Difference => pnd_sum += d_pos - d_neg,
        }
        let gap = d_pos - d_neg;
        pnav_sum += gap * gap;

        let spread = euclidean_distance(t.y_pos.as_slice(), t.y_neg.as_slice());
        let around = d_pos + d_neg;
        if around == 0.0 {
            return Err(Error::DegenerateTriplet {
                index: i,
                reason: "both responses coincide with the context".into(),
            });
        }
        tat_sum += spread / around;
        nag_sum += (d_neg - d_pos) / around;
    }
    Ok(KernelSelectionMetrics {
        pnd: pnd_sum / n,
        pnav: pnav_sum / n,
        tat: tat_sum / n,
        nag: nag_sum / n,
        pnd_form,
    })
}

/// Fraction of indices supported (mass above the floor) by both
/// distributions among those supported by either.
fn support_overlap(
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
    floor: f64,
) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::InvalidInput(format!(
            "support overlap: dimension mismatch {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let mut both = 0usize;
    let mut either = 0usize;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        let in_p = pi > floor;
        let in_q = qi > floor;
        if in_p && in_q {
            both += 1;
        }
        if in_p || in_q {
            either += 1;
        }
    }
    if either == 0 {
        return Err(Error::InvalidInput("both distributions are empty above the mass floor".into()));
    }
    Ok(both as f64 / either as f64)
}

/// Excess-free kurtosis E[(s−μ)⁴] / (E[(s−μ)²])² of a sample.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("kurtosis needs samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Err(Error::KurtosisUndefined);
    }
    Ok(m4 / (m2 * m2))
}

/// Computes support overlap, drift, kurtosis, and checkpoint smoothness.
///
/// - overlap: mean pairwise overlap of `policy_dists[i]` vs `ref_dists[i]`;
/// - drift: mean distance gap d(x, y⁺) − d(x, y⁻) over `triplets`;
/// - kurtosis: fourth-moment ratio of `stat_samples` (the per-triplet
///   log-probability gaps);
/// - smoothness: mean 1-D Wasserstein distance between consecutive
///   `checkpoints`, zero when fewer than two are available.
pub fn divergence_metrics(
    triplets: &[EmbeddingTriplet],
    policy_dists: &[ProbabilityDistribution],
    ref_dists: &[ProbabilityDistribution],
    checkpoints: &[ProbabilityDistribution],
    stat_samples: &[f64],
    thresholds: &Thresholds,
) -> Result<DivergenceSelectionMetrics> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput("divergence metrics need at least one triplet".into()));
    }
    if policy_dists.is_empty() || policy_dists.len() != ref_dists.len() {
        return Err(Error::InvalidInput(format!(
            "divergence metrics need aligned distribution pairs, got {} vs {}",
            policy_dists.len(),
            ref_dists.len()
        )));
    }

    let mut overlap_sum = 0.0;
    for (p, q) in policy_dists.iter().zip(ref_dists) {
        overlap_sum += support_overlap(p, q, thresholds.support_mass_floor)?;
    }
    let overlap = overlap_sum / policy_dists.len() as f64;

    let drift = triplets
        .iter()
        .map(|t| {
            euclidean_distance(t.x.as_slice(), t.y_pos.as_slice())
                - euclidean_distance(t.x.as_slice(), t.y_neg.as_slice())
        })
        .sum::<f64>()
        / triplets.len() as f64;

    let kurt = kurtosis(stat_samples)?;

    let smoothness = if checkpoints.len() < 2 {
        0.0
    } else {
        let mut total = 0.0;
        for pair in checkpoints.windows(2) {
            total += wasserstein_1d(&pair[0], &pair[1])?.value();
        }
        total / (checkpoints.len() - 1) as f64
    };

    Ok(DivergenceSelectionMetrics {
        support_overlap: overlap,
        drift,
        kurtosis: kurt,
        smoothness,
    })
}

/// Kernel families the selector can recommend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Rbf,
    Polynomial,
    Mahalanobis,
    Spectral,
}

/// Divergences the selector can recommend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceName {
    Bhattacharyya,
    Wasserstein,
    Renyi,
    JensenShannon,
    Hellinger,
    Kl,
}

/// A selector decision with the rule that produced it (1-based case
/// number, 0 for the fall-through default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFired {
    pub case: usize,
}

/// First-match kernel rule:
///
/// 1. RBF when PNAV > ε₁ and TAT < ε₂;
/// 2. polynomial when NAG ≈ 0 and PND ≈ balance (within `balance_tol`);
/// 3. Mahalanobis when NAG > 0 and PNAV < ε₃;
/// 4. spectral when TAT > ε₄ and PND < ε₅;
/// - otherwise RBF, the default choice.
pub fn select_kernel(
    metrics: &KernelSelectionMetrics,
    th: &Thresholds,
) -> (KernelName, RuleFired) {
    if metrics.pnav > th.kernel_eps1 && metrics.tat < th.kernel_eps2 {
        return (KernelName::Rbf, RuleFired { case: 1 });
    }
    let balance = metrics.pnd_form.balance();
    if metrics.nag.abs() < th.balance_tol && (metrics.pnd - balance).abs() < th.balance_tol {
        return (KernelName::Polynomial, RuleFired { case: 2 });
    }
    if metrics.nag > 0.0 && metrics.pnav < th.kernel_eps3 {
        return (KernelName::Mahalanobis, RuleFired { case: 3 });
    }
    if metrics.tat > th.kernel_eps4 && metrics.pnd < th.kernel_eps5 {
        return (KernelName::Spectral, RuleFired { case: 4 });
    }
    (KernelName::Rbf, RuleFired { case: 0 })
}

/// First-match divergence rule:
///
/// 1. Bhattacharyya when overlap > ε₁;
/// 2. Wasserstein when drift > ε₂;
/// 3. Rényi when kurtosis > ε₃;
/// 4. Jensen-Shannon when overlap ≤ ε₁ and kurtosis ≤ ε₃;
/// 5. Hellinger when smoothness ≤ ε_s and kurtosis ≤ ε₃;
/// - otherwise KL.
///
/// Under first-match evaluation, case 4's conditions are implied whenever
/// cases 1-3 have failed, so cases 5 and 6 cannot fire with finite inputs.
pub fn select_divergence(
    metrics: &DivergenceSelectionMetrics,
    th: &Thresholds,
) -> (DivergenceName, RuleFired) {
    if metrics.support_overlap > th.divergence_eps1 {
        return (DivergenceName::Bhattacharyya, RuleFired { case: 1 });
    }
    if metrics.drift > th.divergence_eps2 {
        return (DivergenceName::Wasserstein, RuleFired { case: 2 });
    }
    if metrics.kurtosis > th.divergence_eps3 {
        return (DivergenceName::Renyi, RuleFired { case: 3 });
    }
    if metrics.support_overlap <= th.divergence_eps1 && metrics.kurtosis <= th.divergence_eps3 {
        return (DivergenceName::JensenShannon, RuleFired { case: 4 });
    }
    if metrics.smoothness <= th.smoothness_eps && metrics.kurtosis <= th.divergence_eps3 {
        return (DivergenceName::Hellinger, RuleFired { case: 5 });
    }
    (DivergenceName::Kl, RuleFired { case: 0 })
}
