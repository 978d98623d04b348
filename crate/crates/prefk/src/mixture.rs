//! Kernel mixtures: a flat four-way convex combination and a two-level
//! hierarchical mixture with local/global balance weights, both softmax
//! parameterized so every weight stays strictly positive.
//!
//! Weight-to-kernel assignment differs between the two forms and both
//! orderings are fixed constants:
//!
//! - flat mixture: λ₁ polynomial, λ₂ RBF, λ₃ spectral, λ₄ Mahalanobis;
//! - hierarchical: τ₁·(λ₁ RBF + λ₂ polynomial) + τ₂·(λ₃ spectral + λ₄ Mahalanobis).

use serde::{Deserialize, Serialize};

use crate::kernel::{scalar_kernel, vector_kernel, KernelSpec};
use crate::num::{softmax_slice, RealMatrix, RealVector};
use crate::{Error, Result};

/// Entropy-regularization strength for mixture weight dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRegConfig {
    pub weight: f64,
}

impl Default for EntropyRegConfig {
    fn default() -> Self {
        Self { weight: 0.1 }
    }
}

impl EntropyRegConfig {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "entropy weight must be nonnegative, got {weight}"
            )));
        }
        Ok(Self { weight })
    }

    /// Disables the diversity term.
    pub fn off() -> Self {
        Self { weight: 0.0 }
    }
}

/// Softmax weights and the full Jacobian ∂λ_i/∂θ_j = λ_i(δ_ij − λ_j).
pub fn weights_from_logits(theta: &[f64; 4]) -> Result<([f64; 4], RealMatrix)> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("mixture logits must be finite".into()));
    }
    let lam_vec = softmax_slice(theta);
    let lambda = [lam_vec[0], lam_vec[1], lam_vec[2], lam_vec[3]];
    let mut jac = RealMatrix::zeros(4, 4)?;
    for i in 0..4 {
        for j in 0..4 {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac.set(i, j, lambda[i] * (delta - lambda[j]));
        }
    }
    Ok((lambda, jac))
}

/// Shannon entropy of a strictly positive weight vector and its gradient
/// ∂R/∂λ_i = −ln λ_i − 1.
pub fn entropy_reg(lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
    if lambda.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::InvalidInput(
            "entropy needs strictly positive weights".into(),
        ));
    }
    let value = -lambda.iter().map(|&l| l * l.ln()).sum::<f64>();
    let grad = lambda.iter().map(|&l| -l.ln() - 1.0).collect();
    Ok((value, grad))
}

/// Four-kernel flat mixture state: logits θ and the derived simplex λ.
///
/// Serialized as the logits alone; the weights are always rederived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureStateRepr", into = "MixtureStateRepr")]
pub struct MixtureState {
    theta: [f64; 4],
    lambda: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct MixtureStateRepr {
    theta: [f64; 4],
}

impl TryFrom<MixtureStateRepr> for MixtureState {
    type Error = Error;
    fn try_from(repr: MixtureStateRepr) -> Result<Self> {
        Self::new(repr.theta)
    }
}

impl From<MixtureState> for MixtureStateRepr {
    fn from(state: MixtureState) -> Self {
        Self { theta: state.theta }
    }
}

impl MixtureState {
    pub fn new(theta: [f64; 4]) -> Result<Self> {
        let (lambda, _) = weights_from_logits(&theta)?;
        Ok(Self { theta, lambda })
    }

    pub fn uniform() -> Self {
        Self::new([0.0; 4]).expect("zero logits are finite")
    }

    pub fn theta(&self) -> &[f64; 4] {
        &self.theta
    }

    pub fn lambda(&self) -> &[f64; 4] {
        &self.lambda
    }

    /// One descent step on the mixture logits.
    ///
    /// `task_grad_lambda` is ∂L/∂λ of the task loss (the quantity being
    /// minimized). The entropy term is subtracted scaled by `reg.weight` so
    /// that positive weight pushes λ toward uniform; the combined gradient
    /// is then routed through the full softmax Jacobian onto θ.
    pub fn step(
        &self,
        task_grad_lambda: &[f64; 4],
        reg: &EntropyRegConfig,
        eta: f64,
    ) -> Result<Self> {
        let theta = step_logits(&self.theta, &self.lambda, task_grad_lambda, reg, eta)?;
        Self::new(theta)
    }
}

/// Hierarchical mixture state: four kernel logits θ and two balance
/// logits ψ.
///
/// The kernel weights normalize **within each group**: (λ₁, λ₂) is the
/// softmax of (θ₁, θ₂) and (λ₃, λ₄) of (θ₃, θ₄), so λ₁+λ₂ = 1 and
/// λ₃+λ₄ = 1 separately, while τ = softmax(ψ). This is what makes the
/// reduction identities hold (all kernel values 1 combine to exactly 1 for
/// any balance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmkStateRepr", into = "HmkStateRepr")]
pub struct HmkState {
    theta: [f64; 4],
    psi: [f64; 2],
    lambda: [f64; 4],
    tau: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct HmkStateRepr {
    theta: [f64; 4],
    psi: [f64; 2],
}

impl TryFrom<HmkStateRepr> for HmkState {
    type Error = Error;
    fn try_from(repr: HmkStateRepr) -> Result<Self> {
        Self::new(repr.theta, repr.psi)
    }
}

impl From<HmkState> for HmkStateRepr {
    fn from(state: HmkState) -> Self {
        Self {
            theta: state.theta,
            psi: state.psi,
        }
    }
}

fn softmax_pair(a: f64, b: f64) -> [f64; 2] {
    let v = softmax_slice(&[a, b]);
    [v[0], v[1]]
}

impl HmkState {
    pub fn new(theta: [f64; 4], psi: [f64; 2]) -> Result<Self> {
        if theta.iter().chain(psi.iter()).any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("mixture logits must be finite".into()));
        }
        let local = softmax_pair(theta[0], theta[1]);
        let global = softmax_pair(theta[2], theta[3]);
        let tau = softmax_pair(psi[0], psi[1]);
        Ok(Self {
            theta,
            psi,
            lambda: [local[0], local[1], global[0], global[1]],
            tau,
        })
    }

    pub fn uniform() -> Self {
        Self::new([0.0; 4], [0.0; 2]).expect("zero logits are finite")
    }

    pub fn theta(&self) -> &[f64; 4] {
        &self.theta
    }

    pub fn psi(&self) -> &[f64; 2] {
        &self.psi
    }

    pub fn lambda(&self) -> &[f64; 4] {
        &self.lambda
    }

    pub fn tau(&self) -> &[f64; 2] {
        &self.tau
    }

    /// One descent step on both logit groups; see [`MixtureState::step`].
    ///
    /// The entropy term applies to the kernel weights λ only, and the
    /// gradients flow through the block softmax Jacobians of the two
    /// within-group parameterizations.
    pub fn step(
        &self,
        task_grad_lambda: &[f64; 4],
        task_grad_tau: &[f64; 2],
        reg: &EntropyRegConfig,
        eta: f64,
    ) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidInput(format!("step size must be positive, got {eta}")));
        }
        if task_grad_lambda
            .iter()
            .chain(task_grad_tau.iter())
            .any(|g| !g.is_finite())
        {
            return Err(Error::NumericalFailure(
                "non-finite mixture-weight gradient".into(),
            ));
        }
        let combined: Vec<f64> = if reg.weight == 0.0 {
            task_grad_lambda.to_vec()
        } else {
            let (_, entropy_grad) = entropy_reg(&self.lambda)?;
            task_grad_lambda
                .iter()
                .zip(&entropy_grad)
                .map(|(t, e)| t - reg.weight * e)
                .collect()
        };

        let mut theta = self.theta;
        for group in 0..2 {
            let base = 2 * group;
            let w = [self.lambda[base], self.lambda[base + 1]];
            for j in 0..2 {
                let mut g = 0.0;
                for i in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    g += combined[base + i] * w[i] * (delta - w[j]);
                }
                theta[base + j] -= eta * g;
            }
        }

        let mut psi = self.psi;
        for (j, slot) in psi.iter_mut().enumerate() {
            let mut g = 0.0;
            for (i, task) in task_grad_tau.iter().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                g += task * self.tau[i] * (delta - self.tau[j]);
            }
            *slot -= eta * g;
        }
        Self::new(theta, psi)
    }
}

fn step_logits(
    theta: &[f64; 4],
    lambda: &[f64; 4],
    task_grad_lambda: &[f64; 4],
    reg: &EntropyRegConfig,
    eta: f64,
) -> Result<[f64; 4]> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {eta}")));
    }
    if task_grad_lambda.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite mixture-weight gradient".into(),
        ));
    }
    // Minimizing task loss while maximizing entropy: the entropy gradient
    // enters with a negative sign scaled by the configured weight. With a
    // zero weight the term is skipped outright, so fully collapsed weights
    // (underflowed to 0) remain steppable.
    let combined: Vec<f64> = if reg.weight == 0.0 {
        task_grad_lambda.to_vec()
    } else {
        let (_, entropy_grad) = entropy_reg(lambda)?;
        task_grad_lambda
            .iter()
            .zip(&entropy_grad)
            .map(|(t, e)| t - reg.weight * e)
            .collect()
    };
    let mut out = *theta;
    for j in 0..4 {
        let mut g = 0.0;
        for i in 0..4 {
            let delta = if i == j { 1.0 } else { 0.0 };
            g += combined[i] * lambda[i] * (delta - lambda[j]);
        }
        out[j] -= eta * g;
    }
    Ok(out)
}

/// The four family specs a mixture draws from, by name rather than by
/// position so the two weight orderings cannot be confused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpecs {
    pub polynomial: KernelSpec,
    pub rbf: KernelSpec,
    pub spectral: KernelSpec,
    pub mahalanobis: KernelSpec,
}

impl MixtureSpecs {
    /// Scalar-capable defaults: polynomial (c=1, d=2), RBF σ=1, two-component
    /// spectral, standard Mahalanobis window.
    pub fn default_scalar() -> Self {
        Self {
            polynomial: KernelSpec::Polynomial { c: 1.0, degree: 2 },
            rbf: KernelSpec::Rbf { sigma: 1.0 },
            spectral: KernelSpec::Spectral {
                lambdas: vec![1.0, 0.5],
                basis: Default::default(),
            },
            mahalanobis: KernelSpec::MahalanobisScalar {
                mu: 0.0,
                sigma: 1.0,
                mu_prime: 0.0,
                sigma_prime: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.polynomial.validate()?;
        self.rbf.validate()?;
        self.spectral.validate()?;
        self.mahalanobis.validate()
    }

    /// Flat-mixture weight order: (polynomial, rbf, spectral, mahalanobis).
    pub fn flat_order(&self) -> [&KernelSpec; 4] {
        [&self.polynomial, &self.rbf, &self.spectral, &self.mahalanobis]
    }

    /// Hierarchical weight order: (rbf, polynomial, spectral, mahalanobis).
    pub fn hmk_order(&self) -> [&KernelSpec; 4] {
        [&self.rbf, &self.polynomial, &self.spectral, &self.mahalanobis]
    }
}

/// Argument form for standalone mixture evaluation.
#[derive(Debug, Clone, Copy)]
pub enum KernelArg<'a> {
    Scalar(f64),
    Pair(&'a RealVector, &'a RealVector),
}

fn eval_spec(spec: &KernelSpec, arg: KernelArg<'_>) -> Result<f64> {
    match arg {
        KernelArg::Scalar(z) => scalar_kernel(spec, z),
        KernelArg::Pair(u, v) => vector_kernel(spec, u, v),
    }
}

/// λ-weighted sum of the four kernel values in [`MixtureSpecs::flat_order`].
pub fn flat_mixture_kernel(
    state: &MixtureState,
    specs: &MixtureSpecs,
    arg: KernelArg<'_>,
) -> Result<f64> {
    let ordered = specs.flat_order();
    let mut total = 0.0;
    for (lam, spec) in state.lambda().iter().zip(ordered) {
        total += lam * eval_spec(spec, arg)?;
    }
    Ok(total)
}

/// Group-weighted hierarchical value
/// τ₁(λ₁·rbf + λ₂·poly) + τ₂(λ₃·spectral + λ₄·mahalanobis).
pub fn hmk_kernel(state: &HmkState, specs: &MixtureSpecs, arg: KernelArg<'_>) -> Result<f64> {
    let ordered = specs.hmk_order();
    let values = [
        eval_spec(ordered[0], arg)?,
        eval_spec(ordered[1], arg)?,
        eval_spec(ordered[2], arg)?,
        eval_spec(ordered[3], arg)?,
    ];
    Ok(mix_hmk(state.lambda(), state.tau(), &values))
}

/// Flat combination Σ λ_i v_i.
pub fn mix_flat(lambda: &[f64; 4], values: &[f64; 4]) -> f64 {
    lambda.iter().zip(values).map(|(l, v)| l * v).sum()
}

/// Hierarchical combination τ₁(λ₁v₁ + λ₂v₂) + τ₂(λ₃v₃ + λ₄v₄).
pub fn mix_hmk(lambda: &[f64; 4], tau: &[f64; 2], values: &[f64; 4]) -> f64 {
    tau[0] * (lambda[0] * values[0] + lambda[1] * values[1])
        + tau[1] * (lambda[2] * values[2] + lambda[3] * values[3])
}

/// Collapse diagnosis over a λ trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Per-step min_i λ_i.
    pub min_lambda_trajectory: Vec<f64>,
    pub collapsed: bool,
    /// Index (0-based) of the dominant kernel in the final step, set when
    /// collapsed.
    pub dominant_index: Option<usize>,
}

/// Flags kernel collapse: the mixture has degenerated when, somewhere in
/// the final 10% of steps, the smallest weight drops below `threshold`.
pub fn collapse_detect(lambda_trace: &[[f64; 4]], threshold: f64) -> Result<CollapseReport> {
    if lambda_trace.is_empty() {
        return Err(Error::InvalidInput("collapse detection needs a non-empty trace".into()));
    }
    if !(threshold > 0.0 && threshold <= 0.25) {
        return Err(Error::InvalidInput(format!(
            "collapse threshold must lie in (0, 0.25], got {threshold}"
        )));
    }
    let min_lambda_trajectory: Vec<f64> = lambda_trace
        .iter()
        .map(|l| l.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let window = ((lambda_trace.len() as f64 * 0.1).ceil() as usize).max(1);
    let tail = &min_lambda_trajectory[lambda_trace.len() - window..];
    let collapsed = tail.iter().any(|&m| m < threshold);
    let dominant_index = if collapsed {
        let last = lambda_trace.last().expect("non-empty trace");
        let mut best = 0;
        for i in 1..4 {
            if last[i] > last[best] {
                best = i;
            }
        }
        Some(best)
    } else {
        None
    };
    Ok(CollapseReport {
        min_lambda_trajectory,
        collapsed,
        dominant_index,
    })
}
