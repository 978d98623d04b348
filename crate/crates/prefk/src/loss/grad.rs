//! Closed-form gradients of the full objective with respect to the policy
//! parameters (logit table, then both embedding tables, flattened).
//!
//! Each kernel contributes a scalar chain factor dκ/dz on the probability
//! side and a pair of partials (∂κ/∂dot_pos, ∂κ/∂dot_neg) on the embedding
//! side, obtained with the quotient rule on the dot-product ratio. The
//! log-ratio gradient over a logits row collapses to onehot(y⁺) − onehot(y⁻)
//! because the partition terms cancel. Distribution gradients are routed
//! through the full softmax Jacobian λ_i(δ_ij − λ_j); the diagonal
//! approximation is not used anywhere.

use super::{KernelChoice, ObjectiveConfig, TripletSignals};
use crate::divergence::DivergenceKind;
use crate::kernel::{embed_ratio, spectral_basis, KernelSpec};
use crate::mixture::{mix_flat, mix_hmk};
use crate::num::ProbabilityDistribution;
use crate::policy::{PreferenceRecord, ToyPolicy};
use crate::{Error, Result};

/// dκ(z)/dz for a scalar-capable kernel.
fn scalar_kernel_dz(spec: &KernelSpec, z: f64) -> Result<f64> {
    match spec {
        KernelSpec::Polynomial { c, degree } => {
            Ok(*degree as f64 * (z + c).powi(*degree as i32 - 1))
        }
        KernelSpec::Rbf { sigma } => {
            let w = (-z * z / (2.0 * sigma * sigma)).exp();
            Ok(-(z / (sigma * sigma)) * w)
        }
        KernelSpec::Spectral { lambdas, .. } => {
            let mut total = 0.0;
            for (idx, &lam) in lambdas.iter().enumerate() {
                let (phi, dphi) = spectral_basis(idx + 1, z)?;
                let w = (-lam * z * z).exp();
                total += w * (-2.0 * lam * z * phi + dphi);
            }
            Ok(total)
        }
        KernelSpec::MahalanobisScalar { mu, sigma, .. } => {
            let d = z - mu;
            let w = (-d * d / (2.0 * sigma * sigma)).exp();
            Ok(-(d / (sigma * sigma)) * w)
        }
        KernelSpec::MahalanobisVector { .. } => Err(Error::InvalidKernelForm(
            "mahalanobis_vector has no scalar form".into(),
        )),
    }
}

/// (∂κ_embed/∂dot_pos, ∂κ_embed/∂dot_neg) for a scalar-capable kernel.
fn embed_partials(spec: &KernelSpec, dot_pos: f64, dot_neg: f64) -> Result<(f64, f64)> {
    match spec {
        KernelSpec::Polynomial { c, degree } => {
            let denom = dot_neg + c;
            if denom == 0.0 {
                return Err(Error::DegenerateRatio(
                    "polynomial embedding denominator dot_neg + c is zero".into(),
                ));
            }
            let rho = (dot_pos + c) / denom;
            let base = *degree as f64 * rho.powi(*degree as i32 - 1);
            Ok((base / denom, -base * (dot_pos + c) / (denom * denom)))
        }
        KernelSpec::Rbf { sigma } => {
            let r = embed_ratio(dot_pos, dot_neg)?;
            let w = (-r * r / (2.0 * sigma * sigma)).exp();
            let dk_dr = -(r / (sigma * sigma)) * w;
            Ok(chain_through_ratio(dk_dr, r, dot_neg))
        }
        KernelSpec::Spectral { lambdas, .. } => {
            let r = embed_ratio(dot_pos, dot_neg)?;
            let mut dk_dr = 0.0;
            for (idx, &lam) in lambdas.iter().enumerate() {
                let (phi, dphi) = spectral_basis(idx + 1, r)?;
                let w = (-lam * r * r).exp();
                dk_dr += w * (-2.0 * lam * r * phi + dphi);
            }
            Ok(chain_through_ratio(dk_dr, r, dot_neg))
        }
        KernelSpec::MahalanobisScalar {
            mu_prime,
            sigma_prime,
            ..
        } => {
            let r = embed_ratio(dot_pos, dot_neg)?;
            let d = r - mu_prime;
            let w = (-d * d / (2.0 * sigma_prime * sigma_prime)).exp();
            let dk_dr = -(d / (sigma_prime * sigma_prime)) * w;
            Ok(chain_through_ratio(dk_dr, r, dot_neg))
        }
        KernelSpec::MahalanobisVector { .. } => Err(Error::InvalidKernelForm(
            "mahalanobis_vector has no embedding-ratio form".into(),
        )),
    }
}

/// Quotient rule for r = dot_pos/dot_neg:
/// ∂r/∂dot_pos = 1/dot_neg, ∂r/∂dot_neg = −r/dot_neg.
///
/// When the kernel factor has already underflowed to zero the true gradient
/// is zero too; short-circuit before multiplying by a potentially huge
/// ratio derivative.
fn chain_through_ratio(dk_dr: f64, r: f64, dot_neg: f64) -> (f64, f64) {
    if dk_dr == 0.0 {
        return (0.0, 0.0);
    }
    (dk_dr / dot_neg, -dk_dr * r / dot_neg)
}

/// dκ_prob/dz for a kernel choice.
fn prob_chain(kernel: &KernelChoice, z: f64) -> Result<f64> {
    match kernel {
        KernelChoice::Identity => Ok(1.0),
        KernelChoice::Single { spec } => scalar_kernel_dz(spec, z),
        KernelChoice::FlatMixture { state, specs } => {
            let vals = super::four_values(&specs.flat_order(), |s| scalar_kernel_dz(s, z))?;
            Ok(mix_flat(state.lambda(), &vals))
        }
        KernelChoice::Hmk { state, specs } => {
            let vals = super::four_values(&specs.hmk_order(), |s| scalar_kernel_dz(s, z))?;
            Ok(mix_hmk(state.lambda(), state.tau(), &vals))
        }
    }
}

/// (∂κ_embed/∂dot_pos, ∂κ_embed/∂dot_neg) for a kernel choice.
fn embed_chain(kernel: &KernelChoice, signals: &TripletSignals) -> Result<(f64, f64)> {
    let (dp, dn) = (signals.dot_pos, signals.dot_neg);
    match kernel {
        KernelChoice::Identity => {
            let r = embed_ratio(dp, dn)?;
            if r <= 0.0 {
                return Err(Error::DegenerateRatio(format!(
                    "embedding log needs a positive ratio, got {r}"
                )));
            }
            // d ln(dp/dn): (1/dp, −1/dn).
            Ok((1.0 / dp, -1.0 / dn))
        }
        KernelChoice::Single { spec } => embed_partials(spec, dp, dn),
        KernelChoice::FlatMixture { state, specs } => {
            let mut acc = (0.0, 0.0);
            for (lam, spec) in state.lambda().iter().zip(specs.flat_order()) {
                let (a, b) = embed_partials(spec, dp, dn)?;
                acc.0 += lam * a;
                acc.1 += lam * b;
            }
            Ok(acc)
        }
        KernelChoice::Hmk { state, specs } => {
            let lambda = state.lambda();
            let tau = state.tau();
            let weights = [
                tau[0] * lambda[0],
                tau[0] * lambda[1],
                tau[1] * lambda[2],
                tau[1] * lambda[3],
            ];
            let mut acc = (0.0, 0.0);
            for (w, spec) in weights.iter().zip(specs.hmk_order()) {
                let (a, b) = embed_partials(spec, dp, dn)?;
                acc.0 += w * a;
                acc.1 += w * b;
            }
            Ok(acc)
        }
    }
}

/// ∂D(p‖q)/∂p_i for the supported divergences, holding q fixed.
fn divergence_grad_p(
    kind: &DivergenceKind,
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<Vec<f64>> {
    let ps = p.as_slice();
    let qs = q.as_slice();
    if ps.len() != qs.len() {
        return Err(Error::InvalidInput(format!(
            "divergence gradient: dimension mismatch {} vs {}",
            ps.len(),
            qs.len()
        )));
    }
    match kind {
        DivergenceKind::Kl => ps
            .iter()
            .zip(qs)
            .map(|(&pi, &qi)| {
                if qi == 0.0 && pi > 0.0 {
                    return Err(Error::InfiniteDivergence { pair_index: None });
                }
                Ok((pi / qi).ln() + 1.0)
            })
            .collect(),
        DivergenceKind::JensenShannon => Ok(ps
            .iter()
            .zip(qs)
            .map(|(&pi, &qi)| 0.5 * (pi / (0.5 * (pi + qi))).ln())
            .collect()),
        DivergenceKind::Hellinger => {
            let s: f64 = ps
                .iter()
                .zip(qs)
                .map(|(&pi, &qi)| {
                    let d = pi.sqrt() - qi.sqrt();
                    d * d
                })
                .sum();
            if s <= 1e-24 {
                // Cone apex at P = Q: zero is a valid subgradient.
                return Ok(vec![0.0; ps.len()]);
            }
            let scale = 1.0 / (2.0 * std::f64::consts::SQRT_2 * s.sqrt());
            Ok(ps
                .iter()
                .zip(qs)
                .map(|(&pi, &qi)| scale * (1.0 - (qi / pi).sqrt()))
                .collect())
        }
        DivergenceKind::Renyi { alpha } => {
            if *alpha <= 0.0 {
                return Err(Error::InvalidInput("Renyi order must be positive".into()));
            }
            if *alpha == 1.0 {
                return Err(Error::UseKlInstead);
            }
            let mut total = 0.0;
            for (&pi, &qi) in ps.iter().zip(qs) {
                if qi == 0.0 {
                    if pi > 0.0 && *alpha > 1.0 {
                        return Err(Error::InfiniteDivergence { pair_index: None });
                    }
                    continue;
                }
                total += pi.powf(*alpha) * qi.powf(1.0 - alpha);
            }
            if total <= 0.0 {
                return Err(Error::InfiniteDivergence { pair_index: None });
            }
            let scale = alpha / (alpha - 1.0) / total;
            Ok(ps
                .iter()
                .zip(qs)
                .map(|(&pi, &qi)| {
                    if qi == 0.0 {
                        0.0
                    } else {
                        scale * pi.powf(alpha - 1.0) * qi.powf(1.0 - alpha)
                    }
                })
                .collect())
        }
        DivergenceKind::Bhattacharyya => {
            let bc: f64 = ps.iter().zip(qs).map(|(&pi, &qi)| (pi * qi).sqrt()).sum();
            if bc <= 0.0 {
                return Err(Error::InfiniteDivergence { pair_index: None });
            }
            Ok(ps
                .iter()
                .zip(qs)
                .map(|(&pi, &qi)| -(qi / pi).sqrt() / (2.0 * bc))
                .collect())
        }
        DivergenceKind::Wasserstein1d => {
            let c = ps.len();
            // Signs of the CDF gaps; ties contribute zero (subgradient).
            let mut gap = 0.0;
            let mut signs = Vec::with_capacity(c - 1);
            for i in 0..c - 1 {
                gap += ps[i] - qs[i];
                signs.push(if gap > 0.0 {
                    1.0
                } else if gap < 0.0 {
                    -1.0
                } else {
                    0.0
                });
            }
            // ∂W/∂p_i = Σ_{k >= i} sign(gap_k): suffix sums.
            let mut grad = vec![0.0; c];
            let mut suffix = 0.0;
            for i in (0..c - 1).rev() {
                suffix += signs[i];
                grad[i] = suffix;
            }
            Ok(grad)
        }
        DivergenceKind::FDiv(f) => {
            if !f.has_derivative() {
                return Err(Error::NotDifferentiableHere(format!(
                    "f-divergence generator {} has no registered derivative",
                    f.name()
                )));
            }
            ps.iter()
                .zip(qs)
                .map(|(&pi, &qi)| {
                    if qi == 0.0 {
                        // Slope-at-infinity convention; without one the value
                        // itself is already infinite for pi > 0.
                        return match (pi > 0.0, f.slope_at_inf()) {
                            (_, Some(slope)) => Ok(slope),
                            (false, None) => Ok(0.0),
                            (true, None) => Err(Error::InfiniteDivergence { pair_index: None }),
                        };
                    }
                    f.derivative(pi / qi)
                        .ok_or_else(|| Error::NotDifferentiableHere(f.name().into()))
                })
                .collect()
        }
    }
}

/// Gradient of the full objective (ascent direction of the maximized total)
/// with respect to the policy's flattened parameters.
///
/// `ref_dists[i]` is the reference distribution for the context of record
/// i; it is only read when alpha·beta is nonzero.
pub fn analytic_grad(
    config: &ObjectiveConfig,
    policy: &ToyPolicy,
    records: &[PreferenceRecord],
    ref_dists: &[ProbabilityDistribution],
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::InvalidInput("gradient needs a non-empty batch".into()));
    }
    let reg_active = config.alpha * config.beta != 0.0;
    if reg_active && ref_dists.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "{} reference distributions for {} records",
            ref_dists.len(),
            records.len()
        )));
    }

    let n = records.len() as f64;
    let c = policy.outcomes();
    let m = policy.embed_dim();
    let (logit_off, u_off, v_off) = policy.block_offsets();
    let mut grad = vec![0.0; policy.param_count()];

    for (i, rec) in records.iter().enumerate() {
        let signals = policy.forward(rec)?;
        let row = logit_off + rec.x * c;

        // Probability side: dκ/dz routed onto onehot(y⁺) − onehot(y⁻).
        let gp = prob_chain(&config.kernel, signals.z())? / n;
        grad[row + rec.y_pos] += gp;
        grad[row + rec.y_neg] -= gp;

        // Embedding side: chain the dot-product partials into U and V rows.
        if config.gamma != 0.0 {
            let (a_pos, a_neg) = embed_chain(&config.kernel, &signals)?;
            let a_pos = a_pos * config.gamma / n;
            let a_neg = a_neg * config.gamma / n;
            let ex = policy.u.row(rec.x);
            let vp = policy.v.row(rec.y_pos);
            let vn = policy.v.row(rec.y_neg);
            for k in 0..m {
                grad[u_off + rec.x * m + k] += a_pos * vp[k] + a_neg * vn[k];
                grad[v_off + rec.y_pos * m + k] += a_pos * ex[k];
                grad[v_off + rec.y_neg * m + k] += a_neg * ex[k];
            }
        }

        // Regularizer side: ∂D/∂p through the full softmax Jacobian.
        if reg_active {
            let p = policy.distribution(rec.x)?;
            let dd = divergence_grad_p(&config.divergence, &p, &ref_dists[i]).map_err(|e| {
                match e {
                    Error::InfiniteDivergence { .. } => Error::InfiniteDivergence {
                        pair_index: Some(i),
                    },
                    other => other,
                }
            })?;
            let probs = p.as_slice();
            let inner: f64 = dd.iter().zip(probs).map(|(d, pi)| d * pi).sum();
            let coeff = -(config.alpha * config.beta) / n;
            for j in 0..c {
                grad[row + j] += coeff * probs[j] * (dd[j] - inner);
            }
        }
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure(
            "analytic gradient has non-finite entries".into(),
        ));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::ConvexFn;
    use crate::loss::{grad_check, max_rel_err, KernelChoice, ObjectiveConfig};
    use crate::mixture::{HmkState, MixtureSpecs, MixtureState};
    use crate::num::RealMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(rng: &mut ChaCha8Rng, x: usize, c: usize, m: usize) -> ToyPolicy {
        let logits = RealMatrix::new(
            x,
            c,
            (0..x * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        // First embedding coordinate biased positive so dot products stay
        // comfortably away from zero for ratio-based kernels.
        let table = |rows: usize, rng: &mut ChaCha8Rng| {
            RealMatrix::new(
                rows,
                m,
                (0..rows * m)
                    .enumerate()
                    .map(|(idx, _)| {
                        if idx % m == 0 {
                            1.0 + rng.gen_range(-0.2..0.2)
                        } else {
                            rng.gen_range(-0.4..0.4)
                        }
                    })
                    .collect(),
            )
            .unwrap()
        };
        let u = table(x, rng);
        let v = table(c, rng);
        ToyPolicy::new(logits, u, v).unwrap()
    }

    fn random_refs(
        rng: &mut ChaCha8Rng,
        records: &[PreferenceRecord],
        c: usize,
    ) -> Vec<ProbabilityDistribution> {
        records
            .iter()
            .map(|_| {
                let scores: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
                crate::num::softmax_distribution(
                    &crate::num::RealVector::new(scores).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    fn records(rng: &mut ChaCha8Rng, x: usize, c: usize, n: usize) -> Vec<PreferenceRecord> {
        (0..n)
            .map(|_| {
                let ctx = rng.gen_range(0..x);
                let pos = rng.gen_range(0..c);
                let mut neg = rng.gen_range(0..c);
                while neg == pos {
                    neg = rng.gen_range(0..c);
                }
                PreferenceRecord::new(ctx, pos, neg).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_gamma_zero_gradient_is_onehot_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = random_policy(&mut rng, 1, 3, 2);
        let rec = PreferenceRecord::new(0, 0, 2).unwrap();
        // alpha = 0 isolates the contrastive term.
        let config = ObjectiveConfig::new(
            0.0,
            1.0,
            0.0,
            KernelChoice::Identity,
            DivergenceKind::Kl,
        )
        .unwrap();
        let g = analytic_grad(&config, &policy, &[rec], &[]).unwrap();
        assert_eq!(&g[..3], &[1.0, 0.0, -1.0]);
        assert!(g[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_gradient_vanishes_at_reference() {
        // With p = q the KL gradient is constant over the simplex, which the
        // softmax Jacobian annihilates.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = random_policy(&mut rng, 1, 3, 2);
        let rec = PreferenceRecord::new(0, 0, 1).unwrap();
        let refs = vec![policy.distribution(0).unwrap()];
        let gamma_off = ObjectiveConfig::new(
            0.7,
            1.0,
            0.0,
            KernelChoice::Identity,
            DivergenceKind::Kl,
        )
        .unwrap();
        let with_reg = analytic_grad(&gamma_off, &policy, &[rec], &refs).unwrap();
        let no_reg = analytic_grad(
            &ObjectiveConfig::new(0.0, 1.0, 0.0, KernelChoice::Identity, DivergenceKind::Kl)
                .unwrap(),
            &policy,
            &[rec],
            &[],
        )
        .unwrap();
        for (a, b) in with_reg.iter().zip(&no_reg) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rbf_probability_gradient_vanishes_at_symmetric_config() {
        let spec = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(scalar_kernel_dz(&spec, 0.0).unwrap(), 0.0);
    }

    fn kernel_grid() -> Vec<KernelChoice> {
        vec![
            KernelChoice::Identity,
            KernelChoice::Single {
                spec: KernelSpec::polynomial(1.0, 2).unwrap(),
            },
            KernelChoice::Single {
                spec: KernelSpec::rbf(1.0).unwrap(),
            },
            KernelChoice::Single {
                spec: KernelSpec::spectral(vec![1.0, 0.5]).unwrap(),
            },
            KernelChoice::Single {
                spec: KernelSpec::mahalanobis_scalar(0.1, 1.2, 0.2, 0.9).unwrap(),
            },
            KernelChoice::FlatMixture {
                state: MixtureState::new([0.2, -0.1, 0.3, 0.0]).unwrap(),
                specs: MixtureSpecs::default_scalar(),
            },
            KernelChoice::Hmk {
                state: HmkState::new([0.1, 0.0, -0.2, 0.3], [0.2, -0.1]).unwrap(),
                specs: MixtureSpecs::default_scalar(),
            },
        ]
    }

    fn divergence_grid() -> Vec<DivergenceKind> {
        vec![
            DivergenceKind::Kl,
            DivergenceKind::JensenShannon,
            DivergenceKind::Hellinger,
            DivergenceKind::Renyi { alpha: 2.0 },
            DivergenceKind::Bhattacharyya,
            DivergenceKind::Wasserstein1d,
            DivergenceKind::FDiv(ConvexFn::chi_squared()),
        ]
    }

    #[test]
    fn grad_matches_finite_differences_across_grid() {
        let mut seed = 100;
        for kernel in kernel_grid() {
            for div in divergence_grid() {
                let config =
                    ObjectiveConfig::new(0.5, 1.0, 0.5, kernel.clone(), div.clone()).unwrap();
                for _ in 0..3 {
                    seed += 1;
                    let scenario = crate::loss::certification_scenario(
                        crate::num::RandomSeed(seed),
                        3,
                        4,
                        2,
                    )
                    .unwrap();
                    let report = grad_check(
                        &config,
                        &scenario.policy,
                        &scenario.records,
                        &scenario.ref_dists,
                    )
                    .unwrap();
                    assert!(
                        report.max_rel_err <= 1e-4,
                        "{} / {}: rel err {}",
                        kernel.name(),
                        div.name(),
                        report.max_rel_err
                    );
                }
            }
        }
    }

    #[test]
    fn mutated_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = random_policy(&mut rng, 2, 3, 2);
        let recs = records(&mut rng, 2, 3, 4);
        let refs = random_refs(&mut rng, &recs, 3);
        let config = ObjectiveConfig::new(
            0.5,
            1.0,
            0.5,
            KernelChoice::Single {
                spec: KernelSpec::rbf(1.0).unwrap(),
            },
            DivergenceKind::Kl,
        )
        .unwrap();
        let mut analytic = analytic_grad(&config, &policy, &recs, &refs).unwrap();
        let numeric =
            crate::loss::finite_diff_grad(&config, &policy, &recs, &refs, 1e-5).unwrap();
        // Zero out the largest coordinate and the check must fail loudly.
        let (idx, _) = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        analytic[idx] = 0.0;
        assert!(max_rel_err(&analytic, &numeric) > 1e-2);
    }

    #[test]
    fn fdiv_without_derivative_is_rejected() {
        let f = ConvexFn::new("no_deriv", |t| t * t - 1.0, None, None);
        // t^2 - 1 vanishes at 1, valid generator with no derivative.
        let f = f.unwrap();
        let p = ProbabilityDistribution::new(vec![0.5, 0.5]).unwrap();
        let q = ProbabilityDistribution::new(vec![0.4, 0.6]).unwrap();
        let err = divergence_grad_p(&DivergenceKind::FDiv(f), &p, &q).unwrap_err();
        assert!(matches!(err, Error::NotDifferentiableHere(_)));
    }
}
