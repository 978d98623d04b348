//! The four kernel families, evaluable three ways:
//!
//! - **scalar** form on the log-probability ratio z,
//! - **embedding** form on the dot-product pair (the ratio-based column of
//!   the kernelized loss expansion),
//! - **vector** form on raw embedding pairs, for standalone similarity
//!   evaluation and range plots.
//!
//! The spectral family uses a cosine eigenbasis φ_i(z) = cos(i z) with
//! configured decay rates; it is the one family with a closed-form
//! derivative for every term, which the gradient path requires.

use serde::{Deserialize, Serialize};

use crate::num::{dot, euclidean_distance, RealVector, SpdMatrix};
use crate::{Error, Result};

/// Eigenfunction family for the spectral kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralBasis {
    #[default]
    Cosine,
}

/// Basis function and its derivative: (φ_i(z), φ_i'(z)).
///
/// For the cosine family φ_i(z) = cos(i z), φ_i'(z) = −i sin(i z).
/// The index is 1-based; 0 is out of range.
pub fn spectral_basis(i: usize, z: f64) -> Result<(f64, f64)> {
    if i == 0 {
        return Err(Error::InvalidInput("spectral basis index starts at 1".into()));
    }
    let iz = i as f64 * z;
    Ok((iz.cos(), -(i as f64) * iz.sin()))
}

/// Kernel family with its hyperparameters.
///
/// Recommended ranges: polynomial degree 2..=5 (default 2), RBF bandwidth
/// 0.1..=2.0 (default 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Polynomial {
        c: f64,
        degree: u32,
    },
    Rbf {
        sigma: f64,
    },
    Spectral {
        lambdas: Vec<f64>,
        #[serde(default)]
        basis: SpectralBasis,
    },
    MahalanobisScalar {
        mu: f64,
        sigma: f64,
        mu_prime: f64,
        sigma_prime: f64,
    },
    MahalanobisVector {
        sigma: SpdMatrix,
    },
}

impl KernelSpec {
    pub fn polynomial(c: f64, degree: u32) -> Result<Self> {
        let spec = Self::Polynomial { c, degree };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        let spec = Self::Rbf { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn spectral(lambdas: Vec<f64>) -> Result<Self> {
        let spec = Self::Spectral {
            lambdas,
            basis: SpectralBasis::Cosine,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mahalanobis_scalar(mu: f64, sigma: f64, mu_prime: f64, sigma_prime: f64) -> Result<Self> {
        let spec = Self::MahalanobisScalar {
            mu,
            sigma,
            mu_prime,
            sigma_prime,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Polynomial { .. } => "polynomial",
            Self::Rbf { .. } => "rbf",
            Self::Spectral { .. } => "spectral",
            Self::MahalanobisScalar { .. } => "mahalanobis_scalar",
            Self::MahalanobisVector { .. } => "mahalanobis_vector",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Polynomial { c, degree } => {
                if !c.is_finite() {
                    return Err(Error::InvalidInput("polynomial bias must be finite".into()));
                }
                // Recommended degrees are 2..=5; anything past the cap is
                // certainly a mistake and would wrap the exponent cast.
                if !(1..=1000).contains(degree) {
                    return Err(Error::InvalidInput(format!(
                        "polynomial degree must lie in 1..=1000, got {degree}"
                    )));
                }
            }
            Self::Rbf { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "rbf bandwidth must be positive, got {sigma}"
                    )));
                }
            }
            Self::Spectral { lambdas, .. } => {
                if lambdas.is_empty() {
                    return Err(Error::InvalidInput(
                        "spectral kernel needs at least one component".into(),
                    ));
                }
                if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                    return Err(Error::InvalidInput(
                        "spectral decay rates must all be positive".into(),
                    ));
                }
            }
            Self::MahalanobisScalar {
                mu,
                sigma,
                mu_prime,
                sigma_prime,
            } => {
                if !(mu.is_finite() && mu_prime.is_finite()) {
                    return Err(Error::InvalidInput("mahalanobis means must be finite".into()));
                }
                if !(sigma.is_finite() && *sigma > 0.0)
                    || !(sigma_prime.is_finite() && *sigma_prime > 0.0)
                {
                    return Err(Error::InvalidInput(
                        "mahalanobis bandwidths must be positive".into(),
                    ));
                }
            }
            Self::MahalanobisVector { .. } => {} // SPD enforced by SpdMatrix.
        }
        Ok(())
    }
}

/// Scalar-form kernel value κ(z).
pub fn scalar_kernel(spec: &KernelSpec, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::InvalidInput(format!("scalar kernel argument {z}")));
    }
    match spec {
        KernelSpec::Polynomial { c, degree } => Ok((z + c).powi(*degree as i32)),
        KernelSpec::Rbf { sigma } => Ok((-z * z / (2.0 * sigma * sigma)).exp()),
        KernelSpec::Spectral { lambdas, .. } => {
            let mut total = 0.0;
            for (idx, &lam) in lambdas.iter().enumerate() {
                let (phi, _) = spectral_basis(idx + 1, z)?;
                total += (-lam * z * z).exp() * phi;
            }
            Ok(total)
        }
        KernelSpec::MahalanobisScalar { mu, sigma, .. } => {
            let d = z - mu;
            Ok((-d * d / (2.0 * sigma * sigma)).exp())
        }
        KernelSpec::MahalanobisVector { .. } => Err(Error::InvalidKernelForm(
            "mahalanobis_vector has no scalar form".into(),
        )),
    }
}

/// Embedding-side kernel value for a (dot_pos, dot_neg) pair, following the
/// ratio-based expansion of each family:
///
/// - polynomial: ((dot_pos + c)/(dot_neg + c))^d
/// - rbf: exp(−r²/2σ²) with r = dot_pos/dot_neg
/// - spectral: Σ_i exp(−λ_i r²) φ_i(r)
/// - mahalanobis: exp(−(r − μ')²/2σ'²)
pub fn scalar_kernel_embed(spec: &KernelSpec, dot_pos: f64, dot_neg: f64) -> Result<f64> {
    match spec {
        KernelSpec::Polynomial { c, degree } => {
            let denom = dot_neg + c;
            if denom == 0.0 {
                return Err(Error::DegenerateRatio(
                    "polynomial embedding denominator dot_neg + c is zero".into(),
                ));
            }
            Ok(((dot_pos + c) / denom).powi(*degree as i32))
        }
        KernelSpec::Rbf { .. } | KernelSpec::Spectral { .. } | KernelSpec::MahalanobisScalar { .. } => {
            let r = embed_ratio(dot_pos, dot_neg)?;
            match spec {
                KernelSpec::Rbf { sigma } => Ok((-r * r / (2.0 * sigma * sigma)).exp()),
                KernelSpec::Spectral { lambdas, .. } => {
                    let mut total = 0.0;
                    for (idx, &lam) in lambdas.iter().enumerate() {
                        let (phi, _) = spectral_basis(idx + 1, r)?;
                        total += (-lam * r * r).exp() * phi;
                    }
                    Ok(total)
                }
                KernelSpec::MahalanobisScalar {
                    mu_prime,
                    sigma_prime,
                    ..
                } => {
                    let d = r - mu_prime;
                    Ok((-d * d / (2.0 * sigma_prime * sigma_prime)).exp())
                }
                _ => unreachable!(),
            }
        }
        KernelSpec::MahalanobisVector { .. } => Err(Error::InvalidKernelForm(
            "mahalanobis_vector has no embedding-ratio form".into(),
        )),
    }
}

/// dot_pos/dot_neg, rejecting a zero denominator.
pub fn embed_ratio(dot_pos: f64, dot_neg: f64) -> Result<f64> {
    if dot_neg == 0.0 {
        return Err(Error::DegenerateRatio("dot_neg is zero".into()));
    }
    let r = dot_pos / dot_neg;
    if !r.is_finite() {
        return Err(Error::DegenerateRatio(format!(
            "ratio {dot_pos}/{dot_neg} is not finite"
        )));
    }
    Ok(r)
}

/// Vector-form kernel value κ(u, v).
pub fn vector_kernel(spec: &KernelSpec, u: &RealVector, v: &RealVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidInput(format!(
            "vector kernel: dimension mismatch {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let (us, vs) = (u.as_slice(), v.as_slice());
    match spec {
        KernelSpec::Polynomial { c, degree } => Ok((dot(us, vs) + c).powi(*degree as i32)),
        KernelSpec::Rbf { sigma } => {
            let d = euclidean_distance(us, vs);
            Ok((-d * d / (2.0 * sigma * sigma)).exp())
        }
        KernelSpec::Spectral { lambdas, .. } => {
            let d = euclidean_distance(us, vs);
            let uv = dot(us, vs);
            let mut total = 0.0;
            for (idx, &lam) in lambdas.iter().enumerate() {
                let (phi, _) = spectral_basis(idx + 1, uv)?;
                total += (-lam * d * d).exp() * phi;
            }
            Ok(total)
        }
        KernelSpec::MahalanobisScalar { .. } => Err(Error::InvalidKernelForm(
            "mahalanobis_scalar has no vector form".into(),
        )),
        KernelSpec::MahalanobisVector { sigma } => {
            let diff: Vec<f64> = us.iter().zip(vs).map(|(a, b)| a - b).collect();
            let q = sigma.inv_quadratic(&diff)?;
            Ok((-q / 2.0).exp())
        }
    }
}

/// Distance at which a kernel decays to 1% of its self-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRange {
    pub r: f64,
    pub r_major: Option<f64>,
    pub r_minor: Option<f64>,
}

const DECAY_FRACTION: f64 = 0.01;

/// Closed-form effective range at the 1% decay threshold.
///
/// The self-value κ(u,u) is taken at a unit-norm reference point: 1 for RBF
/// and Mahalanobis, (1 + c)^d for the polynomial kernel. The spectral
/// family's range is graph-structural rather than metric, so it has none.
///
/// For the RBF family this gives r = σ·√(2 ln 100) ≈ 3.03σ. The commonly
/// quoted rule of thumb r ≈ 2.15σ is the radius of a ~10% decay threshold,
/// not the 1% threshold computed here.
pub fn effective_range(spec: &KernelSpec) -> Result<EffectiveRange> {
    match spec {
        KernelSpec::Rbf { sigma } => {
            let self_value: f64 = 1.0;
            let r = (2.0 * sigma * sigma * (self_value / DECAY_FRACTION).ln()).sqrt();
            Ok(EffectiveRange {
                r,
                r_major: None,
                r_minor: None,
            })
        }
        KernelSpec::Polynomial { c, degree } => {
            let self_value = (1.0 + c).powi(*degree as i32);
            if self_value <= 0.0 {
                return Err(Error::InvalidInput(
                    "polynomial self-value at the unit reference is not positive".into(),
                ));
            }
            let r = (DECAY_FRACTION / self_value).powf(1.0 / *degree as f64);
            Ok(EffectiveRange {
                r,
                r_major: None,
                r_minor: None,
            })
        }
        KernelSpec::MahalanobisVector { sigma } => {
            let eigs = crate::num::sym_spd_eigvals(sigma.matrix())?;
            let lam_max = eigs.as_slice()[0];
            let lam_min = *eigs.as_slice().last().expect("non-empty spectrum");
            let scale = (2.0 * (1.0 / DECAY_FRACTION).ln()).sqrt();
            let r_major = lam_max.sqrt() * scale;
            let r_minor = lam_min.sqrt() * scale;
            Ok(EffectiveRange {
                r: r_major,
                r_major: Some(r_major),
                r_minor: Some(r_minor),
            })
        }
        KernelSpec::Spectral { .. } => Err(Error::RangeUndefined),
        KernelSpec::MahalanobisScalar { .. } => Err(Error::InvalidKernelForm(
            "effective range applies to distance kernels only".into(),
        )),
    }
}
