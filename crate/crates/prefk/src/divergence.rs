//! Divergence measures between discrete distributions, used to regularize a
//! learned policy toward a reference policy.
//!
//! All measures are discrete sums over the shared index support, in nats
//! (natural log), including the Rényi family.
//!
//! Zero-probability convention throughout: 0·ln(0/q) = 0, while positive
//! mass against zero reference mass is reported as an explicit
//! [`Error::InfiniteDivergence`] instead of a large sentinel — clamping
//! would silently corrupt downstream selection metrics.

use std::fmt;
use std::sync::Arc;

use crate::num::ProbabilityDistribution;
use crate::{Error, Result};

/// A computed divergence: nonnegative, possibly +inf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue(f64);

impl DivergenceValue {
    fn new(v: f64) -> Self {
        // Absorb roundoff slightly below zero; anything worse is a bug in
        // the formula, not the data.
        debug_assert!(v > -1e-9, "divergence {v} significantly negative");
        Self(v.max(0.0))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Convex generator of an f-divergence, registered with its name, an
/// optional derivative (needed for analytic gradients), and an optional
/// slope at infinity (the limit of f(t)/t as t → ∞, used for q = 0 mass).
#[derive(Clone)]
pub struct ConvexFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    slope_at_inf: Option<f64>,
}

impl ConvexFn {
    /// Registers a generator, checking f(1) = 0 within 1e-12.
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        slope_at_inf: Option<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let at_one = f(1.0);
        if at_one.abs() > 1e-12 {
            return Err(Error::InvalidFunction(format!(
                "{name}: f(1) = {at_one}, expected 0"
            )));
        }
        Ok(Self {
            name,
            f: Arc::new(f),
            df,
            slope_at_inf,
        })
    }

    /// f(t) = t ln t, the KL generator. f(0) taken as its limit 0.
    pub fn t_ln_t() -> Self {
        Self::new(
            "t_ln_t",
            |t| if t == 0.0 { 0.0 } else { t * t.ln() },
            Some(Arc::new(|t: f64| t.ln() + 1.0)),
            None,
        )
        .expect("t ln t vanishes at 1")
    }

    /// f(t) = (t - 1)^2, the chi-squared generator.
    pub fn chi_squared() -> Self {
        Self::new(
            "chi_squared",
            |t| (t - 1.0) * (t - 1.0),
            Some(Arc::new(|t: f64| 2.0 * (t - 1.0))),
            None,
        )
        .expect("(t-1)^2 vanishes at 1")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn derivative(&self, t: f64) -> Option<f64> {
        self.df.as_ref().map(|d| d(t))
    }

    pub fn has_derivative(&self) -> bool {
        self.df.is_some()
    }

    /// Limit of f(t)/t as t → ∞, when registered.
    pub fn slope_at_inf(&self) -> Option<f64> {
        self.slope_at_inf
    }
}

impl fmt::Debug for ConvexFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexFn").field("name", &self.name).finish()
    }
}

impl PartialEq for ConvexFn {
    /// Generators are registered under unique names; equality follows them.
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

/// The divergence family used as the policy regularizer.
#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceKind {
    Kl,
    JensenShannon,
    Hellinger,
    Renyi { alpha: f64 },
    Bhattacharyya,
    Wasserstein1d,
    FDiv(ConvexFn),
}

impl DivergenceKind {
    pub fn name(&self) -> String {
        match self {
            Self::Kl => "kl".into(),
            Self::JensenShannon => "jensen_shannon".into(),
            Self::Hellinger => "hellinger".into(),
            Self::Renyi { alpha } => format!("renyi({alpha})"),
            Self::Bhattacharyya => "bhattacharyya".into(),
            Self::Wasserstein1d => "wasserstein_1d".into(),
            Self::FDiv(f) => format!("f_div({})", f.name()),
        }
    }

    /// Checks the parameters that make the family well-defined.
    pub fn validate(&self) -> Result<()> {
        if let Self::Renyi { alpha } = self {
            if *alpha <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "Renyi order must be positive, got {alpha}"
                )));
            }
            if *alpha == 1.0 {
                return Err(Error::UseKlInstead);
            }
        }
        Ok(())
    }
}

fn check_dims(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::InvalidInput(format!(
            "divergence: dimension mismatch {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// KL(P || Q) = Σ p ln(p/q).
pub fn kl(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { pair_index: None });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(DivergenceValue::new(total))
}

/// JS(P, Q) = KL(P||M)/2 + KL(Q||M)/2 with M the midpoint. Bounded by ln 2.
pub fn jensen_shannon(
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            total += 0.5 * qi * (qi / m).ln();
        }
    }
    Ok(DivergenceValue::new(total))
}

/// Hellinger distance (1/√2)·√(Σ (√p − √q)²), in [0, 1].
pub fn hellinger(
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let s: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&pi, &qi)| {
            let d = pi.sqrt() - qi.sqrt();
            d * d
        })
        .sum();
    Ok(DivergenceValue::new(s.sqrt() / std::f64::consts::SQRT_2))
}

/// Bhattacharyya distance −ln Σ √(pq). Infinite on disjoint supports.
pub fn bhattacharyya(
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let coeff: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&pi, &qi)| (pi * qi).sqrt())
        .sum();
    if coeff <= 0.0 {
        return Err(Error::InfiniteDivergence { pair_index: None });
    }
    Ok(DivergenceValue::new(-coeff.ln()))
}

/// Rényi divergence of order alpha: (1/(α−1)) ln Σ p^α q^(1−α).
pub fn renyi(
    alpha: f64,
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    if alpha <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "Renyi order must be positive, got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return Err(Error::UseKlInstead);
    }
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            if alpha > 1.0 {
                // p^α / q^(α−1) diverges.
                return Err(Error::InfiniteDivergence { pair_index: None });
            }
            continue; // α < 1: q^(1−α) = 0 kills the term.
        }
        total += pi.powf(alpha) * qi.powf(1.0 - alpha);
    }
    if total <= 0.0 {
        return Err(Error::InfiniteDivergence { pair_index: None });
    }
    Ok(DivergenceValue::new(total.ln() / (alpha - 1.0)))
}

/// 1-D Wasserstein distance over the ordered support with unit spacing:
/// Σ_{i<C} |CDF_P(i) − CDF_Q(i)|.
pub fn wasserstein_1d(
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    let c = p.dim();
    for i in 0..c - 1 {
        cdf_gap += p.as_slice()[i] - q.as_slice()[i];
        total += cdf_gap.abs();
    }
    Ok(DivergenceValue::new(total))
}

/// f-divergence D_f(P || Q) = Σ q f(p/q).
///
/// For q = 0 with p > 0 the term follows the registered slope-at-infinity
/// limit q·f(p/q) → p·f'(∞); without one the divergence is infinite.
pub fn f_divergence(
    f: &ConvexFn,
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        let term = if qi == 0.0 {
            if pi == 0.0 {
                0.0
            } else {
                match f.slope_at_inf {
                    Some(slope) => pi * slope,
                    None => return Err(Error::InfiniteDivergence { pair_index: None }),
                }
            }
        } else {
            qi * f.eval(pi / qi)
        };
        if !term.is_finite() {
            return Err(Error::InfiniteDivergence { pair_index: None });
        }
        total += term;
    }
    Ok(DivergenceValue::new(total))
}

/// Dispatches to the divergence named by `kind`.
pub fn divergence(
    kind: &DivergenceKind,
    p: &ProbabilityDistribution,
    q: &ProbabilityDistribution,
) -> Result<DivergenceValue> {
    match kind {
        DivergenceKind::Kl => kl(p, q),
        DivergenceKind::JensenShannon => jensen_shannon(p, q),
        DivergenceKind::Hellinger => hellinger(p, q),
        DivergenceKind::Renyi { alpha } => renyi(*alpha, p, q),
        DivergenceKind::Bhattacharyya => bhattacharyya(p, q),
        DivergenceKind::Wasserstein1d => wasserstein_1d(p, q),
        DivergenceKind::FDiv(f) => f_divergence(f, p, q),
    }
}

/// Mean divergence over aligned (policy, reference) pairs — the batch
/// expectation of the regularizer. Reduces in index order.
pub fn divergence_regularizer(
    kind: &DivergenceKind,
    pairs: &[(ProbabilityDistribution, ProbabilityDistribution)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "divergence regularizer needs at least one pair".into(),
        ));
    }
    let mut total = 0.0;
    for (i, (p, q)) in pairs.iter().enumerate() {
        let v = divergence(kind, p, q).map_err(|e| match e {
            Error::InfiniteDivergence { .. } => Error::InfiniteDivergence {
                pair_index: Some(i),
            },
            other => other,
        })?;
        total += v.value();
    }
    Ok(total / pairs.len() as f64)
}
