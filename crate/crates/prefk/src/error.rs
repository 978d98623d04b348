use thiserror::Error;

/// Errors shared across the crate.
///
/// Variants mirror the failure modes of the numeric contracts: bad or
/// mismatched inputs, degenerate geometry (zero denominators, coincident
/// centroids), and divergences that are genuinely infinite rather than
/// merely large.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix required to be symmetric positive-definite has an eigenvalue
    /// at or below the 1e-12 floor.
    #[error("matrix is singular or too ill-conditioned to factor")]
    SingularMatrix,

    /// The divergence is +inf (e.g. KL with mass where the reference has
    /// none). `pair_index` is set when the failure comes from a batch.
    #[error("divergence is infinite{}", fmt_pair(.pair_index))]
    InfiniteDivergence { pair_index: Option<usize> },

    /// Rényi order alpha = 1 is the KL limit; call the KL path directly.
    #[error("Renyi divergence with alpha = 1 is KL; use the KL divergence instead")]
    UseKlInstead,

    /// An f-divergence generator failed registration (f(1) must be 0).
    #[error("invalid f-divergence generator: {0}")]
    InvalidFunction(String),

    /// A kernel was evaluated in a form it does not support
    /// (e.g. a vector-only kernel applied to a scalar argument).
    #[error("kernel does not support this argument form: {0}")]
    InvalidKernelForm(String),

    /// The kernel has no closed-form effective range.
    #[error("effective range is undefined for this kernel")]
    RangeUndefined,

    /// The embedding dot-product ratio does not exist (zero or out-of-domain
    /// denominator).
    #[error("degenerate embedding ratio: {0}")]
    DegenerateRatio(String),

    /// No analytic gradient is available for this configuration.
    #[error("no analytic gradient for this configuration: {0}")]
    NotDifferentiableHere(String),

    /// A selection-metric denominator vanished for the triplet at `index`.
    #[error("degenerate triplet at index {index}: {reason}")]
    DegenerateTriplet { index: usize, reason: String },

    /// Kurtosis requires nonzero sample variance.
    #[error("kurtosis undefined: sample variance is zero")]
    KurtosisUndefined,

    /// Two cluster centroids coincide, so the separation ratio is undefined.
    #[error("degenerate clusters: coincident centroids")]
    DegenerateClusters,

    /// A non-finite value surfaced during optimization.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

fn fmt_pair(idx: &Option<usize>) -> String {
    match idx {
        Some(i) => format!(" (pair {i})"),
        None => String::new(),
    }
}
