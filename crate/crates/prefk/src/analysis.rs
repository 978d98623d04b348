//! Cluster-separation and spectral diagnostics.
//!
//! Davies-Bouldin scores quantify how well two embedding groups separate
//! during training. The heavy-tailed spectral report fits a power-law
//! exponent to the top of each layer's squared-singular-value spectrum
//! (Hill-style tail estimate over a fixed top fraction) and combines the
//! per-layer exponents with the log of the largest eigenvalue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::{euclidean_distance, sym_spd_eigvals, RandomSeed, RealMatrix, RealVector};
use crate::{Error, Result};

/// Labeled points for a k-way clustering, every cluster non-empty, k >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    points: Vec<RealVector>,
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(points: Vec<RealVector>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput("clustering needs k >= 2".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} points vs {} labels",
                points.len(),
                labels.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("clustering needs points".into()));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidInput("points have mixed dimensions".into()));
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::InvalidInput(format!("label {l} out of range for k={k}")));
            }
            counts[l] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::InvalidInput("every cluster must be non-empty".into()));
        }
        Ok(Self { points, labels, k })
    }

    /// Convenience constructor for exactly two groups.
    pub fn two_groups(group_a: &[RealVector], group_b: &[RealVector]) -> Result<Self> {
        let mut points = Vec::with_capacity(group_a.len() + group_b.len());
        let mut labels = Vec::with_capacity(points.capacity());
        points.extend_from_slice(group_a);
        labels.extend(std::iter::repeat_n(0, group_a.len()));
        points.extend_from_slice(group_b);
        labels.extend(std::iter::repeat_n(1, group_b.len()));
        Self::new(points, labels, 2)
    }
}

/// Davies-Bouldin score: mean over clusters of the worst
/// (scatter_i + scatter_j) / centroid-distance ratio. Lower is better.
pub fn davies_bouldin(assignment: &ClusterAssignment) -> Result<f64> {
    let k = assignment.k;
    let dim = assignment.points[0].dim();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in assignment.points.iter().zip(&assignment.labels) {
        for (c, v) in centroids[l].iter_mut().zip(p.as_slice()) {
            *c += v;
        }
        counts[l] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        for v in c.iter_mut() {
            *v /= n as f64;
        }
    }

    let mut scatter = vec![0.0; k];
    for (p, &l) in assignment.points.iter().zip(&assignment.labels) {
        scatter[l] += euclidean_distance(p.as_slice(), &centroids[l]);
    }
    for (s, &n) in scatter.iter_mut().zip(&counts) {
        *s /= n as f64;
    }

    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = euclidean_distance(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::DegenerateClusters);
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Descending, nonnegative eigenvalue spectrum of a Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Esd {
    eigenvalues: Vec<f64>,
}

impl Esd {
    /// Sorts the values descending; rejects negatives and non-finite input.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("spectrum must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "spectrum entries must be finite and nonnegative".into(),
            ));
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
        Ok(Self {
            eigenvalues: values,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Empirical spectral density of a weight matrix: the eigenvalues of the
/// Gram matrix on the smaller side (WᵀW or WWᵀ, whichever is smaller), so
/// a 1×n row vector yields the single eigenvalue ‖v‖².
pub fn esd_from_matrix(w: &RealMatrix) -> Result<Esd> {
    let gram = if w.rows() <= w.cols() {
        // W Wᵀ, rows x rows.
        let n = w.rows();
        let mut g = RealMatrix::zeros(n, n)?;
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, crate::num::dot(w.row(i), w.row(j)));
            }
        }
        g
    } else {
        // Wᵀ W, cols x cols.
        let n = w.cols();
        let mut g = RealMatrix::zeros(n, n)?;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for r in 0..w.rows() {
                    s += w.get(r, i) * w.get(r, j);
                }
                g.set(i, j, s);
            }
        }
        g
    };
    let eigs = sym_spd_eigvals(&gram)?;
    Esd::from_values(eigs.into_vec())
}

/// Tail-size rule for the power-law fit: k = max(min_k, fraction·n),
/// capped below n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailRule {
    pub fraction: f64,
    pub min_k: usize,
}

impl Default for TailRule {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            min_k: 2,
        }
    }
}

impl TailRule {
    pub fn k_for(&self, n: usize) -> usize {
        ((n as f64 * self.fraction).floor() as usize).max(self.min_k)
    }
}

/// Hill-style estimate of the density power-law exponent over the k
/// largest eigenvalues: 1 + k / Σ_{i≤k} ln(λ_i / λ_{k+1}).
///
/// A perfectly flat tail (all ratios 1) has an infinitely light tail and
/// the estimate is +inf.
pub fn hill_alpha(esd: &Esd, k: usize) -> Result<f64> {
    let n = esd.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "tail size must be at least 2, got {k}"
        )));
    }
    if k >= n {
        return Err(Error::InvalidInput(format!(
            "tail size {k} needs at least {} eigenvalues, got {n}",
            k + 1
        )));
    }
    let pivot = esd.eigenvalues()[k];
    if pivot <= 0.0 || esd.eigenvalues()[..k].iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput(
            "top k+1 eigenvalues must be strictly positive".into(),
        ));
    }
    let log_sum: f64 = esd.eigenvalues()[..k]
        .iter()
        .map(|&v| (v / pivot).ln())
        .sum();
    if log_sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 + k as f64 / log_sum)
}

/// Per-layer fit: tail exponent and the largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    pub alpha: f64,
    pub lambda_max: f64,
}

/// Layer fits plus the combined diagnostic.
///
/// Interpretation conventions for the tail exponent disagree: one reads
/// smaller exponents as stronger self-regularization, another prefers a
/// moderate band (roughly 2 to 4) and treats very small or very large
/// values as suspect. The report carries the numbers and leaves the
/// reading to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtsrReport {
    pub layers: Vec<LayerFit>,
    pub weighted_alpha: f64,
}

/// Weighted-alpha diagnostic: (1/L) Σ_l α_l · ln λ_max,l.
///
/// A layer whose largest eigenvalue is exactly 1 contributes 0 regardless
/// of its exponent (including the flat-spectrum +inf case). Per-layer fit
/// failures carry the layer index.
pub fn weighted_alpha(layers: &[RealMatrix], rule: &TailRule) -> Result<HtsrReport> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("weighted alpha needs at least one layer".into()));
    }
    let mut fits = Vec::with_capacity(layers.len());
    let mut total = 0.0;
    for (idx, layer) in layers.iter().enumerate() {
        let with_layer = |e: Error| Error::InvalidInput(format!("layer {idx}: {e}"));
        let esd = esd_from_matrix(layer).map_err(with_layer)?;
        let k = rule.k_for(esd.len());
        let alpha = hill_alpha(&esd, k).map_err(with_layer)?;
        let lambda_max = esd.max_eigenvalue();
        let log_max = lambda_max.ln();
        total += if log_max == 0.0 { 0.0 } else { alpha * log_max };
        fits.push(LayerFit { alpha, lambda_max });
    }
    Ok(HtsrReport {
        layers: fits,
        weighted_alpha: total / layers.len() as f64,
    })
}

/// Synthetic power-law spectrum: n draws whose density follows
/// λ^(−alpha) above x_min (so the survival exponent is alpha − 1),
/// via inverse-CDF sampling. Deterministic per seed.
pub fn pareto_eigenvalues(alpha: f64, x_min: f64, n: usize, seed: RandomSeed) -> Result<Vec<f64>> {
    if alpha <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "density exponent must exceed 1, got {alpha}"
        )));
    }
    if x_min <= 0.0 || n == 0 {
        return Err(Error::InvalidInput("need positive x_min and n".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            x_min * u.powf(-1.0 / (alpha - 1.0))
        })
        .collect())
}
