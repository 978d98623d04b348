//! Toy table policy: a logit table over (context, outcome) pairs plus
//! learnable context/outcome embedding tables.
//!
//! The policy is linear in its parameters, so the abstract score-function
//! gradients have exact closed forms and the finite-difference oracle stays
//! cheap. The flattened parameter layout is logits row-major, then the
//! context table U, then the outcome table V.

use serde::{Deserialize, Serialize};

use crate::loss::TripletSignals;
use crate::num::{dot, log_softmax_slice, softmax_slice, ProbabilityDistribution, RealMatrix};
use crate::{Error, Result};

/// One preference observation: context index plus preferred/rejected
/// outcome indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPreferenceRecord")]
pub struct PreferenceRecord {
    pub x: usize,
    pub y_pos: usize,
    pub y_neg: usize,
}

#[derive(Deserialize)]
struct RawPreferenceRecord {
    x: usize,
    y_pos: usize,
    y_neg: usize,
}

impl TryFrom<RawPreferenceRecord> for PreferenceRecord {
    type Error = Error;
    fn try_from(raw: RawPreferenceRecord) -> Result<Self> {
        Self::new(raw.x, raw.y_pos, raw.y_neg)
    }
}

impl PreferenceRecord {
    pub fn new(x: usize, y_pos: usize, y_neg: usize) -> Result<Self> {
        if y_pos == y_neg {
            return Err(Error::InvalidInput(
                "preferred and rejected outcomes must differ".into(),
            ));
        }
        Ok(Self { x, y_pos, y_neg })
    }
}

/// Table policy: `π(·|x) = softmax(logits[x])`, `e_x = U[x]`, `e_y = V[y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToyPolicy")]
pub struct ToyPolicy {
    pub logits: RealMatrix,
    pub u: RealMatrix,
    pub v: RealMatrix,
}

#[derive(Deserialize)]
struct RawToyPolicy {
    logits: RealMatrix,
    u: RealMatrix,
    v: RealMatrix,
}

impl TryFrom<RawToyPolicy> for ToyPolicy {
    type Error = Error;
    fn try_from(raw: RawToyPolicy) -> Result<Self> {
        Self::new(raw.logits, raw.u, raw.v)
    }
}

impl ToyPolicy {
    pub fn new(logits: RealMatrix, u: RealMatrix, v: RealMatrix) -> Result<Self> {
        if logits.cols() < 2 {
            return Err(Error::InvalidInput(
                "policy needs at least 2 outcomes".into(),
            ));
        }
        if u.rows() != logits.rows() {
            return Err(Error::InvalidInput(format!(
                "context table has {} rows for {} contexts",
                u.rows(),
                logits.rows()
            )));
        }
        if v.rows() != logits.cols() {
            return Err(Error::InvalidInput(format!(
                "outcome table has {} rows for {} outcomes",
                v.rows(),
                logits.cols()
            )));
        }
        if u.cols() != v.cols() {
            return Err(Error::InvalidInput(format!(
                "embedding dims differ: {} vs {}",
                u.cols(),
                v.cols()
            )));
        }
        Ok(Self { logits, u, v })
    }

    pub fn contexts(&self) -> usize {
        self.logits.rows()
    }

    pub fn outcomes(&self) -> usize {
        self.logits.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.u.cols()
    }

    fn check_record(&self, record: &PreferenceRecord) -> Result<()> {
        if record.x >= self.contexts() {
            return Err(Error::InvalidInput(format!(
                "context index {} out of range ({} contexts)",
                record.x,
                self.contexts()
            )));
        }
        if record.y_pos >= self.outcomes() || record.y_neg >= self.outcomes() {
            return Err(Error::InvalidInput(format!(
                "outcome index out of range ({} outcomes)",
                self.outcomes()
            )));
        }
        Ok(())
    }

    /// π(·|x) for one context row.
    pub fn distribution(&self, x: usize) -> Result<ProbabilityDistribution> {
        if x >= self.contexts() {
            return Err(Error::InvalidInput(format!(
                "context index {x} out of range"
            )));
        }
        ProbabilityDistribution::new(softmax_slice(self.logits.row(x)))
    }

    /// Log-probabilities and embedding dot products for one record.
    pub fn forward(&self, record: &PreferenceRecord) -> Result<TripletSignals> {
        self.check_record(record)?;
        let logp = log_softmax_slice(self.logits.row(record.x));
        let ex = self.u.row(record.x);
        TripletSignals::new(
            logp[record.y_pos],
            logp[record.y_neg],
            dot(ex, self.v.row(record.y_pos)),
            dot(ex, self.v.row(record.y_neg)),
        )
    }

    /// Gradient of ln π(y|x) over the logits row x.
    ///
    /// For the table policy the score gradient is one-hot, so this is
    /// onehot(y) − π(·|x); entries always sum to zero.
    pub fn log_prob_grad(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        if x >= self.contexts() || y >= self.outcomes() {
            return Err(Error::InvalidInput("index out of range".into()));
        }
        let probs = softmax_slice(self.logits.row(x));
        Ok(probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == y { 1.0 - p } else { -p })
            .collect())
    }

    /// Total number of free parameters.
    pub fn param_count(&self) -> usize {
        self.contexts() * self.outcomes() + (self.contexts() + self.outcomes()) * self.embed_dim()
    }

    /// Flattened parameter vector: logits, then U, then V, all row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.logits.as_slice());
        out.extend_from_slice(self.u.as_slice());
        out.extend_from_slice(self.v.as_slice());
        out
    }

    /// Rebuilds the tables from a flattened vector laid out as
    /// [`ToyPolicy::to_flat`] produces.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} != {}",
                flat.len(),
                self.param_count()
            )));
        }
        let nl = self.contexts() * self.outcomes();
        let nu = self.contexts() * self.embed_dim();
        let logits = RealMatrix::new(self.contexts(), self.outcomes(), flat[..nl].to_vec())?;
        let u = RealMatrix::new(self.contexts(), self.embed_dim(), flat[nl..nl + nu].to_vec())?;
        let v = RealMatrix::new(
            self.outcomes(),
            self.embed_dim(),
            flat[nl + nu..].to_vec(),
        )?;
        Self::new(logits, u, v)
    }

    /// Offsets of the three parameter blocks in the flattened layout:
    /// (logits start, U start, V start).
    pub(crate) fn block_offsets(&self) -> (usize, usize, usize) {
        let nl = self.contexts() * self.outcomes();
        let nu = self.contexts() * self.embed_dim();
        (0, nl, nl + nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_policy() -> ToyPolicy {
        let logits =
            RealMatrix::from_rows(vec![vec![2.0_f64.ln(), 0.0], vec![0.0, 0.0]]).unwrap();
        let u = RealMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = RealMatrix::from_rows(vec![vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        ToyPolicy::new(logits, u, v).unwrap()
    }

    #[test]
    fn forward_log_ratio_and_dots() {
        let p = small_policy();
        let sig = p
            .forward(&PreferenceRecord::new(0, 0, 1).unwrap())
            .unwrap();
        assert_relative_eq!(sig.z(), 2.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(sig.dot_pos, 2.0, epsilon = 1e-15);
        assert_relative_eq!(sig.dot_neg, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_row_gives_zero_log_ratio() {
        let p = small_policy();
        let sig = p
            .forward(&PreferenceRecord::new(1, 0, 1).unwrap())
            .unwrap();
        assert_relative_eq!(sig.z(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_embeddings_give_zero_dot() {
        let p = small_policy();
        // Context 1 embedding (0,1) is orthogonal to both outcome rows.
        let sig = p
            .forward(&PreferenceRecord::new(1, 0, 1).unwrap())
            .unwrap();
        assert_eq!(sig.dot_neg, 0.0);
        assert!(sig.ratio().is_err());
    }

    #[test]
    fn log_prob_grad_is_onehot_minus_probs() {
        let logits = RealMatrix::from_rows(vec![vec![0.0; 4]]).unwrap();
        let u = RealMatrix::from_rows(vec![vec![0.1]]).unwrap();
        let v = RealMatrix::from_rows(vec![vec![0.1]; 4]).unwrap();
        let p = ToyPolicy::new(logits, u, v).unwrap();
        let g = p.log_prob_grad(0, 2).unwrap();
        assert_relative_eq!(g[0], -0.25, epsilon = 1e-12);
        assert_relative_eq!(g[1], -0.25, epsilon = 1e-12);
        assert_relative_eq!(g[2], 0.75, epsilon = 1e-12);
        assert_relative_eq!(g[3], -0.25, epsilon = 1e-12);
        let sum: f64 = g.iter().sum();
        assert!(sum.abs() <= 1e-12);
    }

    #[test]
    fn saturated_row_has_vanishing_gradient() {
        let logits = RealMatrix::from_rows(vec![vec![50.0, 0.0]]).unwrap();
        let u = RealMatrix::from_rows(vec![vec![0.1]]).unwrap();
        let v = RealMatrix::from_rows(vec![vec![0.1]; 2]).unwrap();
        let p = ToyPolicy::new(logits, u, v).unwrap();
        let g = p.log_prob_grad(0, 0).unwrap();
        assert!(g.iter().all(|gi| gi.abs() < 1e-12));
    }

    #[test]
    fn flat_round_trip() {
        let p = small_policy();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.param_count());
        let q = p.with_flat(&flat).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn record_validation() {
        assert!(PreferenceRecord::new(0, 1, 1).is_err());
        let p = small_policy();
        assert!(p.forward(&PreferenceRecord::new(5, 0, 1).unwrap()).is_err());
    }
}
