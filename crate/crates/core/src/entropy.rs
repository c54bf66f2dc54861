//! Per-token Shannon entropy in bits.
//!
//! Endpoints only expose the k most likely tokens, so each position is scored
//! with the entropy of a k+1 outcome distribution: the explicit tokens plus one
//! tail outcome holding the missing mass. Merging outcomes never increases
//! entropy, so this is a lower bound on the full-vocabulary value.
//! [`FullDistribution`] and [`coarse_grain`] exist to check that bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token_stream::{TokenAlternative, TokenRecord, Transcript};

/// `-p log2 p` with the `0 log 0 = 0` convention.
#[inline]
fn surprisal_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Entropy of one position, with the tail mass it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEntropy {
    pub bits: f64,
    pub tail_mass: f64,
}

/// Truncated entropy of explicit probabilities plus an implied tail.
///
/// A tail that comes out negative (explicit mass a hair above one) is
/// clamped to zero.
pub fn truncated_entropy_from_probs(probs: &[f64]) -> TokenEntropy {
    let explicit: f64 = probs.iter().sum();
    let tail_mass = (1.0 - explicit).max(0.0);
    let bits = probs.iter().copied().map(surprisal_term).sum::<f64>() + surprisal_term(tail_mass);
    TokenEntropy {
        bits: bits.max(0.0),
        tail_mass,
    }
}

/// Truncated (top-k plus tail) entropy of one token record.
pub fn truncated_entropy(record: &TokenRecord) -> TokenEntropy {
    let probs: Vec<f64> = record
        .alternatives
        .iter()
        .map(TokenAlternative::probability)
        .collect();
    truncated_entropy_from_probs(&probs)
}

/// Truncated entropies for a whole transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySeries {
    values: Vec<f64>,
    tail_masses: Vec<f64>,
    excluded_special: bool,
    /// Positions whose entropy was zeroed because they are special tokens.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    zeroed: Vec<usize>,
}

impl EntropySeries {
    /// Wraps precomputed per-token entropies (no tail information).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("entropy series must not be empty"));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!(
                "entropy at position {} is {} (must be finite and non-negative)",
                bad + 1,
                values[bad]
            )));
        }
        let n = values.len();
        Ok(Self {
            values,
            tail_masses: vec![0.0; n],
            excluded_special: false,
            zeroed: Vec::new(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_masses(&self) -> &[f64] {
        &self.tail_masses
    }

    pub fn excluded_special(&self) -> bool {
        self.excluded_special
    }

    /// 1-based positions zeroed by special-token exclusion.
    pub fn zeroed_positions(&self) -> &[usize] {
        &self.zeroed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_tail_mass(&self) -> f64 {
        self.tail_masses.iter().copied().fold(0.0, f64::max)
    }
}

impl AsRef<[f64]> for EntropySeries {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Applies [`truncated_entropy`] to every token.
///
/// With `exclude_special`, special tokens score zero but keep their position,
/// so window starts still line up with token indices.
pub fn entropy_series(transcript: &Transcript, exclude_special: bool) -> EntropySeries {
    let mut values = Vec::with_capacity(transcript.len());
    let mut tail_masses = Vec::with_capacity(transcript.len());
    let mut zeroed = Vec::new();
    for record in transcript.tokens() {
        let e = truncated_entropy(record);
        tail_masses.push(e.tail_mass);
        if exclude_special && record.is_special {
            values.push(0.0);
            zeroed.push(record.index);
        } else {
            values.push(e.bits);
        }
    }
    EntropySeries {
        values,
        tail_masses,
        excluded_special: exclude_special,
        zeroed,
    }
}

/// Tolerance on the total mass of a [`FullDistribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A complete next-token distribution. Only used to test the lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDistribution {
    probabilities: Vec<f64>,
}

impl FullDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::domain("distribution needs at least one outcome"));
        }
        if probabilities
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::domain("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probabilities })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::domain("weights must be non-negative with positive sum"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// Shannon entropy in bits of a full distribution.
pub fn full_entropy(d: &FullDistribution) -> f64 {
    d.probabilities.iter().copied().map(surprisal_term).sum()
}

/// A distribution reduced to its k largest outcomes plus a merged tail.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrained {
    /// `(original index, probability)`, largest first.
    pub kept: Vec<(usize, f64)>,
    pub tail_mass: f64,
}

impl CoarseGrained {
    /// Entropy of the k+1 outcome distribution.
    pub fn entropy(&self) -> TokenEntropy {
        let probs: Vec<f64> = self.kept.iter().map(|&(_, p)| p).collect();
        truncated_entropy_from_probs(&probs)
    }

    /// The same truncation as a token record (as an endpoint would report it).
    ///
    /// Zero-probability outcomes have no finite logprob and are left out;
    /// they contribute nothing to the entropy either way.
    pub fn to_record(&self, index: usize) -> TokenRecord {
        let alternatives: Vec<TokenAlternative> = self
            .kept
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(i, p)| TokenAlternative::new(format!("v{i}"), p.ln().min(0.0)))
            .collect();
        TokenRecord {
            index,
            chosen_text: alternatives[0].text.clone(),
            alternatives,
            is_special: false,
        }
    }
}

/// Keeps the `k` most probable outcomes and merges the rest into a tail.
///
/// Ties are broken by original index, lowest first.
pub fn coarse_grain(d: &FullDistribution, k: usize) -> Result<CoarseGrained> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if k > d.len() {
        return Err(Error::domain(format!(
            "k = {k} exceeds the {} outcomes of the distribution",
            d.len()
        )));
    }
    let mut order: Vec<(usize, f64)> = d.probabilities.iter().copied().enumerate().collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
    }
    let (kept, tail) = order.split_at_mut(k);
    kept.sort_unstable_by(by_rank);
    let tail_mass = tail.iter().map(|&(_, p)| p).sum();
    let kept = kept.to_vec();
    Ok(CoarseGrained { kept, tail_mass })
}
