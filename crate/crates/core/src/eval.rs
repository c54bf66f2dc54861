//! Hotspot–error overlap against token-index annotations, and synthetic
//! entropy series with planted error spans.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::entropy::EntropySeries;
use crate::error::{Error, Result};
use crate::hotspot::HotspotReport;

/// Tokens one annotator marked as wrong, by 1-based index into the emitted
/// token stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    #[serde(rename = "doc")]
    pub document_id: String,
    #[serde(rename = "annotator")]
    pub annotator_id: String,
    #[serde(rename = "flagged")]
    pub flagged_tokens: BTreeSet<usize>,
}

impl AnnotationSet {
    pub fn new(
        document_id: impl Into<String>,
        annotator_id: impl Into<String>,
        flagged: impl IntoIterator<Item = usize>,
    ) -> Self {
        Self {
            document_id: document_id.into(),
            annotator_id: annotator_id.into(),
            flagged_tokens: flagged.into_iter().collect(),
        }
    }

    /// Checks every index against a transcript of `n` tokens.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.flagged_tokens.iter().find(|&&i| i == 0 || i > n) {
            Some(bad) => Err(Error::validation(format!(
                "annotation {} flags token {bad}, outside 1..={n}",
                self.annotator_id
            ))),
            None => Ok(()),
        }
    }
}

/// Tokens flagged by any annotator.
pub fn union_annotations(sets: &[AnnotationSet]) -> Result<AnnotationSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Structure("no annotation sets to merge".into()))?;
    if let Some(other) = sets.iter().find(|s| s.document_id != first.document_id) {
        return Err(Error::Structure(format!(
            "annotations refer to different documents: {:?} and {:?}",
            first.document_id, other.document_id
        )));
    }
    Ok(AnnotationSet {
        document_id: first.document_id.clone(),
        annotator_id: "union".into(),
        flagged_tokens: sets
            .iter()
            .flat_map(|s| s.flagged_tokens.iter().copied())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    /// Flagged tokens inside some hotspot.
    pub inside: usize,
    pub outside: usize,
    /// `inside / (inside + outside)`; `None` when nothing was flagged.
    pub recall: Option<f64>,
    pub budget_fraction: f64,
    /// True when the annotation flagged no tokens.
    pub empty: bool,
}

pub fn overlap(report: &HotspotReport, annotations: &AnnotationSet) -> OverlapResult {
    let inside = annotations
        .flagged_tokens
        .iter()
        .filter(|&&t| report.is_flagged(t))
        .count();
    let total = annotations.flagged_tokens.len();
    OverlapResult {
        inside,
        outside: total - inside,
        recall: (total > 0).then(|| inside as f64 / total as f64),
        budget_fraction: report.budget_fraction,
        empty: total == 0,
    }
}

/// A planted error region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpan {
    /// 1-based first token.
    pub start: usize,
    pub length: usize,
    /// Entropy added to every token in the span.
    pub spike_bits: f64,
}

impl PlantedSpan {
    fn end(&self) -> usize {
        self.start + self.length - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub baseline_mean: f64,
    pub baseline_noise_sd: f64,
    pub spans: Vec<PlantedSpan>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Places `count` spans of `length` tokens at seeded random positions,
    /// leaving at least `min_gap` baseline tokens between consecutive spans.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_spans(
        n: usize,
        baseline_mean: f64,
        baseline_noise_sd: f64,
        count: usize,
        length: usize,
        spike_bits: f64,
        min_gap: usize,
        seed: u64,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::domain("span length must be at least 1"));
        }
        let needed = count * length + count.saturating_sub(1) * min_gap;
        if needed > n {
            return Err(Error::domain(format!(
                "{count} spans of length {length} with gap {min_gap} need {needed} tokens but n = {n}"
            )));
        }
        // Distribute the slack as random offsets: choose count sorted cut
        // points in 0..=slack (stars and bars).
        let slack = n - needed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a4a);
        let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
        cuts.sort_unstable();
        let spans = cuts
            .iter()
            .enumerate()
            .map(|(i, &cut)| PlantedSpan {
                start: 1 + cut + i * (length + min_gap),
                length,
                spike_bits,
            })
            .collect();
        let spec = Self {
            n,
            baseline_mean,
            baseline_noise_sd,
            spans,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("synthetic series needs n >= 1"));
        }
        if !(self.baseline_noise_sd >= 0.0) || !self.baseline_noise_sd.is_finite() {
            return Err(Error::domain("baseline noise sd must be finite and non-negative"));
        }
        if !self.baseline_mean.is_finite() {
            return Err(Error::domain("baseline mean must be finite"));
        }
        let mut sorted = self.spans.clone();
        sorted.sort_by_key(|s| s.start);
        for span in &sorted {
            if span.length == 0 || span.start == 0 || span.end() > self.n {
                return Err(Error::domain(format!(
                    "span at {} of length {} does not fit in 1..={}",
                    span.start, span.length, self.n
                )));
            }
            if !(span.spike_bits > 0.0) || !span.spike_bits.is_finite() {
                return Err(Error::domain("spike_bits must be positive"));
            }
        }
        if let Some(pair) = sorted.windows(2).find(|p| p[1].start <= p[0].end()) {
            return Err(Error::domain(format!(
                "spans starting at {} and {} overlap",
                pair[0].start, pair[1].start
            )));
        }
        Ok(())
    }

    pub fn document_id(&self) -> String {
        format!("synthetic-{}", self.seed)
    }
}

/// Draws a synthetic entropy series and the planted ground truth.
///
/// Baseline values come from a normal distribution clipped at zero; tokens in
/// a span get `spike_bits` added. The output depends only on the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EntropySeries, AnnotationSet)> {
    spec.validate()?;
    let normal = Normal::new(spec.baseline_mean, spec.baseline_noise_sd)
        .map_err(|e| Error::domain(format!("noise model: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values: Vec<f64> = (0..spec.n)
        .map(|_| normal.sample(&mut rng).max(0.0))
        .collect();
    let mut truth = BTreeSet::new();
    for span in &spec.spans {
        for t in span.start..=span.end() {
            values[t - 1] += span.spike_bits;
            truth.insert(t);
        }
    }
    let series = EntropySeries::from_values(values)?;
    Ok((
        series,
        AnnotationSet {
            document_id: spec.document_id(),
            annotator_id: "planted".into(),
            flagged_tokens: truth,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hotspot::{select_top_m, Hotspot, Strategy};
    use crate::windowing::window_means;
    use proptest::prelude::*;

    fn report_with(spans: &[(usize, usize)], n: usize, w: usize) -> HotspotReport {
        let hotspots: Vec<Hotspot> = spans
            .iter()
            .map(|&(start, end)| Hotspot {
                start,
                end,
                score: 1.0,
            })
            .collect();
        let covered: BTreeSet<usize> = spans.iter().flat_map(|&(s, e)| s..=e).collect();
        HotspotReport {
            strategy: Strategy::Rank {
                m: spans.len().max(1),
                suppress_overlap: true,
            },
            window_length: w,
            hotspots,
            shading: vec![0.0; n],
            budget_fraction: covered.len() as f64 / n as f64,
        }
    }

    #[test]
    fn union_examples() {
        let a = AnnotationSet::new("d", "a", [1, 2]);
        let b = AnnotationSet::new("d", "b", [2, 3]);
        let u = union_annotations(&[a.clone(), b]).unwrap();
        assert_eq!(u.flagged_tokens, BTreeSet::from([1, 2, 3]));
        assert_eq!(u.annotator_id, "union");

        let single = union_annotations(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.flagged_tokens, a.flagged_tokens);

        let sets = [
            AnnotationSet::new("d", "a", [1, 2]),
            AnnotationSet::new("d", "b", [3, 4, 5]),
            AnnotationSet::new("d", "c", [6, 7, 8, 9]),
        ];
        assert_eq!(union_annotations(&sets).unwrap().flagged_tokens.len(), 9);
    }

    #[test]
    fn union_rejects_mixed_documents() {
        let sets = [AnnotationSet::new("d1", "a", [1]), AnnotationSet::new("d2", "b", [1])];
        assert!(matches!(union_annotations(&sets), Err(Error::Structure(_))));
        assert!(union_annotations(&[]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let r = overlap(&report_with(&[(3, 5)], 10, 3), &AnnotationSet::new("d", "a", [4]));
        assert_eq!((r.inside, r.outside, r.recall), (1, 0, Some(1.0)));

        let r = overlap(&report_with(&[(3, 5)], 10, 3), &AnnotationSet::new("d", "a", []));
        assert!(r.empty);
        assert_eq!(r.recall, None);

        let r = overlap(
            &report_with(&[(8, 12), (18, 22)], 30, 5),
            &AnnotationSet::new("d", "a", [1, 10, 20]),
        );
        assert_eq!((r.inside, r.outside), (2, 1));
        assert_eq!(r.recall, Some(2.0 / 3.0));
        assert_eq!(r.budget_fraction, 10.0 / 30.0);
    }

    #[test]
    fn annotation_json_format() {
        let a: AnnotationSet =
            serde_json::from_str(r#"{"doc":"p1","annotator":"A","flagged":[5,2,5]}"#).unwrap();
        assert_eq!(a.flagged_tokens, BTreeSet::from([2, 5]));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"doc":"p1","annotator":"A","flagged":[2,5]}"#
        );
        assert!(a.validate(5).is_ok());
        assert!(a.validate(4).is_err());
        assert!(AnnotationSet::new("p", "a", [0]).validate(3).is_err());
    }

    #[test]
    fn noiseless_spike_is_exact() {
        let spec = SyntheticSpec {
            n: 20,
            baseline_mean: 0.0,
            baseline_noise_sd: 0.0,
            spans: vec![PlantedSpan {
                start: 6,
                length: 4,
                spike_bits: 2.0,
            }],
            seed: 1,
        };
        let (series, truth) = generate_synthetic(&spec).unwrap();
        for (i, &v) in series.values().iter().enumerate() {
            let expected = if (6..=9).contains(&(i + 1)) { 2.0 } else { 0.0 };
            assert_eq!(v, expected, "position {}", i + 1);
        }
        assert_eq!(truth.flagged_tokens, (6..=9).collect());
    }

    #[test]
    fn same_seed_same_series() {
        let spec = SyntheticSpec::with_random_spans(500, 0.3, 0.1, 3, 8, 2.0, 10, 7).unwrap();
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().0, generate_synthetic(&other).unwrap().0);
    }

    #[test]
    fn baseline_is_clipped_at_zero() {
        let spec = SyntheticSpec {
            n: 2000,
            baseline_mean: 0.0,
            baseline_noise_sd: 1.0,
            spans: vec![],
            seed: 3,
        };
        let (series, _) = generate_synthetic(&spec).unwrap();
        assert!(series.values().iter().all(|&v| v >= 0.0));
        assert!(series.values().contains(&0.0));
    }

    #[test]
    fn invalid_specs() {
        let base = SyntheticSpec {
            n: 50,
            baseline_mean: 0.3,
            baseline_noise_sd: 0.1,
            spans: vec![
                PlantedSpan { start: 5, length: 5, spike_bits: 1.0 },
                PlantedSpan { start: 9, length: 3, spike_bits: 1.0 },
            ],
            seed: 0,
        };
        assert!(generate_synthetic(&base).is_err());
        let mut s = base.clone();
        s.spans = vec![PlantedSpan { start: 48, length: 5, spike_bits: 1.0 }];
        assert!(s.validate().is_err());
        s.spans = vec![PlantedSpan { start: 1, length: 5, spike_bits: 0.0 }];
        assert!(s.validate().is_err());
        assert!(SyntheticSpec::with_random_spans(20, 0.3, 0.1, 3, 8, 2.0, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn overlap_ignores_annotator_order(
            a in proptest::collection::btree_set(1usize..60, 0..15),
            b in proptest::collection::btree_set(1usize..60, 0..15),
            start in 1usize..50,
        ) {
            let report = report_with(&[(start, start + 9)], 60, 10);
            let x = AnnotationSet::new("d", "x", a);
            let y = AnnotationSet::new("d", "y", b);
            let r1 = overlap(&report, &union_annotations(&[x.clone(), y.clone()]).unwrap());
            let r2 = overlap(&report, &union_annotations(&[y, x]).unwrap());
            prop_assert_eq!(&r1, &r2);
            if let Some(rec) = r1.recall {
                prop_assert!((0.0..=1.0).contains(&rec));
            }
        }

        #[test]
        fn noiseless_single_span_is_found(n in 20usize..300, length in 1usize..18, w in 1usize..12, spike in 0.01f64..5.0, seed in any::<u64>()) {
            let spec = SyntheticSpec::with_random_spans(n, 0.0, 0.0, 1, length, spike, 0, seed).unwrap();
            let (series, truth) = generate_synthetic(&spec).unwrap();
            let report = select_top_m(&window_means(series.values(), w).unwrap(), 1, true).unwrap();
            let r = overlap(&report, &truth);
            prop_assert_eq!(r.inside + r.outside, truth.flagged_tokens.len());
            if length <= w {
                // some window holds the whole span, and only those reach the top score
                prop_assert_eq!(r.recall, Some(1.0));
            } else {
                // a single window can only cover W of the planted tokens
                prop_assert_eq!(r.inside, w);
            }
        }
    }
}
