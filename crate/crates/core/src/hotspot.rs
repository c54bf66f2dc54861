//! Hotspot selection over window means, and per-token shading.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::WindowSeries;

/// Default number of windows reported by rank selection.
pub const DEFAULT_TOP_M: usize = 3;

/// Default percentile for threshold selection.
pub const DEFAULT_ALPHA: f64 = 90.0;

/// A flagged token span, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub start: usize,
    pub end: usize,
    /// Mean entropy in bits (for merged percentile runs, the largest window
    /// mean inside the run).
    pub score: f64,
}

impl Hotspot {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, token: usize) -> bool {
        (self.start..=self.end).contains(&token)
    }

    fn overlaps(&self, other: &Hotspot) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Rank { m: usize, suppress_overlap: bool },
    Percentile { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotReport {
    pub strategy: Strategy,
    #[serde(rename = "W")]
    pub window_length: usize,
    /// Descending score, ties by ascending start.
    pub hotspots: Vec<Hotspot>,
    /// One value in `[0, 1]` per token.
    pub shading: Vec<f64>,
    /// Tokens covered by any hotspot, over n.
    pub budget_fraction: f64,
}

impl HotspotReport {
    pub fn series_len(&self) -> usize {
        self.shading.len()
    }

    /// Whether 1-based `token` falls inside any hotspot.
    pub fn is_flagged(&self, token: usize) -> bool {
        self.hotspots.iter().any(|h| h.contains(token))
    }

    /// Number of distinct tokens covered by the hotspots.
    pub fn flagged_token_count(&self) -> usize {
        covered_tokens(&self.hotspots, self.series_len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn covered_tokens(hotspots: &[Hotspot], n: usize) -> usize {
    let mut covered = vec![false; n + 1];
    for h in hotspots {
        for flag in &mut covered[h.start..=h.end.min(n)] {
            *flag = true;
        }
    }
    covered.iter().filter(|&&c| c).count()
}

/// Heap entry ordered so the max-heap pops the highest score first and, among
/// equal scores, the smallest start.
#[derive(Debug, PartialEq)]
struct Ranked {
    score: f64,
    start: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.start.cmp(&self.start))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sort_report_order(hotspots: &mut [Hotspot]) {
    hotspots.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)));
}

fn build_report(ws: &WindowSeries, strategy: Strategy, mut hotspots: Vec<Hotspot>) -> HotspotReport {
    sort_report_order(&mut hotspots);
    let n = ws.series_len();
    let budget_fraction = covered_tokens(&hotspots, n) as f64 / n as f64;
    HotspotReport {
        strategy,
        window_length: ws.window_length(),
        hotspots,
        shading: shading(ws, n),
        budget_fraction,
    }
}

/// Picks up to `m` windows with the largest means.
///
/// With `suppress_overlap`, each pick discards every remaining window that
/// overlaps it, so the hotspots cover distinct text.
pub fn select_top_m(ws: &WindowSeries, m: usize, suppress_overlap: bool) -> Result<HotspotReport> {
    if m == 0 {
        return Err(Error::domain("M must be at least 1"));
    }
    if ws.is_empty() {
        return Err(Error::domain("no windows to select from"));
    }
    let w = ws.window_length();
    let mut heap: BinaryHeap<Ranked> = ws
        .means()
        .iter()
        .enumerate()
        .map(|(i, &score)| Ranked { score, start: i + 1 })
        .collect();

    let mut picked: Vec<Hotspot> = Vec::with_capacity(m);
    while picked.len() < m {
        let Some(Ranked { score, start }) = heap.pop() else {
            break;
        };
        let candidate = Hotspot {
            start,
            end: start + w - 1,
            score,
        };
        if suppress_overlap && picked.iter().any(|p| p.overlaps(&candidate)) {
            continue;
        }
        picked.push(candidate);
    }
    Ok(build_report(
        ws,
        Strategy::Rank {
            m,
            suppress_overlap,
        },
        picked,
    ))
}

/// Dispatches on `strategy`.
pub fn select(ws: &WindowSeries, strategy: Strategy) -> Result<HotspotReport> {
    match strategy {
        Strategy::Rank { m, suppress_overlap } => select_top_m(ws, m, suppress_overlap),
        Strategy::Percentile { alpha } => select_percentile(ws, alpha),
    }
}

/// Nearest-rank percentile: the smallest value such that at least `alpha`
/// percent of the data is less than or equal to it.
pub fn nearest_rank_percentile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("percentile of an empty set"));
    }
    if !(alpha > 0.0 && alpha < 100.0) {
        return Err(Error::domain(format!("alpha = {alpha} must lie in (0, 100)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((alpha / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Flags every window whose mean reaches the `alpha`-th percentile and merges
/// overlapping or touching flagged windows into maximal spans.
pub fn select_percentile(ws: &WindowSeries, alpha: f64) -> Result<HotspotReport> {
    if ws.is_empty() {
        return Err(Error::domain("no windows to select from"));
    }
    let threshold = nearest_rank_percentile(ws.means(), alpha)?;
    let w = ws.window_length();

    let mut spans: Vec<Hotspot> = Vec::new();
    for (i, &mean) in ws.means().iter().enumerate() {
        if mean < threshold {
            continue;
        }
        let start = i + 1;
        let end = start + w - 1;
        match spans.last_mut() {
            Some(last) if start <= last.end + 1 => {
                last.end = end;
                last.score = last.score.max(mean);
            }
            _ => spans.push(Hotspot {
                start,
                end,
                score: mean,
            }),
        }
    }
    Ok(build_report(ws, Strategy::Percentile { alpha }, spans))
}

/// Per-token shade: the largest mean of any window covering the token,
/// min-max normalized over the document. A flat document shades to zero.
pub fn shading(ws: &WindowSeries, n: usize) -> Vec<f64> {
    let raw = max_covering_mean(ws, n);
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if raw.is_empty() || !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Sliding maximum of the window means over the windows covering each token.
/// Token `t` (0-based) is covered by window starts `t-W+1 ..= t`, clipped.
fn max_covering_mean(ws: &WindowSeries, n: usize) -> Vec<f64> {
    let means = ws.means();
    let w = ws.window_length();
    let count = means.len();
    let mut out = Vec::with_capacity(n);
    // indices into `means`, values decreasing
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut next = 0usize;
    for t in 0..n {
        let hi = t.min(count.saturating_sub(1));
        while next <= hi && next < count {
            while deque.back().is_some_and(|&b| means[b] <= means[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = (t + 1).saturating_sub(w);
        while deque.front().is_some_and(|&f| f < lo) {
            deque.pop_front();
        }
        out.push(deque.front().map_or(0.0, |&f| means[f]));
    }
    out
}
