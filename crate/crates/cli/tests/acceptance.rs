//! Exit criteria. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use entroheat_core::entropy::{
    coarse_grain, entropy_series, full_entropy, truncated_entropy, truncated_entropy_from_probs,
    FullDistribution,
};
use entroheat_core::eval::{generate_synthetic, overlap, SyntheticSpec};
use entroheat_core::hotspot::{select_top_m, HotspotReport};
use entroheat_core::render::{extract_text, render_with_image, LatexEscaping, RenderMode, RenderSpec};
use entroheat_core::token_stream::{read_transcript, TokenAlternative, TokenRecord, Transcript};
use entroheat_core::windowing::{window_means, window_means_naive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE_TRANSCRIPTS: [&str; 4] = [
    "page.transcript.jsonl",
    "page2.transcript.jsonl",
    "tiny.jsonl",
    "special_chars.transcript.jsonl",
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(name: &str) -> Transcript {
    read_transcript(fs::read(fixtures().join(name)).unwrap().as_slice()).unwrap()
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.2} s of {} s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn random_distribution(rng: &mut ChaCha8Rng) -> FullDistribution {
    let size = rng.random_range(2..=64);
    loop {
        // mix flat, peaked and sparse shapes
        let shape = rng.random_range(0..3);
        let weights: Vec<f64> = (0..size)
            .map(|_| {
                let u: f64 = rng.random();
                match shape {
                    0 => u,
                    1 => u.powi(8),
                    _ => {
                        if rng.random_bool(0.3) {
                            0.0
                        } else {
                            u
                        }
                    }
                }
            })
            .collect();
        if let Ok(d) = FullDistribution::from_weights(&weights) {
            return d;
        }
    }
}

fn coarse_graining_bound() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut cases, mut bound_violations) = (0usize, 0usize);
    // equal although mass was merged, and unequal although nothing was
    let (mut equal_with_tail, mut unequal_without_tail) = (0usize, 0usize);
    let mut counterexample: Option<(f64, String)> = None;
    for _ in 0..10_000 {
        let d = random_distribution(&mut rng);
        let full = full_entropy(&d);
        for k in 1..=d.len() {
            cases += 1;
            let c = coarse_grain(&d, k).unwrap();
            let truncated = c.entropy().bits;
            if truncated > full + 1e-9 {
                bound_violations += 1;
            }
            let equal = (full - truncated).abs() <= 1e-9;
            let no_tail = c.tail_mass < 1e-12;
            if equal && !no_tail {
                equal_with_tail += 1;
                if counterexample.as_ref().is_none_or(|(tail, _)| c.tail_mass > *tail) {
                    counterexample = Some((
                        c.tail_mass,
                        format!(
                            "size {} k {}: full {full:.12} truncated {truncated:.12} tail mass {:.6}",
                            d.len(),
                            k,
                            c.tail_mass
                        ),
                    ));
                }
            } else if !equal && no_tail {
                unequal_without_tail += 1;
            }
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(5));
    verdict(
        bound_violations == 0 && equal_with_tail == 0 && unequal_without_tail == 0 && fast,
        format!(
            "{cases} (distribution, k) cases, {bound_violations} bound violations, \
             {equal_with_tail} equal with tail mass >= 1e-12, {unequal_without_tail} unequal with \
             tail mass < 1e-12{}; {timing}",
            counterexample.map(|(_, c)| format!(", e.g. {c}")).unwrap_or_default()
        ),
    )
}

fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = [1e-3, 1.0, 6.0, 1e3][rng.random_range(0..4)];
    (0..n).map(|_| rng.random::<f64>() * scale).collect()
}

fn test_series() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..1000)
        .map(|_| {
            let n = rng.random_range(1..=10_000);
            random_series(&mut rng, n)
        })
        .collect()
}

fn recurrence_matches_naive(series: &[Vec<f64>]) -> Verdict {
    let start = Instant::now();
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for values in series {
        let n = values.len();
        for w in [1, 2, 5, 10, 20, n] {
            if w > n {
                continue;
            }
            let fast = window_means(values, w).unwrap();
            let naive = window_means_naive(values, w).unwrap();
            assert_eq!(fast.len(), naive.len());
            for (a, b) in fast.means().iter().zip(naive.means()) {
                worst = worst.max((a - b).abs());
            }
            checked += 1;
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(30));
    verdict(
        worst <= 1e-9 && fast,
        format!("{checked} (series, W) pairs, max deviation {worst:.3e}; {timing}"),
    )
}

fn unit_window_is_identity(series: &[Vec<f64>]) -> Verdict {
    let mut all: Vec<Vec<f64>> = series.to_vec();
    for name in FIXTURE_TRANSCRIPTS {
        all.push(entropy_series(&load(name), false).values().to_vec());
    }
    let mismatches = all
        .iter()
        .filter(|values| {
            let ws = window_means(values, 1).unwrap();
            ws.means().iter().zip(values.iter()).any(|(a, h)| a.to_bits() != h.to_bits())
        })
        .count();
    verdict(mismatches == 0, format!("{} series, {mismatches} not bitwise identical", all.len()))
}

fn fair_coin_is_one_bit() -> Verdict {
    let direct = truncated_entropy_from_probs(&[0.5, 0.5]).bits;
    let record = TokenRecord {
        index: 1,
        chosen_text: "H".into(),
        alternatives: vec![TokenAlternative::new("H", 0.5f64.ln()), TokenAlternative::new("T", 0.5f64.ln())],
        is_special: false,
    };
    let from_logprobs = truncated_entropy(&record).bits;
    let worst = (direct - 1.0).abs().max((from_logprobs - 1.0).abs());
    verdict(worst <= 1e-12, format!("{direct} bits from probabilities, {from_logprobs} from logprobs"))
}

fn rank_report(values: &[f64]) -> HotspotReport {
    select_top_m(&window_means(values, 10).unwrap(), 3, true).unwrap()
}

fn review_budget() -> Verdict {
    let mut docs: Vec<(String, Vec<f64>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..200u64 {
        let n = rng.random_range(200..=600);
        let spec = SyntheticSpec::with_random_spans(n, 0.3, 0.1, 3, 8, 2.0, 10, seed).unwrap();
        docs.push((spec.document_id(), generate_synthetic(&spec).unwrap().0.values().to_vec()));
    }
    for name in FIXTURE_TRANSCRIPTS {
        let values = entropy_series(&load(name), false).values().to_vec();
        if (200..=600).contains(&values.len()) {
            docs.push((name.to_string(), values));
        }
    }
    let mut over = Vec::new();
    let mut largest = 0.0f64;
    for (id, values) in &docs {
        let n = values.len();
        let report = rank_report(values);
        let fraction = report.flagged_token_count() as f64 / n as f64;
        largest = largest.max(fraction);
        if report.flagged_token_count() > 3 * 10 || fraction > 0.15 || report.budget_fraction != fraction {
            over.push(id.clone());
        }
    }
    verdict(
        over.is_empty(),
        format!("{} documents, largest flagged fraction {largest:.4}, over budget: {over:?}", docs.len()),
    )
}

fn planted_recall() -> Verdict {
    let start = Instant::now();
    let mut total = 0.0;
    let mut lowest = (1.0f64, 0u64);
    for seed in 0..100u64 {
        let spec = SyntheticSpec::with_random_spans(500, 0.3, 0.1, 3, 8, 2.0, 10, seed).unwrap();
        let (series, truth) = generate_synthetic(&spec).unwrap();
        let recall = overlap(&rank_report(series.values()), &truth).recall.unwrap();
        if recall < lowest.0 {
            lowest = (recall, seed);
        }
        total += recall;
    }
    let mean = total / 100.0;
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(10));
    verdict(
        mean >= 0.95 && fast,
        format!("mean recall {mean:.4} over 100 seeds, lowest {:.4} (seed {}); {timing}", lowest.0, lowest.1),
    )
}

fn top_m_matches_full_sort() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=2000);
        // every fourth series is coarsely quantized so equal means occur
        let values: Vec<f64> = if case % 4 == 0 {
            (0..n).map(|_| rng.random_range(0..4) as f64).collect()
        } else {
            random_series(&mut rng, n)
        };
        let w = rng.random_range(1..=n.min(30));
        let m = rng.random_range(1..=10);
        let ws = window_means(&values, w).unwrap();
        let report = select_top_m(&ws, m, false).unwrap();

        let mut order: Vec<(usize, f64)> = ws.means().iter().copied().enumerate().map(|(i, s)| (i + 1, s)).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        order.truncate(m);
        let got: Vec<(usize, f64)> = report.hotspots.iter().map(|h| (h.start, h.score)).collect();
        let ends_ok = report.hotspots.iter().all(|h| h.end == h.start + w - 1);
        if got != order || !ends_ok {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 series, {mismatches} differ from the sorted oracle"))
}

fn replay_is_deterministic() -> Verdict {
    let golden = fs::read(fixtures().join("page.transcript.jsonl")).unwrap();
    let mut outputs = Vec::new();
    for _ in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let image = dir.path().join("page.png");
        fs::copy(fixtures().join("page.png"), &image).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_entroheat"))
            .args(["scan", image.to_str().unwrap(), "--archive-dir"])
            .arg(fixtures().join("replay"))
            .env_remove("OPENAI_API_KEY")
            .output()
            .unwrap();
        if !status.status.success() {
            return verdict(false, format!("scan failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(fs::read(dir.path().join("page.transcript.jsonl")).unwrap());
    }
    let identical = outputs.iter().all(|o| *o == golden);
    verdict(
        identical,
        format!(
            "3 runs {} the committed transcript ({} bytes); checked on {} only",
            if identical { "match" } else { "differ from" },
            golden.len(),
            std::env::consts::OS
        ),
    )
}

fn rendering_preserves_text() -> Verdict {
    let image = fs::read(fixtures().join("page.png")).unwrap();
    let mut failures = Vec::new();
    let mut renders = 0;
    for name in FIXTURE_TRANSCRIPTS {
        let t = load(name);
        let values = entropy_series(&t, false).values().to_vec();
        let report = select_top_m(&window_means(&values, 10.min(values.len())).unwrap(), 3, true).unwrap();
        let text: String = t.tokens().iter().map(|r| r.chosen_text.as_str()).collect();
        for mode in [RenderMode::Ansi, RenderMode::Html, RenderMode::Latex] {
            for escaping in [LatexEscaping::Safe, LatexEscaping::Trust] {
                let mut spec = RenderSpec::new(mode);
                spec.latex_escaping = escaping;
                let bytes = render_with_image(&t, &report, &spec, Some(&image)).unwrap();
                renders += 1;
                if extract_text(mode, &bytes).ok().as_deref() != Some(text.as_str()) || t.text() != text {
                    failures.push(format!("{name} {mode:?} {escaping:?}"));
                }
            }
        }
    }
    verdict(failures.is_empty(), format!("{renders} renders, failing: {failures:?}"))
}

fn main() -> ExitCode {
    let series = test_series();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("coarse-graining lower bound and equality condition", Box::new(coarse_graining_bound)),
        ("running-sum recurrence equals direct window means", Box::new(|| recurrence_matches_naive(&series))),
        ("W = 1 window means equal token entropies bitwise", Box::new(|| unit_window_is_identity(&series))),
        ("fair coin is 1 bit", Box::new(fair_coin_is_one_bit)),
        ("review budget at most M*W/n <= 15% for n in [200, 600]", Box::new(review_budget)),
        ("planted-error mean recall >= 0.95", Box::new(planted_recall)),
        ("top-M without suppression equals full sort", Box::new(top_m_matches_full_sort)),
        ("scan replay is byte-identical across runs", Box::new(replay_is_deterministic)),
        ("rendering preserves transcript text", Box::new(rendering_preserves_text)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("[{}] {:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!(
        "[SKIP] 10. hotspot-count reduction at higher scan resolution: excluded, needs a scanned \
         corpus and live model access"
    );
    println!("acceptance: {} passed, {failed} failed, 1 excluded", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
