//! Every command except `--live` ones runs without a network request.
//!
//! Kept in its own test binary so the process-wide request counter sees only
//! these commands.

mod common;

use common::{fixture_copy, run};
use entroheat_core::ocr_client::live_request_count;

#[test]
fn offline_commands_make_no_requests() {
    let dir = fixture_copy(&["page.png", "page2.png", "tiny.jsonl"]);
    let p = |name: &str| dir.path().join(name).display().to_string();
    // point the endpoint somewhere unreachable, so a stray request would also fail loudly
    let endpoint = ["--endpoint", "http://127.0.0.1:9/v1/chat/completions"];

    let mut scan = vec!["scan".to_string(), p("page.png"), "--heatmap".into(), "html".into()];
    scan.extend(endpoint.iter().map(|s| s.to_string()));
    let mut adaptive = vec!["scan".to_string(), p("page2.png"), "--adaptive".into()];
    adaptive.extend(endpoint.iter().map(|s| s.to_string()));
    let mut reprompt = vec!["reprompt".to_string(), p("page.transcript.jsonl")];
    reprompt.extend(endpoint.iter().map(|s| s.to_string()));

    let synth = run(&["synth", "--seed", "3"], b"");
    assert_eq!(synth.code, 0);
    let analysis = run(&["analyze"], &synth.stdout);
    assert_eq!(analysis.code, 0);

    let commands: Vec<Vec<String>> = vec![
        scan,
        adaptive,
        vec!["analyze".into(), p("page.transcript.jsonl"), "--out".into(), p("page.report.json")],
        vec!["render".into(), p("page.transcript.jsonl"), "--mode".into(), "latex".into()],
        vec!["render".into(), p("tiny.jsonl"), "--mode".into(), "ansi".into()],
        vec!["evaluate".into(), "--report".into(), p("page.report.json"), "--truth".into(), p("page.report.json")],
        reprompt,
    ];
    for args in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = run(&args, b"");
        // evaluate fails (the report embeds no truth) but still must not reach out
        if args[0] != "evaluate" {
            assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
        }
    }
    assert_eq!(run(&["evaluate", "--truth", "-"], &analysis.stdout).code, 0);
    assert_eq!(live_request_count(), 0);
}
