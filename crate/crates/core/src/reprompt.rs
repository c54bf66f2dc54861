//! Asks the model to re-examine each hotspot snippet in context and propose
//! a correction.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hotspot::{Hotspot, HotspotReport};
use crate::ocr_client::{parse_reply_text, ChatRequest, PageImage, Prompts, RequestConfig, Transport};
use crate::token_stream::{TokenAlternative, TokenRecord, Transcript};

pub const DEFAULT_CONTEXT_RADIUS: usize = 20;
pub const SNIPPET_OPEN: &str = "<<<SNIPPET";
pub const SNIPPET_CLOSE: &str = "SNIPPET>>>";

#[derive(Debug, Clone)]
pub struct RepromptConfig {
    /// Tokens of context on each side of a hotspot.
    pub context_radius: usize,
    /// Attach the page image to every request.
    pub include_image: bool,
    /// Patch accepted corrections into a copy of the transcript.
    pub auto_accept: bool,
    pub system_prompt: String,
    pub user_template: String,
}

impl Default for RepromptConfig {
    fn default() -> Self {
        Self::with_prompts(&Prompts::default())
    }
}

impl RepromptConfig {
    pub fn with_prompts(prompts: &Prompts) -> Self {
        Self {
            context_radius: DEFAULT_CONTEXT_RADIUS,
            include_image: true,
            auto_accept: false,
            system_prompt: prompts.reprompt.system.clone(),
            user_template: prompts.reprompt.user.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepromptResult {
    pub hotspot: Hotspot,
    /// First and last token of the snippet, 1-based inclusive.
    pub context_start: usize,
    pub context_end: usize,
    pub original_snippet: String,
    pub proposed_snippet: String,
    pub accepted: bool,
    pub rationale_text: String,
}

#[derive(Debug, Clone)]
pub struct RepromptOutcome {
    pub results: Vec<RepromptResult>,
    /// Present only with auto-accept and at least one accepted correction.
    pub patched: Option<Transcript>,
}

impl RepromptOutcome {
    /// One JSON object per line.
    pub fn results_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Token range `[start - radius, end + radius]` clipped to `[1, n]`.
pub fn snippet_range(hotspot: &Hotspot, radius: usize, n: usize) -> (usize, usize) {
    (hotspot.start.saturating_sub(radius).max(1), (hotspot.end + radius).min(n))
}

/// The snippet text for a hotspot.
pub fn extract_snippet(t: &Transcript, hotspot: &Hotspot, radius: usize) -> String {
    let (a, b) = snippet_range(hotspot, radius, t.len());
    t.span_text(a, b)
}

/// Full token text with the snippet range wrapped in markers.
pub fn marked_transcript(t: &Transcript, a: usize, b: usize) -> String {
    let mut out = String::new();
    if a > 1 {
        out.push_str(&t.span_text(1, a - 1));
    }
    out.push_str(SNIPPET_OPEN);
    out.push_str(&t.span_text(a, b));
    out.push_str(SNIPPET_CLOSE);
    if b < t.len() {
        out.push_str(&t.span_text(b + 1, t.len()));
    }
    out
}

/// Substitutes `{name}` placeholders in one pass, so inserted values are
/// never themselves expanded.
fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let key = format!("{{{name}}}");
            if tail.starts_with(&key) {
                out.push_str(value);
                rest = &tail[key.len()..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Request body for one snippet.
pub fn reprompt_request(
    t: &Transcript,
    a: usize,
    b: usize,
    image: Option<&PageImage>,
    cfg: &RequestConfig,
    rp: &RepromptConfig,
) -> Result<ChatRequest> {
    let snippet = t.span_text(a, b);
    let marked = marked_transcript(t, a, b);
    let user_text = fill_template(
        &rp.user_template,
        &[("marked_transcript", &marked), ("snippet", &snippet)],
    );
    let user_content = match image {
        Some(img) => json!([
            {"type": "text", "text": user_text},
            {"type": "image_url", "image_url": {"url": img.data_url()}},
        ]),
        None => Value::String(user_text),
    };
    ChatRequest::new(&json!({
        "model": cfg.model_id,
        "max_tokens": cfg.max_tokens,
        "messages": [
            {"role": "system", "content": rp.system_prompt},
            {"role": "user", "content": user_content},
        ],
    }))
}

#[derive(Deserialize)]
struct Correction {
    corrected: String,
    #[serde(default)]
    rationale: String,
}

/// Reads `{"corrected": .., "rationale": ..}` out of a reply, tolerating code
/// fences and surrounding prose.
fn parse_correction(reply: &str) -> std::result::Result<Correction, String> {
    let start = reply.find('{');
    let end = reply.rfind('}');
    let (Some(start), Some(end)) = (start, end) else {
        return Err("reply contains no JSON object".into());
    };
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str::<Correction>(&reply[start..=end]).map_err(|e| format!("reply JSON unusable: {e}"))
}

/// Re-prompts every hotspot, in descending score order.
///
/// Malformed replies yield a result with `accepted = false` and a diagnostic
/// rationale. Transport failures abort.
pub fn reprompt_hotspots(
    transport: &dyn Transport,
    t: &Transcript,
    report: &HotspotReport,
    image: Option<&PageImage>,
    cfg: &RequestConfig,
    rp: &RepromptConfig,
) -> Result<RepromptOutcome> {
    if report.series_len() != t.len() {
        return Err(Error::Structure(format!(
            "report covers {} tokens but the transcript has {}",
            report.series_len(),
            t.len()
        )));
    }
    if rp.include_image && image.is_none() && !report.hotspots.is_empty() {
        return Err(Error::Startup(
            "re-prompting with the image needs the page image; pass it or use text-only mode".into(),
        ));
    }
    let image = if rp.include_image { image } else { None };

    let mut order: Vec<Hotspot> = report.hotspots.clone();
    order.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.start.cmp(&y.start)));

    let mut results = Vec::with_capacity(order.len());
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for hotspot in order {
        if hotspot.start < 1 || hotspot.end > t.len() || hotspot.end < hotspot.start {
            return Err(Error::Structure(format!(
                "hotspot [{}, {}] lies outside 1..={}",
                hotspot.start,
                hotspot.end,
                t.len()
            )));
        }
        let (a, b) = snippet_range(&hotspot, rp.context_radius, t.len());
        let original = t.span_text(a, b);
        let request = reprompt_request(t, a, b, image, cfg, rp)?;
        let raw = transport.send(&request)?;
        let reply = parse_reply_text(&raw)?;
        let (proposed, rationale, usable) = match parse_correction(&reply) {
            Ok(c) => (c.corrected, c.rationale, true),
            Err(diag) => {
                log::warn!("hotspot [{}, {}]: {diag}", hotspot.start, hotspot.end);
                (original.clone(), format!("malformed reply ({diag}): {reply}"), false)
            }
        };
        let free = taken.iter().all(|&(x, y)| b < x || y < a);
        let accepted = rp.auto_accept && usable && free && proposed != original;
        if accepted {
            taken.push((a, b));
        }
        results.push(RepromptResult {
            hotspot,
            context_start: a,
            context_end: b,
            original_snippet: original,
            proposed_snippet: proposed,
            accepted,
            rationale_text: rationale,
        });
    }

    let patched = if results.iter().any(|r| r.accepted) {
        Some(patch(t, &results)?)
    } else {
        None
    };
    Ok(RepromptOutcome { results, patched })
}

/// Replaces each accepted snippet range wholesale with one token holding the
/// proposed text.
fn patch(t: &Transcript, results: &[RepromptResult]) -> Result<Transcript> {
    let mut accepted: Vec<&RepromptResult> = results.iter().filter(|r| r.accepted).collect();
    accepted.sort_by_key(|r| std::cmp::Reverse(r.context_start));
    let mut tokens: Vec<TokenRecord> = t.tokens().to_vec();
    for r in &accepted {
        let replacement = TokenRecord {
            index: 0,
            chosen_text: r.proposed_snippet.clone(),
            alternatives: vec![TokenAlternative::new(r.proposed_snippet.clone(), 0.0)],
            is_special: false,
        };
        tokens.splice(r.context_start - 1..r.context_end, [replacement]);
    }
    for (pos, token) in tokens.iter_mut().enumerate() {
        token.index = pos + 1;
    }
    let meta = t.source_meta().clone();
    Ok(Transcript::from_tokens(tokens, meta)?.with_meta("patched", accepted.len().to_string()))
}
