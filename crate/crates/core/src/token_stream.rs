//! Transcript data model and the JSONL interchange format.
//!
//! A transcript file is one header line followed by one line per token:
//!
//! ```text
//! {"meta":{"image":"page.png","k":5,"model":"gpt-4o"},"text":"x^2"}
//! {"i":1,"text":"x","alts":[["x",-0.01],["X",-4.7]]}
//! {"i":2,"text":"^","alts":[["^",0.0]]}
//! {"i":3,"text":"2","alts":[["2",-0.2],["3",-1.8]],"special":false}
//! ```
//!
//! The header is optional on input (detected by the `meta` key) and always
//! written on output. Log-probabilities are stored exactly as the endpoint
//! returned them, in natural log.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Slack allowed on the probability mass of one record before it is rejected.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// One candidate token at a decoding position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAlternative {
    pub text: String,
    /// Natural-log probability.
    pub logprob: f64,
}

impl TokenAlternative {
    pub fn new(text: impl Into<String>, logprob: f64) -> Self {
        Self {
            text: text.into(),
            logprob,
        }
    }

    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

/// One decoded token with its top-k alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    /// 1-based position in the transcript.
    pub index: usize,
    pub chosen_text: String,
    /// Non-increasing by logprob.
    pub alternatives: Vec<TokenAlternative>,
    /// Line breaks, code fences and similar layout tokens.
    pub is_special: bool,
}

impl TokenRecord {
    /// Builds a record from endpoint output.
    ///
    /// If the sampled token is not among `top`, it is added as one more
    /// alternative with its own logprob, so its mass is counted once and never
    /// folded into the tail. Alternatives are then stably sorted by logprob.
    pub fn from_endpoint(
        index: usize,
        chosen_text: impl Into<String>,
        chosen_logprob: f64,
        top: Vec<TokenAlternative>,
        is_special: bool,
    ) -> Self {
        let chosen_text = chosen_text.into();
        let mut alternatives = top;
        if !alternatives.iter().any(|a| a.text == chosen_text) {
            alternatives.push(TokenAlternative::new(chosen_text.clone(), chosen_logprob));
        }
        alternatives.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        Self {
            index,
            chosen_text,
            alternatives,
            is_special,
        }
    }

    /// Number of explicit alternatives (the k of this position).
    pub fn k(&self) -> usize {
        self.alternatives.len()
    }

    /// Sum of explicit probabilities.
    pub fn explicit_mass(&self) -> f64 {
        self.alternatives.iter().map(TokenAlternative::probability).sum()
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        if self.alternatives.is_empty() {
            return Err(Error::validation(format!(
                "token {} has no alternatives",
                self.index
            )));
        }
        for alt in &self.alternatives {
            if !alt.logprob.is_finite() {
                return Err(Error::validation(format!(
                    "token {}: logprob {} is not finite",
                    self.index, alt.logprob
                )));
            }
            if alt.logprob > 0.0 {
                return Err(Error::validation(format!(
                    "token {}: logprob {} is positive",
                    self.index, alt.logprob
                )));
            }
        }
        if self
            .alternatives
            .windows(2)
            .any(|pair| pair[0].logprob < pair[1].logprob)
        {
            return Err(Error::validation(format!(
                "token {}: alternatives are not sorted by descending logprob",
                self.index
            )));
        }
        let mass = self.explicit_mass();
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::validation(format!(
                "token {}: alternative probabilities sum to {mass}",
                self.index
            )));
        }
        if !self.alternatives.iter().any(|a| a.text == self.chosen_text) {
            return Err(Error::validation(format!(
                "token {}: chosen text {:?} is not among its alternatives",
                self.index, self.chosen_text
            )));
        }
        Ok(())
    }
}

/// An ordered token stream plus the decoded text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    tokens: Vec<TokenRecord>,
    text: String,
    source_meta: BTreeMap<String, String>,
}

impl Transcript {
    pub fn new(
        tokens: Vec<TokenRecord>,
        text: impl Into<String>,
        source_meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Structure("transcript has no tokens".into()));
        }
        for (pos, token) in tokens.iter().enumerate() {
            if token.index != pos + 1 {
                return Err(Error::Structure(format!(
                    "token indices must be 1..n contiguous; expected {} but found {}",
                    pos + 1,
                    token.index
                )));
            }
            token.validate()?;
        }
        Ok(Self {
            tokens,
            text: text.into(),
            source_meta,
        })
    }

    /// Builds a transcript whose text is the concatenation of token texts.
    pub fn from_tokens(
        tokens: Vec<TokenRecord>,
        source_meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let text = tokens.iter().map(|t| t.chosen_text.as_str()).collect::<String>();
        Self::new(tokens, text, source_meta)
    }

    pub fn tokens(&self) -> &[TokenRecord] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: a transcript holds at least one token.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_meta(&self) -> &BTreeMap<String, String> {
        &self.source_meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.source_meta.insert(key.into(), value.into());
        self
    }

    /// Concatenated chosen texts of tokens `start..=end` (1-based, inclusive).
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.tokens[start - 1..end]
            .iter()
            .map(|t| t.chosen_text.as_str())
            .collect()
    }

    /// A short identifier for reports: the image reference if known.
    pub fn document_id(&self) -> Option<&str> {
        self.source_meta
            .get("document")
            .or_else(|| self.source_meta.get("image"))
            .map(String::as_str)
    }
}

/// Token-text patterns that mark a token as special.
///
/// A token is special when its text, ignoring spaces and tabs at either end,
/// is one or more patterns back to back (so `"\n\n"` matches `"\n"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub patterns: Vec<String>,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            patterns: vec!["\n".into(), "```".into()],
        }
    }
}

impl SpecialTokens {
    pub fn is_special(&self, text: &str) -> bool {
        let mut rest = text.trim_matches(|c| c == ' ' || c == '\t');
        if rest.is_empty() {
            return false;
        }
        'outer: while !rest.is_empty() {
            for p in self.patterns.iter().filter(|p| !p.is_empty()) {
                if let Some(r) = rest.strip_prefix(p.as_str()) {
                    rest = r;
                    continue 'outer;
                }
            }
            return false;
        }
        true
    }
}

#[derive(Serialize, Deserialize)]
struct TokenLine {
    i: usize,
    text: String,
    alts: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    special: bool,
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    meta: Map<String, Value>,
    text: &'a str,
}

fn meta_to_json(meta: &BTreeMap<String, String>) -> Map<String, Value> {
    meta.iter()
        .map(|(key, value)| {
            // `k` is numeric in the header; everything else stays a string.
            let json = match value.parse::<u64>() {
                Ok(k) if key == "k" && k.to_string() == *value => Value::from(k),
                _ => Value::String(value.clone()),
            };
            (key.clone(), json)
        })
        .collect()
}

fn meta_from_json(meta: &Map<String, Value>) -> BTreeMap<String, String> {
    meta.iter()
        .map(|(key, value)| {
            let text = match value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (key.clone(), text)
        })
        .collect()
}

/// Reads a transcript from JSONL.
pub fn read_transcript<R: BufRead>(reader: R) -> Result<Transcript> {
    let mut meta = None;
    let mut text = None;
    let mut tokens = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };

        if let Some(m) = obj.get("meta") {
            if meta.is_some() || !tokens.is_empty() {
                return Err(Error::Structure(format!(
                    "line {line_no}: header must appear once, before any token"
                )));
            }
            let Value::Object(m) = m else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "\"meta\" must be an object".into(),
                });
            };
            meta = Some(meta_from_json(m));
            text = match obj.get("text") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "header \"text\" must be a string".into(),
                    })
                }
            };
            continue;
        }

        let parsed: TokenLine =
            serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let record = TokenRecord {
            index: parsed.i,
            chosen_text: parsed.text,
            alternatives: parsed
                .alts
                .into_iter()
                .map(|(text, logprob)| TokenAlternative { text, logprob })
                .collect(),
            is_special: parsed.special,
        };
        if record.index != tokens.len() + 1 {
            return Err(Error::Structure(format!(
                "line {line_no}: token index {} breaks the 1..n sequence (expected {})",
                record.index,
                tokens.len() + 1
            )));
        }
        record.validate().map_err(|e| match e {
            Error::Validation { message, .. } => Error::Validation {
                line: Some(line_no),
                message,
            },
            other => other,
        })?;
        tokens.push(record);
    }

    let meta = meta.unwrap_or_default();
    match text {
        Some(text) => Transcript::new(tokens, text, meta),
        None => Transcript::from_tokens(tokens, meta),
    }
}

/// Writes a transcript as one header line plus one line per token.
pub fn write_transcript<W: Write>(transcript: &Transcript, mut sink: W) -> Result<()> {
    if transcript.tokens.is_empty() {
        return Err(Error::Structure("refusing to write an empty transcript".into()));
    }
    let header = HeaderLine {
        meta: meta_to_json(&transcript.source_meta),
        text: &transcript.text,
    };
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n")?;
    for token in &transcript.tokens {
        let line = TokenLine {
            i: token.index,
            text: token.chosen_text.clone(),
            alts: token
                .alternatives
                .iter()
                .map(|a| (a.text.clone(), a.logprob))
                .collect(),
            special: token.is_special,
        };
        serde_json::to_writer(&mut sink, &line)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Serializes to an in-memory buffer.
pub fn transcript_to_bytes(transcript: &Transcript) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_transcript(transcript, &mut buf)?;
    Ok(buf)
}
