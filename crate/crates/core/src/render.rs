//! Heatmap rendering: ANSI terminal output, a self-contained HTML report, and
//! a LaTeX overlay.
//!
//! Every token's background is interpolated along the palette by its shade.
//! Tokens inside hotspots are additionally outlined (HTML), underlined (ANSI)
//! or framed (LaTeX) when `hotspot_outline` is set.
//!
//! # LaTeX escaping
//!
//! In [`LatexEscaping::Safe`] mode the transcript is shown as source text and
//! every token is escaped with this table:
//!
//! | character | emitted as            |
//! |-----------|-----------------------|
//! | `\`       | `\textbackslash{}`    |
//! | `{`       | `\{`                  |
//! | `}`       | `\}`                  |
//! | `%`       | `\%`                  |
//! | `$`       | `\$`                  |
//! | `#`       | `\#`                  |
//! | `_`       | `\_`                  |
//! | `^`       | `\textasciicircum{}`  |
//! | `&`       | `\&`                  |
//! | `~`       | `\textasciitilde{}`   |
//! | newline   | `\leavevmode\newline` followed by a newline |
//!
//! In [`LatexEscaping::Trust`] mode token text is emitted verbatim, so the
//! transcript is typeset as LaTeX. Only hotspot tokens made of plain text (no
//! newline and none of the characters above) are highlighted; the others are
//! passed through unhighlighted, since wrapping half of a group or a math
//! shift would break the document.

use std::fmt::Write as _;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotspot::HotspotReport;
use crate::token_stream::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Ansi,
    Html,
    Latex,
}

impl RenderMode {
    /// File suffix used when the heatmap is written next to its input.
    pub fn file_suffix(self) -> Option<&'static str> {
        match self {
            RenderMode::Ansi => None,
            RenderMode::Html => Some("heatmap.html"),
            RenderMode::Latex => Some("heatmap.tex"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatexEscaping {
    #[default]
    Safe,
    Trust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnsiColors {
    #[default]
    TrueColor,
    /// The eight standard background colors, picked via the nearest stop.
    Basic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    /// Parses `#rrggbb`, `rrggbb` or `#rgb`.
    pub fn parse_hex(s: &str) -> Result<Self> {
        let hex = s.trim().trim_start_matches('#');
        let expanded: String = match hex.len() {
            3 => hex.chars().flat_map(|c| [c, c]).collect(),
            6 => hex.to_string(),
            _ => return Err(Error::domain(format!("invalid color {s:?}"))),
        };
        let byte = |i: usize| {
            u8::from_str_radix(&expanded[i..i + 2], 16)
                .map_err(|_| Error::domain(format!("invalid color {s:?}")))
        };
        Ok(Rgb(byte(0)?, byte(2)?, byte(4)?))
    }

    pub fn to_hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    fn distance2(self, other: Rgb) -> i32 {
        let d = |a: u8, b: u8| (a as i32 - b as i32).pow(2);
        d(self.0, other.0) + d(self.1, other.1) + d(self.2, other.2)
    }
}

/// Evenly spaced color stops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    stops: Vec<Rgb>,
}

impl Default for Palette {
    /// White, yellow, red.
    fn default() -> Self {
        Self {
            stops: vec![Rgb(0xff, 0xff, 0xff), Rgb(0xff, 0xd8, 0x4d), Rgb(0xd7, 0x30, 0x1f)],
        }
    }
}

impl Palette {
    pub fn new(stops: Vec<Rgb>) -> Result<Self> {
        if stops.len() < 2 {
            return Err(Error::domain("a palette needs at least two color stops"));
        }
        Ok(Self { stops })
    }

    /// Parses a comma-separated list of hex colors.
    pub fn parse(list: &str) -> Result<Self> {
        let stops = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Rgb::parse_hex)
            .collect::<Result<Vec<_>>>()?;
        Self::new(stops)
    }

    pub fn stops(&self) -> &[Rgb] {
        &self.stops
    }

    /// Linear interpolation at `shade`, clamped to `[0, 1]`.
    pub fn color_at(&self, shade: f64) -> Rgb {
        let t = shade.clamp(0.0, 1.0) * (self.stops.len() - 1) as f64;
        let seg = (t.floor() as usize).min(self.stops.len() - 2);
        let local = t - seg as f64;
        let (a, b) = (self.stops[seg], self.stops[seg + 1]);
        let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * local).round() as u8;
        Rgb(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
    }

    /// Index of the stop nearest to `shade`.
    pub fn nearest_stop(&self, shade: f64) -> usize {
        (shade.clamp(0.0, 1.0) * (self.stops.len() - 1) as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub mode: RenderMode,
    pub palette: Palette,
    pub hotspot_outline: bool,
    /// Adds hotspot scores (HTML table, LaTeX preamble comments). Ignored for
    /// ANSI output, which carries only the transcript.
    pub include_scores: bool,
    pub latex_escaping: LatexEscaping,
    pub ansi_colors: AnsiColors,
}

impl RenderSpec {
    pub fn new(mode: RenderMode) -> Self {
        Self {
            mode,
            palette: Palette::default(),
            hotspot_outline: true,
            include_scores: false,
            latex_escaping: LatexEscaping::Safe,
            ansi_colors: AnsiColors::TrueColor,
        }
    }
}

/// Renders using the image named by the transcript's `image` metadata when
/// that path can be read.
pub fn render(transcript: &Transcript, report: &HotspotReport, spec: &RenderSpec) -> Result<Vec<u8>> {
    let image = match (spec.mode, transcript.source_meta().get("image")) {
        (RenderMode::Html, Some(path)) => std::fs::read(Path::new(path)).ok(),
        _ => None,
    };
    render_with_image(transcript, report, spec, image.as_deref())
}

/// Renders with explicitly supplied image bytes (HTML only).
pub fn render_with_image(
    transcript: &Transcript,
    report: &HotspotReport,
    spec: &RenderSpec,
    image: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if report.shading.len() != transcript.len() {
        return Err(Error::Structure(format!(
            "report shades {} tokens but the transcript has {}",
            report.shading.len(),
            transcript.len()
        )));
    }
    let out = match spec.mode {
        RenderMode::Ansi => render_ansi(transcript, report, spec),
        RenderMode::Html => render_html(transcript, report, spec, image)?,
        RenderMode::Latex => render_latex(transcript, report, spec),
    };
    Ok(out.into_bytes())
}

const ANSI_RESET: &str = "\x1b[0m";

const ANSI_BASIC: [Rgb; 8] = [
    Rgb(0, 0, 0),
    Rgb(205, 0, 0),
    Rgb(0, 205, 0),
    Rgb(205, 205, 0),
    Rgb(0, 0, 238),
    Rgb(205, 0, 205),
    Rgb(0, 205, 205),
    Rgb(229, 229, 229),
];

fn ansi_background(spec: &RenderSpec, shade: f64) -> String {
    match spec.ansi_colors {
        AnsiColors::TrueColor => {
            let c = spec.palette.color_at(shade);
            format!("\x1b[48;2;{};{};{}m", c.0, c.1, c.2)
        }
        AnsiColors::Basic => {
            let stop = spec.palette.stops()[spec.palette.nearest_stop(shade)];
            let idx = (0..ANSI_BASIC.len())
                .min_by_key(|&i| ANSI_BASIC[i].distance2(stop))
                .unwrap_or(7);
            format!("\x1b[{}m", 40 + idx)
        }
    }
}

fn render_ansi(transcript: &Transcript, report: &HotspotReport, spec: &RenderSpec) -> String {
    let mut out = String::new();
    for (token, &shade) in transcript.tokens().iter().zip(&report.shading) {
        let outlined = spec.hotspot_outline && report.is_flagged(token.index);
        if shade <= 0.0 && !outlined {
            out.push_str(&token.chosen_text);
            continue;
        }
        if shade > 0.0 {
            out.push_str(&ansi_background(spec, shade));
            out.push_str("\x1b[30m");
        }
        if outlined {
            out.push_str("\x1b[4m");
        }
        out.push_str(&token.chosen_text);
        out.push_str(ANSI_RESET);
    }
    out.push_str(ANSI_RESET);
    out
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn html_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

pub(crate) fn image_mime(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xff, 0xd8, 0xff, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

const HTML_STYLE: &str = "\
body{font-family:system-ui,sans-serif;margin:0;background:#f6f6f6;color:#222}
header{padding:12px 16px;border-bottom:1px solid #ddd;background:#fff}
header h1{font-size:18px;margin:0 0 4px 0}
header p{margin:0;font-size:13px;color:#555}
.panels{display:flex;gap:16px;padding:16px;align-items:flex-start}
.panel{flex:1 1 50%;min-width:0;background:#fff;border:1px solid #ddd;padding:12px;overflow:auto}
.panel h2{font-size:14px;margin:0 0 8px 0;color:#444}
.panel img{max-width:100%;height:auto;display:block}
.missing{color:#888;font-style:italic}
.transcript{white-space:pre-wrap;word-break:break-word;font-family:ui-monospace,monospace;font-size:14px;line-height:1.7;margin:0}
.tok{border-radius:2px}
.hotspot{outline:2px solid #6b0010;outline-offset:1px;border-radius:2px}
table.scores{border-collapse:collapse;margin:0 16px 16px 16px;background:#fff;font-size:13px}
table.scores td,table.scores th{border:1px solid #ddd;padding:4px 8px;text-align:left}
";

fn render_html(
    transcript: &Transcript,
    report: &HotspotReport,
    spec: &RenderSpec,
    image: Option<&[u8]>,
) -> Result<String> {
    let doc = transcript.document_id().unwrap_or("transcript");
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(out, "<title>Entropy heatmap: {}</title>", html_escape(doc));
    let _ = writeln!(out, "<style>\n{HTML_STYLE}</style>\n</head>\n<body>");
    let _ = writeln!(
        out,
        "<header><h1>Entropy heatmap: {}</h1><p>{} tokens, window {}, {} hotspot(s) covering {:.1}% of tokens</p></header>",
        html_escape(doc),
        transcript.len(),
        report.window_length,
        report.hotspots.len(),
        report.budget_fraction * 100.0
    );

    out.push_str("<div class=\"panels\">\n<section class=\"panel image-panel\"><h2>Source image</h2>");
    match image {
        Some(bytes) => {
            let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
            let _ = write!(
                out,
                "<img alt=\"source page\" src=\"data:{};base64,{}\">",
                image_mime(bytes),
                encoded
            );
        }
        None => out.push_str("<p class=\"missing\">image not available</p>"),
    }
    out.push_str("</section>\n<section class=\"panel transcript-panel\"><h2>Transcript</h2><pre class=\"transcript\">");

    let tokens = transcript.tokens();
    let mut i = 0;
    while i < tokens.len() {
        let flagged = spec.hotspot_outline && report.is_flagged(tokens[i].index);
        if !flagged {
            push_html_token(&mut out, transcript, report, spec, i);
            i += 1;
            continue;
        }
        let run_start = i;
        while i < tokens.len() && report.is_flagged(tokens[i].index) {
            i += 1;
        }
        let (first, last) = (run_start + 1, i);
        let members: Vec<String> = report
            .hotspots
            .iter()
            .enumerate()
            .filter(|(_, h)| h.start <= last && first <= h.end)
            .map(|(rank, h)| format!("#{} tokens {}-{} mean {:.3} bits", rank + 1, h.start, h.end, h.score))
            .collect();
        let _ = write!(
            out,
            "<span class=\"hotspot\" data-start=\"{first}\" data-end=\"{last}\" title=\"{}\">",
            html_escape(&members.join("; "))
        );
        for j in run_start..i {
            push_html_token(&mut out, transcript, report, spec, j);
        }
        out.push_str("</span>");
    }
    out.push_str("</pre></section>\n</div>\n");

    if spec.include_scores {
        out.push_str("<table class=\"scores\"><tr><th>rank</th><th>tokens</th><th>mean entropy (bits)</th><th>text</th></tr>\n");
        for (rank, h) in report.hotspots.iter().enumerate() {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}-{}</td><td>{:.4}</td><td><code>{}</code></td></tr>",
                rank + 1,
                h.start,
                h.end,
                h.score,
                html_escape(&transcript.span_text(h.start, h.end.min(transcript.len())))
            );
        }
        out.push_str("</table>\n");
    }

    // "</" cannot appear inside a script element
    let json = report.to_json()?.replace("</", "<\\/");
    let _ = writeln!(
        out,
        "<script type=\"application/json\" id=\"hotspot-report\">{json}</script>"
    );
    out.push_str("</body>\n</html>\n");
    Ok(out)
}

fn push_html_token(
    out: &mut String,
    transcript: &Transcript,
    report: &HotspotReport,
    spec: &RenderSpec,
    pos: usize,
) {
    let token = &transcript.tokens()[pos];
    let shade = report.shading[pos];
    let _ = write!(
        out,
        "<span class=\"tok\" data-i=\"{}\" data-shade=\"{:.4}\" title=\"token {} shade {:.3}\" style=\"background-color:{}\">{}</span>",
        token.index,
        shade,
        token.index,
        shade,
        spec.palette.color_at(shade).to_hex(),
        html_escape(&token.chosen_text)
    );
}

/// LaTeX escape for one character in safe mode.
fn latex_escape_char(c: char) -> Option<&'static str> {
    Some(match c {
        '\\' => "\\textbackslash{}",
        '{' => "\\{",
        '}' => "\\}",
        '%' => "\\%",
        '$' => "\\$",
        '#' => "\\#",
        '_' => "\\_",
        '^' => "\\textasciicircum{}",
        '&' => "\\&",
        '~' => "\\textasciitilde{}",
        _ => return None,
    })
}

const LATEX_NEWLINE: &str = "\\leavevmode\\newline\n";
const LATEX_BODY_BEGIN: &str = "%% entroheat:body:begin\n";
const LATEX_BODY_END: &str = "\n%% entroheat:body:end\n";

fn latex_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match latex_escape_char(c) {
            Some(e) => out.push_str(e),
            None => out.push(c),
        }
    }
    out
}

fn latex_macro(spec: &RenderSpec) -> String {
    let stops = spec.palette.stops();
    let segments = stops.len() - 1;
    let mut out = String::new();
    for (i, c) in stops.iter().enumerate() {
        let _ = writeln!(
            out,
            "\\definecolor{{entrostop{i}}}{{HTML}}{{{:02X}{:02X}{:02X}}}",
            c.0, c.1, c.2
        );
    }
    out.push_str("\\definecolor{entroframe}{HTML}{6B0010}\n");
    out.push_str("% \\entrohlcolor{<shade>} sets entrohlbg by linear interpolation along the stops\n");
    out.push_str("\\newcommand{\\entrohlcolor}[1]{%\n");
    for seg in 0..segments {
        let lo = seg as f64 / segments as f64;
        let hi = (seg + 1) as f64 / segments as f64;
        let mix = format!(
            "\\colorlet{{entrohlbg}}{{entrostop{}!\\fpeval{{round(100*((#1)-{lo:.6})/{:.6})}}!entrostop{}}}%\n",
            seg + 1,
            hi - lo,
            seg
        );
        if seg + 1 < segments {
            let _ = write!(out, "  \\ifdim #1pt<{hi:.6}pt {mix}  \\else");
        } else {
            let _ = write!(out, "  {mix}");
        }
    }
    for _ in 1..segments {
        out.push_str("  \\fi");
    }
    out.push_str("}\n");
    out.push_str("% \\entrohl{<shade>}{<text>} highlights <text>; <shade> is in [0,1]\n");
    if spec.hotspot_outline {
        out.push_str(
            "\\newcommand{\\entrohl}[2]{\\begingroup\\entrohlcolor{#1}\\setlength{\\fboxsep}{0.5pt}\\setlength{\\fboxrule}{0.4pt}\\fcolorbox{entroframe}{entrohlbg}{\\strut #2}\\endgroup}\n",
        );
    } else {
        out.push_str(
            "\\newcommand{\\entrohl}[2]{\\begingroup\\entrohlcolor{#1}\\setlength{\\fboxsep}{0.5pt}\\colorbox{entrohlbg}{\\strut #2}\\endgroup}\n",
        );
    }
    out
}

fn trust_wrappable(text: &str) -> bool {
    !text.chars().any(|c| matches!(c, '\n' | '\\' | '{' | '}' | '$' | '%' | '#' | '&' | '_' | '^' | '~'))
}

fn render_latex(transcript: &Transcript, report: &HotspotReport, spec: &RenderSpec) -> String {
    let safe = spec.latex_escaping == LatexEscaping::Safe;
    let mut out = String::new();
    out.push_str("% Entropy heatmap overlay generated by entroheat.\n");
    out.push_str("\\documentclass{article}\n\\usepackage[T1]{fontenc}\n\\usepackage[utf8]{inputenc}\n");
    out.push_str("\\usepackage{xcolor}\n\\usepackage{xfp}\n\\usepackage{amsmath}\n");
    out.push_str(&latex_macro(spec));
    if spec.include_scores {
        for (rank, h) in report.hotspots.iter().enumerate() {
            let _ = writeln!(
                out,
                "% hotspot {}: tokens {}-{}, mean entropy {:.4} bits",
                rank + 1,
                h.start,
                h.end,
                h.score
            );
        }
    }
    out.push_str("\\begin{document}\n");
    if safe {
        out.push_str("\\begin{flushleft}\\ttfamily\n");
    }
    out.push_str(LATEX_BODY_BEGIN);
    for (token, &shade) in transcript.tokens().iter().zip(&report.shading) {
        let wrap = report.is_flagged(token.index);
        if !safe {
            if wrap && trust_wrappable(&token.chosen_text) {
                let _ = write!(out, "\\entrohl{{{shade:.3}}}{{{}}}", token.chosen_text);
            } else {
                out.push_str(&token.chosen_text);
            }
            continue;
        }
        for (k, piece) in token.chosen_text.split('\n').enumerate() {
            if k > 0 {
                out.push_str(LATEX_NEWLINE);
            }
            if piece.is_empty() {
                continue;
            }
            if wrap {
                let _ = write!(out, "\\entrohl{{{shade:.3}}}{{{}}}", latex_escape(piece));
            } else {
                out.push_str(&latex_escape(piece));
            }
        }
    }
    out.push_str(LATEX_BODY_END);
    if safe {
        out.push_str("\\end{flushleft}\n");
    }
    out.push_str("\\end{document}\n");
    out
}

/// Recovers the transcript text from rendered output by stripping markup.
///
/// For LaTeX in trust mode this only succeeds when every highlighted token
/// has balanced braces.
pub fn extract_text(mode: RenderMode, rendered: &[u8]) -> Result<String> {
    let s = std::str::from_utf8(rendered)
        .map_err(|e| Error::Structure(format!("rendered output is not UTF-8: {e}")))?;
    match mode {
        RenderMode::Ansi => Ok(strip_ansi(s)),
        RenderMode::Html => extract_html(s),
        RenderMode::Latex => extract_latex(s),
    }
}

fn strip_ansi(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\x1b' && chars.peek() == Some(&'[') {
            chars.next();
            for d in chars.by_ref() {
                if ('@'..='~').contains(&d) {
                    break;
                }
            }
            continue;
        }
        out.push(c);
    }
    out
}

fn extract_html(s: &str) -> Result<String> {
    const OPEN: &str = "<span class=\"tok\"";
    let mut out = String::new();
    let mut rest = s;
    while let Some(pos) = rest.find(OPEN) {
        rest = &rest[pos + OPEN.len()..];
        let gt = rest
            .find('>')
            .ok_or_else(|| Error::Structure("unterminated token span".into()))?;
        rest = &rest[gt + 1..];
        let close = rest
            .find("</span>")
            .ok_or_else(|| Error::Structure("unclosed token span".into()))?;
        out.push_str(&html_unescape(&rest[..close]));
        rest = &rest[close..];
    }
    Ok(out)
}

fn extract_latex(s: &str) -> Result<String> {
    let begin = s
        .find(LATEX_BODY_BEGIN)
        .ok_or_else(|| Error::Structure("missing body marker".into()))?
        + LATEX_BODY_BEGIN.len();
    let end = s
        .rfind(LATEX_BODY_END)
        .ok_or_else(|| Error::Structure("missing body end marker".into()))?;
    let body = &s[begin..end];
    let safe = s.contains("\\begin{flushleft}\\ttfamily\n");
    if safe {
        unescape_latex_body(body)
    } else {
        unwrap_trusted_body(body)
    }
}

fn unescape_latex_body(body: &str) -> Result<String> {
    const WRAP: &str = "\\entrohl{";
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    let mut in_wrapper = false;
    while let Some(c) = rest.chars().next() {
        if let Some(r) = rest.strip_prefix(LATEX_NEWLINE) {
            out.push('\n');
            rest = r;
        } else if let Some(r) = rest.strip_prefix(WRAP) {
            let close = r
                .find("}{")
                .ok_or_else(|| Error::Structure("malformed highlight".into()))?;
            rest = &r[close + 2..];
            in_wrapper = true;
        } else if c == '}' && in_wrapper {
            in_wrapper = false;
            rest = &rest[1..];
        } else if c == '\\' {
            let (ch, len) = [
                ("\\textbackslash{}", '\\'),
                ("\\textasciicircum{}", '^'),
                ("\\textasciitilde{}", '~'),
                ("\\{", '{'),
                ("\\}", '}'),
                ("\\%", '%'),
                ("\\$", '$'),
                ("\\#", '#'),
                ("\\_", '_'),
                ("\\&", '&'),
            ]
            .iter()
            .find(|(pat, _)| rest.starts_with(pat))
            .map(|(pat, ch)| (*ch, pat.len()))
            .ok_or_else(|| Error::Structure(format!("unknown escape near {:?}", &rest[..rest.len().min(20)])))?;
            out.push(ch);
            rest = &rest[len..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    Ok(out)
}

fn unwrap_trusted_body(body: &str) -> Result<String> {
    const WRAP: &str = "\\entrohl{";
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(pos) = rest.find(WRAP) {
        out.push_str(&rest[..pos]);
        let r = &rest[pos + WRAP.len()..];
        let close = r
            .find("}{")
            .ok_or_else(|| Error::Structure("malformed highlight".into()))?;
        let inner = &r[close + 2..];
        let mut depth = 0usize;
        let mut escaped = false;
        let mut end = None;
        for (i, c) in inner.char_indices() {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '{' => depth += 1,
                '}' if depth == 0 => {
                    end = Some(i);
                    break;
                }
                '}' => depth -= 1,
                _ => {}
            }
        }
        let end = end.ok_or_else(|| Error::Structure("unbalanced highlight".into()))?;
        out.push_str(&inner[..end]);
        rest = &inner[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
