//! The `entroheat` command line.
//!
//! Each stage reads and writes files (or stdin/stdout), so the stages compose
//! with pipes:
//!
//! ```text
//! entroheat synth --seed 7 | entroheat analyze | entroheat evaluate --truth -
//! ```
//!
//! Only `scan --live` and `reprompt --live` touch the network; every other
//! invocation, including replayed scans, is offline.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use entroheat_core::entropy::{entropy_series, EntropySeries};
use entroheat_core::eval::{generate_synthetic, overlap, union_annotations, AnnotationSet, OverlapResult, SyntheticSpec};
use entroheat_core::hotspot::{select, HotspotReport, Strategy, DEFAULT_ALPHA, DEFAULT_TOP_M};
use entroheat_core::ocr_client::{
    transcribe, transcribe_adaptive, EscalationPolicy, HttpTransport, PageImage, Prompts, RecordingTransport,
    ReplayStore, ReplayTransport, RequestConfig, Transport, DEFAULT_AUTH_ENV, DEFAULT_ENDPOINT, DEFAULT_K,
    DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TAIL_THRESHOLD,
};
use entroheat_core::render::{render_with_image, AnsiColors, LatexEscaping, Palette, RenderMode, RenderSpec};
use entroheat_core::reprompt::{reprompt_hotspots, RepromptConfig, DEFAULT_CONTEXT_RADIUS};
use entroheat_core::token_stream::{read_transcript, transcript_to_bytes, Transcript};
use entroheat_core::windowing::{window_means, WindowSeries, DEFAULT_WINDOW};
use entroheat_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Startup(_) => EXIT_IO,
        Error::Transport { .. } | Error::Capability(_) | Error::ReplayMiss { .. } => EXIT_TRANSPORT,
        Error::Parse { .. } | Error::Structure(_) | Error::Validation { .. } | Error::Domain(_) | Error::Json(_) => {
            EXIT_VALIDATION
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

#[derive(Parser, Debug)]
#[command(name = "entroheat", version, about = "Sliding-window entropy hotspots for OCR transcripts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Sliding-window length in tokens (presets 5, 10, 20)
    #[arg(long = "W", global = true, default_value_t = DEFAULT_WINDOW, value_parser = positive)]
    w: usize,

    /// Number of hotspots for the rank strategy [default: 3]
    #[arg(long = "M", global = true, value_parser = positive)]
    m: Option<usize>,

    /// top_logprobs requested per token, 1..=20
    #[arg(long = "k", global = true, default_value_t = DEFAULT_K,
          value_parser = clap::value_parser!(u32).range(1..=20))]
    k: u32,

    /// Hotspot selection strategy
    #[arg(long, global = true, value_enum, default_value_t = StrategyArg::Rank)]
    strategy: StrategyArg,

    /// Percentile for the percentile strategy, in (0, 100) [default: 90]
    #[arg(long, global = true, value_parser = parse_alpha)]
    alpha: Option<f64>,

    /// Let ranked hotspots overlap (suppression is on by default)
    #[arg(long, global = true)]
    no_suppress: bool,

    /// Score special tokens (newlines, code fences) as zero entropy
    #[arg(long, global = true)]
    exclude_special: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Rank,
    Percentile,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("{s:?} is not a positive integer")),
    }
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let alpha: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if alpha > 0.0 && alpha < 100.0 {
        Ok(alpha)
    } else {
        Err(format!("alpha must lie in (0, 100), got {alpha}"))
    }
}

impl Global {
    fn strategy(&self) -> CliResult<Strategy> {
        match self.strategy {
            StrategyArg::Rank => {
                if self.alpha.is_some() {
                    return usage("--alpha applies only to --strategy percentile");
                }
                Ok(Strategy::Rank {
                    m: self.m.unwrap_or(DEFAULT_TOP_M),
                    suppress_overlap: !self.no_suppress,
                })
            }
            StrategyArg::Percentile => {
                if self.m.is_some() || self.no_suppress {
                    return usage("--M and --no-suppress apply only to --strategy rank");
                }
                Ok(Strategy::Percentile {
                    alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
                })
            }
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transcribe a page image and save its token stream (replayed from
    /// archives unless --live)
    Scan(ScanArgs),
    /// Compute the entropy series and hotspots of transcripts or synthetic series
    Analyze(AnalyzeArgs),
    /// Draw a heatmap of a transcript
    Render(RenderArgs),
    /// Measure hotspot overlap with annotated or planted error tokens
    Evaluate(EvaluateArgs),
    /// Ask the model to re-examine each hotspot and propose corrections
    Reprompt(RepromptArgs),
    /// Generate a synthetic entropy series with planted error spans
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct EndpointArgs {
    /// Send requests to the endpoint and archive the responses
    #[arg(long)]
    live: bool,
    /// Directory of <hash>.replay.json archives [default: replay/ next to the input]
    #[arg(long)]
    archive_dir: Option<PathBuf>,
    /// TOML file with the prompts (see config/prompts.toml)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    /// Environment variable holding the API key
    #[arg(long, default_value = DEFAULT_AUTH_ENV)]
    auth_env: String,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS, value_parser = clap::value_parser!(u32).range(1..))]
    max_tokens: u32,
}

impl EndpointArgs {
    fn prompts(&self) -> CliResult<Prompts> {
        Ok(match &self.config {
            Some(path) => Prompts::load(path)?,
            None => Prompts::default(),
        })
    }

    fn request_config(&self, prompts: &Prompts, k: u32) -> RequestConfig {
        let mut cfg = RequestConfig::with_prompts(prompts);
        cfg.model_id = self.model.clone();
        cfg.k = k;
        cfg.endpoint_url = self.endpoint.clone();
        cfg.auth_token_env = self.auth_env.clone();
        cfg.max_tokens = self.max_tokens;
        cfg
    }

    fn transport(&self, cfg: &RequestConfig, default_dir: &Path) -> CliResult<Box<dyn Transport>> {
        let store = ReplayStore::new(self.archive_dir.clone().unwrap_or_else(|| default_dir.join("replay")));
        Ok(if self.live {
            Box::new(RecordingTransport::new(HttpTransport::from_config(cfg)?, store))
        } else {
            Box::new(ReplayTransport::new(store))
        })
    }
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Page image
    image: PathBuf,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Re-request with larger k while any token's tail mass exceeds the threshold
    #[arg(long)]
    adaptive: bool,
    /// Tail-mass threshold for --adaptive, in (0, 1) [default: 0.1]
    #[arg(long)]
    tail_threshold: Option<f64>,
    /// Transcript JSONL output, `-` for stdout [default: <image stem>.transcript.jsonl]
    #[arg(long)]
    out: Option<String>,
    /// LaTeX reply output [default: <image stem>.tex]
    #[arg(long)]
    tex: Option<PathBuf>,
    /// Also analyze and write a heatmap in this mode
    #[arg(long, value_enum)]
    heatmap: Option<ModeArg>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Transcript JSONL or synthetic series JSON files, `-` for stdin
    #[arg(default_value = "-")]
    inputs: Vec<String>,
    /// Output path for a single input, `-` for stdout [default: -]; with several
    /// inputs, reports go to <input stem>.report.json
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ansi,
    Html,
    Latex,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ansi => RenderMode::Ansi,
            ModeArg::Html => RenderMode::Html,
            ModeArg::Latex => RenderMode::Latex,
        }
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Transcript JSONL, `-` for stdin
    transcript: String,
    /// Analysis JSON from `analyze` [default: computed from the global flags]
    #[arg(long)]
    report: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Html)]
    mode: ModeArg,
    /// Comma-separated hex color stops, low to high
    #[arg(long, default_value = "#ffffff,#ffd84d,#d7301f")]
    palette: String,
    /// Do not outline hotspot spans
    #[arg(long)]
    no_outline: bool,
    /// Include hotspot scores (HTML table, LaTeX comments, stderr for ANSI)
    #[arg(long)]
    scores: bool,
    /// Pass token text into LaTeX unescaped
    #[arg(long)]
    latex_trust: bool,
    /// Use the eight basic ANSI colors instead of 24-bit color
    #[arg(long)]
    basic_colors: bool,
    /// Page image for the HTML panel [default: the transcript's image, next to it]
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output path, `-` for stdout [default: <stem>.heatmap.html|tex, stdout for ansi]
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Analysis JSON from `analyze`, `-` for stdin
    #[arg(long, default_value = "-")]
    report: String,
    /// Ground truth: annotation JSON, synthetic series JSON, or `-` for the
    /// truth embedded in the report (else stdin)
    #[arg(long)]
    truth: Option<String>,
    /// Annotation JSON files; several are merged by union
    #[arg(long, num_args = 1..)]
    annotations: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct RepromptArgs {
    /// Transcript JSONL
    transcript: PathBuf,
    /// Analysis JSON from `analyze` [default: computed from the global flags]
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Tokens of context on each side of a hotspot
    #[arg(long, default_value_t = DEFAULT_CONTEXT_RADIUS)]
    context_radius: usize,
    /// Send only the marked transcript, without the page image
    #[arg(long)]
    text_only: bool,
    /// Apply proposed corrections to a copy of the transcript
    #[arg(long)]
    auto_accept: bool,
    /// Page image [default: the transcript's image, next to it]
    #[arg(long)]
    image: Option<PathBuf>,
    /// Results JSONL output, `-` for stdout
    #[arg(long, default_value = "-")]
    out: String,
    /// Patched transcript output [default: <stem>.patched.transcript.jsonl]
    #[arg(long)]
    patched_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Baseline entropy in bits
    #[arg(long, default_value_t = 0.3)]
    baseline: f64,
    /// Baseline noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    sd: f64,
    /// Number of planted spans
    #[arg(long, default_value_t = 3)]
    spans: usize,
    #[arg(long, default_value_t = 8)]
    span_length: usize,
    /// Bits added inside planted spans
    #[arg(long, default_value_t = 2.0)]
    spike: f64,
    /// Minimum baseline gap between spans [default: W]
    #[arg(long)]
    min_gap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path, `-` for stdout
    #[arg(long, default_value = "-")]
    out: String,
}

/// Output of `analyze`: the hotspot report plus the series behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
    #[serde(flatten)]
    pub report: HotspotReport,
    pub entropy: Vec<f64>,
    pub window_means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<AnnotationSet>,
}

/// Output of `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub document: String,
    pub spec: SyntheticSpec,
    pub entropy: Vec<f64>,
    pub truth: AnnotationSet,
}

/// Output of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
    pub annotator: String,
    #[serde(flatten)]
    pub overlap: OverlapResult,
}

/// Window means and hotspot report for an entropy series.
pub fn analyze_series(series: &EntropySeries, w: usize, strategy: Strategy) -> entroheat_core::Result<(WindowSeries, HotspotReport)> {
    let ws = window_means(series.values(), w)?;
    let report = select(&ws, strategy)?;
    Ok((ws, report))
}

/// Standard streams, replaceable in tests.
pub struct Streams<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(args: I, io: &mut Streams) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { io.stderr } else { io.stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(io.stderr, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, io) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(message)) => {
            let _ = writeln!(io.stderr, "error: {message}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        // the reader went away (`| head`)
        Err(CliError::Core(entroheat_core::Error::Io(e))) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(CliError::Core(err)) => {
            let _ = writeln!(io.stderr, "entroheat: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(cli: Cli, io: &mut Streams) -> CliResult<()> {
    let g = cli.global;
    match cli.command {
        Command::Scan(a) => scan(&g, a, io),
        Command::Analyze(a) => analyze(&g, a, io),
        Command::Render(a) => render(&g, a, io),
        Command::Evaluate(a) => evaluate(a, io),
        Command::Reprompt(a) => reprompt(&g, a, io),
        Command::Synth(a) => synth(&g, a, io),
    }
}

fn read_source(path: &str, io: &mut Streams) -> CliResult<Vec<u8>> {
    if path == "-" {
        let mut buf = Vec::new();
        io.stdin.read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        fs::read(path).map_err(|e| {
            CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))))
        })
    }
}

fn write_sink(path: &str, bytes: &[u8], io: &mut Streams) -> CliResult<()> {
    if path == "-" {
        io.stdout.write_all(bytes)?;
        io.stdout.flush()?;
    } else {
        write_file(Path::new(path), bytes)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

/// `dir/page.transcript.jsonl` → `dir/page`.
pub fn output_base(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut stem = name.as_str();
    for suffix in [".jsonl", ".json", ".transcript", ".report"] {
        stem = stem.strip_suffix(suffix).unwrap_or(stem);
    }
    if stem.is_empty() {
        stem = "out";
    }
    path.with_file_name(stem)
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn to_json_line<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec(value)?;
    out.push(b'\n');
    Ok(out)
}

fn analysis_of_transcript(g: &Global, t: &Transcript, strategy: Strategy) -> CliResult<Analysis> {
    let series = entropy_series(t, g.exclude_special);
    let (ws, report) = analyze_series(&series, g.w, strategy)?;
    Ok(Analysis {
        document: t.document_id().map(str::to_owned),
        report,
        entropy: series.values().to_vec(),
        window_means: ws.means().to_vec(),
        truth: None,
    })
}

enum AnalyzeInput {
    Transcript(Transcript),
    Synthetic(SynthDocument),
}

fn parse_analyze_input(bytes: &[u8]) -> CliResult<AnalyzeInput> {
    if let Ok(Value::Object(obj)) = serde_json::from_slice::<Value>(bytes) {
        if obj.contains_key("entropy") && !obj.contains_key("meta") {
            let doc: SynthDocument = serde_json::from_value(Value::Object(obj))?;
            return Ok(AnalyzeInput::Synthetic(doc));
        }
    }
    Ok(AnalyzeInput::Transcript(read_transcript(bytes)?))
}

fn analyze_bytes(g: &Global, strategy: Strategy, bytes: &[u8]) -> CliResult<Analysis> {
    match parse_analyze_input(bytes)? {
        AnalyzeInput::Transcript(t) => analysis_of_transcript(g, &t, strategy),
        AnalyzeInput::Synthetic(doc) => {
            let series = EntropySeries::from_values(doc.entropy.clone())?;
            if g.exclude_special {
                log::warn!("--exclude-special has no effect on a synthetic series");
            }
            let (ws, report) = analyze_series(&series, g.w, strategy)?;
            Ok(Analysis {
                document: Some(doc.document),
                report,
                entropy: doc.entropy,
                window_means: ws.means().to_vec(),
                truth: Some(doc.truth),
            })
        }
    }
}

fn scan(g: &Global, a: ScanArgs, io: &mut Streams) -> CliResult<()> {
    if a.tail_threshold.is_some() && !a.adaptive {
        return usage("--tail-threshold requires --adaptive");
    }
    let strategy = g.strategy()?;
    // A missing image aborts before any request is built.
    let image = PageImage::load(&a.image)?;
    let prompts = a.endpoint.prompts()?;
    let cfg = a.endpoint.request_config(&prompts, g.k);
    cfg.validate()?;
    let image_dir = parent_dir(&a.image);
    let transport = a.endpoint.transport(&cfg, &image_dir)?;

    let transcript = if a.adaptive {
        let policy = EscalationPolicy {
            tail_threshold: a.tail_threshold.unwrap_or(DEFAULT_TAIL_THRESHOLD),
            ..Default::default()
        };
        transcribe_adaptive(transport.as_ref(), &image, &cfg, &policy)?
    } else {
        transcribe(transport.as_ref(), &image, &cfg)?
    };

    let stem = image_dir.join(a.image.file_stem().unwrap_or_default());
    let out = a
        .out
        .unwrap_or_else(|| with_suffix(&stem, "transcript.jsonl").display().to_string());
    write_sink(&out, &transcript_to_bytes(&transcript)?, io)?;
    let tex = a.tex.unwrap_or_else(|| with_suffix(&stem, "tex"));
    write_file(&tex, transcript.text().as_bytes())?;

    let series = entropy_series(&transcript, g.exclude_special);
    writeln!(
        io.stderr,
        "scanned {}: {} tokens, k = {}, max tail mass {:.3}",
        image.reference,
        transcript.len(),
        transcript.source_meta().get("k").map_or("?", String::as_str),
        series.max_tail_mass()
    )?;
    if transcript.source_meta().contains_key("escalation_exhausted") {
        writeln!(io.stderr, "warning: tail mass still above the threshold after escalation")?;
    }

    if let Some(mode) = a.heatmap {
        let analysis = analysis_of_transcript(g, &transcript, strategy)?;
        let spec = RenderSpec::new(mode.into());
        let bytes = render_with_image(&transcript, &analysis.report, &spec, Some(&image.bytes))?;
        let base = if out == "-" { stem.clone() } else { output_base(Path::new(&out)) };
        match RenderMode::from(mode).file_suffix() {
            Some(suffix) => {
                let path = with_suffix(&base, suffix);
                write_file(&path, &bytes)?;
                writeln!(io.stderr, "wrote {}", path.display())?;
            }
            None => io.stderr.write_all(&bytes)?,
        }
    }
    Ok(())
}

fn analyze(g: &Global, a: AnalyzeArgs, io: &mut Streams) -> CliResult<()> {
    let strategy = g.strategy()?;
    if a.inputs.len() == 1 {
        let bytes = read_source(&a.inputs[0], io)?;
        let analysis = analyze_bytes(g, strategy, &bytes)?;
        return write_sink(a.out.as_deref().unwrap_or("-"), &to_json_line(&analysis)?, io);
    }
    if a.out.is_some() {
        return usage("--out takes a single input; several inputs write <stem>.report.json each");
    }
    if a.inputs.iter().any(|i| i == "-") {
        return usage("stdin (`-`) cannot be combined with other inputs");
    }
    let results: Vec<CliResult<PathBuf>> = std::thread::scope(|scope| {
        let handles: Vec<_> = a
            .inputs
            .iter()
            .map(|input| {
                scope.spawn(move || -> CliResult<PathBuf> {
                    let bytes = fs::read(input)
                        .map_err(|e| CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{input}: {e}")))))?;
                    let analysis = analyze_bytes(g, strategy, &bytes)?;
                    let path = with_suffix(&output_base(Path::new(input)), "report.json");
                    write_file(&path, &to_json_line(&analysis)?)?;
                    Ok(path)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("analysis thread panicked")).collect()
    });
    for result in results {
        writeln!(io.stderr, "wrote {}", result?.display())?;
    }
    Ok(())
}

fn load_analysis(bytes: &[u8]) -> CliResult<Analysis> {
    Ok(serde_json::from_slice(bytes)?)
}

fn resolve_image(explicit: Option<&Path>, transcript_path: Option<&Path>, t: &Transcript) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let reference = t.source_meta().get("image")?;
    let reference = Path::new(reference);
    Some(match transcript_path {
        Some(tp) if reference.is_relative() => parent_dir(tp).join(reference),
        _ => reference.to_path_buf(),
    })
}

fn render(g: &Global, a: RenderArgs, io: &mut Streams) -> CliResult<()> {
    let mode = RenderMode::from(a.mode);
    if a.latex_trust && mode != RenderMode::Latex {
        return usage("--latex-trust applies only to --mode latex");
    }
    if a.basic_colors && mode != RenderMode::Ansi {
        return usage("--basic-colors applies only to --mode ansi");
    }
    if a.transcript == "-" && a.report.as_deref() == Some("-") {
        return usage("transcript and report cannot both come from stdin");
    }
    let strategy = g.strategy()?;
    let transcript = read_transcript(read_source(&a.transcript, io)?.as_slice())?;
    let report = match &a.report {
        Some(path) => load_analysis(&read_source(path, io)?)?.report,
        None => analysis_of_transcript(g, &transcript, strategy)?.report,
    };

    let mut spec = RenderSpec::new(mode);
    spec.palette = Palette::parse(&a.palette)?;
    spec.hotspot_outline = !a.no_outline;
    spec.include_scores = a.scores;
    if a.latex_trust {
        spec.latex_escaping = LatexEscaping::Trust;
    }
    if a.basic_colors {
        spec.ansi_colors = AnsiColors::Basic;
    }

    let transcript_path = (a.transcript != "-").then(|| Path::new(&a.transcript));
    let image = if mode == RenderMode::Html {
        match resolve_image(a.image.as_deref(), transcript_path, &transcript) {
            Some(path) => match fs::read(&path) {
                Ok(bytes) => Some(bytes),
                Err(e) if a.image.is_some() => {
                    return Err(CliError::Core(Error::Startup(format!("image {}: {e}", path.display()))))
                }
                Err(_) => {
                    writeln!(io.stderr, "warning: image {} not found; rendering without it", path.display())?;
                    None
                }
            },
            None => None,
        }
    } else {
        None
    };
    let bytes = render_with_image(&transcript, &report, &spec, image.as_deref())?;

    if mode == RenderMode::Ansi && a.scores {
        for h in &report.hotspots {
            writeln!(io.stderr, "hotspot {}..{}: {:.4} bits", h.start, h.end, h.score)?;
        }
    }
    let out = match (a.out, mode.file_suffix(), transcript_path) {
        (Some(out), _, _) => out,
        (None, Some(suffix), Some(tp)) => with_suffix(&output_base(tp), suffix).display().to_string(),
        _ => "-".to_string(),
    };
    write_sink(&out, &bytes, io)?;
    if out != "-" {
        writeln!(io.stderr, "wrote {out}")?;
    }
    Ok(())
}

fn annotations_from_bytes(bytes: &[u8], origin: &str) -> CliResult<AnnotationSet> {
    let value: Value = serde_json::from_slice(bytes)?;
    let value = match value {
        Value::Object(mut obj) if obj.contains_key("truth") => obj.remove("truth").unwrap_or(Value::Null),
        other => other,
    };
    if value.is_null() {
        return Err(CliError::Core(Error::Structure(format!("{origin} holds no annotations"))));
    }
    Ok(serde_json::from_value(value)?)
}

fn evaluate(a: EvaluateArgs, io: &mut Streams) -> CliResult<()> {
    match (&a.truth, a.annotations.is_empty()) {
        (Some(_), false) => return usage("use either --truth or --annotations, not both"),
        (None, true) => return usage("one of --truth or --annotations is required"),
        _ => {}
    }
    let analysis = load_analysis(&read_source(&a.report, io)?)?;
    let annotations = if let Some(truth) = &a.truth {
        if truth == "-" {
            match &analysis.truth {
                Some(t) => t.clone(),
                None if a.report != "-" => annotations_from_bytes(&read_source("-", io)?, "stdin")?,
                None => {
                    return Err(CliError::Core(Error::Structure(
                        "--truth - but the report embeds no truth and stdin is already the report".into(),
                    )))
                }
            }
        } else {
            annotations_from_bytes(&read_source(truth, io)?, truth)?
        }
    } else {
        let mut sets = Vec::new();
        for path in &a.annotations {
            let origin = path.display().to_string();
            sets.push(annotations_from_bytes(&read_source(&origin, io)?, &origin)?);
        }
        if sets.len() == 1 {
            sets.pop().expect("one set")
        } else {
            union_annotations(&sets)?
        }
    };
    annotations.validate(analysis.report.series_len())?;
    if let Some(doc) = &analysis.document {
        if doc != &annotations.document_id {
            writeln!(
                io.stderr,
                "warning: report is for {doc:?} but annotations are for {:?}",
                annotations.document_id
            )?;
        }
    }
    let result = Evaluation {
        document: analysis.document.clone(),
        annotator: annotations.annotator_id.clone(),
        overlap: overlap(&analysis.report, &annotations),
    };
    match result.overlap.recall {
        Some(r) => writeln!(io.stderr, "recall {r:.4}, budget {:.4}", result.overlap.budget_fraction)?,
        None => writeln!(io.stderr, "no annotated tokens; recall undefined")?,
    }
    write_sink("-", &to_json_line(&result)?, io)
}

fn reprompt(g: &Global, a: RepromptArgs, io: &mut Streams) -> CliResult<()> {
    let strategy = g.strategy()?;
    let transcript = read_transcript(read_source(&a.transcript.display().to_string(), io)?.as_slice())?;
    let report = match &a.report {
        Some(path) => load_analysis(&read_source(&path.display().to_string(), io)?)?.report,
        None => analysis_of_transcript(g, &transcript, strategy)?.report,
    };
    let image = if a.text_only {
        None
    } else {
        let path = resolve_image(a.image.as_deref(), Some(&a.transcript), &transcript).ok_or_else(|| {
            CliError::Core(Error::Startup(
                "the transcript names no image; pass --image or --text-only".into(),
            ))
        })?;
        Some(PageImage::load(&path)?)
    };
    let prompts = a.endpoint.prompts()?;
    let cfg = a.endpoint.request_config(&prompts, g.k);
    let transport = a.endpoint.transport(&cfg, &parent_dir(&a.transcript))?;
    let rp = RepromptConfig {
        context_radius: a.context_radius,
        include_image: !a.text_only,
        auto_accept: a.auto_accept,
        ..RepromptConfig::with_prompts(&prompts)
    };
    let outcome = reprompt_hotspots(transport.as_ref(), &transcript, &report, image.as_ref(), &cfg, &rp)?;
    write_sink(&a.out, outcome.results_jsonl()?.as_bytes(), io)?;
    if let Some(patched) = &outcome.patched {
        let path = a
            .patched_out
            .unwrap_or_else(|| with_suffix(&output_base(&a.transcript), "patched.transcript.jsonl"));
        write_file(&path, &transcript_to_bytes(patched)?)?;
        writeln!(io.stderr, "wrote {}", path.display())?;
    }
    Ok(())
}

fn synth(g: &Global, a: SynthArgs, io: &mut Streams) -> CliResult<()> {
    let spec = SyntheticSpec::with_random_spans(
        a.n,
        a.baseline,
        a.sd,
        a.spans,
        a.span_length,
        a.spike,
        a.min_gap.unwrap_or(g.w),
        a.seed,
    )?;
    let (series, truth) = generate_synthetic(&spec)?;
    let doc = SynthDocument {
        document: spec.document_id(),
        spec,
        entropy: series.values().to_vec(),
        truth,
    };
    write_sink(&a.out, &to_json_line(&doc)?, io)
}
