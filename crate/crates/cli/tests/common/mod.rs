#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use entroheat_core::ocr_client::PageImage;
use entroheat_core::reprompt::{SNIPPET_CLOSE, SNIPPET_OPEN};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

pub struct Output {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Output {
    pub fn stdout_str(&self) -> String {
        String::from_utf8(self.stdout.clone()).unwrap()
    }

    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout_str()))
    }
}

/// Runs the CLI in-process.
pub fn run(args: &[&str], stdin: &[u8]) -> Output {
    let mut input = stdin;
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("entroheat").chain(args.iter().copied());
    let code = entroheat_cli::run(
        argv,
        &mut entroheat_cli::Streams {
            stdin: &mut input,
            stdout: &mut stdout,
            stderr: &mut stderr,
        },
    );
    Output {
        code,
        stdout,
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub fn run_ok(args: &[&str], stdin: &[u8]) -> Output {
    let out = run(args, stdin);
    assert_eq!(out.code, 0, "entroheat {args:?} failed: {}", out.stderr);
    out
}

/// Copies the given fixture files (and the replay directory) into a fresh
/// temporary directory.
pub fn fixture_copy(files: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in files {
        std::fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    let replay = dir.path().join("replay");
    std::fs::create_dir(&replay).unwrap();
    for entry in std::fs::read_dir(fixtures().join("replay")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), replay.join(entry.file_name())).unwrap();
    }
    dir
}

pub struct Captured {
    pub authorization: Option<String>,
    pub body: Vec<u8>,
}

/// A minimal HTTP/1.1 endpoint on localhost, one request per connection.
pub struct MockServer {
    pub url: String,
    pub captured: Arc<Mutex<Vec<Captured>>>,
}

type Handler = dyn Fn(&[u8]) -> (u16, Vec<u8>) + Send + Sync;

impl MockServer {
    pub fn start(handler: impl Fn(&[u8]) -> (u16, Vec<u8>) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&captured);
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let _ = serve(stream, &*handler, &sink);
            }
        });
        Self { url, captured }
    }

    pub fn requests(&self) -> usize {
        self.captured.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, handler: &Handler, sink: &Mutex<Vec<Captured>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let (status, reply) = handler(&body);
    sink.lock().unwrap().push(Captured { authorization, body });
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.len()
    )?;
    stream.write_all(&reply)?;
    stream.flush()
}

/// Answers like the model would for the fixture pages: transcription
/// requests get the canned response for (image, top_logprobs); re-prompt
/// requests get a correction of the known misreadings in the snippet.
pub fn fixture_handler() -> impl Fn(&[u8]) -> (u16, Vec<u8>) + Send + Sync + 'static {
    let dir = fixtures();
    let pages: Vec<(String, String)> = ["page", "page2"]
        .iter()
        .map(|stem| {
            let img = PageImage::load(&dir.join(format!("{stem}.png"))).unwrap();
            (img.data_url(), stem.to_string())
        })
        .collect();
    let corrections: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("responses/corrections.json")).unwrap()).unwrap();
    move |body| {
        let req: Value = serde_json::from_slice(body).unwrap();
        let user = &req["messages"][1]["content"];
        if req.get("logprobs").is_some() {
            let url = user[1]["image_url"]["url"].as_str().unwrap_or_default();
            let Some((_, stem)) = pages.iter().find(|(u, _)| u == url) else {
                return (400, br#"{"error":{"message":"unknown image"}}"#.to_vec());
            };
            let k = req["top_logprobs"].as_u64().unwrap();
            let path = dir.join(format!("responses/{stem}.k{k}.json"));
            let Ok(text) = std::fs::read_to_string(path) else {
                return (400, br#"{"error":{"message":"no canned response"}}"#.to_vec());
            };
            let value: Value = serde_json::from_str(&text).unwrap();
            return (200, serde_json::to_vec(&value).unwrap());
        }
        let text = match user {
            Value::String(s) => s.clone(),
            other => other[0]["text"].as_str().unwrap().to_string(),
        };
        let open = text.find(SNIPPET_OPEN).unwrap() + SNIPPET_OPEN.len();
        let close = text.find(SNIPPET_CLOSE).unwrap();
        let snippet = &text[open..close];
        let mut corrected = snippet.to_string();
        let mut notes = Vec::new();
        for c in &corrections {
            let (wrong, right) = (c["wrong"].as_str().unwrap(), c["right"].as_str().unwrap());
            if corrected.contains(wrong) {
                corrected = corrected.replace(wrong, right);
                notes.push(format!("the page reads `{right}`, not `{wrong}`"));
            }
        }
        let rationale = if notes.is_empty() {
            "The marked passage matches the page.".to_string()
        } else {
            format!("Corrected: {}.", notes.join("; "))
        };
        let reply = json!({"corrected": corrected, "rationale": rationale});
        let content = format!("```json\n{}\n```", serde_json::to_string_pretty(&reply).unwrap());
        let response = json!({
            "id": "chatcmpl-fixture-reprompt",
            "object": "chat.completion",
            "created": 1760000000,
            "model": req["model"],
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        });
        (200, serde_json::to_vec(&response).unwrap())
    }
}
