use std::io::{self, Write};

fn main() {
    // The HTTP stack dumps raw request bytes, credential header included, at
    // trace level; it is capped regardless of RUST_LOG.
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .filter_module("ureq", log::LevelFilter::Info)
        .filter_module("ureq_proto", log::LevelFilter::Info)
        .init();
    let stdin = io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = io::stdout().lock();
    let mut stderr = io::stderr().lock();
    let code = entroheat_cli::run(
        std::env::args_os(),
        &mut entroheat_cli::Streams {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
        },
    );
    let _ = stdout.flush();
    std::process::exit(code);
}
