use std::io::Write;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use ratchet_ruin_cli::args::Cli;

fn emit(text: &str, out: Option<&std::path::Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing stdout"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.command.common().out.clone();
    let (text, code) = match cli.command.run() {
        Ok(o) => (o.text, o.exit_code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut s = serde_json::to_string_pretty(&e.to_json()).expect("error serializes");
            s.push('\n');
            (s, e.exit_code())
        }
    };
    if let Err(e) = emit(&text, out.as_deref()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(ratchet_ruin_cli::error::EXIT_VALIDATION);
    }
    ExitCode::from(code)
}
