//! `lgsa` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod settings;

use std::process::ExitCode;

use commands::CmdError;
use settings::{Settings, KEY_DOCS};

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("gen-data", "generate synthetic LGSV volumes"),
    ("train", "train one model on the synthetic benchmark"),
    ("eval", "evaluate a checkpoint on the test split"),
    ("ablate", "run an ablation grid over a seed list"),
    ("gradcheck", "finite-difference checks of every op"),
    ("export-masks", "export input/gt/prediction PGMs for one volume"),
];

fn usage() -> String {
    let mut s = String::from(
        "usage: lgsa <subcommand> [--config FILE] [--key value]... [--dry-run]\n\nsubcommands:\n",
    );
    for (name, doc) in SUBCOMMANDS {
        s.push_str(&format!("  {name:<14} {doc}\n"));
    }
    s.push_str("\nsettings (defaults in `lgsa <subcommand> --dry-run`):\n");
    for (key, doc) in KEY_DOCS {
        s.push_str(&format!("  --{key:<16} {doc}\n"));
    }
    s.push_str("\nLGSA_THREADS caps ablation worker threads.\n");
    s
}

/// Parses argv into (subcommand, settings). `--config` loads a key=value
/// file first; later flags override it.
fn parse_args(args: &[String]) -> Result<(String, Settings), String> {
    let mut iter = args.iter().peekable();
    let sub = iter
        .next()
        .ok_or_else(|| "missing subcommand".to_string())?
        .clone();
    if !SUBCOMMANDS.iter().any(|(name, _)| *name == sub) {
        return Err(format!("unknown subcommand `{sub}`"));
    }
    // First pass: collect (key, value) pairs in order.
    let mut pairs: Vec<(String, String)> = Vec::new();
    while let Some(tok) = iter.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            return Err(format!("unexpected argument `{tok}` (flags are --key value)"));
        };
        let (key, value) = if let Some((k, v)) = flag.split_once('=') {
            (k.to_string(), v.to_string())
        } else {
            // Bare boolean flags; everything else takes the next token.
            let is_bare_bool = matches!(flag, "dry-run" | "dry_run" | "checked_input")
                && !iter
                    .peek()
                    .is_some_and(|next| !next.starts_with("--"));
            if is_bare_bool {
                (flag.to_string(), "true".to_string())
            } else {
                let v = iter
                    .next()
                    .ok_or_else(|| format!("flag --{flag} expects a value"))?;
                (flag.to_string(), v.clone())
            }
        };
        pairs.push((key, value));
    }
    let mut settings = Settings::default();
    // Config file loads first so flags override it.
    for (k, v) in pairs.iter().filter(|(k, _)| k == "config") {
        let _ = k;
        settings.load_file(v)?;
    }
    for (k, v) in pairs.iter().filter(|(k, _)| k != "config") {
        settings.apply(k, v)?;
    }
    Ok((sub, settings))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{}", usage());
        return ExitCode::from(if args.is_empty() { 1 } else { 0 });
    }
    let (sub, settings) = match parse_args(&args) {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("error: {e}\n\n{}", usage());
            return ExitCode::from(1);
        }
    };
    if settings.dry_run {
        print!("subcommand = {sub}\n{}", settings.resolved_text());
        return ExitCode::from(0);
    }
    let result = match sub.as_str() {
        "gen-data" => commands::gen_data(&settings),
        "train" => commands::train(&settings),
        "eval" => commands::eval(&settings),
        "ablate" => commands::ablate(&settings),
        "gradcheck" => commands::gradcheck(&settings),
        "export-masks" => commands::export_masks(&settings),
        _ => unreachable!("subcommand validated in parse_args"),
    };
    match result {
        Ok(()) => ExitCode::from(0),
        Err(CmdError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
