//! Command-line driver for the normalized Chern-Ricci flow laboratory.
//!
//! The binary exposes four subcommands over the core crate:
//!
//! * `run`      - integrate the flow and write the full artifact set,
//! * `verify`   - re-check the tracked estimates on a stored trajectory,
//! * `ke`       - solve the static limit equation and verify its properties,
//! * `selftest` - deterministic end-to-end suite at small resolution.
//!
//! Configuration is a flat `key = value` file plus `--key=value` overrides;
//! see [`config`] for the key set. Exit codes: 0 success, 2 configuration or
//! input-format error, 3 estimate violation, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod scenario;
pub mod summary;

use commands::{exit_code_for, EXIT_CONFIG, EXIT_OK};

const USAGE: &str = "\
usage: crf <command> [config-file] [--key=value ...]

commands:
  run       integrate the flow and write trajectory, diagnostics, summary,
            heatmaps, and a reloadable scenario directory under out_dir
  verify    rebuild the scenario, load the stored trajectory, and re-check
            every tracked estimate; exits 3 on an estimate violation
  ke        solve the static limit equation, check the Einstein-type identity,
            volume pinch, and (with compare=) the uniqueness margins
  selftest  run a deterministic small-resolution check suite (no config)

configuration:
  an optional flat text file of `key = value` lines ('#' comments), then any
  number of --key=value overrides; later overrides win. Unknown keys are
  rejected with the offending key echoed; the README lists the full key set.

environment:
  CRF_THREADS  accepted for compatibility and validated (positive integer),
               but inert: the numerical core is sequential by design so that
               identical runs produce bit-identical artifacts.

exit codes:
  0  success
  2  configuration or input-format error
  3  estimate violation (a tracked bound fails or drifts)
  4  numerical failure (positivity loss, solver breakdown, non-finite data)
";

/// Parse arguments (without the program name) and run the selected command.
/// Returns the process exit code.
pub fn dispatch(args: Vec<String>) -> i32 {
    if let Ok(threads) = std::env::var("CRF_THREADS") {
        match threads.trim().parse::<usize>() {
            Ok(v) if v >= 1 => {}
            _ => {
                eprintln!(
                    "error: CRF_THREADS must be a positive integer, got {threads:?}"
                );
                return EXIT_CONFIG;
            }
        }
    }

    let mut it = args.into_iter();
    let command = match it.next() {
        Some(c) => c,
        None => {
            eprint!("{USAGE}");
            return EXIT_CONFIG;
        }
    };
    if command == "--help" || command == "-h" || command == "help" {
        print!("{USAGE}");
        return EXIT_OK;
    }

    let rest: Vec<String> = it.collect();
    match command.as_str() {
        "selftest" => {
            if !rest.is_empty() {
                eprintln!("error: selftest takes no arguments (got {:?})", rest);
                return EXIT_CONFIG;
            }
            commands::cmd_selftest()
        }
        "run" | "verify" | "ke" => {
            let cfg = match parse_run_args(&rest) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_code_for(&e);
                }
            };
            let result = match command.as_str() {
                "run" => commands::cmd_run(&cfg),
                "verify" => commands::cmd_verify(&cfg),
                _ => commands::cmd_ke(&cfg),
            };
            match result {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            }
        }
        other => {
            eprintln!("error: unknown command {other:?}");
            eprint!("{USAGE}");
            EXIT_CONFIG
        }
    }
}

/// Split positional config path from `--key=value` overrides and build the
/// validated configuration.
fn parse_run_args(rest: &[String]) -> crf_core::Result<config::RunConfig> {
    let mut file: Option<&str> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    for arg in rest {
        if let Some(body) = arg.strip_prefix("--") {
            match body.split_once('=') {
                Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
                None => {
                    return Err(crf_core::CrfError::InvalidParam(format!(
                        "override {arg:?} must look like --key=value"
                    )));
                }
            }
        } else if file.is_none() {
            file = Some(arg);
        } else {
            return Err(crf_core::CrfError::InvalidParam(format!(
                "unexpected extra argument {arg:?} (only one config file is allowed)"
            )));
        }
    }
    let text = match file {
        Some(path) => Some(std::fs::read_to_string(&path).map_err(|e| {
            crf_core::CrfError::Io(std::io::Error::new(e.kind(), format!("{path}: {e}")))
        })?),
        None => None,
    };
    config::build_config(text.as_deref(), &overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_bad_commands_use_the_documented_codes() {
        assert_eq!(dispatch(vec!["--help".into()]), 0);
        assert_eq!(dispatch(vec![]), 2);
        assert_eq!(dispatch(vec!["frobnicate".into()]), 2);
        assert_eq!(dispatch(vec!["selftest".into(), "extra".into()]), 2);
        assert_eq!(dispatch(vec!["run".into(), "--kappa".into()]), 2);
        assert_eq!(dispatch(vec!["run".into(), "--no_such_key=1".into()]), 2);
        assert_eq!(dispatch(vec!["run".into(), "/no/such/config.txt".into()]), 2);
    }
}
