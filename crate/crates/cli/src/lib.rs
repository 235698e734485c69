//! The `spherical` command line: gradient checks, bound evaluation, training
//! runs and output-layer benchmarks.
//!
//! Exit codes are 0 on success, 1 when a check or a run fails and 2 for usage
//! errors (bad flags, unknown keys, missing data).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bound_eval;
pub mod config;
pub mod gradcheck;
pub mod train;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::{Parser, Subcommand};

/// Invalid invocation or configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check that ran but did not pass; maps to exit code 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Debug, Parser)]
#[command(name = "spherical", version, about = "Spherical-family losses: checks, bounds, training and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Evaluate the spherical log-sum-exp bound against the exact log-softmax loss.
    BoundEval(bound_eval::BoundEvalArgs),
    /// Train MLP classifiers for one or more seeds and report test metrics.
    Train(train::TrainArgs),
    /// Time per-example output-layer steps, factored against dense.
    Bench(bench::BenchArgs),
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command. Results go
/// to `out`, diagnostics to `err`; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Gradcheck(a) => gradcheck::run(&a, out, err),
        Command::BoundEval(a) => bound_eval::run(&a, out, err),
        Command::Train(a) => train::run(&a, out, err),
        Command::Bench(a) => bench::run(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "error: {e:#}");
            code
        }
    }
}

/// Writes `text` to `path` when given, otherwise to `out`.
pub(crate) fn emit(path: Option<&std::path::Path>, out: &mut dyn Write, text: &str) -> anyhow::Result<()> {
    use anyhow::Context;
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => out.write_all(text.as_bytes()).context("writing output"),
    }
}
