use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use spherical::fast_output::{bench, bench_csv};

use crate::{emit, UsageError};

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Numbers of classes to time.
    #[arg(long = "D-list", value_delimiter = ',', default_value = "1000,10000,100000")]
    pub d_list: Vec<usize>,
    /// Input width of the output layer.
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if args.d_list.is_empty() || args.d_list.iter().any(|&n| n < 2) || args.d == 0 || args.steps == 0 {
        return Err(UsageError("need class counts ≥ 2, d ≥ 1 and steps ≥ 1".into()).into());
    }
    let rows = bench(&args.d_list, args.d, args.steps, args.seed);
    emit(args.out.as_deref(), out, &bench_csv(&rows))
}
