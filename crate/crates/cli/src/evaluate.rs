use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use meshgrow::dataset::Dataset;
use meshgrow::metrics::{evaluate, EvalReport};
use meshgrow::synth::Split;
use meshgrow::train::load_generator;

use crate::config::{prepare_out_dir, require_dir, require_file};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Report directory for metrics.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_dir(&args.data, "dataset")?;
    let (_, generator) = load_generator(&args.checkpoint)?;
    let ds = Dataset::load(&args.data)?;
    let report = evaluate_split(&ds, args.split, |samples| evaluate(&generator, samples))?;
    prepare_out_dir(&args.out)?;
    report.write(&args.out)?;
    println!("{}", serde_json::to_string_pretty(&report.summary())?);
    Ok(())
}

pub fn evaluate_split(
    ds: &Dataset,
    split: Split,
    score: impl FnOnce(&[meshgrow::dataset::Sample]) -> meshgrow::Result<EvalReport>,
) -> Result<EvalReport> {
    let samples = ds.samples(split)?;
    if samples.is_empty() {
        bail!("split {split:?} has no pairs in this dataset");
    }
    Ok(score(&samples)?)
}
