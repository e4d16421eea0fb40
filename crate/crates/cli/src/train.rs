use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use meshgrow::dataset::Dataset;
use meshgrow::synth::Split;
use meshgrow::train::{latest_trainer, EpochSummary, Trainer, FINAL_CHECKPOINT};

use crate::config::{prepare_out_dir, require_dir, write_json, TrainOverrides};

pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the newest checkpoint in --out; only --epochs may change.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: TrainOverrides,
}

pub fn run(args: TrainArgs) -> Result<()> {
    require_dir(&args.data, "dataset")?;
    let mut trainer = if args.resume {
        if args.overrides.changes_model() {
            bail!("--resume keeps the saved config; only --epochs may be given");
        }
        let Some(mut t) = latest_trainer(&args.out)? else {
            bail!("no checkpoint to resume in {}", args.out.display());
        };
        if let Some(e) = args.overrides.epochs {
            t.config.epochs = e;
        }
        t.config.validate()?;
        t
    } else {
        Trainer::new(args.overrides.resolve()?)?
    };
    let ds = Dataset::load(&args.data)?;
    let train = ds.samples(Split::Train)?;
    let val = ds.samples(Split::Val)?;
    if train.is_empty() {
        bail!("dataset {} has no training pairs", args.data.display());
    }
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join(CONFIG_ECHO), &trainer.config)?;

    eprintln!(
        "training {} pairs from epoch {} to {}",
        trainer
            .config
            .train_pairs_limit
            .map_or(train.len(), |n| n.min(train.len())),
        trainer.epoch,
        trainer.config.epochs
    );
    trainer.fit(&train, &val, Some(&args.out), report_epoch)?;
    println!("{}", args.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

pub fn report_epoch(e: &EpochSummary) {
    let rows: Vec<String> = e
        .rows
        .iter()
        .map(|r| format!("{} l1 {:.4} cd {:.4}", r.split, r.l1, r.cd))
        .collect();
    eprintln!(
        "epoch {:>4}  loss {:.4}  recon {:.4}  {}",
        e.epoch,
        e.mean_total,
        e.mean_recon,
        rows.join("  ")
    );
}
