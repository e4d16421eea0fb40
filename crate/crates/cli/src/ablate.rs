use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use meshgrow::dataset::Dataset;
use meshgrow::losses::ReconLoss;
use meshgrow::metrics::{evaluate, Summary, SUMMARY_FILE};
use meshgrow::model::Backbone;
use meshgrow::synth::Split;
use meshgrow::train::{latest_trainer, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{prepare_out_dir, read_json, require_dir, write_json, TrainOverrides};
use crate::train::{report_epoch, CONFIG_ECHO};

/// Epochs per cell unless overridden.
pub const DEFAULT_EPOCHS: usize = 10;
pub const TABLE_FILE: &str = "ablation.csv";
pub const CELLS_DIR: &str = "cells";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split every cell is scored on.
    #[arg(long, default_value = "test")]
    split: Split,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub backbone: Backbone,
    pub recon: ReconLoss,
    pub adversarial: bool,
}

impl Cell {
    pub fn grid() -> Vec<Cell> {
        let mut cells = Vec::with_capacity(12);
        for backbone in [Backbone::Kcn, Backbone::Gcn, Backbone::Both] {
            for recon in [ReconLoss::L1, ReconLoss::Cd] {
                for adversarial in [true, false] {
                    cells.push(Cell {
                        backbone,
                        recon,
                        adversarial,
                    });
                }
            }
        }
        cells
    }

    /// Directory-safe name, e.g. `kcn-gcn_l1_adv`.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_{}",
            self.backbone.label().replace('+', "-"),
            self.recon.label(),
            if self.adversarial { "adv" } else { "noadv" }
        )
    }

    fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.generator.backbone = self.backbone;
        c.recon = self.recon;
        c.adversarial = self.adversarial;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub backbone: String,
    pub recon: String,
    pub adversarial: bool,
    pub n: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub cd_mean: f64,
    pub cd_std: f64,
    pub hd_mean: f64,
    pub hd_std: f64,
    pub mis_err_mean: f64,
    pub mis_err_std: f64,
}

impl TableRow {
    fn new(cell: Cell, s: &Summary) -> Self {
        Self {
            backbone: cell.backbone.label().into(),
            recon: cell.recon.label().into(),
            adversarial: cell.adversarial,
            n: s.n,
            mae_mean: s.mae.mean,
            mae_std: s.mae.std,
            cd_mean: s.cd.mean,
            cd_std: s.cd.std,
            hd_mean: s.hd.mean,
            hd_std: s.hd.std,
            mis_err_mean: s.mis_err.mean,
            mis_err_std: s.mis_err.std,
        }
    }
}

pub fn run(args: AblateArgs) -> Result<()> {
    require_dir(&args.data, "dataset")?;
    let mut base = args.overrides.base_config()?;
    base.epochs = DEFAULT_EPOCHS;
    args.overrides.apply(&mut base);
    base.validate()?;
    let ds = Dataset::load(&args.data)?;
    let train = ds.samples(Split::Train)?;
    let val = ds.samples(Split::Val)?;
    let scored = ds.samples(args.split)?;
    if train.is_empty() || scored.is_empty() {
        bail!(
            "dataset {} lacks training or {:?} pairs",
            args.data.display(),
            args.split
        );
    }
    prepare_out_dir(&args.out)?;

    let mut rows = Vec::new();
    for cell in Cell::grid() {
        let dir = args.out.join(CELLS_DIR).join(cell.slug());
        let summary_path = dir.join(REPORT_DIR).join(SUMMARY_FILE);
        let config = cell.configure(&base);
        let summary: Summary =
            if summary_path.exists() && saved_config(&dir)?.as_ref() == Some(&config) {
                eprintln!("{}: done, skipping", cell.slug());
                read_json(&summary_path)?
            } else {
                eprintln!("{}: training {} epochs", cell.slug(), config.epochs);
                let mut trainer = match latest_trainer(&dir)? {
                    Some(t) if t.config == config => t,
                    _ => Trainer::new(config.clone())?,
                };
                prepare_out_dir(&dir)?;
                write_json(&dir.join(CONFIG_ECHO), &config)?;
                trainer.fit(&train, &val, Some(&dir), report_epoch)?;
                let report = evaluate(&trainer.generator, &scored)?;
                report.write(&dir.join(REPORT_DIR))?;
                report.summary()
            };
        rows.push(TableRow::new(cell, &summary));
    }

    write_table(&args.out.join(TABLE_FILE), &rows)?;
    print!("{}", render(&rows));
    Ok(())
}

fn saved_config(dir: &Path) -> Result<Option<TrainConfig>> {
    let p = dir.join(CONFIG_ECHO);
    if !p.exists() {
        return Ok(None);
    }
    read_json(&p).map(Some)
}

fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn render(rows: &[TableRow]) -> String {
    let mut s = format!(
        "{:<8} {:<4} {:<5} {:>16} {:>16} {:>16} {:>16}\n",
        "backbone", "loss", "adv", "MAE", "CD", "HD", "MIS err"
    );
    let cell = |m: f64, sd: f64| format!("{m:.3}±{sd:.3}");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<4} {:<5} {:>16} {:>16} {:>16} {:>16}",
            r.backbone,
            r.recon,
            if r.adversarial { "on" } else { "off" },
            cell(r.mae_mean, r.mae_std),
            cell(r.cd_mean, r.cd_std),
            cell(r.hd_mean, r.hd_std),
            cell(r.mis_err_mean, r.mis_err_std)
        );
    }
    s
}
