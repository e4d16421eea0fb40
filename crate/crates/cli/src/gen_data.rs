use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use meshgrow::dataset::Dataset;
use meshgrow::synth::{CohortConfig, GridDims};

use crate::config::{parse_grid, read_json};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON cohort config (seed, patients, grid, growth model).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// RINGS,SEGMENTS of the tube grid.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridDims>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

pub fn run(args: GenDataArgs) -> Result<()> {
    let mut cohort: CohortConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => CohortConfig::default(),
    };
    if let Some(n) = args.patients {
        cohort.n_patients = n;
    }
    if let Some(s) = args.seed {
        cohort.seed = s;
    }
    if let Some(g) = args.grid {
        cohort.grid = g;
    }
    GridDims::new(cohort.grid.rings, cohort.grid.segments)?;

    let out = &args.out;
    let occupied = out.is_dir()
        && fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
    if out.exists() && !out.is_dir() {
        bail!("{} exists and is not a directory", out.display());
    }
    if occupied {
        if !args.force {
            bail!("{} is not empty; pass --force to replace it", out.display());
        }
        fs::remove_dir_all(out).with_context(|| format!("clearing {}", out.display()))?;
    }

    let ds = Dataset::generate(&cohort)?;
    ds.write(out)?;
    println!(
        "wrote {} patients, {} scans, {} pairs to {}",
        ds.records.len(),
        ds.info.n_scans,
        ds.info.n_pairs,
        out.display()
    );
    Ok(())
}
