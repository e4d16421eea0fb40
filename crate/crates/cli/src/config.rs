use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use meshgrow::losses::ReconLoss;
use meshgrow::model::Backbone;
use meshgrow::synth::GridDims;
use meshgrow::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `rings,segments`, e.g. `30,16`.
pub fn parse_grid(s: &str) -> std::result::Result<GridDims, String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected RINGS,SEGMENTS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    GridDims::new(parse(r)?, parse(c)?).map_err(|e| e.to_string())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

/// Creates `dir` (and parents) so later writes cannot fail on a missing path.
pub fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Training settings shared by `train` and `ablate`; flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    /// JSON training config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// kcn, gcn or kcn+gcn.
    #[arg(long)]
    pub backbone: Option<Backbone>,
    /// l1 or cd.
    #[arg(long)]
    pub recon: Option<ReconLoss>,
    #[arg(long)]
    pub adversarial: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    /// Feed the clinical condition to the generator.
    #[arg(long)]
    pub use_condition: Option<bool>,
    /// Train on only the first N training pairs.
    #[arg(long)]
    pub train_pairs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

impl TrainOverrides {
    pub fn base_config(&self) -> Result<TrainConfig> {
        match &self.config {
            Some(path) => read_json(path),
            None => Ok(TrainConfig::default()),
        }
    }

    pub fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.backbone {
            c.generator.backbone = v;
        }
        if let Some(v) = self.recon {
            c.recon = v;
        }
        if let Some(v) = self.adversarial {
            c.adversarial = v;
        }
        if let Some(v) = self.lr {
            c.adam.lr = v;
        }
        if let Some(v) = self.lambda_rec {
            c.lambda_rec = v;
        }
        if let Some(v) = self.lambda_adv {
            c.lambda_adv = v;
        }
        if let Some(v) = self.use_condition {
            c.generator.use_condition = v;
        }
        if let Some(v) = self.train_pairs {
            c.train_pairs_limit = Some(v);
        }
        if let Some(v) = self.checkpoint_every {
            c.checkpoint_every = v;
        }
    }

    /// The effective config: file (or defaults) with flags applied, validated.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = self.base_config()?;
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    /// True when anything other than the epoch count is set.
    pub fn changes_model(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.backbone.is_some()
            || self.recon.is_some()
            || self.adversarial.is_some()
            || self.lr.is_some()
            || self.lambda_rec.is_some()
            || self.lambda_adv.is_some()
            || self.use_condition.is_some()
            || self.train_pairs.is_some()
            || self.checkpoint_every.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("30,16").unwrap();
        assert_eq!((g.rings, g.segments), (30, 16));
        assert!(parse_grid("3,4").is_err());
        assert!(parse_grid("30x16").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochs": 7, "recon": "cd", "seed": 4}"#).unwrap();
        let o = TrainOverrides {
            config: Some(path),
            epochs: Some(3),
            backbone: Some(Backbone::Gcn),
            ..TrainOverrides::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!((c.epochs, c.seed, c.recon), (3, 4, ReconLoss::Cd));
        assert_eq!(c.generator.backbone, Backbone::Gcn);
    }
}
