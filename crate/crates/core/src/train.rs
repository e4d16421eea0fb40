//! Alternating discriminator/generator optimization with checkpointing and a
//! per-epoch metrics log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Bound, Graph, Real, Tensor, Var};
use crate::checkpoint::{Archive, Entry};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::kcn::KnnIndices;
use crate::losses::{discriminator_loss, generator_adv_loss, reconstruction, ReconLoss};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, GeneratorPass};

pub const LOG_HEADER: &str = "epoch,split,l1,cd,hd,mis_err";
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.mgan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub recon: ReconLoss,
    pub adversarial: bool,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub adam: AdamConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Save `checkpoints/epoch_NNNN.mgan` every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Train pairs scored for the `train` rows of the log.
    pub log_train_pairs: usize,
    /// Use only the first this many train pairs.
    pub train_pairs_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            seed: 0,
            recon: ReconLoss::L1,
            adversarial: true,
            lambda_rec: 100.0,
            lambda_adv: 1.0,
            adam: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            checkpoint_every: 10,
            log_train_pairs: 32,
            train_pairs_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size != 1 {
            return bad(format!(
                "batch_size {} unsupported, only 1",
                self.batch_size
            ));
        }
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda_rec == 0.0 && !(self.adversarial && self.lambda_adv > 0.0) {
            return bad(
                "no loss enabled: set lambda_rec > 0 or enable the adversarial term".into(),
            );
        }
        let a = self.adam;
        if !(a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0)
        {
            return bad(format!("invalid optimizer constants {a:?}"));
        }
        if self.train_pairs_limit == Some(0) {
            return bad("train_pairs_limit must be positive".into());
        }
        Ok(())
    }
}

/// Graph handles of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    pub total: Var,
    pub recon: Var,
    pub adversarial: Option<Var>,
    pub pass: GeneratorPass,
}

/// `λ_rec · recon + λ_adv · adv`, with the adversarial term present only when a
/// discriminator is given. Its parameters should be bound frozen.
pub fn generator_objective<T: Real>(
    g: &mut Graph<T>,
    generator: &Generator<T>,
    bound: &Bound,
    discriminator: Option<(&Discriminator<T>, &Bound)>,
    sample: &Sample,
    config: &TrainConfig,
    frozen_knn: Option<&KnnIndices>,
) -> Result<GeneratorObjective> {
    let pass = generator.forward(g, bound, sample.input(), frozen_knn)?;
    objective_terms(g, pass, discriminator, sample, config)
}

fn objective_terms<T: Real>(
    g: &mut Graph<T>,
    pass: GeneratorPass,
    discriminator: Option<(&Discriminator<T>, &Bound)>,
    sample: &Sample,
    config: &TrainConfig,
) -> Result<GeneratorObjective> {
    let target = g.constant(Tensor::from_rows(sample.target.vertices()));
    let recon = reconstruction(g, config.recon, pass.predicted, target)?;
    let mut total = g.scale(recon, config.lambda_rec)?;
    let mut adversarial = None;
    if let Some((d, d_bound)) = discriminator {
        let score = d.forward(
            g,
            d_bound,
            pass.predicted,
            &pass.normalization,
            &sample.topology,
            &sample.condition,
            config.generator.condition_mask,
        )?;
        let adv = generator_adv_loss(g, score)?;
        let weighted = g.scale(adv, config.lambda_adv)?;
        total = g.add(total, weighted)?;
        adversarial = Some(adv);
    }
    Ok(GeneratorObjective {
        total,
        recon,
        adversarial,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub recon: f64,
    pub g_adv: Option<f64>,
    pub d_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub l1: f64,
    pub cd: f64,
    pub hd: f64,
    pub mis_err: f64,
}

impl LogRow {
    fn from_report(epoch: usize, split: &str, report: &EvalReport) -> Self {
        let s = report.summary();
        Self {
            epoch,
            split: split.into(),
            l1: s.mae.mean,
            cd: s.cd.mean,
            hd: s.hd.mean,
            mis_err: s.mis_err.mean,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.split, self.l1, self.cd, self.hd, self.mis_err
        )
    }
}

/// Summary of one finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_recon: f64,
    pub rows: Vec<LogRow>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub opt_g: AdamState<f32>,
    pub opt_d: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    rng: ChaCha8Rng,
}

const D_SEED_OFFSET: u64 = 0x5eed_d15c;
const SHUFFLE_SEED_OFFSET: u64 = 0x5eed_5f1e;

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone(), config.seed)?;
        let discriminator =
            Discriminator::new(config.discriminator.clone(), config.seed ^ D_SEED_OFFSET)?;
        let opt_g = AdamState::new(config.adam, &generator.params);
        let opt_d = AdamState::new(config.adam, &discriminator.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SEED_OFFSET);
        Ok(Self {
            config,
            generator,
            discriminator,
            opt_g,
            opt_d,
            epoch: 0,
            rng,
        })
    }

    /// Generator updates so far.
    pub fn step(&self) -> u64 {
        self.opt_g.step
    }

    /// One discriminator update (when adversarial) followed by one generator update.
    pub fn train_step(&mut self, sample: &Sample) -> Result<StepLosses> {
        let step = self.step();
        self.train_step_inner(sample).map_err(|e| match e {
            Error::NumericFault { .. } => Error::TrainingFault {
                step,
                source: Box::new(e),
            },
            other => other,
        })
    }

    fn train_step_inner(&mut self, sample: &Sample) -> Result<StepLosses> {
        let mut gg = Graph::new();
        let g_bound = self.generator.params.bind(&mut gg, true);
        let pass = self
            .generator
            .forward(&mut gg, &g_bound, sample.input(), None)?;
        let adversarial = self.config.adversarial;

        let d_loss = if adversarial {
            let fake = gg.value(pass.predicted).clone();
            Some(self.discriminator_step(sample, fake, &pass)?)
        } else {
            None
        };

        // the generator loss sees the discriminator after its update
        let d_bound = adversarial.then(|| self.discriminator.params.bind(&mut gg, false));
        let disc = d_bound.as_ref().map(|b| (&self.discriminator, b));
        let obj = objective_terms(&mut gg, pass, disc, sample, &self.config)?;
        gg.backward(obj.total)?;
        self.generator.params.collect_grads(&gg, &g_bound);
        self.opt_g.step(&mut self.generator.params)?;
        Ok(StepLosses {
            total: gg.value(obj.total).item().as_f64(),
            recon: gg.value(obj.recon).item().as_f64(),
            g_adv: obj.adversarial.map(|v| gg.value(v).item().as_f64()),
            d_loss,
        })
    }

    fn discriminator_step(
        &mut self,
        sample: &Sample,
        fake: Tensor<f32>,
        pass: &GeneratorPass,
    ) -> Result<f64> {
        let d = &self.discriminator;
        let mask = self.config.generator.condition_mask;
        let mut gd = Graph::new();
        let bound = d.params.bind(&mut gd, true);
        let real = gd.constant(Tensor::from_rows(sample.target.vertices()));
        let fake = gd.constant(fake);
        let norm = &pass.normalization;
        let dr = d.forward(
            &mut gd,
            &bound,
            real,
            norm,
            &sample.topology,
            &sample.condition,
            mask,
        )?;
        let df = d.forward(
            &mut gd,
            &bound,
            fake,
            norm,
            &sample.topology,
            &sample.condition,
            mask,
        )?;
        let loss = discriminator_loss(&mut gd, dr, df)?;
        gd.backward(loss)?;
        self.discriminator.params.collect_grads(&gd, &bound);
        self.opt_d.step(&mut self.discriminator.params)?;
        Ok(gd.value(loss).item().as_f64())
    }

    /// One shuffled pass over `train`.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(Error::Config("no training pairs".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut total, mut recon) = (0.0, 0.0);
        for i in order {
            let l = self.train_step(&train[i])?;
            total += l.total;
            recon += l.recon;
        }
        self.epoch += 1;
        let n = train.len() as f64;
        Ok((total / n, recon / n))
    }

    /// Trains until `config.epochs` epochs are complete, continuing from
    /// `self.epoch`. With `out`, appends to the log and writes checkpoints.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochSummary),
    ) -> Result<Vec<EpochSummary>> {
        let train = match self.config.train_pairs_limit {
            Some(n) => &train[..n.min(train.len())],
            None => train,
        };
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let log = dir.join(LOG_FILE);
            if self.epoch == 0 || !log.exists() {
                fs::write(&log, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&log, e))?;
            }
        }
        let log_subset = &train[..self.config.log_train_pairs.min(train.len())];
        let mut summaries = Vec::new();
        while self.epoch < self.config.epochs {
            let (mean_total, mean_recon) = self.train_epoch(train)?;
            let mut rows = Vec::new();
            if !log_subset.is_empty() {
                rows.push(LogRow::from_report(
                    self.epoch,
                    "train",
                    &evaluate(&self.generator, log_subset)?,
                ));
            }
            if !val.is_empty() {
                rows.push(LogRow::from_report(
                    self.epoch,
                    "val",
                    &evaluate(&self.generator, val)?,
                ));
            }
            if let Some(dir) = out {
                append_log(&dir.join(LOG_FILE), &rows)?;
                let every = self.config.checkpoint_every;
                if every > 0 && self.epoch.is_multiple_of(every) {
                    self.save(&epoch_checkpoint(dir, self.epoch))?;
                }
            }
            let summary = EpochSummary {
                epoch: self.epoch,
                mean_total,
                mean_recon,
                rows,
            };
            on_epoch(&summary);
            summaries.push(summary);
        }
        if let Some(dir) = out {
            self.save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(summaries)
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::default();
        a.push_params("g/", &self.generator.params);
        a.push_params("d/", &self.discriminator.params);
        for (prefix, opt, store) in [
            ("opt_g", &self.opt_g, &self.generator.params),
            ("opt_d", &self.opt_d, &self.discriminator.params),
        ] {
            for ((m, v), p) in opt.m.iter().zip(&opt.v).zip(store.iter()) {
                a.push(Entry::tensor(format!("{prefix}/m/{}", p.name), m));
                a.push(Entry::tensor(format!("{prefix}/v/{}", p.name), v));
            }
            a.push(Entry::u64s(format!("{prefix}/step"), vec![opt.step]));
        }
        a.push(Entry::u64s("meta/epoch", vec![self.epoch as u64]));
        a.push(Entry::bytes(
            "meta/config",
            serde_json::to_vec(&self.config)?,
        ));
        a.push(Entry::bytes("meta/rng_seed", self.rng.get_seed().to_vec()));
        a.push(Entry::bytes(
            "meta/rng_word_pos",
            self.rng.get_word_pos().to_le_bytes().to_vec(),
        ));
        a.push(Entry::u64s("meta/rng_stream", vec![self.rng.get_stream()]));
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let config = config_from_archive(a)?;
        let mut t = Self::new(config)?;
        a.load_params("g/", &mut t.generator.params)?;
        a.load_params("d/", &mut t.discriminator.params)?;
        for (prefix, opt, store) in [
            ("opt_g", &mut t.opt_g, &t.generator.params),
            ("opt_d", &mut t.opt_d, &t.discriminator.params),
        ] {
            for ((m, v), p) in opt.m.iter_mut().zip(opt.v.iter_mut()).zip(store.iter()) {
                *m = load_like(a, &format!("{prefix}/m/{}", p.name), m)?;
                *v = load_like(a, &format!("{prefix}/v/{}", p.name), v)?;
            }
            opt.step = single_u64(a, &format!("{prefix}/step"))?;
        }
        t.epoch = single_u64(a, "meta/epoch")? as usize;
        let seed: [u8; 32] = a
            .get("meta/rng_seed")?
            .as_bytes()?
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let word_pos: [u8; 16] = a
            .get("meta/rng_word_pos")?
            .as_bytes()?
            .try_into()
            .map_err(|_| Error::Checkpoint("rng position must be 16 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(single_u64(a, "meta/rng_stream")?);
        rng.set_word_pos(u128::from_le_bytes(word_pos));
        t.rng = rng;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn config_from_archive(a: &Archive) -> Result<TrainConfig> {
    let bytes = a.get("meta/config")?.as_bytes()?;
    serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))
}

fn single_u64(a: &Archive, name: &str) -> Result<u64> {
    match a.get(name)?.as_u64s()? {
        [v] => Ok(*v),
        _ => Err(Error::Checkpoint(format!("{name} must hold one value"))),
    }
}

fn load_like(a: &Archive, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t: Tensor<f32> = a.get(name)?.to_tensor()?;
    if t.shape() != like.shape() {
        return Err(Error::Checkpoint(format!(
            "{name} has shape {:?}, expected {:?}",
            t.shape(),
            like.shape()
        )));
    }
    Ok(t)
}

/// Generator and its training config from a checkpoint, without optimizer state.
pub fn load_generator(path: &Path) -> Result<(TrainConfig, Generator<f32>)> {
    let a = Archive::load(path)?;
    let config = config_from_archive(&a)?;
    let mut generator = Generator::new(config.generator.clone(), config.seed)?;
    a.load_params("g/", &mut generator.params)?;
    Ok((config, generator))
}

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("epoch_{epoch:04}.mgan"))
}

/// The most advanced trainer saved under `dir`: the final checkpoint or the
/// highest-numbered epoch checkpoint, whichever is further along.
pub fn latest_trainer(dir: &Path) -> Result<Option<Trainer>> {
    let mut best: Option<Trainer> = None;
    let final_path = dir.join(FINAL_CHECKPOINT);
    if final_path.exists() {
        best = Some(Trainer::load(&final_path)?);
    }
    let ckpt_dir = dir.join("checkpoints");
    if ckpt_dir.is_dir() {
        let newest = fs::read_dir(&ckpt_dir)
            .map_err(|e| Error::io(&ckpt_dir, e))?
            .filter_map(|entry| {
                let name = entry.ok()?.file_name().into_string().ok()?;
                name.strip_prefix("epoch_")?
                    .strip_suffix(".mgan")?
                    .parse::<usize>()
                    .ok()
            })
            .max();
        if let Some(epoch) = newest {
            if best.as_ref().is_none_or(|t| t.epoch < epoch) {
                best = Some(Trainer::load(&epoch_checkpoint(dir, epoch))?);
            }
        }
    }
    Ok(best)
}

fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", r.csv_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
