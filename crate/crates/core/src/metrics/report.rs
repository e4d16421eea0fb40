use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{chamfer_distance, hausdorff, mae, mis_diameter};
use crate::autodiff::Real;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::synth::GridDims;

type Point = [f64; 3];

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub pair_id: String,
    pub delta_months: i32,
    pub mae: f64,
    pub cd: f64,
    pub hd: f64,
    pub mis_pred: f64,
    pub mis_gt: f64,
    pub mis_err: f64,
}

impl SampleMetrics {
    pub fn compute(
        pair_id: String,
        delta_months: i32,
        pred: &[Point],
        target: &[Point],
        grid: GridDims,
    ) -> Result<Self> {
        let mis_pred = mis_diameter(pred, grid)?;
        let mis_gt = mis_diameter(target, grid)?;
        Ok(Self {
            pair_id,
            delta_months,
            mae: mae(pred, target)?,
            cd: chamfer_distance(pred, target)?,
            hd: hausdorff(pred, target)?,
            mis_pred,
            mis_gt,
            mis_err: (mis_pred - mis_gt).abs(),
        })
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mae: Stat,
    pub cd: Stat,
    pub hd: Stat,
    pub mis_err: Stat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
}

impl EvalReport {
    pub fn summary(&self) -> Summary {
        let col = |f: fn(&SampleMetrics) -> f64| Stat::of(self.samples.iter().map(f));
        Summary {
            n: self.samples.len(),
            mae: col(|s| s.mae),
            cd: col(|s| s.cd),
            hd: col(|s| s.hd),
            mis_err: col(|s| s.mis_err),
        }
    }

    /// Subset whose `|Δ|` is at least `months`.
    pub fn filter_abs_delta(&self, months: i32) -> EvalReport {
        EvalReport {
            samples: self
                .samples
                .iter()
                .filter(|s| s.delta_months.abs() >= months)
                .cloned()
                .collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.samples {
            w.serialize(s).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let samples = r
            .deserialize()
            .collect::<std::result::Result<Vec<SampleMetrics>, _>>()
            .map_err(csv_err)?;
        Ok(Self { samples })
    }

    /// Writes [`METRICS_FILE`] and [`SUMMARY_FILE`] into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(METRICS_FILE);
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&self.summary())?;
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

/// Worker threads for per-sample evaluation: `MESHGROW_THREADS` if set, else the core count.
pub fn worker_count() -> usize {
    std::env::var("MESHGROW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn parallel_map<F>(samples: &[Sample], f: F) -> Result<Vec<SampleMetrics>>
where
    F: Fn(&Sample) -> Result<SampleMetrics> + Sync,
{
    let workers = worker_count().min(samples.len()).max(1);
    if workers == 1 {
        return samples.iter().map(&f).collect();
    }
    let chunk = samples.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Runs the generator on every sample and scores the prediction against its target.
pub fn evaluate<T: Real>(generator: &Generator<T>, samples: &[Sample]) -> Result<EvalReport> {
    let samples = parallel_map(samples, |s| {
        let pred = generator.predict(s.input())?;
        SampleMetrics::compute(
            s.id(),
            s.pair.delta_months,
            &pred,
            s.target.vertices(),
            s.grid,
        )
    })?;
    Ok(EvalReport { samples })
}

/// Baseline that predicts the source mesh unchanged.
pub fn evaluate_identity(samples: &[Sample]) -> Result<EvalReport> {
    let samples = parallel_map(samples, |s| {
        SampleMetrics::compute(
            s.id(),
            s.pair.delta_months,
            s.source.vertices(),
            s.target.vertices(),
            s.grid,
        )
    })?;
    Ok(EvalReport { samples })
}
