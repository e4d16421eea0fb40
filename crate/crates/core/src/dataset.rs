//! On-disk dataset layout and in-memory training samples.
//!
//! ```text
//! root/
//!   dataset.json      cohort config and split seed
//!   manifest.jsonl    one scan per line
//!   patients.jsonl    per-patient sex and hidden shape parameters
//!   pairs.jsonl       one ordered pair per line
//!   splits.json       patient ids per split
//!   meshes/*.obj
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::condition::{encode_condition, ConditionVector, Sex};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_mesh, GraphTopology, Mesh};
use crate::model::GeneratorInput;
use crate::synth::{
    generate_cohort, make_pairs, split_cohort, CohortConfig, GridDims, PatientRecord, PatientShape,
    Scan, Split, Splits, TrainingPair,
};

pub const INFO_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub cohort: CohortConfig,
    pub split_seed: u64,
    pub n_scans: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRow {
    patient_id: String,
    sex: Sex,
    scan_month: u32,
    age_years: u32,
    mesh_path: String,
    mis_gt_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PatientRow {
    patient_id: String,
    sex: Sex,
    shape: PatientShape,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub records: Vec<PatientRecord>,
    pub pairs: Vec<TrainingPair>,
    pub splits: Splits,
    pub meshes: BTreeMap<String, Arc<Mesh>>,
}

/// One source/target pair ready for the model.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pair: TrainingPair,
    pub source: Arc<Mesh>,
    pub target: Arc<Mesh>,
    pub topology: Arc<GraphTopology>,
    pub condition: ConditionVector,
    pub grid: GridDims,
}

impl Sample {
    pub fn id(&self) -> String {
        self.pair.id()
    }

    pub fn input(&self) -> GeneratorInput<'_> {
        GeneratorInput {
            source: self.source.vertices(),
            topology: &self.topology,
            condition: &self.condition,
        }
    }

    /// Same source with a different time interval; the target is kept as is.
    pub fn with_delta(&self, delta_months: i32) -> Result<Sample> {
        let condition = self.condition.condition.with_delta(delta_months)?;
        let mut pair = self.pair.clone();
        pair.delta_months = delta_months;
        Ok(Sample {
            condition: encode_condition(&condition)?,
            pair,
            ..self.clone()
        })
    }
}

impl Dataset {
    /// Generates a cohort, its pairs and a split seeded by the cohort seed.
    pub fn generate(cohort: &CohortConfig) -> Result<Self> {
        let generated = generate_cohort(cohort)?;
        let records = generated.records;
        let meshes: BTreeMap<String, Arc<Mesh>> = generated
            .meshes
            .into_iter()
            .map(|(k, m)| (k, Arc::new(m)))
            .collect();
        let pairs = make_pairs(&records);
        let splits = split_cohort(&records, cohort.seed)?;
        Ok(Self {
            info: DatasetInfo {
                cohort: cohort.clone(),
                split_seed: cohort.seed,
                n_scans: meshes.len(),
                n_pairs: pairs.len(),
            },
            records,
            pairs,
            splits,
            meshes,
        })
    }

    pub fn grid(&self) -> GridDims {
        self.info.cohort.grid
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root.join("meshes")).map_err(|e| Error::io(root, e))?;
        write_json(&root.join(INFO_FILE), &self.info)?;
        write_json(&root.join(SPLITS_FILE), &self.splits)?;
        let manifest: Vec<ManifestRow> = self
            .records
            .iter()
            .flat_map(|r| {
                r.scans.iter().map(move |s| ManifestRow {
                    patient_id: r.patient_id.clone(),
                    sex: r.sex,
                    scan_month: s.scan_month,
                    age_years: s.age_years,
                    mesh_path: s.mesh_path.clone(),
                    mis_gt_mm: s.mis_gt_mm,
                })
            })
            .collect();
        write_jsonl(&root.join(MANIFEST_FILE), &manifest)?;
        let patients: Vec<PatientRow> = self
            .records
            .iter()
            .map(|r| PatientRow {
                patient_id: r.patient_id.clone(),
                sex: r.sex,
                shape: r.shape,
            })
            .collect();
        write_jsonl(&root.join(PATIENTS_FILE), &patients)?;
        write_jsonl(&root.join(PAIRS_FILE), &self.pairs)?;
        for (path, mesh) in &self.meshes {
            save_mesh(mesh, root.join(path))?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let info: DatasetInfo = read_json(&root.join(INFO_FILE))?;
        let splits: Splits = read_json(&root.join(SPLITS_FILE))?;
        let manifest: Vec<ManifestRow> = read_jsonl(&root.join(MANIFEST_FILE))?;
        let patients: Vec<PatientRow> = read_jsonl(&root.join(PATIENTS_FILE))?;
        let pairs: Vec<TrainingPair> = read_jsonl(&root.join(PAIRS_FILE))?;
        let mut records: Vec<PatientRecord> = patients
            .into_iter()
            .map(|p| PatientRecord {
                patient_id: p.patient_id,
                sex: p.sex,
                shape: p.shape,
                scans: Vec::new(),
            })
            .collect();
        let index: BTreeMap<String, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.patient_id.clone(), i))
            .collect();
        let mut meshes = BTreeMap::new();
        for row in manifest {
            let &i = index.get(&row.patient_id).ok_or_else(|| {
                Error::Config(format!("manifest names unknown patient {}", row.patient_id))
            })?;
            let mesh = load_mesh(root.join(&row.mesh_path))?;
            meshes.insert(row.mesh_path.clone(), Arc::new(mesh));
            records[i].scans.push(Scan {
                scan_month: row.scan_month,
                age_years: row.age_years,
                mesh_path: row.mesh_path,
                mis_gt_mm: row.mis_gt_mm,
            });
        }
        Ok(Self {
            info,
            records,
            pairs,
            splits,
            meshes,
        })
    }

    pub fn pairs_in(&self, split: Split) -> Vec<&TrainingPair> {
        let ids: HashSet<&str> = self.splits.get(split).iter().map(String::as_str).collect();
        self.pairs
            .iter()
            .filter(|p| ids.contains(p.patient_id.as_str()))
            .collect()
    }

    /// Samples of one split, in pair-file order. Meshes with identical faces share one topology.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        let mut cache = TopologyCache::default();
        self.pairs_in(split)
            .into_iter()
            .map(|p| self.sample_with(p, &mut cache))
            .collect()
    }

    pub fn sample(&self, pair: &TrainingPair) -> Result<Sample> {
        self.sample_with(pair, &mut TopologyCache::default())
    }

    fn mesh(&self, path: &str) -> Result<&Arc<Mesh>> {
        self.meshes
            .get(path)
            .ok_or_else(|| Error::Config(format!("dataset has no mesh {path}")))
    }

    fn sample_with(&self, pair: &TrainingPair, cache: &mut TopologyCache) -> Result<Sample> {
        let source = Arc::clone(self.mesh(&pair.source_mesh)?);
        let target = Arc::clone(self.mesh(&pair.target_mesh)?);
        if source.faces() != target.faces() {
            return Err(Error::Topology(format!(
                "pair {} joins meshes with different faces",
                pair.id()
            )));
        }
        Ok(Sample {
            topology: cache.get(&source)?,
            condition: encode_condition(&pair.condition()?)?,
            pair: pair.clone(),
            source,
            target,
            grid: self.grid(),
        })
    }
}

#[derive(Default)]
struct TopologyCache {
    entries: Vec<(Vec<[usize; 3]>, usize, Arc<GraphTopology>)>,
}

impl TopologyCache {
    fn get(&mut self, mesh: &Mesh) -> Result<Arc<GraphTopology>> {
        if let Some((_, _, t)) = self
            .entries
            .iter()
            .find(|(f, n, _)| *n == mesh.n_vertices() && f.as_slice() == mesh.faces())
        {
            return Ok(Arc::clone(t));
        }
        let t = Arc::new(GraphTopology::from_mesh(mesh)?);
        self.entries
            .push((mesh.faces().to_vec(), mesh.n_vertices(), Arc::clone(&t)));
        Ok(t)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(rows)
}
