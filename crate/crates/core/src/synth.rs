//! Parametric longitudinal aneurysm cohort.
//!
//! Every mesh is a tube sampled on the same `rings × segments` grid, so vertex
//! `i` sits at the same (ring, angle) slot in every scan and per-vertex errors
//! need no registration. Radius along the axis follows a Gaussian bulge whose
//! amplitude grows linearly in time at a rate set by age and sex.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{ClinicalCondition, Sex, MAX_AGE, MAX_DELTA_MONTHS};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Ring-grid dimensions: `rings` cross-sections of `segments` vertices each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDims {
    pub rings: usize,
    pub segments: usize,
}

impl GridDims {
    pub const MIN_RINGS: usize = 4;
    pub const MIN_SEGMENTS: usize = 8;

    /// Grid for generated tubes: at least 4 rings of 8 segments.
    pub fn new(rings: usize, segments: usize) -> Result<Self> {
        if rings < Self::MIN_RINGS || segments < Self::MIN_SEGMENTS {
            return Err(Error::contract(
                "grid",
                format!(
                    "grid {rings}x{segments} too small (need rings >= {}, segments >= {})",
                    Self::MIN_RINGS,
                    Self::MIN_SEGMENTS
                ),
            ));
        }
        Ok(Self { rings, segments })
    }

    /// Any grid with a valid triangulation (rings >= 2, segments >= 3); for topology-only use.
    pub const fn new_unchecked(rings: usize, segments: usize) -> Self {
        Self { rings, segments }
    }

    pub fn n_vertices(&self) -> usize {
        self.rings * self.segments
    }

    pub fn vertex(&self, ring: usize, segment: usize) -> usize {
        ring * self.segments + segment
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self {
            rings: 30,
            segments: 16,
        }
    }
}

/// Canonical quad-strip triangulation shared by every mesh of a grid.
pub fn ring_grid_faces(grid: GridDims) -> Vec<[usize; 3]> {
    assert!(
        grid.rings >= 2 && grid.segments >= 3,
        "degenerate ring grid"
    );
    let mut faces = Vec::with_capacity(2 * grid.segments * (grid.rings - 1));
    for i in 0..grid.rings - 1 {
        for j in 0..grid.segments {
            let jn = (j + 1) % grid.segments;
            let a = grid.vertex(i, j);
            let b = grid.vertex(i, jn);
            let c = grid.vertex(i + 1, j);
            let d = grid.vertex(i + 1, jn);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    faces
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Centerline {
    Straight,
    /// Circular arc of the given radius bending in the x–z plane.
    Arc {
        radius_mm: f64,
    },
}

impl Centerline {
    /// Point on the centerline at arc length `s` and the two in-plane normal directions.
    fn frame(&self, s: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        match *self {
            Centerline::Straight => ([0.0, 0.0, s], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            Centerline::Arc { radius_mm: rc } => {
                let phi = s / rc;
                (
                    [rc * (1.0 - phi.cos()), 0.0, rc * phi.sin()],
                    [phi.cos(), 0.0, -phi.sin()],
                    [0.0, 1.0, 0.0],
                )
            }
        }
    }
}

/// Tube of length `length_mm` centred on arc length 0, radius `profile(s)` at arc length `s`.
pub fn tube_mesh(
    profile: &dyn Fn(f64) -> f64,
    grid: GridDims,
    centerline: Centerline,
    length_mm: f64,
) -> Result<Mesh> {
    let grid = GridDims::new(grid.rings, grid.segments)?;
    if length_mm.is_nan() || length_mm <= 0.0 {
        return Err(Error::contract("tube_mesh", "length must be positive"));
    }
    let mut vertices = Vec::with_capacity(grid.n_vertices());
    for i in 0..grid.rings {
        let s = ring_position(i, grid.rings, length_mm);
        let r = profile(s);
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::contract(
                "tube_mesh",
                format!("radius {r} at s = {s} is not positive"),
            ));
        }
        let (c, e1, e2) = centerline.frame(s);
        for j in 0..grid.segments {
            let theta = 2.0 * PI * j as f64 / grid.segments as f64;
            let (ct, st) = (theta.cos(), theta.sin());
            vertices.push([
                c[0] + r * (ct * e1[0] + st * e2[0]),
                c[1] + r * (ct * e1[1] + st * e2[1]),
                c[2] + r * (ct * e1[2] + st * e2[2]),
            ]);
        }
    }
    Mesh::new(vertices, ring_grid_faces(grid))
}

pub fn ring_position(ring: usize, rings: usize, length_mm: f64) -> f64 {
    -0.5 * length_mm + length_mm * ring as f64 / (rings - 1) as f64
}

/// Covariate-driven bulge growth. Rates are in mm per month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthModel {
    pub base_radius_mm: f64,
    pub base_rate: f64,
    pub age_gain: f64,
    pub male_gain: f64,
    pub amplitude0_mm: (f64, f64),
    pub center_mm: (f64, f64),
    pub width_mm: (f64, f64),
    pub length_mm: f64,
    pub arc_fraction: f64,
    pub arc_radius_mm: (f64, f64),
    pub age0_years: (u32, u32),
    pub scans_per_patient: (usize, usize),
    pub gap_months: (u32, u32),
}

impl Default for GrowthModel {
    fn default() -> Self {
        Self {
            base_radius_mm: 15.0,
            base_rate: 0.15,
            age_gain: 0.5,
            male_gain: 0.3,
            amplitude0_mm: (2.0, 8.0),
            center_mm: (-20.0, 20.0),
            width_mm: (10.0, 20.0),
            length_mm: 120.0,
            arc_fraction: 0.5,
            arc_radius_mm: (100.0, 200.0),
            age0_years: (35, 93),
            scans_per_patient: (2, 8),
            gap_months: (3, 24),
        }
    }
}

impl GrowthModel {
    /// `g = g₀ (1 + γ_age (age₀ − 60)/30 + γ_sex [male])`, floored at zero.
    pub fn rate(&self, age0: u32, sex: Sex) -> f64 {
        let male = if sex == Sex::Male { 1.0 } else { 0.0 };
        (self.base_rate
            * (1.0 + self.age_gain * (age0 as f64 - 60.0) / 30.0 + self.male_gain * male))
            .max(0.0)
    }
}

/// Hidden per-patient shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientShape {
    pub amplitude0_mm: f64,
    pub rate_mm_per_month: f64,
    pub center_mm: f64,
    pub width_mm: f64,
    pub centerline: Centerline,
}

impl PatientShape {
    pub fn amplitude(&self, month: f64) -> f64 {
        self.amplitude0_mm + self.rate_mm_per_month * month
    }

    pub fn radius(&self, base: f64, s: f64, month: f64) -> f64 {
        let z = (s - self.center_mm) / self.width_mm;
        base + self.amplitude(month) * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub scan_month: u32,
    pub age_years: u32,
    pub mesh_path: String,
    pub mis_gt_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub shape: PatientShape,
    pub scans: Vec<Scan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub grid: GridDims,
    pub growth: GrowthModel,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_patients: 60,
            grid: GridDims::default(),
            growth: GrowthModel::default(),
        }
    }
}

/// Records plus generated meshes keyed by their relative path.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub meshes: BTreeMap<String, Mesh>,
}

pub fn mesh_path(patient: usize, scan: usize) -> String {
    format!("meshes/p{patient:04}_s{scan:02}.obj")
}

fn range_f(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    if config.n_patients == 0 {
        return Err(Error::contract(
            "generate_cohort",
            "need at least one patient",
        ));
    }
    let grid = GridDims::new(config.grid.rings, config.grid.segments)?;
    let gm = &config.growth;
    let (smin, smax) = gm.scans_per_patient;
    if smin < 2 || smax < smin {
        return Err(Error::contract(
            "generate_cohort",
            format!("scans per patient range ({smin}, {smax}) invalid"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n_patients);
    let mut meshes = BTreeMap::new();
    for p in 0..config.n_patients {
        let sex = if rng.gen_bool(0.5) {
            Sex::Male
        } else {
            Sex::Female
        };
        let age0 = rng.gen_range(gm.age0_years.0..=gm.age0_years.1);
        let n_scans = rng.gen_range(smin..=smax);
        let centerline = if rng.gen_bool(gm.arc_fraction.clamp(0.0, 1.0)) {
            Centerline::Arc {
                radius_mm: range_f(&mut rng, gm.arc_radius_mm),
            }
        } else {
            Centerline::Straight
        };
        let shape = PatientShape {
            amplitude0_mm: range_f(&mut rng, gm.amplitude0_mm),
            rate_mm_per_month: gm.rate(age0, sex),
            center_mm: range_f(&mut rng, gm.center_mm),
            width_mm: range_f(&mut rng, gm.width_mm),
            centerline,
        };
        let mut months = vec![0u32];
        for _ in 1..n_scans {
            let gap = rng.gen_range(gm.gap_months.0..=gm.gap_months.1);
            months.push(months.last().expect("nonempty") + gap);
        }
        let mut scans = Vec::with_capacity(n_scans);
        for (k, &month) in months.iter().enumerate() {
            let age = age0 + month / 12;
            if age > MAX_AGE {
                break;
            }
            let path = mesh_path(p, k);
            let mesh = tube_mesh(
                &|s| shape.radius(gm.base_radius_mm, s, month as f64),
                grid,
                shape.centerline,
                gm.length_mm,
            )?;
            meshes.insert(path.clone(), mesh);
            scans.push(Scan {
                scan_month: month,
                age_years: age,
                mesh_path: path,
                mis_gt_mm: 2.0 * (gm.base_radius_mm + shape.amplitude(month as f64)),
            });
        }
        records.push(PatientRecord {
            patient_id: format!("p{p:04}"),
            sex,
            shape,
            scans,
        });
    }
    Ok(Cohort { records, meshes })
}

/// Ordered (source, target) scan pair from one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub patient_id: String,
    pub source_mesh: String,
    pub target_mesh: String,
    pub source_month: u32,
    pub target_month: u32,
    pub delta_months: i32,
    pub age_years: u32,
    pub sex: Sex,
}

impl TrainingPair {
    pub fn id(&self) -> String {
        format!(
            "{}:m{}->m{}",
            self.patient_id, self.source_month, self.target_month
        )
    }

    pub fn condition(&self) -> Result<ClinicalCondition> {
        ClinicalCondition::new(self.age_years, self.sex, self.delta_months)
    }
}

/// All ordered pairs of distinct scans within each patient with `|Δ| ≤ 49` months.
pub fn make_pairs(records: &[PatientRecord]) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for rec in records {
        for src in &rec.scans {
            for tgt in &rec.scans {
                if std::ptr::eq(src, tgt) {
                    continue;
                }
                let delta = tgt.scan_month as i32 - src.scan_month as i32;
                if delta.abs() > MAX_DELTA_MONTHS || delta == 0 {
                    continue;
                }
                pairs.push(TrainingPair {
                    patient_id: rec.patient_id.clone(),
                    source_mesh: src.mesh_path.clone(),
                    target_mesh: tgt.mesh_path.clone(),
                    source_month: src.scan_month,
                    target_month: tgt.scan_month,
                    delta_months: delta,
                    age_years: src.age_years,
                    sex: rec.sex,
                });
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Patient ids per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Patient-level 7:1:2 partition; every split gets at least one patient.
pub fn split_cohort(records: &[PatientRecord], seed: u64) -> Result<Splits> {
    let n = records.len();
    if n < 3 {
        return Err(Error::contract(
            "split_cohort",
            format!("{n} patients cannot fill three splits"),
        ));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((n as f64 * 0.1).round() as usize).max(1);
    let n_test = ((n as f64 * 0.2).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(Error::contract(
            "split_cohort",
            "no patients left for training",
        ));
    }
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    Ok(Splits {
        train: sorted(&ids[..n_train]),
        val: sorted(&ids[n_train..n_train + n_val]),
        test: sorted(&ids[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mis_diameter;

    #[test]
    fn grid_counts() {
        let faces = ring_grid_faces(GridDims::new_unchecked(4, 3));
        assert_eq!(faces.len(), 18);
        assert!(faces.iter().flatten().all(|&i| i < 12));
    }

    #[test]
    fn invalid_grid_is_rejected() {
        assert!(GridDims::new(3, 4).is_err());
        assert!(GridDims::new(4, 7).is_err());
        assert!(tube_mesh(
            &|_| 15.0,
            GridDims::new_unchecked(4, 3),
            Centerline::Straight,
            100.0
        )
        .is_err());
    }

    #[test]
    fn constant_tube_inscribed_radius() {
        for segments in [8, 16, 32] {
            let grid = GridDims::new(6, segments).unwrap();
            let m = tube_mesh(&|_| 15.0, grid, Centerline::Straight, 100.0).unwrap();
            let expect = 2.0 * 15.0 * (PI / segments as f64).cos();
            assert!((mis_diameter(m.vertices(), grid).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn different_profiles_share_faces() {
        let grid = GridDims::default();
        let a = tube_mesh(&|_| 15.0, grid, Centerline::Straight, 120.0).unwrap();
        let b = tube_mesh(
            &|s| 15.0 + (-s * s / 50.0).exp(),
            grid,
            Centerline::Arc { radius_mm: 150.0 },
            120.0,
        )
        .unwrap();
        assert_eq!(a.faces(), b.faces());
    }

    fn small_config(seed: u64, n: usize) -> CohortConfig {
        CohortConfig {
            seed,
            n_patients: n,
            grid: GridDims::new(8, 8).unwrap(),
            ..CohortConfig::default()
        }
    }

    #[test]
    fn cohort_is_reproducible_and_monotone() {
        let a = generate_cohort(&small_config(5, 20)).unwrap();
        let b = generate_cohort(&small_config(5, 20)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.meshes, b.meshes);
        for rec in &a.records {
            assert!(rec.scans.len() >= 2 && rec.scans.len() <= 8);
            for w in rec.scans.windows(2) {
                assert!(w[1].scan_month > w[0].scan_month);
                assert!(w[1].mis_gt_mm >= w[0].mis_gt_mm);
                assert!(w[1].age_years >= w[0].age_years);
            }
        }
    }

    #[test]
    fn sixty_patients_scan_count_in_range() {
        let c = generate_cohort(&small_config(11, 60)).unwrap();
        let scans: usize = c.records.iter().map(|r| r.scans.len()).sum();
        assert!((120..=480).contains(&scans), "{scans}");
    }

    #[test]
    fn pairs_are_within_patient_and_antisymmetric() {
        let c = generate_cohort(&small_config(2, 12)).unwrap();
        let pairs = make_pairs(&c.records);
        for p in &pairs {
            assert!(p
                .source_mesh
                .starts_with(&format!("meshes/{}_", p.patient_id)));
            assert!(p
                .target_mesh
                .starts_with(&format!("meshes/{}_", p.patient_id)));
            assert!(p.delta_months != 0 && p.delta_months.abs() <= 49);
            let rev = pairs
                .iter()
                .find(|q| q.source_mesh == p.target_mesh && q.target_mesh == p.source_mesh)
                .expect("reverse pair");
            assert_eq!(rev.delta_months, -p.delta_months);
        }
    }

    #[test]
    fn three_scans_make_six_pairs() {
        let rec = PatientRecord {
            patient_id: "p0000".into(),
            sex: Sex::Female,
            shape: PatientShape {
                amplitude0_mm: 3.0,
                rate_mm_per_month: 0.1,
                center_mm: 0.0,
                width_mm: 10.0,
                centerline: Centerline::Straight,
            },
            scans: [0, 6, 18]
                .iter()
                .enumerate()
                .map(|(k, &m)| Scan {
                    scan_month: m,
                    age_years: 60,
                    mesh_path: mesh_path(0, k),
                    mis_gt_mm: 40.0,
                })
                .collect(),
        };
        assert_eq!(make_pairs(std::slice::from_ref(&rec)).len(), 6);
        let mut far = rec.clone();
        far.scans[2].scan_month = 60;
        // 0↔60 exceeds the 49-month cap, 6↔60 too
        assert_eq!(make_pairs(&[far]).len(), 2);
    }

    #[test]
    fn split_ten_patients() {
        let c = generate_cohort(&small_config(3, 10)).unwrap();
        let s = split_cohort(&c.records, 9).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        for id in &s.train {
            assert!(!s.val.contains(id) && !s.test.contains(id));
        }
        assert!(s.val.iter().all(|id| !s.test.contains(id)));
        assert_eq!(s, split_cohort(&c.records, 9).unwrap());
    }
}
