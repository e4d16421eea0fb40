use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use meshgrow::condition::{encode_condition, ClinicalCondition, Sex};
use meshgrow::mesh::{load_mesh, save_mesh, GraphTopology, Mesh};
use meshgrow::metrics::mis_diameter;
use meshgrow::model::GeneratorInput;
use meshgrow::synth::{ring_grid_faces, GridDims};
use meshgrow::train::load_generator;

use crate::config::{parse_grid, require_file};

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source mesh (OBJ).
    #[arg(long)]
    mesh: PathBuf,
    /// Age in years at the source scan.
    #[arg(long)]
    age: u32,
    /// male or female.
    #[arg(long)]
    sex: Sex,
    /// Months to the predicted scan; a comma-separated list writes one mesh per value.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    delta: Vec<i32>,
    /// Output OBJ. With several deltas, `<stem>_d<delta>.obj` files are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// RINGS,SEGMENTS of the source tube; inferred from the faces when omitted.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridDims>,
}

pub fn run(args: PredictArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.mesh, "mesh")?;
    let conditions = args
        .delta
        .iter()
        .map(|&d| {
            let c = ClinicalCondition::new(args.age, args.sex, d)?;
            Ok((d, encode_condition(&c)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mesh = load_mesh(&args.mesh)?;
    let grid = match args.grid {
        Some(g) => g,
        None => infer_grid(&mesh).context("cannot infer the ring grid of the mesh; pass --grid")?,
    };
    if grid.n_vertices() != mesh.n_vertices() {
        bail!(
            "grid {}x{} needs {} vertices, mesh has {}",
            grid.rings,
            grid.segments,
            grid.n_vertices(),
            mesh.n_vertices()
        );
    }
    let targets: Vec<PathBuf> = conditions
        .iter()
        .map(|&(d, _)| output_path(&args.out, d, conditions.len() > 1))
        .collect();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }

    let (_, generator) = load_generator(&args.checkpoint)?;
    let topology = GraphTopology::from_mesh(&mesh)?;
    for ((delta, condition), path) in conditions.iter().zip(&targets) {
        let predicted = generator.predict(GeneratorInput {
            source: mesh.vertices(),
            topology: &topology,
            condition,
        })?;
        let mis = mis_diameter(&predicted, grid)?;
        save_mesh(&mesh.with_vertices(predicted)?, path)?;
        println!(
            "delta_months={delta} mis_mm={mis:.4} path={}",
            path.display()
        );
    }
    Ok(())
}

fn output_path(out: &Path, delta: i32, chain: bool) -> PathBuf {
    if !chain {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map_or("pred".into(), |s| s.to_string_lossy());
    out.with_file_name(format!("{stem}_d{delta}.obj"))
}

/// The ring grid whose face list the mesh reproduces exactly, if any.
pub fn infer_grid(mesh: &Mesh) -> Option<GridDims> {
    let n = mesh.n_vertices();
    (GridDims::MIN_SEGMENTS..=n / GridDims::MIN_RINGS)
        .filter(|&s| n.is_multiple_of(s))
        .filter_map(|s| GridDims::new(n / s, s).ok())
        .find(|&g| ring_grid_faces(g) == mesh.faces())
}
