//! Mesh reconstruction metrics: MAE, Chamfer, Hausdorff and inscribed-sphere diameter.

mod report;

pub use report::{
    evaluate, evaluate_identity, worker_count, EvalReport, SampleMetrics, Stat, Summary,
    METRICS_FILE, SUMMARY_FILE,
};

use crate::autodiff::mean_abs_diff;
use crate::error::{Error, Result};
use crate::synth::GridDims;

type Point = [f64; 3];

fn flat(points: &[Point]) -> &[f64] {
    points.as_flattened()
}

fn nonempty(op: &'static str, a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract(op, "empty point set"));
    }
    Ok(())
}

/// Mean absolute coordinate error over corresponding vertices.
pub fn mae(pred: &[Point], target: &[Point]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::contract(
            "mae",
            format!(
                "vertex counts {} and {} differ or are zero",
                pred.len(),
                target.len()
            ),
        ));
    }
    Ok(mean_abs_diff(flat(pred), flat(target)))
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Distance from every point of `from` to its nearest point in `to`.
fn nearest_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| dist2(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// `½ (mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)`, unsquared.
pub fn chamfer_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    nonempty("chamfer_distance", a, b)?;
    let ab = nearest_distances(a, b);
    let ba = nearest_distances(b, a);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Symmetric Hausdorff distance between vertex sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    nonempty("hausdorff", a, b)?;
    let ab = nearest_distances(a, b);
    let ba = nearest_distances(b, a);
    Ok(ab.into_iter().chain(ba).fold(0.0, f64::max))
}

fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let foot = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, &foot).sqrt()
}

/// Inscribed radius of every ring: distance from the ring centroid to the nearest ring edge.
pub fn ring_inscribed_radii(vertices: &[Point], grid: GridDims) -> Result<Vec<f64>> {
    if vertices.len() != grid.n_vertices() || grid.segments < 3 {
        return Err(Error::contract(
            "mis_diameter",
            format!(
                "{} vertices do not form a {}x{} ring grid",
                vertices.len(),
                grid.rings,
                grid.segments
            ),
        ));
    }
    Ok(vertices
        .chunks_exact(grid.segments)
        .map(|ring| {
            let n = ring.len() as f64;
            let c = ring.iter().fold([0.0; 3], |acc, v| {
                [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]
            });
            let c = [c[0] / n, c[1] / n, c[2] / n];
            (0..ring.len())
                .map(|j| point_segment_distance(&c, &ring[j], &ring[(j + 1) % ring.len()]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Diameter of the largest inscribed sphere along a ring-grid tube.
pub fn mis_diameter(vertices: &[Point], grid: GridDims) -> Result<f64> {
    Ok(2.0
        * ring_inscribed_radii(vertices, grid)?
            .into_iter()
            .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests;
