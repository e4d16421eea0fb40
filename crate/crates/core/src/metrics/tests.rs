use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::mesh::Mesh;
use crate::synth::{ring_position, tube_mesh, Centerline};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ]
        })
        .collect()
}

fn brute_directed(a: &[Point], b: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        out.push(best);
    }
    out
}

#[test]
fn cd_and_hd_match_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let (n, m) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let a = cloud(&mut rng, n);
        let b = cloud(&mut rng, m);
        let ab = brute_directed(&a, &b);
        let ba = brute_directed(&b, &a);
        let mut s_ab = 0.0;
        for d in &ab {
            s_ab += d;
        }
        let mut s_ba = 0.0;
        for d in &ba {
            s_ba += d;
        }
        let cd = 0.5 * (s_ab / n as f64 + s_ba / m as f64);
        let hd = ab.iter().chain(&ba).cloned().fold(0.0, f64::max);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), cd);
        assert_eq!(hausdorff(&a, &b).unwrap(), hd);
    }
}

#[test]
fn simple_cases() {
    let a = [[0.0, 0.0, 0.0]];
    let b = [[1.0, 0.0, 0.0]];
    assert_eq!(chamfer_distance(&a, &b).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = cloud(&mut rng, 20);
    let shifted: Vec<Point> = c.iter().map(|p| [p[0] + 1.0, p[1], p[2]]).collect();
    assert_eq!(hausdorff(&c, &c).unwrap(), 0.0);
    assert_eq!(chamfer_distance(&c, &c).unwrap(), 0.0);
    assert_eq!(mae(&c, &c).unwrap(), 0.0);
    assert!((mae(&shifted, &c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let lattice: Vec<Point> = (0..5)
        .flat_map(|i| (0..5).map(move |j| [3.0 * i as f64, 3.0 * j as f64, 0.0]))
        .collect();
    let moved: Vec<Point> = lattice.iter().map(|p| [p[0], p[1], p[2] + 1.0]).collect();
    assert!((hausdorff(&lattice, &moved).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn empty_sets_are_rejected() {
    let a = [[0.0; 3]];
    assert!(chamfer_distance(&a, &[]).is_err());
    assert!(hausdorff(&[], &a).is_err());
    assert!(mae(&a, &[[0.0; 3], [1.0; 3]]).is_err());
}

#[test]
fn mae_equals_l1_loss_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [1, 5, 480] {
        let a = cloud(&mut rng, n);
        let b = cloud(&mut rng, n);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&a));
        let y = g.constant(Tensor::from_rows(&b));
        let l = g.l1_loss(x, y).unwrap();
        assert_eq!(g.value(l).item(), mae(&a, &b).unwrap());
    }
}

fn straight_tube(profile: &dyn Fn(f64) -> f64, grid: GridDims) -> Mesh {
    tube_mesh(profile, grid, Centerline::Straight, 120.0).unwrap()
}

#[test]
fn analytic_cylinder() {
    let grid = GridDims::new(30, 32).unwrap();
    let m = straight_tube(&|_| 15.0, grid);
    let d = mis_diameter(m.vertices(), grid).unwrap();
    assert!((d - 30.0).abs() <= 0.5, "{d}");
    assert!((d - 30.0 * (std::f64::consts::PI / 32.0).cos()).abs() < 1e-9);
}

#[test]
fn gaussian_bulge_peak() {
    // odd ring count puts a ring at the axial center
    let grid = GridDims::new(31, 32).unwrap();
    assert!(ring_position(15, 31, 120.0).abs() < 1e-12);
    let m = straight_tube(
        &|s: f64| 15.0 + 7.0 * (-(s * s) / (2.0 * 15.0_f64.powi(2))).exp(),
        grid,
    );
    let d = mis_diameter(m.vertices(), grid).unwrap();
    assert!((d - 44.0).abs() <= 0.7, "{d}");
}

#[test]
fn vertex_count_mismatch_is_rejected() {
    let grid = GridDims::new(4, 8).unwrap();
    assert!(mis_diameter(&[[0.0; 3]; 31], grid).is_err());
}

fn rotate(p: &Point, (a, b, c): (f64, f64, f64)) -> Point {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let x = [p[0], p[1] * ca - p[2] * sa, p[1] * sa + p[2] * ca];
    let y = [x[0] * cb + x[2] * sb, x[1], -x[0] * sb + x[2] * cb];
    [y[0] * cc - y[1] * sc, y[0] * sc + y[1] * cc, y[2]]
}

fn arc_tube() -> (Mesh, GridDims) {
    let grid = GridDims::new(12, 16).unwrap();
    let m = tube_mesh(
        &|s: f64| 15.0 + 4.0 * (-(s - 10.0).powi(2) / 200.0).exp(),
        grid,
        Centerline::Arc { radius_mm: 150.0 },
        120.0,
    )
    .unwrap();
    (m, grid)
}

proptest! {
    #[test]
    fn mis_is_scale_homogeneous(s in 0.1f64..10.0) {
        let (m, grid) = arc_tube();
        let scaled: Vec<Point> = m.vertices().iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        let d0 = mis_diameter(m.vertices(), grid).unwrap();
        let d1 = mis_diameter(&scaled, grid).unwrap();
        prop_assert!((d1 - s * d0).abs() < 1e-9 * s * d0);
    }

    #[test]
    fn mis_is_rigid_invariant(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
                              t in prop::array::uniform3(-100.0f64..100.0)) {
        let (m, grid) = arc_tube();
        let moved: Vec<Point> = m
            .vertices()
            .iter()
            .map(|p| {
                let r = rotate(p, (a, b, c));
                [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
            })
            .collect();
        let d0 = mis_diameter(m.vertices(), grid).unwrap();
        let d1 = mis_diameter(&moved, grid).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn metric_axioms(seed in 0u64..1000, n in 1usize..20, m in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(&mut rng, n);
        let b = cloud(&mut rng, m);
        let cd = chamfer_distance(&a, &b).unwrap();
        let hd = hausdorff(&a, &b).unwrap();
        prop_assert!(cd >= 0.0 && hd >= 0.0);
        prop_assert_eq!(cd, chamfer_distance(&b, &a).unwrap());
        prop_assert_eq!(hd, hausdorff(&b, &a).unwrap());
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let dir_max = mean(brute_directed(&a, &b)).max(mean(brute_directed(&b, &a)));
        prop_assert!(hd >= dir_max);
    }
}

mod report_tests {
    use super::super::report::*;

    fn row(id: &str, delta: i32, mae: f64) -> SampleMetrics {
        SampleMetrics {
            pair_id: id.into(),
            delta_months: delta,
            mae,
            cd: mae / 2.0,
            hd: mae * 3.0,
            mis_pred: 30.0,
            mis_gt: 31.0,
            mis_err: 1.0,
        }
    }

    #[test]
    fn single_sample_has_zero_std() {
        let r = EvalReport {
            samples: vec![row("a", 3, 1.5)],
        };
        let s = r.summary();
        assert_eq!(s.mae.std, 0.0);
        assert_eq!(s.mae.mean, 1.5);
    }

    #[test]
    fn csv_round_trip_and_reaggregation() {
        let r = EvalReport {
            samples: vec![
                row("p0001:m0->m12", 12, 1.0),
                row("p0002:m3->m0", -3, 2.0),
                row("x", 40, 4.5),
            ],
        };
        let text = r.to_csv().unwrap();
        assert!(text.starts_with("pair_id,delta_months,mae,cd,hd,mis_pred,mis_gt,mis_err\n"));
        let back = EvalReport::from_csv(&text).unwrap();
        assert_eq!(back, r);
        let maes = [1.0, 2.0, 4.5];
        let mean = maes.iter().sum::<f64>() / 3.0;
        let std = (maes.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0).sqrt();
        let s = back.summary();
        assert!((s.mae.mean - mean).abs() < 1e-15 && (s.mae.std - std).abs() < 1e-15);
        assert_eq!(r.filter_abs_delta(12).samples.len(), 2);
    }
}
