use super::*;
use crate::condition::{encode_condition, ClinicalCondition, Sex};
use crate::mesh::Mesh;
use crate::synth::{tube_mesh, Centerline, GridDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn jittered_tube(seed: u64, scale: f64) -> Mesh {
    let grid = GridDims::new(6, 8).unwrap();
    let m = tube_mesh(
        &|s: f64| 15.0 + 5.0 * (-(s * s) / 300.0).exp(),
        grid,
        Centerline::Arc { radius_mm: 140.0 },
        120.0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = m
        .vertices()
        .iter()
        .map(|p| p.map(|x| (x + rng.gen_range(-0.5..0.5)) * scale))
        .collect();
    m.with_vertices(v).unwrap()
}

fn cond(delta: i32) -> ConditionVector {
    encode_condition(&ClinicalCondition::new(67, Sex::Female, delta).unwrap()).unwrap()
}

fn small_generator<T: Real>(backbone: Backbone) -> Generator<T> {
    Generator::new(
        GeneratorConfig {
            backbone,
            kcn: KcnConfig {
                k: 4,
                ..KcnConfig::default()
            },
            output_gain: 1.0,
            ..GeneratorConfig::default()
        },
        11,
    )
    .unwrap()
}

#[test]
fn zeroed_output_layer_returns_source_exactly() {
    let mesh = jittered_tube(1, 1.0);
    let topo = GraphTopology::from_mesh(&mesh).unwrap();
    let c = cond(12);
    for backbone in [Backbone::Kcn, Backbone::Gcn, Backbone::Both] {
        let mut g = small_generator::<f32>(backbone);
        let input = GeneratorInput {
            source: mesh.vertices(),
            topology: &topo,
            condition: &c,
        };
        let before = g.predict(input).unwrap();
        assert_ne!(before, mesh.vertices());
        g.zero_output_layer();
        let out = g.predict(input).unwrap();
        assert_eq!(out.len(), mesh.n_vertices());
        assert_eq!(out, mesh.vertices());
    }
}

#[test]
fn vertex_mismatch_is_rejected() {
    let mesh = jittered_tube(1, 1.0);
    let other = GraphTopology::from_edges(&[(0, 1)], 2).unwrap();
    let c = cond(3);
    let g = small_generator::<f64>(Backbone::Both);
    let err = g
        .predict(GeneratorInput {
            source: mesh.vertices(),
            topology: &other,
            condition: &c,
        })
        .unwrap_err();
    assert!(err.to_string().starts_with("generator_forward"));
}

#[test]
fn parameter_layout_follows_backbone() {
    let names = |b| {
        small_generator::<f64>(b)
            .params
            .iter()
            .map(|p| p.name.clone())
            .collect::<Vec<_>>()
    };
    let both = names(Backbone::Both);
    assert!(
        both.iter().any(|n| n.starts_with("kcn.")) && both.iter().any(|n| n.starts_with("gcn."))
    );
    assert!(!names(Backbone::Gcn).iter().any(|n| n.starts_with("kcn.")));
    assert!(!names(Backbone::Kcn).iter().any(|n| n.starts_with("gcn.")));
    let g = small_generator::<f64>(Backbone::Both);
    let fusion = g.params.find("fusion.0.weight").unwrap();
    // 2·64 local + 32 global + 32 condition
    assert_eq!(g.params.get(fusion).value.shape(), &[192, 64]);
}

#[test]
fn generator_is_permutation_equivariant() {
    let mesh = jittered_tube(2, 1.0);
    let n = mesh.n_vertices();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let pmesh = mesh.permuted(&perm).unwrap();
    let topo = GraphTopology::from_mesh(&mesh).unwrap();
    let ptopo = GraphTopology::from_mesh(&pmesh).unwrap();
    let c = cond(-7);
    let g = small_generator::<f64>(Backbone::Both);
    let out = g
        .predict(GeneratorInput {
            source: mesh.vertices(),
            topology: &topo,
            condition: &c,
        })
        .unwrap();
    let pout = g
        .predict(GeneratorInput {
            source: pmesh.vertices(),
            topology: &ptopo,
            condition: &c,
        })
        .unwrap();
    for i in 0..n {
        for k in 0..3 {
            assert!((out[i][k] - pout[perm[i]][k]).abs() < 1e-9);
        }
    }
}

fn disc<T: Real>() -> Discriminator<T> {
    Discriminator::new(DiscriminatorConfig::default(), 3).unwrap()
}

#[test]
fn zero_discriminator_scores_zero() {
    let mut d = disc::<f64>();
    for p in d.params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mesh = jittered_tube(3, 1.0);
    let topo = GraphTopology::from_mesh(&mesh).unwrap();
    let norm = Normalization::of(mesh.vertices());
    let s = d
        .score(
            mesh.vertices(),
            &norm,
            &topo,
            &cond(5),
            ConditionMask::default(),
        )
        .unwrap();
    assert_eq!(s, 0.0);
}

#[test]
fn discriminator_is_permutation_invariant() {
    let mesh = jittered_tube(4, 1.0);
    let n = mesh.n_vertices();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let pmesh = mesh.permuted(&perm).unwrap();
    let topo = GraphTopology::from_mesh(&mesh).unwrap();
    let ptopo = GraphTopology::from_mesh(&pmesh).unwrap();
    let d = disc::<f64>();
    let mask = ConditionMask::default();
    let a = d
        .score(
            mesh.vertices(),
            &Normalization::of(mesh.vertices()),
            &topo,
            &cond(5),
            mask,
        )
        .unwrap();
    let b = d
        .score(
            pmesh.vertices(),
            &Normalization::of(pmesh.vertices()),
            &ptopo,
            &cond(5),
            mask,
        )
        .unwrap();
    assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn discriminator_is_finite_on_huge_meshes_at_f32() {
    let mesh = jittered_tube(5, 1e3);
    let topo = GraphTopology::from_mesh(&mesh).unwrap();
    let d = disc::<f32>();
    let s = d
        .score(
            mesh.vertices(),
            &Normalization::of(mesh.vertices()),
            &topo,
            &cond(0),
            ConditionMask::default(),
        )
        .unwrap();
    assert!(s.is_finite());
}

#[test]
fn normalization_is_zero_mean_unit_rms() {
    let mesh = jittered_tube(6, 3.0);
    let norm = Normalization::of(mesh.vertices());
    let t: Tensor<f64> = norm.apply(mesh.vertices());
    let n = mesh.n_vertices() as f64;
    for k in 0..3 {
        let m: f64 = t.data().iter().skip(k).step_by(3).sum::<f64>() / n;
        assert!(m.abs() < 1e-12);
    }
    let ms: f64 = t.data().iter().map(|x| x * x).sum::<f64>() / n;
    assert!((ms - 1.0).abs() < 1e-12);
    assert_eq!(Normalization::of(&[[1.0, 2.0, 3.0]]).rms, 1.0);
}

#[test]
fn invalid_widths_are_config_errors() {
    let cfg = GeneratorConfig {
        gcn_widths: vec![4, 8],
        ..GeneratorConfig::default()
    };
    assert!(matches!(
        Generator::<f32>::new(cfg, 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        Discriminator::<f32>::new(
            DiscriminatorConfig {
                gcn_widths: vec![3],
                condition_dim: 4
            },
            0
        ),
        Err(Error::Config(_))
    ));
}
