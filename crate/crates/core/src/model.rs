//! Conditional generator (local + global + condition branches fused into a
//! per-vertex displacement) and a conditional graph discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Dense, Graph, ParamStore, Real, Tensor, Var};
use crate::condition::{ConditionMask, ConditionVector, CONDITION_WIDTH};
use crate::error::{Error, Result};
use crate::gcn::{gcn_forward, GcnParams};
use crate::kcn::{kcn_forward, KcnConfig, KcnParams, KnnIndices};
use crate::mesh::GraphTopology;
use crate::LEAKY_SLOPE;

type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Kcn,
    Gcn,
    #[default]
    Both,
}

impl Backbone {
    pub fn uses_kcn(self) -> bool {
        matches!(self, Backbone::Kcn | Backbone::Both)
    }

    pub fn uses_gcn(self) -> bool {
        matches!(self, Backbone::Gcn | Backbone::Both)
    }

    pub fn label(self) -> &'static str {
        match self {
            Backbone::Kcn => "kcn",
            Backbone::Gcn => "gcn",
            Backbone::Both => "kcn+gcn",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kcn" => Ok(Backbone::Kcn),
            "gcn" => Ok(Backbone::Gcn),
            "both" | "kcn+gcn" => Ok(Backbone::Both),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub backbone: Backbone,
    pub use_condition: bool,
    pub condition_mask: ConditionMask,
    pub kcn: KcnConfig,
    pub gcn_widths: Vec<usize>,
    pub condition_dim: usize,
    pub fusion_hidden: usize,
    /// Init scale of the final fusion layer; small keeps early predictions near the source.
    pub output_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Both,
            use_condition: true,
            condition_mask: ConditionMask::default(),
            kcn: KcnConfig::default(),
            gcn_widths: vec![3, 32, 64, 64, 32],
            condition_dim: 32,
            fusion_hidden: 64,
            output_gain: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub gcn_widths: Vec<usize>,
    pub condition_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            gcn_widths: vec![3, 32, 64, 64],
            condition_dim: 32,
        }
    }
}

fn check_widths(what: &str, widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths[0] != 3 || widths.contains(&0) {
        return Err(Error::Config(format!(
            "{what} widths must start at 3 and have at least one positive layer, got {widths:?}"
        )));
    }
    Ok(())
}

/// Per-mesh centering and scale: coordinates become zero-mean with unit RMS radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: Point,
    pub rms: f64,
}

impl Normalization {
    pub fn of(points: &[Point]) -> Self {
        let n = points.len().max(1) as f64;
        let mut mean = [0.0; 3];
        for p in points {
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let ms = points
            .iter()
            .map(|p| (0..3).map(|k| (p[k] - mean[k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let rms = if ms > 0.0 { ms.sqrt() } else { 1.0 };
        Self { mean, rms }
    }

    pub fn apply<T: Real>(&self, points: &[Point]) -> Tensor<T> {
        let data = points
            .iter()
            .flat_map(|p| (0..3).map(move |k| T::lit((p[k] - self.mean[k]) / self.rms)))
            .collect();
        Tensor::new(vec![points.len(), 3], data).expect("non-empty points")
    }
}

/// Everything the generator sees for one prediction.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorInput<'a> {
    pub source: &'a [Point],
    pub topology: &'a GraphTopology,
    pub condition: &'a ConditionVector,
}

#[derive(Debug, Clone)]
struct GeneratorLayout {
    kcn: Option<KcnParams>,
    gcn: Option<GcnParams>,
    condition: Option<Dense>,
    fusion_hidden: Dense,
    fusion_out: Dense,
}

/// Graph outputs of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorPass {
    /// Displacement in mm, `[N, 3]`.
    pub displacement: Var,
    /// Source plus displacement, `[N, 3]`.
    pub predicted: Var,
    pub knn: Option<KnnIndices>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    config: GeneratorConfig,
    layout: GeneratorLayout,
    pub params: ParamStore<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        check_widths("generator gcn", &config.gcn_widths)?;
        if config.kcn.k == 0 {
            return Err(Error::Config("kcn.k must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut fused = 0;
        let kcn = config.backbone.uses_kcn().then(|| {
            let p = KcnParams::init(&mut params, &mut rng, "kcn", config.kcn);
            fused += p.output_dim();
            p
        });
        let gcn = config.backbone.uses_gcn().then(|| {
            let p = GcnParams::init(&mut params, &mut rng, "gcn", &config.gcn_widths);
            fused += p.output_dim();
            p
        });
        let condition = config.use_condition.then(|| {
            fused += config.condition_dim;
            Dense::init(
                &mut params,
                &mut rng,
                "condition",
                CONDITION_WIDTH,
                config.condition_dim,
                1.0,
            )
        });
        let fusion_hidden = Dense::init(
            &mut params,
            &mut rng,
            "fusion.0",
            fused,
            config.fusion_hidden,
            1.0,
        );
        let fusion_out = Dense::init(
            &mut params,
            &mut rng,
            "fusion.1",
            config.fusion_hidden,
            3,
            config.output_gain,
        );
        Ok(Self {
            config,
            layout: GeneratorLayout {
                kcn,
                gcn,
                condition,
                fusion_hidden,
                fusion_out,
            },
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Zeroes the final fusion layer so the displacement is exactly zero.
    pub fn zero_output_layer(&mut self) {
        self.layout.fusion_out.zero(&mut self.params);
    }

    /// Builds the forward pass into `g` using parameters already bound as `bound`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: GeneratorInput<'_>,
        frozen_knn: Option<&KnnIndices>,
    ) -> Result<GeneratorPass> {
        let n = input.source.len();
        if input.topology.n_vertices() != n {
            return Err(Error::contract(
                "generator_forward",
                format!(
                    "topology has {} vertices, mesh has {n}",
                    input.topology.n_vertices()
                ),
            ));
        }
        let norm = Normalization::of(input.source);
        let x = g.constant(norm.apply(input.source));
        let mut parts = Vec::with_capacity(3);
        let mut knn = None;
        if let Some(kcn) = &self.layout.kcn {
            let (local, idx) = kcn_forward(g, bound, kcn, x, frozen_knn)?;
            parts.push(local);
            knn = Some(idx);
        }
        if let Some(gcn) = &self.layout.gcn {
            parts.push(gcn_forward(
                g,
                bound,
                gcn,
                input.topology.propagation(),
                x,
                false,
            )?);
        }
        if let Some(embed) = &self.layout.condition {
            let c = g.constant(input.condition.to_tensor(self.config.condition_mask));
            let c = embed.apply(g, bound, c)?;
            parts.push(g.tile_rows(c, n)?);
        }
        let fused = g.concat_last_axis(&parts)?;
        let h = self.layout.fusion_hidden.apply(g, bound, fused)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let delta = self.layout.fusion_out.apply(g, bound, h)?;
        let displacement = g.scale(delta, norm.rms)?;
        let source = g.constant(Tensor::<T>::from_rows(input.source));
        let predicted = g.add(source, displacement)?;
        Ok(GeneratorPass {
            displacement,
            predicted,
            knn,
            normalization: norm,
        })
    }

    /// Inference: predicted vertices in mm. The source is added in f64 so a
    /// zero displacement returns it unchanged.
    pub fn predict(&self, input: GeneratorInput<'_>) -> Result<Vec<Point>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let pass = self.forward(&mut g, &bound, input, None)?;
        let disp = g.value(pass.displacement).data();
        Ok(input
            .source
            .iter()
            .enumerate()
            .map(|(i, p)| {
                [
                    p[0] + disp[i * 3].as_f64(),
                    p[1] + disp[i * 3 + 1].as_f64(),
                    p[2] + disp[i * 3 + 2].as_f64(),
                ]
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
struct DiscriminatorLayout {
    gcn: GcnParams,
    condition: Dense,
    head: Dense,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    layout: DiscriminatorLayout,
    pub params: ParamStore<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        check_widths("discriminator gcn", &config.gcn_widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let gcn = GcnParams::init(&mut params, &mut rng, "gcn", &config.gcn_widths);
        let condition = Dense::init(
            &mut params,
            &mut rng,
            "condition",
            CONDITION_WIDTH,
            config.condition_dim,
            1.0,
        );
        let head = Dense::init(
            &mut params,
            &mut rng,
            "head",
            gcn.output_dim() + config.condition_dim,
            1,
            1.0,
        );
        Ok(Self {
            config,
            layout: DiscriminatorLayout {
                gcn,
                condition,
                head,
            },
            params,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Scalar score for `candidate` (mm, `[N, 3]`), normalized with the source
    /// mesh's `norm` so real and generated meshes share one frame.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        candidate: Var,
        norm: &Normalization,
        topology: &GraphTopology,
        condition: &ConditionVector,
        mask: ConditionMask,
    ) -> Result<Var> {
        let shape = g.shape(candidate);
        if shape.len() != 2 || shape[1] != 3 || shape[0] != topology.n_vertices() {
            return Err(Error::contract(
                "discriminator_forward",
                format!(
                    "candidate {shape:?} does not match {} vertices",
                    topology.n_vertices()
                ),
            ));
        }
        let mean = g.constant(Tensor::new(vec![3], norm.mean.map(T::lit).to_vec())?);
        let centered = g.sub(candidate, mean)?;
        let x = g.scale(centered, 1.0 / norm.rms)?;
        let h = gcn_forward(g, bound, &self.layout.gcn, topology.propagation(), x, true)?;
        let pooled = g.mean_axis(h, 0)?;
        let width = self.layout.gcn.output_dim();
        let pooled = g.reshape(pooled, vec![1, width])?;
        let c = g.constant(condition.to_tensor(mask));
        let c = self.layout.condition.apply(g, bound, c)?;
        let z = g.concat_last_axis(&[pooled, c])?;
        let s = self.layout.head.apply(g, bound, z)?;
        g.reshape(s, Vec::new())
    }

    /// Convenience score of fixed vertices, outside any training graph.
    pub fn score(
        &self,
        vertices: &[Point],
        norm: &Normalization,
        topology: &GraphTopology,
        condition: &ConditionVector,
        mask: ConditionMask,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let v = g.constant(Tensor::<T>::from_rows(vertices));
        let s = self.forward(&mut g, &bound, v, norm, topology, condition, mask)?;
        Ok(g.value(s).item().as_f64())
    }
}

#[cfg(test)]
mod tests;
