//! Reconstruction and least-squares adversarial objectives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    #[default]
    L1,
    Cd,
}

impl ReconLoss {
    pub fn label(self) -> &'static str {
        match self {
            ReconLoss::L1 => "l1",
            ReconLoss::Cd => "cd",
        }
    }
}

impl std::str::FromStr for ReconLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(ReconLoss::L1),
            "cd" | "chamfer" => Ok(ReconLoss::Cd),
            other => Err(Error::Config(format!(
                "unknown reconstruction loss {other:?}"
            ))),
        }
    }
}

/// Mean over all `3N` coordinates of `|pred − target|`.
pub fn l1_recon<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::contract(
            "l1_recon",
            format!(
                "shapes {:?} and {:?} differ",
                g.shape(pred),
                g.shape(target)
            ),
        ));
    }
    g.l1_loss(pred, target)
}

/// Symmetric mean nearest-neighbour distance, unsquared.
pub fn chamfer_loss<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let ab = g.pairwise_distance(a, b)?;
    let a_to_b = g.min_reduce_last(ab)?;
    let ba = g.pairwise_distance(b, a)?;
    let b_to_a = g.min_reduce_last(ba)?;
    let n = g.shape(a_to_b)[0];
    let m = g.shape(b_to_a)[0];
    let sa = g.sum(a_to_b)?;
    let sa = g.scale(sa, 0.5 / n as f64)?;
    let sb = g.sum(b_to_a)?;
    let sb = g.scale(sb, 0.5 / m as f64)?;
    g.add(sa, sb)
}

pub fn reconstruction<T: Real>(
    g: &mut Graph<T>,
    kind: ReconLoss,
    pred: Var,
    target: Var,
) -> Result<Var> {
    match kind {
        ReconLoss::L1 => l1_recon(g, pred, target),
        ReconLoss::Cd => chamfer_loss(g, pred, target),
    }
}

fn squared_distance_to<T: Real>(g: &mut Graph<T>, score: Var, label: f64) -> Result<Var> {
    let shape = g.shape(score).to_vec();
    let c = g.constant(Tensor::full(shape, T::lit(label)));
    g.mse_loss(score, c)
}

/// `½[(d_real − 1)² + d_fake²]`.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = squared_distance_to(g, d_real, 1.0)?;
    let f = squared_distance_to(g, d_fake, 0.0)?;
    let s = g.add(r, f)?;
    g.scale(s, 0.5)
}

/// `½(d_fake − 1)²`.
pub fn generator_adv_loss<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let f = squared_distance_to(g, d_fake, 1.0)?;
    g.scale(f, 0.5)
}

/// Plain-value form: `(d_loss, g_loss)`.
pub fn adversarial_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    (
        0.5 * ((d_real - 1.0).powi(2) + d_fake.powi(2)),
        0.5 * (d_fake - 1.0).powi(2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::metrics::chamfer_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    fn eval(build: impl Fn(&mut Graph<f64>) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = build(&mut g).unwrap();
        g.value(v).item()
    }

    #[test]
    fn l1_examples() {
        let target: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, -1.0]).collect();
        let same = eval(|g| {
            let a = g.constant(pts(&target));
            let b = g.constant(pts(&target));
            l1_recon(g, a, b)
        });
        assert_eq!(same, 0.0);
        let shifted: Vec<[f64; 3]> = target.iter().map(|p| [p[0] + 1.0, p[1], p[2]]).collect();
        let v = eval(|g| {
            let a = g.constant(pts(&shifted));
            let b = g.constant(pts(&target));
            l1_recon(g, a, b)
        });
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        let mut one_off = target.clone();
        one_off[4][0] += 3.0;
        let v = eval(|g| {
            let a = g.constant(pts(&one_off));
            let b = g.constant(pts(&target));
            l1_recon(g, a, b)
        });
        assert!((v - 0.1).abs() < 1e-15);
    }

    #[test]
    fn l1_rejects_vertex_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(pts(&[[0.0; 3]; 3]));
        let b = g.constant(pts(&[[0.0; 3]; 4]));
        assert!(l1_recon(&mut g, a, b).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let v = eval(|g| {
            let a = g.constant(pts(&[[0.0, 0.0, 0.0]]));
            let b = g.constant(pts(&[[1.0, 0.0, 0.0]]));
            chamfer_loss(g, a, b)
        });
        assert_eq!(v, 1.0);
        let cloud = [[0.0, 1.0, 2.0], [3.0, -1.0, 0.5]];
        let v = eval(|g| {
            let a = g.constant(pts(&cloud));
            let b = g.constant(pts(&cloud));
            chamfer_loss(g, a, b)
        });
        assert_eq!(v, 0.0);
    }

    fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let d = |p: &[f64; 3], q: &[f64; 3]| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        };
        let dir = |x: &[[f64; 3]], y: &[[f64; 3]]| {
            x.iter()
                .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        0.5 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn chamfer_matches_brute_force_and_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a: Vec<[f64; 3]> = (0..30).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let b: Vec<[f64; 3]> = (0..30).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let v = eval(|g| {
                let x = g.constant(pts(&a));
                let y = g.constant(pts(&b));
                chamfer_loss(g, x, y)
            });
            assert!((v - brute_chamfer(&a, &b)).abs() < 1e-12);
            assert!((v - chamfer_distance(&a, &b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(adversarial_losses(1.0, 0.0), (0.0, 0.5));
        assert_eq!(adversarial_losses(0.3, 1.0).1, 0.0);
        let d = eval(|g| {
            let r = g.constant(Tensor::scalar(0.25));
            let f = g.constant(Tensor::scalar(0.75));
            discriminator_loss(g, r, f)
        });
        assert!((d - adversarial_losses(0.25, 0.75).0).abs() < 1e-15);
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let inputs = vec![Tensor::scalar(0.3), Tensor::scalar(-0.6)];
        let d = gradcheck::check(&inputs, 1e-5, &|g, v| discriminator_loss(g, v[0], v[1])).unwrap();
        let gl = gradcheck::check(&inputs[1..], 1e-5, &|g, v| generator_adv_loss(g, v[0])).unwrap();
        assert!(d.max_rel_err < 1e-6 && gl.max_rel_err < 1e-6);
    }

    #[test]
    fn chamfer_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cloud = |n: usize| {
            Tensor::new(
                vec![n, 3],
                (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let inputs = vec![cloud(6), cloud(5)];
        let r = gradcheck::check(&inputs, 1e-6, &|g, v| chamfer_loss(g, v[0], v[1])).unwrap();
        assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
    }
}
