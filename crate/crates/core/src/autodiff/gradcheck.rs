//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates forward values, so it is independent of the
//! backward rules it verifies. [`op_cases`] supplies three input configurations
//! for every [`OpKind`]; the match is exhaustive, so a new op cannot be added
//! without a gradient-check case.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, OpKind, Var};
use super::sparse::SparseMatrix;
use super::tensor::Tensor;
use crate::error::Result;

/// Magnitude below which gradients are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Builds a graph output from input variables.
pub type BuildFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;
pub type Builder = Box<BuildFn<'static>>;

pub struct OpCase {
    pub label: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn reduce_weights(len: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(len as u64 ^ 0x9e37_79b9);
    let w = (0..len).map(|_| rng.gen_range(0.5..1.5)).collect();
    Tensor::new(vec![len], w).expect("1-d")
}

/// Scalar objective: the output itself when scalar, else a fixed weighted sum.
fn objective(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let n = g.value(out).len();
    if n == 1 {
        return g.reshape(out, Vec::new());
    }
    let flat = g.reshape(out, vec![n])?;
    let w = g.constant(reduce_weights(n));
    let weighted = g.hadamard(flat, w)?;
    g.sum(weighted)
}

fn eval_objective(inputs: &[Tensor<f64>], build: &BuildFn<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let obj = objective(&mut g, out)?;
    Ok(g.value(obj).item())
}

/// Compares backward gradients against central differences for every input element.
pub fn check(inputs: &[Tensor<f64>], h: f64, build: &BuildFn<'_>) -> Result<GradCheckReport> {
    let positions: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    check_at(inputs, &positions, h, build)
}

/// Like [`check`], restricted to the listed `(input, element)` positions.
pub fn check_at(
    inputs: &[Tensor<f64>],
    positions: &[(usize, usize)],
    h: f64,
    build: &BuildFn<'_>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let obj = objective(&mut g, out)?;
    g.backward(obj)?;

    let mut max_rel_err: f64 = 0.0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for &(which, e) in positions {
        let analytic = g.grad(vars[which]).map_or(0.0, |t| t.data()[e]);
        let x0 = inputs[which].data()[e];
        probe[which].data_mut()[e] = x0 + h;
        let plus = eval_objective(&probe, build)?;
        probe[which].data_mut()[e] = x0 - h;
        let minus = eval_objective(&probe, build)?;
        probe[which].data_mut()[e] = x0;
        let numeric = (plus - minus) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(analytic, numeric));
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked: positions.len(),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

/// Values with magnitude in [0.1, 1], random sign: keeps kinks at 0 out of reach of `h`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .expect("shape")
}

/// Rows whose entries are a shuffled, well-separated ladder, so the argmin is unique and stable.
fn separated_rows(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let m = *shape.last().expect("rank >= 1");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let mut data = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        let mut ladder: Vec<f64> = (0..m)
            .map(|j| j as f64 * 0.2 + rng.gen_range(0.0..0.05))
            .collect();
        ladder.shuffle(rng);
        data.extend(ladder);
    }
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize) -> Arc<SparseMatrix> {
    let mut triplets = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r == c || rng.gen_bool(0.4) {
                triplets.push((r, c, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    Arc::new(SparseMatrix::from_triplets(n, n, triplets).expect("valid"))
}

fn case(label: String, inputs: Vec<Tensor<f64>>, build: Builder) -> OpCase {
    OpCase {
        label,
        inputs,
        build,
    }
}

/// Three input configurations for `kind`.
pub fn op_cases(kind: OpKind) -> Vec<OpCase> {
    let seed = OpKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let name = kind.name();
    match kind {
        OpKind::MatMul => [
            ([2, 3].as_slice(), [3, 4]),
            (&[5, 1], [1, 2]),
            (&[2, 3, 4], [4, 2]),
        ]
        .into_iter()
        .map(|(sa, sb)| {
            case(
                format!("{name} {sa:?}x{sb:?}"),
                vec![uniform(&mut rng, sa), uniform(&mut rng, &sb)],
                Box::new(|g, v| g.matmul(v[0], v[1])),
            )
        })
        .collect(),
        OpKind::SparseMatMul => [(4, 2), (6, 3), (1, 5)]
            .into_iter()
            .map(|(n, d)| {
                let p = random_sparse(&mut rng, n);
                case(
                    format!("{name} {n}x{n} · [{n}, {d}]"),
                    vec![uniform(&mut rng, &[n, d])],
                    Box::new(move |g, v| g.sparse_matmul(&p, v[0])),
                )
            })
            .collect(),
        OpKind::Add | OpKind::Sub | OpKind::Hadamard => [
            ([3, 4].as_slice(), [3, 4].as_slice()),
            (&[2, 3, 4], &[4]),
            (&[2, 3], &[2, 3]),
        ]
        .into_iter()
        .map(|(sa, sb)| {
            let build: Builder = match kind {
                OpKind::Add => Box::new(|g, v| g.add(v[0], v[1])),
                OpKind::Sub => Box::new(|g, v| g.sub(v[0], v[1])),
                _ => Box::new(|g, v| g.hadamard(v[0], v[1])),
            };
            case(
                format!("{name} {sa:?} {sb:?}"),
                vec![uniform(&mut rng, sa), uniform(&mut rng, sb)],
                build,
            )
        })
        .collect(),
        OpKind::Scale => [([3].as_slice(), 2.5), (&[2, 3], -1.7), (&[2, 2, 2], 0.3)]
            .into_iter()
            .map(|(s, k)| {
                case(
                    format!("{name} {s:?} by {k}"),
                    vec![uniform(&mut rng, s)],
                    Box::new(move |g, v| g.scale(v[0], k)),
                )
            })
            .collect(),
        OpKind::GatherRows => [(5, 3, 5, 2), (4, 2, 3, 3), (1, 4, 1, 2)]
            .into_iter()
            .map(|(n, d, m, k)| {
                let idx: Arc<[usize]> = (0..m * k).map(|_| rng.gen_range(0..n)).collect();
                case(
                    format!("{name} [{n}, {d}] -> [{m}, {k}, {d}]"),
                    vec![uniform(&mut rng, &[n, d])],
                    Box::new(move |g, v| g.gather_rows(v[0], Arc::clone(&idx), k)),
                )
            })
            .collect(),
        OpKind::ConcatLastAxis => {
            let shapes: [Vec<Vec<usize>>; 3] = [
                vec![vec![3, 2], vec![3, 4]],
                vec![vec![2, 2, 1], vec![2, 2, 3], vec![2, 2, 2]],
                vec![vec![1, 5]],
            ];
            shapes
                .into_iter()
                .map(|parts| {
                    let inputs = parts.iter().map(|s| uniform(&mut rng, s)).collect();
                    case(
                        format!("{name} {parts:?}"),
                        inputs,
                        Box::new(|g, v| g.concat_last_axis(v)),
                    )
                })
                .collect()
        }
        OpKind::MeanAxis => [([4, 3].as_slice(), 0), (&[2, 3, 4], 1), (&[5], 0)]
            .into_iter()
            .map(|(s, axis)| {
                case(
                    format!("{name} {s:?} axis {axis}"),
                    vec![uniform(&mut rng, s)],
                    Box::new(move |g, v| g.mean_axis(v[0], axis)),
                )
            })
            .collect(),
        OpKind::LeakyRelu | OpKind::Tanh | OpKind::Sum => [[10].as_slice(), &[3, 4], &[2, 2, 3]]
            .into_iter()
            .map(|s| {
                let build: Builder = match kind {
                    OpKind::LeakyRelu => Box::new(|g, v| g.leaky_relu(v[0], 0.2)),
                    OpKind::Tanh => Box::new(|g, v| g.tanh(v[0])),
                    _ => Box::new(|g, v| g.sum(v[0])),
                };
                case(
                    format!("{name} {s:?}"),
                    vec![away_from_zero(&mut rng, s)],
                    build,
                )
            })
            .collect(),
        OpKind::L1Loss | OpKind::MseLoss => [[6].as_slice(), &[3, 4], &[2, 2, 3]]
            .into_iter()
            .map(|s| {
                let a = uniform(&mut rng, s);
                let offset = away_from_zero(&mut rng, s);
                let b = Tensor::new(
                    s.to_vec(),
                    a.data()
                        .iter()
                        .zip(offset.data())
                        .map(|(x, o)| x + o)
                        .collect(),
                )
                .expect("shape");
                let build: Builder = match kind {
                    OpKind::L1Loss => Box::new(|g, v| g.l1_loss(v[0], v[1])),
                    _ => Box::new(|g, v| g.mse_loss(v[0], v[1])),
                };
                case(format!("{name} {s:?}"), vec![a, b], build)
            })
            .collect(),
        OpKind::MinReduceLast => [[3, 5].as_slice(), &[4], &[2, 2, 3]]
            .into_iter()
            .map(|s| {
                case(
                    format!("{name} {s:?}"),
                    vec![separated_rows(&mut rng, s)],
                    Box::new(|g, v| g.min_reduce_last(v[0])),
                )
            })
            .collect(),
        OpKind::PairwiseDistance => [
            ([3, 3].as_slice(), [4, 3]),
            (&[5, 2], [1, 2]),
            (&[2, 3], [2, 3]),
        ]
        .into_iter()
        .map(|(sa, sb)| {
            case(
                format!("{name} {sa:?} {sb:?}"),
                vec![uniform(&mut rng, sa), uniform(&mut rng, &sb)],
                Box::new(|g, v| g.pairwise_distance(v[0], v[1])),
            )
        })
        .collect(),
        OpKind::Reshape => [
            ([2, 3].as_slice(), vec![3, 2]),
            (&[4], vec![2, 2]),
            (&[2, 2, 2], vec![8]),
        ]
        .into_iter()
        .map(|(s, to)| {
            let label = format!("{name} {s:?} -> {to:?}");
            case(
                label,
                vec![uniform(&mut rng, s)],
                Box::new(move |g, v| g.reshape(v[0], to.clone())),
            )
        })
        .collect(),
        OpKind::TileRows => [([3].as_slice(), 4), (&[1, 2], 3), (&[5], 1)]
            .into_iter()
            .map(|(s, n)| {
                case(
                    format!("{name} {s:?} x{n}"),
                    vec![uniform(&mut rng, s)],
                    Box::new(move |g, v| g.tile_rows(v[0], n)),
                )
            })
            .collect(),
    }
}
