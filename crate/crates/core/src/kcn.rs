//! Local branch: pointwise feature extraction, K nearest neighbours in feature
//! space, parallel neighbour/center transforms, then concatenation and a mean
//! over the neighbour axis.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gemm_acc, sq_dist, Bound, Dense, Graph, MatView, ParamStore, Real, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::LEAKY_SLOPE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KcnConfig {
    pub k: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub conv_dim: usize,
}

impl Default for KcnConfig {
    fn default() -> Self {
        Self {
            k: 8,
            hidden_dim: 32,
            feature_dim: 64,
            conv_dim: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KcnParams {
    pub config: KcnConfig,
    pub extract_hidden: Dense,
    pub extract_out: Dense,
    pub neighbor: Dense,
    pub center: Dense,
}

impl KcnParams {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        config: KcnConfig,
    ) -> Self {
        let KcnConfig {
            hidden_dim,
            feature_dim,
            conv_dim,
            ..
        } = config;
        Self {
            config,
            extract_hidden: Dense::init(
                store,
                rng,
                &format!("{prefix}.extract.0"),
                3,
                hidden_dim,
                1.0,
            ),
            extract_out: Dense::init(
                store,
                rng,
                &format!("{prefix}.extract.1"),
                hidden_dim,
                feature_dim,
                1.0,
            ),
            neighbor: Dense::init(
                store,
                rng,
                &format!("{prefix}.neighbor"),
                feature_dim,
                conv_dim,
                1.0,
            ),
            center: Dense::init(
                store,
                rng,
                &format!("{prefix}.center"),
                feature_dim,
                conv_dim,
                1.0,
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.conv_dim
    }
}

/// Row-major `N×K` neighbour indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnIndices {
    pub n: usize,
    pub k: usize,
    pub indices: Arc<[usize]>,
}

impl KnnIndices {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Pointwise two-layer transform `[N, 3] -> [N, d_f]`.
pub fn cnn_features<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &KcnParams,
    vertices: Var,
) -> Result<Var> {
    let h = params.extract_hidden.apply(g, bound, vertices)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE)?;
    params.extract_out.apply(g, bound, h)
}

/// For every row, the `k` nearest other rows by Euclidean distance, ordered by
/// (distance, index).
///
/// Distances come from a Gram matrix first; only rows whose bracket
/// `[approx − err, approx + err]` can reach the k-th best upper bound are
/// re-measured directly, so the result equals a brute-force search.
pub fn knn_indices<T: Real>(features: &Tensor<T>, k: usize) -> Result<KnnIndices> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(Error::contract(
            "knn_indices",
            format!("expected [N, d], got {s:?}"),
        ));
    }
    let (n, d) = (s[0], s[1]);
    if k == 0 || k >= n {
        return Err(Error::contract(
            "knn_indices",
            format!("k = {k} needs 1 <= k <= N - 1 with N = {n}"),
        ));
    }
    let f = features.data();
    let row = |i: usize| &f[i * d..(i + 1) * d];
    let mut out = Vec::with_capacity(n * k);
    if !f.iter().all(|x| x.is_finite()) {
        for i in 0..n {
            let cand = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(row(i), row(j)), j))
                .collect();
            out.extend(nearest(cand, k));
        }
        return Ok(KnnIndices {
            n,
            k,
            indices: out.into(),
        });
    }

    let norms: Vec<T> = (0..n)
        .map(|i| row(i).iter().map(|&x| x * x).sum())
        .collect();
    let mut gram = vec![T::zero(); n * n];
    gemm_acc(MatView::new(f, n, d), MatView::new(f, n, d).t(), &mut gram);
    let gamma = T::lit(8.0 * (d as f64 + 2.0)) * T::epsilon();
    let two = T::lit(2.0);
    let tiny = T::min_positive_value();
    let bracket = |i: usize, j: usize| {
        let approx = norms[i] + norms[j] - two * gram[i * n + j];
        let err = gamma * (norms[i] + norms[j]) + tiny;
        (approx - err, approx + err)
    };
    let mut best: Vec<T> = Vec::with_capacity(k + 1);
    for i in 0..n {
        // k smallest upper bounds, ascending
        best.clear();
        for j in (0..n).filter(|&j| j != i) {
            let (_, hi) = bracket(i, j);
            if best.len() == k && hi >= best[k - 1] {
                continue;
            }
            let at = best.partition_point(|&b| b <= hi);
            best.insert(at, hi);
            best.truncate(k);
        }
        let tau = best[k - 1];
        let cand = (0..n)
            .filter(|&j| j != i && bracket(i, j).0 <= tau)
            .map(|j| (sq_dist(row(i), row(j)), j))
            .collect();
        out.extend(nearest(cand, k));
    }
    Ok(KnnIndices {
        n,
        k,
        indices: out.into(),
    })
}

fn nearest<T: Real>(mut cand: Vec<(T, usize)>, k: usize) -> impl Iterator<Item = usize> {
    let order = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand.into_iter().map(|(_, j)| j)
}

/// Local features `[N, 2·d_h]`: `[mean_k F_nei(F(N(q))) | F_center(F(q))]`.
///
/// The neighbour transform is pointwise, so it is applied once per vertex and
/// the results gathered, which equals gathering features first and transforming
/// each neighbour copy. The center half is constant over the neighbour axis, so
/// its mean is itself. `frozen` reuses indices instead of recomputing them.
pub fn kcn_forward<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &KcnParams,
    vertices: Var,
    frozen: Option<&KnnIndices>,
) -> Result<(Var, KnnIndices)> {
    let features = cnn_features(g, bound, params, vertices)?;
    let n = g.shape(features)[0];
    let knn = match frozen {
        Some(idx) if idx.n == n && idx.k == params.config.k => idx.clone(),
        Some(idx) => {
            return Err(Error::contract(
                "kcn_forward",
                format!(
                    "frozen indices {}x{} do not fit N = {n}, K = {}",
                    idx.n, idx.k, params.config.k
                ),
            ))
        }
        None => knn_indices(g.value(features), params.config.k)?,
    };
    let nei = params.neighbor.apply(g, bound, features)?;
    let nei = g.leaky_relu(nei, LEAKY_SLOPE)?;
    let gathered = g.gather_rows(nei, Arc::clone(&knn.indices), knn.k)?;
    let nei_mean = g.mean_axis(gathered, 1)?;
    let ctr = params.center.apply(g, bound, features)?;
    let ctr = g.leaky_relu(ctr, LEAKY_SLOPE)?;
    let local = g.concat_last_axis(&[nei_mean, ctr])?;
    Ok((local, knn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn small_config() -> KcnConfig {
        KcnConfig {
            k: 3,
            hidden_dim: 5,
            feature_dim: 4,
            conv_dim: 3,
        }
    }

    fn setup(seed: u64, cfg: KcnConfig) -> (ParamStore<f64>, KcnParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = KcnParams::init(&mut store, &mut rng, "kcn", cfg);
        (store, p)
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dense_row(store: &ParamStore<f64>, d: &Dense, x: &[f64]) -> Vec<f64> {
        let w = store.get(d.weight).value.data();
        let b = store.get(d.bias).value.data();
        (0..d.d_out)
            .map(|o| b[o] + (0..d.d_in).map(|i| x[i] * w[i * d.d_out + o]).sum::<f64>())
            .collect()
    }

    fn leaky(v: Vec<f64>) -> Vec<f64> {
        v.into_iter()
            .map(|x| if x > 0.0 { x } else { 0.2 * x })
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let (mut store, p) = setup(1, small_config());
        p.extract_hidden.zero(&mut store);
        p.extract_out.zero(&mut store);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let v = g.constant(t(&[4, 3], vec![0.3; 12]));
        let f = cnn_features(&mut g, &b, &p, v).unwrap();
        assert!(g.value(f).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn features_match_per_row_oracle_and_are_equivariant() {
        let (store, p) = setup(2, small_config());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_points(&mut rng, 6);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let v = g.constant(t(&[6, 3], pts.clone()));
        let f = cnn_features(&mut g, &b, &p, v).unwrap();
        let fv = g.value(f).data().to_vec();
        for i in 0..6 {
            let h = leaky(dense_row(&store, &p.extract_hidden, &pts[i * 3..i * 3 + 3]));
            let o = dense_row(&store, &p.extract_out, &h);
            for (a, e) in fv[i * 4..i * 4 + 4].iter().zip(&o) {
                assert!((a - e).abs() < 1e-10);
            }
        }
        // reversed row order permutes the output rows identically
        let rev: Vec<f64> = pts.chunks(3).rev().flatten().copied().collect();
        let v2 = g.constant(t(&[6, 3], rev));
        let f2 = cnn_features(&mut g, &b, &p, v2).unwrap();
        let f2v = g.value(f2).data();
        for i in 0..6 {
            assert_eq!(&f2v[i * 4..i * 4 + 4], &fv[(5 - i) * 4..(5 - i) * 4 + 4]);
        }
    }

    #[test]
    fn knn_collinear_points() {
        let f = t(&[4, 1], vec![0.0, 1.0, 2.0, 4.0]);
        let knn = knn_indices(&f, 2).unwrap();
        assert_eq!(knn.row(0), &[1, 2]);
        assert_eq!(knn.row(3), &[2, 1]);
        // brute force: all pairwise distances, sorted
        for i in 0..4 {
            let mut all: Vec<(f64, usize)> = (0..4)
                .filter(|&j| j != i)
                .map(|j| ((f.data()[i] - f.data()[j]).abs(), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<usize> = all.iter().take(2).map(|p| p.1).collect();
            assert_eq!(knn.row(i), &expect[..]);
        }
    }

    #[test]
    fn knn_degenerate_and_ties() {
        let f = t(&[4, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 5.0, 5.0]);
        let knn = knn_indices(&f, 3).unwrap();
        for i in 0..4 {
            let mut row = knn.row(i).to_vec();
            row.sort();
            let others: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(row, others);
        }
        // rows 0 and 2 coincide: each picks the other first, never itself
        assert_eq!(knn_indices(&f, 1).unwrap().row(0), &[2]);
        assert_eq!(knn_indices(&f, 1).unwrap().row(2), &[0]);
        let dup = t(&[3, 1], vec![1.0, 1.0, 1.0]);
        assert_eq!(knn_indices(&dup, 1).unwrap().row(2), &[0]);
        assert!(knn_indices(&f, 4).is_err());
    }

    /// Literal loop over every vertex and neighbour: gather, transform each
    /// neighbour copy, concatenate with the center transform, average over K.
    fn loop_oracle(
        store: &ParamStore<f64>,
        p: &KcnParams,
        pts: &[f64],
        knn: &KnnIndices,
    ) -> Vec<f64> {
        let n = pts.len() / 3;
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let h = leaky(dense_row(store, &p.extract_hidden, &pts[i * 3..i * 3 + 3]));
                dense_row(store, &p.extract_out, &h)
            })
            .collect();
        let dh = p.config.conv_dim;
        let mut out = Vec::new();
        for (i, fi) in feats.iter().enumerate() {
            let ctr = leaky(dense_row(store, &p.center, fi));
            let mut acc = vec![0.0; 2 * dh];
            for &j in knn.row(i) {
                let nei = leaky(dense_row(store, &p.neighbor, &feats[j]));
                let cat: Vec<f64> = nei.iter().chain(&ctr).copied().collect();
                for (a, c) in acc.iter_mut().zip(cat) {
                    *a += c;
                }
            }
            out.extend(acc.into_iter().map(|a| a / knn.k as f64));
        }
        out
    }

    #[test]
    fn kcn_forward_matches_loop_oracle() {
        // N = K + 1: every vertex sees all the others
        let cfg = small_config();
        let (store, p) = setup(4, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [cfg.k + 1, 9] {
            let pts = random_points(&mut rng, n);
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let v = g.constant(t(&[n, 3], pts.clone()));
            let (local, knn) = kcn_forward(&mut g, &b, &p, v, None).unwrap();
            assert_eq!(g.shape(local), &[n, 2 * cfg.conv_dim]);
            let expect = loop_oracle(&store, &p, &pts, &knn);
            for (a, e) in g.value(local).data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-10, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn zero_neighbor_weights_zero_first_half() {
        let cfg = small_config();
        let (mut store, p) = setup(6, cfg);
        p.neighbor.zero(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 7);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let v = g.constant(t(&[7, 3], pts));
        let (local, _) = kcn_forward(&mut g, &b, &p, v, None).unwrap();
        let dh = cfg.conv_dim;
        for row in g.value(local).data().chunks(2 * dh) {
            assert!(row[..dh].iter().all(|&x| x == 0.0));
            assert!(row[dh..].iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn locality_with_frozen_indices() {
        let cfg = small_config();
        let (store, p) = setup(8, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10;
        let pts = random_points(&mut rng, n);
        let run = |pts: &[f64], frozen: Option<&KnnIndices>| {
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let v = g.constant(t(&[n, 3], pts.to_vec()));
            let (local, knn) = kcn_forward(&mut g, &b, &p, v, frozen).unwrap();
            (g.value(local).data().to_vec(), knn)
        };
        let (base, knn) = run(&pts, None);
        let w = 2 * cfg.conv_dim;
        for j in 0..n {
            let mut moved = pts.clone();
            moved[j * 3] += 0.37;
            let (out, _) = run(&moved, Some(&knn));
            for i in 0..n {
                let changed = out[i * w..(i + 1) * w] != base[i * w..(i + 1) * w];
                let may_change = i == j || knn.row(i).contains(&j);
                assert!(
                    !changed || may_change,
                    "vertex {i} changed after moving {j}"
                );
            }
        }
    }

    fn brute_force<T: Real>(f: &Tensor<T>, k: usize) -> Vec<usize> {
        let (n, d) = (f.shape()[0], f.shape()[1]);
        let row = |i: usize| &f.data()[i * d..(i + 1) * d];
        let mut out = Vec::new();
        for i in 0..n {
            let mut c: Vec<(T, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(row(i), row(j)), j))
                .collect();
            c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            out.extend(c[..k].iter().map(|p| p.1));
        }
        out
    }

    #[test]
    fn screened_search_equals_brute_force_under_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (offset, jitter) in [(0.0f32, 1.0f32), (1e3, 1e-2), (1e4, 1e-3), (50.0, 0.0)] {
            let (n, d) = (60, 16);
            let data: Vec<f32> = (0..n * d)
                .map(|c| offset * (1 + c % 3) as f32 + jitter * rng.gen_range(-1.0..1.0))
                .collect();
            let f = Tensor::new(vec![n, d], data).unwrap();
            for k in [1, 5, 20] {
                let got = knn_indices(&f, k).unwrap();
                assert_eq!(
                    &got.indices[..],
                    &brute_force(&f, k)[..],
                    "offset {offset} k {k}"
                );
            }
        }
    }

    #[test]
    fn knn_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = t(
            &[30, 4],
            (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        assert_eq!(knn_indices(&f, 5).unwrap(), knn_indices(&f, 5).unwrap());
    }

    #[test]
    fn gradient_check_with_frozen_indices() {
        let cfg = small_config();
        let (store, p) = setup(10, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let pts = t(&[n, 3], random_points(&mut rng, n));
        let knn = {
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let v = g.constant(pts.clone());
            kcn_forward(&mut g, &b, &p, v, None).unwrap().1
        };
        let mut inputs = vec![pts];
        inputs.extend(store.iter().map(|q| q.value.clone()));
        let build = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
            let b = Bound::from_vars(vars[1..].to_vec());
            Ok(kcn_forward(g, &b, &p, vars[0], Some(&knn))?.0)
        };
        let report = gradcheck::check(&inputs, 1e-5, &build).unwrap();
        assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
    }
}
