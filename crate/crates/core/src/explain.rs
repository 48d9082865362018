//! Permutation-sampling Shapley attribution.
//!
//! For one tile, each sampled feature order starts from the baseline row and
//! switches features to their observed values one at a time; the change in
//! the model output is credited to the feature just switched. Every order
//! telescopes to `f(x) − f(baseline)`, so efficiency holds for any number of
//! orders, not only in the limit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hrgat::{level_embeddings, GraphInput, HrGatParams, LocalEvaluator};

/// Per-feature attribution averaged over explained tiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub names: Vec<String>,
    pub mean_abs: Vec<f64>,
    /// Explained tile indices and their per-feature values.
    pub tiles: Vec<usize>,
    pub per_tile: Vec<Vec<f64>>,
    pub permutations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub feature: usize,
    pub name: String,
    pub mean_abs_shap: f64,
}

/// Shapley values of one row from explicit feature orders.
pub fn shapley_from_orders<F>(f: &F, x: &[f64], baseline: &[f64], orders: &[Vec<usize>]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = x.len();
    if baseline.len() != d {
        return Err(Error::Shape(format!("baseline of {} for {d} features", baseline.len())));
    }
    if orders.is_empty() {
        return Err(Error::InvalidArgument("at least one permutation is required".into()));
    }
    let mut phi = vec![0.0; d];
    let f_base = f(baseline)?;
    for order in orders {
        let mut z = baseline.to_vec();
        let mut prev = f_base;
        for &j in order {
            z[j] = x[j];
            let cur = f(&z)?;
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    let m = orders.len() as f64;
    phi.iter_mut().for_each(|p| *p /= m);
    Ok(phi)
}

/// `m` uniformly random feature orders.
pub fn sample_orders(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..m)
        .map(|_| {
            let mut o: Vec<usize> = (0..d).collect();
            o.shuffle(rng);
            o
        })
        .collect()
}

/// All `d!` feature orders (Heap's algorithm); only sensible for small `d`.
pub fn all_orders(d: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..d).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; d];
    let mut i = 0;
    while i < d {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Sampled Shapley values for several rows. `rows[k]` is explained through
/// `make_eval(k)`, with orders drawn from its own seeded stream.
pub fn shapley_sampled<E, F>(
    names: &[String],
    tiles: &[usize],
    rows: &[Vec<f64>],
    baseline: &[f64],
    m: usize,
    seed: u64,
    make_eval: E,
) -> Result<Attribution>
where
    E: Fn(usize) -> Result<F> + Sync,
    F: Fn(&[f64]) -> Result<f64>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("permutation count must be positive".into()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("explained tiles"));
    }
    if rows.len() != tiles.len() {
        return Err(Error::Shape(format!("{} rows for {} tiles", rows.len(), tiles.len())));
    }
    let d = names.len();
    let per_tile = (0..rows.len())
        .into_par_iter()
        .map(|k| {
            if rows[k].len() != d {
                return Err(Error::Shape(format!("row of {} for {d} features", rows[k].len())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(tiles[k] as u64);
            let orders = sample_orders(d, m, &mut rng);
            shapley_from_orders(&make_eval(k)?, &rows[k], baseline, &orders)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_tile.len() as f64;
    let mean_abs = (0..d).map(|j| per_tile.iter().map(|p| p[j].abs()).sum::<f64>() / n).collect();
    Ok(Attribution { names: names.to_vec(), mean_abs, tiles: tiles.to_vec(), per_tile, permutations: m, seed })
}

/// Explains HR-GAT predictions at the given zoom-15 nodes. Only the node's
/// own zoom-15 features vary; neighbors and coarser zooms stay observed.
pub fn explain_hrgat(
    params: &HrGatParams,
    input: &GraphInput,
    names: &[String],
    nodes: &[usize],
    baseline: &[f64],
    m: usize,
    seed: u64,
) -> Result<Attribution> {
    let emb = level_embeddings(params, input)?;
    let evals: Vec<LocalEvaluator> = nodes.iter().map(|&i| LocalEvaluator::new(params, input, &emb, i)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = evals.iter().map(|e| e.row().to_vec()).collect();
    let evals = &evals;
    shapley_sampled(names, nodes, &rows, baseline, m, seed, |k| Ok(move |r: &[f64]| evals[k].eval(r)))
}

/// Descending mean |φ|, ties by feature name.
pub fn rank_features(attr: &Attribution, top_k: usize) -> Vec<RankedFeature> {
    let mut idx: Vec<usize> = (0..attr.names.len()).collect();
    idx.sort_by(|&a, &b| attr.mean_abs[b].total_cmp(&attr.mean_abs[a]).then_with(|| attr.names[a].cmp(&attr.names[b])));
    idx.into_iter()
        .take(top_k)
        .enumerate()
        .map(|(r, j)| RankedFeature { rank: r + 1, feature: j, name: attr.names[j].clone(), mean_abs_shap: attr.mean_abs[j] })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exact Shapley values by the subset formula.
    fn subset_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], b: &[f64]) -> Vec<f64> {
        let d = x.len();
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        let eval = |mask: usize| {
            let z: Vec<f64> = (0..d).map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] }).collect();
            f(&z)
        };
        (0..d)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0..(1usize << d) {
                    if s >> i & 1 == 1 {
                        continue;
                    }
                    let k = s.count_ones() as usize;
                    phi += fact(k) * fact(d - k - 1) / fact(d) * (eval(s | 1 << i) - eval(s));
                }
                phi
            })
            .collect()
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn heap_enumerates_every_order_once() {
        let mut o = all_orders(4);
        assert_eq!(o.len(), 24);
        o.sort();
        o.dedup();
        assert_eq!(o.len(), 24);
    }

    proptest! {
        #[test]
        fn linear_model_is_exact(d in 1usize..5, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |z: &[f64]| -> Result<f64> { Ok(0.5 + z.iter().zip(&a).map(|(z, a)| z * a).sum::<f64>()) };
            let orders = sample_orders(d, 3, &mut rng);
            let phi = shapley_from_orders(&f, &x, &b, &orders).unwrap();
            for j in 0..d {
                prop_assert!((phi[j] - a[j] * (x[j] - b[j])).abs() < 1e-9);
            }
        }

        #[test]
        fn enumeration_matches_subset_formula(d in 1usize..5, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            // nonlinear, with interactions
            let g = move |z: &[f64]| -> f64 {
                let s: f64 = z.iter().zip(&w).map(|(z, w)| z * w).sum();
                s.tanh() + z[0] * z[d - 1] + z.iter().map(|v| v * v).sum::<f64>() * 0.1
            };
            let phi = shapley_from_orders(&|z: &[f64]| Ok(g(z)), &x, &b, &all_orders(d)).unwrap();
            let want = subset_oracle(&g, &x, &b);
            for j in 0..d {
                prop_assert!((phi[j] - want[j]).abs() < 1e-9);
            }
            prop_assert!((phi.iter().sum::<f64>() - (g(&x) - g(&b))).abs() < 1e-9);
        }
    }

    #[test]
    fn null_feature_and_single_feature() {
        let f = |z: &[f64]| -> Result<f64> { Ok(2.0 * z[0] - z[2] * z[0]) };
        let attr = shapley_sampled(&names(3), &[0], &[vec![1.0, 5.0, 2.0]], &[0.0; 3], 50, 3, |_| Ok(f)).unwrap();
        assert_eq!(attr.per_tile[0][1], 0.0);
        let g = |z: &[f64]| -> Result<f64> { Ok(z[0].exp()) };
        let phi = shapley_from_orders(&g, &[1.5], &[0.2], &[vec![0]]).unwrap();
        assert_eq!(phi[0], 1.5f64.exp() - 0.2f64.exp());
    }

    #[test]
    fn duplicate_columns_share_credit() {
        let f = |z: &[f64]| -> Result<f64> { Ok((z[0] + z[1]).powi(2) + z[2]) };
        let attr = shapley_sampled(&names(3), &[0], &[vec![1.0, 1.0, 0.5]], &[0.0; 3], 4000, 11, |_| Ok(f)).unwrap();
        let p = &attr.per_tile[0];
        assert!((p[0] - p[1]).abs() < 0.1, "{p:?}");
        assert!((p.iter().sum::<f64>() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn seeded_and_ranked() {
        let f = |z: &[f64]| -> Result<f64> { Ok(z[0] * z[1] + 3.0 * z[2]) };
        let rows = vec![vec![1.0, 2.0, 1.0], vec![-1.0, 0.5, 2.0]];
        let run = |s| shapley_sampled(&names(3), &[4, 9], &rows, &[0.0; 3], 7, s, |_| Ok(f)).unwrap();
        assert_eq!(run(5), run(5));
        let attr = Attribution {
            names: vec!["b".into(), "a".into(), "c".into()],
            mean_abs: vec![1.0, 1.0, 3.0],
            tiles: vec![],
            per_tile: vec![],
            permutations: 1,
            seed: 0,
        };
        let r: Vec<usize> = rank_features(&attr, 10).iter().map(|r| r.feature).collect();
        assert_eq!(r, vec![2, 1, 0]);
        assert!(shapley_sampled(&names(3), &[0], &rows[..1], &[0.0; 3], 0, 1, |_| Ok(f)).is_err());
    }
}
