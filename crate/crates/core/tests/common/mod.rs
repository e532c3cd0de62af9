//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsm_core::ensemble::{PredictionRow, PredictionSet};
use tsm_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Index-remap oracle for the temporal shift, one output element at a time.
pub fn naive_shift(x: &Tensor<f64>, t: usize, fold_div: usize) -> Tensor<f64> {
    let s = x.shape();
    let (nt, c, h, w) = (s[0], s[1], s[2], s[3]);
    let f = c / fold_div;
    let at = |n: usize, tt: usize, ch: usize, y: usize, xx: usize| {
        x.data()[(((n * t + tt) * c + ch) * h + y) * w + xx]
    };
    let mut out = Tensor::zeros(s);
    for n in 0..nt / t {
        for tt in 0..t {
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let v = if ch < f {
                            if tt + 1 < t {
                                at(n, tt + 1, ch, y, xx)
                            } else {
                                0.0
                            }
                        } else if ch < 2 * f {
                            if tt > 0 {
                                at(n, tt - 1, ch, y, xx)
                            } else {
                                0.0
                            }
                        } else {
                            at(n, tt, ch, y, xx)
                        };
                        out.data_mut()[(((n * t + tt) * c + ch) * h + y) * w + xx] = v;
                    }
                }
            }
        }
    }
    out
}

/// Random probability rows over `ids`.
pub fn random_predictions(ids: &[String], classes: usize, rng: &mut impl Rng) -> PredictionSet {
    let rows = ids
        .iter()
        .map(|id| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            PredictionRow {
                id: id.clone(),
                probs: raw.into_iter().map(|v| v / total).collect(),
            }
        })
        .collect();
    PredictionSet::new(rows).unwrap()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i:03}")).collect()
}

pub fn random_labels(ids: &[String], classes: usize, rng: &mut impl Rng) -> HashMap<String, usize> {
    ids.iter()
        .map(|id| (id.clone(), rng.random_range(0..classes)))
        .collect()
}

/// Weighted sum computed element by element, normalized per row.
pub fn naive_ensemble(members: &[&PredictionSet], weights: &[f64]) -> Vec<Vec<f64>> {
    let k = members[0].rows[0].probs.len();
    let mut out = Vec::new();
    for row in &members[0].rows {
        let mut acc = vec![0.0; k];
        for (m, w) in members.iter().zip(weights) {
            let other = m.rows.iter().find(|o| o.id == row.id).unwrap();
            for (a, p) in acc.iter_mut().zip(&other.probs) {
                *a += w * p;
            }
        }
        let total: f64 = acc.iter().sum();
        out.push(acc.into_iter().map(|v| v / total).collect());
    }
    out
}

/// Accuracy with ranks counted directly: the label is in the top k when
/// fewer than k classes beat it (ties go to the lower class index).
pub fn naive_topk(rows: &[(String, Vec<f64>)], labels: &HashMap<String, usize>, k: usize) -> f64 {
    let hits = rows
        .iter()
        .filter(|(id, p)| {
            let y = labels[id];
            let better = (0..p.len())
                .filter(|&c| p[c] > p[y] || (p[c] == p[y] && c < y))
                .count();
            better < k
        })
        .count();
    hits as f64 / rows.len() as f64
}

/// Independent grid search: enumerate integer tuples with nested ranges,
/// score every point, then select the best by (top1, top5, -weights).
pub fn naive_search(
    members: &[&PredictionSet],
    labels: &HashMap<String, usize>,
    step: f64,
) -> (Vec<f64>, f64, f64) {
    let ticks = (1.0 / step).round() as usize;
    let n = members.len();
    let mut points: Vec<Vec<usize>> = Vec::new();
    let total = (ticks + 1).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut tuple = Vec::with_capacity(n);
        for _ in 0..n {
            tuple.push(c % (ticks + 1));
            c /= ticks + 1;
        }
        tuple.reverse();
        if tuple.iter().sum::<usize>() == ticks {
            points.push(tuple);
        }
    }
    let mut scored: Vec<(Vec<usize>, f64, f64)> = points
        .into_iter()
        .map(|p| {
            let w: Vec<f64> = p.iter().map(|&c| c as f64 / ticks as f64).collect();
            let fused = naive_ensemble(members, &w);
            let rows: Vec<(String, Vec<f64>)> = members[0]
                .rows
                .iter()
                .map(|r| r.id.clone())
                .zip(fused)
                .collect();
            (
                p,
                naive_topk(&rows, labels, 1),
                naive_topk(&rows, labels, 5),
            )
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(b.2.partial_cmp(&a.2).unwrap())
            .then(a.0.cmp(&b.0))
    });
    let (p, t1, t5) = scored.swap_remove(0);
    (p.iter().map(|&c| c as f64 / ticks as f64).collect(), t1, t5)
}

/// Five videos over six classes with the true label at ranks 1, 2, 1, 5 and
/// 6 respectively: top-1 = 2/5, top-5 = 4/5.
pub fn five_video_case() -> (PredictionSet, HashMap<String, usize>) {
    let rows = vec![
        ("a", vec![0.50, 0.10, 0.10, 0.10, 0.10, 0.10], 0),
        ("b", vec![0.40, 0.30, 0.10, 0.10, 0.05, 0.05], 1),
        ("c", vec![0.05, 0.05, 0.60, 0.10, 0.10, 0.10], 2),
        ("d", vec![0.30, 0.25, 0.20, 0.15, 0.06, 0.04], 4),
        ("e", vec![0.30, 0.25, 0.20, 0.15, 0.06, 0.04], 5),
    ];
    let labels = rows.iter().map(|(id, _, y)| (id.to_string(), *y)).collect();
    let set = PredictionSet::new(
        rows.into_iter()
            .map(|(id, probs, _)| PredictionRow {
                id: id.into(),
                probs,
            })
            .collect(),
    )
    .unwrap();
    (set, labels)
}
