//! Brute-force reference implementations shared by the integration tests.
//!
//! Nothing here calls into the index or scoring code: distances come from a
//! plain full scan and every count is a linear pass.

#![allow(dead_code)]

use cpembed_core::{EmbeddingSet, LabeledExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    (1.0 - s).clamp(0.0, 2.0)
}

/// Full distance table from `query` to every training example:
/// (distance, id, label).
pub fn distance_table(train: &EmbeddingSet, query: &[f64]) -> Vec<(f64, String, usize)> {
    train
        .examples()
        .iter()
        .map(|ex| (distance(query, &ex.embedding), ex.id.clone(), ex.label))
        .collect()
}

/// Mean of the `k` smallest distances among rows passing `keep`, ordered by
/// (distance, id). `None` when nothing passes.
pub fn mean_knn(
    table: &[(f64, String, usize)],
    k: usize,
    keep: impl Fn(&(f64, String, usize)) -> bool,
) -> Option<f64> {
    let mut rows: Vec<&(f64, String, usize)> = table.iter().filter(|r| keep(r)).collect();
    if rows.is_empty() {
        return None;
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = k.min(rows.len());
    Some(rows[..take].iter().map(|r| r.0).sum::<f64>() / take as f64)
}

/// Same-class and pooled other-class k-NN means, skipping `self_id`.
pub fn knn_means(
    train: &EmbeddingSet,
    query: &[f64],
    self_id: Option<&str>,
    class: usize,
    k: usize,
) -> (Option<f64>, Option<f64>) {
    let table = distance_table(train, query);
    let not_self = |r: &(f64, String, usize)| self_id != Some(r.1.as_str());
    let same = mean_knn(&table, k, |r| r.2 == class && not_self(r));
    let other = mean_knn(&table, k, |r| r.2 != class && not_self(r));
    (same, other)
}

pub fn ratio(same: f64, other: f64) -> f64 {
    if other == 0.0 {
        if same == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        same / other
    }
}

pub fn score(train: &EmbeddingSet, query: &[f64], class: usize, k: usize) -> Option<f64> {
    match knn_means(train, query, None, class, k) {
        (Some(s), Some(o)) => Some(ratio(s, o)),
        _ => None,
    }
}

/// `(#{α_i ≥ α} + 1) / (n + 1)` by a linear count.
pub fn p_value(alpha: f64, cal: &[f64]) -> f64 {
    let count = cal.iter().filter(|&&a| a >= alpha).count();
    (count + 1) as f64 / (cal.len() + 1) as f64
}

/// Hand tally of the four metrics from explicit prediction sets.
pub struct Tally {
    pub coverage: f64,
    pub avg_set_size: f64,
    pub correct_efficiency: f64,
    pub top1_accuracy: f64,
}

pub fn tally(p_rows: &[Vec<f64>], alpha_rows: &[Vec<f64>], truth: &[usize], eps: f64) -> Tally {
    let n = truth.len() as f64;
    let (mut hit, mut size, mut single, mut top) = (0usize, 0usize, 0usize, 0usize);
    for ((p, a), &y) in p_rows.iter().zip(alpha_rows).zip(truth) {
        let set: Vec<usize> = (0..p.len()).filter(|&c| p[c] > eps).collect();
        if set.contains(&y) {
            hit += 1;
            if set.len() == 1 {
                single += 1;
            }
        }
        size += set.len();
        let mut best = 0;
        for c in 1..p.len() {
            if p[c] > p[best] || (p[c] == p[best] && a[c] < a[best]) {
                best = c;
            }
        }
        if best == y {
            top += 1;
        }
    }
    Tally {
        coverage: hit as f64 / n,
        avg_set_size: size as f64 / n,
        correct_efficiency: single as f64 / n,
        top1_accuracy: top as f64 / n,
    }
}

/// Random unit vectors in `classes` loose clusters. A few exact duplicates
/// are planted to exercise distance ties.
pub fn random_set(seed: u64, n: usize, dim: usize, classes: usize, prefix: &str) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let mut examples: Vec<LabeledExample> = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < classes { i } else { rng.random_range(0..classes) };
        let embedding = if i >= classes && rng.random::<f64>() < 0.05 {
            examples[rng.random_range(0..i)].embedding.clone()
        } else {
            let v: Vec<f64> = centers[label]
                .iter()
                .map(|c| c + 0.4 * (rng.random::<f64>() - 0.5))
                .collect();
            unit(&v)
        };
        examples.push(LabeledExample {
            id: format!("{prefix}{i:05}"),
            group: None,
            label,
            embedding,
        });
    }
    EmbeddingSet::new(dim, classes, examples).unwrap()
}
