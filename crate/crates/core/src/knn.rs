//! Exact, class-partitioned k-nearest-neighbor search under cosine distance.
//!
//! Stored embeddings are unit-normalized, so `cosine_distance = 1 − ⟨a, b⟩`.
//! Neighbors at equal distance are ordered by ascending training id.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::embedding::{EmbeddingSet, ZERO_NORM};
use crate::error::{Error, Result};
use crate::io::sha256_hex;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k: usize,
}

impl KnnConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".to_string()));
        }
        Ok(Self { k })
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

/// Which training points are eligible neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassFilter {
    Equals(usize),
    /// All classes except the given one, pooled.
    NotEquals(usize),
}

impl ClassFilter {
    fn class(self) -> usize {
        match self {
            ClassFilter::Equals(c) | ClassFilter::NotEquals(c) => c,
        }
    }
}

/// A point to score. When `id` names a training point, that point is
/// excluded from its own neighbor sets.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub embedding: &'a [f64],
    pub id: Option<&'a str>,
}

impl<'a> Query<'a> {
    pub fn new(embedding: &'a [f64]) -> Self {
        Self { embedding, id: None }
    }

    pub fn with_id(embedding: &'a [f64], id: &'a str) -> Self {
        Self {
            embedding,
            id: Some(id),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `1 − ⟨a, b⟩` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    // `+ 0.0` turns a clamped `-0.0` into `+0.0`.
    (1.0 - dot(a, b)).clamp(0.0, 2.0) + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub distance: f64,
    /// Position of the training id in ascending id order; the tie-break key.
    pub rank: usize,
}

fn by_distance_then_rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.rank.cmp(&b.rank))
}

#[derive(Debug, Clone, Default)]
struct Partition {
    ids: Vec<String>,
    ranks: Vec<usize>,
    /// Row-major `len × dim` embeddings.
    data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassPartitionedIndex {
    dim: usize,
    classes: usize,
    partitions: Vec<Partition>,
    positions: HashMap<String, (usize, usize)>,
    ids_digest: String,
}

impl ClassPartitionedIndex {
    pub fn build(train: &EmbeddingSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTraining);
        }
        let dim = train.dim();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.sort_by(|&a, &b| train.examples()[a].id.cmp(&train.examples()[b].id));

        let mut partitions = vec![Partition::default(); train.classes()];
        let mut positions = HashMap::with_capacity(train.len());
        let mut digest_input = String::new();
        for (rank, &i) in order.iter().enumerate() {
            let ex = &train.examples()[i];
            let norm = dot(&ex.embedding, &ex.embedding).sqrt();
            if (norm - 1.0).abs() > 1e-9 || norm < ZERO_NORM {
                return Err(Error::InvalidConfig(format!(
                    "training example {} is not unit-normalized (norm {norm})",
                    ex.id
                )));
            }
            let part = &mut partitions[ex.label];
            positions.insert(ex.id.clone(), (ex.label, part.ids.len()));
            part.ids.push(ex.id.clone());
            part.ranks.push(rank);
            part.data.extend_from_slice(&ex.embedding);
            digest_input.push_str(&ex.id);
            digest_input.push('\n');
        }
        Ok(Self {
            dim,
            classes: train.classes(),
            partitions,
            positions,
            ids_digest: sha256_hex(digest_input.as_bytes()),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.partitions.iter().map(|p| p.ids.len()).collect()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Ids stored for `class`, in ascending order.
    pub fn class_ids(&self, class: usize) -> &[String] {
        &self.partitions[class].ids
    }

    /// Identifies the training ids together with `k`; calibration tables
    /// carry it so they cannot be paired with a different index.
    pub fn fingerprint(&self, k: usize) -> String {
        sha256_hex(format!("k={k}\n{}", self.ids_digest).as_bytes())[..32].to_string()
    }

    fn check_query(&self, query: &Query<'_>) -> Result<()> {
        if query.embedding.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: query.embedding.len(),
            });
        }
        Ok(())
    }

    /// The `k` nearest points of every class, each list sorted by
    /// (distance, id).
    pub fn nearest_per_class(&self, query: &Query<'_>, k: usize) -> Result<ClassNeighbors> {
        self.check_query(query)?;
        let skip = query.id.and_then(|id| self.positions.get(id)).copied();
        let per_class = self
            .partitions
            .iter()
            .enumerate()
            .map(|(class, part)| {
                let mut found: Vec<Neighbor> = part
                    .data
                    .chunks_exact(self.dim.max(1))
                    .take(part.ids.len())
                    .zip(&part.ranks)
                    .enumerate()
                    .filter(|(pos, _)| skip != Some((class, *pos)))
                    .map(|(_, (row, &rank))| Neighbor {
                        distance: cosine_distance(query.embedding, row),
                        rank,
                    })
                    .collect();
                if found.len() > k {
                    found.select_nth_unstable_by(k - 1, by_distance_then_rank);
                    found.truncate(k);
                }
                found.sort_by(by_distance_then_rank);
                found
            })
            .collect();
        Ok(ClassNeighbors { k, per_class })
    }

    /// Mean cosine distance from `query` to its `k` nearest training points
    /// passing `filter`; all of them when fewer than `k` qualify.
    pub fn avg_knn_dist(&self, query: &Query<'_>, filter: ClassFilter, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".to_string()));
        }
        if filter.class() >= self.classes {
            return Err(Error::InvalidConfig(format!(
                "class {} outside [0, {})",
                filter.class(),
                self.classes
            )));
        }
        self.nearest_per_class(query, k)?.avg_dist(filter)
    }
}

/// Per-class k-nearest lists for one query.
#[derive(Debug, Clone)]
pub struct ClassNeighbors {
    k: usize,
    per_class: Vec<Vec<Neighbor>>,
}

impl ClassNeighbors {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn class(&self, class: usize) -> &[Neighbor] {
        &self.per_class[class]
    }

    /// The selected neighbors for `filter`, sorted by (distance, id).
    pub fn select(&self, filter: ClassFilter) -> Vec<Neighbor> {
        match filter {
            ClassFilter::Equals(c) => self.per_class[c].clone(),
            ClassFilter::NotEquals(c) => {
                let mut pooled: Vec<Neighbor> = self
                    .per_class
                    .iter()
                    .enumerate()
                    .filter(|(other, _)| *other != c)
                    .flat_map(|(_, list)| list.iter().copied())
                    .collect();
                pooled.sort_by(by_distance_then_rank);
                pooled.truncate(self.k);
                pooled
            }
        }
    }

    pub fn avg_dist(&self, filter: ClassFilter) -> Result<f64> {
        let chosen = self.select(filter);
        if chosen.is_empty() {
            return Err(match filter {
                ClassFilter::Equals(class) => Error::EmptyClass { class },
                ClassFilter::NotEquals(class) => Error::NoOtherClass { class },
            });
        }
        let sum: f64 = chosen.iter().map(|n| n.distance).sum();
        Ok(sum / chosen.len() as f64)
    }
}
