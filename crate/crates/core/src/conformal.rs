//! Split conformal prediction with a k-NN distance-ratio nonconformity
//! score.
//!
//! For an embedding `u` and candidate label `y`:
//!
//! ```text
//! α(u, y) = mean dist to k nearest of class y
//!         / mean dist to k nearest of all other classes (pooled)
//! ```
//!
//! Calibration scores every calibration example under its true label. A
//! test p-value for label `y` is `(#{α_i ≥ α(u, y)} + 1) / (n + 1)`, and
//! the prediction set at significance `ε` keeps every label with `p > ε`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io;
use crate::knn::{ClassFilter, ClassNeighbors, ClassPartitionedIndex, Query};
use crate::split::shared_ids;

/// Score assigned when the other-class distance is zero but the same-class
/// distance is not. Orders above every finite score.
pub const MAX_SCORE: f64 = f64::INFINITY;

/// Ratio of same-class to other-class mean distance, with the conventions
/// `0/0 = 1` and `x/0 = MAX_SCORE` for `x > 0`.
pub fn distance_ratio(same: f64, other: f64) -> f64 {
    if other == 0.0 {
        if same == 0.0 {
            1.0
        } else {
            MAX_SCORE
        }
    } else {
        same / other
    }
}

fn score_from_neighbors(neighbors: &ClassNeighbors, class: usize) -> Result<f64> {
    let same = neighbors.avg_dist(ClassFilter::Equals(class))?;
    let other = neighbors.avg_dist(ClassFilter::NotEquals(class))?;
    Ok(distance_ratio(same, other))
}

pub fn nonconformity(
    query: &Query<'_>,
    class: usize,
    index: &ClassPartitionedIndex,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".to_string()));
    }
    if class >= index.classes() {
        return Err(Error::InvalidConfig(format!(
            "class {class} outside [0, {})",
            index.classes()
        )));
    }
    let neighbors = index.nearest_per_class(query, k)?;
    score_from_neighbors(&neighbors, class)
}

/// Sorted calibration scores together with the `k` and index fingerprint
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    scores: Vec<f64>,
    k: usize,
    fingerprint: String,
}

impl CalibrationTable {
    pub fn new(mut scores: Vec<f64>, k: usize, fingerprint: impl Into<String>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "calibration score {bad} is not a nonnegative number"
            )));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self {
            scores,
            k,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Number of calibration scores `≥ alpha`.
    pub fn count_at_least(&self, alpha: f64) -> usize {
        self.scores.len() - self.scores.partition_point(|s| *s < alpha)
    }

    fn count_greater(&self, alpha: f64) -> usize {
        self.scores.len() - self.scores.partition_point(|s| *s <= alpha)
    }

    pub fn ensure_matches(&self, index: &ClassPartitionedIndex) -> Result<()> {
        let expected = index.fingerprint(self.k);
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                table: self.fingerprint.clone(),
                index: expected,
            });
        }
        Ok(())
    }

    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# k={}", self.k);
        let _ = writeln!(out, "# fingerprint={}", self.fingerprint);
        let _ = writeln!(out, "# n={}", self.scores.len());
        out.push_str("alpha\n");
        for s in &self.scores {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    pub fn parse_csv(path: &Path, text: &str) -> Result<Self> {
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut k = None;
        let mut fingerprint = None;
        let mut n = None;
        let mut header_seen = false;
        let mut scores = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let Some((key, value)) = comment.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "k" => {
                        k = Some(value.parse::<usize>().map_err(|_| {
                            malformed(line, format!("invalid k {value:?}"))
                        })?)
                    }
                    "fingerprint" => fingerprint = Some(value.to_string()),
                    "n" => {
                        n = Some(value.parse::<usize>().map_err(|_| {
                            malformed(line, format!("invalid n {value:?}"))
                        })?)
                    }
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if trimmed != "alpha" {
                    return Err(malformed(line, "expected header `alpha`".to_string()));
                }
                header_seen = true;
                continue;
            }
            let v: f64 = trimmed
                .parse()
                .map_err(|_| malformed(line, format!("invalid score {trimmed:?}")))?;
            if v.is_nan() || v < 0.0 {
                return Err(malformed(line, format!("invalid score {trimmed:?}")));
            }
            scores.push(v);
        }
        let k = k.ok_or_else(|| malformed(0, "missing `# k=` line".to_string()))?;
        let fingerprint =
            fingerprint.ok_or_else(|| malformed(0, "missing `# fingerprint=` line".to_string()))?;
        if let Some(n) = n {
            if n != scores.len() {
                return Err(malformed(
                    0,
                    format!("header declares n={n} but {} scores follow", scores.len()),
                ));
            }
        }
        Self::new(scores, k, fingerprint)
    }

    pub fn save(&self, path: &Path, comments: &[String]) -> Result<()> {
        io::write_atomic(path, self.to_csv(comments).as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_csv(path, &io::read_to_string(path)?)
    }
}

/// Scores every calibration example under its true label.
pub fn calibrate(
    cal: &EmbeddingSet,
    index: &ClassPartitionedIndex,
    k: usize,
    exec: Execution,
) -> Result<CalibrationTable> {
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(id) = cal
        .examples()
        .iter()
        .find(|ex| index.contains_id(&ex.id))
    {
        return Err(Error::Leakage { id: id.id.clone() });
    }
    let scores = exec.try_map(cal.examples(), |ex| {
        nonconformity(&Query::new(&ex.embedding), ex.label, index, k).map_err(|e| {
            Error::Scoring {
                id: ex.id.clone(),
                source: Box::new(e),
            }
        })
    })?;
    CalibrationTable::new(scores, k, index.fingerprint(k))
}

/// Checks id-disjointness of a training and a calibration set.
pub fn ensure_disjoint(train: &EmbeddingSet, cal: &EmbeddingSet) -> Result<()> {
    match shared_ids(cal, train).first() {
        Some(id) => Err(Error::Leakage { id: id.to_string() }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PValueMode {
    /// Ties count fully toward the numerator.
    #[default]
    Deterministic,
    /// Smoothed p-values: ties weighted by a uniform draw.
    Randomized { seed: u64 },
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn p_value(alpha: f64, table: &CalibrationTable, mode: PValueMode) -> f64 {
    let n = table.len() as f64;
    match mode {
        PValueMode::Deterministic => (table.count_at_least(alpha) + 1) as f64 / (n + 1.0),
        PValueMode::Randomized { seed } => {
            let greater = table.count_greater(alpha);
            let ties = table.count_at_least(alpha) - greater;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Uniform on (0, 1].
            let u = 1.0 - rng.random::<f64>();
            (greater as f64 + u * (ties + 1) as f64) / (n + 1.0)
        }
    }
}

/// Per-class p-values for one test point, with the scores behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueRow {
    pub p_values: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl PValueRow {
    pub fn classes(&self) -> usize {
        self.p_values.len()
    }
}

pub fn p_value_row(
    query: &Query<'_>,
    index: &ClassPartitionedIndex,
    table: &CalibrationTable,
    mode: PValueMode,
) -> Result<PValueRow> {
    table.ensure_matches(index)?;
    let neighbors = index.nearest_per_class(query, table.k())?;
    let counts = index.class_counts();
    let alphas = (0..index.classes())
        .map(|class| {
            if counts[class] == 0 {
                Ok(MAX_SCORE)
            } else {
                score_from_neighbors(&neighbors, class)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let p_values = alphas
        .iter()
        .enumerate()
        .map(|(class, &alpha)| {
            let mode = match mode {
                PValueMode::Randomized { seed } => PValueMode::Randomized {
                    seed: mix_seed(seed, class as u64),
                },
                m => m,
            };
            p_value(alpha, table, mode)
        })
        .collect();
    Ok(PValueRow { p_values, alphas })
}

/// p-value rows for every example of `test`, in order.
pub fn p_value_rows(
    test: &EmbeddingSet,
    index: &ClassPartitionedIndex,
    table: &CalibrationTable,
    mode: PValueMode,
    exec: Execution,
) -> Result<Vec<PValueRow>> {
    table.ensure_matches(index)?;
    let indexed: Vec<(usize, &crate::embedding::LabeledExample)> =
        test.examples().iter().enumerate().collect();
    exec.try_map(&indexed, |(i, ex)| {
        let mode = match mode {
            PValueMode::Randomized { seed } => PValueMode::Randomized {
                seed: mix_seed(seed, *i as u64),
            },
            m => m,
        };
        p_value_row(&Query::new(&ex.embedding), index, table, mode).map_err(|e| Error::Scoring {
            id: ex.id.clone(),
            source: Box::new(e),
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub labels: Vec<usize>,
    pub epsilon: f64,
}

impl PredictionSet {
    pub fn contains(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl std::fmt::Display for PredictionSet {
    /// `{}` for the empty set, `{1;3}` otherwise.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", inner.join(";"))
    }
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

/// Labels whose p-value strictly exceeds `epsilon`.
pub fn prediction_set(row: &PValueRow, epsilon: f64) -> Result<PredictionSet> {
    check_epsilon(epsilon)?;
    Ok(PredictionSet {
        labels: row
            .p_values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > epsilon)
            .map(|(c, _)| c)
            .collect(),
        epsilon,
    })
}

/// Highest p-value; ties go to the lower score, then the lower class.
pub fn top1(row: &PValueRow) -> usize {
    (0..row.p_values.len())
        .min_by(|&a, &b| {
            row.p_values[b]
                .total_cmp(&row.p_values[a])
                .then(row.alphas[a].total_cmp(&row.alphas[b]))
                .then(a.cmp(&b))
        })
        .unwrap_or(0)
}
