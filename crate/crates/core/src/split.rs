//! Deterministic train / calibration / test splitting.
//!
//! Without groups, split sizes are fixed first by largest-remainder
//! rounding of `n · fraction`, then (when stratified) each class's share of
//! every split is rounded so that both the per-class totals and the split
//! sizes are met exactly, with every cell within one example of its
//! proportional quota.
//!
//! With groups, whole groups are assigned greedily, largest first, to the
//! split whose per-stratum counts move closest to their targets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{to_csv, EmbeddingSet, LabeledExample};
use crate::error::{Error, Result};
use crate::io;

pub const SPLIT_NAMES: [&str; 3] = ["train", "calibration", "test"];

/// Default fractions reproduce a 10,017 / 2,004 / 501 partition.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.80, 0.16, 0.04];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Train, calibration and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub stratified: bool,
    pub group_aware: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
            stratified: true,
            group_aware: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in SPLIT_NAMES.iter().zip(self.fractions) {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidSplit(format!(
                    "{name} fraction {f} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        if self.fractions[0] == 0.0 {
            return Err(Error::InvalidSplit(
                "train fraction must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: EmbeddingSet,
    pub calibration: EmbeddingSet,
    pub test: EmbeddingSet,
}

impl DataSplit {
    pub fn parts(&self) -> [&EmbeddingSet; 3] {
        [&self.train, &self.calibration, &self.test]
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties in
/// the remainder go to the earlier split.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = (r.floor() as usize).min(n);
    }
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).filter(|&s| fractions[s] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < n && !order.is_empty() {
        counts[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > n {
        // Only reachable through float noise in `f * n`.
        let s = (0..3).rev().find(|&s| counts[s] > 0).expect("positive total");
        counts[s] -= 1;
        assigned -= 1;
    }
    counts
}

/// Integer matrix `m[c][s]` with row sums `rows[c]`, column sums `cols[s]`
/// and every entry equal to the floor or ceiling of `rows[c]·cols[s]/n`.
///
/// Floors are taken first; the remaining units are routed by a small
/// max-flow over the cells whose quota is fractional.
fn controlled_round(rows: &[usize], cols: &[usize; 3]) -> Vec<[usize; 3]> {
    let n: usize = rows.iter().sum();
    let mut m: Vec<[usize; 3]> = rows
        .iter()
        .map(|&r| {
            let mut cell = [0; 3];
            for s in 0..3 {
                cell[s] = r * cols[s] / n;
            }
            cell
        })
        .collect();
    let mut row_need: Vec<usize> = rows
        .iter()
        .zip(&m)
        .map(|(&r, cell)| r - cell.iter().sum::<usize>())
        .collect();
    let mut col_need = [0usize; 3];
    for s in 0..3 {
        col_need[s] = cols[s] - m.iter().map(|cell| cell[s]).sum::<usize>();
    }
    let open = |c: usize, s: usize| (rows[c] * cols[s]) % n != 0;
    // used[c][s] marks a cell that already received its extra unit.
    let mut used = vec![[false; 3]; rows.len()];

    // Augmenting paths alternate class -> split (unused open cell) and
    // split -> class (used cell, undoing that unit).
    fn augment(
        c: usize,
        open: &dyn Fn(usize, usize) -> bool,
        used: &mut [[bool; 3]],
        col_need: &mut [usize; 3],
        seen_split: &mut [bool; 3],
    ) -> bool {
        for s in 0..3 {
            if used[c][s] || !open(c, s) || seen_split[s] {
                continue;
            }
            seen_split[s] = true;
            if col_need[s] > 0 {
                col_need[s] -= 1;
                used[c][s] = true;
                return true;
            }
            for c2 in 0..used.len() {
                if used[c2][s] && c2 != c {
                    used[c2][s] = false;
                    if augment(c2, open, used, col_need, seen_split) {
                        used[c][s] = true;
                        return true;
                    }
                    used[c2][s] = true;
                }
            }
        }
        false
    }

    for c in 0..rows.len() {
        while row_need[c] > 0 {
            let mut seen = [false; 3];
            if !augment(c, &open, &mut used, &mut col_need, &mut seen) {
                break;
            }
            row_need[c] -= 1;
        }
    }
    for (cell, u) in m.iter_mut().zip(&used) {
        for s in 0..3 {
            cell[s] += u[s] as usize;
        }
    }
    debug_assert!(row_need.iter().all(|&r| r == 0));
    m
}

fn build(set: &EmbeddingSet, assignment: &[usize]) -> DataSplit {
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for (ex, &s) in set.examples().iter().zip(assignment) {
        parts[s].push(ex.clone());
    }
    let [train, calibration, test] =
        parts.map(|p| EmbeddingSet::from_parts(set.dim(), set.classes(), p));
    DataSplit {
        train,
        calibration,
        test,
    }
}

pub fn split(set: &EmbeddingSet, spec: &SplitSpec) -> Result<DataSplit> {
    spec.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidSplit("input set is empty".to_string()));
    }
    if spec.stratified {
        if let Some(class) = set.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::ClassAbsent { class });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let assignment = if spec.group_aware {
        split_groups(set, spec, &mut rng)?
    } else {
        split_examples(set, spec, &mut rng)
    };
    Ok(build(set, &assignment))
}

fn stratum_of(spec: &SplitSpec, ex: &LabeledExample) -> usize {
    if spec.stratified {
        ex.label
    } else {
        0
    }
}

fn split_examples(set: &EmbeddingSet, spec: &SplitSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = set.len();
    let strata = if spec.stratified { set.classes() } else { 1 };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); strata];
    for (i, ex) in set.examples().iter().enumerate() {
        members[stratum_of(spec, ex)].push(i);
    }
    let sizes = apportion(n, &spec.fractions);
    let rows: Vec<usize> = members.iter().map(Vec::len).collect();
    let table = controlled_round(&rows, &sizes);

    let mut assignment = vec![0; n];
    for (idx, counts) in members.iter_mut().zip(&table) {
        idx.shuffle(rng);
        let mut it = idx.iter();
        for (s, &count) in counts.iter().enumerate() {
            for &i in it.by_ref().take(count) {
                assignment[i] = s;
            }
        }
    }
    assignment
}

fn split_groups(set: &EmbeddingSet, spec: &SplitSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let strata = if spec.stratified { set.classes() } else { 1 };
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for (i, ex) in set.examples().iter().enumerate() {
        let g = ex.group.as_deref().ok_or_else(|| {
            Error::InvalidSplit(format!("example {} has no group for group-aware split", ex.id))
        })?;
        let entry = groups.entry(g).or_insert_with(|| {
            order.push(g);
            (Vec::new(), vec![0; strata])
        });
        entry.0.push(i);
        entry.1[stratum_of(spec, ex)] += 1;
    }
    order.shuffle(rng);
    // Stable: equal-size groups keep their shuffled order.
    order.sort_by_key(|g| std::cmp::Reverse(groups[g].0.len()));

    let mut stratum_totals = vec![0usize; strata];
    for ex in set.examples() {
        stratum_totals[stratum_of(spec, ex)] += 1;
    }
    let targets: Vec<[f64; 3]> = stratum_totals
        .iter()
        .map(|&t| spec.fractions.map(|f| f * t as f64))
        .collect();
    let mut filled = vec![[0usize; 3]; strata];
    let candidates: Vec<usize> = (0..3).filter(|&s| spec.fractions[s] > 0.0).collect();

    let mut assignment = vec![0; set.len()];
    for g in order {
        let (members, composition) = &groups[g];
        let cost = |s: usize| -> f64 {
            composition
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(c, &k)| {
                    let before = filled[c][s] as f64 - targets[c][s];
                    let after = before + k as f64;
                    after * after - before * before
                })
                .sum()
        };
        let best = candidates
            .iter()
            .copied()
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
            .expect("train fraction is positive");
        for (c, &k) in composition.iter().enumerate() {
            filled[c][best] += k;
        }
        for &i in members {
            assignment[i] = best;
        }
    }
    Ok(assignment)
}

/// Writes `train.csv`, `calibration.csv`, `test.csv` and `manifest.txt`
/// into `dir`.
pub fn save_split(split: &DataSplit, spec: &SplitSpec, dir: &Path, comments: &[String]) -> Result<()> {
    for (name, part) in SPLIT_NAMES.iter().zip(split.parts()) {
        let path = dir.join(format!("{name}.csv"));
        io::write_atomic(&path, to_csv(part, comments).as_bytes())?;
    }
    io::write_atomic(&dir.join("manifest.txt"), manifest(split, spec).as_bytes())
}

pub fn manifest(split: &DataSplit, spec: &SplitSpec) -> String {
    let mut out = String::new();
    let [ft, fc, fs] = spec.fractions;
    let _ = writeln!(out, "seed={}", spec.seed);
    let _ = writeln!(out, "frac_train={ft}");
    let _ = writeln!(out, "frac_cal={fc}");
    let _ = writeln!(out, "frac_test={fs}");
    let _ = writeln!(out, "n_train={}", split.train.len());
    let _ = writeln!(out, "n_cal={}", split.calibration.len());
    let _ = writeln!(out, "n_test={}", split.test.len());
    let _ = writeln!(out, "d={}", split.train.dim());
    let _ = writeln!(out, "C={}", split.train.classes());
    let _ = writeln!(out, "group_aware={}", spec.group_aware);
    let _ = writeln!(out, "stratified={}", spec.stratified);
    out
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Ids of `a` that also occur in `b`.
pub fn shared_ids<'a>(a: &'a EmbeddingSet, b: &EmbeddingSet) -> Vec<&'a str> {
    let ids: HashSet<&str> = b.examples().iter().map(|e| e.id.as_str()).collect();
    a.examples()
        .iter()
        .map(|e| e.id.as_str())
        .filter(|id| ids.contains(id))
        .collect()
}
