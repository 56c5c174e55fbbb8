//! Synthetic exchangeable embedding data and test-time distribution shifts.
//!
//! Class centers are orthonormal directions scaled so every pair of
//! centers is exactly `separation` apart; an example is the unit
//! normalization of `center + spread · N(0, I)`. Train, calibration and
//! test are drawn from the same distribution, so the unshifted pipeline is
//! exchangeable by construction.
//!
//! Shifts touch only the test split and mimic sample-mixing augmentation
//! in embedding space: Mixup becomes a convex combination of two test
//! embeddings, CutMix a swap of a contiguous coordinate block. Both keep a
//! hard label taken from the dominant parent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::embedding::{unit, EmbeddingSet, LabeledExample};
use crate::error::{Error, Result};
use crate::split::DataSplit;

/// Rejected center draws tolerated before giving up.
const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    /// Euclidean distance between any two class centers.
    pub separation: f64,
    /// Per-coordinate standard deviation of the within-class noise.
    pub spread: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Five classes in 64 dimensions with 5000 / 1000 / 500 examples.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            classes: 5,
            dim: 64,
            n_train: 5000,
            n_cal: 1000,
            n_test: 500,
            separation: 1.0,
            spread: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim < 2 {
            return bad(format!("dimension {} must be at least 2", self.dim));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.classes > self.dim {
            return bad(format!(
                "{} orthogonal class centers do not fit in dimension {}",
                self.classes, self.dim
            ));
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_cal", self.n_cal),
            ("n_test", self.n_test),
        ] {
            if n < self.classes {
                return bad(format!("{name}={n} is below the class count {}", self.classes));
            }
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation {} must be positive", self.separation));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad(format!("spread {} must be positive", self.spread));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthonormal class directions by Gram-Schmidt on Gaussian draws,
/// rejecting draws that are nearly dependent on the directions so far.
fn class_directions(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut rejections = 0;
    while dirs.len() < classes {
        let mut v = gaussian(rng, dim);
        let before = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for d in &dirs {
            let proj: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(d).for_each(|(a, b)| *a -= proj * b);
        }
        let after = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if after < 1e-3 * before {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::InvalidConfig(
                    "could not draw separated class centers".to_string(),
                ));
            }
            continue;
        }
        dirs.push(v.iter().map(|x| x / after).collect());
    }
    Ok(dirs)
}

pub fn generate(config: &GeneratorConfig) -> Result<DataSplit> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let radius = config.separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = class_directions(&mut rng, config.classes, config.dim)?
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect();

    let mut draw = |prefix: &str, n: usize| -> Result<EmbeddingSet> {
        let width = n.to_string().len();
        let examples = (0..n)
            .map(|i| {
                let label = i % config.classes;
                let embedding = loop {
                    let raw: Vec<f64> = centers[label]
                        .iter()
                        .map(|c| c + config.spread * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if let Some(u) = unit(&raw) {
                        break u;
                    }
                };
                LabeledExample {
                    id: format!("{prefix}-{i:0width$}"),
                    group: None,
                    label,
                    embedding,
                }
            })
            .collect();
        EmbeddingSet::new(config.dim, config.classes, examples)
    };
    let train = draw("train", config.n_train)?;
    let calibration = draw("cal", config.n_cal)?;
    let test = draw("test", config.n_test)?;
    Ok(DataSplit {
        train,
        calibration,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftConfig {
    /// Length of a fixed random direction added to every test embedding.
    pub mean_shift: f64,
    /// Multiplier on the spread of test embeddings around their class
    /// centroid.
    pub scale: f64,
    /// Fraction of test points replaced by Mixup-style combinations.
    pub mixup_rate: f64,
    /// Symmetric Beta parameter for the Mixup weight λ.
    pub mixup_concentration: f64,
    /// Fraction of test points replaced by CutMix-style block swaps.
    pub cutmix_rate: f64,
    /// Fraction of coordinates taken from the partner in a block swap.
    pub block_fraction: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    /// The identity shift.
    fn default() -> Self {
        Self {
            mean_shift: 0.0,
            scale: 1.0,
            mixup_rate: 0.0,
            mixup_concentration: 1.0,
            cutmix_rate: 0.0,
            block_fraction: 0.5,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn mean_shift(mean_shift: f64) -> Self {
        Self {
            mean_shift,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.mean_shift >= 0.0 && self.mean_shift.is_finite()) {
            return bad(format!("mean_shift {} must be nonnegative", self.mean_shift));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        for (name, r) in [("mixup_rate", self.mixup_rate), ("cutmix_rate", self.cutmix_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if self.mixup_rate + self.cutmix_rate > 1.0 + 1e-12 {
            return bad("mixup_rate + cutmix_rate exceeds 1".to_string());
        }
        if !(self.mixup_concentration > 0.0 && self.mixup_concentration.is_finite()) {
            return bad(format!(
                "mixup_concentration {} must be positive",
                self.mixup_concentration
            ));
        }
        if !(self.block_fraction > 0.0 && self.block_fraction < 1.0) {
            return bad(format!("block_fraction {} outside (0, 1)", self.block_fraction));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.mean_shift == 0.0 && self.scale == 1.0 && self.mixup_rate == 0.0 && self.cutmix_rate == 0.0
    }
}

/// `unit(λ·a + (1 − λ)·b)`; exactly `a` at λ ≥ 1 and `b` at λ ≤ 0.
pub fn mixup_pair(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    if lambda >= 1.0 {
        return a.to_vec();
    }
    if lambda <= 0.0 {
        return b.to_vec();
    }
    let mixed: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    unit(&mixed).unwrap_or_else(|| a.to_vec())
}

/// `a` with coordinates `start..start + len` taken from `b`, renormalized.
pub fn cutmix_pair(a: &[f64], b: &[f64], start: usize, len: usize) -> Vec<f64> {
    let mut out = a.to_vec();
    out[start..start + len].copy_from_slice(&b[start..start + len]);
    unit(&out).unwrap_or_else(|| a.to_vec())
}

/// Number of coordinates swapped by a block of `fraction · dim`, kept in
/// `[1, dim − 1]`.
pub fn block_len(dim: usize, fraction: f64) -> usize {
    ((fraction * dim as f64).round() as usize).clamp(1, dim.saturating_sub(1).max(1))
}

fn count_for(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// Applies `shift` to the test split; train and calibration pass through
/// untouched. Order: spread scaling, then Mixup / CutMix replacement, then
/// the mean shift.
pub fn apply_shift(split: &DataSplit, shift: &ShiftConfig) -> Result<DataSplit> {
    shift.validate()?;
    if shift.is_identity() {
        return Ok(split.clone());
    }
    let test = &split.test;
    let dim = test.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(shift.seed);
    let direction = unit(&gaussian(&mut rng, dim.max(1)));
    let mut examples: Vec<LabeledExample> = test.examples().to_vec();

    if shift.scale != 1.0 {
        let mut centroids = vec![vec![0.0; dim]; test.classes()];
        let counts = test.class_counts();
        for ex in &examples {
            for (c, v) in centroids[ex.label].iter_mut().zip(&ex.embedding) {
                *c += v / counts[ex.label] as f64;
            }
        }
        for ex in &mut examples {
            let c = &centroids[ex.label];
            let scaled: Vec<f64> = ex
                .embedding
                .iter()
                .zip(c)
                .map(|(x, m)| m + shift.scale * (x - m))
                .collect();
            if let Some(u) = unit(&scaled) {
                ex.embedding = u;
            }
        }
    }

    let n = examples.len();
    let n_mix = count_for(shift.mixup_rate, n);
    let n_cut = count_for(shift.cutmix_rate, n).min(n - n_mix);
    if n >= 2 && n_mix + n_cut > 0 {
        let parents = examples.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let beta = Beta::new(shift.mixup_concentration, shift.mixup_concentration)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let partner = |rng: &mut ChaCha8Rng, i: usize| {
            let j = rng.random_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        };
        for &i in &order[..n_mix] {
            let j = partner(&mut rng, i);
            let lambda: f64 = beta.sample(&mut rng);
            examples[i].embedding = mixup_pair(&parents[i].embedding, &parents[j].embedding, lambda);
            examples[i].label = if lambda >= 0.5 {
                parents[i].label
            } else {
                parents[j].label
            };
        }
        let len = block_len(dim, shift.block_fraction);
        for &i in &order[n_mix..n_mix + n_cut] {
            let j = partner(&mut rng, i);
            let start = rng.random_range(0..=dim - len);
            examples[i].embedding = cutmix_pair(&parents[i].embedding, &parents[j].embedding, start, len);
            // The partner owns the majority of coordinates only past half.
            examples[i].label = if 2 * len > dim {
                parents[j].label
            } else {
                parents[i].label
            };
        }
    }

    if shift.mean_shift > 0.0 {
        if let Some(v) = &direction {
            for ex in &mut examples {
                let moved: Vec<f64> = ex
                    .embedding
                    .iter()
                    .zip(v)
                    .map(|(x, d)| x + shift.mean_shift * d)
                    .collect();
                if let Some(u) = unit(&moved) {
                    ex.embedding = u;
                }
            }
        }
    }

    Ok(DataSplit {
        train: split.train.clone(),
        calibration: split.calibration.clone(),
        test: EmbeddingSet::new(dim, test.classes(), examples)?,
    })
}
