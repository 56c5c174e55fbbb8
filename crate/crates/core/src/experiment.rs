//! Monte-Carlo validity experiments: generate, calibrate, shift, score and
//! sweep, repeated over seeds and shift conditions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::conformal::{calibrate, mix_seed, p_value_rows, PValueMode, PValueRow};
use crate::error::Result;
use crate::exec::Execution;
use crate::knn::ClassPartitionedIndex;
use crate::metrics::{check_grid, sweep, CoverageCurve};
use crate::shift::{apply_shift, generate, GeneratorConfig, ShiftConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCondition {
    pub id: String,
    pub shift: ShiftConfig,
}

impl ShiftCondition {
    pub fn new(id: impl Into<String>, shift: ShiftConfig) -> Self {
        Self {
            id: id.into(),
            shift,
        }
    }
}

/// Scored test set of one (seed, shift) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub rows: Vec<PValueRow>,
    pub truth: Vec<usize>,
}

/// Generates one dataset from `gen`, calibrates once, and scores the test
/// split under each shift. Shift seeds are used as given.
pub fn run_trial(
    gen: &GeneratorConfig,
    shifts: &[ShiftConfig],
    k: usize,
    exec: Execution,
) -> Result<Vec<Trial>> {
    let data = generate(gen)?;
    let index = ClassPartitionedIndex::build(&data.train)?;
    let table = calibrate(&data.calibration, &index, k, exec)?;
    shifts
        .iter()
        .map(|shift| {
            let shifted = apply_shift(&data, shift)?;
            let rows = p_value_rows(&shifted.test, &index, &table, PValueMode::Deterministic, exec)?;
            Ok(Trial {
                rows,
                truth: shifted.test.labels(),
            })
        })
        .collect()
}

/// Generator seed of trial `i`.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Shift seed of trial `i`; independent across trials.
pub fn trial_shift(shift: &ShiftConfig, i: usize) -> ShiftConfig {
    ShiftConfig {
        seed: mix_seed(shift.seed, i as u64),
        ..*shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub shift_id: String,
    pub seed: u64,
    pub epsilon: f64,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub correct_efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; `None` with a single seed.
    pub sd: Option<f64>,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub shift_id: String,
    pub epsilon: f64,
    pub coverage: MeanSd,
    pub avg_set_size: MeanSd,
    pub correct_efficiency: MeanSd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub n_seeds: usize,
    /// Ordered by shift (input order), then seed, then epsilon.
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("shift_id,seed,epsilon,coverage,avg_set_size,correct_efficiency\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.shift_id, r.seed, r.epsilon, r.coverage, r.avg_set_size, r.correct_efficiency
            );
        }
        out
    }

    /// Mean and standard deviation over seeds per (shift, epsilon), in the
    /// table's shift and grid order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut shift_order: Vec<&str> = Vec::new();
        let mut cells: BTreeMap<(usize, u64), Vec<&ExperimentRow>> = BTreeMap::new();
        for r in &self.rows {
            let s = match shift_order.iter().position(|id| *id == r.shift_id) {
                Some(s) => s,
                None => {
                    shift_order.push(&r.shift_id);
                    shift_order.len() - 1
                }
            };
            // Grid values are positive, so their bit patterns sort like the
            // values themselves.
            cells.entry((s, r.epsilon.to_bits())).or_default().push(r);
        }
        cells
            .into_iter()
            .map(|((s, eps), rows)| {
                let pick = |f: fn(&ExperimentRow) -> f64| {
                    MeanSd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                AggregateRow {
                    shift_id: shift_order[s].to_string(),
                    epsilon: f64::from_bits(eps),
                    coverage: pick(|r| r.coverage),
                    avg_set_size: pick(|r| r.avg_set_size),
                    correct_efficiency: pick(|r| r.correct_efficiency),
                }
            })
            .collect()
    }

    /// Aggregate CSV; the `_sd` columns are omitted for a single seed.
    pub fn aggregate_csv(&self, comments: &[String]) -> String {
        let with_sd = self.n_seeds > 1;
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let metrics = ["coverage", "avg_set_size", "correct_efficiency"];
        let mut header = vec!["shift_id".to_string(), "epsilon".to_string()];
        for m in metrics {
            header.push(format!("{m}_mean"));
            if with_sd {
                header.push(format!("{m}_sd"));
            }
        }
        let _ = writeln!(out, "{}", header.join(","));
        for a in self.aggregate() {
            let mut fields = vec![a.shift_id.clone(), a.epsilon.to_string()];
            for m in [a.coverage, a.avg_set_size, a.correct_efficiency] {
                fields.push(m.mean.to_string());
                if with_sd {
                    fields.push(m.sd.unwrap_or(0.0).to_string());
                }
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    /// Per-seed curve of one shift condition.
    pub fn curve(&self, shift_id: &str, seed: u64) -> CoverageCurve {
        use crate::metrics::CurvePoint;
        CoverageCurve {
            points: self
                .rows
                .iter()
                .filter(|r| r.shift_id == shift_id && r.seed == seed)
                .map(|r| CurvePoint {
                    epsilon: r.epsilon,
                    coverage: r.coverage,
                    avg_set_size: r.avg_set_size,
                    correct_efficiency: r.correct_efficiency,
                })
                .collect(),
        }
    }
}

pub fn run_validity_experiment(
    gen: &GeneratorConfig,
    shifts: &[ShiftCondition],
    k: usize,
    grid: &[f64],
    n_seeds: usize,
    exec: Execution,
) -> Result<ExperimentTable> {
    gen.validate()?;
    check_grid(grid)?;
    for s in shifts {
        s.shift.validate()?;
    }
    let trials: Vec<usize> = (0..n_seeds).collect();
    let per_seed: Vec<Vec<CoverageCurve>> = exec.try_map(&trials, |&i| {
        let seeded = gen.with_seed(trial_seed(gen.seed, i));
        let configs: Vec<ShiftConfig> = shifts.iter().map(|s| trial_shift(&s.shift, i)).collect();
        run_trial(&seeded, &configs, k, exec)?
            .iter()
            .map(|t| sweep(&t.rows, &t.truth, grid))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(shifts.len() * n_seeds * grid.len());
    for (s, cond) in shifts.iter().enumerate() {
        for (i, curves) in per_seed.iter().enumerate() {
            for p in &curves[s].points {
                rows.push(ExperimentRow {
                    shift_id: cond.id.clone(),
                    seed: trial_seed(gen.seed, i),
                    epsilon: p.epsilon,
                    coverage: p.coverage,
                    avg_set_size: p.avg_set_size,
                    correct_efficiency: p.correct_efficiency,
                });
            }
        }
    }
    Ok(ExperimentTable { n_seeds, rows })
}
