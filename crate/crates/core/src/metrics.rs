//! Coverage, set size, correct efficiency and top-1 accuracy over a matrix
//! of p-value rows, at one significance level or along a grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::conformal::{check_epsilon, prediction_set, top1, PValueRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epsilon: f64,
    pub n_test: usize,
    /// Fraction of rows whose prediction set holds the true label.
    pub coverage: f64,
    pub avg_set_size: f64,
    /// Fraction of rows whose set is exactly `{truth}`.
    pub correct_efficiency: f64,
    pub top1_accuracy: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    /// One line, three decimals.
    pub fn summary(&self) -> String {
        format!(
            "epsilon={:.3} n={} coverage={:.3} avg_set_size={:.3} correct_efficiency={:.3} top1_accuracy={:.3}",
            self.epsilon,
            self.n_test,
            self.coverage,
            self.avg_set_size,
            self.correct_efficiency,
            self.top1_accuracy
        )
    }
}

fn check_inputs(rows: &[PValueRow], truth: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no p-value rows".to_string()));
    }
    if rows.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "{} p-value rows but {} labels",
            rows.len(),
            truth.len()
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.alphas.len() != r.p_values.len()) {
        return Err(Error::LengthMismatch(format!(
            "row has {} p-values but {} scores",
            r.p_values.len(),
            r.alphas.len()
        )));
    }
    Ok(())
}

pub fn evaluate(rows: &[PValueRow], truth: &[usize], epsilon: f64) -> Result<MetricsReport> {
    check_epsilon(epsilon)?;
    check_inputs(rows, truth)?;
    let mut covered = 0usize;
    let mut total_size = 0usize;
    let mut correct_singletons = 0usize;
    let mut top1_hits = 0usize;
    for (row, &y) in rows.iter().zip(truth) {
        let set = prediction_set(row, epsilon)?;
        let hit = set.contains(y);
        covered += hit as usize;
        total_size += set.len();
        correct_singletons += (hit && set.len() == 1) as usize;
        top1_hits += (top1(row) == y) as usize;
    }
    let n = rows.len() as f64;
    Ok(MetricsReport {
        epsilon,
        n_test: rows.len(),
        coverage: covered as f64 / n,
        avg_set_size: total_size as f64 / n,
        correct_efficiency: correct_singletons as f64 / n,
        top1_accuracy: top1_hits as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub correct_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageCurve {
    pub points: Vec<CurvePoint>,
}

impl CoverageCurve {
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("epsilon,coverage,avg_set_size,correct_efficiency\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p.epsilon, p.coverage, p.avg_set_size, p.correct_efficiency
            );
        }
        out
    }
}

/// 0.01, 0.02, ..., 0.50.
pub fn default_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 100.0).collect()
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".to_string()));
    }
    if let Some(e) = grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidGrid(format!("{e} is outside (0, 1)")));
    }
    if let Some(w) = grid.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid(format!(
            "not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

pub fn sweep(rows: &[PValueRow], truth: &[usize], grid: &[f64]) -> Result<CoverageCurve> {
    check_grid(grid)?;
    let points = grid
        .iter()
        .map(|&epsilon| {
            let r = evaluate(rows, truth, epsilon)?;
            Ok(CurvePoint {
                epsilon,
                coverage: r.coverage,
                avg_set_size: r.avg_set_size,
                correct_efficiency: r.correct_efficiency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageCurve { points })
}
