//! Flat `section.key=value` configuration for simulation runs.
//!
//! ```text
//! generator.C=5
//! generator.d=64
//! generator.n_train=5000
//! generator.n_cal=1000
//! generator.n_test=500
//! generator.separation=1.0
//! generator.spread=0.3
//! generator.seed=1
//! experiment.k=10
//! experiment.seeds=20
//! experiment.grid=0.05,0.1,0.2
//! experiment.epsilon=0.1
//! shift.none.mean_shift=0
//! shift.half.mean_shift=0.5
//! ```
//!
//! Every `generator.*` key is required. `experiment.*` keys fall back to
//! k = 10, 20 seeds, the default grid and ε = 0.1. Each distinct
//! `shift.<id>` prefix declares one condition (ordered by id) whose unset
//! keys take their identity values; with no shift sections a single
//! identity condition named `none` is used.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::conformal::check_epsilon;
use crate::error::{Error, Result};
use crate::experiment::ShiftCondition;
use crate::knn::DEFAULT_K;
use crate::metrics::{check_grid, default_grid};
use crate::shift::{GeneratorConfig, ShiftConfig};
use crate::split::parse_key_values;

pub const DEFAULT_SEEDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub generator: GeneratorConfig,
    pub shifts: Vec<ShiftCondition>,
    pub k: usize,
    pub grid: Vec<f64>,
    pub n_seeds: usize,
    /// Operating point for single-level summaries and the efficiency chart.
    pub epsilon: f64,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse("grid", s))
        .collect::<Result<Vec<f64>>>()?;
    check_grid(&grid)?;
    Ok(grid)
}

impl SimulationConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text))
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let required = |key: &str| -> Result<&str> {
            map.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::MissingKey(key.to_string()))
        };
        let generator = GeneratorConfig {
            classes: parse("generator.C", required("generator.C")?)?,
            dim: parse("generator.d", required("generator.d")?)?,
            n_train: parse("generator.n_train", required("generator.n_train")?)?,
            n_cal: parse("generator.n_cal", required("generator.n_cal")?)?,
            n_test: parse("generator.n_test", required("generator.n_test")?)?,
            separation: parse("generator.separation", required("generator.separation")?)?,
            spread: parse("generator.spread", required("generator.spread")?)?,
            seed: parse("generator.seed", required("generator.seed")?)?,
        };

        let k = match map.get("experiment.k") {
            Some(v) => parse("experiment.k", v)?,
            None => DEFAULT_K,
        };
        let n_seeds = match map.get("experiment.seeds") {
            Some(v) => parse("experiment.seeds", v)?,
            None => DEFAULT_SEEDS,
        };
        let grid = match map.get("experiment.grid") {
            Some(v) => parse_grid(v)?,
            None => default_grid(),
        };
        let epsilon = match map.get("experiment.epsilon") {
            Some(v) => parse("experiment.epsilon", v)?,
            None => 0.1,
        };

        let mut shift_ids: Vec<String> = Vec::new();
        let mut shift_keys: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (key, value) in map {
            if key.starts_with("generator.") || key.starts_with("experiment.") {
                const KNOWN: [&str; 12] = [
                    "generator.C",
                    "generator.d",
                    "generator.n_train",
                    "generator.n_cal",
                    "generator.n_test",
                    "generator.separation",
                    "generator.spread",
                    "generator.seed",
                    "experiment.k",
                    "experiment.seeds",
                    "experiment.grid",
                    "experiment.epsilon",
                ];
                if !KNOWN.contains(&key.as_str()) {
                    return Err(Error::InvalidConfig(format!("unknown key {key}")));
                }
                continue;
            }
            let Some(rest) = key.strip_prefix("shift.") else {
                return Err(Error::InvalidConfig(format!("unknown key {key}")));
            };
            let Some((id, field)) = rest.rsplit_once('.') else {
                return Err(Error::InvalidConfig(format!("malformed shift key {key}")));
            };
            if !shift_ids.iter().any(|s| s == id) {
                shift_ids.push(id.to_string());
            }
            shift_keys
                .entry(id.to_string())
                .or_default()
                .insert(field.to_string(), value.clone());
        }

        let mut shifts = Vec::new();
        for id in &shift_ids {
            let mut shift = ShiftConfig::default();
            for (field, value) in &shift_keys[id] {
                let key = format!("shift.{id}.{field}");
                match field.as_str() {
                    "mean_shift" => shift.mean_shift = parse(&key, value)?,
                    "scale" => shift.scale = parse(&key, value)?,
                    "mixup_rate" => shift.mixup_rate = parse(&key, value)?,
                    "mixup_concentration" => shift.mixup_concentration = parse(&key, value)?,
                    "cutmix_rate" => shift.cutmix_rate = parse(&key, value)?,
                    "block_fraction" => shift.block_fraction = parse(&key, value)?,
                    "seed" => shift.seed = parse(&key, value)?,
                    _ => return Err(Error::InvalidConfig(format!("unknown key {key}"))),
                }
            }
            shifts.push(ShiftCondition::new(id.clone(), shift));
        }
        if shifts.is_empty() {
            shifts.push(ShiftCondition::new("none", ShiftConfig::default()));
        }

        let config = Self {
            generator,
            shifts,
            k,
            grid,
            n_seeds,
            epsilon,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        for s in &self.shifts {
            s.shift.validate()?;
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("experiment.k must be at least 1".to_string()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidConfig(
                "experiment.seeds must be at least 1".to_string(),
            ));
        }
        check_grid(&self.grid)?;
        check_epsilon(self.epsilon)
    }
}
