//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Supporting checks follow the criteria.

mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpembed_core::conformal::{prediction_set, p_value_rows};
use cpembed_core::embedding::save_embeddings;
use cpembed_core::experiment::{run_trial, trial_seed, trial_shift, Trial};
use cpembed_core::knn::{ClassFilter, DEFAULT_K};
use cpembed_core::metrics::default_grid;
use cpembed_core::{
    calibrate, evaluate, generate, load_embeddings, nonconformity, run_validity_experiment,
    split, sweep, CalibrationTable, ClassPartitionedIndex, EmbeddingSet, Execution, Format,
    GeneratorConfig, LabeledExample, PValueMode, PValueRow, Query, ShiftCondition, ShiftConfig,
    SplitSpec,
};

const SEEDS: usize = 20;
const BASE_SEED: u64 = 1;
const EPSILON: f64 = 0.1;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn coverage_at(t: &Trial, eps: f64) -> f64 {
    evaluate(&t.rows, &t.truth, eps).unwrap().coverage
}

/// Trials under mean shifts 0, s/4, s/2 and s, generated exactly as the
/// experiment runner does.
fn severity_trials() -> Vec<Vec<Trial>> {
    let gen = GeneratorConfig::benchmark(BASE_SEED);
    let levels = [0.0, 0.25, 0.5, 1.0].map(|f| ShiftConfig {
        seed: 17,
        ..ShiftConfig::mean_shift(f * gen.separation)
    });
    (0..SEEDS)
        .map(|i| {
            let shifts: Vec<ShiftConfig> = levels.iter().map(|s| trial_shift(s, i)).collect();
            let seeded = gen.with_seed(trial_seed(gen.seed, i));
            run_trial(&seeded, &shifts, DEFAULT_K, Execution::Parallel).unwrap()
        })
        .collect()
}

fn coverage_guarantee(r: &mut Report) -> Vec<f64> {
    let gen = GeneratorConfig::benchmark(BASE_SEED);
    let grid = default_grid();
    let start = Instant::now();
    let table = run_validity_experiment(
        &gen,
        &[ShiftCondition::new("none", ShiftConfig::default())],
        DEFAULT_K,
        &grid,
        SEEDS,
        Execution::Parallel,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let agg = table.aggregate();
    let at = |eps: f64| agg.iter().find(|a| a.epsilon == eps).unwrap().coverage.mean;
    let cov = at(EPSILON);
    r.line(
        "coverage guarantee",
        (0.89..=0.93).contains(&cov) && secs < 60.0,
        format!("mean coverage at eps=0.1 over {SEEDS} seeds = {cov:.4} (target [0.89, 0.93]), runtime {secs:.1} s (limit 60 s)"),
    );
    grid.iter().map(|&e| at(e)).collect()
}

fn sub_uniformity(r: &mut Report, trials: &[Vec<Trial>]) {
    let mut worst = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for eps in [0.05, 0.1, 0.2] {
        let freq: Vec<f64> = trials
            .iter()
            .map(|t| {
                let base = &t[0];
                let low = base
                    .rows
                    .iter()
                    .zip(&base.truth)
                    .filter(|(row, &y)| row.p_values[y] <= eps)
                    .count();
                low as f64 / base.rows.len() as f64
            })
            .collect();
        let m = mean(&freq);
        worst = worst.max(m - eps);
        parts.push(format!("P(p<={eps})={m:.4}"));
    }
    r.line(
        "p-value sub-uniformity",
        worst <= 0.02,
        format!("{} (each must be <= eps + 0.02)", parts.join(", ")),
    );
}

fn oracle_equivalence(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0usize;
    let mut max_dev = 0.0f64;
    let mut mismatches = 0usize;
    for inst in 0..50 {
        let k = [1, 5, 10][inst % 3];
        let classes = rng.random_range(2..=6);
        let n = rng.random_range(classes.max(k)..=1000);
        let dim = rng.random_range(2..=64);
        let train = common::random_set(rng.random(), n, dim, classes, "t");
        let queries = common::random_set(rng.random(), 10, dim, classes, "q");
        let index = ClassPartitionedIndex::build(&train).unwrap();

        for q in queries.examples() {
            for c in 0..classes {
                let got = nonconformity(&Query::new(&q.embedding), c, &index, k);
                let want = common::score(&train, &q.embedding, c, k);
                match (got, want) {
                    (Ok(g), Some(w)) if g == w || (g - w).abs() <= 1e-12 => {
                        if g.is_finite() {
                            max_dev = max_dev.max((g - w).abs());
                        }
                    }
                    _ => mismatches += 1,
                }
                compared += 1;
            }
        }
        // Training points as queries exercise self-exclusion.
        for ex in train.examples().iter().step_by((n / 10).max(1)) {
            let q = Query::with_id(&ex.embedding, &ex.id);
            let (same, other) = common::knn_means(&train, &ex.embedding, Some(&ex.id), ex.label, k);
            for (filter, want) in [
                (ClassFilter::Equals(ex.label), same),
                (ClassFilter::NotEquals(ex.label), other),
            ] {
                match (index.avg_knn_dist(&q, filter, k), want) {
                    (Ok(g), Some(w)) if (g - w).abs() <= 1e-12 => max_dev = max_dev.max((g - w).abs()),
                    (Err(_), None) => {}
                    _ => mismatches += 1,
                }
                compared += 1;
            }
        }
    }

    let (tally_ok, tally_detail) = hand_tallies();
    r.line(
        "oracle equivalence",
        mismatches == 0 && tally_ok,
        format!("50 instances, {compared} scores/distances compared, {mismatches} mismatches, max deviation {max_dev:.1e}; {tally_detail}"),
    );
}

/// Ten rows over three classes, with the expected metrics counted by hand.
fn hand_tallies() -> (bool, String) {
    let p = [
        [0.50, 0.05, 0.02],
        [0.30, 0.40, 0.05],
        [0.05, 0.08, 0.09],
        [0.10, 0.60, 0.20],
        [0.70, 0.20, 0.15],
        [0.02, 0.03, 0.90],
        [0.40, 0.40, 0.01],
        [0.40, 0.40, 0.01],
        [0.11, 0.01, 0.01],
        [0.06, 0.95, 0.12],
    ];
    let mut rows: Vec<PValueRow> = p
        .iter()
        .map(|row| PValueRow {
            p_values: row.to_vec(),
            alphas: row.iter().map(|x| 1.0 - x).collect(),
        })
        .collect();
    // Equal p-values: the lower score wins in row 7, the lower class in row 8.
    rows[6].alphas = vec![0.5, 0.4, 0.9];
    rows[7].alphas = vec![0.5, 0.5, 0.9];
    let truth = [0, 1, 2, 0, 2, 2, 1, 1, 1, 1];

    // (epsilon, coverage, avg_set_size, correct_efficiency, top1_accuracy)
    let expected = [(0.1, 0.7, 1.6, 0.2, 0.6), (0.3, 0.6, 1.0, 0.4, 0.6)];
    let mut ok = true;
    for (eps, cov, size, ce, top) in expected {
        let m = evaluate(&rows, &truth, eps).unwrap();
        ok &= m.coverage == cov
            && m.avg_set_size == size
            && m.correct_efficiency == ce
            && m.top1_accuracy == top
            && m.n_test == 10;
    }
    (ok, format!("10-row hand tallies {}", if ok { "exact" } else { "differ" }))
}

fn structural_exactness(r: &mut Report, trials: &[Vec<Trial>]) {
    let grid = default_grid();
    let n_cal = GeneratorConfig::benchmark(0).n_cal as f64;
    let (mut points, mut nest_bad, mut mono_bad, mut quant_bad, mut ce_bad) = (0, 0, 0, 0, 0);
    for per_seed in trials {
        for t in per_seed {
            for row in &t.rows {
                points += 1;
                for &p in &row.p_values {
                    let m = p * (n_cal + 1.0);
                    if (m - m.round()).abs() > 1e-9 {
                        quant_bad += 1;
                    }
                }
                let sets: Vec<_> = grid.iter().map(|&e| prediction_set(row, e).unwrap()).collect();
                for w in sets.windows(2) {
                    if !w[1].labels.iter().all(|l| w[0].contains(*l)) {
                        nest_bad += 1;
                    }
                }
            }
            let curve = sweep(&t.rows, &t.truth, &grid).unwrap();
            for w in curve.points.windows(2) {
                if w[1].coverage > w[0].coverage || w[1].avg_set_size > w[0].avg_set_size {
                    mono_bad += 1;
                }
            }
            for &e in &grid {
                let m = evaluate(&t.rows, &t.truth, e).unwrap();
                if m.correct_efficiency > m.coverage || m.correct_efficiency > m.top1_accuracy {
                    ce_bad += 1;
                }
            }
        }
    }
    r.line(
        "structural exactness",
        nest_bad + mono_bad + quant_bad + ce_bad == 0,
        format!("{points} scored points x {} levels: nesting violations {nest_bad}, non-monotone sweep steps {mono_bad}, unquantized p-values {quant_bad}, efficiency-order violations {ce_bad}", grid.len()),
    );
}

fn shift_sensitivity(r: &mut Report, trials: &[Vec<Trial>]) {
    let base: Vec<f64> = trials.iter().map(|t| coverage_at(&t[0], EPSILON)).collect();
    let half: Vec<f64> = trials.iter().map(|t| coverage_at(&t[2], EPSILON)).collect();
    let wins = base.iter().zip(&half).filter(|(b, h)| h < b).count();
    let m = mean(&half);
    r.line(
        "shift sensitivity",
        wins >= 18 && m < 0.88,
        format!("mean_shift = s/2 lowers coverage in {wins}/{SEEDS} seeds (need >= 18); shifted mean {m:.4} vs unshifted {:.4} (need < 0.88)", mean(&base)),
    );
}

fn small_pipeline(seed: u64, exec: Execution) -> (String, String, String) {
    let gen = GeneratorConfig {
        classes: 4,
        dim: 16,
        n_train: 400,
        n_cal: 150,
        n_test: 80,
        separation: 1.0,
        spread: 0.3,
        seed,
    };
    let shifts = [
        ShiftCondition::new("none", ShiftConfig::default()),
        ShiftCondition::new(
            "mix",
            ShiftConfig {
                mixup_rate: 0.3,
                cutmix_rate: 0.2,
                mixup_concentration: 0.4,
                scale: 1.3,
                mean_shift: 0.2,
                seed: 9,
                ..ShiftConfig::default()
            },
        ),
    ];
    let grid = [0.05, 0.1, 0.2];
    let table = run_validity_experiment(&gen, &shifts, 5, &grid, 3, exec).unwrap();

    let data = generate(&gen).unwrap();
    let index = ClassPartitionedIndex::build(&data.train).unwrap();
    let cal = calibrate(&data.calibration, &index, 5, exec).unwrap();
    let rows = p_value_rows(&data.test, &index, &cal, PValueMode::Randomized { seed: 5 }, exec)
        .unwrap();
    let json = evaluate(&rows, &data.test.labels(), 0.1).unwrap().to_json();
    (table.to_csv(&[]), table.aggregate_csv(&[]), json)
}

fn determinism(r: &mut Report) {
    let a = small_pipeline(3, Execution::Parallel);
    let b = small_pipeline(3, Execution::Parallel);
    let c = small_pipeline(3, Execution::Sequential);
    let identical = a == b && a == c;

    let dir = tempfile::tempdir().unwrap();
    let data = generate(&GeneratorConfig::benchmark(4)).unwrap();
    let path = dir.path().join("train.csv");
    save_embeddings(&data.train, &path, &[]).unwrap();
    let back = load_embeddings(&path, Format::Csv).unwrap();
    let mut emb_dev = 0.0f64;
    let mut same_meta = back.len() == data.train.len();
    for (x, y) in data.train.examples().iter().zip(back.examples()) {
        same_meta &= x.id == y.id && x.label == y.label;
        for (u, v) in x.embedding.iter().zip(&y.embedding) {
            emb_dev = emb_dev.max((u - v).abs());
        }
    }
    let index = ClassPartitionedIndex::build(&data.train).unwrap();
    let table = calibrate(&data.calibration, &index, DEFAULT_K, Execution::Parallel).unwrap();
    let tpath = dir.path().join("table.csv");
    table.save(&tpath, &[]).unwrap();
    let tback = CalibrationTable::load(&tpath).unwrap();
    let tab_dev = table
        .scores()
        .iter()
        .zip(tback.scores())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0f64, f64::max);
    same_meta &= tback.k() == table.k() && tback.fingerprint() == table.fingerprint();
    r.line(
        "determinism and round-trips",
        identical && same_meta && emb_dev <= 1e-12 && tab_dev <= 1e-12,
        format!("repeated CSV/JSON outputs {}; embedding round-trip max deviation {emb_dev:.1e}, table round-trip max deviation {tab_dev:.1e}", if identical { "bit-identical" } else { "differ" }),
    );
}

fn split_integrity(r: &mut Report) {
    let ex: Vec<LabeledExample> = (0..100)
        .map(|i| LabeledExample {
            id: format!("x{i:03}"),
            group: None,
            label: i % 2,
            embedding: vec![1.0, 0.0],
        })
        .collect();
    let set = EmbeddingSet::new(2, 2, ex).unwrap();
    let spec = SplitSpec {
        fractions: [0.8, 0.1, 0.1],
        seed: 7,
        stratified: true,
        group_aware: false,
    };
    let s = split(&set, &spec).unwrap();
    let counts: Vec<Vec<usize>> = s.parts().iter().map(|p| p.class_counts()).collect();
    let strat_ok = counts == vec![vec![40, 40], vec![5, 5], vec![5, 5]];

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut overlaps = 0;
    let trials = 50;
    for t in 0..trials {
        let mut ex = Vec::new();
        for g in 0..rng.random_range(5..80) {
            for j in 0..rng.random_range(1..8) {
                ex.push(LabeledExample {
                    id: format!("g{g}-{j}"),
                    group: Some(format!("patient-{g}")),
                    label: rng.random_range(0..3),
                    embedding: vec![1.0, 0.0],
                });
            }
        }
        let set = EmbeddingSet::new(2, 3, ex).unwrap();
        let spec = SplitSpec {
            fractions: [0.7, 0.2, 0.1],
            seed: t,
            stratified: t % 2 == 0,
            group_aware: true,
        };
        let s = split(&set, &spec).unwrap();
        let groups: Vec<HashSet<&str>> = s
            .parts()
            .iter()
            .map(|p| p.examples().iter().map(|e| e.group.as_deref().unwrap()).collect())
            .collect();
        overlaps += groups[0].intersection(&groups[1]).count()
            + groups[0].intersection(&groups[2]).count()
            + groups[1].intersection(&groups[2]).count();
    }
    r.line(
        "split integrity",
        strat_ok && overlaps == 0,
        format!("per-class counts {counts:?} (want 40/5/5 each); {overlaps} shared groups over {trials} randomized grouped splits"),
    );
}

fn supporting(r: &mut Report, curve: &[f64], trials: &[Vec<Trial>]) {
    let grid = default_grid();
    let worst_track = grid
        .iter()
        .zip(curve)
        .map(|(e, c)| (c - (1.0 - e)).abs())
        .fold(0.0f64, f64::max);
    r.line(
        "check: mean coverage curve tracks 1 - eps",
        worst_track <= 0.03,
        format!("max |coverage - (1 - eps)| over the default grid = {worst_track:.4} (limit 0.03)"),
    );
    let worst_floor = grid
        .iter()
        .zip(curve)
        .map(|(e, c)| (1.0 - e - 0.02) - c)
        .fold(f64::NEG_INFINITY, f64::max);
    r.line(
        "check: baseline coverage >= 1 - eps - 0.02",
        worst_floor <= 0.0,
        format!("largest shortfall below the floor = {worst_floor:.4}"),
    );
    let means: Vec<f64> = (0..4)
        .map(|s| mean(&trials.iter().map(|t| coverage_at(&t[s], EPSILON)).collect::<Vec<_>>()))
        .collect();
    let ordered = means.windows(2).all(|w| w[1] <= w[0] + 0.01);
    r.line(
        "check: coverage nonincreasing in shift severity",
        ordered,
        format!("mean coverage at mean_shift 0, s/4, s/2, s = {:.4}, {:.4}, {:.4}, {:.4}", means[0], means[1], means[2], means[3]),
    );
    let direct = mean(&trials.iter().map(|t| coverage_at(&t[0], EPSILON)).collect::<Vec<_>>());
    let runner = curve[grid.iter().position(|&e| e == EPSILON).unwrap()];
    r.line(
        "check: experiment runner agrees with direct trials",
        (direct - runner).abs() <= 1e-12,
        format!("mean coverage at eps=0.1: runner {runner:.6}, direct {direct:.6}"),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let curve = coverage_guarantee(&mut r);
    let trials = severity_trials();
    sub_uniformity(&mut r, &trials);
    oracle_equivalence(&mut r);
    structural_exactness(&mut r, &trials);
    shift_sensitivity(&mut r, &trials);
    determinism(&mut r);
    split_integrity(&mut r);
    supporting(&mut r, &curve, &trials);
    if r.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed", r.failures);
        ExitCode::FAILURE
    }
}
