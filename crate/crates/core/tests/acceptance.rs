use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use impact_audit::certify::{ber_threshold, certify, di_bound_from_ber, purely_biased, CertifyOptions};
use impact_audit::data::{preprocess, GroupKey, SchemaConfig};
use impact_audit::emd::{emd, quantile_median, sum_emd_to, EmpiricalDistribution};
use impact_audit::harness::{
    ber_monotonicity_warnings, evaluate_classifier, load_dataset, sweep, Split, SweepClassifier, SweepSpec,
    VersionMode,
};
use impact_audit::learners::LearnerKind;
use impact_audit::metrics::{ber, confusion, disparate_impact, ConfusionMatrix};
use impact_audit::repair::{
    build_quantile_model, combinatorial_repair_table, full_repair_table, geometric_repair_table, median_target,
    repair_dataset, QuantileModel, RankSlice, RepairMode, RepairPlan,
};
use impact_audit::synth;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    match (out, limit) {
        (Outcome::Pass(d), Some(l)) if took > l => Outcome::Fail(format!("{d}; took {took:.2?}, limit {l:?}")),
        (Outcome::Pass(d), _) => Outcome::Pass(format!("{d} [{took:.2?}]")),
        (other, _) => other,
    }
}

fn di_ber_enumeration() -> Outcome {
    let mut cases = 0u64;
    let mut violations = Vec::new();
    for a in 0..=12u64 {
        for b in 0..=12u64 {
            for c in 0..=12u64 {
                for d in 0..=12u64 {
                    if a + c == 0 || b + d == 0 || a + b == 0 || c + d == 0 {
                        continue;
                    }
                    cases += 1;
                    let m = ConfusionMatrix::new(a, b, c, d).unwrap();
                    let (outcomes, groups) = m.expand();
                    assert_eq!(confusion(&outcomes, &groups).unwrap(), m);
                    let di = disparate_impact(&m).unwrap().value;
                    let bias_ber = ber(&purely_biased(&outcomes), &groups).unwrap();
                    let beta = c as f64 / (a + c) as f64;

                    // constructive direction, in floats and in exact integers
                    let di_low = 5 * c * (b + d) <= 4 * d * (a + c);
                    if (di <= 0.8) != di_low && (di - 0.8).abs() > 1e-12 {
                        violations.push(format!("DI rounding at {a},{b},{c},{d}"));
                    }
                    if di_low {
                        let eps = ber_threshold(beta, 0.8).unwrap();
                        let exact = 4 * b * (a + c) + 5 * c * (b + d) <= 4 * (b + d) * (a + c);
                        if !exact || bias_ber > eps + 1e-12 {
                            violations.push(format!("constructive at {a},{b},{c},{d}"));
                        }
                    }

                    // reverse direction at eps = BER and at a looser eps
                    for eps in [bias_ber, bias_ber + 0.01, bias_ber + 0.1] {
                        if eps > 0.5 {
                            continue;
                        }
                        if let Ok(bound) = di_bound_from_ber(eps, beta) {
                            if di > bound + 1e-12 {
                                violations.push(format!("reverse at {a},{b},{c},{d} eps {eps}"));
                            }
                        }
                    }
                }
            }
        }
    }
    check(
        violations.is_empty(),
        format!("{cases} matrices, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

fn threshold_round_trip() -> Outcome {
    let mut worst = 0.0f64;
    for i in 1..=100 {
        for j in 1..=100 {
            let (beta, tau) = (i as f64 / 100.0, j as f64 / 100.0);
            let eps = ber_threshold(beta, tau).unwrap();
            let back = di_bound_from_ber(eps, beta).unwrap();
            worst = worst.max((back - tau).abs());
        }
    }
    check(worst <= 1e-12, format!("max |round trip - tau| = {worst:e} over 100x100"))
}

fn nondecreasing_vectors(grid: &[f64], m: usize) -> Vec<Vec<f64>> {
    fn go(grid: &[f64], m: usize, start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for k in start..grid.len() {
            cur.push(grid[k]);
            go(grid, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(grid, m, 0, &mut Vec::new(), &mut out);
    out
}

fn random_groups(rng: &mut ChaCha8Rng, max_groups: usize, max_atoms: usize, equal: bool) -> Vec<Vec<f64>> {
    let k = rng.gen_range(1..=max_groups);
    let common = rng.gen_range(1..=max_atoms);
    (0..k)
        .map(|_| {
            let n = if equal { common } else { rng.gen_range(1..=max_atoms) };
            (0..n).map(|_| rng.gen_range(0..=6) as f64 / 2.0).collect()
        })
        .collect()
}

fn model_of(groups: &[Vec<f64>]) -> QuantileModel {
    let mut map = BTreeMap::new();
    let mut row = 0;
    for (g, values) in groups.iter().enumerate() {
        let members = values
            .iter()
            .map(|&v| {
                row += 1;
                (row - 1, v)
            })
            .collect();
        map.insert(GroupKey::single(format!("g{g}")), members);
    }
    build_quantile_model("y", &map).unwrap()
}

fn median_target_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let grid: Vec<f64> = (0..=6).map(|k| k as f64 / 2.0).collect();
    let candidates: Vec<EmpiricalDistribution> = (1..=6)
        .flat_map(|m| nondecreasing_vectors(&grid, m))
        .map(|v| EmpiricalDistribution::uniform(&v).unwrap())
        .collect();
    let mut worst_gap = f64::INFINITY;
    let mut failures = 0;
    for inst in 0..200 {
        let equal = inst % 2 == 0;
        let groups = random_groups(&mut rng, 4, 6, equal);
        let dists: Vec<EmpiricalDistribution> =
            groups.iter().map(|g| EmpiricalDistribution::uniform(g).unwrap()).collect();
        let target = if equal {
            // bucket count equals the common atom count, so representatives are the atoms
            EmpiricalDistribution::uniform(&median_target(&model_of(&groups)).representatives).unwrap()
        } else {
            quantile_median(&dists).unwrap()
        };
        let at_target = sum_emd_to(&dists, &target).unwrap();
        for cand in &candidates {
            let gap = sum_emd_to(&dists, cand).unwrap() - at_target;
            worst_gap = worst_gap.min(gap);
            if gap < -1e-9 {
                failures += 1;
            }
        }
    }
    check(
        failures == 0,
        format!("200 instances x {} candidates, {failures} beat the target; min gap {worst_gap:e}", candidates.len()),
    )
}

fn lambdas() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

fn geometric_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let groups = random_groups(&mut rng, 4, 8, false);
        let model = model_of(&groups);
        let target = median_target(&model);
        let target_dist = EmpiricalDistribution::uniform(&target.representatives).unwrap();
        for lambda in lambdas() {
            let table = geometric_repair_table(&model, &target, lambda).unwrap();
            for (g, row) in model.groups.iter().zip(&table) {
                let rep = EmpiricalDistribution::uniform(&g.representatives).unwrap();
                let repaired = EmpiricalDistribution::uniform(row).unwrap();
                worst = worst.max((emd(&rep, &repaired) - lambda * emd(&rep, &target_dist)).abs());
            }
        }
    }
    check(worst <= 1e-9, format!("50 instances x 11 lambdas, max deviation {worst:e}"))
}

fn rank_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut inversions = 0;
    let mut outside = 0;
    for _ in 0..200 {
        let groups = random_groups(&mut rng, 4, 8, false);
        let model = model_of(&groups);
        let target = median_target(&model);
        let mut tables = vec![full_repair_table(&model, &target).unwrap()];
        for lambda in lambdas() {
            tables.push(geometric_repair_table(&model, &target, lambda).unwrap());
        }
        for table in &tables {
            for (g, q) in model.groups.iter().enumerate() {
                // assignment is in ascending value order
                let values: Vec<f64> = q.assignment.iter().map(|&(_, b)| table[g][b]).collect();
                inversions += values.windows(2).filter(|w| w[1] < w[0]).count();
            }
        }
        for lambda in lambdas() {
            let table = combinatorial_repair_table(&model, lambda).unwrap();
            for u in 0..model.bucket_count {
                let slice = RankSlice::at(&model, u).values();
                outside += table.iter().filter(|row| !slice.contains(&row[u])).count();
            }
        }
    }
    check(
        inversions == 0 && outside == 0,
        format!("200 instances: {inversions} order inversions, {outside} combinatorial values outside their slice"),
    )
}

fn fig1_reproduction() -> Outcome {
    let table = synth::two_gaussian(10_000, 42).unwrap();
    let data = preprocess(&table, &synth::two_gaussian_config()).unwrap();
    let repaired = repair_dataset(&data, &RepairPlan::full(vec!["gender".into()])).unwrap();
    let scale = repaired.scales()[0];
    let values: Vec<f64> = repaired.columns()[0].iter().map(|&v| scale.unscale(v)).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();

    let scores = table.column("score").unwrap();
    let genders = table.column("gender").unwrap();
    let mut by_group: BTreeMap<GroupKey, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, (s, g)) in scores.iter().zip(&genders).enumerate() {
        by_group.entry(GroupKey::single(*g)).or_default().push((i, s.parse().unwrap()));
    }
    let model = build_quantile_model("score", &by_group).unwrap();
    let target = median_target(&model);
    let male = &model.group(&GroupKey::single("male")).unwrap().representatives;
    let u = (0..male.len())
        .min_by(|&x, &y| (male[x] - 500.0).abs().total_cmp(&(male[y] - 500.0).abs()))
        .unwrap();
    let mapped = target.representatives[u];
    let u95 = ((0.95 * male.len() as f64).ceil() as usize).saturating_sub(1);
    check(
        (mean - 475.0).abs() <= 2.0 && (sd - 75.0).abs() <= 2.0 && (mapped - 625.0).abs() <= 5.0,
        format!(
            "mean {mean:.2}, sd {sd:.2}, male score {:.1} -> {mapped:.2} (literal 0.95 quantile {:.1} -> {:.2})",
            male[u], male[u95], target.representatives[u95]
        ),
    )
}

fn certification_behavior() -> Vec<(String, Outcome)> {
    let opts = CertifyOptions::default();
    let mut out = Vec::new();

    out.push((
        "7a planted leak".to_string(),
        timed(Some(Duration::from_secs(60)), || {
            let t = synth::planted_leak(2000, 42).unwrap();
            let d = preprocess(&t, &synth::independent_config()).unwrap();
            let r = certify(&d, &opts).unwrap();
            check(
                !r.is_certified() && r.best_ber < 0.05,
                format!("verdict {:?}, best BER {:.4}", r.verdict, r.best_ber),
            )
        }),
    ));

    out.push((
        "7b independent synthetic".to_string(),
        timed(Some(Duration::from_secs(60)), || {
            let t = synth::independent(2000, 42).unwrap();
            let d = preprocess(&t, &synth::independent_config()).unwrap();
            let r = certify(&d, &opts).unwrap();
            let in_band = (0.45..=0.55).contains(&r.best_ber);
            check(
                in_band && (r.beta < 0.2 || r.is_certified()),
                format!(
                    "best BER {:.4}, beta {:.3}, threshold {:.4}, verdict {:?}",
                    r.best_ber, r.beta, r.epsilon_threshold, r.verdict
                ),
            )
        }),
    ));

    let inputs = [
        ("two-gaussian", synth::two_gaussian(500, 42).unwrap(), synth::two_gaussian_config()),
        ("independent", synth::independent(2000, 42).unwrap(), synth::independent_config()),
        ("planted-leak", synth::planted_leak(2000, 42).unwrap(), synth::independent_config()),
    ];
    for (name, table, config) in inputs {
        let data = preprocess(&table, &config).unwrap();
        for mode in [RepairMode::Full, RepairMode::Combinatorial, RepairMode::Geometric] {
            out.push((
                format!("7c {name} {mode} lambda=1"),
                timed(Some(Duration::from_secs(60)), || {
                    let plan = RepairPlan::new(mode, 1.0, vec![]).unwrap();
                    let repaired = repair_dataset(&data, &plan).unwrap();
                    let r = certify(&repaired, &opts).unwrap();
                    check(
                        r.is_certified(),
                        format!("best BER {:.4}, threshold {:.4}", r.best_ber, r.epsilon_threshold),
                    )
                }),
            ));
        }
    }
    out
}

fn sweep_shape() -> (Outcome, Outcome) {
    let table = synth::two_gaussian(500, 42).unwrap();
    let data = preprocess(&table, &synth::two_gaussian_config()).unwrap();
    let spec = SweepSpec::default();
    let split = Split::seeded(data.n_rows(), spec.test_fraction, spec.seed).unwrap();
    let points = sweep(&data, &split, &spec).unwrap();

    let mut problems = Vec::new();
    if points.len() != 21 * 3 {
        problems.push(format!("{} rows", points.len()));
    }
    for kind in LearnerKind::ALL {
        let name = kind.name();
        let base = points
            .iter()
            .find(|p| p.mode == VersionMode::Original && p.classifier == name)
            .unwrap();
        let baseline = evaluate_classifier(&data, &split, SweepClassifier::Learner(kind), &spec).unwrap();
        if base.utility.to_bits() != baseline.utility.to_bits() {
            problems.push(format!("{name}: utility {} vs baseline {}", base.utility, baseline.utility));
        }
        for mode in [VersionMode::Combinatorial, VersionMode::Geometric] {
            let full = points
                .iter()
                .find(|p| p.mode == mode && p.lambda == 1.0 && p.classifier == name)
                .unwrap();
            if !(full.di > base.di) {
                problems.push(format!("{name} {mode}: DI {} at 1 vs {} at 0", full.di, base.di));
            }
        }
    }
    let di_line = |n: &str| {
        let at = |m: VersionMode, l: f64| {
            points.iter().find(|p| p.mode == m && p.lambda == l && p.classifier == n).unwrap().di
        };
        format!("{n} DI {:.3} -> {:.3}", at(VersionMode::Original, 0.0), at(VersionMode::Geometric, 1.0))
    };
    let shape = check(
        problems.is_empty(),
        format!("{} rows; {}; {:?}", points.len(), di_line("svm"), problems),
    );

    let warnings = ber_monotonicity_warnings(&points, 0.02);
    for w in &warnings {
        println!("    warning: {w}");
    }
    let monotone = Outcome::Pass(format!("{} monotonicity warnings (non-blocking)", warnings.len()));
    (shape, monotone)
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn external_endpoints() -> Outcome {
    let Ok(dir) = std::env::var("IMPACT_AUDIT_DATA_DIR") else {
        return Outcome::Skip("IMPACT_AUDIT_DATA_DIR not set; needs adult.data, adult.test, german.data".into());
    };
    let dir = PathBuf::from(dir);
    let run = |train: &str, test: Option<&str>, config: &str| -> (f64, f64) {
        let config = SchemaConfig::from_path(configs_dir().join(config)).unwrap();
        let test_path = test.map(|t| dir.join(t));
        let (_, data, given) = load_dataset(&dir.join(train), &config, test_path.as_deref()).unwrap();
        let spec = SweepSpec {
            lambdas: vec![1.0],
            modes: vec![RepairMode::Combinatorial],
            classifiers: vec![SweepClassifier::Learner(LearnerKind::Svm)],
            protected_learners: vec![],
            ..SweepSpec::default()
        };
        let split = given.unwrap_or_else(|| Split::seeded(data.n_rows(), spec.test_fraction, spec.seed).unwrap());
        let points = sweep(&data, &split, &spec).unwrap();
        (points[0].utility, points[1].utility)
    };
    let (adult0, adult1) = run("adult.data", Some("adult.test"), "adult.toml");
    let (german0, german1) = run("german.data", None, "german.toml");
    let close = |v: f64, reported: f64| (v * 100.0 - reported).abs() <= 5.0;
    check(
        close(adult0, 74.0)
            && close(adult1, 72.0)
            && close(german0, 72.0)
            && close(german1, 50.0)
            && german0 - german1 > adult0 - adult1,
        format!("adult {adult0:.3} -> {adult1:.3}, german {german0:.3} -> {german1:.3}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(String, Outcome)> = vec![
        ("1 DI and BER enumeration".into(), timed(Some(Duration::from_secs(10)), di_ber_enumeration)),
        ("2 threshold round trip".into(), timed(None, threshold_round_trip)),
        ("3 median target optimality".into(), timed(None, median_target_oracle)),
        ("4 geometric EMD linearity".into(), timed(None, geometric_linearity)),
        ("5 rank preservation".into(), timed(None, rank_preservation)),
        ("6 two-gaussian full repair".into(), timed(Some(Duration::from_secs(5)), fig1_reproduction)),
    ];
    results.extend(certification_behavior());
    let start = Instant::now();
    let (shape, monotone) = sweep_shape();
    let took = start.elapsed();
    results.push((format!("8 sweep shape [{took:.2?}]"), shape));
    results.push(("9 external dataset endpoints".into(), timed(None, external_endpoints)));
    results.push(("10 group-prediction BER monotone in lambda".into(), monotone));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Outcome::Pass(d) => println!("PASS  criterion {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP  criterion {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  criterion {name}: {d}");
            }
        }
    }
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
