//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lltc_cli::config::ExperimentConfig;
use lltc_cli::{cmd_curves, cmd_run, COMPARISON_FILE};
use lltc_core::classifier::gradient_check;
use lltc_core::datagen::{load, save};
use lltc_core::edgesim::reports_to_csv;
use lltc_core::llselect::select_batch;
use lltc_core::rng::SimRng;
use lltc_core::{
    entropy, generate, make_distribution, run_experiment, CandidateSet, ClassDistribution, Dataset, EntropyScore,
    LabelSource, LabeledSet, PseudoLabel, Sample, Schema, SizeModel, SynthSpec, TrainConfig,
};

const POOL_SIZES: [usize; 4] = [500, 1000, 2000, 5000];
const FIVE_MINUTES: Duration = Duration::from_secs(300);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

/// Lexicographically smallest sorted-id set of size `min(k, n)` in which
/// every member's entropy is at most every non-member's.
fn eq2_oracle(z: &[PseudoLabel], k: usize) -> (Vec<u64>, usize) {
    let n = z.len();
    let size = k.min(n);
    let mut valid: Vec<Vec<u64>> = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let inside = |i: usize| mask >> i & 1 == 1;
        let satisfied = (0..n).filter(|&i| inside(i)).all(|i| {
            (0..n)
                .filter(|&j| !inside(j))
                .all(|j| z[i].joint_entropy.value() <= z[j].joint_entropy.value())
        });
        if satisfied {
            let mut ids: Vec<u64> = (0..n).filter(|&i| inside(i)).map(|i| z[i].sample_id).collect();
            ids.sort_unstable();
            valid.push(ids);
        }
    }
    valid.sort();
    let minimal = valid[0].clone();
    let copies = valid.iter().filter(|v| **v == minimal).count();
    (minimal, copies)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = SimRng::new(2024, 0);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = 1 + rng.below(15) as usize;
        let k = 1 + rng.below(5) as usize;
        // entropies on a coarse grid so ties are frequent; ids shuffled
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 13 + 5).collect();
        rng.shuffle(&mut ids);
        let z: Vec<PseudoLabel> = ids
            .iter()
            .map(|&id| {
                let e = EntropyScore::new(rng.below(5) as f64 * 0.25);
                PseudoLabel {
                    sample_id: id,
                    label: 0,
                    entropy_f: e,
                    entropy_s: e,
                    joint_entropy: e,
                    source: LabelSource::Agreement,
                }
            })
            .collect();
        let batch = select_batch(&CandidateSet { entries: z.clone(), threshold: 2.0 }, k).unwrap();
        let mut got = batch.ids();
        got.sort_unstable();
        let (want, copies) = eq2_oracle(&z, k);
        if got != want || copies != 1 {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("500 candidate sets, {mismatches} mismatches vs exhaustive oracle ({elapsed:.2?})"),
    )
}

// ---------------------------------------------------------------- 2

/// `ln x` via `2 atanh((x - 1) / (x + 1))`, summed until terms vanish.
fn series_ln(x: f64) -> f64 {
    let z = (x - 1.0) / (x + 1.0);
    let (mut term, mut sum, mut n) = (z, 0.0, 1.0);
    while term.abs() > 1e-22 {
        sum += term / n;
        term *= z * z;
        n += 2.0;
    }
    2.0 * sum
}

fn criterion_2() -> Verdict {
    let oracle: f64 = [0.7f64, 0.2, 0.1].iter().map(|&p| -p * series_ln(p)).sum();
    let h = entropy(&make_distribution(&[0.7, 0.2, 0.1]).unwrap()).value();
    let mut ok = (h - 0.801819).abs() <= 1e-6 && (h - oracle).abs() <= 1e-6;
    for c in 2..=10 {
        for hot in 0..c {
            let mut p = vec![0.0; c];
            p[hot] = 1.0;
            ok &= entropy(&ClassDistribution::from_probs(p).unwrap()).value() == 0.0;
        }
        let u = entropy(&ClassDistribution::uniform(c).unwrap()).value();
        ok &= (u - series_ln(c as f64)).abs() <= 1e-12;
    }
    verdict(ok, format!("H(0.7,0.2,0.1) = {h:.9} (oracle {oracle:.9}); one-hot = 0; uniform = ln c for c in 2..=10"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for f in 0..20u64 {
        let mut rng = SimRng::new(f, 1);
        let classes = 2 + rng.below(5) as usize;
        let dim = 1 + rng.below(4) as usize;
        let n = classes + rng.below(20) as usize;
        let schema = Schema {
            classes,
            dim_f: dim,
            dim_s: dim + 1,
            size: SizeModel::default(),
        };
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let f: Vec<f64> = (0..dim).map(|_| 2.0 * rng.normal()).collect();
                let s: Vec<f64> = (0..dim + 1).map(|_| 2.0 * rng.normal()).collect();
                Sample::new(i as u64, f, s, Some(i % classes), false, &schema).unwrap()
            })
            .collect();
        let set = LabeledSet::from_ground_truth(schema, samples).unwrap();
        let cfg = TrainConfig {
            l2: rng.uniform() * 0.1,
            seed: f,
            ..TrainConfig::default()
        };
        worst = worst.max(gradient_check(&set, &cfg));
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("20 fixtures, max |analytic - central difference| = {worst:.2e} ({elapsed:.2?})"),
    )
}

// ---------------------------------------------------------------- shared experiment data

/// Column index lookup over a report CSV.
struct Table {
    cols: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Self {
        let mut lines = text.lines();
        let cols = lines
            .next()
            .unwrap()
            .split(',')
            .enumerate()
            .map(|(i, c)| (c.to_string(), i))
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Self { cols, rows }
    }

    fn get<T: std::str::FromStr>(&self, row: &[String], col: &str) -> T
    where
        T::Err: std::fmt::Debug,
    {
        row[self.cols[col]].parse().unwrap()
    }
}

/// Checks item and byte conservation for every round of one run's CSV.
fn conservation_errors(csv: &str, initial_pool: usize, sample_bytes: u64, header: u64, received: u64) -> Vec<String> {
    let t = Table::parse(csv);
    let mut errors = Vec::new();
    let (mut offloaded, mut discarded, mut bytes) = (0usize, 0usize, 0u64);
    for row in &t.rows {
        let round: usize = t.get(row, "round");
        let items: usize = t.get(row, "items_offloaded");
        let up: u64 = t.get(row, "bytes_up");
        offloaded += items;
        discarded += t.get::<usize>(row, "items_discarded_noise");
        bytes += up;
        let expect_up = if items == 0 { 0 } else { header + items as u64 * sample_bytes };
        if up != expect_up {
            errors.push(format!("round {round}: bytes_up {up} != {expect_up}"));
        }
        if bytes != t.get::<u64>(row, "cum_bytes_up") {
            errors.push(format!("round {round}: cumulative bytes drift"));
        }
        let total = offloaded + discarded + t.get::<usize>(row, "pool_remaining") + t.get::<usize>(row, "never_collected");
        if total != initial_pool {
            errors.push(format!("round {round}: items {total} != {initial_pool}"));
        }
    }
    if bytes != received {
        errors.push(format!("cloud received {received} != ledger {bytes}"));
    }
    errors
}

struct Experiments {
    /// (pool size, arm) -> final accuracy per seed.
    finals: BTreeMap<(usize, String), Vec<f64>>,
    /// Seconds spent on the pool-size sweep runs, including the 5000 runs.
    sweep_time: Duration,
    /// Seconds spent on the full-size run and curve extraction.
    full_time: Duration,
    /// Runs checked for conservation, and the violations found.
    runs_checked: usize,
    conservation: Vec<String>,
    /// Per seed at 5000: (accepted-label accuracy, whole-pool accuracy).
    label_quality: Vec<(u64, f64, f64)>,
    curves: String,
    n_test: usize,
}

fn scaled(cfg: &ExperimentConfig, m: usize) -> (SynthSpec, ExperimentConfig) {
    let lltc_cli::config::DatasetSource::Synthetic(spec) = cfg.dataset.clone() else {
        panic!("acceptance fixture must be synthetic");
    };
    let mut c = cfg.clone();
    c.schedule.k0 = m * 2 / 100;
    c.schedule.growth = m / 100;
    (SynthSpec { n_unlabeled: m, ..spec }, c)
}

fn run_experiments(work: &Path) -> Experiments {
    let config_path = fixtures().join("acceptance.toml");
    let cfg = ExperimentConfig::load(&config_path).unwrap();
    let header = cfg.channel.header_bytes;
    let mut ex = Experiments {
        finals: BTreeMap::new(),
        sweep_time: Duration::ZERO,
        full_time: Duration::ZERO,
        runs_checked: 0,
        conservation: Vec::new(),
        label_quality: Vec::new(),
        curves: String::new(),
        n_test: 0,
    };

    // full-size fixture through the CLI: every arm, every seed
    let start = Instant::now();
    let out = work.join("full");
    let summaries = cmd_run(&config_path, &out, false, None, 1).unwrap();
    let curves_path = work.join("curves.csv");
    cmd_curves(&out.join(COMPARISON_FILE), &curves_path).unwrap();
    ex.full_time = start.elapsed();
    ex.curves = fs::read_to_string(&curves_path).unwrap();

    let (spec, _) = scaled(&cfg, 5000);
    ex.n_test = spec.n_test;
    let sample_bytes = spec.schema().sample_bytes();
    for s in &summaries {
        let rounds = fs::read_to_string(lltc_cli::run_dir(&out, &s.strategy, s.seed).join("rounds.csv")).unwrap();
        ex.conservation.extend(
            conservation_errors(&rounds, 5000, sample_bytes, header, s.cloud_received_bytes)
                .into_iter()
                .map(|e| format!("{}/{}: {e}", s.strategy, s.seed)),
        );
        ex.runs_checked += 1;
        ex.finals.entry((5000, s.strategy.clone())).or_default().push(s.final_accuracy);
        if s.strategy == "lltc" {
            let pool = s.pool_accuracy.max(s.final_pool_accuracy);
            ex.label_quality.push((s.seed, s.auto_label_accuracy.unwrap_or(0.0), pool));
        }
    }
    // the 5000 column of the sweep is the CLI run above; charge its share
    let share = ex.full_time.as_secs_f64() * 3.0 / cfg.arms.len() as f64;
    ex.sweep_time += Duration::from_secs_f64(share);

    // smaller pools, three compared arms
    let start = Instant::now();
    for &m in &POOL_SIZES[..3] {
        let (spec, scfg) = scaled(&cfg, m);
        for &seed in &cfg.seeds {
            let data = generate(&SynthSpec { seed, ..spec }).unwrap();
            for arm in scfg.arms.iter().filter(|a| ["lltc", "self_training", "co_training"].contains(&a.name.as_str())) {
                let output = run_experiment(&scfg.sim_config(arm, seed), &data).unwrap();
                ex.conservation.extend(
                    conservation_errors(
                        &reports_to_csv(&output.reports),
                        m,
                        sample_bytes,
                        header,
                        output.summary.cloud_received_bytes,
                    )
                    .into_iter()
                    .map(|e| format!("{}/{seed}/m{m}: {e}", arm.name)),
                );
                ex.runs_checked += 1;
                ex.finals.entry((m, arm.name.clone())).or_default().push(output.summary.final_accuracy);
            }
        }
    }
    ex.sweep_time += start.elapsed();
    ex
}

// ---------------------------------------------------------------- 4

fn criterion_4(ex: &Experiments) -> Verdict {
    let shown: Vec<&String> = ex.conservation.iter().take(3).collect();
    verdict(
        ex.conservation.is_empty(),
        format!("{} runs, {} violations {:?}", ex.runs_checked, ex.conservation.len(), shown),
    )
}

// ---------------------------------------------------------------- 5

/// Mean of per-seed accuracies, via integer hit counts so equal totals compare equal.
fn mean_hits(accs: &[f64], n_test: usize) -> (u64, f64) {
    let hits: u64 = accs.iter().map(|a| (a * n_test as f64).round() as u64).sum();
    (hits, hits as f64 / (accs.len() * n_test) as f64)
}

fn criterion_5(ex: &Experiments) -> Verdict {
    let mut ok = ex.sweep_time < FIVE_MINUTES;
    let mut parts = Vec::new();
    for &m in &POOL_SIZES {
        let get = |arm: &str| mean_hits(&ex.finals[&(m, arm.to_string())], ex.n_test);
        let (l_hits, l) = get("lltc");
        let (s_hits, s) = get("self_training");
        let (c_hits, c) = get("co_training");
        ok &= l_hits >= s_hits && l_hits >= c_hits;
        if m == 5000 {
            ok &= l - s.max(c) >= 0.01;
        }
        parts.push(format!("m={m}: lltc {l:.4} self {s:.4} co {c:.4}"));
    }
    verdict(ok, format!("{} ({:.1?})", parts.join("; "), ex.sweep_time))
}

// ---------------------------------------------------------------- 6

fn criterion_6(ex: &Experiments) -> Verdict {
    let t = Table::parse(&ex.curves);
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &t.rows {
        if row[t.cols["table"]] == "traffic" {
            curves
                .entry(row[t.cols["strategy"]].clone())
                .or_default()
                .push((t.get(row, "x"), t.get(row, "mean_accuracy")));
        }
    }
    let mut ok = ex.full_time < FIVE_MINUTES;
    let mut notes = Vec::new();
    for arm in ["lltc", "random", "offload_all"] {
        let c = &curves[arm];
        let worst_drop = c.windows(2).map(|w| w[0].1 - w[1].1).fold(f64::MIN, f64::max);
        ok &= worst_drop <= 0.01;
        notes.push(format!("{arm} worst step drop {:.2} pt", worst_drop * 100.0));
    }
    // random's accuracy at each LLTC budget: the last random point not above it
    let random = &curves["random"];
    let (mut weak, mut strict, mut budgets) = (true, 0, 0);
    for &(x, acc) in &curves["lltc"] {
        let Some(&(_, r)) = random.iter().rev().find(|(rx, _)| *rx <= x) else {
            continue;
        };
        if x == 0.0 {
            continue;
        }
        budgets += 1;
        // distinct seed-averaged accuracies differ by at least 1 / (seeds * n_test)
        weak &= acc >= r - 1e-12;
        strict += (acc > r + 1e-12) as usize;
    }
    ok &= weak && 2 * strict >= budgets;
    notes.push(format!("lltc >= random at all {budgets} budgets: {weak}; strictly at {strict}"));
    verdict(ok, format!("{} ({:.1?})", notes.join("; "), ex.full_time))
}

// ---------------------------------------------------------------- 7

fn criterion_7(ex: &Experiments) -> Verdict {
    let wins = ex.label_quality.iter().filter(|(_, label, pool)| label > pool).count();
    let worst = ex
        .label_quality
        .iter()
        .map(|(_, l, p)| l - p)
        .fold(f64::INFINITY, f64::min);
    verdict(
        wins >= 9 && ex.label_quality.len() == 10,
        format!(
            "accepted-label accuracy beats whole-pool accuracy in {wins}/{} seeds (smallest margin {:.4})",
            ex.label_quality.len(),
            worst
        ),
    )
}

// ---------------------------------------------------------------- 8

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8(work: &Path) -> Verdict {
    let config = fixtures().join("smoke.toml");
    let (a, b) = (work.join("det-a"), work.join("det-b"));
    cmd_run(&config, &a, false, None, 1).unwrap();
    // different worker count: results must not depend on scheduling
    cmd_run(&config, &b, false, None, 3).unwrap();
    let (fa, fb) = (files_under(&a), files_under(&b));
    let same = fa == fb;
    verdict(
        same && !fa.is_empty(),
        format!("{} report files, byte-identical across two runs: {same}", fa.len()),
    )
}

// ---------------------------------------------------------------- 9

fn roundtrip(data: &Dataset, dir: &Path) -> bool {
    save(data, dir).unwrap();
    let back = load(dir).unwrap();
    let again = dir.with_extension("again");
    save(&back, &again).unwrap();
    back == *data && files_under(dir) == files_under(&again)
}

fn criterion_9(work: &Path) -> Verdict {
    let mut checked = Vec::new();
    let mut ok = true;
    for name in ["tiny", "separable"] {
        let dir = fixtures().join("data").join(name);
        let data = load(&dir).unwrap();
        let resaved = work.join(format!("rt-{name}"));
        ok &= roundtrip(&data, &resaved);
        ok &= files_under(&dir) == files_under(&resaved);
        checked.push(name.to_string());
    }
    for cfg_name in ["acceptance", "smoke"] {
        let cfg = ExperimentConfig::load(&fixtures().join(format!("{cfg_name}.toml"))).unwrap();
        let lltc_cli::config::DatasetSource::Synthetic(spec) = cfg.dataset else { continue };
        for &seed in cfg.seeds.iter().take(2) {
            let data = generate(&SynthSpec { seed, ..spec }).unwrap();
            ok &= roundtrip(&data, &work.join(format!("rt-{cfg_name}-{seed}")));
            checked.push(format!("{cfg_name}#{seed}"));
        }
    }
    verdict(ok, format!("save/load identity on {}", checked.join(", ")))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, Verdict)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];
    let ex = run_experiments(work.path());
    results.push((4, criterion_4(&ex)));
    results.push((5, criterion_5(&ex)));
    results.push((6, criterion_6(&ex)));
    results.push((7, criterion_7(&ex)));
    results.push((8, criterion_8(work.path())));
    results.push((9, criterion_9(work.path())));

    let mut failed = 0;
    for (n, v) in &results {
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
