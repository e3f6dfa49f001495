//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails. Thresholds and budgets are pinned
//! below and must not be loosened to make a run pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use icp_core::forest::ForestConfig;
use icp_core::hsic::{hsic_biased, normalized_hsic};
use icp_core::icp::{cluster_subsets, enumerate_subsets, greedy_icp, Subset};
use icp_core::invariance::{event_folds, generalization_curve, ForestCiTest};
use icp_core::roctest::{auc_midrank, delong_paired_test};
use icp_core::seed::{derive_seed, rng_from, Rng};
use icp_core::synth::{
    coverage_experiment, env_proxy_table, permutation_oracle, sample_scm, CoverageOptions, Link, NoiseFamily,
    ScmSpec,
};
use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

const SUBSETS_EXPECTED: usize = 232;
const CLUSTER_UNIONS_EXPECTED: usize = 28;
const AUC_INSTANCES: usize = 1000;
const AUC_TOLERANCE: f64 = 1e-12;
const KS_DATASETS: usize = 500;
const KS_LEVEL: f64 = 0.01;
const AGREEMENT_INSTANCES: usize = 200;
const PERMUTATION_ROUNDS: usize = 20_000;
const AGREEMENT_MIN: f64 = 0.95;
const PAIRED_N: usize = 300;
const COVERAGE_RUNS: usize = 100;
const COVERAGE_MIN: usize = 90;
const GREEDY_RUNS: usize = 20;
const GREEDY_MIN: usize = 16;
const HSIC_SELF_TOLERANCE: f64 = 1e-9;
const HSIC_INDEPENDENT_MAX: f64 = 0.05;
const HSIC_GRAM_TOLERANCE: f64 = 1e-10;
const SPATIAL_CHANGE_MAX: f64 = 0.02;
const EVENT_DROP_MIN: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_budget = elapsed <= budget;
    let pass = v.pass && in_budget;
    let budget_note = if in_budget { String::new() } else { format!(" over budget {budget:?}") };
    println!(
        "[{}] {id}. {name}: {} ({:.2}s{budget_note})",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn criterion_subsets() -> Verdict {
    let base = names(&["blh", "v10", "z", "ch1", "u10", "sshf", "r850", "v", "ch6", "cape", "alt"]);
    let n = enumerate_subsets(&base, 8).expect("valid").len();
    Verdict { pass: n == SUBSETS_EXPECTED, detail: format!("{n} subsets, expected {SUBSETS_EXPECTED}") }
}

fn criterion_cluster_unions() -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clusters_tau025.json");
    let lists: Vec<Vec<String>> = serde_json::from_str(&fs::read_to_string(path).expect("fixture")).expect("json");
    let clusters: Vec<Subset> = lists.into_iter().map(|l| l.into_iter().collect()).collect();
    let n = cluster_subsets(&clusters, 8).expect("valid").len();
    Verdict {
        pass: n == CLUSTER_UNIONS_EXPECTED,
        detail: format!("{n} unique unions of >= 8 of {} clusters, expected {CLUSTER_UNIONS_EXPECTED}", clusters.len()),
    }
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let (mut pos, mut neg) = (0usize, 0usize);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0 {
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / (pos * neg) as f64
}

fn criterion_auc() -> Verdict {
    let mut rng = rng_from(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < AUC_INSTANCES {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=20);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        // Coarse levels force ties; continuous draws exercise the tie-free path.
        let scores: Vec<f64> = if done % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| normal(&mut rng)).collect()
        };
        let diff = (auc_midrank(&scores, &labels).expect("both classes") - brute_auc(&scores, &labels)).abs();
        worst = worst.max(diff);
        done += 1;
    }
    Verdict { pass: worst <= AUC_TOLERANCE, detail: format!("max |midrank - brute force| = {worst:.3e} over {done} instances") }
}

/// Paired scores with equal (`shift_b = 0`) or weaker second arm.
fn paired_instance(rng: &mut Rng, rho: f64, shift_b: f64) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let labels: Vec<u8> = (0..PAIRED_N).map(|i| (i % 2) as u8).collect();
    let mut a = Vec::with_capacity(PAIRED_N);
    let mut b = Vec::with_capacity(PAIRED_N);
    for &y in &labels {
        let shared = normal(rng);
        let ea = shared * rho.sqrt() + normal(rng) * (1.0 - rho).sqrt();
        let eb = shared * rho.sqrt() + normal(rng) * (1.0 - rho).sqrt();
        a.push(y as f64 + ea);
        b.push(y as f64 * (1.0 - shift_b) + eb);
    }
    (a, b, labels)
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample factor.
fn ks_p_value(sample: &mut [f64]) -> (f64, f64) {
    sample.sort_unstable_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    for (i, &p) in sample.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / n - p).max(p - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
        q += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, q.clamp(0.0, 1.0))
}

fn criterion_delong() -> Verdict {
    let mut rng = rng_from(4);
    let mut nulls: Vec<f64> = (0..KS_DATASETS)
        .map(|_| {
            let (a, b, y) = paired_instance(&mut rng, 0.5, 0.0);
            delong_paired_test(&a, &b, &y).expect("valid").p_value
        })
        .collect();
    let (d, ks_p) = ks_p_value(&mut nulls);

    let alphas = [0.01, 0.05, 0.1];
    let mut agree = [0usize; 3];
    for i in 0..AGREEMENT_INSTANCES {
        let rho = rng.random_range(0.0..0.8);
        let shift = if i % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.6) };
        let (a, b, y) = paired_instance(&mut rng, rho, shift);
        let p_delong = delong_paired_test(&a, &b, &y).expect("valid").p_value;
        let p_perm = permutation_oracle(&a, &b, &y, PERMUTATION_ROUNDS, derive_seed(5, i as u64)).expect("valid");
        for (k, &alpha) in alphas.iter().enumerate() {
            agree[k] += ((p_delong < alpha) == (p_perm < alpha)) as usize;
        }
    }
    let fractions: Vec<f64> = agree.iter().map(|&c| c as f64 / AGREEMENT_INSTANCES as f64).collect();
    let pass = ks_p > KS_LEVEL && fractions.iter().all(|&f| f >= AGREEMENT_MIN);
    Verdict {
        pass,
        detail: format!(
            "KS D = {d:.4}, p = {ks_p:.3} (> {KS_LEVEL}); agreement at alpha 0.01/0.05/0.1 = {:.3}/{:.3}/{:.3} (>= {AGREEMENT_MIN})",
            fractions[0], fractions[1], fractions[2]
        ),
    }
}

fn coverage_spec() -> ScmSpec {
    ScmSpec {
        p: 5,
        group_width: 2,
        causal_set: vec![1, 2],
        env_dim: 3,
        env_to_x_strength: vec![1.0; 5],
        x_noise_scale: 0.3,
        link: Link::LinearLogit,
        noise: NoiseFamily::Logistic,
        signal: 1.5,
        y_descendant_set: vec![],
        descendant_strength: 1.0,
        event_shift_scale: 0.3,
        env_to_y_strength: 0.0,
        n_regions: 5,
        region_spread: 1.0,
        seed: 2024,
    }
}

fn criterion_coverage() -> Verdict {
    let options = CoverageOptions {
        runs: COVERAGE_RUNS,
        alpha: 0.05,
        min_size: 1,
        n_events: 50,
        obs_per_event: 10,
        k_folds: 5,
    };
    let report = coverage_experiment(&coverage_spec(), &options, &ForestConfig::default()).expect("coverage runs");
    let covered = report.runs.iter().filter(|r| r.covered).count();
    let empty = report.runs.iter().filter(|r| r.intersection.is_empty()).count();
    Verdict {
        pass: covered >= COVERAGE_MIN,
        detail: format!("{covered}/{COVERAGE_RUNS} runs with intersection inside S* (>= {COVERAGE_MIN}); {empty} empty"),
    }
}

fn criterion_greedy() -> Verdict {
    let mut hits = 0;
    for run in 0..GREEDY_RUNS as u64 {
        let spec = ScmSpec { p: 6, env_to_x_strength: vec![1.0; 6], seed: derive_seed(77, run), ..coverage_spec() };
        let sample = sample_scm(&spec, 50, 10).expect("sample");
        let folds = event_folds(&sample.table, 5, run).expect("folds");
        let tester = ForestCiTest::new(&sample.table, &folds, ForestConfig::default().with_seed(run));
        let trace = greedy_icp(&tester, &sample.table.group_names()).expect("trace");
        // The exclusion order already ends with the final group.
        let order = trace.exclusion_order();
        let tail: BTreeSet<String> = order[order.len() - 3..].iter().cloned().collect();
        hits += (tail.contains("x1") && tail.contains("x2")) as usize;
    }
    Verdict {
        pass: hits >= GREEDY_MIN,
        detail: format!("causal groups in the last 3 positions in {hits}/{GREEDY_RUNS} runs (>= {GREEDY_MIN})"),
    }
}

fn random_block(rng: &mut Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| normal(rng))
}

/// Kernel matrix from scratch: population standardization, median of all
/// pairwise distances, Gaussian kernel.
fn oracle_kernel(x: &Array2<f64>) -> Vec<Vec<f64>> {
    let (n, d) = x.dim();
    let mut z = x.clone();
    for c in 0..d {
        let mean = (0..n).map(|i| x[[i, c]]).sum::<f64>() / n as f64;
        let sd = ((0..n).map(|i| (x[[i, c]] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[[i, c]] = (x[[i, c]] - mean) / sd;
        }
    }
    let dist = |i: usize, j: usize| (0..d).map(|c| (z[[i, c]] - z[[j, c]]).powi(2)).sum::<f64>().sqrt();
    let mut all: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).collect();
    all.sort_unstable_by(f64::total_cmp);
    let m = all.len();
    let sigma = if m % 2 == 1 { all[m / 2] } else { (all[m / 2 - 1] + all[m / 2]) / 2.0 };
    (0..n).map(|i| (0..n).map(|j| (-dist(i, j).powi(2) / (2.0 * sigma * sigma)).exp()).collect()).collect()
}

/// trace(K H L H) / (n - 1)^2 expanded into plain double and triple sums.
fn oracle_hsic(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let k = oracle_kernel(a);
    let l = oracle_kernel(b);
    let n = k.len();
    let nf = n as f64;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            t1 += k[i][j] * l[i][j];
            t2 += k[i][j] * l[i].iter().sum::<f64>();
        }
    }
    let sk: f64 = k.iter().flatten().sum();
    let sl: f64 = l.iter().flatten().sum();
    (t1 - 2.0 * t2 / nf + sk * sl / (nf * nf)) / ((nf - 1.0) * (nf - 1.0))
}

fn criterion_hsic() -> Verdict {
    let mut rng = rng_from(7);
    let a = random_block(&mut rng, 300, 3);
    let self_dev = (normalized_hsic(a.view(), a.view()).expect("valid") - 1.0).abs();
    let x = random_block(&mut rng, 500, 2);
    let y = random_block(&mut rng, 500, 2);
    let independent = normalized_hsic(x.view(), y.view()).expect("valid");
    let mut gram_dev = 0.0f64;
    for n in [8usize, 20, 35, 50] {
        let a = random_block(&mut rng, n, 2);
        let b = a.slice(s![.., 0..1]).mapv(|v| v.powi(3)) + random_block(&mut rng, n, 1);
        gram_dev = gram_dev.max((hsic_biased(a.view(), b.view()).expect("valid") - oracle_hsic(&a, &b)).abs());
    }
    let pass = self_dev <= HSIC_SELF_TOLERANCE && independent < HSIC_INDEPENDENT_MAX && gram_dev <= HSIC_GRAM_TOLERANCE;
    Verdict {
        pass,
        detail: format!(
            "|self - 1| = {self_dev:.2e}; independent = {independent:.4} (< {HSIC_INDEPENDENT_MAX}); max |gram - brute force| = {gram_dev:.2e}"
        ),
    }
}

fn criterion_curve() -> Verdict {
    let table = env_proxy_table(100, 10, 0).expect("table");
    let curve =
        generalization_curve(&table, &["proxy".to_string()], &ForestConfig::default(), &[1, 2, 3], 5).expect("curve");
    let spatial_change = (curve[1].mean_auc_spatial - curve[0].mean_auc_spatial).abs();
    let event_drop = curve[0].mean_auc_event - curve[1].mean_auc_event;
    Verdict {
        pass: spatial_change < SPATIAL_CHANGE_MAX && event_drop > EVENT_DROP_MIN,
        detail: format!(
            "spatial AUC {:.4} -> {:.4} (|change| {spatial_change:.4} < {SPATIAL_CHANGE_MAX}); event AUC {:.4} -> {:.4} (drop {event_drop:.4} > {EVENT_DROP_MIN})",
            curve[0].mean_auc_spatial, curve[1].mean_auc_spatial, curve[0].mean_auc_event, curve[1].mean_auc_event
        ),
    }
}

fn icp(args: &[String]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_icp")).args(args).output().expect("spawn icp")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("out dir") {
        let path = entry.expect("entry").path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).expect("read"));
    }
    out
}

fn without_clock(report: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(report).expect("report json");
    v.as_object_mut().expect("object").remove("wall_clock_seconds");
    v
}

fn flag(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

fn push_flags(obj: &serde_json::Map<String, Value>, args: &mut Vec<String>) {
    for (k, v) in obj {
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag(k)),
            Value::Object(inner) => push_flags(inner, args),
            Value::Array(items) => {
                args.push(flag(k));
                args.push(items.iter().map(|i| i.as_str().expect("string items").to_string()).collect::<Vec<_>>().join(","));
            }
            Value::String(s) => args.extend([flag(k), s.clone()]),
            Value::Number(n) => args.extend([flag(k), n.to_string()]),
        }
    }
}

/// Command line reconstructed from the config echoed in a report.
fn replay_args(report: &[u8]) -> Vec<String> {
    let v: Value = serde_json::from_slice(report).expect("report json");
    let config = &v["config"];
    let mut command = config["command"].as_object().expect("command").clone();
    let name = command.remove("name").expect("name").as_str().expect("str").to_string();
    let mut args = vec![name];
    push_flags(&command, &mut args);
    push_flags(config["common"].as_object().expect("common"), &mut args);
    args
}

fn write_aggregate_inputs(dir: &Path) -> [PathBuf; 3] {
    let mut rng = rng_from(9);
    let mut grids = String::from("obs_id,variable,v0,v1,v2,v3\n");
    let mut obs = String::from("obs_id,event_id,label,env_date\n");
    let mut events = String::from("event_id,lat,lon\n");
    for e in 0..6 {
        events.push_str(&format!("e{e},{},{}\n", 30.0 + e as f64, -120.0 + 2.0 * e as f64));
        for o in 0..3 {
            let id = format!("e{e}_{o}");
            let vals: Vec<String> = (0..4).map(|_| format!("{:.3}", normal(&mut rng))).collect();
            grids.push_str(&format!("{id},t2m,{}\n", vals.join(",")));
            let cats: Vec<&str> = (0..4).map(|_| if rng.random_bool(0.5) { "forest" } else { "grass" }).collect();
            grids.push_str(&format!("{id},landcover,{}\n", cats.join(",")));
            obs.push_str(&format!("{id},e{e},{},{}\n", (e + o) % 2, 100 + e));
        }
    }
    let paths = [dir.join("grids.csv"), dir.join("events.csv"), dir.join("obs.csv")];
    for (p, body) in paths.iter().zip([grids, events, obs]) {
        fs::write(p, body).expect("write input");
    }
    paths
}

fn criterion_cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let spec = root.join("spec.json");
    fs::write(
        &spec,
        r#"{"p":4,"group_width":2,"causal_set":[1,2],"env_dim":3,"env_to_x_strength":[1,1,1,1],
            "x_noise_scale":0.3,"link":"linear-logit","noise":"logistic","event_shift_scale":0.3}"#,
    )
    .expect("spec");
    let clusters = root.join("clusters.json");
    fs::write(&clusters, r#"[["x1"],["x2","x3"],["x3","x4"]]"#).expect("clusters");
    let [grids, events, obs] = write_aggregate_inputs(root);
    let p = |p: &Path| p.display().to_string();
    let out = |name: &str| p(&root.join(name));
    let features = root.join("synth/features.csv");
    let small = ["--trees", "15", "--seed", "11"];

    let mut runs: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth", "--spec", &p(&spec), "--events", "20", "--obs", "6", "--out-dir", &out("synth")]
            .into_iter().map(String::from).collect()),
    ];
    let f = p(&features);
    let mut add = |name: &'static str, args: &[&str]| {
        let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        v.extend(["--out-dir".to_string(), out(name)]);
        v.extend(small.iter().map(|s| s.to_string()));
        runs.push((name, v));
    };
    add("aggregate", &["aggregate", "--grids", &p(&grids), "--events", &p(&events), "--obs", &p(&obs), "--out", &out("aggregated.csv")]);
    add("folds-event", &["folds", "--features", &f, "--scheme", "event", "--k", "4"]);
    add("folds-spatial", &["folds", "--features", &f, "--scheme", "spatial", "--k", "4"]);
    add("greedy", &["greedy", "--features", &f, "--alpha", "0.05", "--curve", "--curve-seeds", "2"]);
    add("exhaustive", &["exhaustive", "--features", &f, "--base", "x1,x2,x3,x4", "--min-size", "2"]);
    add("cluster-icp", &["cluster-icp", "--features", &f, "--clusters", &p(&clusters), "--min-size", "2"]);
    add("hsic", &["hsic", "--features", &f, "--threshold", "0.25"]);
    add("coverage", &["coverage", "--spec", &p(&spec), "--runs", "20", "--events", "10", "--obs", "4", "--k", "3"]);

    let mut failures = Vec::new();
    let mut files = 0;
    for (name, args) in &runs {
        let first = icp(args);
        if !first.status.success() {
            failures.push(format!("{name}: {}", String::from_utf8_lossy(&first.stderr).trim()));
            continue;
        }
        let dir = root.join(name);
        let mut a = snapshot(&dir);
        if *name == "aggregate" {
            a.insert("aggregated.csv".into(), fs::read(root.join("aggregated.csv")).expect("aggregated"));
        }
        let replay = replay_args(&a["report.json"]);
        let second = icp(&replay);
        if !second.status.success() {
            failures.push(format!("{name} replay: {}", String::from_utf8_lossy(&second.stderr).trim()));
            continue;
        }
        let mut b = snapshot(&dir);
        if *name == "aggregate" {
            b.insert("aggregated.csv".into(), fs::read(root.join("aggregated.csv")).expect("aggregated"));
        }
        if a.keys().ne(b.keys()) {
            failures.push(format!("{name}: different file sets"));
            continue;
        }
        for (file, bytes) in &a {
            files += 1;
            let same = if file == "report.json" {
                without_clock(bytes) == without_clock(&b[file])
            } else {
                *bytes == b[file]
            };
            if !same {
                failures.push(format!("{name}/{file} differs"));
            }
        }
    }
    Verdict {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} commands replayed from their reports, {files} files identical", runs.len())
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        check(1, "subset combinatorics", secs(1), criterion_subsets),
        check(2, "cluster union dedup", secs(1), criterion_cluster_unions),
        check(3, "AUC vs brute force", secs(10), criterion_auc),
        check(4, "DeLong calibration", secs(5 * 60), criterion_delong),
        check(5, "ICP coverage", secs(15 * 60), criterion_coverage),
        check(6, "greedy sanity", secs(10 * 60), criterion_greedy),
        check(7, "HSIC identities", secs(60), criterion_hsic),
        check(8, "generalization curve shape", secs(5 * 60), criterion_curve),
        check(9, "CLI determinism", secs(10 * 60), criterion_cli_determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
