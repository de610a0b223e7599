//! End-to-end checks of the `bopo` binary: exit codes, file contracts,
//! determinism and table round trips.

#[allow(dead_code)]
#[path = "../src/table.rs"]
mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use table::{parse_num, Table};

fn bopo(args: &[&str]) -> Output {
    bopo_with_workers(args, 1)
}

fn bopo_with_workers(args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bopo"))
        .args(args)
        .env("BOPO_WORKERS", workers.to_string())
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bopo(args);
    assert!(
        out.status.success(),
        "bopo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY_MODEL: [&str; 6] = ["--width", "16", "--heads", "2", "--layers", "1"];

fn toy_train(out: &Path, seed: &str) -> Vec<String> {
    let mut args: Vec<String> = [
        "train", "--problem", "tsp", "--shapes", "6", "--epochs", "2", "--steps", "4", "--batch", "4",
        "--rollout-b", "8", "--filter-k", "4", "--lr", "1e-3", "--validate-every", "2", "--val-size", "8",
        "--seed", seed, "--out", s(out),
    ]
    .map(String::from)
    .to_vec();
    args.extend(TOY_MODEL.map(String::from));
    args
}

fn train_toy(out: &Path, seed: &str) {
    let args = toy_train(out, seed);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
}

fn column(table: &Table, name: &str) -> Vec<Option<f64>> {
    table.values(name).unwrap().into_iter().map(|c| parse_num(c).unwrap()).collect()
}

#[test]
fn missing_problem_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bopo(&["train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn loss_hyperparameters_must_fit_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        vec!["--loss", "bopo", "--gamma", "1"],
        vec!["--loss", "dpo", "--gamma", "1"],
        vec!["--loss", "sll", "--beta", "0.5"],
        vec!["--loss", "bogus"],
        vec!["--rollout-b", "4", "--filter-k", "8"],
    ] {
        let mut args = vec!["train", "--problem", "tsp", "--out", s(dir.path())];
        args.extend(bad.iter().copied());
        assert_eq!(bopo(&args).status.code(), Some(2), "{bad:?}");
    }
    assert_eq!(bopo(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bopo(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_writes_exactly_three_files_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_toy(&a, "5");
    train_toy(&b, "5");
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["checkpoint.bin", "curve.csv", "manifest.json"]);
    let curve = fs::read(a.join("curve.csv")).unwrap();
    assert_eq!(curve, fs::read(b.join("curve.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());

    // Another worker count and another seed.
    let c = dir.path().join("c");
    let args = toy_train(&c, "5");
    let out = bopo_with_workers(&args.iter().map(String::as_str).collect::<Vec<_>>(), 3);
    assert!(out.status.success());
    assert_eq!(curve, fs::read(c.join("curve.csv")).unwrap());
    let d = dir.path().join("d");
    train_toy(&d, "6");
    assert_ne!(curve, fs::read(d.join("curve.csv")).unwrap());

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["instances"], 2 * 4 * 4 * 8);
    assert_eq!(manifest["config"]["rollouts"], 8);
    assert_eq!(manifest["validation"]["reference"], "held-karp");
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    train_toy(&a, "9");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, manifest["config"].to_string()).unwrap();
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&config), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("curve.csv")).unwrap(), fs::read(b.join("curve.csv")).unwrap());
}

#[test]
fn greedy_eval_is_deterministic_and_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_toy(&run, "1");
    let ckpt = run.join("checkpoint.bin");
    let args = ["eval", "--checkpoint", s(&ckpt), "--benchmark", "generated", "--shape", "7", "--count", "6"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    assert_eq!(first, String::from_utf8(bopo_with_workers(&args, 4).stdout).unwrap());

    let table = Table::parse(&first).unwrap();
    assert_eq!(Table::parse(&table.render()).unwrap(), table);
    assert_eq!(table.header, ["name", "objective", "reference", "gap_percent", "seconds"]);
    assert_eq!(table.rows.len(), 7);
    assert_eq!(table.rows.last().unwrap()[0], "mean");
    let objectives = column(&table, "objective");
    let refs = column(&table, "reference");
    let gaps = column(&table, "gap_percent");
    for i in 0..6 {
        let (o, r) = (objectives[i].unwrap(), refs[i].unwrap());
        assert!(o >= r - 1e-9, "greedy tour shorter than the optimum");
        assert!((gaps[i].unwrap() - (o - r) / r * 100.0).abs() < 1e-9);
    }
    let mean_gap = gaps[..6].iter().map(|g| g.unwrap()).sum::<f64>() / 6.0;
    assert!((gaps[6].unwrap() - mean_gap).abs() < 1e-9);
    assert!(table.values("seconds").unwrap().iter().all(|c| *c == "-"));
}

#[test]
fn more_samples_never_raise_the_mean_gap() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_toy(&run, "2");
    let ckpt = run.join("checkpoint.bin");
    let mean_gap = |n: &str| {
        let text = ok(&[
            "eval", "--checkpoint", s(&ckpt), "--benchmark", "generated", "--shape", "8", "--count", "5", "--mode",
            "sample", "--num-samples", n,
        ]);
        let table = Table::parse(&text).unwrap();
        let gaps = column(&table, "gap_percent");
        (gaps[..5].to_vec(), gaps[5].unwrap())
    };
    let (small, small_mean) = mean_gap("128");
    let (large, large_mean) = mean_gap("512");
    for (a, b) in small.iter().zip(&large) {
        assert!(b.unwrap() <= a.unwrap());
    }
    assert!(large_mean <= small_mean);
}

#[test]
fn augmented_multistart_beats_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_toy(&run, "3");
    let ckpt = run.join("checkpoint.bin");
    let base = ["eval", "--checkpoint", s(&ckpt), "--benchmark", &data("tsp"), "--refs", &data("refs/tsp.csv")];
    let greedy = Table::parse(&ok(&base)).unwrap();
    let mut aug_args = base.to_vec();
    aug_args.push("--aug8");
    let aug = Table::parse(&ok(&aug_args)).unwrap();
    for (g, a) in column(&greedy, "objective").iter().zip(column(&aug, "objective")) {
        assert!(a.unwrap() <= g.unwrap() + 1e-12);
    }
    let mut sample_aug = base.to_vec();
    sample_aug.extend(["--mode", "sample", "--aug8"]);
    assert_eq!(bopo(&sample_aug).status.code(), Some(2));
}

/// Most-work-remaining dispatching replayed by hand: repeatedly start the
/// next operation of the job with the most remaining processing time
/// (lowest index on ties) at the earliest time its job and machine allow.
fn mwr_makespan(text: &str) -> u64 {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let dims: Vec<usize> = lines.next().unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    let (n, m) = (dims[0], dims[1]);
    let jobs: Vec<Vec<(usize, u64)>> = lines
        .take(n)
        .map(|l| {
            let v: Vec<u64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            v.chunks(2).map(|c| (c[0] as usize, c[1])).collect()
        })
        .collect();
    let mut next = vec![0usize; n];
    let mut remaining: Vec<u64> = jobs.iter().map(|j| j.iter().map(|o| o.1).sum()).collect();
    let (mut job_free, mut machine_free) = (vec![0u64; n], vec![0u64; m]);
    for _ in 0..n * m {
        let job = (0..n)
            .filter(|&j| next[j] < m)
            .max_by(|&a, &b| remaining[a].cmp(&remaining[b]).then(b.cmp(&a)))
            .unwrap();
        let (machine, time) = jobs[job][next[job]];
        let end = job_free[job].max(machine_free[machine]) + time;
        job_free[job] = end;
        machine_free[machine] = end;
        remaining[job] -= time;
        next[job] += 1;
    }
    job_free.into_iter().max().unwrap()
}

#[test]
fn mwr_on_ft06_matches_a_hand_replayed_schedule() {
    let ft06 = data("jsp/ft06.txt");
    let expected = mwr_makespan(&fs::read_to_string(&ft06).unwrap()) as f64;
    let text = ok(&["eval", "--pdr", "mwr", "--problem", "jsp", "--benchmark", &ft06, "--refs", &data("refs/jsp.csv")]);
    let table = Table::parse(&text).unwrap();
    assert_eq!(table.rows[0][0], "ft06");
    assert_eq!(column(&table, "objective")[0], Some(expected));
    assert_eq!(column(&table, "reference")[0], Some(55.0));
    let gap = column(&table, "gap_percent")[0].unwrap();
    assert!((gap - (expected - 55.0) / 55.0 * 100.0).abs() < 1e-12);

    let rules = Table::parse(&ok(&["pdr", "--problem", "jsp", "--benchmark", &ft06])).unwrap();
    assert_eq!(column(&rules, "mwr")[0], Some(expected));
    let best = column(&rules, "best")[0].unwrap();
    for rule in ["spt", "mor", "mwr"] {
        assert!(best <= column(&rules, rule)[0].unwrap());
    }
}

#[test]
fn files_without_references_report_no_ref() {
    let text = ok(&["eval", "--pdr", "spt", "--problem", "jsp", "--benchmark", &data("jsp")]);
    let table = Table::parse(&text).unwrap();
    assert_eq!(table.values("reference").unwrap(), ["no-ref", "no-ref"]);
    assert_eq!(table.values("gap_percent").unwrap(), ["-", "-"]);
}

#[test]
fn structured_errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_toy(&run, "4");
    let ckpt = run.join("checkpoint.bin");
    let mismatch = bopo(&["eval", "--checkpoint", s(&ckpt), "--problem", "jsp", "--benchmark", &data("jsp")]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("checkpoint"));

    let missing_refs = bopo(&[
        "eval", "--checkpoint", s(&ckpt), "--benchmark", &data("tsp"), "--refs", s(&dir.path().join("none.csv")),
    ]);
    assert_eq!(missing_refs.status.code(), Some(1));

    let wrong_problem = bopo(&["eval", "--checkpoint", s(&ckpt), "--benchmark", &data("jsp")]);
    assert_eq!(wrong_problem.status.code(), Some(1));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let corrupt = dir.path().join("corrupt.bin");
    fs::write(&corrupt, bytes).unwrap();
    let out = bopo(&["eval", "--checkpoint", s(&corrupt), "--benchmark", &data("tsp")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_tables_feed_back_as_references() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.csv");
    ok(&["oracle", "--problem", "tsp", "--benchmark", &data("tsp"), "--out", s(&refs)]);
    let oracle = Table::parse(&fs::read_to_string(&refs).unwrap()).unwrap();
    let bundled = Table::parse(&fs::read_to_string(data("refs/tsp.csv")).unwrap()).unwrap();
    assert_eq!(oracle.rows, bundled.rows);

    let run = dir.path().join("run");
    train_toy(&run, "5");
    let ckpt = run.join("checkpoint.bin");
    let table = Table::parse(&ok(&[
        "eval", "--checkpoint", s(&ckpt), "--benchmark", &data("tsp"), "--refs", s(&refs),
    ]))
    .unwrap();
    assert!(column(&table, "gap_percent").iter().all(|g| g.unwrap() >= -1e-9));
}

#[test]
fn generated_files_evaluate_like_generated_sets() {
    let dir = tempfile::tempdir().unwrap();
    let files = dir.path().join("files");
    ok(&["generate", "--problem", "jsp", "--shape", "4x3", "--count", "4", "--seed", "3", "--out", s(&files)]);
    let generated = ok(&[
        "pdr", "--problem", "jsp", "--benchmark", "generated", "--shape", "4x3", "--count", "4", "--instance-seed", "3",
    ]);
    let from_files = ok(&["pdr", "--problem", "jsp", "--benchmark", s(&files)]);
    assert_eq!(generated, from_files);
}

#[test]
fn sweep_rows_share_one_budget() {
    let mut args = vec![
        "sweep", "--problem", "tsp", "--shapes", "5", "--batch", "1", "--rollout-b", "32,64,128,256,512", "--filter-k",
        "16", "--budget", "1024", "--val-size", "4", "--validate-every", "1000", "--loss", "bopo,reinforce",
    ];
    args.extend(TOY_MODEL);
    let table = Table::parse(&ok(&args)).unwrap();
    assert_eq!(Table::parse(&table.render()).unwrap(), table);
    assert_eq!(table.rows.len(), 10);
    assert!(table.values("instances").unwrap().iter().all(|c| *c == "1024"));
    assert!(table.values("status").unwrap().iter().all(|c| *c == "ok"));
    let losses = table.values("loss").unwrap();
    assert_eq!(losses.iter().filter(|l| **l == "bopo").count(), 5);
    assert_eq!(losses.iter().filter(|l| **l == "reinforce").count(), 5);
    let peaks: Vec<f64> = column(&table, "peak_bytes").into_iter().map(Option::unwrap).collect();
    assert!(peaks[..5].windows(2).all(|w| w[0] < w[1]), "tape grows with the rollout count");
    assert!(column(&table, "final_gap").iter().all(|g| g.is_some()));

    let mut skip = vec![
        "sweep", "--problem", "tsp", "--shapes", "5", "--batch", "1", "--rollout-b", "8,32", "--filter-k", "16",
        "--budget", "64", "--val-size", "0",
    ];
    skip.extend(TOY_MODEL);
    let table = Table::parse(&ok(&skip)).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows[0][10].starts_with("skipped"));
    assert_eq!(table.rows[1][10], "ok");
}

#[test]
fn plot_renders_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("bopo"), dir.path().join("other"));
    train_toy(&a, "1");
    train_toy(&b, "2");
    let svg = dir.path().join("fig.svg");
    ok(&[
        "plot", "--curve", s(&a.join("curve.csv")), "--curve", s(&b.join("curve.csv")), "--out", s(&svg),
    ]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(text.contains(">bopo<"));
    let missing: PathBuf = dir.path().join("nothing.csv");
    assert_eq!(bopo(&["plot", "--curve", s(&missing)]).status.code(), Some(1));
}
