use std::path::Path;

use volseg::cli::run_with;
use volseg::data::{read_mask, write_volume, Mask};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("volseg").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn net_analysis_of_the_full_profile() {
    assert_eq!(ok(&["net", "params", "--net", "seg"]).trim(), "1735521");
    assert_eq!(ok(&["net", "params", "--net", "seg", "--mode", "dense-equivalent"]).trim(), "22508385");
    let rf: Vec<usize> = ok(&["net", "rf", "--net", "seg"])
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(rf.len(), 3);
    assert!(rf.iter().all(|&r| r >= 128), "{rf:?}");
    let layers = ok(&["net", "params", "--net", "loc", "--layers"]);
    assert!(layers.lines().count() > 2);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let (code, _, err) = run(&["net", "params", "--net", "seg", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.contains("--bogus"));
    assert_eq!(run(&["net", "rf"]).0, 2);
    let (code, _, err) = run(&["net", "rf", "--net", "seg", "--set", "no_such_key=1"]);
    assert_eq!(code, 1);
    assert!(err.contains("no_such_key"));
    let (code, _, _) = run(&["eval", "--pred", "/nonexistent/a", "--gt", "/nonexistent/b"]);
    assert_eq!(code, 1);
    assert_eq!(run(&["--threads", "0", "net", "rf", "--net", "loc"]).0, 1);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("phantom"));
}

#[test]
fn phantom_generation_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--profile", "desk", "--seed", "5", "phantom", "gen", "--out", p(&a), "--count", "2"]);
    ok(&["--profile", "desk", "--seed", "5", "phantom", "gen", "--out", p(&b), "--count", "2"]);
    for name in ["phantom_000005.dbv", "phantom_000006.mask.dbv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    assert_ne!(
        std::fs::read(a.join("phantom_000005.dbv")).unwrap(),
        std::fs::read(a.join("phantom_000006.dbv")).unwrap()
    );
    let single = dir.path().join("one.dbv");
    let json = ok(&["--profile", "desk", "--seed", "5", "--json", "phantom", "gen", "--out", p(&single)]);
    let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(std::fs::read(&single).unwrap(), std::fs::read(a.join("phantom_000005.dbv")).unwrap());
    assert!(dir.path().join("one.mask.dbv").is_file());

    // the middle slice exports as PGM
    let slice = dir.path().join("slice.pgm");
    let m = dir.path().join("one.mask.dbv");
    let out = ok(&["export", "slice", "--input", p(&single), "--mask", p(&m), "--out", p(&slice)]);
    assert_eq!(out.lines().count(), 2);
    assert!(std::fs::read(&slice).unwrap().starts_with(b"P5\n"));
}

#[test]
fn eval_of_identical_masks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for i in 0..3usize {
        let m = Mask::from_fn([6, 6, 6], |x, y, z| (x + y + z < 4 + i) as u8);
        write_volume(&m, pred.join(format!("v{i}.dbv"))).unwrap();
        write_volume(&m, gt.join(format!("v{i}.mask.dbv"))).unwrap();
    }
    let report = dir.path().join("r.jsonl");
    let out = ok(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    assert!(out.lines().last().unwrap().starts_with("mean dsc 1.0000 over 3 volumes, 0 failures"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(ok(&["--json", "eval", "--pred", p(&pred), "--gt", p(&gt)]).trim()).unwrap();
    assert_eq!(json["mean_dsc"], 1.0);
}

/// Small nets and short schedules so a full train/infer round trip stays quick.
const SMALL: &[&str] = &[
    "--profile",
    "desk",
    "--set",
    "window=16",
    "--set",
    "box_side=32",
    "--set",
    "loc_examples_per_class=24",
    "--set",
    "loc_epochs=1",
    "--set",
    "loc_batch=8",
    "--set",
    "seg_epochs=1",
    "--set",
    "seg_samples_per_epoch=4",
    "--set",
    "seg_batch=2",
];

fn small(threads: &str, rest: &[&str]) -> String {
    let mut args = SMALL.to_vec();
    args.extend(["--threads", threads]);
    args.extend(rest);
    ok(&args)
}

#[test]
fn train_and_infer_round_trip_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small("1", &["--seed", "11", "phantom", "gen", "--out", p(&data), "--count", "2"]);

    let mut checkpoints = Vec::new();
    for run in ["r1", "r2"] {
        let loc = dir.path().join(run).join("loc.dbvw");
        let seg = dir.path().join(run).join("seg.dbvw");
        let log = dir.path().join(run).join("loc.log");
        small("1", &["train", "loc", "--data", p(&data), "--out", p(&loc), "--log", p(&log), "--max-steps-per-epoch", "3"]);
        small("1", &["train", "seg", "--data", p(&data), "--out", p(&seg)]);
        assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
        checkpoints.push((std::fs::read(&loc).unwrap(), std::fs::read(&seg).unwrap(), loc, seg));
    }
    assert_eq!(checkpoints[0].0, checkpoints[1].0);
    assert_eq!(checkpoints[0].1, checkpoints[1].1);

    let (_, _, loc, seg) = &checkpoints[0];
    let input = data.join("phantom_000011.dbv");
    let out = small("1", &["infer", "localize", "--input", p(&input), "--loc", p(loc), "--loc", p(loc)]);
    assert!(out.starts_with("box anchor"));

    let masks = dir.path().join("pred");
    let report = dir.path().join("report.jsonl");
    small(
        "1",
        &["infer", "e2e", "--input", p(&data), "--loc", p(loc), "--seg", p(seg), "--out", p(&masks), "--report", p(&report), "--gt", p(&data)],
    );
    let pred = read_mask(masks.join("phantom_000011.dbv")).unwrap();
    assert_eq!(pred.dims(), read_mask(data.join("phantom_000011.mask.dbv")).unwrap().dims());
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 2);

    let seg_out = dir.path().join("seg.dbv");
    small("1", &["infer", "segment", "--input", p(&input), "--seg", p(seg), "--anchor", "0,0,0", "--out", p(&seg_out), "--clean"]);
    assert_eq!(read_mask(&seg_out).unwrap().dims(), pred.dims());

    // a checkpoint built for another window side is refused
    let (code, _, err) = run(&["--profile", "desk", "infer", "localize", "--input", p(&input), "--loc", p(loc)]);
    assert_eq!(code, 1);
    assert!(err.contains("--profile"));
}
