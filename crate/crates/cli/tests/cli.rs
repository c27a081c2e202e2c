use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use csab_cli::{cli_run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn run(args: &[&str]) -> i32 {
    cli_run(std::iter::once("csab").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_csab")).args(args).output().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = binary(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["scan", "split", "train", "eval", "compare", "infer", "saliency", "augment-preview", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from:\n{text}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = binary(&["train"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    assert_eq!(run(&["scan", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["infer", "--ckpt", "x", "--frames", "*.ppm", "--window", "4"]), EXIT_USAGE);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["scan", "--data", s(&dir.path().join("nope"))]), EXIT_DATA);
    assert_eq!(run(&["bench", "--ckpt", s(&dir.path().join("none.ckpt"))]), EXIT_DATA);
    fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(run(&["bench", "--ckpt", s(&dir.path().join("junk.ckpt"))]), EXIT_DATA);
}

#[test]
fn scan_split_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    assert_eq!(run(&["scan", "--data", s(&bundled()), "--out", s(&p("m.tsv"))]), EXIT_OK);
    let manifest = fs::read_to_string(p("m.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 61);

    assert_eq!(run(&["split", "--manifest", s(&p("m.tsv")), "--test-env", "4", "--out-prefix", s(&p("s"))]), EXIT_OK);
    let count = |f: &str| fs::read_to_string(p(f)).unwrap().lines().count() - 1;
    assert_eq!(count("s.test.tsv"), 12);
    assert_eq!(count("s.train.tsv") + count("s.val.tsv"), 48);

    fs::write(p("run.cfg"), "epochs = 50\nbatch_size = 8\nlearning_rate = 0.015\n").unwrap();
    let code = run(&[
        "train", "--manifest", s(&p("m.tsv")), "--test-env", "4", "--config", s(&p("run.cfg")), "--epochs", "3",
        "--head", "plain", "--out", s(&p("model.ckpt")), "--history", s(&p("hist.csv")),
    ]);
    assert_eq!(code, EXIT_OK);
    let history = fs::read_to_string(p("hist.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "flag must override the config file:\n{history}");

    let code = run(&[
        "eval", "--ckpt", s(&p("model.ckpt")), "--manifest", s(&p("m.tsv")), "--subset", "test", "--cm", s(&p("cm.csv")),
        "--out", s(&p("metrics.csv")),
    ]);
    assert_eq!(code, EXIT_OK);
    let metrics = fs::read_to_string(p("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..2], ["test", "12"]);
    let acc: f64 = row[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let cm = fs::read_to_string(p("cm.csv")).unwrap();
    let total: u64 = cm.lines().skip(1).flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap())).sum();
    assert_eq!(total, 12);
}

#[test]
fn train_scans_data_directly() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let code = run(&["train", "--data", s(&bundled()), "--test-env", "0", "--epochs", "1", "--batch", "16", "--out", s(&ckpt)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(run(&["train", "--data", s(&bundled()), "--test-env", "9", "--epochs", "1", "--out", s(&ckpt)]), EXIT_DATA);
}

#[test]
fn infer_saliency_bench_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    assert_eq!(run(&["train", "--data", s(&bundled()), "--test-env", "1", "--epochs", "1", "--out", s(&p("m.ckpt"))]), EXIT_OK);

    let frames = format!("{}/env2/Step1/*.ppm", s(&bundled()));
    assert_eq!(run(&["infer", "--ckpt", s(&p("m.ckpt")), "--frames", &frames, "--window", "1", "--out", s(&p("r.jsonl"))]), EXIT_OK);
    let lines = fs::read_to_string(p("r.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    assert!(lines.lines().all(|l| l.contains("\"probabilities\"")));
    assert_eq!(run(&["infer", "--ckpt", s(&p("m.ckpt")), "--frames", s(&p("none*.ppm"))]), EXIT_DATA);

    let image = bundled().join("env0/Step3/c2e0_0.ppm");
    assert_eq!(run(&["saliency", "--ckpt", s(&p("m.ckpt")), "--image", s(&image), "--class", "Step3", "--out", s(&p("sal.ppm"))]), EXIT_OK);
    let sal = csab::dataset::read_image(&p("sal.ppm")).unwrap();
    assert_eq!((sal.width, sal.height), (32, 32));
    assert!(sal.data.chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    assert_eq!(run(&["saliency", "--ckpt", s(&p("m.ckpt")), "--image", s(&image), "--class", "9", "--out", s(&p("x.ppm"))]), EXIT_USAGE);

    fs::write(p("aug.cfg"), "augment.rotation_deg = 30\n").unwrap();
    let code = run(&["augment-preview", "--config", s(&p("aug.cfg")), "--image", s(&image), "--grid", "2x3", "--out", s(&p("g.ppm"))]);
    assert_eq!(code, EXIT_OK);
    let grid = csab::dataset::read_image(&p("g.ppm")).unwrap();
    assert_eq!((grid.width, grid.height), (3 * 32 + 4, 2 * 32 + 2));
    assert_eq!(run(&["augment-preview", "--image", s(&image), "--grid", "2by3", "--out", s(&p("g.ppm"))]), EXIT_USAGE);

    let out = binary(&["bench", "--ckpt", s(&p("m.ckpt")), "--iters", "10", "--out", s(&p("lat.csv"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("backbone,head,iterations,mean_ms,p50_ms,p95_ms\ntiny,csab,10,"), "{text}");
    assert!(text.contains(csab::infer::REFERENCE_LINE));
    assert_eq!(fs::read_to_string(p("lat.csv")).unwrap().lines().count(), 2);
    assert_eq!(run(&["bench", "--iters", "5"]), EXIT_USAGE);
}

#[test]
fn compare_writes_both_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    assert_eq!(run(&["scan", "--data", s(&bundled()), "--out", s(&p("m.tsv"))]), EXIT_OK);
    let code = run(&[
        "compare", "--manifest", s(&p("m.tsv")), "--test-env", "3", "--epochs", "1", "--batch", "16", "--out", s(&p("t.csv")),
        "--ckpt-dir", s(&p("ck")),
    ]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(p("t.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "model,attention,backbone,epoch,batch,train_acc,val_acc,test_acc");
    assert!(rows[1].starts_with("1,yes,tiny,1,16,"));
    assert!(rows[2].starts_with("2,no,tiny,1,16,"));
    assert!(p("ck/csab.ckpt").exists() && p("ck/plain.ckpt").exists());
}
