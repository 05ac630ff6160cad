use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsep::separator::checkpoint::Checkpoint;
use qsep::training::format;

fn qsep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsep"))
        .current_dir(dir)
        .args(args)
        .env_remove("QSEP_THREADS")
        .output()
        .expect("spawn qsep")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = qsep(dir, args);
    assert!(
        out.status.success(),
        "qsep {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn gen_writes_requested_family() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen", "product", "100", "--seed", "1", "--out", "p.qsd"]);
    let ds = format::load(&dir.path().join("p.qsd")).unwrap();
    assert_eq!(ds.len(), 100);
    assert!(ds.records.iter().all(|r| r.label.klass.name() == "product"));
    assert!(dir.path().join("p.manifest.json").exists());

    ok(dir.path(), &["gen", "s-pure", "200", "--seed", "2", "--out", "s.qsd"]);
    let ds = format::load(&dir.path().join("s.qsd")).unwrap();
    let entangled = ds.records.iter().filter(|r| r.label.klass.name() == "entangled").count();
    assert_eq!((ds.len(), entangled), (200, 100));
}

#[test]
fn gen_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.qsd", "b.qsd"] {
        ok(dir.path(), &["gen", "mixed-ent", "30", "--seed", "9", "--out", name]);
    }
    ok(dir.path(), &["gen", "mixed-ent", "30", "--seed", "10", "--out", "c.qsd"]);
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.qsd"), read("b.qsd"));
    assert_ne!(read("a.qsd"), read("c.qsd"));
}

#[test]
fn bad_input_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = qsep(dir.path(), &["eval", "--model", "baseline", "--data", "missing.qsd", "--label", "discord", "--out", "e"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(files(dir.path()).is_empty());

    let out = qsep(dir.path(), &["gen", "nonsense", "5", "--out", "x.qsd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(files(dir.path()).is_empty());

    ok(dir.path(), &["gen", "product", "20", "--out", "p.qsd"]);
    let before = files(dir.path());
    let out = qsep(dir.path(), &["eval", "--model", "baseline", "--data", "p.qsd", "--label", "entanglement", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(files(dir.path()), before);
}

#[test]
fn train_then_eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "train", "64", "--seed", "1", "--out", "train.qsd"]);
    ok(d, &["gen", "val", "32", "--seed", "1", "--out", "val.qsd"]);
    ok(d, &["gen", "s-mixed", "60", "--seed", "3", "--out", "test.qsd"]);
    ok(
        d,
        &["train", "--train", "train.qsd", "--val", "val.qsd", "--out", "m.ckpt", "--epochs", "1", "--nk", "2", "--seed", "4"],
    );
    let ck = Checkpoint::load(&d.join("m.ckpt")).unwrap();
    assert_eq!(ck.params.config().n_k, 2);
    let losses = std::fs::read_to_string(d.join("m.losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);

    let eval = |prefix: &str| {
        ok(
            d,
            &["eval", "--checkpoint", "m.ckpt", "--data", "test.qsd", "--label", "discord", "--tau", "0.02", "--out", prefix],
        );
        ["sweep", "means", "confusion"].map(|s| std::fs::read(d.join(format!("{prefix}.{s}.csv"))).unwrap())
    };
    assert_eq!(eval("e1"), eval("e2"));

    ok(d, &["kernels", "--checkpoint", "m.ckpt", "--out", "k.csv"]);
    assert!(std::fs::read_to_string(d.join("k.csv")).unwrap().starts_with("# qsep kernels"));
}

#[test]
fn product_only_training_without_fc_moves_kernels_to_identity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "train", "400", "--seed", "5", "--out", "train.qsd"]);
    ok(d, &["gen", "val", "100", "--seed", "5", "--out", "val.qsd"]);
    ok(
        d,
        &[
            "train", "--train", "train.qsd", "--val", "val.qsd", "--out", "m.ckpt", "--epochs", "4", "--nk", "2", "--no-fc",
            "--subset", "Prod", "--seed", "6",
        ],
    );
    let text = std::fs::read_to_string(d.join("m.losses.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    let dev = |row: &[&str]| row[3].parse::<f64>().unwrap();
    let val = |row: &[&str]| row[2].parse::<f64>().unwrap();
    let best = rows[1..].iter().min_by(|a, b| val(a).total_cmp(&val(b))).unwrap();
    assert!(dev(best) < dev(&rows[0]), "deviation {} -> {}", dev(&rows[0]), dev(best));
}

#[test]
fn map_has_full_grid_and_all_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["map", "--model", "baseline", "--grid", "101", "--tau", "0.01", "--out", "m"]);
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 101 * 101);
    let mut classes: Vec<&str> = rows.iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    classes.sort();
    classes.dedup();
    assert_eq!(classes.len(), 4);

    let pgm = std::fs::read_to_string(d.join("m.pgm")).unwrap();
    let header: Vec<&str> = pgm
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace)
        .take(3)
        .collect();
    assert_eq!(header, ["P2", "101", "101"]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"seed": 3, "gen": {"kind": "product", "count": 5, "out": "a.qsd"}}"#,
    )
    .unwrap();
    ok(d, &["--config", "cfg.json", "gen"]);
    assert_eq!(format::load(&d.join("a.qsd")).unwrap().len(), 5);
    ok(d, &["--config", "cfg.json", "gen", "zd", "7", "--out", "b.qsd"]);
    let b = format::load(&d.join("b.qsd")).unwrap();
    assert_eq!(b.len(), 7);
    assert!(b.records.iter().all(|r| !r.label.klass.is_discordant()));

    std::fs::write(d.join("bad.json"), r#"{"gen": {"colour": 1}}"#).unwrap();
    assert_eq!(qsep(d, &["--config", "bad.json", "gen"]).status.code(), Some(2));
}

#[test]
fn verify_accepts_generated_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen", "s-mixed", "40", "--seed", "8", "--out", "t.qsd"]);
    ok(dir.path(), &["verify", "--data", "t.qsd", "--fraction", "0.5"]);
}
