//! End-to-end tests of the `ohsl` binary: the full pipeline on a small
//! synthetic dataset, reproducibility of artifacts, engine agreement, and
//! the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ohsl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ohsl"))
}

fn run(args: &[&str]) -> Output {
    ohsl().args(args).output().expect("failed to spawn ohsl")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "ohsl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("no exit code")
}

fn s(path: &Path) -> String {
    path.to_str().expect("non-utf8 temp path").to_string()
}

/// Runs synth → init-hash → stream in `dir` and returns the artifact paths:
/// (features, labels, hash, model, db).
fn pipeline(dir: &Path, symmetric: bool) -> (PathBuf, PathBuf, PathBuf, PathBuf, PathBuf) {
    let features = dir.join("points.ohfv");
    let labels = dir.join("points.labels");
    let hash = dir.join("hash.bin");
    let model = dir.join("model.bin");
    let db = dir.join("codes.bin");
    ok(&[
        "synth",
        "--classes", "4",
        "--dim", "16",
        "--points", "800",
        "--noise", "1.0",
        "--seed", "3",
        "--features", &s(&features),
        "--labels", &s(&labels),
    ]);
    ok(&[
        "init-hash",
        "--features", &s(&features),
        "--bits", "16",
        "--sample", "200",
        "--seed", "3",
        "--out", &s(&hash),
    ]);
    let (f, l, h, m, d) = (s(&features), s(&labels), s(&hash), s(&model), s(&db));
    let mut stream = vec![
        "stream",
        "--features", &f,
        "--labels", &l,
        "--hash-model", &h,
        "--C", "0.01",
        "--l-mult", "3",
        "--chunk", "250",
        "--seed", "3",
        "--out-model", &m,
        "--out-db", &d,
    ];
    if symmetric {
        stream.push("--symmetric");
    }
    ok(&stream);
    (features, labels, hash, model, db)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn full_pipeline_query_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (features, labels, _hash, model, db) = pipeline(dir.path(), false);

    for name in [
        "points.ohfv",
        "points.labels",
        "hash.bin",
        "model.bin",
        "codes.bin",
        "points.ohfv.manifest.json",
        "hash.bin.manifest.json",
        "model.bin.manifest.json",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }

    let ranking = dir.path().join("ranking.tsv");
    ok(&[
        "query",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--k", "5",
        "--out", &s(&ranking),
    ]);
    let table = String::from_utf8(read(&ranking)).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("query\trank\tid\tscore"));
    // 800 queries x 5 hits, ranks cycling 1..=5.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 800 * 5);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 4, "bad row: {row}");
        assert_eq!(cols[0].parse::<usize>().unwrap(), i / 5);
        assert_eq!(cols[1].parse::<usize>().unwrap(), i % 5 + 1);
        cols[3].parse::<f64>().expect("score column must be a number");
    }
    assert!(ranking.with_extension("tsv.manifest.json").exists());

    let eval = ok(&[
        "eval",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--query-labels", &s(&labels),
        "--k", "10",
    ]);
    let metrics = String::from_utf8(eval.stdout).unwrap();
    assert!(metrics.starts_with("metric\tvalue\n"), "got: {metrics}");
    let map_line = metrics
        .lines()
        .find(|l| l.starts_with("map\t"))
        .expect("no map line");
    let map: f64 = map_line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(map > 0.0 && map <= 1.0, "mAP out of range: {map}");
    assert!(metrics.contains("precision_at_10\t"));
    assert!(metrics.contains("queries_evaluated\t800"));
}

#[test]
fn rerun_reproduces_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (features, labels, hash, model, db) = pipeline(dir.path(), false);
    let first: Vec<Vec<u8>> = [&features, &labels, &hash, &model, &db]
        .iter()
        .map(|p| read(p))
        .collect();
    let first_manifest = read(&dir.path().join("model.bin.manifest.json"));

    // Same seeds, same paths: every artifact and manifest must come back
    // byte-identical (manifests hold no timestamps).
    let (features2, labels2, hash2, model2, db2) = pipeline(dir.path(), false);
    let second: Vec<Vec<u8>> = [&features2, &labels2, &hash2, &model2, &db2]
        .iter()
        .map(|p| read(p))
        .collect();
    assert_eq!(first, second, "rerun changed an artifact");
    assert_eq!(
        first_manifest,
        read(&dir.path().join("model.bin.manifest.json")),
        "rerun changed the stream manifest"
    );
}

#[test]
fn scan_and_multi_index_agree_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _labels, _hash, model, db) = pipeline(dir.path(), false);
    let a = dir.path().join("scan.tsv");
    let b = dir.path().join("multi.tsv");
    ok(&[
        "query",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--k", "20",
        "--engine", "scan",
        "--out", &s(&a),
    ]);
    ok(&[
        "query",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--k", "20",
        "--engine", "multi-index",
        "--segments", "4",
        "--out", &s(&b),
    ]);
    assert_eq!(read(&a), read(&b), "multi-index diverged from the scan");
}

#[test]
fn hamming_engine_ranks_with_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _labels, hash, model, db) = pipeline(dir.path(), false);
    let out = dir.path().join("hamming.tsv");
    ok(&[
        "query",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--k", "3",
        "--engine", "hamming",
        "--hash-model", &s(&hash),
        "--out", &s(&out),
    ]);
    let table = String::from_utf8(read(&out)).unwrap();
    assert_eq!(table.lines().count(), 1 + 800 * 3);
}

#[test]
fn sym_engine_needs_a_symmetric_model() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _labels, hash, model, db) = pipeline(dir.path(), false);

    // Asymmetric model + sym engine: artifacts do not fit together.
    assert_eq!(
        code(&[
            "query",
            "--db", &s(&db),
            "--model", &s(&model),
            "--queries", &s(&features),
            "--engine", "sym",
            "--hash-model", &s(&hash),
        ]),
        4
    );

    // A --symmetric training run makes the same invocation work.
    let sym_dir = tempfile::tempdir().unwrap();
    let (sf, _sl, sh, sm, sdb) = pipeline(sym_dir.path(), true);
    ok(&[
        "query",
        "--db", &s(&sdb),
        "--model", &s(&sm),
        "--queries", &s(&sf),
        "--engine", "sym",
        "--hash-model", &s(&sh),
    ]);
    let eval = ok(&[
        "eval",
        "--db", &s(&sdb),
        "--model", &s(&sm),
        "--queries", &s(&sf),
        "--query-labels", &s(&sym_dir.path().join("points.labels")),
        "--engine", "sym",
        "--hash-model", &s(&sh),
    ]);
    let metrics = String::from_utf8(eval.stdout).unwrap();
    assert!(metrics.contains("map\t"));
}

#[test]
fn k_zero_emits_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _labels, _hash, model, db) = pipeline(dir.path(), false);
    let out = ok(&[
        "query",
        "--db", &s(&db),
        "--model", &s(&model),
        "--queries", &s(&features),
        "--k", "0",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "query\trank\tid\tscore\n");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _labels, _hash, model, db) = pipeline(dir.path(), false);

    // Unknown flag and violated flag requirements are usage errors.
    assert_eq!(code(&["query", "--nope"]), 2);
    assert_eq!(
        code(&[
            "query",
            "--db", &s(&db),
            "--model", &s(&model),
            "--queries", &s(&features),
            "--engine", "sym",
        ]),
        2,
        "sym without --hash-model must be rejected as usage"
    );

    // Unreadable or malformed data.
    assert_eq!(
        code(&[
            "query",
            "--db", &s(&dir.path().join("no-such-file")),
            "--model", &s(&model),
            "--queries", &s(&features),
        ]),
        3
    );
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a model at all").unwrap();
    assert_eq!(
        code(&[
            "query",
            "--db", &s(&db),
            "--model", &s(&garbage),
            "--queries", &s(&features),
        ]),
        3
    );

    // Mismatched artifacts: an 8-bit hash against the 16-bit database.
    let hash8 = dir.path().join("hash8.bin");
    ok(&[
        "init-hash",
        "--features", &s(&features),
        "--bits", "8",
        "--sample", "200",
        "--seed", "3",
        "--out", &s(&hash8),
    ]);
    assert_eq!(
        code(&[
            "query",
            "--db", &s(&db),
            "--model", &s(&model),
            "--queries", &s(&features),
            "--engine", "hamming",
            "--hash-model", &s(&hash8),
        ]),
        4
    );
}

#[test]
fn version_mentions_the_build() {
    let out = ok(&["--version"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("ohsl "), "got: {text}");
}
