use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmp"))
        .args(args)
        .env_remove("GMP_THREADS")
        .output()
        .expect("spawn gmp")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_phantoms(dir: &Path, count: usize, empty: usize) {
    let out = gmp(&[
        "phantom",
        "--out",
        s(dir),
        "--count",
        &count.to_string(),
        "--empty",
        &empty.to_string(),
        "--dims",
        "44x96x96",
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `root`, relative path → bytes.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}

#[test]
fn phantom_through_pipeline_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    make_phantoms(tmp.path(), 1, 0);
    let out_dir = tmp.path().join("run");
    let vol = tmp.path().join("volumes/vol000.vol");
    let truth = tmp.path().join("truth/vol000");
    let out = gmp(&["pipeline", s(&vol), s(&out_dir), "--truth", s(&truth), "--keep-intermediates"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "components.json", "config.toml", "manifest.json", "mask", "stages/4_enhanced.vol"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["dice"].is_number());
    assert_eq!(manifest["volume"], "vol000");
}

#[test]
fn missing_input_is_a_load_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gmp(&["pipeline", s(&tmp.path().join("absent.vol")), s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(gmp(&["pipeline", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gmp(&["phantom", "--out", "x", "--pockets", "3..1"]).status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    make_phantoms(tmp.path(), 1, 0);
    let vol = tmp.path().join("volumes/vol000.vol");
    let run = |threads: &str| {
        let dir = tmp.path().join(format!("t{threads}"));
        let out = gmp(&["pipeline", s(&vol), s(&dir), "--threads", threads, "--keep-intermediates"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        // Timings and the thread count legitimately differ.
        fs::remove_file(dir.join("manifest.json")).unwrap();
        tree(&dir)
    };
    let one = run("1");
    let eight = run("8");
    assert!(!one.is_empty());
    assert_eq!(one.len(), eight.len());
    for ((pa, a), (pb, b)) in one.iter().zip(&eight) {
        assert_eq!(pa, pb);
        assert!(a == b, "{} differs between thread counts", pa.display());
    }
}

#[test]
fn threads_env_var_is_honoured() {
    let out = Command::new(env!("CARGO_BIN_EXE_gmp"))
        .args(["pipeline", "--print-config"])
        .env("GMP_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("threads = 3"));

    let out = Command::new(env!("CARGO_BIN_EXE_gmp"))
        .args(["pipeline", "--print-config", "--threads", "5"])
        .env("GMP_THREADS", "3")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("threads = 5"));
}

#[test]
fn printed_config_loads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gmp(&["pipeline", "--print-config", "--weight", "0.25", "--psi", "mean"]);
    assert!(out.status.success());
    let path = tmp.path().join("c.toml");
    fs::write(&path, &out.stdout).unwrap();
    let again = gmp(&["pipeline", "--print-config", "--config", s(&path)]);
    assert!(again.status.success());
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.toml");
    fs::write(&path, "[denoise]\nweigth = 0.1\n").unwrap();
    let out = gmp(&["pipeline", "--print-config", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_commands_chain_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    make_phantoms(t, 1, 1);
    let ok = |args: &[&str]| {
        let out = gmp(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    let vol = t.join("volumes/vol000.vol");
    ok(&["convert", s(&vol), s(&t.join("resized.vol")), "--resize", "192x96"]);
    ok(&["convert", s(&t.join("resized.vol")), s(&t.join("pgm"))]);
    ok(&["denoise", s(&t.join("pgm")), s(&t.join("den.vol")), "--iters", "20"]);
    ok(&["roi", s(&t.join("den.vol")), s(&t.join("roi.vol")), "--height", "96", "--width", "96", "--emit-fit", s(&t.join("fit.json"))]);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.join("fit.json")).unwrap()).unwrap();
    assert!(fit["fit"]["sigma"].as_f64().unwrap() > 0.0);
    ok(&["enhance", s(&t.join("roi.vol")), s(&t.join("enh.vol")), "--extent", "3", "--angles", "4"]);
    ok(&["segment", s(&t.join("enh.vol")), "--source", s(&t.join("roi.vol")), s(&t.join("mask")), "--emit-components", s(&t.join("comp.json"))]);
    assert!(t.join("mask").is_dir());
    ok(&["detect", s(&t.join("enh.vol")), "--enhanced", "--report", s(&t.join("report.json"))]);

    // Full runs for both volumes, then the evaluator over them.
    let preds = t.join("preds");
    for id in ["vol000", "vol001"] {
        ok(&["pipeline", s(&t.join(format!("volumes/{id}.vol"))), s(&preds.join(id))]);
    }
    let out = ok(&[
        "eval",
        "--pred",
        s(&preds),
        "--truth",
        s(&t.join("truth")),
        "--manifest",
        s(&t.join("labels.json")),
        "--out",
        s(&t.join("eval.json")),
        "--table",
        s(&t.join("table.txt")),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["per_volume"].as_array().unwrap().len(), 2);
    assert_eq!(String::from_utf8_lossy(&out.stdout), fs::read_to_string(t.join("table.txt")).unwrap());
}
