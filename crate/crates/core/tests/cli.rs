use std::path::Path;
use std::process::{Command, Output};

use tdv::io::{load_field, save_field};
use tdv::{Grid, TensorField};

fn tdv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdv"))
        .args(args)
        .current_dir(dir)
        .env_remove("TDV_THREADS")
        .output()
        .unwrap()
}

#[test]
fn verify_suite_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdv(&["verify", "--grid", "8x8", "--trials", "100", "--seed", "7"], dir.path());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{table}");
    for name in ["adjointness", "transfer", "homogeneity", "kernel", "reduction"] {
        assert!(table.lines().any(|l| l.starts_with(name) && l.ends_with("pass")), "{table}");
    }
}

#[test]
fn constant_image_is_returned_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let f = TensorField::constant(Grid::new(9, 7).unwrap(), 0, &[0.3]).unwrap();
    save_field(dir.path().join("in.tdvf"), &f).unwrap();
    let out = tdv(&["denoise", "--order", "2", "--alpha", "1,2", "-i", "in.tdvf", "-o", "out.tdvf"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_field(dir.path().join("out.tdvf")).unwrap(), f);
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iter,primal_energy,gap"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["config"]["alpha"], serde_json::json!([1.0, 2.0]));
}

#[test]
fn affine_image_has_zero_second_order_value() {
    let dir = tempfile::tempdir().unwrap();
    let f = TensorField::scalar_fn(Grid::new(8, 8).unwrap(), |r, c| 0.05 * c as f64 + 0.08 * r as f64);
    save_field(dir.path().join("ramp.pgm"), &f).unwrap();
    save_field(dir.path().join("ramp.tdvf"), &f).unwrap();
    let out = tdv(&["tdv-eval", "--order", "2", "--alpha", "1,1", "-i", "ramp.tdvf"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let value: f64 = text.lines().next().unwrap().strip_prefix("tdv ").unwrap().parse().unwrap();
    assert!(value <= 1e-6, "{text}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let f = TensorField::scalar_fn(Grid::new(16, 16).unwrap(), |r, c| ((r * c) % 5) as f64 / 5.0);
    save_field(dir.path().join("in.tdvf"), &f).unwrap();
    let run = |name: &str| {
        let out = tdv(
            &[
                "denoise", "--noise", "0.1", "--seed", "5", "--anisotropy", "structure:1,2,0.5", "--max-iters", "300",
                "--allow-nonconverged", "-i", "in.tdvf", "-o", name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a.tdvf");
    run("b.tdvf");
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.tdvf"), read("b.tdvf"));
    assert_eq!(read("a.csv"), read("b.csv"));
}

#[test]
fn nonconvergence_and_bad_input_fail() {
    let dir = tempfile::tempdir().unwrap();
    let f = TensorField::scalar_fn(Grid::new(8, 8).unwrap(), |r, c| ((r + 2 * c) % 3) as f64);
    save_field(dir.path().join("in.tdvf"), &f).unwrap();
    let capped = tdv(&["denoise", "--max-iters", "3", "--gap-tol", "1e-12", "-i", "in.tdvf", "-o", "o.tdvf"], dir.path());
    assert!(!capped.status.success());
    assert!(dir.path().join("o.json").exists());

    let missing = tdv(&["denoise", "-i", "nope.pgm", "-o", "o.pgm"], dir.path());
    assert!(!missing.status.success());

    let bad_alpha = tdv(&["denoise", "--order", "2", "--alpha", "1", "-i", "in.tdvf", "-o", "x.tdvf"], dir.path());
    assert_eq!(bad_alpha.status.code(), Some(2));
    assert!(!dir.path().join("x.tdvf").exists());
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let f = TensorField::constant(Grid::new(4, 4).unwrap(), 0, &[0.5]).unwrap();
    save_field(dir.path().join("in.tdvf"), &f).unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_tdv"))
            .args(["denoise", "-i", "in.tdvf", "-o", "o.tdvf"])
            .current_dir(dir.path())
            .env("TDV_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("2").status.success());
    let bad = run("zero");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("TDV_THREADS"));
}
