use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coaccel::accel::AcceleratorConfig;

fn coaccel(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coaccel"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("COACCEL_OUT")
        .output()
        .expect("spawn coaccel")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn menus_tiny() -> String {
    format!("{}/../../configs/menus_tiny.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn train_eval_plots_and_das() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    stdout(&coaccel(out, &["--name", "t", "train", "--steps", "1500"]));
    let run = out.join("t");
    for f in ["config.toml", "manifest.json", "log.jsonl", "child.net", "child.ckpt", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let net = run.join("child.net");
    let ckpt = run.join("child.ckpt");
    let eval = |name: &str| {
        let args = ["--name", name, "eval", "--net", net.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(), "--episodes", "5"];
        stdout(&coaccel(out, &args));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(name).join("report.json")).unwrap()).unwrap();
        v["score"].clone()
    };
    let (a, b) = (eval("e1"), eval("e2"));
    assert!(a.is_number());
    assert_eq!(a, b);

    stdout(&coaccel(out, &["export-plots", run.to_str().unwrap()]));
    let csv = fs::read_to_string(run.join("plots/score_vs_step.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,mean30_return"));

    let das = stdout(&coaccel(
        out,
        &["--name", "d", "das", "--net", net.to_str().unwrap(), "--menus", &menus_tiny(), "--steps", "300", "--brute-force"],
    ));
    assert!(das.contains("brute force"), "{das}");
    assert!(out.join("d/accel.acc").is_file());
    assert!(out.join("d/phi.csv").is_file());

    let mut acc = AcceleratorConfig::load(&out.join("d/accel.acc")).unwrap();
    let cfg = out.join("d/accel.acc");
    let ok = stdout(&coaccel(out, &["--name", "a", "accel-eval", "--net", net.to_str().unwrap(), "--cfg", cfg.to_str().unwrap()]));
    assert!(ok.contains("FPS"), "{ok}");

    for c in &mut acc.chunks {
        c.pe_rows = 64;
        c.pe_cols = 64;
    }
    let big = out.join("big.acc");
    acc.save(&big).unwrap();
    let o = coaccel(out, &["--name", "b", "accel-eval", "--net", net.to_str().unwrap(), "--cfg", big.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_exits_two_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "format = \"coaccel-run\"\nversion = 1\n\n[search]\nlamda = 0.1\n").unwrap();
    let o = coaccel(tmp.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5") && err.contains("lamda"), "{err}");

    fs::write(&cfg, "format = \"coaccel-run\"\nversion = 1\n\n[search]\nlambda = -1.0\n").unwrap();
    let o = coaccel(tmp.path(), &["--config", cfg.to_str().unwrap(), "search"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
}
