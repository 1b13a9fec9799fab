use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_with_seed_succeeds() {
    let out = dda(&["verify", "--seed", "7"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("3000 auctions, 0 violations"), "{text}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dda(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dda(&["verify", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(dda(&[]).status.code(), Some(1));
    assert_eq!(dda(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_three() {
    assert_eq!(dda(&["run", "--policy", "learned"]).status.code(), Some(3));
    assert_eq!(
        dda(&["run", "--market", "/nonexistent/market.json"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        dda(&["eval", "--checkpoint", "/nonexistent/ck.json"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn run_on_saved_market_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dda(&[
        "--seed",
        "11",
        "--out",
        path(dir.path()),
        "generate",
        "--size",
        "8",
    ]);
    assert!(gen.status.success());
    let market = dir.path().join("market.json");
    for policy in ["vanilla", "random"] {
        let a = dda(&["run", "--market", path(&market), "--policy", policy]);
        let b = dda(&["run", "--market", path(&market), "--policy", policy]);
        assert!(a.status.success());
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn generate_is_seeded() {
    let a = dda(&["--seed", "5", "generate", "--size", "3"]);
    let b = dda(&["--seed", "5", "generate", "--size", "3"]);
    let c = dda(&["--seed", "6", "generate", "--size", "3"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let many: serde_json::Value =
        serde_json::from_slice(&dda(&["generate", "--size", "3", "--count", "4"]).stdout).unwrap();
    assert_eq!(many.as_array().unwrap().len(), 4);
}

#[test]
fn sweep_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "market_sizes = [4, 6]\n\
         episodes_per_cell = 3\n\
         [[policies]]\nkind = \"vanilla\"\n\
         [[policies]]\nkind = \"random\"\n\
         [train]\nrollout_length = 64\nhidden = [8]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let args = |extra: &[&str]| {
        let mut v = vec!["--config", path(&cfg), "--out", path(&out)];
        v.extend_from_slice(extra);
        dda(&v)
    };

    let t = args(&["train", "--size", "4", "--iterations", "2"]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(out.join("checkpoint_n4.json").exists());

    let s = args(&["sweep"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let episodes = fs::read_to_string(out.join("episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 1 + 2 * 3 * 2);
    let curves = fs::read_to_string(out.join("plots/training_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2);
    let first = fs::read(out.join("summary.csv")).unwrap();
    assert!(args(&["sweep"]).status.success());
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), first);

    let ck = out.join("checkpoint_n4.json");
    let e = args(&["eval", "--checkpoint", path(&ck)]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let text = String::from_utf8(e.stdout).unwrap();
    assert!(text.contains("learned/vanilla"), "{text}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "market_sizes = []\n").unwrap();
    assert_eq!(
        dda(&["--config", path(&cfg), "verify", "--markets", "1"])
            .status
            .code(),
        Some(3)
    );
}
