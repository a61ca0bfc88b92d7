use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cv2x");

fn manifest(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests").join(name)
}

fn cv2x(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CV2X_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_is_a_config_error() {
    let o = cv2x(&["simulate", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "[scenario]\nhighway_lenght_m = 2000\n").unwrap();
    let o = cv2x(&["analytic", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("highway_lenght_m"), "{}", stderr(&o));
}

#[test]
fn invalid_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("neg.toml");
    fs::write(&path, "[sweep]\ndensities = [-4.0]\n").unwrap();
    let o = cv2x(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_and_validate_checks_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let smoke = manifest("smoke.toml");
    let smoke = smoke.to_str().unwrap();
    for out in [&a, &b] {
        let o = cv2x(&["simulate", "--config", smoke, "--desk-scale", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["ccdf.csv", "prr.csv", "metadata.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let o = cv2x(&["validate", "--config", smoke, "--desk-scale", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(a.join("validation.csv").exists());

    // a different seed resolves to a different hash than the stored outputs
    let o = cv2x(&["validate", "--config", smoke, "--desk-scale", "--seed", "7", "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
}

#[test]
fn seed_env_is_overridden_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = manifest("smoke.toml");
    let run = |env: Option<&str>, flag: Option<&str>, out: &Path| {
        let mut c = Command::new(BIN);
        c.args(["simulate", "--config", smoke.to_str().unwrap(), "--desk-scale", "--replications", "1"])
            .arg("--out")
            .arg(out)
            .env_remove("CV2X_SEED");
        if let Some(e) = env {
            c.env("CV2X_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert!(c.output().unwrap().status.success());
        fs::read_to_string(out.join("metadata.json")).unwrap()
    };
    let env_only = run(Some("99"), None, &dir.path().join("e"));
    let both = run(Some("5"), Some("99"), &dir.path().join("f"));
    assert_eq!(env_only, both);
    assert!(env_only.contains("\"seed\": 99"));
}

#[test]
fn analytic_and_oracle_write_tails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let smoke = manifest("smoke.toml");
    for (cmd, file) in [("analytic", "tail.csv"), ("oracle", "oracle.csv")] {
        let o = cv2x(&[cmd, "--config", smoke.to_str().unwrap(), "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "k,p_t_gt_k");
        assert!(rows[1].starts_with("0,1"));
    }
}
