use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mather-ep"));
    c.env_remove("MATHER_EP_OUTPUT_DIR");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

const SHIFTED_HEAD: &str = r#"
[problem]
kind = "shifted-quadratic"
omega = [0.5]

[grids]
m = 32
mv = 129
cutoff = 4.0
"#;

#[test]
fn bundled_configs_validate() {
    for name in ["quadratic.toml", "pendulum.toml", "pendulum_joint.toml", "shifted.toml"] {
        let out = bin().arg("validate").arg(example(name)).output().unwrap();
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn quadratic_run_passes_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = bin().arg("run").arg(example("quadratic.toml")).arg("--out").arg(a.path()).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // second run goes through the environment variable instead of --out
    let out = bin()
        .arg("run")
        .arg(example("quadratic.toml"))
        .env("MATHER_EP_OUTPUT_DIR", b.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);

    let first = files(a.path());
    assert_eq!(first, files(b.path()));
    for name in ["summary.json", "eigen_density.bin", "eigen_phi.csv", "continuation.svg", "discrete_omega.json"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&first["summary.json"]).unwrap();
    assert_eq!(summary["schema"], "mather-ep.summary");
    assert_eq!(summary["exit_code"], 0);
    assert!(summary["analyses"].as_array().unwrap().iter().all(|a| a["status"] == "pass"));
}

#[test]
fn config_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let increasing = format!("{SHIFTED_HEAD}\n[schedule]\nepsilons = [0.01, 0.1]\nh = 0.125\n");
    let unknown_key = format!("{SHIFTED_HEAD}\n[schedule]\nepsilons = [0.1]\nh = 0.125\ncolour = 1\n");
    for text in [increasing, unknown_key, "not toml at all [".to_string()] {
        let config = write_config(dir.path(), &text);
        for cmd in ["validate", "run"] {
            let out = bin().arg(cmd).arg(&config).output().unwrap();
            assert_eq!(code(&out), 3, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
}

#[test]
fn failed_verdict_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SHIFTED_HEAD}\n[schedule]\nepsilons = [0.1, 0.05, 0.02, 0.01]\nh = 0.125\n\n\
         [[analysis]]\nkind = \"critical-value\"\nid = \"critical\"\nexpect = 0.5\n"
    );
    let config = write_config(dir.path(), &text);
    let out = bin().arg("run").arg(&config).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(code(&out), 1);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["analyses"][0]["status"], "fail");
}

#[test]
fn analysis_error_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // An uneven three-point schedule on a coarse grid is not Cauchy.
    let text = format!(
        "{SHIFTED_HEAD}\n[schedule]\nepsilons = [0.1, 0.05, 0.02]\nh = 0.125\n\n\
         [[analysis]]\nkind = \"continuation\"\nid = \"continuation\"\n"
    );
    let config = write_config(dir.path(), &text);
    let out = bin().arg("run").arg(&config).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(code(&out), 2);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["analyses"][0]["status"], "error");
    assert_eq!(summary["analyses"][0]["error"]["type"], "NotCauchy");
}

#[test]
fn plot_renders_reports_and_rejects_unknown_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("run").arg(example("shifted.toml")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = dir.path().join("continuation.json");
    let svg = dir.path().join("replot.svg");
    let out = bin()
        .args(["plot", "--kind", "continuation", "--out"])
        .arg(&svg)
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let out = bin().args(["plot", "--kind", "pie"]).arg(&report).output().unwrap();
    assert_eq!(code(&out), 3);
}
