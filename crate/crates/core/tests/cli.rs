//! End-to-end tests of the command-line binary: file layout, headers,
//! sidecars, determinism, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spincool"))
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("spincool-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {path:?}: {e}"))
}

#[test]
fn fig3_writes_csvs_with_sidecars() {
    let out = tmp_dir("fig3");
    let status = bin()
        .args([
            "fig3",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "model.dim=40",
            "--set",
            "model.nbar=2.0",
            "--set",
            "protocol.iterations=2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for n in 1..=4 {
        let csv = read(&out.join(format!("fig3_n{n}.csv")));
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,mean_phonon,ratio,dx,dy,p_step,p_cum"
        );
        assert_eq!(lines.count(), 2, "two iterations requested");
        let sidecar = read(&out.join(format!("fig3_n{n}.config.json")));
        let cfg: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
        assert_eq!(cfg["model"]["dim"], 40);
        assert_eq!(cfg["model"]["nbar"], 2.0);
        assert_eq!(cfg["protocol"]["iterations"], 2);
    }
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn fig1_headers_and_grid_size() {
    let out = tmp_dir("fig1");
    let status = bin()
        .args([
            "fig1",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "model.dim=40",
            "--set",
            "model.nbar=2.0",
            "--set",
            "grid.lambda_points=5",
            "--set",
            "grid.t_points=4",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let ratio = read(&out.join("fig1_ratio.csv"));
    assert_eq!(ratio.lines().next().unwrap(), "t,lambda,ratio");
    assert_eq!(ratio.lines().count(), 1 + 5 * 4);
    let var = read(&out.join("fig1_var.csv"));
    assert_eq!(var.lines().next().unwrap(), "t,lambda,var_ratio");
    assert_eq!(var.lines().count(), 1 + 5 * 4);
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn optimize_output_is_deterministic() {
    let run = |tag: &str| {
        let out = tmp_dir(tag);
        let status = bin()
            .args([
                "optimize",
                "--out",
                out.to_str().unwrap(),
                "--set",
                "model.dim=40",
                "--set",
                "model.nbar=2.0",
                "--set",
                "optimize.restarts=2",
                "--set",
                "optimize.max_evals=200",
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let bytes = std::fs::read(out.join("optimize.json")).unwrap();
        std::fs::remove_dir_all(&out).unwrap();
        bytes
    };
    assert_eq!(run("opt-a"), run("opt-b"), "same seed must give identical bytes");
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let out = tmp_dir("badkey");
    let output = bin()
        .args([
            "fig1",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "model.bogus=1",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn invalid_domain_exits_with_config_code() {
    let out = tmp_dir("baddomain");
    let output = bin()
        .args([
            "fig1",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "model.nbar=-1.0",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn estimate_coupling_writes_json() {
    let out = tmp_dir("estimate");
    let output = bin()
        .args([
            "estimate-coupling",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "estimate.gradient=1e6",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&read(&out.join("estimate.json"))).unwrap();
    let lambda = json["lambda"].as_f64().unwrap();
    assert!(lambda > 0.0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("lambda"), "stdout should report the estimate");
    std::fs::remove_dir_all(&out).unwrap();
}
