use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_satnc");

const SMALL: &str = r#"
schemes = ["generation", "sliding-window", "arq"]
axis = "R"
values = [1.1, 1.25]
mean_burst = [1, 8]
stream_len = 1000
replications = 3
k = 8
seed = 42
"#;

fn satnc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, name: &str, text: &str) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join(format!("{name}.csv"));
    let o = satnc(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

#[test]
fn custom_sweep_writes_csv_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run_config(dir.path(), "small", SMALL);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,mode,axis_name,axis_value,E_L,R,k,eta,E_D_ms,var_D,std_D,PER,reps,seed"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 2 * 2);
    assert!(rows.iter().all(|r| r.len() == 14 && r[12] == "3" && r[13] == "42"));
    assert!(rows.iter().filter(|r| r[0] == "generation").all(|r| r[6] == "8"));
    assert!(rows.iter().filter(|r| r[0] != "generation").all(|r| r[6].is_empty()));
    assert!(rows.iter().filter(|r| r[0] == "arq").all(|r| r[5] == "1" && r[7] == "1"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(satnc_cli::manifest_path(&out)).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 42);
    assert_eq!(manifest["parameter_origins"]["stream_len"], "user");
    assert_eq!(manifest["rows"], 12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, out_a) = run_config(dir.path(), "a", SMALL);
    let (b, out_b) = run_config(dir.path(), "b", &format!("{SMALL}workers = 3\n"));
    assert!(a.status.success() && b.status.success());
    assert_eq!(std::fs::read(out_a).unwrap(), std::fs::read(out_b).unwrap());
}

#[test]
fn different_seed_changes_results() {
    let dir = TempDir::new().unwrap();
    let (_, a) = run_config(dir.path(), "a", SMALL);
    let (_, b) = run_config(dir.path(), "b", &SMALL.replace("seed = 42", "seed = 43"));
    assert_ne!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [
        ("unknown", "bogus = 1\nstream_len = 10\n"),
        ("no_len", "schemes = [\"arq\"]\n"),
        ("zero_reps", &SMALL.replace("replications = 3", "replications = 0")),
        ("bad_scheme", &SMALL.replace("\"arq\"", "\"fountain\"")),
        ("bad_r", &SMALL.replace("1.1, 1.25", "0.9")),
        ("arq_unreliable", &format!("{SMALL}mode = \"unreliable\"\n")),
        ("sw_capacity", &SMALL.replace("1.1, 1.25", "1.05")),
    ] {
        let (o, out) = run_config(dir.path(), name, text);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{name} wrote output");
    }
    let o = satnc(&["run", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = blocker.join("x.csv");
    let o = satnc(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = satnc(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 13);
}

#[test]
fn tandem_subcommand() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.csv");
    let o = satnc(&[
        "tandem",
        "--eps",
        "0.1,0.2,0.05",
        "--stream-len",
        "500",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[1].starts_with("end-to-end,2,0.2,"));
    let bad = satnc(&["tandem", "--eps", "0.1,1.5,0.1", "--stream-len", "100"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn optimize_k_reports_grid_argmin() {
    let o = satnc(&["optimize-k", "--stream-len", "1000", "--reps", "3", "--grid", "4,8,16"]);
    assert!(o.status.success());
    let sel: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let curve = sel["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 3);
    let best = curve
        .iter()
        .min_by(|a, b| a["mean_delay_ms"].as_f64().unwrap().total_cmp(&b["mean_delay_ms"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(sel["k_star"], best["k"]);
}
