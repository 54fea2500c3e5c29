use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const LAW_A: &str = r#"{"p": {"0": "3/5", "2": "2/5"}, "q": {"0": "0", "2": "1"}}"#;
const LAW_B: &str = r#"{"p": {"0": "1/2", "2": "1/2"}, "q_default": "1"}"#;
const LAW_C: &str = r#"{"p": {"0": "1/5", "2": "4/5"}, "q_default": "1"}"#;
const LAW_F: &str = r#"{"p": {"2": "3/5", "3": "2/5"}, "q_default": "1/2"}"#;

struct Workdir(PathBuf);

impl Workdir {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("mgw-cli-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        for (file, law) in [("a.json", LAW_A), ("b.json", LAW_B), ("c.json", LAW_C), ("f.json", LAW_F)] {
            fs::write(dir.join(file), law).unwrap();
        }
        Workdir(dir)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.0.join(file)
    }

    fn mgw(&self, args: &[&str]) -> Output {
        self.mgw_env(args, &[])
    }

    fn mgw_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mgw"));
        cmd.current_dir(&self.0).args(args).env_remove("MGW_THREADS");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("not json ({e}): {}", stdout(o)))
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn validate_reports_mean_and_degrees() {
    let w = Workdir::new("validate");
    let o = w.mgw(&["validate", "--law", "a.json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["mean_exact"], "4/5");
    assert_eq!(v["criticality"], "subcritical");
    assert_eq!(v["r"], 0);
    assert_eq!(v["r_tilde"], 0);
    let v = json(&w.mgw(&["validate", "--law", "f.json"]));
    assert_eq!((v["r"].as_u64(), v["r_tilde"].as_u64()), (Some(2), Some(2)));
}

#[test]
fn verify_poly_sub_exactly() {
    let w = Workdir::new("verify");
    let o = w.mgw(&["verify", "--law", "a.json", "--regime", "poly-sub", "--ell", "1", "--depth", "2", "--exact"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["max_gap"], 0.0);
    assert_eq!(v["pass"], true);
    assert_eq!(v["regime"], "poly-sub(ell=1)");
    assert!(v["residuals_histogram"].is_object());
}

#[test]
fn sampling_is_reproducible_across_runs_and_threads() {
    let w = Workdir::new("sample");
    let args = |out: &str| {
        vec!["sample", "--law", "a.json", "--measure", "poly-ell", "--ell", "1", "--depth", "3", "--count", "10", "--seed", "42", "--out"]
            .into_iter()
            .map(String::from)
            .chain([out.to_string()])
            .collect::<Vec<_>>()
    };
    let run = |out: &str, threads: &str| {
        let a = args(out);
        let o = w.mgw_env(&a.iter().map(String::as_str).collect::<Vec<_>>(), &[("MGW_THREADS", threads)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        read(&w.path(out))
    };
    let one = run("one.txt", "1");
    assert_eq!(one, run("two.txt", "1"));
    assert_eq!(one, run("four.txt", "4"));
    assert_eq!(one.matches("height=3").count(), 10);
    // every line after a header is a typed record
    assert!(one.lines().filter(|l| !l.is_empty() && !l.starts_with("height=")).all(|l| l.split(';').count() == 3 && l.contains(':')));
}

#[test]
fn default_seed_is_reported_and_replayable() {
    let w = Workdir::new("replay");
    let o = w.mgw(&[
        "sample", "--law", "a.json", "--measure", "expo-spine", "--s", "0.5", "--ell", "1", "--depth", "3", "--count", "5", "--out",
        "trees.txt", "--save-config", "run.json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(o.stdout.is_empty());
    let first = read(&w.path("trees.txt"));
    let cfg: serde_json::Value = serde_json::from_str(&read(&w.path("run.json"))).unwrap();
    assert!(cfg["seed"].is_u64());
    fs::remove_file(w.path("trees.txt")).unwrap();
    assert_eq!(w.mgw(&["replay", "run.json"]).status.code(), Some(0));
    assert_eq!(read(&w.path("trees.txt")), first);
}

#[test]
fn kappa_prints_seventeen_digits() {
    let w = Workdir::new("kappa");
    let o = w.mgw(&["kappa", "--law", "b.json", "--s", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"kappa\": 0.2679491924311"), "{}", stdout(&o));
    let k = json(&o)["kappa"].as_f64().unwrap();
    assert!((k - 0.267_949_192_431_122_7).abs() < 1e-15, "{k}");
    let o = w.mgw(&["kappa", "--law", "a.json", "--zero-mark"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["zero_mark"], true);
}

#[test]
fn moments_csv_columns() {
    let w = Workdir::new("moments");
    let o = w.mgw(&["moments", "--law", "a.json", "--ell", "2", "--p-max", "4", "--exact"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("regime,ell,p,exact_value,asymptotic_prediction,ratio"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0][..4], ["subcritical", "1", "1", "2/5"]);
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 2.0);
}

#[test]
fn asymptotics_verdicts_and_exit_codes() {
    let w = Workdir::new("asym");
    let o = w.mgw(&[
        "asymptotics", "--law", "b.json", "--quantity", "gf", "--s", "0.5", "--t", "0.9", "--ell", "1", "--p-max", "60", "--out", "b.csv",
        "--require-stable",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(json(&o)["verdict"], "stabilized");
    assert!(read(&w.path("b.csv")).starts_with("p,value,predicted,ratio\n"));

    // supercritical law normalized as if critical must not pass
    let o = w.mgw(&["asymptotics", "--law", "c.json", "--ell", "1", "--p-max", "60", "--assume", "critical", "--require-stable"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    let verdict = text.lines().last().unwrap().strip_prefix("# verdict: ").unwrap();
    let v: serde_json::Value = serde_json::from_str(verdict).unwrap();
    assert_ne!(v["verdict"], "stabilized");
}

#[test]
fn zero_mark_measure_on_rary_law_is_unmarked_regular() {
    let w = Workdir::new("zero");
    let o = w.mgw(&["sample", "--law", "f.json", "--measure", "zero-mark", "--depth", "3", "--count", "3", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for line in text.lines().filter(|l| !l.is_empty() && !l.starts_with("height=")) {
        let f: Vec<&str> = line.split(';').collect();
        assert_eq!(f[2], "0");
        let depth = if f[0].is_empty() { 0 } else { f[0].split('.').count() };
        assert_eq!(f[1], if depth < 3 { "2" } else { "0" });
    }
}

#[test]
fn usage_errors_exit_two() {
    let w = Workdir::new("usage");
    let cases: Vec<Vec<&str>> = vec![
        vec!["kappa", "--law", "b.json", "--s", "0.5", "--zero-mark"],
        vec!["kappa", "--law", "b.json"],
        vec!["verify", "--law", "a.json", "--regime", "poly-sub", "--ell", "1", "--depth", "2", "--seed", "3"],
        vec!["sample", "--law", "a.json", "--measure", "base", "--s", "0.5", "--depth", "2", "--count", "1"],
        vec!["sample", "--law", "a.json", "--measure", "expo-rary", "--s", "0.5", "--depth", "2", "--count", "1", "--seed", "1"],
        vec!["verify", "--law", "a.json", "--regime", "poly-crit", "--depth", "2"],
        vec!["validate", "--law", "missing.json"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = w.mgw(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    fs::write(w.path("bad.json"), r#"{"p": {"0": "1/2", "2": "1/3"}}"#).unwrap();
    assert_eq!(w.mgw(&["validate", "--law", "bad.json"]).status.code(), Some(2));
}
