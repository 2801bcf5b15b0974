use std::process::{Command, Output};

fn hcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcount"))
        .args(args)
        .output()
        .expect("run hcount")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn count_at_unit_radius() {
    let o = hcount(&["count", "--q", "3", "--x", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "15\n");
}

#[test]
fn count_json_has_schema() {
    let o = hcount(&["--format", "json", "count", "--q", "3", "--x", "2"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "count");
    assert!(v["count"].as_u64().unwrap() > 15);
}

#[test]
fn first_moment_is_zero() {
    let o = hcount(&["moments", "--q", "3", "--m", "1", "--l", "1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["value"].as_f64(), Some(0.0));
}

#[test]
fn usage_and_argument_errors_exit_2() {
    assert_eq!(hcount(&["count", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        hcount(&["count", "--q", "2", "--x", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        hcount(&["moments", "--q", "3", "--m", "1", "--l", "3", "--method", "closed2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(hcount(&["verify", "--only", "11"]).status.code(), Some(2));
    assert_eq!(hcount(&["--help"]).status.code(), Some(0));
}

#[test]
fn csv_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let path = dir.path().join(format!("e{i}.csv"));
        let o = hcount(&[
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
            "error",
            "--q",
            "3",
            "--X",
            "15/2",
            "--samples",
            "64",
        ]);
        assert!(o.status.success());
        runs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs.remove(0)).unwrap();
    assert!(text.starts_with("x,count,normalized_error\n"));
    assert_eq!(text.lines().count(), 65);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test run\nq = 4\n").unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = stdout(&hcount(&["--config", c, "count", "--x", "1"]));
    let from_flag = stdout(&hcount(&["--config", c, "count", "--q", "3", "--x", "1"]));
    assert_eq!(from_flag, "15\n");
    assert_ne!(from_file, from_flag);
    std::fs::write(&cfg, "q = 3\nshade = blue\n").unwrap();
    assert_eq!(
        hcount(&["--config", c, "count", "--x", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn empirical_writes_samples_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (s, h) = (dir.path().join("s.csv"), dir.path().join("h.csv"));
    let o = hcount(&[
        "--out",
        s.to_str().unwrap(),
        "empirical",
        "--q",
        "3",
        "--X",
        "10",
        "--samples",
        "100",
        "--M",
        "0,5",
        "--D",
        "6",
        "--K",
        "6",
        "--hist-out",
        h.to_str().unwrap(),
        "--no-density",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let gaps = v["theorem4_gaps"].as_array().unwrap();
    assert_eq!(gaps.len(), 2);
    assert!((gaps[0]["gap"].as_f64().unwrap() - v["m2"].as_f64().unwrap()).abs() < 1e-9);
    assert_eq!(std::fs::read_to_string(&s).unwrap().lines().count(), 101);
    let hist = std::fs::read_to_string(&h).unwrap();
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 100);
}

#[test]
fn phi_csv_rows() {
    let o = hcount(&[
        "phi", "--q", "3", "--m", "2", "--D", "4", "--K", "4", "--points", "5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("t,phi,tail_bound\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn brute_force_agrees_and_range_grid_is_exact() {
    let o = hcount(&["count", "--q", "3", "--x", "3/2", "--brute"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "245\n");
    let o = hcount(&[
        "error",
        "--q",
        "3",
        "--x-min",
        "1",
        "--x-max",
        "2",
        "--samples",
        "4",
    ]);
    let text = stdout(&o);
    let counts: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(counts, ["15", "39", "245", "871"]);
    assert_eq!(
        hcount(&["error", "--q", "3", "--x-min", "2", "--x-max", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn voronoi_gap_csv_columns() {
    let o = hcount(&["voronoi-gap", "--q", "3", "--X", "6", "--samples", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("X,H,samples,mean_square_gap,empirical_second_moment\n"));
    assert_eq!(text.lines().count(), 2);
}
