use std::path::Path;
use std::process::{Command, Output};

fn ordermem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordermem")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ordermem(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ordermem(&["simulate", "--steps", "20000"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| ordermem(args, d).status.code();
    assert_eq!(code(&["simulate", "--seed", "1", "--hurst-x", "1.2"]), Some(2));
    // a single event after warm-up cannot give two returns
    assert_eq!(code(&["simulate", "--seed", "1", "--steps", "101", "--warmup", "100"]), Some(3));
    ok(&["simulate", "--seed", "1", "--steps", "20000", "-o", "r.txt"], d);
    assert_eq!(code(&["intervals", "r.txt", "-q", "1000"]), Some(4));
    assert_eq!(code(&["dfa", "missing.txt"]), Some(5));
    std::fs::write(d.join("junk.txt"), "1\nx\n").unwrap();
    assert_eq!(code(&["dfa", "junk.txt"]), Some(5));
}

#[test]
fn file_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for seed in ["1", "2"] {
        ok(&["simulate", "--seed", seed, "--steps", "60000", "--hurst-x", "0.6", "-o", &format!("r{seed}.txt")], d);
        ok(&["intervals", &format!("r{seed}.txt"), "-q", "2", "-o", &format!("i{seed}.txt")], d);
    }
    let head = std::fs::read_to_string(d.join("r1.txt")).unwrap();
    assert!(head.contains("# seed = 1") && head.contains("# hurst_x = 0.6"));

    let fit = json(&ok(&["fit-gamma", "i1.txt", "i2.txt", "--pdf", "pdf.tsv"], d));
    assert_eq!(fit["runs"], 2);
    assert!(fit["fit"]["beta"].as_f64().unwrap() < 1.0);
    let pdf = std::fs::read_to_string(d.join("pdf.tsv")).unwrap();
    assert!(pdf.starts_with("x\tdensity\tcount\n"));

    let dfa = json(&ok(&["dfa", "r1.txt", "-o", "f.tsv"], d));
    assert!(dfa["exponent"].as_f64().unwrap().is_finite());
    let shuffled = json(&ok(&["dfa", "r1.txt", "--shuffle-seed", "3"], d));
    assert!((shuffled["exponent"].as_f64().unwrap() - 0.5).abs() < 0.1);

    let mf = json(&ok(&["mfdfa", "i1.txt", "--q-min", "-2", "--q-max", "2", "--q-count", "5", "-o", "s.tsv"], d));
    assert!(mf["h2"].as_f64().is_some());
    assert_eq!(std::fs::read_to_string(d.join("s.tsv")).unwrap().lines().count(), 6);
}

#[test]
fn fit_surface_reads_long_and_grid_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let plane = |x: f64, s: f64| 0.2 + 0.7 * x - 0.1 * s + 0.01 * ((7.0 * x + 3.0 * s).sin());
    let hs = [0.5, 0.7, 0.9];
    let mut long = String::from("h_x\th_s\tbeta\n");
    let mut grid = String::from("h_x \\ h_s\t0.5\t0.7\t0.9\n");
    for x in hs {
        grid.push_str(&x.to_string());
        for s in hs {
            long.push_str(&format!("{x}\t{s}\t{}\n", plane(x, s)));
            grid.push_str(&format!("\t{}", plane(x, s)));
        }
        grid.push('\n');
    }
    std::fs::write(d.join("long.tsv"), long).unwrap();
    std::fs::write(d.join("grid.tsv"), grid).unwrap();
    let a = json(&ok(&["fit-surface", "long.tsv"], d));
    let b = json(&ok(&["fit-surface", "grid.tsv", "--permutations", "50"], d));
    assert_eq!(a["fit"], b["fit"]);
    assert!((a["fit"]["b"].as_f64().unwrap() - 0.7).abs() < 0.05);
    assert_eq!(b["permutation_p_values"].as_array().unwrap().len(), 3);

    std::fs::write(d.join("line.tsv"), "h_x\th_s\tbeta\n0.5\t0.5\t1\n0.6\t0.6\t2\n0.7\t0.7\t3\n0.8\t0.8\t4\n").unwrap();
    assert_eq!(ordermem(&["fit-surface", "line.tsv"], d).status.code(), Some(4));
}

#[test]
fn na_cells_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = "h_x \\ h_s\t0.5\t0.9\n0.5\t0.4\tNA\n0.7\t0.6\t0.62\n0.9\t0.8\t0.79\n";
    std::fs::write(d.join("g.tsv"), text).unwrap();
    let fit = json(&ok(&["fit-surface", "g.tsv"], d));
    assert_eq!(fit["fit"]["n_points"], 5);
}

#[test]
fn sweep_flags_override_config_and_report_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s.toml"), "h_s_grid = [0.5]\nh_x_grid = [0.6]\nrounds = 3\nsteps = 30000\nthresholds = [2.0]\n")
        .unwrap();
    ok(&["sweep", "--config", "s.toml", "--rounds", "1", "--output-dir", "out", "--report"], d);
    let resolved = std::fs::read_to_string(d.join("out/sweep.toml")).unwrap();
    assert!(resolved.contains("rounds = 1") && resolved.contains("steps = 30000"));
    assert!(d.join("out/hs0.5_hx0.6/cell.json").is_file());
    assert!(d.join("out/report/beta_q2.tsv").is_file());
    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(ordermem(&["sweep", "--config", "bad.toml"], d).status.code(), Some(5));
    assert_eq!(ordermem(&["sweep", "--rounds", "0", "--output-dir", "x"], d).status.code(), Some(2));
    assert_eq!(ordermem(&["report", "empty"], d).status.code(), Some(5));
}

#[test]
fn gen_dumps_one_value_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen", "signs", "-n", "8", "--hurst", "0.8", "--seed", "3"], dir.path());
    let values: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(values.len(), 8);
    assert!(values.iter().all(|v| *v == "1" || *v == "-1"));
    assert_eq!(out, ok(&["gen", "signs", "-n", "8", "--hurst", "0.8", "--seed", "3"], dir.path()));
}
