use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chamberflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Payload lines, without the `#` manifest header.
fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn header<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("# {key}: ")))
        .unwrap_or_else(|| panic!("no {key} line"))
}

#[test]
fn roots_prints_rank_one_for_sl2() {
    let out = run(&["roots", "--group", "sl2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let v: serde_json::Value = serde_json::from_str(&body(&text).join("\n")).unwrap();
    assert_eq!(v["positive_roots"].as_array().unwrap().len(), 1);
    assert_eq!(header(&text, "anchor"), "root-data");
    assert!(header(&text, "inputs").starts_with("sha256:"));
}

#[test]
fn decay_writes_one_row_per_time() {
    let out = run(&["decay", "--group", "sl3", "--t", "4,8", "--h0", "rho"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows = body(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("t,shift_l1"));
    let shift = |r: &str| r.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(shift(rows[2]) < shift(rows[1]));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["roots", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["roots", "--group", "sl7"]).status.code(), Some(1));
    assert_eq!(
        run(&["decomp", "--group", "sl2", "--matrix", "1,0,0,1,1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["decomp", "--group", "sl2", "--matrix=nan,0,0,1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["lift", "--n", "4", "--count", "10", "--preset", "nope"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical() {
    let args = ["simulate", "--t", "2", "--paths", "50", "--seed", "5"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", "--t", "2", "--paths", "50", "--seed", "6"]);
    assert_ne!(body(&stdout(&a)), body(&stdout(&c)));
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# lift defaults\nseed=9\ncount=20\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = stdout(&run(&["lift", "--config", cfg, "--n", "4"]));
    assert_eq!(header(&from_file, "seed"), "9");
    assert_eq!(body(&from_file).len(), 20);

    let overridden = stdout(&run(&["lift", "--config", cfg, "--n", "4", "--seed", "3"]));
    assert_eq!(header(&overridden, "seed"), "3");
    assert_eq!(body(&overridden).len(), 20);

    fs::write(dir.path().join("bad.cfg"), "seed 9\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    let out = run(&["lift", "--config", bad.to_str().unwrap(), "--n", "4", "--count", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn lift_then_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lift.jsonl");
    let path = path.to_str().unwrap();
    let out = run(&["lift", "--n", "8", "--count", "200", "--out", path]);
    assert_eq!(out.status.code(), Some(0));
    let written = fs::read_to_string(path).unwrap();
    assert_eq!(header(&written, "outputs"), path);
    assert_eq!(body(&written).len(), 200);

    let out = run(&["invariance", "--in", path, "--g", "k:0.3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows = body(&text);
    assert_eq!(rows[0], "test_element,function,deficit");
    assert_eq!(rows.len(), 1 + 8 + 1);
    let deficits: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let max = deficits[..8].iter().cloned().fold(0.0, f64::max);
    assert_eq!(deficits[8], max);

    let out = run(&["invariance", "--in", path, "--g", "x:1"]);
    assert_eq!(out.status.code(), Some(1));
}
