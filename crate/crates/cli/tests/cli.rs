use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capstop_cli::{config, solve, Failure, BOUNDARY_FILE, TIMES_FILE};
use capstop_core::Level;

const FALLING: &str =
    "market.r = 0.03\nmarket.delta = 0.05\nmarket.sigma = 0.25\nmarket.strike = 1\n\
    cap.l1 = 1.45\ncap.l2 = 1.3\ncap.t1 = 1\ncap.t2 = 2\nquery.points = 1.35@0.9; 1.2@1.5\n";

const RISING: &str = "market.r = 0.1\nmarket.delta = 0.1\nmarket.sigma = 0.3\nmarket.strike = 1\n\
    cap.l1 = 1.3\ncap.l2 = 1.39\ncap.t1 = 3\ncap.t2 = 4\n";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("capstop-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, text).unwrap();
    path
}

fn capstop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capstop"))
        .args(args)
        .output()
        .unwrap()
}

fn solve_into(dir: &Path, text: &str) -> Output {
    let conf = write_config(dir, text);
    let out = dir.join("out");
    capstop(&[
        "solve",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn solve_writes_four_files() {
    let dir = scratch("four");
    let o = solve_into(&dir, FALLING);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "boundaries.csv",
        "times.txt",
        "prices.csv",
        "diagnostics.txt",
    ] {
        assert!(dir.join("out").join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.join("out").join(BOUNDARY_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some("t,B,B_L2,B_L1"));
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn exit_codes() {
    let dir = scratch("codes");
    let missing = dir.join("nope.conf");
    assert_eq!(
        capstop(&["solve", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );
    let bad = write_config(&dir, "market.r = 0.1\n");
    assert_eq!(
        capstop(&["solve", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let good = write_config(&dir, FALLING);
    let o = capstop(&[
        "solve",
        "--config",
        good.to_str().unwrap(),
        "--out",
        "/dev/null/x",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(Failure::Solver(anyhow::anyhow!("x")).exit_code(), 3);
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn price_prints_ten_digits() {
    let dir = scratch("price");
    let conf = write_config(&dir, FALLING);
    let o = capstop(&[
        "price",
        "--config",
        conf.to_str().unwrap(),
        "--s",
        "1.35",
        "--t",
        "0.9",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let digits = text.trim().replace(['.', '-'], "");
    assert_eq!(digits.trim_start_matches('0').len(), 10, "{text}");
    let cfg = config::parse(FALLING).unwrap();
    let v: f64 = text.trim().parse().unwrap();
    let want = solve(&cfg).unwrap().price(1.35, 0.9);
    assert!((v - want).abs() < 1e-9);
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn reruns_are_identical() {
    let dir = scratch("rerun");
    let text = format!("{FALLING}oracle.seed = 3\n");
    let conf = write_config(&dir, &text);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("o{k}"));
        let o = capstop(&[
            "solve",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "17",
        ]);
        assert_eq!(o.status.code(), Some(0));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn degenerate_note_in_times() {
    let dir = scratch("degenerate");
    let text = RISING.replace("cap.l1 = 1.3", "cap.l1 = 1.39");
    assert_eq!(solve_into(&dir, &text).status.code(), Some(0));
    let times = fs::read_to_string(dir.join("out").join(TIMES_FILE)).unwrap();
    assert!(times.contains("case = Degenerate"));
    assert!(times.contains("note = Degenerate"));
    let _ = fs::remove_dir_all(dir);
}

#[test]
fn boundary_csv_round_trip() {
    let cfg = config::parse(RISING).unwrap();
    let sol = solve(&cfg).unwrap();
    let csv = capstop_cli::boundary_csv(&sol);
    let rep = &sol.report;
    let parse = |cell: &str| match cell {
        "inf" => Level::Infinite,
        x => Level::Finite(x.parse().unwrap()),
    };
    let table = rows(&csv);
    // Uncapped boundary: every node echoed exactly.
    for (i, v) in rep.uncapped.values.iter().enumerate() {
        let t = format!("{:.9}", rep.uncapped.grid.node(i));
        let row = table.iter().find(|r| r[0] == t).unwrap();
        assert_eq!(parse(&row[1]), *v, "t={t}");
    }
    let t0 = rep.t0.unwrap();
    let mut saw_inf = false;
    for row in &table {
        let t: f64 = row[0].parse().unwrap();
        if t <= t0 && !row[3].is_empty() {
            assert_eq!(row[3], "inf", "t={t}");
            saw_inf = true;
        }
        if t < rep.t1.unwrap() - 1e-9 && t > rep.big_t0 + 1e-9 {
            assert_eq!(parse(&row[3]), Level::Finite(1.3));
        }
        if t > rep.t1.unwrap() + 1e-9 && t < 3.0 {
            assert!(row[3].is_empty(), "t={t}");
        }
    }
    assert!(saw_inf);
    let at_t0 = table
        .iter()
        .find(|r| r[0] == format!("{:.9}", rep.big_t0))
        .unwrap();
    assert!((parse(&at_t0[3]).value() - 1.3).abs() < 1e-6);
}
