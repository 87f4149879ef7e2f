use std::path::Path;
use std::process::Command;

fn covsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covsim"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn dump_defaults_round_trips() {
    let out = covsim().arg("dump-defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("600000"));
    assert!(text.contains("150"));

    // Feeding the dump back as a config reproduces the same dump.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, &text).unwrap();
    let out_dir = dir.path().join("out");
    let status = covsim()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "frames=2", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn run_writes_expected_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let status = covsim()
        .args(["run", "--set", "frames=5", "--seed", "7", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let frames = read(&out_dir.join("frames.csv"));
    assert!(frames.starts_with("frame,policy,n_selected,delivered_rfms,loss,recall\n"));
    assert_eq!(frames.lines().count(), 6);
    let summary = read(&out_dir.join("summary.csv"));
    assert!(summary
        .starts_with("policy,N,seed,frames,mean_loss,mean_recall,wall_time_s,status\n"));
    let row = summary.lines().nth(1).unwrap();
    assert!(row.starts_with("cmass,4,7,5,"));
    assert!(row.ends_with(",ok"));
}

#[test]
fn repeated_runs_are_identical_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let status = covsim()
            .args(["run", "--set", "frames=30", "--seed", "11", "--out"])
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(status.success());
        let summary: Vec<String> = read(&out_dir.join("summary.csv"))
            .lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols[6] = "-"; // wall_time_s varies between runs
                cols.join(",")
            })
            .collect();
        outputs.push((read(&out_dir.join("frames.csv")), summary));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn invalid_config_exits_2() {
    let code = covsim()
        .args(["run", "--set", "scenario.mpr=1.5"])
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));
    let stderr = String::from_utf8(code.stderr).unwrap();
    assert!(stderr.contains("mpr"), "stderr should name the key: {stderr}");

    let code = covsim()
        .args(["run", "--config", "/no/such/file.json"])
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));

    let code = covsim()
        .args(["run", "--set", "scheduling.not_a_field=1"])
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));
}

#[test]
fn sweep_with_empty_n_list_exits_2() {
    let code = covsim()
        .args([
            "sweep",
            "--policies",
            "closest",
            "--n-list",
            "",
            "--seeds",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));
}

#[test]
fn sweep_writes_cartesian_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let status = covsim()
        .args([
            "sweep",
            "--set",
            "frames=3",
            "--policies",
            "closest,coverage",
            "--n-list",
            "1,2",
            "--seeds",
            "5,6,7",
            "--jobs",
            "1",
            "--out",
        ])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = read(&out_dir.join("summary.csv"));
    assert_eq!(summary.lines().count(), 13); // header + 2*2*3 rows
    assert!(summary.lines().nth(1).unwrap().starts_with("closest,1,5,"));
}

#[test]
fn unknown_policy_exits_2() {
    let code = covsim()
        .args([
            "sweep",
            "--policies",
            "psychic",
            "--n-list",
            "1",
            "--seeds",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(code.status.code(), Some(2));
}
