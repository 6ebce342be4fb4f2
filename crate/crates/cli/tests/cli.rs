use std::path::Path;
use std::process::Command;

fn gfflab(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_gfflab"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("GFFLAB_THREADS")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr);
    (o.status.code().unwrap(), text)
}

#[test]
fn report_constants_prints_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["report-constants", "--N", "100", "--lambda", "0.5", "--seed", "9"], dir.path());
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("K_N = 465.99"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("report-constants_100_9_constants.csv")).unwrap();
    assert!(csv.starts_with("name,value\r\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], "9");
    assert_eq!(manifest["command"], "report-constants");
    assert!(manifest["wall_time_s"].is_number());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["run-walk", "--N", "8"], dir.path());
    assert_eq!(code, 2);
    assert!(text.contains("t:"), "{text}");
    let (code, _) = gfflab(&["thick-points", "--N", "8", "--lambda", "2"], dir.path());
    assert_eq!(code, 2);
    let (code, _) = gfflab(&["green-check", "--N", "1", "--domain", "disc"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn failed_verdict_exits_1() {
    // one replica has zero spread, so any non-integer exact mean fails the check
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["avoided-points", "--N", "8", "--theta", "0.3", "--replicas", "1"], dir.path());
    assert_eq!(code, 1, "{text}");
    let verdict = std::fs::read_to_string(dir.path().join("verdict.csv")).unwrap();
    assert!(verdict.starts_with("check,statistic,value,target,sigma,pass\r\n"));
    assert!(verdict.contains(",false\r\n"));
}

#[test]
fn verification_commands_pass() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["verify-isomorphism", "--N", "5", "--seed", "1"], dir.path());
    assert_eq!(code, 0, "{text}");
    for check in ["kac-n1", "kac-n2", "kac-n3", "exp-moment", "ray-knight", "clt", "hitting"] {
        assert!(text.contains(check), "{check} missing from {text}");
    }
    let (code, text) = gfflab(&["green-check", "--N", "10", "--domain", "disc"], dir.path());
    assert_eq!(code, 0, "{text}");
}

#[test]
fn empty_avoided_set_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["avoided-points", "--N", "5", "--theta", "40", "--replicas", "3"], dir.path());
    assert!(code == 0 || code == 1, "{text}");
    let csv = std::fs::read_to_string(dir.path().join("avoided-points_5_0_0.csv")).unwrap();
    assert_eq!(csv, "x,y,value,weight\r\n");
}

#[test]
fn field_heatmap_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = gfflab(&["sample-dgff", "--N", "65", "--seed", "3"], dir.path());
    assert_eq!(code, 0, "{text}");
    let pgm = std::fs::read(dir.path().join("sample-dgff_65_3_0.pgm")).unwrap();
    let header_end = pgm.windows(5).position(|w| w == b"\n255\n").unwrap() + 5;
    let header = String::from_utf8_lossy(&pgm[..header_end]);
    assert!(header.starts_with("P5\n#"));
    assert!(header.contains("\n64 64\n255\n"), "{header}");
    assert_eq!(pgm.len() - header_end, 64 * 64);
}

#[test]
fn thread_env_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["run-walk", "--N", "9", "--t", "3", "--replicas", "4", "--seed", "77"];
    let run = |dir: &Path, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_gfflab"))
            .args(args)
            .arg("--output-dir")
            .arg(dir)
            .env("GFFLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
    };
    run(a.path(), "1");
    run(b.path(), "4");
    for i in 0..4 {
        for ext in ["csv", "pgm"] {
            let name = format!("run-walk_9_77_{i}.{ext}");
            assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
        }
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(m["threads"], 4);
}
