//! Drives the `qshield` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use qshield::fedcore::read_metrics_csv;

fn qshield(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qshield"))
        .args(args)
        .current_dir(dir)
        .env_remove("QSHIELD_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_ten_round_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(
        &[
            "run",
            "--dataset",
            "iris",
            "--devices",
            "3",
            "--rounds",
            "10",
            "--channel",
            "qkd_otp",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows =
        read_metrics_csv(std::fs::File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows
        .iter()
        .enumerate()
        .all(|(i, r)| r.round == i + 1 && r.channel == "qkd_otp"));
    assert!(rows.iter().all(|r| r.qber == Some(0.0)));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(json["csv_schema_version"], 1);
    assert_eq!(json["config"]["seed"], "7");
    assert_eq!(json["summary"]["rounds"], 10);
    assert_eq!(json["rounds"].as_array().unwrap().len(), 10);
    assert!(json["rounds"][0]["channel_wall_us"].is_u64());
}

#[test]
fn tampered_signature_runs_skip_aggregation_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(
        &[
            "run",
            "--dataset",
            "iris",
            "--rounds",
            "3",
            "--channel",
            "pqc_sign",
            "--adversary",
            "tamper",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("aggregation skipped"));
    let rows =
        read_metrics_csv(std::fs::File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.aborted() == [0, 1, 2]));
}

#[test]
fn missing_dataset_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(&["run", "--channel", "kem"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        "# small run\ndataset = iris\nrounds = 4\nchannel = kem\nout_path = a.csv\n",
    )
    .unwrap();
    let o = qshield(&["run", "--config", "exp.cfg", "--rounds", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_metrics_csv(std::fs::File::open(dir.path().join("a.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.channel == "kem"));
    assert!(dir.path().join("a.json").exists());

    std::fs::write(
        dir.path().join("bad.cfg"),
        "dataset = iris\nlearning_rate = 0.1\n",
    )
    .unwrap();
    let o = qshield(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn bad_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--dataset", "mnist"][..],
        &["run", "--dataset", "iris", "--dp", "0"],
        &["run", "--dataset", "iris", "--devices", "0"],
        &[
            "run",
            "--dataset",
            "iris",
            "--channel",
            "kem",
            "--kem-scheme",
            "nope",
        ],
        &[
            "run",
            "--dataset",
            "iris",
            "--channel",
            "pqc_sign",
            "--sig-scheme",
            "Dilithium2",
        ],
        &["run", "--dataset", "iris", "--unknown-flag", "1"],
    ] {
        let o = qshield(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn identical_config_gives_identical_csv_and_env_seed_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "run",
        "--dataset",
        "iris",
        "--rounds",
        "3",
        "--channel",
        "teleport",
    ];
    let run = |extra: &[&str], seed_env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qshield"));
        cmd.args(base)
            .args(extra)
            .current_dir(dir.path())
            .env_remove("QSHIELD_SEED");
        if let Some(s) = seed_env {
            cmd.env("QSHIELD_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(dir.path().join("metrics.csv")).unwrap()
    };
    let a = run(&["--seed", "5"], None);
    let b = run(&["--seed", "5"], None);
    let c = run(&[], Some("5"));
    let d = run(&["--seed", "6"], Some("5"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, d);
}

#[test]
fn bench_lamport_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(
        &["bench", "sig", "--schemes", "lamport", "--trials", "50"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "scheme",
            "op",
            "trials",
            "median_seconds",
            "size_bytes",
            "fixture_size_bytes",
            "fixture_match"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let ops: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(ops, ["keygen", "sign", "verify"]);
    let sizes: Vec<&str> = rows.iter().map(|r| &r[4]).collect();
    assert_eq!(sizes, ["16384", "8192", "8192"]);
    assert!(rows
        .iter()
        .all(|r| &r[2] == "50" && r[3].parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn bench_kem_defaults_to_reference_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(&["bench", "kem", "--trials", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let ops: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(ops, ["keygen", "encaps", "decaps"]);
    assert!(text.lines().skip(1).all(|l| l.starts_with("toy-lwe,")));
}

#[test]
fn bench_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bench", "sig", "--trials", "0"][..],
        &["bench", "sig", "--schemes", "lamport,nope"],
        &["bench", "sig", "--schemes", "toy-lwe"],
        &["bench", "sig", "--schemes", "Dilithium2"],
    ] {
        let o = qshield(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stdout(&o).is_empty(), "{args:?} timed something");
    }
}

fn qber_line(text: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix("qber: "))
        .expect("qber line")
        .parse()
        .unwrap()
}

#[test]
fn demo_qkd_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(&["demo", "qkd", "--n", "64"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("qubits sent: 64"));
    assert!(text.contains("sifted length: "));
    assert_eq!(qber_line(&text), 0.0);
    assert!(text.contains("decision: accept"));

    let o = qshield(
        &["demo", "qkd", "--n", "64", "--eve", "intercept"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(qber_line(&stdout(&o)) > 0.0);
}

#[test]
fn demo_teleport_reports_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let o = qshield(
        &["demo", "teleport", "--theta", "1.0", "--phi", "0.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "fidelity: 1.000000"), "{text}");
    assert!(text.contains("corrections: "));
    assert_eq!(text.matches("fidelity=1.000000").count(), 4);

    let o = qshield(
        &["demo", "teleport", "--theta", "4.0", "--phi", "0.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}
