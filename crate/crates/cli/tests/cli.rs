use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use seasynth_core::manifest::{CropVerdictEntry, ManifestRecord, ManifestWriter, Verdict};
use seasynth_core::SeaState;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seasynth"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures(dir: &Path) {
    ok(dir, &["make-fixtures", "--output", "fx", "--count", "6", "--width", "64", "--height", "48", "--seed", "3"]);
    std::fs::write(
        dir.join("mock.toml"),
        "[data]\nannotations = \"fx/annotations.json\"\n[pipeline]\nimages_per_source = 4\noutput_root = \"out\"\nworkers = 2\n",
    )
    .unwrap();
}

fn summary_without_timestamps(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("started_at");
    obj.remove("finished_at");
    v
}

#[test]
fn run_twice_gives_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    ok(dir.path(), &["run", "--config", "mock.toml", "--seed", "7"]);
    let first = summary_without_timestamps(&dir.path().join("out/run_summary.json"));
    ok(dir.path(), &["run", "--config", "mock.toml", "--seed", "7"]);
    let second = summary_without_timestamps(&dir.path().join("out/run_summary.json"));
    assert_eq!(first, second);
    assert_eq!(first["records_total"], 24);

    // A fresh output root with a different worker count gives the same counts.
    ok(dir.path(), &["run", "--config", "mock.toml", "--seed", "7", "--workers", "1", "--output", "out2"]);
    let third = summary_without_timestamps(&dir.path().join("out2/run_summary.json"));
    assert_eq!(first["per_state"], third["per_state"]);
    assert_eq!(first["kept_total"], third["kept_total"]);
}

fn write_table_fixture(path: &Path) {
    let generated = [2336u64, 25114, 65275, 4275];
    let filtered = [2087u64, 19390, 45066, 3151];
    let mut w = ManifestWriter::open(path).unwrap();
    for (s, state) in SeaState::ALL.iter().enumerate() {
        for i in 0..generated[s] {
            let kept = i < filtered[s];
            w.append(&ManifestRecord {
                edited_id: format!("{}-{i}", state.dir_name()),
                source_id: "src".into(),
                backend_name: "mock".into(),
                prompt: String::new(),
                seed: i,
                sea_state: *state,
                crop_verdicts: vec![CropVerdictEntry {
                    box_index: 0,
                    verdict: if kept { Verdict::Boat } else { Verdict::NotBoat },
                }],
                kept,
                created_at: chrono::DateTime::UNIX_EPOCH,
            })
            .unwrap();
        }
    }
}

#[test]
fn stats_over_table_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    write_table_fixture(&manifest);
    let text = ok(dir.path(), &["stats", "--manifest", "m.jsonl"]);
    assert!(text.contains("passing rate: 71.85%"), "{text}");
    let json: Value = serde_json::from_str(&ok(dir.path(), &["stats", "--manifest", "m.jsonl", "--json"])).unwrap();
    assert_eq!(json["total_generated"], 97000);
    assert_eq!(json["total_filtered"], 69694);
    assert!((json["passing_rate"].as_f64().unwrap() - 71.85).abs() < 0.01);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unrecognized subcommand"));
    assert!(err.contains("Commands:"), "top-level help expected on stderr: {err}");
}

#[test]
fn missing_argument_prints_subcommand_help() {
    let out = bin().args(["train-seastate", "--epochs", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--corpus"));
    assert!(err.contains("Usage: seasynth train-seastate"), "{err}");
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["stats", "--manifest", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("annotation"));
}

#[test]
fn every_subcommand_help_shows_common_flags_and_defaults() {
    let subcommands: &[&[&str]] = &[
        &["mask"],
        &["generate"],
        &["classify"],
        &["check"],
        &["run"],
        &["stats"],
        &["train-seastate"],
        &["train-checker"],
        &["build-negatives"],
        &["eval"],
        &["review", "serve"],
        &["review", "create"],
        &["review", "next"],
        &["review", "submit"],
        &["review", "stats"],
        &["make-fixtures"],
        &["mock-backend", "serve"],
    ];
    for sub in subcommands {
        let out = bin().args(*sub).arg("--help").output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub:?}");
        let help = String::from_utf8(out.stdout).unwrap();
        for flag in ["--seed", "--config", "--workers", "--output"] {
            assert!(help.contains(flag), "{sub:?} help lacks {flag}");
        }
        assert!(help.contains("[default:"), "{sub:?} help shows no defaults");
    }
    let help = String::from_utf8(bin().args(["train-checker", "--help"]).output().unwrap().stdout).unwrap();
    assert!(help.contains("[default: 32]") && help.contains("[default: 0.00001]"), "{help}");
}

#[test]
fn stage_commands_work_on_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let d = dir.path();
    assert!(ok(d, &["mask", "--config", "mock.toml", "--output", "masks"]).contains("wrote 6 masks"));
    assert!(d.join("masks/src000.mask.png").is_file());
    let gen = ok(d, &["generate", "--config", "mock.toml", "--output", "gen", "--images-per-source", "2"]);
    assert!(gen.contains("generated 12 images"), "{gen}");
    let check = ok(d, &["check", "--config", "mock.toml", "--generated", "gen"]);
    assert!(check.contains("kept 12 of 12"), "{check}");
    let classify = ok(d, &["classify", "gen", "--json"]);
    assert_eq!(classify.lines().count(), 12);
    let first: Value = serde_json::from_str(classify.lines().next().unwrap()).unwrap();
    assert!((1..=4).contains(&first["sea_state"].as_u64().unwrap()));
    let neg = ok(d, &["build-negatives", "--config", "mock.toml", "--generated", "gen", "--output", "neg"]);
    assert!(neg.contains("quarter negatives"), "{neg}");
    assert!(d.join("neg/provenance.jsonl").is_file());
}

#[test]
fn training_commands_echo_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["make-fixtures", "--kind", "checker", "--count", "20", "--output", "ck", "--seed", "1"]);
    let log = ok(d, &["train-checker", "--dataset", "ck", "--epochs", "2", "--output", "model", "--seed", "1"]);
    assert!(log.contains("batch=32 lr=1e-5 optimizer=Adam"), "{log}");
    assert!(d.join("model/model.json").is_file());
    ok(d, &["make-fixtures", "--kind", "sea-state", "--count", "6", "--width", "32", "--output", "ss"]);
    let log = ok(d, &["train-seastate", "--corpus", "ss", "--epochs", "2", "--output", "ssm"]);
    assert!(log.contains("test accuracy"));
    let classify = ok(d, &["classify", "ss/SS1", "--classifier-model", "ssm"]);
    assert_eq!(classify.lines().count(), 6);
}

#[test]
fn eval_reports_per_state_table() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let d = dir.path();
    ok(d, &["run", "--config", "mock.toml"]);
    let ann: Value = serde_json::from_str(&std::fs::read_to_string(d.join("fx/annotations.json")).unwrap()).unwrap();
    let mut csv = String::from("image_id,x,y,w,h,score\n");
    for line in std::fs::read_to_string(d.join("out/manifest.jsonl")).unwrap().lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        for a in ann["annotations"].as_array().unwrap() {
            if a["image_id"] == rec["source_id"] {
                let b = &a["bbox"];
                csv += &format!("{},{},{},{},{},0.9\n", rec["edited_id"].as_str().unwrap(), b[0], b[1], b[2], b[3]);
            }
        }
    }
    std::fs::write(d.join("dets.csv"), csv).unwrap();
    let table = ok(d, &["eval", "--config", "mock.toml", "--detections", "dets.csv"]);
    assert!(table.starts_with("metric\tSS1\tSS2\tSS3\tSS4"), "{table}");
    let json: Value = serde_json::from_str(&ok(d, &["eval", "--config", "mock.toml", "--detections", "dets.csv", "--json"])).unwrap();
    for s in json["per_state"].as_array().unwrap() {
        if s["n_gt"].as_u64().unwrap() > 0 {
            assert_eq!(s["map50"], 1.0);
        }
    }
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn review_commands_talk_to_the_service() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let d = dir.path();
    ok(d, &["run", "--config", "mock.toml"]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let url = format!("http://{addr}");
    let _server = KillOnDrop(
        bin()
            .current_dir(d)
            .args(["review", "serve", "--config", "mock.toml", "--addr", &addr])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    let created = ok(d, &["review", "create", "--url", &url, "--sample-size", "2", "--seed", "4"]);
    assert!(created.starts_with("session-0001\t2 items"), "{created}");
    for good in ["true", "false"] {
        let next = ok(d, &["review", "next", "--url", &url, "session-0001"]);
        let id = next.split('\t').nth(1).unwrap().to_string();
        let verdict = ok(
            d,
            &[
                "review", "submit", "--url", &url, "session-0001", &id,
                "--background-valid", "true", "--background-realistic", good, "--boat-preserved", "true",
            ],
        );
        assert!(verdict.ends_with(if good == "true" { "good\n" } else { "bad\n" }), "{verdict}");
    }
    assert!(ok(d, &["review", "next", "--url", &url, "session-0001"]).starts_with("done"));
    let stats = ok(d, &["review", "stats", "--url", &url]);
    assert!(stats.contains("good image rate: 50.00% ± n/a"), "{stats}");
    let dup = run_in(
        d,
        &[
            "review", "submit", "--url", &url, "session-0001", "x",
            "--background-valid", "true", "--background-realistic", "true", "--boat-preserved", "true",
        ],
    );
    assert_eq!(dup.status.code(), Some(2));
}
