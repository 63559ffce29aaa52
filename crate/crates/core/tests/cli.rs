use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anyhow::Result;
use convlab::AttributedDataset;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn convlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convlab"))
        .args(args)
        .env_remove("CONVLAB_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn reproduce_matches_golden_files() {
    for table in ["1", "3", "4"] {
        let out = convlab(&["reproduce", "--table", table]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert_eq!(stdout(&out), golden(&format!("reproduce_table_{table}.txt")), "table {table}");
    }
}

#[test]
fn attribute_writes_json_lines() -> Result<()> {
    let events = data("two_advertisers.jsonl");
    let out = convlab(&[
        "--events",
        events.to_str().unwrap(),
        "attribute",
        "--rule",
        "LTA",
        "--relation",
        "user_advertiser",
        "--enforcement",
        "post",
        "--r",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = AttributedDataset::from_jsonl(&stdout(&out))?;
    let pairs = a.pair_ids();
    assert_eq!(
        pairs,
        vec![("i2".into(), "c1".into()), ("i2".into(), "c2".into()), ("i5".into(), "c5".into())]
    );
    Ok(())
}

#[test]
fn output_flag_writes_a_file() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let target = dir.path().join("attributed.jsonl");
    let events = data("two_advertisers.jsonl");
    let out = convlab(&[
        "--events",
        events.to_str().unwrap(),
        "--output",
        target.to_str().unwrap(),
        "attribute",
        "--rule",
        "UNI",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let a = AttributedDataset::from_jsonl(&std::fs::read_to_string(&target)?)?;
    assert!((a.weight("i1", "c4") - 0.25).abs() < 1e-12);
    Ok(())
}

fn sensitivity(events: &Path, rule: &str, pool: Option<&Path>) -> f64 {
    let mut args = vec![
        "--events",
        events.to_str().unwrap(),
        "sensitivity",
        "--rule",
        rule,
        "--relation",
        "impression",
        "--enforcement",
        "post",
    ];
    if let Some(p) = pool {
        args.extend(["--pool", p.to_str().unwrap()]);
    }
    let out = convlab(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    stdout(&out).trim().parse::<f64>().unwrap()
}

#[test]
fn sensitivity_over_removals_and_pool() -> Result<()> {
    let events = data("two_advertisers.jsonl");
    let pool = data("pool_impression.jsonl");
    assert_eq!(sensitivity(&events, "LTA", None), 2.0);
    assert_eq!(sensitivity(&events, "LTA", Some(&pool)), 2.0);
    assert_eq!(sensitivity(&events, "FTA", Some(&pool)), 2.0);

    // With no impressions there is nothing to remove; only additions count.
    let dir = tempfile::tempdir()?;
    let lonely = dir.path().join("lonely.jsonl");
    std::fs::write(&lonely, "{\"kind\":\"conversion\",\"id\":\"c1\",\"t\":5,\"user\":\"U\",\"advertiser\":\"A1\",\"conv_type\":\"purchase\"}\n")?;
    assert_eq!(sensitivity(&lonely, "LTA", None), 0.0);
    assert_eq!(sensitivity(&lonely, "LTA", Some(&pool)), 1.0);
    Ok(())
}

#[test]
fn measure_from_config_file() -> Result<()> {
    let events = data("two_advertisers.jsonl");
    let config = data("measure.json");
    let out = convlab(&["--events", events.to_str().unwrap(), "--config", config.to_str().unwrap(), "--seed", "4", "measure"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_str(&stdout(&out))?;
    assert_eq!(m["noise_scale"], 1200.0);
    assert_eq!(m["epsilon_spent"], 0.5);
    assert_eq!(m["values"].as_array().unwrap().len(), 1);
    let again = convlab(&["--events", events.to_str().unwrap(), "--config", config.to_str().unwrap(), "--seed", "4", "measure"]);
    assert_eq!(stdout(&out), stdout(&again));
    Ok(())
}

#[test]
fn measure_refuses_invalid_configurations() {
    let events = data("two_advertisers.jsonl");
    let base = [
        "--events",
        events.to_str().unwrap(),
        "measure",
        "--rule",
        "UNI",
        "--relation",
        "impression",
        "--enforcement",
        "post",
        "--query",
        r#"{"kind":"sliced_count"}"#,
        "--epsilon",
        "1",
    ];
    let refused = convlab(&base);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("refusing"));

    let mut forced = base.to_vec();
    forced.extend(["--unsafe-allow-invalid", "--c0", "5"]);
    let out = convlab(&forced);
    assert!(out.status.success(), "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(m["noise_scale"], 5.0);
}

#[test]
fn user_errors_exit_with_one() {
    let missing = convlab(&["--events", "/nonexistent/log.jsonl", "attribute"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).starts_with("error:"));

    let bad_relation = convlab(&["--events", data("two_advertisers.jsonl").to_str().unwrap(), "attribute", "--relation", "household"]);
    assert_eq!(bad_relation.status.code(), Some(1));

    let none_for_user = convlab(&[
        "--events",
        data("two_advertisers.jsonl").to_str().unwrap(),
        "attribute",
        "--relation",
        "user",
        "--enforcement",
        "none",
    ]);
    assert_eq!(none_for_user.status.code(), Some(1));

    let bad_table = convlab(&["reproduce", "--table", "2"]);
    assert_eq!(bad_table.status.code(), Some(1));
}

#[test]
fn malformed_events_report_the_line() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"kind\":\"impression\",\"id\":\"i1\",\"t\":1,\"user\":\"U\",\"publisher\":\"P\",\"advertiser\":\"A\",\"engagement\":\"click\"}\nnot json\n")?;
    let out = convlab(&["--events", path.to_str().unwrap(), "attribute"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    Ok(())
}

#[test]
fn jobs_environment_overrides_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_convlab"))
        .args(["--jobs", "2", "reproduce", "--table", "1"])
        .env("CONVLAB_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("CONVLAB_JOBS"));

    let malformed = Command::new(env!("CARGO_BIN_EXE_convlab"))
        .args(["--jobs", "four"])
        .args(["reproduce", "--table", "1"])
        .env("CONVLAB_JOBS", "1")
        .output()
        .unwrap();
    // clap rejects the malformed flag before the environment is consulted.
    assert_eq!(malformed.status.code(), Some(1));

    let one = Command::new(env!("CARGO_BIN_EXE_convlab"))
        .args(["--jobs", "3", "reproduce", "--table", "3"])
        .env("CONVLAB_JOBS", "1")
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(String::from_utf8(one.stdout).unwrap(), golden("reproduce_table_3.txt"));
}

#[test]
fn classify_writes_witness_pairs() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let witnesses = dir.path().join("w");
    let out = convlab(&["--seed", "3", "classify", "--trials", "5", "--witness-dir", witnesses.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let matrix: serde_json::Value = serde_json::from_str(&stdout(&out))?;
    assert_eq!(matrix["trials"], 5);
    assert_eq!(matrix["all_agree"], true);
    assert_eq!(matrix["cells"].as_array().unwrap().len(), 99);
    let stem = "UNI_impression_post";
    let d = std::fs::read_to_string(witnesses.join(format!("{stem}.d.jsonl")))?;
    let d_prime = std::fs::read_to_string(witnesses.join(format!("{stem}.d_prime.jsonl")))?;
    let d = convlab::events::parse_events_str(&d)?;
    let d_prime = convlab::events::parse_events_str(&d_prime)?;
    assert_eq!(d.impressions.len(), d_prime.impressions.len() + 1);
    Ok(())
}
