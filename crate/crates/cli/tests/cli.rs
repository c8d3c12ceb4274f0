use std::path::Path;
use std::process::{Command, Output};

fn attnmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnmod"))
        .args(args)
        .env("ATTNMOD_NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn golden() -> Vec<u8> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/golden_boy_seed42_step0.pgm");
    std::fs::read(p).unwrap()
}

#[test]
fn parse_prints_table() {
    let o = attnmod(&["parse", "a boy in front of a female"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("a boy"));
    assert!(out.contains("a female"));
    assert!(out.contains("in front of"));
    assert!(!out.contains('\x1b'));
}

#[test]
fn parse_exit_codes() {
    assert_eq!(attnmod(&["parse", "  "]).status.code(), Some(1));
    assert_eq!(attnmod(&["parse", "!!"]).status.code(), Some(1));
    let o = attnmod(&["parse", "of the in"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NoEntityFound"));
    assert_eq!(attnmod(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn parse_json_round_trips() {
    let o = attnmod(&["--json", "parse", "two giraffes crossing a road."]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["entities"][0]["label"], "two giraffes");
    assert_eq!(v["tokens"][1]["tag"], "NOUN");
    let again = serde_json::to_string_pretty(&v).unwrap() + "\n";
    assert_eq!(again, text);
}

#[test]
fn lexicon_override() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lex.tsv");
    std::fs::write(&lex, "# tiny\na\tDET\ncat\tNOUN\nsat\tVERB\n").unwrap();
    let lex = lex.to_str().unwrap();

    let default = attnmod(&["--json", "parse", "a cat sat"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&default)).unwrap();
    assert_eq!(v["entities"][0]["end"], 3);

    let custom = attnmod(&["--json", "--lexicon", lex, "parse", "a cat sat"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&custom)).unwrap();
    assert_eq!(v["entities"][0]["end"], 2);
    assert_eq!(v["other_spans"], serde_json::json!([2]));

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "cat NOUN\n").unwrap();
    let o = attnmod(&["--lexicon", bad.to_str().unwrap(), "parse", "a cat"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = attnmod(&["--seed", "42", "trace", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("wrote 30 steps"));
        manifests.push(std::fs::read(out.join("manifest.json")).unwrap());
        assert!(out.join("step_029_modulated.atnf").exists());
        assert!(out.join("timing.json").exists());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"self_mod": {"tau": 0}}"#, "tau"),
        (r#"{"trace": {"steps": 0}}"#, "trace.steps"),
        (r#"{"self_mod": {"gate_start": 0.5, "gate_end": 0.2}}"#, "gate_end"),
        (r#"{"cross_mod": {"mode": "sideways"}}"#, "mode"),
        (r#"{"trace": {"prompt": "a b c d e f g h i j k l m n o p q r"}}"#, "tokens"),
    ];
    for (i, (json, field)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("c{i}.json"));
        std::fs::write(&path, json).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let o = attnmod(&["--config", path.to_str().unwrap(), "trace", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(3), "{json}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{json}: {}", stderr(&o));
    }
}

#[test]
fn tau_above_one_warns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"self_mod": {"tau": 1.5}}"#).unwrap();
    let o = attnmod(&["--config", path.to_str().unwrap(), "parse", "a cat"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn render_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("boy.pgm");
    let o = attnmod(&["--seed", "42", "render", "--out", out.to_str().unwrap(), "--token", "boy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), golden());
}

#[test]
fn render_patch_and_raw() {
    let dir = tempfile::tempdir().unwrap();
    let patch = dir.path().join("self.pgm");
    let o = attnmod(&["render", "--out", patch.to_str().unwrap(), "--patch", "8,8", "--head", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(std::fs::read(&patch).unwrap().starts_with(b"P5\n16 16\n255\n"));

    let raw = dir.path().join("raw.pgm");
    let o = attnmod(&["render", "--out", raw.to_str().unwrap(), "--token-index", "1", "--field", "raw"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(&raw).unwrap(), golden());

    let o = attnmod(&["render", "--out", raw.to_str().unwrap(), "--token", "zebra"]);
    assert_eq!(o.status.code(), Some(1));
    let o = attnmod(&["render", "--out", raw.to_str().unwrap(), "--token", "boy", "--step", "30"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_to_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing/dir/boy.pgm");
    let o = attnmod(&["render", "--out", out.to_str().unwrap(), "--token", "boy"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn ablate_lists_five_arms() {
    let o = attnmod(&["ablate", "--no-timing"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for arm in ["baseline", "self_only", "mask_only", "reweight_only", "full"] {
        assert!(rows.iter().any(|r| r.starts_with(arm)), "{arm} missing");
    }
    let mask = rows.iter().find(|r| r.starts_with("mask_only")).unwrap();
    assert!(mask.contains("0.0000"));
}
