use super::*;

fn parse(text: &str) -> Result<Config, HarnessError> {
    parse_config(text, Path::new("cfg.json"))
}

#[test]
fn empty_object_gives_defaults() {
    assert_eq!(parse("{}").unwrap(), Config::default());
    assert_eq!(parse("{\"sft\": {}}").unwrap(), Config::default());
}

#[test]
fn dimension_mismatch_names_both_fields() {
    let e = parse(r#"{"world": {"dim": 32}, "model": {"dim": 16}}"#).unwrap_err();
    match &e {
        HarnessError::Consistency { first, second, .. } => assert_eq!((first.as_str(), second.as_str()), ("world.dim", "model.dim")),
        other => panic!("{other:?}"),
    }
    let msg = e.to_string();
    assert!(msg.contains("world.dim") && msg.contains("model.dim"), "{msg}");
}

#[test]
fn vocabulary_mismatch_names_both_sides() {
    let e = parse(r#"{"model": {"vocab_size": 3}}"#).unwrap_err();
    assert!(matches!(e, HarnessError::Consistency { ref first, .. } if first == "model.vocab_size"), "{e:?}");
    let v = Vocab::new(&WorldConfig::default()).len();
    assert!(parse(&format!(r#"{{"model": {{"vocab_size": {v}}}}}"#)).is_ok());
}

#[test]
fn parse_errors_carry_line_and_column() {
    let e = parse("{\n  \"sft\": {\n    \"steps\": \"many\"\n  }\n}").unwrap_err();
    match e {
        HarnessError::ConfigParse { line, path, .. } => {
            assert_eq!(line, 3);
            assert_eq!(path, PathBuf::from("cfg.json"));
        }
        other => panic!("{other:?}"),
    }
    let e = parse(r#"{"sft": {"stepz": 3}}"#).unwrap_err();
    assert!(e.to_string().contains("stepz"), "{e}");
}

#[test]
fn single_field_errors_are_reported() {
    assert!(parse(r#"{"align": {"group_size": 1}}"#).is_err());
    assert!(parse(r#"{"filter": {"min_quality": 2.0}}"#).is_err());
    assert!(parse(r#"{"eval": {"suite_size": 0}}"#).is_err());
    assert!(parse(r#"{"data": {"mix": [1, 0, 0, 0, 0, 0, 0, 0.5]}}"#).is_err());
}

#[test]
fn load_serialize_load_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"sft": {"steps": 17, "optimizer": {"kind": "sgd"}}, "align": {"sigma": 0.5}, "paths": {"run_dir": "x"}}"#).unwrap();
    let a = load_config(&p).unwrap();
    std::fs::write(&p, a.to_json()).unwrap();
    let b = load_config(&p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(b.sft.steps, 17);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_config(Path::new("/nonexistent/c.json")), Err(HarnessError::Io { .. })));
}

#[test]
fn reseed_sets_every_stage() {
    let mut c = Config::default();
    c.reseed(7);
    assert_eq!((c.data.seed, c.sft.seed, c.align.seed, c.eval.seed, c.eval.suite_seed), (7, 7, 7, 7, 8));
}
