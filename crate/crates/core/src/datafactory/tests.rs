use super::*;
use crate::iccot::validate;
use crate::iccot::render_trace;
use crate::world::WorldConfig;
use proptest::prelude::*;

fn world() -> World {
    World::new(WorldConfig::default()).unwrap()
}

fn build(n: usize, rate: f64, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_records(&world(), n, &KindMix::default(), &CorruptionConfig::with_rate(rate), &mut rng).unwrap()
}

#[test]
fn clean_records_score_perfectly() {
    for r in build(200, 0.0, 1) {
        assert!((r.scores.caption_sim - 1.0).abs() < 1e-6, "{:?}", r.scores);
        assert!((r.scores.quality - 1.0).abs() < 1e-9);
        assert_eq!(r.scores.instruction_score, 10.0);
        assert!(r.corruption.is_none());
    }
}

#[test]
fn traces_match_reference_counts() {
    for r in build(300, 0.2, 2) {
        assert_eq!(r.trace.num_refs(), r.refs.len());
        assert!(validate(&render_trace(&r.trace), r.refs.len()).ok);
    }
}

#[test]
fn corruption_frequency() {
    let recs = build(1000, 0.2, 3);
    let bad = recs.iter().filter(|r| r.corruption.is_some()).count() as f64 / 1000.0;
    assert!((bad - 0.2).abs() <= 0.03, "{bad}");
}

#[test]
fn all_kinds_appear_and_single_kind_mix_is_respected() {
    let recs = build(400, 0.0, 4);
    for k in TaskKind::ALL {
        assert!(recs.iter().any(|r| r.task_kind == k), "{k}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let only = build_records(&world(), 50, &KindMix::only(TaskKind::RefSceneEdit), &CorruptionConfig::default(), &mut rng).unwrap();
    assert!(only.iter().all(|r| r.task_kind == TaskKind::RefSceneEdit));
}

#[test]
fn invalid_requests_are_rejected() {
    let w = world();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = CorruptionConfig::default();
    assert!(matches!(build_records(&w, 10, &KindMix([0.5; 8]), &c, &mut rng), Err(DataError::Mix(_))));
    let mut neg = [0.25; 8];
    neg[0] = -0.75;
    assert!(matches!(build_records(&w, 10, &KindMix(neg), &c, &mut rng), Err(DataError::Mix(_))));
    assert!(matches!(build_records(&w, 0, &KindMix::default(), &c, &mut rng), Err(DataError::Build(_))));
    assert!(build_records(&w, 1, &KindMix::default(), &CorruptionConfig::with_rate(1.5), &mut rng).is_err());
}

#[test]
fn same_seed_same_records() {
    assert_eq!(build(50, 0.3, 9), build(50, 0.3, 9));
    assert_ne!(build(50, 0.3, 9), build(50, 0.3, 10));
}

#[test]
fn trace_ignores_the_target_image() {
    let w = world();
    for r in build(50, 0.0, 5) {
        let mut t = r.to_task();
        let before = oracle_trace(&w, &t);
        t.gt_image = ImageVec(vec![0.5; t.gt_image.dim()]);
        t.gt_spec = w.random_spec(&mut ChaCha8Rng::seed_from_u64(r.id));
        assert_eq!(oracle_trace(&w, &t), before);
        assert_eq!(before, r.trace);
    }
}

#[test]
fn permissive_thresholds_keep_everything() {
    let recs = build(200, 0.5, 6);
    let (kept, rep) = filter_dataset(recs.clone(), &FilterThresholds::permissive());
    assert_eq!(kept, recs);
    assert_eq!(rep.removal_fraction, 0.0);
    assert!(rep.removed_by_rule.values().all(|c| *c == 0));
}

#[test]
fn default_thresholds_separate_corruption() {
    let w = world();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clean = build_records(&w, 800, &KindMix::default(), &CorruptionConfig::with_rate(0.0), &mut rng).unwrap();
    let bad = build_records(&w, 200, &KindMix::default(), &CorruptionConfig::with_rate(1.0), &mut rng).unwrap();
    let (kept_clean, _) = filter_dataset(clean, &FilterThresholds::default());
    let (kept_bad, _) = filter_dataset(bad, &FilterThresholds::default());
    assert!(kept_clean.len() >= 760, "clean kept {}", kept_clean.len());
    assert!(kept_bad.len() <= 20, "corrupted kept {}", kept_bad.len());
}

#[test]
fn report_attributes_each_removal_once() {
    let recs = build(300, 0.3, 8);
    let th = FilterThresholds::default();
    let expected: Vec<Option<FilterRule>> = recs.iter().map(|r| th.first_failure(&r.scores)).collect();
    let (kept, rep) = filter_dataset(recs.clone(), &th);
    assert_eq!(rep.total, 300);
    assert_eq!(rep.kept + rep.removed_by_rule.values().sum::<usize>(), rep.total);
    for rule in FilterRule::ALL {
        assert_eq!(rep.removed_by_rule[&rule], expected.iter().filter(|e| **e == Some(rule)).count());
    }
    let ids: Vec<u64> = recs.iter().zip(&expected).filter(|(_, e)| e.is_none()).map(|(r, _)| r.id).collect();
    assert_eq!(kept.iter().map(|r| r.id).collect::<Vec<_>>(), ids);
    assert!((rep.removal_fraction - (1.0 - kept.len() as f64 / 300.0)).abs() < 1e-15);
}

#[test]
fn first_failure_uses_fixed_order() {
    let th = FilterThresholds::default();
    let s = Scores { caption_sim: 0.1, quality: 0.1, instruction_score: 0.0 };
    assert_eq!(th.first_failure(&s), Some(FilterRule::CaptionSim));
    assert_eq!(th.first_failure(&Scores { caption_sim: 1.0, ..s }), Some(FilterRule::Quality));
    assert_eq!(th.first_failure(&Scores { caption_sim: 1.0, quality: 1.0, ..s }), Some(FilterRule::InstructionScore));
    assert_eq!(th.first_failure(&Scores { caption_sim: 1.0, quality: 1.0, instruction_score: 10.0 }), None);
    assert!(FilterThresholds { min_quality: 1.5, ..th }.validate().is_err());
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub").join("data.jsonl");
    let recs = build(1000, 0.2, 11);
    assert_eq!(write_jsonl(&recs, &path).unwrap(), 1000);
    assert_eq!(read_jsonl(&path).unwrap(), recs);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1000);
    assert!(text.lines().all(|l| l.starts_with("{\"id\":")));
}

#[test]
fn empty_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    write_jsonl(&[], &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), Vec::<u8>::new());
    assert!(read_jsonl(&path).unwrap().is_empty());
}

#[test]
fn truncated_line_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.jsonl");
    write_jsonl(&build(3, 0.0, 12), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    match read_jsonl(&path) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    let msg = read_jsonl(&path).unwrap_err().to_string();
    assert!(msg.contains("cut.jsonl:3:"), "{msg}");
}

#[test]
fn relation_count_mismatch_is_reported_on_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut recs = build(2, 0.0, 13);
    let extra = recs[1].refs[0].clone();
    recs[1].refs.push(extra);
    write_jsonl(&recs, &path).unwrap();
    assert!(matches!(read_jsonl(&path), Err(DataError::Parse { line: 2, .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(read_jsonl(Path::new("/nonexistent/x.jsonl")), Err(DataError::Io { .. })));
}

fn corpus() -> &'static [DatasetRecord] {
    static C: std::sync::OnceLock<Vec<DatasetRecord>> = std::sync::OnceLock::new();
    C.get_or_init(|| build(300, 0.3, 14))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn raising_a_threshold_never_adds_records(
        c in -1.0f64..1.0, q in 0.0f64..1.0, i in 0.0f64..10.0, which in 0usize..3, bump in 0.0f64..1.0,
    ) {
        let lo = FilterThresholds { min_caption_sim: c, min_quality: q, min_instruction_score: i };
        let mut hi = lo;
        match which {
            0 => hi.min_caption_sim = c + bump * (1.0 - c),
            1 => hi.min_quality = q + bump * (1.0 - q),
            _ => hi.min_instruction_score = i + bump * (10.0 - i),
        }
        let (a, _) = filter_dataset(corpus().to_vec(), &lo);
        let (b, _) = filter_dataset(corpus().to_vec(), &hi);
        let ids: std::collections::HashSet<u64> = a.iter().map(|r| r.id).collect();
        prop_assert!(b.len() <= a.len());
        prop_assert!(b.iter().all(|r| ids.contains(&r.id)));
    }
}
