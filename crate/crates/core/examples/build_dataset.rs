//! Building a scored dataset with injected corruption, filtering it and
//! round-tripping it through JSONL.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_flow::datafactory::{build_records, filter_dataset, read_jsonl, write_jsonl, CorruptionConfig, FilterThresholds, KindMix};
use reasoning_flow::world::{World, WorldConfig};

fn main() {
    let world = World::new(WorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let records = build_records(&world, 500, &KindMix::default(), &CorruptionConfig::with_rate(0.2), &mut rng).unwrap();
    let corrupted = records.iter().filter(|r| r.corruption.is_some()).count();
    println!("built {} records, {corrupted} corrupted", records.len());
    for r in records.iter().filter(|r| r.corruption.is_some()).take(4) {
        println!("  #{} {:?}: {:?}", r.id, r.corruption.unwrap(), r.scores);
    }

    let (kept, report) = filter_dataset(records.clone(), &FilterThresholds::default());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("corrupted records kept: {}", kept.iter().filter(|r| r.corruption.is_some()).count());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_jsonl(&kept, &path).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), kept);
    println!("wrote and re-read {} records ({} bytes)", kept.len(), std::fs::metadata(&path).unwrap().len());
}
