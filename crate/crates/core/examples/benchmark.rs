//! Judging outputs and running the benchmark on a checkpoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_flow::eval::{format_table, judge_sample, run_benchmark, EvalSettings};
use reasoning_flow::model::{Model, ModelConfig};
use reasoning_flow::sft::{train_sft, SftConfig, TrainExample};
use reasoning_flow::world::{TaskKind, World, WorldConfig};

fn main() {
    let world = World::new(WorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tasks: Vec<_> = (0..900).map(|i| world.sample_task(TaskKind::ALL[i % 8], &mut rng).unwrap()).collect();
    let (train, suite) = tasks.split_at(800);

    let t = &suite[0];
    println!("ground truth: {:?}", judge_sample(&world, t, &t.gt_image));
    println!("a reference:  {:?}", judge_sample(&world, t, &t.refs[0].image));

    let model = Model::new(ModelConfig::default(), WorldConfig::default()).unwrap();
    let data: Vec<TrainExample> = train.iter().map(TrainExample::from).collect();
    let params = train_sft(&model, &data, model.init_params(0), &SftConfig { steps: 400, ..SftConfig::default() }, None).unwrap().params;
    let ck = model.checkpoint(params);
    for use_cot in [true, false] {
        let (report, _) = run_benchmark(&ck, suite, &EvalSettings { use_cot, ..EvalSettings::default() }).unwrap();
        println!("\nwith reasoning: {use_cot} (digest {})", &report.config_digest[..16]);
        print!("{}", format_table(&report));
    }
}
