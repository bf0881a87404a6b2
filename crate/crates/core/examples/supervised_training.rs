//! Short supervised run on oracle data, then generation with and without a
//! reasoning trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_flow::embed::surrogate_reward;
use reasoning_flow::model::{Model, ModelConfig, Prompt, SampleMode};
use reasoning_flow::sft::{train_sft, SftConfig, TrainExample};
use reasoning_flow::world::{caption_of, TaskKind, World, WorldConfig};

fn main() {
    let world = World::new(WorldConfig::default()).unwrap();
    let model = Model::new(ModelConfig::default(), WorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tasks: Vec<_> = (0..1200).map(|i| world.sample_task(TaskKind::ALL[i % 8], &mut rng).unwrap()).collect();
    let (train, test) = tasks.split_at(1000);
    let data: Vec<TrainExample> = train.iter().map(TrainExample::from).collect();
    let cfg = SftConfig { steps: 600, ..SftConfig::default() };
    let out = train_sft(&model, &data, model.init_params(0), &cfg, None).unwrap();
    for m in out.metrics.iter().step_by(100) {
        println!("step {:4}  cot {:.3}  flow {:.3}", m.step, m.cot_loss.unwrap_or(f64::NAN), m.flow_loss);
    }

    let (mut with, mut without, mut parsed) = (0.0, 0.0, 0);
    for (i, t) in test.iter().enumerate() {
        let prep = model.prepare::<f32>(&Prompt::of(t)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let trace = model.sample_trace(&out.params, &prep, 0.0, &mut rng);
        parsed += trace.is_parsed() as usize;
        let caption = caption_of(&t.gt_spec, world.config());
        let a = model.generate(&out.params, &prep, Some(trace.content()), 50, SampleMode::Ode, &mut rng).unwrap();
        let b = model.generate(&out.params, &prep, None, 50, SampleMode::Ode, &mut rng).unwrap();
        with += surrogate_reward(&world, &a.image(), &caption).value;
        without += surrogate_reward(&world, &b.image(), &caption).value;
        if i < 2 {
            println!("\ninstruction: {}\nsampled:     {}\ntarget:      {caption}", t.instruction, trace.text);
        }
    }
    let n = test.len() as f64;
    println!("\n{parsed}/{} traces parse; caption similarity with trace {:.3}, without {:.3}", test.len(), with / n, without / n);
}
