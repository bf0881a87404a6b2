//! Rollout groups with and without diverse reasoning, and a few
//! group-relative policy updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_flow::align::{grpo_objective, rollout_group, train_align, AlignConfig};
use reasoning_flow::model::{Model, ModelConfig, Prompt};
use reasoning_flow::sft::{train_sft, SftConfig, TrainExample};
use reasoning_flow::world::{TaskKind, World, WorldConfig};

fn main() {
    let world = World::new(WorldConfig::default()).unwrap();
    let model = Model::new(ModelConfig::default(), WorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tasks: Vec<_> = (0..800).map(|i| world.sample_task(TaskKind::ALL[i % 8], &mut rng).unwrap()).collect();
    let data: Vec<TrainExample> = tasks.iter().map(TrainExample::from).collect();
    let sft = train_sft(&model, &data, model.init_params(0), &SftConfig { steps: 400, ..SftConfig::default() }, None).unwrap().params;
    let prompts: Vec<Prompt> = tasks.iter().map(Prompt::of).collect();

    for rid in [false, true] {
        let cfg = AlignConfig { rid_enabled: rid, ..AlignConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = rollout_group(&model, &world, &sft, &prompts[0], &cfg, &mut rng).unwrap();
        let rewards: Vec<String> = g.rewards().iter().map(|r| format!("{r:.2}")).collect();
        println!("RID {rid:5}: rewards [{}] std {:.3}", rewards.join(" "), g.reward_std());
        for m in g.members.iter().take(2) {
            println!("    {}", m.trace.text);
        }
        let (stats, _) = grpo_objective(&model, &sft, &g, cfg.clip_eps).unwrap();
        println!("    on-policy ratio deviation {} clip fraction {}", stats.max_ratio_dev, stats.clip_fraction);
    }

    let cfg = AlignConfig { steps: 20, ..AlignConfig::default() };
    let out = train_align(&model, &world, sft, &prompts, &cfg, None).unwrap();
    for m in out.metrics.iter().step_by(5) {
        println!("step {:3} mean reward {:.3} std {:.3}", m.step, m.mean_reward, m.reward_std);
    }
}
