//! Sampling tasks from the symbolic world, rendering and decoding scenes,
//! and scoring images with the caption reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_flow::embed::{quality_score, surrogate_reward};
use reasoning_flow::iccot::render_trace;
use reasoning_flow::world::{caption_of, ImageVec, TaskKind, World, WorldConfig};

fn main() {
    let world = World::new(WorldConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in TaskKind::ALL {
        let task = world.sample_task(kind, &mut rng).unwrap();
        println!("== {kind} ({} reference(s))", task.refs.len());
        for (i, r) in task.refs.iter().enumerate() {
            println!("  ref {}: {}", i + 1, caption_of(&r.spec, world.config()));
        }
        println!("  instruction: {}", task.instruction);
        println!("  trace:       {}", render_trace(&task.gt_trace));
        let decoded = world.decode(&task.gt_image);
        assert_eq!(decoded, task.gt_spec);
        println!("  reward of the target against its caption: {:.3}", surrogate_reward(&world, &task.gt_image, task.gt_trace.caption()).value);
    }

    let task = world.sample_task(TaskKind::SubjectScene, &mut rng).unwrap();
    let noisy = ImageVec(task.gt_image.0.iter().enumerate().map(|(i, v)| v + 0.05 * ((i as f64) * 1.7).sin()).collect());
    println!("\nquality clean {:.3}, perturbed {:.3}", quality_score(&world, &task.gt_image), quality_score(&world, &noisy));
}
