use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::ModelConfig;
use crate::world::{TaskKind, WorldConfig};

fn micro_world() -> WorldConfig {
    WorldConfig { dim: 16, ..WorldConfig::default() }
}

fn micro() -> (World, Model) {
    let cfg = ModelConfig {
        dim: 16,
        head_width: 8,
        head_embed: 4,
        ref_width: 4,
        cond_embed: 4,
        ctx_width: 6,
        vel_width: 8,
        ..ModelConfig::default()
    };
    (World::new(micro_world()).unwrap(), Model::new(cfg, micro_world()).unwrap())
}

/// Init plus uniform jitter so no tensor is identically zero.
fn jittered(model: &Model, seed: u64) -> Params<f32> {
    let mut p = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
    for i in 0..p.num_tensors() {
        for v in p.tensor_mut(i) {
            *v += rng.random_range(-0.2f32..0.2);
        }
    }
    p
}

/// Rollout with fixed, non-trivial advantages (an untrained micro head writes
/// unparseable traces, so its rewards are all zero).
fn group_with_advantages(model: &Model, world: &World, p: &Params<f32>, cfg: &AlignConfig, seed: u64) -> RolloutGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt = prompts(world, 1, seed + 1).remove(0);
    let mut g = rollout_group(model, world, p, &prompt, cfg, &mut rng).unwrap();
    let rewards: Vec<f64> = (0..g.members.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    for (m, a) in g.members.iter_mut().zip(compute_advantages(&rewards, cfg.std_guard)) {
        m.advantage = a;
    }
    g
}

fn prompts(world: &World, n: usize, seed: u64) -> Vec<Prompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| Prompt::of(&world.sample_task(TaskKind::ALL[i % 8], &mut rng).unwrap())).collect()
}

#[test]
fn advantages_match_the_worked_example() {
    let a = compute_advantages(&[0.2, 0.4, 0.6, 0.8], 0.0);
    // mean 0.5, population std sqrt(0.05) = 1/sqrt(20): advantages are ±3/√5 and ±1/√5.
    let s5 = 5f64.sqrt();
    let expected = [-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5];
    for (x, e) in a.iter().zip(expected) {
        assert!((x - e).abs() < 1e-12, "{x} vs {e}");
    }
    for (x, e) in a.iter().zip([-1.34164, -0.44721, 0.44721, 1.34164]) {
        assert!((x - e).abs() < 1e-5);
    }
}

#[test]
fn equal_rewards_give_zero_advantages() {
    assert_eq!(compute_advantages(&[0.7; 6], 1e-8), vec![0.0; 6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn advantages_are_centred_and_scaled(rewards in prop::collection::vec(-1.0f64..1.0, 2..33)) {
        let eps = 1e-8;
        let a = compute_advantages(&rewards, eps);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        let n = rewards.len() as f64;
        let m = rewards.iter().sum::<f64>() / n;
        let std = (rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n).sqrt();
        if std > 10.0 * eps {
            let var = a.iter().map(|x| x * x).sum::<f64>() / n;
            let expected = (std / (std + eps)).powi(2);
            prop_assert!((var - expected).abs() < 1e-9, "{} vs {}", var, expected);
        }
    }
}

#[test]
fn without_rid_the_group_shares_one_trace() {
    let (world, model) = micro();
    let p = jittered(&model, 1);
    let cfg = AlignConfig { rid_enabled: false, ..AlignConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for prompt in prompts(&world, 4, 3) {
        let g = rollout_group(&model, &world, &p, &prompt, &cfg, &mut rng).unwrap();
        assert_eq!(g.members.len(), cfg.group_size);
        assert!(g.members.iter().all(|m| m.trace.text == g.members[0].trace.text));
        assert!(g.members.iter().any(|m| m.states[0] != g.members[0].states[0]));
    }
}

#[test]
fn shared_trace_and_noise_collapse_the_group() {
    let (world, model) = micro();
    let p = jittered(&model, 4);
    let cfg = AlignConfig { rid_enabled: false, shared_noise: true, ..AlignConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = rollout_group(&model, &world, &p, &prompts(&world, 1, 6)[0], &cfg, &mut rng).unwrap();
    assert!(g.rewards().iter().all(|r| *r == g.members[0].reward));
    assert_eq!(g.reward_std(), 0.0);
    assert!(g.members.iter().all(|m| m.advantage == 0.0));
    let (next, _) = grpo_update(&model, &p, &g, &cfg).unwrap();
    assert_eq!(next, p);
}

#[test]
fn first_update_is_on_policy() {
    let (world, model) = micro();
    let p = jittered(&model, 7);
    let cfg = AlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for prompt in prompts(&world, 3, 9) {
        let g = rollout_group(&model, &world, &p, &prompt, &cfg, &mut rng).unwrap();
        let (stats, _) = grpo_objective(&model, &p, &g, cfg.clip_eps).unwrap();
        assert_eq!(stats.max_ratio_dev, 0.0);
        assert_eq!(stats.clip_fraction, 0.0);
        // With ρ = 1 the objective is the mean advantage, which is zero.
        assert!(stats.objective.abs() < 1e-9);
    }
}

#[test]
fn zero_advantages_give_a_zero_update() {
    let (world, model) = micro();
    let p = jittered(&model, 10);
    let cfg = AlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = rollout_group(&model, &world, &p, &prompts(&world, 1, 12)[0], &cfg, &mut rng).unwrap();
    for m in &mut g.members {
        m.advantage = 0.0;
    }
    let (next, _) = grpo_update(&model, &p, &g, &cfg).unwrap();
    assert_eq!(next, p);
}

/// Unclipped surrogate `mean ρ·A`, computed only through the public
/// log-density path.
fn unclipped(model: &Model, p: &Params<f64>, g: &RolloutGroup) -> f64 {
    let prepared = model.prepare::<f64>(&g.prompt).unwrap();
    let mut total = 0.0;
    let mut n = 0;
    for m in &g.members {
        let states: Vec<Vec<f64>> = m.states.iter().map(|s| s.iter().map(|v| *v as f64).collect()).collect();
        let lp = model.trajectory_log_densities(p, &prepared, Some(m.trace.content()), &states, g.sigma).unwrap();
        for (new, old) in lp.iter().zip(&m.log_densities) {
            total += (new - old).exp() * m.advantage;
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn gradient_inside_the_trust_region_is_the_policy_gradient() {
    let (world, model) = micro();
    let cfg = AlignConfig { group_size: 4, rollout_steps: 4, ..AlignConfig::default() };
    for seed in 0..3u64 {
        let p32 = jittered(&model, 20 + seed);
        let g = group_with_advantages(&model, &world, &p32, &cfg, 30 + seed);
        let p = p32.cast::<f64>();
        let (stats, grad) = grpo_objective(&model, &p, &g, cfg.clip_eps).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let support: Vec<usize> = grad.flat().enumerate().filter(|(_, v)| *v != 0.0).map(|(k, _)| k).collect();
        assert!(!support.is_empty());
        let h = 1e-5;
        for n in 0..40 {
            let k = if n % 2 == 0 {
                support[rng.random_range(0..support.len())]
            } else {
                rng.random_range(0..p.num_scalars())
            };
            let (ti, off) = p.flat_locate(k);
            let mut plus = p.clone();
            plus.tensor_mut(ti)[off] += h;
            let mut minus = p.clone();
            minus.tensor_mut(ti)[off] -= h;
            let fd = (unclipped(&model, &plus, &g) - unclipped(&model, &minus, &g)) / (2.0 * h);
            let an = grad.tensor(ti)[off];
            let denom = fd.abs().max(an.abs());
            if denom > 1e-7 {
                assert!((fd - an).abs() / denom <= 1e-3, "{}[{off}]: fd {fd} vs {an}", p.layout().tensors()[ti].name);
            } else {
                assert!((fd - an).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn clipped_objective_gradient_matches_finite_differences() {
    let (world, model) = micro();
    let cfg = AlignConfig { group_size: 4, rollout_steps: 4, clip_eps: 0.01, ..AlignConfig::default() };
    let p32 = jittered(&model, 60);
    let g = group_with_advantages(&model, &world, &p32, &cfg, 61);
    // Move off-policy until some, but not all, ratios leave the trust region.
    let mut found = None;
    for scale in [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5] {
        let mut p = p32.cast::<f64>();
        let mut jitter = ChaCha8Rng::seed_from_u64(63);
        for i in 0..p.num_tensors() {
            for v in p.tensor_mut(i) {
                *v += jitter.random_range(-scale..scale);
            }
        }
        let (stats, grad) = grpo_objective(&model, &p, &g, cfg.clip_eps).unwrap();
        if stats.clip_fraction > 0.0 && stats.clip_fraction < 1.0 {
            found = Some((p, grad));
            break;
        }
    }
    let (p, grad) = found.expect("a perturbation with partial clipping");
    let objective = |q: &Params<f64>| grpo_objective(&model, q, &g, cfg.clip_eps).unwrap().0.objective;
    let support: Vec<usize> = grad.flat().enumerate().filter(|(_, v)| *v != 0.0).map(|(k, _)| k).collect();
    let h = 1e-7;
    for n in 0..30 {
        let k = support[(n * 7919) % support.len()];
        let (ti, off) = p.flat_locate(k);
        let mut plus = p.clone();
        plus.tensor_mut(ti)[off] += h;
        let mut minus = p.clone();
        minus.tensor_mut(ti)[off] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let an = grad.tensor(ti)[off];
        assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()) + 1e-8, "{}[{off}]: fd {fd} vs {an}", p.layout().tensors()[ti].name);
    }
}

#[test]
fn reasoning_head_is_frozen() {
    let (world, model) = micro();
    let p = jittered(&model, 70);
    let cfg = AlignConfig { group_size: 4, learning_rate: 0.05, ..AlignConfig::default() };
    let g = group_with_advantages(&model, &world, &p, &cfg, 71);
    let (next, _) = grpo_update(&model, &p, &g, &cfg).unwrap();
    let mut moved = false;
    for i in 0..p.num_tensors() {
        if model.layout().is_head(i) {
            assert_eq!(next.tensor(i), p.tensor(i));
        } else {
            moved |= next.tensor(i) != p.tensor(i);
        }
    }
    assert!(moved);
}

#[test]
fn zero_learning_rate_keeps_the_checkpoint_bytes() {
    let (world, model) = micro();
    let p = jittered(&model, 80);
    let cfg = AlignConfig { steps: 4, group_size: 3, learning_rate: 0.0, ..AlignConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let out = train_align(&model, &world, p.clone(), &prompts(&world, 4, 81), &cfg, Some(dir.path())).unwrap();
    assert_eq!(model.checkpoint(out.params).to_bytes(), model.checkpoint(p).to_bytes());
    let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let rows: Vec<AlignMetrics> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn zero_sigma_aborts_with_the_last_good_parameters() {
    let (world, model) = micro();
    let p = jittered(&model, 90);
    let cfg = AlignConfig { steps: 2, group_size: 2, sigma: 0.0, ..AlignConfig::default() };
    match train_align(&model, &world, p.clone(), &prompts(&world, 2, 91), &cfg, None) {
        Err(TrainError::Aborted { step: 0, last_good, .. }) => assert_eq!(*last_good, p),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(AlignConfig { group_size: 1, ..AlignConfig::default() }.validate().is_err());
    assert!(AlignConfig { clip_eps: 0.0, ..AlignConfig::default() }.validate().is_err());
    assert!(AlignConfig { sigma: -0.1, ..AlignConfig::default() }.validate().is_err());
    assert!(AlignConfig { std_guard: 0.0, ..AlignConfig::default() }.validate().is_err());
    assert!(AlignConfig::default().validate().is_ok());
}
