//! Reward alignment of the generator with group-relative policy optimization
//! over SDE rollouts.
//!
//! Each group samples `G` images for one prompt. The reward is the surrogate
//! caption similarity between an image and the caption written in its own
//! trace. With reasoning-induced diversity (RID) every member samples its own
//! trace; without it the group shares one. The reasoning head is frozen: its
//! tokens are treated as part of the environment.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::surrogate_reward;
use crate::model::{Model, ModelError, Params, Prompt, SampleMode, SampledTrace};
use crate::sft::{JsonlSink, Optimizer, Stepper, TrainError, CHECKPOINT_FILE, METRICS_FILE};
use crate::world::{ImageVec, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub group_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    /// SDE noise scale; the per-step std is `sigma·√Δ`.
    pub sigma: f64,
    /// Denoising steps per rollout.
    pub rollout_steps: usize,
    pub rid_enabled: bool,
    /// Added to the group std before dividing.
    pub std_guard: f64,
    /// All members start from the same initial noise; transition noise stays
    /// independent unless `shared_noise` is set.
    pub shared_init: bool,
    /// All members reuse one noise stream (diagnostic; breaks exploration).
    pub shared_noise: bool,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            group_size: 8,
            steps: 200,
            learning_rate: 1e-3,
            clip_eps: 0.2,
            sigma: 0.3,
            rollout_steps: 10,
            rid_enabled: true,
            std_guard: 1e-8,
            shared_init: false,
            shared_noise: false,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.group_size < 2 {
            return bad(format!("align.group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("align.learning_rate must be finite and ≥ 0, got {}", self.learning_rate));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad(format!("align.clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("align.sigma must be finite and ≥ 0, got {}", self.sigma));
        }
        if self.rollout_steps == 0 {
            return bad("align.rollout_steps must be positive".into());
        }
        if !(self.std_guard > 0.0 && self.std_guard.is_finite()) {
            return bad(format!("align.std_guard must be positive, got {}", self.std_guard));
        }
        Ok(())
    }
}

/// One sampled image with everything the update needs.
#[derive(Debug, Clone)]
pub struct Member {
    pub trace: SampledTrace,
    /// Generator-space states, initial noise first.
    pub states: Vec<Vec<f32>>,
    /// Behavior-policy transition log-densities.
    pub log_densities: Vec<f64>,
    pub image: ImageVec,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt: Prompt,
    pub members: Vec<Member>,
    /// Sigma the transitions were drawn with.
    pub sigma: f64,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.reward).collect()
    }

    pub fn reward_std(&self) -> f64 {
        mean_std(&self.rewards()).1
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(r − mean) / (std + eps)` with the population std. A group of equal
/// rewards gets exact zeros rather than rounding noise over `eps`.
pub fn compute_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let (mean, std) = mean_std(rewards);
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// Samples a group of `G` rollouts for one prompt. Advantages are filled in.
pub fn rollout_group(
    model: &Model,
    world: &World,
    params: &Params<f32>,
    prompt: &Prompt,
    cfg: &AlignConfig,
    rng: &mut impl Rng,
) -> Result<RolloutGroup, ModelError> {
    let prepared = model.prepare::<f32>(prompt)?;
    let shared = (!cfg.rid_enabled).then(|| model.sample_trace(params, &prepared, 1.0, rng));
    let shared_seed: u64 = rng.random();
    let init: Vec<f32> = model.initial_noise(rng);
    let mut members = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let trace = match &shared {
            Some(t) => t.clone(),
            None => model.sample_trace(params, &prepared, 1.0, rng),
        };
        let seed = if cfg.shared_noise { shared_seed } else { rng.random() };
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        let x1 = if cfg.shared_init { init.clone() } else { model.initial_noise(&mut noise) };
        let g = model.generate_from(
            params,
            &prepared,
            Some(trace.content()),
            x1,
            cfg.rollout_steps,
            SampleMode::Sde { sigma: cfg.sigma },
            &mut noise,
        )?;
        let image = g.image();
        let reward = surrogate_reward(world, &image, trace.caption()).value;
        if !reward.is_finite() {
            return Err(ModelError::NumericalFault(format!("reward {reward}")));
        }
        members.push(Member { trace, states: g.states, log_densities: g.log_densities, image, reward, advantage: 0.0 });
    }
    let adv = compute_advantages(&members.iter().map(|m| m.reward).collect::<Vec<_>>(), cfg.std_guard);
    for (m, a) in members.iter_mut().zip(adv) {
        m.advantage = a;
    }
    Ok(RolloutGroup { prompt: prompt.clone(), members, sigma: cfg.sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoStats {
    /// Mean over members and steps of `min(ρA, clip(ρ)A)`.
    pub objective: f64,
    /// Fraction of transitions with `|ρ − 1| > clip_eps`.
    pub clip_fraction: f64,
    pub max_ratio_dev: f64,
}

/// Clipped surrogate objective of a group under `p` and its gradient.
///
/// The gradient of each term is `A·ρ·∇log p` where the unclipped branch is
/// the minimum (ties included) and zero where the clip binds. Reasoning-head
/// tensors get no gradient.
pub fn grpo_objective<T: crate::model::Real>(
    model: &Model,
    p: &Params<T>,
    group: &RolloutGroup,
    clip_eps: f64,
) -> Result<(GrpoStats, Params<T>), ModelError> {
    let prepared = model.prepare::<T>(&group.prompt)?;
    let mut grad = p.zeros_like();
    let n: usize = group.members.iter().map(|m| m.log_densities.len()).sum();
    if n == 0 {
        return Err(ModelError::Config("group has no transitions".into()));
    }
    let (mut objective, mut clipped, mut max_dev) = (0.0, 0usize, 0.0f64);
    for m in &group.members {
        let states: Vec<Vec<T>> = m.states.iter().map(|s| s.iter().map(|v| T::of(*v as f64)).collect()).collect();
        let score = model.score_trajectory(p, &prepared, Some(m.trace.content()), &states, group.sigma)?;
        let mut weights = Vec::with_capacity(score.log_densities.len());
        for (new, old) in score.log_densities.iter().zip(&m.log_densities) {
            let rho = (new - old).exp();
            if !rho.is_finite() {
                return Err(ModelError::NumericalFault(format!("ratio {rho} (log-densities {new} vs {old})")));
            }
            let a = m.advantage;
            let plain = rho * a;
            let clip = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
            objective += plain.min(clip);
            max_dev = max_dev.max((rho - 1.0).abs());
            if (rho - 1.0).abs() > clip_eps {
                clipped += 1;
            }
            weights.push(if plain <= clip { a * rho / n as f64 } else { 0.0 });
        }
        model.score_trajectory_backward(p, &prepared, &score, &weights, &mut grad);
    }
    for i in 0..grad.num_tensors() {
        if model.layout().is_head(i) {
            grad.tensor_mut(i).fill(T::zero());
        }
    }
    let stats = GrpoStats { objective: objective / n as f64, clip_fraction: clipped as f64 / n as f64, max_ratio_dev: max_dev };
    Ok((stats, grad))
}

/// One plain gradient-ascent step on the clipped objective.
pub fn grpo_update(
    model: &Model,
    params: &Params<f32>,
    group: &RolloutGroup,
    cfg: &AlignConfig,
) -> Result<(Params<f32>, GrpoStats), ModelError> {
    let (stats, grad) = grpo_objective(model, params, group, cfg.clip_eps)?;
    let mut next = params.clone();
    next.add_scaled(cfg.learning_rate as f32, &grad);
    Ok((next, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub params: Params<f32>,
    pub metrics: Vec<AlignMetrics>,
}

/// Runs `cfg.steps` rollout-and-update rounds on prompts drawn uniformly.
///
/// With `out` set, metrics stream to `metrics.jsonl` and the final (or last
/// good) parameters are saved as `checkpoint.icfg`.
pub fn train_align(
    model: &Model,
    world: &World,
    init: Params<f32>,
    prompts: &[Prompt],
    cfg: &AlignConfig,
    out: Option<&Path>,
) -> Result<AlignOutput, TrainError> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(TrainError::Dataset("prompt suite is empty".into()));
    }
    for p in prompts {
        model.prepare::<f32>(p)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate);
    let mut params = init;
    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut sink = JsonlSink::open(out, METRICS_FILE)?;
    let save = |p: &Params<f32>| -> Result<(), TrainError> {
        if let Some(dir) = out {
            model.checkpoint(p.clone()).save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    };
    let abort = |step: usize, message: String, last_good: Params<f32>| -> Result<AlignOutput, TrainError> {
        save(&last_good)?;
        Err(TrainError::Aborted { step, message, last_good: Box::new(last_good) })
    };
    for step in 0..cfg.steps {
        let prompt = &prompts[rng.random_range(0..prompts.len())];
        let group = match rollout_group(model, world, &params, prompt, cfg, &mut rng) {
            Ok(g) => g,
            Err(ModelError::NumericalFault(m)) => return abort(step, m, params),
            Err(e) => return Err(e.into()),
        };
        let (stats, grad) = match grpo_objective(model, &params, &group, cfg.clip_eps) {
            Ok(r) => r,
            Err(ModelError::NumericalFault(m)) => return abort(step, m, params),
            Err(e) => return Err(e.into()),
        };
        if !grad.is_finite() {
            return abort(step, "non-finite gradient".into(), params);
        }
        let mut neg = grad;
        neg.scale(-1.0);
        let next = stepper.descend(&params, &neg);
        if !next.is_finite() {
            return abort(step, "non-finite parameters after update".into(), params);
        }
        params = next;
        let (mean_reward, reward_std) = mean_std(&group.rewards());
        let row = AlignMetrics { step, mean_reward, reward_std, clip_fraction: stats.clip_fraction };
        sink.push(&row)?;
        metrics.push(row);
    }
    sink.finish()?;
    save(&params)?;
    Ok(AlignOutput { params, metrics })
}

#[cfg(test)]
mod tests;
