//! Conditioning encoder, velocity network, rectified-flow loss and samplers.
//!
//! Data sits at `t = 0` and noise at `t = 1`: `x_t = (1 − t)·x0 + t·x1` with
//! target velocity `x1 − x0`. Sampling integrates from `t = 1` down to 0.
//!
//! Images are unit vectors, so the generator works on `√D · x` to give data
//! and noise the same per-component scale; `Generation::image` undoes this.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::nn::{self, Real};
use super::params::TIME_FEATURES;
use super::vocab::{segments, MAX_REFS};
use super::{Model, ModelError, Params, Prepared};
use crate::world::ImageVec;

/// Scale applied to the summed trace-token embeddings.
const TRACE_SCALE: f64 = 0.25;
/// Trajectories whose norm exceeds this are treated as diverged.
const DIVERGENCE_NORM: f64 = 1e6;

pub(crate) struct CtxCache<T> {
    /// Tanh outputs per present reference.
    refs: Vec<Vec<T>>,
    trace: Option<(Vec<u32>, Vec<usize>)>,
    u: Vec<T>,
    pub ctx: Vec<T>,
}

pub(crate) struct VelCache<T> {
    z0: Vec<T>,
    gates: [T; TIME_GATES],
    hs: Vec<Vec<T>>,
    pub out: Vec<T>,
}

/// Forward caches from re-scoring a recorded SDE trajectory.
pub(crate) struct TrajectoryScore<T> {
    ctx: CtxCache<T>,
    steps: Vec<VelCache<T>>,
    /// `x_{k+1} − mean_k` per step.
    residuals: Vec<Vec<f64>>,
    std: f64,
    pub log_densities: Vec<f64>,
}

/// One flow-matching example. `trace` is `None` for the null-trace path.
#[derive(Debug, Clone)]
pub struct FlowExample<T> {
    pub prompt: Prepared<T>,
    pub trace: Option<Vec<u32>>,
    pub x0: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    Ode,
    Sde { sigma: f64 },
}

/// A sampled trajectory in generator space: `states[0]` is the initial
/// noise, the last state the scaled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation<T> {
    pub states: Vec<Vec<T>>,
    /// Generator-space units per image unit.
    pub scale: f64,
    /// Per-step transition log-densities (SDE only; `+∞` when sigma is 0).
    pub log_densities: Vec<f64>,
    pub ctx: Vec<T>,
}

impl<T: Real> Generation<T> {
    pub fn image(&self) -> ImageVec {
        ImageVec(self.states.last().expect("initial state").iter().map(|v| v.f64() / self.scale).collect())
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

pub(crate) const TIME_GATES: usize = 2;

/// Scalar gates on the linear path from `[x_t; ctx]` to the output.
fn time_gates<T: Real>(t: T) -> [T; TIME_GATES] {
    [T::one(), T::one() / (t + T::of(0.1))]
}

pub fn time_features<T: Real>(t: T) -> [T; TIME_FEATURES] {
    let pi = T::of(std::f64::consts::PI);
    let two = T::of(2.0);
    let four = T::of(4.0);
    [t, (pi * t).sin(), (pi * t).cos(), (two * pi * t).sin(), (two * pi * t).cos(), (four * pi * t).sin(), (four * pi * t).cos(), t * t]
}

/// Interpolated point and velocity target for data `x0`, noise `x1` and time `t`.
pub fn rectified_pair<T: Real>(x0: &[T], x1: &[T], t: T) -> (Vec<T>, Vec<T>) {
    let xt = x0.iter().zip(x1).map(|(a, b)| (T::one() - t) * *a + t * *b).collect();
    let v = x0.iter().zip(x1).map(|(a, b)| *b - *a).collect();
    (xt, v)
}

/// Log-density of `x` under an isotropic Gaussian with the given mean and std.
pub fn transition_log_density(mean: &[f64], std: f64, x: &[f64]) -> f64 {
    if std == 0.0 {
        return if mean == x { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    mean.iter().zip(x).map(|(m, v)| -0.5 * ((v - m) / std).powi(2) - std.ln() - half_ln_2pi).sum()
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

impl Model {
    pub(crate) fn context_forward<T: Real>(&self, p: &Params<T>, prompt: &Prepared<T>, trace: Option<&[u32]>) -> CtxCache<T> {
        let ix = p.idx();
        let (hr, ec) = (self.cfg.ref_width, self.cfg.cond_embed);
        let mut u = vec![T::zero(); MAX_REFS * hr];
        let mut refs = Vec::with_capacity(prompt.refs.len());
        for (i, x) in prompt.refs.iter().enumerate() {
            let mut r = nn::affine(p.tensor(ix.cond_ref_w), p.tensor(ix.cond_ref_b), x);
            nn::tanh_in_place(&mut r);
            u[i * hr..(i + 1) * hr].copy_from_slice(&r);
            refs.push(r);
        }
        u.extend(self.instr_embedding(p.tensor(ix.cond_instr_emb), ec, &prompt.instr));
        let trace = trace.map(|ids| (ids.to_vec(), segments(&self.vocab, ids)));
        match &trace {
            Some((ids, segs)) => {
                let table = p.tensor(ix.cond_trace_emb);
                let v = self.vocab.len();
                let mut e = vec![T::zero(); ec];
                for (&id, &s) in ids.iter().zip(segs) {
                    nn::scaled_add_acc(&mut e, T::of(TRACE_SCALE), &table[(s * v + id as usize) * ec..][..ec]);
                }
                u.extend(e);
            }
            None => u.extend_from_slice(p.tensor(ix.cond_null_trace)),
        }
        let mut ctx = nn::affine(p.tensor(ix.cond_pool_w), p.tensor(ix.cond_pool_b), &u);
        nn::tanh_in_place(&mut ctx);
        ctx.extend_from_slice(&u[u.len() - ec..]);
        CtxCache { refs, trace, u, ctx }
    }

    pub(crate) fn context_backward<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        cache: &CtxCache<T>,
        g_ctx: &[T],
        grad: &mut Params<T>,
    ) {
        let ix = p.idx();
        let (hr, ec) = (self.cfg.ref_width, self.cfg.cond_embed);
        let c = self.cfg.ctx_width;
        let mut g = g_ctx[..c].to_vec();
        nn::tanh_back(&cache.ctx[..c], &mut g);
        nn::outer_acc(grad.tensor_mut(ix.cond_pool_w), &g, &cache.u);
        nn::add_acc(grad.tensor_mut(ix.cond_pool_b), &g);
        let mut gu = vec![T::zero(); cache.u.len()];
        nn::matvec_t_acc(p.tensor(ix.cond_pool_w), &g, &mut gu);
        let n = gu.len();
        nn::add_acc(&mut gu[n - ec..], &g_ctx[c..]);
        for (i, (x, r)) in prompt.refs.iter().zip(&cache.refs).enumerate() {
            let mut gr = gu[i * hr..(i + 1) * hr].to_vec();
            nn::tanh_back(r, &mut gr);
            nn::outer_acc(grad.tensor_mut(ix.cond_ref_w), &gr, x);
            nn::add_acc(grad.tensor_mut(ix.cond_ref_b), &gr);
        }
        let off = MAX_REFS * hr;
        self.instr_embedding_back(grad.tensor_mut(ix.cond_instr_emb), ec, &prompt.instr, &gu[off..off + ec]);
        let g_trace = &gu[off + ec..off + 2 * ec];
        match &cache.trace {
            Some((ids, segs)) => {
                let v = self.vocab.len();
                let table = grad.tensor_mut(ix.cond_trace_emb);
                for (&id, &s) in ids.iter().zip(segs) {
                    nn::scaled_add_acc(&mut table[(s * v + id as usize) * ec..][..ec], T::of(TRACE_SCALE), g_trace);
                }
            }
            None => nn::add_acc(grad.tensor_mut(ix.cond_null_trace), g_trace),
        }
    }

    pub(crate) fn velocity_forward<T: Real>(&self, p: &Params<T>, x: &[T], t: T, ctx: &[T]) -> VelCache<T> {
        let ix = p.idx();
        let mut z0 = Vec::with_capacity(x.len() + TIME_FEATURES + ctx.len());
        z0.extend_from_slice(x);
        z0.extend_from_slice(&time_features(t));
        z0.extend_from_slice(ctx);
        let mut hs: Vec<Vec<T>> = Vec::with_capacity(ix.vel.len());
        for &(w, b) in &ix.vel {
            let mut h = nn::affine(p.tensor(w), p.tensor(b), hs.last().unwrap_or(&z0));
            nn::tanh_in_place(&mut h);
            hs.push(h);
        }
        let mut out = nn::affine(p.tensor(ix.vel_out_w), p.tensor(ix.vel_out_b), hs.last().expect("one layer"));
        let gates = time_gates(t);
        let lin = self.gate_input(&z0);
        for (&w, &g) in ix.vel_gate_w.iter().zip(&gates) {
            let mut o = vec![T::zero(); out.len()];
            nn::matvec_acc(p.tensor(w), &lin, &mut o);
            nn::scaled_add_acc(&mut out, g, &o);
        }
        VelCache { z0, gates, hs, out }
    }

    /// Backpropagates `g_out`; returns the gradient on the context vector.
    pub(crate) fn velocity_backward<T: Real>(&self, p: &Params<T>, c: &VelCache<T>, g_out: &[T], grad: &mut Params<T>) -> Vec<T> {
        let ix = p.idx();
        let last = c.hs.last().expect("one layer");
        nn::outer_acc(grad.tensor_mut(ix.vel_out_w), g_out, last);
        nn::add_acc(grad.tensor_mut(ix.vel_out_b), g_out);
        let mut g = vec![T::zero(); last.len()];
        nn::matvec_t_acc(p.tensor(ix.vel_out_w), g_out, &mut g);
        for (k, &(w, b)) in ix.vel.iter().enumerate().rev() {
            nn::tanh_back(&c.hs[k], &mut g);
            let input = if k == 0 { &c.z0 } else { &c.hs[k - 1] };
            nn::outer_acc(grad.tensor_mut(w), &g, input);
            nn::add_acc(grad.tensor_mut(b), &g);
            let mut below = vec![T::zero(); input.len()];
            nn::matvec_t_acc(p.tensor(w), &g, &mut below);
            g = below;
        }
        let lin = self.gate_input(&c.z0);
        let mut g_lin = vec![T::zero(); lin.len()];
        for (&w, &gate) in ix.vel_gate_w.iter().zip(&c.gates) {
            let go: Vec<T> = g_out.iter().map(|v| *v * gate).collect();
            nn::outer_acc(grad.tensor_mut(w), &go, &lin);
            nn::matvec_t_acc(p.tensor(w), &go, &mut g_lin);
        }
        let d = self.cfg.dim;
        nn::add_acc(&mut g[d + TIME_FEATURES..], &g_lin[d..]);
        g.split_off(self.cfg.dim + TIME_FEATURES)
    }

    /// `[x_t; ctx]` without the time features.
    fn gate_input<T: Real>(&self, z0: &[T]) -> Vec<T> {
        let d = self.cfg.dim;
        z0[..d].iter().chain(&z0[d + TIME_FEATURES..]).copied().collect()
    }

    /// Predicted velocity at `(x, t)` under a context.
    pub fn velocity<T: Real>(&self, p: &Params<T>, x: &[T], t: T, ctx: &[T]) -> Vec<T> {
        self.velocity_forward(p, x, t, ctx).out
    }

    /// Flow loss with explicit draws `(t, x1)` per example; accumulates
    /// `scale · ∇(Σ ‖v − v̂‖²)` into `grad` and returns the unscaled sum.
    pub(crate) fn flow_accumulate<T: Real>(
        &self,
        p: &Params<T>,
        ex: &FlowExample<T>,
        t: T,
        x1: &[T],
        scale: T,
        grad: &mut Params<T>,
    ) -> Result<f64, ModelError> {
        if ex.x0.len() != self.cfg.dim {
            return Err(ModelError::Dimension { got: ex.x0.len(), expected: self.cfg.dim });
        }
        if let Some(ids) = &ex.trace {
            self.check_condition_len(ids)?;
        }
        let ctx = self.context_forward(p, &ex.prompt, ex.trace.as_deref());
        let k = T::of(self.data_scale());
        let x0: Vec<T> = ex.x0.iter().map(|v| *v * k).collect();
        let (xt, v) = rectified_pair(&x0, x1, t);
        let vc = self.velocity_forward(p, &xt, t, &ctx.ctx);
        let mut loss = 0.0;
        let g_out: Vec<T> = vc
            .out
            .iter()
            .zip(&v)
            .map(|(a, b)| {
                let diff = *a - *b;
                loss += diff.f64() * diff.f64();
                T::of(2.0) * scale * diff
            })
            .collect();
        if !loss.is_finite() {
            return Err(ModelError::NumericalFault(format!("flow loss {loss}")));
        }
        let g_ctx = self.velocity_backward(p, &vc, &g_out, grad);
        self.context_backward(p, &ex.prompt, &ctx, &g_ctx, grad);
        Ok(loss)
    }

    /// Draws `t ~ U[0,1]` and `x1 ~ N(0, I)` for one example.
    pub fn flow_draw<T: Real>(&self, rng: &mut impl Rng) -> (T, Vec<T>) {
        let t = T::of(rng.random::<f64>());
        let x1 = (0..self.cfg.dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                T::of(e)
            })
            .collect();
        (t, x1)
    }

    /// Mean over the batch of `‖v − v̂‖²` and its gradient.
    pub fn flow_loss<T: Real>(&self, p: &Params<T>, batch: &[FlowExample<T>], rng: &mut impl Rng) -> Result<(T, Params<T>), ModelError> {
        let draws: Vec<(T, Vec<T>)> = batch.iter().map(|_| self.flow_draw(rng)).collect();
        self.flow_loss_with(p, batch, &draws)
    }

    pub fn flow_loss_with<T: Real>(&self, p: &Params<T>, batch: &[FlowExample<T>], draws: &[(T, Vec<T>)]) -> Result<(T, Params<T>), ModelError> {
        let mut grad = p.zeros_like();
        if batch.is_empty() {
            return Ok((T::zero(), grad));
        }
        let scale = T::of(1.0 / batch.len() as f64);
        let mut total = 0.0;
        for (ex, (t, x1)) in batch.iter().zip(draws) {
            total += self.flow_accumulate(p, ex, *t, x1, scale, &mut grad)?;
        }
        Ok((T::of(total / batch.len() as f64), grad))
    }

    /// Integrates from noise at `t = 1` to `t = 0` in `steps` uniform steps.
    pub fn generate<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        trace: Option<&[u32]>,
        steps: usize,
        mode: SampleMode,
        rng: &mut impl Rng,
    ) -> Result<Generation<T>, ModelError> {
        let x = self.initial_noise(rng);
        self.generate_from(p, prompt, trace, x, steps, mode, rng)
    }

    /// A standard normal draw in generator space.
    pub fn initial_noise<T: Real>(&self, rng: &mut impl Rng) -> Vec<T> {
        (0..self.cfg.dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                T::of(e)
            })
            .collect()
    }

    /// Like `generate`, from a given initial state; `rng` drives only the SDE noise.
    #[allow(clippy::too_many_arguments)]
    pub fn generate_from<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        trace: Option<&[u32]>,
        x: Vec<T>,
        steps: usize,
        mode: SampleMode,
        rng: &mut impl Rng,
    ) -> Result<Generation<T>, ModelError> {
        if steps == 0 {
            return Err(ModelError::Config("generation needs at least one step".into()));
        }
        if x.len() != self.cfg.dim {
            return Err(ModelError::Dimension { got: x.len(), expected: self.cfg.dim });
        }
        if let SampleMode::Sde { sigma } = mode {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(ModelError::Config(format!("sigma must be a finite value ≥ 0, got {sigma}")));
            }
        }
        let ctx = self.encode_context(p, prompt, trace)?;
        let mut states = vec![x];
        let mut log_densities = Vec::new();
        let dt = 1.0 / steps as f64;
        for k in 0..steps {
            let t = T::of((steps - k) as f64 / steps as f64);
            let x = states.last().expect("initial state");
            let mean = self.step_mean(p, x, t, T::of(dt), &ctx);
            let next = match mode {
                SampleMode::Ode => mean,
                SampleMode::Sde { sigma } => {
                    let std = sigma * dt.sqrt();
                    let next: Vec<T> = mean
                        .iter()
                        .map(|m| {
                            let e: f64 = StandardNormal.sample(rng);
                            *m + T::of(std * e)
                        })
                        .collect();
                    log_densities.push(transition_log_density(&to_f64(&mean), std, &to_f64(&next)));
                    next
                }
            };
            let norm = next.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if !(norm <= DIVERGENCE_NORM) {
                return Err(ModelError::NumericalFault(format!("trajectory diverged at step {k} (norm {norm})")));
            }
            states.push(next);
        }
        Ok(Generation { states, scale: self.data_scale(), log_densities, ctx })
    }

    /// Per-step transition log-densities of `states` under `p`, with caches
    /// for `score_trajectory_backward`. Uses the same arithmetic as
    /// `generate`, so re-scoring a fresh rollout reproduces its densities bit
    /// for bit.
    pub(crate) fn score_trajectory<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        trace: Option<&[u32]>,
        states: &[Vec<T>],
        sigma: f64,
    ) -> Result<TrajectoryScore<T>, ModelError> {
        if states.len() < 2 {
            return Err(ModelError::Config("a trajectory needs at least two states".into()));
        }
        if let Some(s) = states.iter().find(|s| s.len() != self.cfg.dim) {
            return Err(ModelError::Dimension { got: s.len(), expected: self.cfg.dim });
        }
        if let Some(ids) = trace {
            self.check_condition_len(ids)?;
        }
        let ctx = self.context_forward(p, prompt, trace);
        let k_total = states.len() - 1;
        let dt = 1.0 / k_total as f64;
        let std = sigma * dt.sqrt();
        let mut steps = Vec::with_capacity(k_total);
        let mut residuals = Vec::with_capacity(k_total);
        let mut log_densities = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let t = T::of((k_total - k) as f64 / k_total as f64);
            let x = &states[k];
            let vc = self.velocity_forward(p, x, t, &ctx.ctx);
            let mean: Vec<T> = x.iter().zip(&vc.out).map(|(a, b)| *a - T::of(dt) * *b).collect();
            let (mean, next) = (to_f64(&mean), to_f64(&states[k + 1]));
            log_densities.push(transition_log_density(&mean, std, &next));
            residuals.push(next.iter().zip(&mean).map(|(a, b)| a - b).collect());
            steps.push(vc);
        }
        Ok(TrajectoryScore { ctx, steps, residuals, std, log_densities })
    }

    /// Accumulates `Σ_k weights[k] · ∇ log p_k` into `grad`.
    pub(crate) fn score_trajectory_backward<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        score: &TrajectoryScore<T>,
        weights: &[f64],
        grad: &mut Params<T>,
    ) {
        let dt = 1.0 / score.steps.len() as f64;
        let var = score.std * score.std;
        let mut g_ctx = vec![T::zero(); score.ctx.ctx.len()];
        for ((vc, r), &w) in score.steps.iter().zip(&score.residuals).zip(weights) {
            if w == 0.0 {
                continue;
            }
            // d log p / d v̂ = −dt · (x' − mean) / std².
            let g_out: Vec<T> = r.iter().map(|e| T::of(-w * dt * e / var)).collect();
            nn::add_acc(&mut g_ctx, &self.velocity_backward(p, vc, &g_out, grad));
        }
        self.context_backward(p, prompt, &score.ctx, &g_ctx, grad);
    }

    /// Transition log-densities of a recorded trajectory under `p`.
    pub fn trajectory_log_densities<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        trace: Option<&[u32]>,
        states: &[Vec<T>],
        sigma: f64,
    ) -> Result<Vec<f64>, ModelError> {
        Ok(self.score_trajectory(p, prompt, trace, states, sigma)?.log_densities)
    }

    /// Factor from image space to generator space.
    pub fn data_scale(&self) -> f64 {
        (self.cfg.dim as f64).sqrt()
    }

    /// Mean of one denoising transition: `x − Δ·v̂(x, t)`.
    pub fn step_mean<T: Real>(&self, p: &Params<T>, x: &[T], t: T, dt: T, ctx: &[T]) -> Vec<T> {
        let v = self.velocity(p, x, t, ctx);
        x.iter().zip(&v).map(|(a, b)| *a - dt * *b).collect()
    }
}
