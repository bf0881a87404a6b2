//! Autoregressive reasoning head.
//!
//! Each step sees a prompt summary (all reference vectors and the pooled
//! instruction), the embeddings of the previous two tokens and a one-hot of
//! the current trace segment, and passes them through tanh layers to logits.
//! BOS is never a valid next token.

use rand::Rng;

use super::nn::{self, Real};
use super::vocab::{SegmentTracker, BOS, EOS};
use super::{Model, ModelError, Params, Prepared};
use crate::iccot::{parse_trace, ReasoningTrace, ValidationReport};

/// A supervised trace: token ids without BOS/EOS.
#[derive(Debug, Clone)]
pub struct CotExample<T> {
    pub prompt: Prepared<T>,
    pub target: Vec<u32>,
}

/// A sampled trace. Unparseable outputs keep their report and expose an
/// empty caption.
#[derive(Debug, Clone)]
pub struct SampledTrace {
    /// Generated ids (no BOS; EOS included when produced).
    pub tokens: Vec<u32>,
    /// Log-probability of each generated token under the untempered model.
    pub logprobs: Vec<f64>,
    pub text: String,
    pub parsed: Result<ReasoningTrace, ValidationReport>,
}

impl SampledTrace {
    pub fn caption(&self) -> &str {
        self.parsed.as_ref().map(|t| t.caption()).unwrap_or("")
    }

    pub fn is_parsed(&self) -> bool {
        self.parsed.is_ok()
    }

    /// Ids for generator conditioning (EOS dropped).
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

struct Step<T> {
    prev: u32,
    prev2: u32,
    a_in: Vec<T>,
    /// Activations of every tanh layer.
    hs: Vec<Vec<T>>,
    logits: Vec<T>,
}

impl Model {
    fn head_prompt<T: Real>(&self, p: &Params<T>, prompt: &Prepared<T>) -> (Vec<T>, Vec<T>) {
        let ix = p.idx();
        let d = self.cfg.dim;
        let mut u = vec![T::zero(); super::vocab::MAX_REFS * d];
        for (i, r) in prompt.refs.iter().enumerate() {
            u[i * d..(i + 1) * d].copy_from_slice(r);
        }
        u.extend(self.instr_embedding(p.tensor(ix.head_instr_emb), self.cfg.head_embed, &prompt.instr));
        let mut pv = vec![T::zero(); self.cfg.head_width];
        nn::matvec_acc(p.tensor(ix.head_prompt_w), &u, &mut pv);
        (u, pv)
    }

    fn head_step<T: Real>(&self, p: &Params<T>, pv: &[T], prev: u32, prev2: u32, segment: usize) -> Step<T> {
        let ix = p.idx();
        let eh = self.cfg.head_embed;
        let emb = p.tensor(ix.head_tok_emb);
        let mut a_in = Vec::with_capacity(2 * eh + self.vocab.num_segments());
        a_in.extend_from_slice(&emb[prev as usize * eh..][..eh]);
        a_in.extend_from_slice(&emb[prev2 as usize * eh..][..eh]);
        a_in.resize(2 * eh + self.vocab.num_segments(), T::zero());
        a_in[2 * eh + segment] = T::one();
        let mut h = nn::affine(p.tensor(ix.head_in_w), p.tensor(ix.head_in_b), &a_in);
        nn::add_acc(&mut h, pv);
        nn::tanh_in_place(&mut h);
        let mut hs = vec![h];
        for &(w, b) in &ix.head_hidden {
            let mut h = nn::affine(p.tensor(w), p.tensor(b), hs.last().expect("one layer"));
            nn::tanh_in_place(&mut h);
            hs.push(h);
        }
        let logits = nn::affine(p.tensor(ix.head_out_w), p.tensor(ix.head_out_b), hs.last().expect("one layer"));
        Step { prev, prev2, a_in, hs, logits }
    }

    /// Backpropagates `g_logits`; returns the gradient on the prompt summary.
    fn head_step_back<T: Real>(&self, p: &Params<T>, s: &Step<T>, g_logits: &[T], grad: &mut Params<T>) -> Vec<T> {
        let ix = p.idx();
        let last = s.hs.last().expect("one layer");
        nn::outer_acc(grad.tensor_mut(ix.head_out_w), g_logits, last);
        nn::add_acc(grad.tensor_mut(ix.head_out_b), g_logits);
        let mut g = vec![T::zero(); last.len()];
        nn::matvec_t_acc(p.tensor(ix.head_out_w), g_logits, &mut g);
        for (k, &(w, b)) in ix.head_hidden.iter().enumerate().rev() {
            nn::tanh_back(&s.hs[k + 1], &mut g);
            nn::outer_acc(grad.tensor_mut(w), &g, &s.hs[k]);
            nn::add_acc(grad.tensor_mut(b), &g);
            let mut below = vec![T::zero(); s.hs[k].len()];
            nn::matvec_t_acc(p.tensor(w), &g, &mut below);
            g = below;
        }
        nn::tanh_back(&s.hs[0], &mut g);
        nn::outer_acc(grad.tensor_mut(ix.head_in_w), &g, &s.a_in);
        nn::add_acc(grad.tensor_mut(ix.head_in_b), &g);
        let mut ga = vec![T::zero(); s.a_in.len()];
        nn::matvec_t_acc(p.tensor(ix.head_in_w), &g, &mut ga);
        let eh = self.cfg.head_embed;
        let emb = grad.tensor_mut(ix.head_tok_emb);
        nn::add_acc(&mut emb[s.prev as usize * eh..][..eh], &ga[..eh]);
        nn::add_acc(&mut emb[s.prev2 as usize * eh..][..eh], &ga[eh..2 * eh]);
        g
    }

    fn head_prompt_back<T: Real>(&self, p: &Params<T>, prompt: &Prepared<T>, u: &[T], g_pv: &[T], grad: &mut Params<T>) {
        let ix = p.idx();
        nn::outer_acc(grad.tensor_mut(ix.head_prompt_w), g_pv, u);
        let mut gu = vec![T::zero(); u.len()];
        nn::matvec_t_acc(p.tensor(ix.head_prompt_w), g_pv, &mut gu);
        let off = super::vocab::MAX_REFS * self.cfg.dim;
        self.instr_embedding_back(grad.tensor_mut(ix.head_instr_emb), self.cfg.head_embed, &prompt.instr, &gu[off..]);
    }

    /// Accumulates `scale · ∇(Σ NLL)` into `grad`; returns (Σ NLL, token count).
    pub(crate) fn cot_accumulate<T: Real>(
        &self,
        p: &Params<T>,
        ex: &CotExample<T>,
        scale: T,
        grad: &mut Params<T>,
    ) -> Result<(f64, usize), ModelError> {
        self.check_trace_len(&ex.target)?;
        let (u, pv) = self.head_prompt(p, &ex.prompt);
        let mut g_pv = vec![T::zero(); pv.len()];
        let mut tracker = SegmentTracker::new(&self.vocab);
        let (mut prev, mut prev2) = (BOS, BOS);
        let mut nll = 0.0;
        for &y in ex.target.iter().chain(std::iter::once(&EOS)) {
            let step = self.head_step(p, &pv, prev, prev2, tracker.segment());
            let logp = nn::log_softmax(&step.logits, &[BOS as usize]);
            nll -= logp[y as usize].f64();
            let g_logits: Vec<T> = logp
                .iter()
                .enumerate()
                .map(|(i, lp)| {
                    let prob = if i == BOS as usize { T::zero() } else { lp.exp() };
                    scale * (prob - if i == y as usize { T::one() } else { T::zero() })
                })
                .collect();
            let g = self.head_step_back(p, &step, &g_logits, grad);
            nn::add_acc(&mut g_pv, &g);
            tracker.push(y);
            prev2 = prev;
            prev = y;
        }
        self.head_prompt_back(p, &ex.prompt, &u, &g_pv, grad);
        Ok((nll, ex.target.len() + 1))
    }

    /// Mean token negative log-likelihood under teacher forcing and its gradient.
    pub fn cot_loss<T: Real>(&self, p: &Params<T>, batch: &[CotExample<T>]) -> Result<(T, Params<T>), ModelError> {
        let total: usize = batch.iter().map(|e| e.target.len() + 1).sum();
        let mut grad = p.zeros_like();
        if total == 0 {
            return Ok((T::zero(), grad));
        }
        let scale = T::of(1.0 / total as f64);
        let mut nll = 0.0;
        for ex in batch {
            nll += self.cot_accumulate(p, ex, scale, &mut grad)?.0;
        }
        let loss = nll / total as f64;
        if !loss.is_finite() {
            return Err(ModelError::NumericalFault(format!("cot loss {loss}")));
        }
        Ok((T::of(loss), grad))
    }

    /// Next-token logits after `[BOS] + prefix`.
    pub fn next_token_logits<T: Real>(&self, p: &Params<T>, prompt: &Prepared<T>, prefix: &[u32]) -> Vec<T> {
        let (_, pv) = self.head_prompt(p, prompt);
        let mut tracker = SegmentTracker::new(&self.vocab);
        for &id in prefix {
            tracker.push(id);
        }
        let prev = prefix.last().copied().unwrap_or(BOS);
        let prev2 = if prefix.len() >= 2 { prefix[prefix.len() - 2] } else { BOS };
        self.head_step(p, &pv, prev, prev2, tracker.segment()).logits
    }

    /// Samples a trace; `temperature == 0` decodes greedily.
    pub fn sample_trace<T: Real>(
        &self,
        p: &Params<T>,
        prompt: &Prepared<T>,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> SampledTrace {
        let (_, pv) = self.head_prompt(p, prompt);
        let mut tracker = SegmentTracker::new(&self.vocab);
        let (mut prev, mut prev2) = (BOS, BOS);
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < self.cfg.max_trace_len {
            let step = self.head_step(p, &pv, prev, prev2, tracker.segment());
            let logp: Vec<f64> = nn::log_softmax(&step.logits, &[BOS as usize]).iter().map(|v| v.f64()).collect();
            let next = if temperature == 0.0 {
                argmax(&logp)
            } else {
                let tempered: Vec<f64> = logp.iter().map(|v| v / temperature).collect();
                draw(&nn::log_softmax(&tempered, &[BOS as usize]), rng)
            };
            tokens.push(next as u32);
            logprobs.push(logp[next]);
            if next as u32 == EOS {
                break;
            }
            tracker.push(next as u32);
            prev2 = prev;
            prev = next as u32;
        }
        let text = self.vocab.detokenize(&tokens);
        let num_refs = prompt.num_refs();
        SampledTrace { parsed: parse_trace(&text, num_refs), tokens, logprobs, text }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities.
fn draw(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in logp.iter().enumerate() {
        if lp.is_finite() {
            acc += lp.exp();
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
