//! Dense-layer primitives shared by the networks. Weights are row-major
//! `[out, in]`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Scalar type of parameters and activations.
pub trait Real: Float + Sum + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `out += W x`.
pub fn matvec_acc<T: Real>(w: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    debug_assert_eq!(w.len(), n * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o = *o + row.iter().zip(x).map(|(a, b)| *a * *b).sum::<T>();
    }
}

/// `W x + b`.
pub fn affine<T: Real>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let mut out = b.to_vec();
    matvec_acc(w, x, &mut out);
    out
}

/// `gx += Wᵀ gy`.
pub fn matvec_t_acc<T: Real>(w: &[T], gy: &[T], gx: &mut [T]) {
    let n = gx.len();
    for (g, row) in gy.iter().zip(w.chunks_exact(n)) {
        if *g == T::zero() {
            continue;
        }
        for (o, a) in gx.iter_mut().zip(row) {
            *o = *o + *g * *a;
        }
    }
}

/// `gw += gy xᵀ`.
pub fn outer_acc<T: Real>(gw: &mut [T], gy: &[T], x: &[T]) {
    let n = x.len();
    for (g, row) in gy.iter().zip(gw.chunks_exact_mut(n)) {
        if *g == T::zero() {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o = *o + *g * *a;
        }
    }
}

pub fn tanh_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Turns an upstream gradient on `tanh` outputs `y` into one on its inputs.
pub fn tanh_back<T: Real>(y: &[T], g: &mut [T]) {
    for (g, y) in g.iter_mut().zip(y) {
        *g = *g * (T::one() - *y * *y);
    }
}

pub fn add_acc<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

pub fn scaled_add_acc<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * *s;
    }
}

/// Log-softmax over `logits` with entries in `masked` excluded (probability 0).
pub fn log_softmax<T: Real>(logits: &[T], masked: &[usize]) -> Vec<T> {
    let allowed = |i: usize| !masked.contains(&i);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, v)| *v)
        .fold(T::neg_infinity(), T::max);
    let lse = max
        + logits
            .iter()
            .enumerate()
            .filter(|(i, _)| allowed(*i))
            .map(|(_, v)| (*v - max).exp())
            .sum::<T>()
            .ln();
    logits.iter().enumerate().map(|(i, v)| if allowed(i) { *v - lse } else { T::neg_infinity() }).collect()
}
