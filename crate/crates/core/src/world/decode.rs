//! Scene decoder: finds the spec whose render has maximal cosine with an input
//! vector.
//!
//! An occupied position contributes a *block* of five prototypes (identity and
//! four attribute values). Scores of every candidate block are computed in
//! O(1) from dot products against the input and the Gram matrix, so a full
//! block sweep is cheap. Decoding runs block-coordinate ascent from several
//! starts, then exhaustively re-scores the product of the top-k blocks per
//! position for every scene.

use super::{AttributeSlot, Attributes, EntityInstance, SceneSpec, WorldConfig};

const TOP_K: usize = 3;
const MAX_SWEEPS: usize = 32;
/// Scores within this of 1 are exact reconstructions; no further search needed.
const EXACT: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub spec: SceneSpec,
    /// Cosine between the input and the render of `spec`.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub(super) struct Decoder {
    slots: usize,
    scenes: usize,
    identities: usize,
    /// Attribute vocabulary sizes in `AttributeSlot::ALL` order.
    attr_sizes: [usize; 4],
    /// Feature index of identity `i` at position `p`: `identity_feature[p][i]`.
    identity_feature: Vec<Vec<usize>>,
    /// `attr_feature[p][slot][v]`.
    attr_feature: Vec<[Vec<usize>; 4]>,
    num_features: usize,
    gram: Vec<f64>,
    /// Squared norm of each block, per position, indexed by `block_index`.
    block_norm2: Vec<Vec<f64>>,
}

/// Decoder state: the scene and an optional block per position.
#[derive(Debug, Clone, PartialEq, Eq)]
struct State {
    scene: usize,
    blocks: Vec<Option<Block>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    identity: usize,
    attrs: [usize; 4],
}

impl Decoder {
    pub(super) fn new(cfg: &WorldConfig, prototypes: &[f64]) -> Self {
        let n = cfg.num_features();
        let d = cfg.dim;
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = super::dot(&prototypes[i * d..(i + 1) * d], &prototypes[j * d..(j + 1) * d]);
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let identity_feature = (0..cfg.slots)
            .map(|position| {
                (0..cfg.identities())
                    .map(|identity| super::Feature::Identity { position, identity }.index(cfg))
                    .collect()
            })
            .collect();
        let attr_feature: Vec<[Vec<usize>; 4]> = (0..cfg.slots)
            .map(|position| {
                AttributeSlot::ALL.map(|slot| {
                    (0..cfg.attribute_size(slot))
                        .map(|value| super::Feature::Attribute { position, slot, value }.index(cfg))
                        .collect()
                })
            })
            .collect();
        let attr_sizes = AttributeSlot::ALL.map(|s| cfg.attribute_size(s));
        let mut dec = Self {
            slots: cfg.slots,
            scenes: cfg.scenes,
            identities: cfg.identities(),
            attr_sizes,
            identity_feature,
            attr_feature,
            num_features: n,
            gram,
            block_norm2: Vec::new(),
        };
        dec.block_norm2 = (0..cfg.slots)
            .map(|p| {
                let mut norms = vec![0.0; dec.blocks_per_position()];
                dec.for_each_block(|b| {
                    let f = dec.block_features(p, b);
                    let mut s = 0.0;
                    for &i in &f {
                        for &j in &f {
                            s += dec.g(i, j);
                        }
                    }
                    norms[dec.block_index(b)] = s;
                });
                norms
            })
            .collect();
        dec
    }

    fn g(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.num_features + j]
    }

    fn blocks_per_position(&self) -> usize {
        self.identities * self.attr_sizes.iter().product::<usize>()
    }

    fn block_index(&self, b: Block) -> usize {
        let mut idx = b.identity;
        for (k, &size) in self.attr_sizes.iter().enumerate() {
            idx = idx * size + b.attrs[k];
        }
        idx
    }

    fn for_each_block(&self, mut f: impl FnMut(Block)) {
        let [a0, a1, a2, a3] = self.attr_sizes;
        for identity in 0..self.identities {
            for c in 0..a0 {
                for t in 0..a1 {
                    for s in 0..a2 {
                        for p in 0..a3 {
                            f(Block { identity, attrs: [c, t, s, p] });
                        }
                    }
                }
            }
        }
    }

    fn block_features(&self, position: usize, b: Block) -> [usize; 5] {
        let a = &self.attr_feature[position];
        [
            self.identity_feature[position][b.identity],
            a[0][b.attrs[0]],
            a[1][b.attrs[1]],
            a[2][b.attrs[2]],
            a[3][b.attrs[3]],
        ]
    }

    /// Feature indices of `st`, optionally leaving out the scene or one position.
    fn state_features(&self, st: &State, with_scene: bool, skip: Option<usize>) -> Vec<usize> {
        let mut out = Vec::with_capacity(1 + 5 * self.slots);
        if with_scene {
            out.push(st.scene);
        }
        for (p, b) in st.blocks.iter().enumerate() {
            if Some(p) == skip {
                continue;
            }
            if let Some(b) = b {
                out.extend(self.block_features(p, *b));
            }
        }
        out
    }

    fn norm2(&self, feats: &[usize]) -> f64 {
        let mut s = 0.0;
        for &i in feats {
            for &j in feats {
                s += self.g(i, j);
            }
        }
        s
    }

    fn score(&self, xd: &[f64], st: &State) -> f64 {
        let f = self.state_features(st, true, None);
        let num: f64 = f.iter().map(|&i| xd[i]).sum();
        num / self.norm2(&f).sqrt()
    }

    /// Best block (or `None`) for `position` with everything else fixed.
    fn best_block(&self, xd: &[f64], st: &State, position: usize) -> (Option<Block>, f64) {
        let rest = self.state_features(st, true, Some(position));
        let x_rest: f64 = rest.iter().map(|&i| xd[i]).sum();
        let rest_n2 = self.norm2(&rest);
        let cross = |f: usize| rest.iter().map(|&g| self.g(f, g)).sum::<f64>();

        let ids = &self.identity_feature[position];
        let attrs = &self.attr_feature[position];
        let id_terms: Vec<(f64, f64)> = ids.iter().map(|&f| (xd[f], cross(f))).collect();
        let attr_terms: Vec<Vec<(f64, f64)>> =
            attrs.iter().map(|fs| fs.iter().map(|&f| (xd[f], cross(f))).collect()).collect();
        let norms = &self.block_norm2[position];

        let mut best = (None, x_rest / rest_n2.sqrt());
        let [a0, a1, a2, a3] = self.attr_sizes;
        let mut idx = 0;
        for (identity, &(xi, ri)) in id_terms.iter().enumerate() {
            for c in 0..a0 {
                let (xc, rc) = attr_terms[0][c];
                for t in 0..a1 {
                    let (xt, rt) = attr_terms[1][t];
                    for s in 0..a2 {
                        let (xs, rs) = attr_terms[2][s];
                        for p in 0..a3 {
                            let (xp, rp) = attr_terms[3][p];
                            let num = x_rest + xi + xc + xt + xs + xp;
                            let den2 = rest_n2 + 2.0 * (ri + rc + rt + rs + rp) + norms[idx];
                            idx += 1;
                            let score = num / den2.sqrt();
                            if score > best.1 {
                                best = (Some(Block { identity, attrs: [c, t, s, p] }), score);
                            }
                        }
                    }
                }
            }
        }
        best
    }

    fn best_scene(&self, xd: &[f64], st: &State) -> (usize, f64) {
        let rest = self.state_features(st, false, None);
        let x_rest: f64 = rest.iter().map(|&i| xd[i]).sum();
        let rest_n2 = self.norm2(&rest);
        let mut best = (st.scene, f64::NEG_INFINITY);
        for s in 0..self.scenes {
            let cross: f64 = rest.iter().map(|&g| self.g(s, g)).sum();
            let score = (x_rest + xd[s]) / (rest_n2 + 2.0 * cross + 1.0).sqrt();
            if score > best.1 {
                best = (s, score);
            }
        }
        best
    }

    fn ascend(&self, xd: &[f64], mut st: State, order: &[usize]) -> (State, f64) {
        let mut current = self.score(xd, &st);
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for &p in order {
                let (b, score) = self.best_block(xd, &st, p);
                if b != st.blocks[p] && score > current {
                    st.blocks[p] = b;
                    current = score;
                    changed = true;
                }
            }
            let (s, score) = self.best_scene(xd, &st);
            if s != st.scene && score > current {
                st.scene = s;
                current = score;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        (st, current)
    }

    /// Joint search over every scene and the top-k blocks of each position.
    fn refine(&self, xd: &[f64], st: &State) -> (State, f64) {
        let candidates: Vec<Vec<Option<Block>>> = (0..self.slots)
            .map(|p| self.top_blocks(xd, st, p, TOP_K))
            .collect();
        let mut best = (st.clone(), self.score(xd, st));
        let mut choice = vec![0usize; self.slots];
        loop {
            for scene in 0..self.scenes {
                let cand = State {
                    scene,
                    blocks: choice.iter().enumerate().map(|(p, &c)| candidates[p][c]).collect(),
                };
                let score = self.score(xd, &cand);
                if score > best.1 {
                    best = (cand, score);
                }
            }
            // odometer increment
            let mut p = 0;
            loop {
                if p == self.slots {
                    return best;
                }
                choice[p] += 1;
                if choice[p] < candidates[p].len() {
                    break;
                }
                choice[p] = 0;
                p += 1;
            }
        }
    }

    fn top_blocks(&self, xd: &[f64], st: &State, position: usize, k: usize) -> Vec<Option<Block>> {
        let rest = self.state_features(st, true, Some(position));
        let x_rest: f64 = rest.iter().map(|&i| xd[i]).sum();
        let rest_n2 = self.norm2(&rest);
        let mut scored: Vec<(f64, Option<Block>)> = vec![(x_rest / rest_n2.sqrt(), None)];
        self.for_each_block(|b| {
            let f = self.block_features(position, b);
            let num = x_rest + f.iter().map(|&i| xd[i]).sum::<f64>();
            let cross: f64 = f.iter().map(|&i| rest.iter().map(|&g| self.g(i, g)).sum::<f64>()).sum();
            let den2 = rest_n2 + 2.0 * cross + self.block_norm2[position][self.block_index(b)];
            scored.push((num / den2.sqrt(), Some(b)));
        });
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(k);
        scored.into_iter().map(|(_, b)| b).collect()
    }

    pub(super) fn decode(&self, cfg: &WorldConfig, prototypes: &[f64], x: &[f64]) -> Decoded {
        let d = cfg.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let empty = State { scene: 0, blocks: vec![None; self.slots] };
        if norm == 0.0 || !norm.is_finite() {
            return Decoded { spec: self.to_spec(cfg, &empty), score: 0.0 };
        }
        let xd: Vec<f64> =
            (0..self.num_features).map(|f| super::dot(&prototypes[f * d..(f + 1) * d], x) / norm).collect();

        let natural: Vec<usize> = (0..self.slots).collect();
        let start = State { scene: self.best_scene(&xd, &empty).0, ..empty.clone() };
        let mut best = self.ascend(&xd, start, &natural);
        if best.1 < EXACT {
            for order in orders(self.slots) {
                for scene in 0..self.scenes {
                    let cand = self.ascend(&xd, State { scene, ..empty.clone() }, &order);
                    if cand.1 > best.1 {
                        best = cand;
                    }
                }
            }
        }
        if best.1 < EXACT {
            let refined = self.refine(&xd, &best.0);
            if refined.1 > best.1 {
                best = self.ascend(&xd, refined.0, &natural);
            }
        }
        Decoded { spec: self.to_spec(cfg, &best.0), score: best.1 }
    }

    fn to_spec(&self, cfg: &WorldConfig, st: &State) -> SceneSpec {
        let entities = st
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(position, b)| {
                b.map(|b| {
                    let [color, texture, style, pose] = b.attrs;
                    EntityInstance::from_global(cfg, b.identity, Attributes { color, texture, style, pose }, position)
                })
            })
            .collect();
        SceneSpec::new(st.scene, entities)
    }
}

/// Position visiting orders used as restarts.
fn orders(slots: usize) -> Vec<Vec<usize>> {
    let natural: Vec<usize> = (0..slots).collect();
    if slots > 4 {
        let mut rev = natural.clone();
        rev.reverse();
        return vec![natural, rev];
    }
    let mut out = Vec::new();
    permute(&mut natural.clone(), 0, &mut out);
    out
}

fn permute(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, out);
        v.swap(k, i);
    }
}
