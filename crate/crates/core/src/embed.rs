//! Indicator-feature dual encoder and the cosine reward built on it.
//!
//! Both encoders map into the same space: one component per world feature
//! plus a trailing flag component set only for text that fails to parse.

use crate::world::{parse_caption, Feature, ImageVec, SceneSpec, World};

/// An encoder output. The last component is the unparsed-text flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatVec(pub Vec<f64>);

impl FeatVec {
    fn from_features(world: &World, features: impl IntoIterator<Item = Feature>) -> Self {
        let cfg = world.config();
        let mut v = vec![0.0; cfg.num_features() + 1];
        for f in features {
            v[f.index(cfg)] = 1.0;
        }
        FeatVec(v)
    }

    pub fn nonzero(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    pub fn unparsed(&self) -> bool {
        self.0.last().is_some_and(|v| *v != 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity with a flag for a zero-norm operand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    /// Set when either embedding had zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(a: &FeatVec, b: &FeatVec) -> Similarity {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Similarity { value: 0.0, degenerate: true };
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Similarity { value: (dot / (na * nb)).clamp(-1.0, 1.0), degenerate: false }
}

pub fn embed_spec(world: &World, spec: &SceneSpec) -> FeatVec {
    FeatVec::from_features(world, spec.features(world.config()))
}

/// Decodes the image and encodes the decoded spec.
pub fn embed_image(world: &World, x: &ImageVec) -> FeatVec {
    embed_spec(world, &world.decode(x))
}

/// Encodes a caption; text outside the caption grammar maps to the flag alone.
pub fn embed_text(world: &World, caption: &str) -> FeatVec {
    match parse_caption(caption, world.config()) {
        Some(p) => FeatVec::from_features(world, p.features()),
        None => {
            let mut v = FeatVec::from_features(world, []);
            *v.0.last_mut().expect("flag component") = 1.0;
            v
        }
    }
}

pub fn surrogate_reward(world: &World, x: &ImageVec, caption: &str) -> Similarity {
    cosine(&embed_image(world, x), &embed_text(world, caption))
}

/// Cosine to the closest clean render, clamped to [0, 1].
pub fn quality_score(world: &World, x: &ImageVec) -> f64 {
    world.decode_scored(x).score.clamp(0.0, 1.0)
}
