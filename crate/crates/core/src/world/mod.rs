//! Synthetic in-context generation world.
//!
//! Images are unit vectors in `R^D` built as the normalized sum of prototype
//! vectors, one per active feature of a [`SceneSpec`]. Features are the scene,
//! the identity at each occupied position, and each attribute value at each
//! occupied position. Prototypes are drawn once from a seeded generator, so the
//! whole world is a pure function of its [`WorldConfig`].

pub(crate) mod caption;
mod decode;
pub mod lexicon;
mod task;

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use caption::{caption_of, parse_caption, PartialEntity, PartialSpec};
pub use decode::Decoded;
pub use task::{oracle_trace, relation_phrases, Intent, Reference, Requirements, TaskInstance, TaskKind, MAX_REFS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("task kind {kind:?} is incompatible with the world config: {reason}")]
    IncompatibleKind { kind: TaskKind, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Image dimension.
    pub dim: usize,
    /// Number of entity position slots.
    pub slots: usize,
    pub characters: usize,
    pub objects: usize,
    pub scenes: usize,
    pub colors: usize,
    pub textures: usize,
    pub styles: usize,
    pub poses: usize,
    pub world_seed: u64,
    /// Probability that an instruction omits image indices.
    pub ambiguity_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            slots: 3,
            characters: 8,
            objects: 8,
            scenes: 4,
            colors: 6,
            textures: 4,
            styles: 4,
            poses: 4,
            world_seed: 0,
            ambiguity_rate: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let err = |m: String| Err(WorldError::Config(m));
        if self.dim < 16 {
            return err(format!("dim must be at least 16, got {}", self.dim));
        }
        if self.slots == 0 || self.slots > lexicon::MAX_SLOTS {
            return err(format!("slots must be in 1..={}, got {}", lexicon::MAX_SLOTS, self.slots));
        }
        let vocabs = [
            ("characters", self.characters, lexicon::CHARACTERS.len()),
            ("objects", self.objects, lexicon::OBJECTS.len()),
            ("scenes", self.scenes, lexicon::SCENES.len()),
            ("colors", self.colors, lexicon::COLORS.len()),
            ("textures", self.textures, lexicon::TEXTURES.len()),
            ("styles", self.styles, lexicon::STYLES.len()),
            ("poses", self.poses, lexicon::POSES.len()),
        ];
        for (name, size, cap) in vocabs {
            if size < 2 || size > cap {
                return err(format!("{name} must be in 2..={cap}, got {size}"));
            }
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return err(format!("ambiguity_rate must be in [0, 1], got {}", self.ambiguity_rate));
        }
        Ok(())
    }

    pub fn identities(&self) -> usize {
        self.characters + self.objects
    }

    pub fn attribute_size(&self, slot: AttributeSlot) -> usize {
        match slot {
            AttributeSlot::Color => self.colors,
            AttributeSlot::Texture => self.textures,
            AttributeSlot::Style => self.styles,
            AttributeSlot::Pose => self.poses,
        }
    }

    fn attribute_offset(&self, slot: AttributeSlot) -> usize {
        AttributeSlot::ALL.iter().take_while(|s| **s != slot).map(|s| self.attribute_size(*s)).sum()
    }

    fn attributes_per_position(&self) -> usize {
        self.colors + self.textures + self.styles + self.poses
    }

    /// Number of dictionary features.
    pub fn num_features(&self) -> usize {
        self.scenes + self.slots * (self.identities() + self.attributes_per_position())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Character,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSlot {
    Color,
    Texture,
    Style,
    Pose,
}

impl AttributeSlot {
    pub const ALL: [AttributeSlot; 4] =
        [AttributeSlot::Color, AttributeSlot::Texture, AttributeSlot::Style, AttributeSlot::Pose];

    pub fn name(self) -> &'static str {
        match self {
            AttributeSlot::Color => "color",
            AttributeSlot::Texture => "texture",
            AttributeSlot::Style => "style",
            AttributeSlot::Pose => "pose",
        }
    }

    pub fn words(self) -> &'static [&'static str] {
        match self {
            AttributeSlot::Color => lexicon::COLORS,
            AttributeSlot::Texture => lexicon::TEXTURES,
            AttributeSlot::Style => lexicon::STYLES,
            AttributeSlot::Pose => lexicon::POSES,
        }
    }
}

impl fmt::Display for AttributeSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub color: usize,
    pub texture: usize,
    pub style: usize,
    pub pose: usize,
}

impl Attributes {
    pub fn get(&self, slot: AttributeSlot) -> usize {
        match slot {
            AttributeSlot::Color => self.color,
            AttributeSlot::Texture => self.texture,
            AttributeSlot::Style => self.style,
            AttributeSlot::Pose => self.pose,
        }
    }

    pub fn set(&mut self, slot: AttributeSlot, value: usize) {
        match slot {
            AttributeSlot::Color => self.color = value,
            AttributeSlot::Texture => self.texture = value,
            AttributeSlot::Style => self.style = value,
            AttributeSlot::Pose => self.pose = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityInstance {
    pub kind: EntityKind,
    /// Index within the kind's vocabulary.
    pub identity: usize,
    pub attributes: Attributes,
    pub position: usize,
}

impl EntityInstance {
    /// Identity index over characters followed by objects.
    pub fn global_identity(&self, cfg: &WorldConfig) -> usize {
        match self.kind {
            EntityKind::Character => self.identity,
            EntityKind::Object => cfg.characters + self.identity,
        }
    }

    pub fn from_global(cfg: &WorldConfig, global: usize, attributes: Attributes, position: usize) -> Self {
        let (kind, identity) = if global < cfg.characters {
            (EntityKind::Character, global)
        } else {
            (EntityKind::Object, global - cfg.characters)
        };
        Self { kind, identity, attributes, position }
    }

    pub fn identity_word(&self) -> &'static str {
        match self.kind {
            EntityKind::Character => lexicon::CHARACTERS[self.identity],
            EntityKind::Object => lexicon::OBJECTS[self.identity],
        }
    }
}

/// Symbolic description of an image. Entities are kept sorted by position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene: usize,
    pub entities: Vec<EntityInstance>,
}

impl SceneSpec {
    pub fn new(scene: usize, mut entities: Vec<EntityInstance>) -> Self {
        entities.sort_by_key(|e| e.position);
        Self { scene, entities }
    }

    pub fn entity_at(&self, position: usize) -> Option<&EntityInstance> {
        self.entities.iter().find(|e| e.position == position)
    }

    pub fn validate(&self, cfg: &WorldConfig) -> Result<(), WorldError> {
        let err = |m: String| Err(WorldError::Spec(m));
        if self.scene >= cfg.scenes {
            return err(format!("scene {} out of range", self.scene));
        }
        if self.entities.len() > cfg.slots {
            return err(format!("{} entities exceed {} slots", self.entities.len(), cfg.slots));
        }
        let mut last = None;
        for e in &self.entities {
            if e.position >= cfg.slots {
                return err(format!("position {} out of range", e.position));
            }
            if last.is_some_and(|p| p >= e.position) {
                return err("entity positions must be distinct and increasing".into());
            }
            last = Some(e.position);
            let limit = match e.kind {
                EntityKind::Character => cfg.characters,
                EntityKind::Object => cfg.objects,
            };
            if e.identity >= limit {
                return err(format!("identity {} out of range for {:?}", e.identity, e.kind));
            }
            for slot in AttributeSlot::ALL {
                if e.attributes.get(slot) >= cfg.attribute_size(slot) {
                    return err(format!("{slot} value {} out of range", e.attributes.get(slot)));
                }
            }
        }
        Ok(())
    }

    /// Active dictionary features.
    pub fn features(&self, cfg: &WorldConfig) -> Vec<Feature> {
        let mut out = vec![Feature::Scene(self.scene)];
        for e in &self.entities {
            out.push(Feature::Identity { position: e.position, identity: e.global_identity(cfg) });
            for slot in AttributeSlot::ALL {
                out.push(Feature::Attribute { position: e.position, slot, value: e.attributes.get(slot) });
            }
        }
        out
    }

    pub fn feature_set(&self, cfg: &WorldConfig) -> BTreeSet<Feature> {
        self.features(cfg).into_iter().collect()
    }
}

/// One dictionary feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Scene(usize),
    Identity { position: usize, identity: usize },
    Attribute { position: usize, slot: AttributeSlot, value: usize },
}

impl Feature {
    /// Dense index into the prototype dictionary.
    pub fn index(&self, cfg: &WorldConfig) -> usize {
        match *self {
            Feature::Scene(s) => s,
            Feature::Identity { position, identity } => cfg.scenes + position * cfg.identities() + identity,
            Feature::Attribute { position, slot, value } => {
                cfg.scenes
                    + cfg.slots * cfg.identities()
                    + position * cfg.attributes_per_position()
                    + cfg.attribute_offset(slot)
                    + value
            }
        }
    }
}

/// A rendered image: a finite real vector, unit norm when produced by the renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageVec(pub Vec<f64>);

impl ImageVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn normalized(&self) -> ImageVec {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        ImageVec(self.0.iter().map(|v| v / n).collect())
    }

    pub fn cosine(&self, other: &ImageVec) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot(&self.0, &other.0) / (na * nb)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A configured world: the prototype dictionary plus decoder tables.
#[derive(Debug, Clone)]
pub struct World {
    cfg: WorldConfig,
    /// `num_features × dim`, row-major, unit rows.
    prototypes: Vec<f64>,
    decoder: decode::Decoder,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.world_seed);
        let (n, d) = (cfg.num_features(), cfg.dim);
        let mut prototypes = Vec::with_capacity(n * d);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prototypes.extend(row.into_iter().map(|v| v / norm));
        }
        let decoder = decode::Decoder::new(&cfg, &prototypes);
        Ok(Self { cfg, prototypes, decoder })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn prototype(&self, feature: Feature) -> &[f64] {
        self.prototype_at(feature.index(&self.cfg))
    }

    pub(crate) fn prototype_at(&self, index: usize) -> &[f64] {
        let d = self.cfg.dim;
        &self.prototypes[index * d..(index + 1) * d]
    }

    /// Normalized sum of the spec's feature prototypes.
    pub fn render(&self, spec: &SceneSpec) -> Result<ImageVec, WorldError> {
        spec.validate(&self.cfg)?;
        let mut sum = vec![0.0; self.cfg.dim];
        for f in spec.features(&self.cfg) {
            for (s, p) in sum.iter_mut().zip(self.prototype(f)) {
                *s += p;
            }
        }
        Ok(ImageVec(sum).normalized())
    }

    /// Best-scoring spec for `x` under cosine similarity to its render.
    pub fn decode(&self, x: &ImageVec) -> SceneSpec {
        self.decode_scored(x).spec
    }

    pub fn decode_scored(&self, x: &ImageVec) -> Decoded {
        self.decoder.decode(&self.cfg, &self.prototypes, &x.0)
    }

    pub fn scene_word(&self, scene: usize) -> &'static str {
        lexicon::SCENES[scene]
    }

    pub fn position_words(&self) -> Vec<String> {
        lexicon::positions(self.cfg.slots)
    }

    /// A uniformly random valid spec with `entities` entities.
    pub fn random_spec_with(&self, rng: &mut impl rand::Rng, entities: usize) -> SceneSpec {
        use rand::seq::SliceRandom;
        let cfg = &self.cfg;
        let mut positions: Vec<usize> = (0..cfg.slots).collect();
        positions.shuffle(rng);
        let list = positions[..entities.min(cfg.slots)]
            .iter()
            .map(|&p| self.random_entity(rng, p))
            .collect();
        SceneSpec::new(rng.random_range(0..cfg.scenes), list)
    }

    pub fn random_spec(&self, rng: &mut impl rand::Rng) -> SceneSpec {
        let n = rng.random_range(0..=self.cfg.slots);
        self.random_spec_with(rng, n)
    }

    pub fn random_entity(&self, rng: &mut impl rand::Rng, position: usize) -> EntityInstance {
        let cfg = &self.cfg;
        let attributes = Attributes {
            color: rng.random_range(0..cfg.colors),
            texture: rng.random_range(0..cfg.textures),
            style: rng.random_range(0..cfg.styles),
            pose: rng.random_range(0..cfg.poses),
        };
        EntityInstance::from_global(cfg, rng.random_range(0..cfg.identities()), attributes, position)
    }
}
