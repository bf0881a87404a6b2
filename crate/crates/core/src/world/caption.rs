//! Caption grammar.
//!
//! ```text
//! caption := [SCENE "scene"] clause*        (clauses after the first item are ";"-separated)
//! clause  := POSITION ":" word+             (attribute or identity words, each category once)
//! ```
//!
//! The canonical caption of a spec lists the scene and every entity with all
//! four attributes followed by its identity, e.g.
//! `forest scene; left: red striped sketch sitting cat`.

use super::{lexicon, AttributeSlot, Feature, SceneSpec, WorldConfig};

/// Splits text into word tokens; `;`, `:` and `,` become separate tokens.
pub(crate) fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if matches!(c, ';' | ':' | ',') {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + 1]);
                start = i + 1;
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

/// Joins word tokens back into text with punctuation attached to the previous word.
pub(crate) fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    for w in words {
        let w = w.as_ref();
        if !out.is_empty() && !matches!(w, ";" | ":" | ",") {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

pub fn caption_of(spec: &SceneSpec, cfg: &WorldConfig) -> String {
    let positions = lexicon::positions(cfg.slots);
    let mut out = format!("{} scene", lexicon::SCENES[spec.scene]);
    for e in &spec.entities {
        out.push_str(&format!("; {}:", positions[e.position]));
        for slot in AttributeSlot::ALL {
            out.push(' ');
            out.push_str(slot.words()[e.attributes.get(slot)]);
        }
        out.push(' ');
        out.push_str(e.identity_word());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartialEntity {
    pub position: usize,
    /// Global identity index.
    pub identity: Option<usize>,
    pub attributes: [Option<usize>; 4],
}

/// A possibly incomplete scene description recovered from text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartialSpec {
    pub scene: Option<usize>,
    pub entities: Vec<PartialEntity>,
}

impl PartialSpec {
    pub fn features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        if let Some(s) = self.scene {
            out.push(Feature::Scene(s));
        }
        for e in &self.entities {
            if let Some(identity) = e.identity {
                out.push(Feature::Identity { position: e.position, identity });
            }
            for (k, slot) in AttributeSlot::ALL.into_iter().enumerate() {
                if let Some(value) = e.attributes[k] {
                    out.push(Feature::Attribute { position: e.position, slot, value });
                }
            }
        }
        out
    }
}

enum Word {
    Identity(usize),
    Attribute(usize, usize),
}

fn lookup(list: &[&str], limit: usize, w: &str) -> Option<usize> {
    list.iter().take(limit).position(|x| *x == w)
}

fn classify(cfg: &WorldConfig, w: &str) -> Option<Word> {
    if let Some(i) = lookup(lexicon::CHARACTERS, cfg.characters, w) {
        return Some(Word::Identity(i));
    }
    if let Some(i) = lookup(lexicon::OBJECTS, cfg.objects, w) {
        return Some(Word::Identity(cfg.characters + i));
    }
    AttributeSlot::ALL
        .into_iter()
        .enumerate()
        .find_map(|(k, slot)| lookup(slot.words(), cfg.attribute_size(slot), w).map(|v| Word::Attribute(k, v)))
}

/// Parses a caption under the grammar; `None` when it does not parse or names no feature.
pub fn parse_caption(text: &str, cfg: &WorldConfig) -> Option<PartialSpec> {
    let words = split_words(text);
    let positions = lexicon::positions(cfg.slots);
    let mut spec = PartialSpec::default();
    let mut i = 0;
    if let Some(s) = words.first().and_then(|w| lookup(lexicon::SCENES, cfg.scenes, w)) {
        if words.get(1) != Some(&"scene") {
            return None;
        }
        spec.scene = Some(s);
        i = 2;
    }
    while i < words.len() {
        if i > 0 {
            if words[i] != ";" {
                return None;
            }
            i += 1;
        }
        let position = positions.iter().position(|p| Some(&p.as_str()) == words.get(i))?;
        if words.get(i + 1) != Some(&":") || spec.entities.iter().any(|e| e.position == position) {
            return None;
        }
        i += 2;
        let mut entity = PartialEntity { position, ..Default::default() };
        let mut any = false;
        while i < words.len() && words[i] != ";" {
            match classify(cfg, words[i])? {
                Word::Identity(id) if entity.identity.is_none() => entity.identity = Some(id),
                Word::Attribute(k, v) if entity.attributes[k].is_none() => entity.attributes[k] = Some(v),
                _ => return None,
            }
            any = true;
            i += 1;
        }
        if !any {
            return None;
        }
        spec.entities.push(entity);
    }
    if spec.scene.is_none() && spec.entities.is_empty() {
        return None;
    }
    Some(spec)
}
