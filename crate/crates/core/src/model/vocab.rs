//! Token vocabulary, trace tokenizer and the segment tracker that tells the
//! networks which part of a trace a token belongs to.

use std::collections::HashMap;

use crate::world::caption::{join_words, split_words};
use crate::world::{lexicon, AttributeSlot, WorldConfig};

use super::ModelError;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const CAPTION_OPEN: u32 = 2;
pub const CAPTION_CLOSE: u32 = 3;
/// Reference slots with relation tags.
pub const MAX_REFS: usize = crate::world::MAX_REFS;
const FIRST_WORD: u32 = 4 + 2 * MAX_REFS as u32;

pub fn relation_open(i: usize) -> u32 {
    4 + 2 * (i as u32 - 1)
}

pub fn relation_close(i: usize) -> u32 {
    relation_open(i) + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Token id of each position word, by slot.
    positions: Vec<u32>,
}

impl Vocab {
    pub fn new(world: &WorldConfig) -> Self {
        let mut tokens: Vec<String> = vec!["<s>".into(), "</s>".into(), "<out_caption>".into(), "</out_caption>".into()];
        for i in 1..=MAX_REFS {
            tokens.push(format!("<relation_{i}>"));
            tokens.push(format!("</relation_{i}>"));
        }
        let mut words: Vec<String> = Vec::new();
        words.extend(lexicon::CHARACTERS[..world.characters].iter().map(|s| s.to_string()));
        words.extend(lexicon::OBJECTS[..world.objects].iter().map(|s| s.to_string()));
        words.extend(lexicon::SCENES[..world.scenes].iter().map(|s| s.to_string()));
        for slot in AttributeSlot::ALL {
            words.extend(slot.words()[..world.attribute_size(slot)].iter().map(|s| s.to_string()));
        }
        let position_words = lexicon::positions(world.slots);
        words.extend(position_words.iter().cloned());
        words.extend(lexicon::CAPTION_WORDS.iter().map(|s| s.to_string()));
        words.extend(lexicon::TEMPLATE_WORDS.iter().map(|s| s.to_string()));
        let mut index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for w in words {
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len() as u32);
                tokens.push(w);
            }
        }
        let positions = position_words.iter().map(|w| index[w]).collect();
        debug_assert_eq!(tokens[FIRST_WORD as usize - 1], format!("</relation_{MAX_REFS}>"));
        Vocab { tokens, index, positions }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn slots(&self) -> usize {
        self.positions.len()
    }

    /// Segments: outside tags, caption before any position word, one per
    /// caption slot, one per relation.
    pub fn num_segments(&self) -> usize {
        2 + self.slots() + MAX_REFS
    }

    pub fn is_tag(id: u32) -> bool {
        (CAPTION_OPEN..FIRST_WORD).contains(&id)
    }

    /// Tokenizes plain words (instructions).
    pub fn words(&self, text: &str) -> Result<Vec<u32>, ModelError> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(w).ok_or_else(|| ModelError::UnknownWord(w.to_string())))
            .collect()
    }

    /// Tokenizes tagged trace text; tags become single tokens. No BOS/EOS.
    pub fn trace_tokens(&self, text: &str) -> Result<Vec<u32>, ModelError> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if rest.starts_with('<') {
                let end = rest.find('>').ok_or_else(|| ModelError::UnknownWord(rest.to_string()))?;
                let tag = &rest[..=end];
                match self.id(tag) {
                    Some(id) if Self::is_tag(id) => out.push(id),
                    _ => return Err(ModelError::UnknownWord(tag.to_string())),
                }
                rest = &rest[end + 1..];
            } else {
                let end = rest.find('<').unwrap_or(rest.len());
                out.extend(self.words(&rest[..end])?);
                rest = &rest[end..];
            }
        }
        Ok(out)
    }

    /// Inverse of `trace_tokens` for canonical text; BOS and EOS are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut words: Vec<&str> = Vec::new();
        for &id in ids {
            if id == BOS || id == EOS {
                continue;
            }
            if Self::is_tag(id) {
                out.push_str(&join_words(&words));
                words.clear();
                out.push_str(self.token(id));
            } else {
                words.push(self.token(id));
            }
        }
        out.push_str(&join_words(&words));
        out
    }
}

/// Tracks which trace segment the next token falls in.
#[derive(Debug, Clone)]
pub struct SegmentTracker<'v> {
    vocab: &'v Vocab,
    state: usize,
}

impl<'v> SegmentTracker<'v> {
    pub const OUTSIDE: usize = 0;
    pub const CAPTION: usize = 1;

    pub fn new(vocab: &'v Vocab) -> Self {
        SegmentTracker { vocab, state: Self::OUTSIDE }
    }

    pub fn segment(&self) -> usize {
        self.state
    }

    fn in_caption(&self) -> bool {
        (Self::CAPTION..2 + self.vocab.slots()).contains(&self.state)
    }

    pub fn push(&mut self, id: u32) {
        let slots = self.vocab.slots();
        if id == CAPTION_OPEN {
            self.state = Self::CAPTION;
        } else if id == CAPTION_CLOSE {
            self.state = Self::OUTSIDE;
        } else if let Some((i, close)) = relation_tag(id) {
            self.state = if close { Self::OUTSIDE } else { 2 + slots + i };
        } else if self.in_caption() {
            if let Some(p) = self.vocab.positions.iter().position(|&t| t == id) {
                self.state = 2 + p;
            }
        }
    }
}

/// Zero-based relation index of a relation tag and whether it closes.
fn relation_tag(id: u32) -> Option<(usize, bool)> {
    (relation_open(1)..FIRST_WORD).contains(&id).then(|| {
        let k = id - relation_open(1);
        ((k / 2) as usize, k % 2 == 1)
    })
}

/// Segment of each token: the tracker state before the token is consumed.
pub fn segments(vocab: &Vocab, ids: &[u32]) -> Vec<usize> {
    let mut t = SegmentTracker::new(vocab);
    ids.iter()
        .map(|&id| {
            let s = t.segment();
            t.push(id);
            s
        })
        .collect()
}
