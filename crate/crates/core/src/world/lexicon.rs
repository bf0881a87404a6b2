//! Word lists for the symbolic world. Every word is a single token and no word
//! appears in two lists.

pub const CHARACTERS: &[&str] = &[
    "cat", "dog", "fox", "owl", "rabbit", "bear", "robot", "knight", "wizard", "panda", "tiger", "monkey",
];
pub const OBJECTS: &[&str] = &[
    "cup", "hat", "lamp", "vase", "clock", "chair", "book", "guitar", "kettle", "bicycle", "umbrella", "teapot",
];
pub const SCENES: &[&str] = &["forest", "beach", "city", "desert", "kitchen", "garden", "studio", "mountain"];
pub const COLORS: &[&str] = &["red", "blue", "green", "yellow", "purple", "orange", "white", "black"];
pub const TEXTURES: &[&str] = &["smooth", "striped", "glossy", "furry", "dotted", "woven"];
pub const STYLES: &[&str] = &["photo", "sketch", "watercolor", "cartoon", "pixel", "oil"];
pub const POSES: &[&str] = &["standing", "sitting", "lying", "jumping", "leaning", "floating"];

/// Position words for a given slot count.
pub fn positions(slots: usize) -> Vec<String> {
    match slots {
        1 => vec!["center".into()],
        2 => vec!["left".into(), "right".into()],
        3 => vec!["left".into(), "center".into(), "right".into()],
        n => (1..=n).map(|i| format!("slot{i}")).collect(),
    }
}

pub const MAX_SLOTS: usize = 6;

/// Connective words used by the caption grammar.
pub const CAPTION_WORDS: &[&str] = &["scene", ";", ":"];

/// Words used by instruction templates and relation phrases.
pub const TEMPLATE_WORDS: &[&str] = &[
    "show", "the", "from", "image", "in", "it", "combine", "and", "put", "them", "together", "place", "into",
    "scene", "of", "that", "add", "to", "picture", "replace", "with", "give", "color", "texture", "pose",
    "render", "style", "move", "content", "change", "background", "provides", "subject", "depict", "a",
    "is", "edit", "replacement", "apply", "transfer", "1", "2", "3", "4", "5", "6",
];
