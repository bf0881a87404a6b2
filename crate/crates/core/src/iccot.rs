//! Structured reasoning traces: one output caption plus one relation per
//! reference image.
//!
//! The canonical tagged form is
//!
//! ```text
//! <out_caption>CAPTION</out_caption><relation_1>ROLE</relation_1>...<relation_N>ROLE</relation_N>
//! ```
//!
//! Tag content is opaque UTF-8 with `<` and `>` forbidden. Whitespace between
//! tags is ignored and tag content is trimmed.

use std::fmt;

use serde::{Deserialize, Serialize};

const CAPTION_TAG: &str = "out_caption";
const RELATION_PREFIX: &str = "relation_";

/// A validated reasoning trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TraceJson", into = "TraceJson")]
pub struct ReasoningTrace {
    caption: String,
    relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidTrace {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("relation {0} is empty")]
    EmptyRelation(usize),
    #[error("{field} contains a tag delimiter")]
    Delimiter { field: String },
    #[error("invalid trace JSON: {0}")]
    Json(String),
}

impl ReasoningTrace {
    /// Builds a trace, trimming every field and checking the invariants.
    pub fn new<S: AsRef<str>>(caption: &str, relations: &[S]) -> Result<Self, InvalidTrace> {
        let caption = caption.trim().to_string();
        if caption.is_empty() {
            return Err(InvalidTrace::EmptyCaption);
        }
        if has_delimiter(&caption) {
            return Err(InvalidTrace::Delimiter { field: "caption".into() });
        }
        let mut rels = Vec::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            let r = r.as_ref().trim();
            if r.is_empty() {
                return Err(InvalidTrace::EmptyRelation(i + 1));
            }
            if has_delimiter(r) {
                return Err(InvalidTrace::Delimiter { field: format!("relation_{}", i + 1) });
            }
            rels.push(r.to_string());
        }
        Ok(Self { caption, relations: rels })
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_refs(&self) -> usize {
        self.relations.len()
    }
}

fn has_delimiter(s: &str) -> bool {
    s.contains('<') || s.contains('>')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IssueCode {
    MissingCaption,
    RelationCountMismatch,
    MalformedTag,
    DuplicateTag,
    StrayText,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
}

/// Outcome of validating a tagged string. `ok` holds iff `issues` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        Self { ok: issues.is_empty(), issues }
    }

    pub fn codes(&self) -> Vec<IssueCode> {
        self.issues.iter().map(|i| i.code).collect()
    }

    pub fn count(&self, code: IssueCode) -> usize {
        self.issues.iter().filter(|i| i.code == code).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        for (n, issue) in self.issues.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", issue.code, issue.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagName {
    Caption,
    Relation(usize),
}

impl fmt::Display for TagName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagName::Caption => f.write_str(CAPTION_TAG),
            TagName::Relation(i) => write!(f, "{RELATION_PREFIX}{i}"),
        }
    }
}

fn tag_name(raw: &str) -> Option<TagName> {
    if raw == CAPTION_TAG {
        return Some(TagName::Caption);
    }
    let digits = raw.strip_prefix(RELATION_PREFIX)?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().map(TagName::Relation)
}

/// Parses and validates a tagged trace against the declared reference count.
pub fn parse_trace(text: &str, num_refs: usize) -> Result<ReasoningTrace, ValidationReport> {
    let mut issues = Vec::new();
    let mut caption: Option<String> = None;
    let mut relations: Vec<Option<String>> = vec![None; num_refs];
    let mut extra_relations: Vec<usize> = Vec::new();
    let mut seen: Vec<TagName> = Vec::new();
    let mut push = |code, message: String| issues.push(Issue { code, message });

    let mut rest = text;
    // Outside any tag: only whitespace is allowed.
    while !rest.is_empty() {
        let open_at = rest.find('<');
        let before = &rest[..open_at.unwrap_or(rest.len())];
        if !before.trim().is_empty() {
            if before.contains('>') {
                push(IssueCode::MalformedTag, format!("stray '>' in {:?}", before.trim()));
            } else {
                push(IssueCode::StrayText, format!("text outside tags: {:?}", before.trim()));
            }
        }
        let Some(open_at) = open_at else { break };
        rest = &rest[open_at..];
        let Some(close_at) = rest.find('>') else {
            push(IssueCode::MalformedTag, format!("unterminated tag {:?}", rest));
            break;
        };
        let raw = &rest[1..close_at];
        rest = &rest[close_at + 1..];
        if raw.starts_with('/') {
            push(IssueCode::MalformedTag, format!("closing tag <{raw}> without opening tag"));
            continue;
        }
        let Some(name) = tag_name(raw) else {
            push(IssueCode::MalformedTag, format!("unknown tag <{raw}>"));
            continue;
        };
        // Content runs to the matching close tag; any other '<' or '>' first is nesting.
        let closing = format!("</{name}>");
        let content_end = rest.find(['<', '>']);
        let content = match content_end {
            Some(at) if rest[at..].starts_with(&closing) => {
                let c = &rest[..at];
                rest = &rest[at + closing.len()..];
                c
            }
            Some(at) => {
                push(IssueCode::MalformedTag, format!("<{name}> is not closed before {:?}", short(&rest[at..])));
                rest = &rest[at..];
                continue;
            }
            None => {
                push(IssueCode::MalformedTag, format!("<{name}> is never closed"));
                break;
            }
        };
        if seen.contains(&name) {
            push(IssueCode::DuplicateTag, format!("<{name}> appears more than once"));
            continue;
        }
        seen.push(name);
        let content = content.trim().to_string();
        match name {
            TagName::Caption => caption = Some(content),
            TagName::Relation(i) => {
                if content.is_empty() {
                    push(IssueCode::MalformedTag, format!("<{name}> has empty content"));
                }
                if i <= num_refs {
                    relations[i - 1] = Some(content);
                } else {
                    extra_relations.push(i);
                }
            }
        }
    }

    match &caption {
        None => push(IssueCode::MissingCaption, "no <out_caption> tag".into()),
        Some(c) if c.is_empty() => push(IssueCode::MissingCaption, "caption is empty".into()),
        _ => {}
    }
    for (i, r) in relations.iter().enumerate() {
        if r.is_none() {
            push(
                IssueCode::RelationCountMismatch,
                format!("missing <relation_{}> for {num_refs} reference image(s)", i + 1),
            );
        }
    }
    for i in extra_relations {
        push(
            IssueCode::RelationCountMismatch,
            format!("<relation_{i}> exceeds the {num_refs} reference image(s)"),
        );
    }

    if !issues.is_empty() {
        return Err(ValidationReport::from_issues(issues));
    }
    let relations: Vec<String> = relations.into_iter().map(Option::unwrap_or_default).collect();
    ReasoningTrace::new(&caption.unwrap_or_default(), &relations).map_err(|e| {
        ValidationReport::from_issues(vec![Issue { code: IssueCode::MalformedTag, message: e.to_string() }])
    })
}

fn short(s: &str) -> String {
    s.chars().take(24).collect()
}

/// Checks a tagged string without building a trace.
pub fn validate(text: &str, num_refs: usize) -> ValidationReport {
    match parse_trace(text, num_refs) {
        Ok(_) => ValidationReport::from_issues(Vec::new()),
        Err(report) => report,
    }
}

/// Canonical form: caption first, relations in ascending index order, no separators.
pub fn render_trace(trace: &ReasoningTrace) -> String {
    let mut out = format!("<{CAPTION_TAG}>{}</{CAPTION_TAG}>", trace.caption);
    for (i, r) in trace.relations.iter().enumerate() {
        let n = i + 1;
        out.push_str(&format!("<{RELATION_PREFIX}{n}>{r}</{RELATION_PREFIX}{n}>"));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TraceJson {
    out_caption: String,
    relations: Vec<String>,
}

impl From<ReasoningTrace> for TraceJson {
    fn from(t: ReasoningTrace) -> Self {
        Self { out_caption: t.caption, relations: t.relations }
    }
}

impl TryFrom<TraceJson> for ReasoningTrace {
    type Error = InvalidTrace;

    fn try_from(j: TraceJson) -> Result<Self, Self::Error> {
        ReasoningTrace::new(&j.out_caption, &j.relations)
    }
}

/// Deterministic JSON view: `{"out_caption": .., "relations": [..]}`.
pub fn trace_to_json(trace: &ReasoningTrace) -> String {
    serde_json::to_string(trace).expect("trace serialization is infallible")
}

pub fn trace_from_json(json: &str) -> Result<ReasoningTrace, InvalidTrace> {
    serde_json::from_str(json).map_err(|e| InvalidTrace::Json(e.to_string()))
}
