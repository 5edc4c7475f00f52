//! Minimal `{slot}` template engine.
//!
//! A slot is `{` + identifier + optional `*` + `}`. Everything else, including
//! stray braces, is literal text and is copied byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{0}` is empty")]
    Empty(String),
    #[error("template `{name}` has no value for slot `{slot}`")]
    MissingSlot { name: String, slot: String },
    #[error("template `{name}` does not declare required slot `{slot}`")]
    UndeclaredSlot { name: String, slot: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    source: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(name: impl Into<String>, source: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let source = source.into();
        if source.trim().is_empty() {
            return Err(TemplateError::Empty(name));
        }
        let pieces = split_pieces(&source);
        Ok(Template { name, source, pieces })
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self, TemplateError> {
        let source = std::fs::read_to_string(path)
            .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
        Template::parse(name, source)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Hex SHA-256 of the template bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for piece in &self.pieces {
            if let Piece::Slot(s) = piece {
                if !seen.contains(&s.as_str()) {
                    seen.push(s.as_str());
                }
            }
        }
        seen
    }

    /// Fails unless every name in `required` appears as a slot.
    pub fn require_slots(&self, required: &[&str]) -> Result<(), TemplateError> {
        let slots = self.slots();
        for slot in required {
            if !slots.contains(slot) {
                return Err(TemplateError::UndeclaredSlot { name: self.name.clone(), slot: slot.to_string() });
            }
        }
        Ok(())
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len() + 256);
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match values.get(s.as_str()) {
                    Some(v) => out.push_str(v),
                    None => return Err(TemplateError::MissingSlot { name: self.name.clone(), slot: s.clone() }),
                },
            }
        }
        Ok(out)
    }
}

fn split_pieces(source: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = source;
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match slot_name(after) {
            Some(len) => {
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(after[..len].to_string()));
                rest = &after[len + 1..];
            }
            None => {
                text.push('{');
                rest = after;
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

/// Length of a valid slot name at the start of `s` if it is followed by `}`.
fn slot_name(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
        i += 1;
    }
    if i == 0 || bytes[0].is_ascii_digit() {
        return None;
    }
    if i < bytes.len() && bytes[i] == b'*' {
        i += 1;
    }
    (i < bytes.len() && bytes[i] == b'}').then_some(i)
}

/// Digest over a template and its slot values; equal digests imply equal renderings.
pub fn slot_digest(template: &Template, values: &BTreeMap<&str, String>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(template.name.as_bytes());
    hasher.update([0]);
    hasher.update(template.source.as_bytes());
    for (k, v) in values {
        hasher.update([0]);
        hasher.update(k.as_bytes());
        hasher.update([0]);
        hasher.update((v.len() as u64).to_le_bytes());
        hasher.update(v.as_bytes());
    }
    hex::encode(hasher.finalize())
}
