//! Whitespace/punctuation tokenizer and a fixed vocabulary built from the
//! synthetic corpus.
//!
//! Reserved ids come first in a fixed order: `<pad>`, `</s>`, `<unk>`, then
//! sixteen region placeholder tokens `<R0>`..`<R15>`. Decimal numbers stay
//! single tokens ("5.00"), words are lowercased, punctuation splits off as
//! single-character tokens.

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use regex::Regex;
use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

pub const PAD: &str = "<pad>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
/// Maximum regions per question; one reserved placeholder id each.
pub const MAX_REGIONS: usize = 16;

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"<R\d+>|\d+\.\d+|\d+|[A-Za-z]+|[^\sA-Za-z0-9]").unwrap()
    })
}

/// Split text into tokens; placeholders and decimal numbers survive intact.
pub fn tokenize(text: &str) -> Vec<String> {
    token_re()
        .find_iter(text)
        .map(|m| {
            let s = m.as_str();
            if s.starts_with("<R") {
                s.to_string()
            } else {
                s.to_lowercase()
            }
        })
        .collect()
}

/// Placeholder token for region slot `j`.
pub fn placeholder(j: usize) -> String {
    format!("<R{j}>")
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const EOS_ID: usize = 1;
    pub const UNK_ID: usize = 2;

    fn reserved() -> Vec<String> {
        let mut v = vec![PAD.to_string(), EOS.to_string(), UNK.to_string()];
        for j in 0..MAX_REGIONS {
            v.push(placeholder(j));
        }
        v
    }

    /// Build from raw corpus lines: reserved tokens first, then the sorted
    /// set of corpus tokens.
    pub fn from_corpus<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<String> = Vec::new();
        let reserved = Self::reserved();
        for line in lines {
            for tok in tokenize(line) {
                if !reserved.contains(&tok) {
                    seen.push(tok);
                }
            }
        }
        seen.sort();
        seen.dedup();
        let mut tokens = reserved;
        tokens.extend(seen);
        let ids = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        *self.ids.get(token).unwrap_or(&Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn placeholder_id(&self, j: usize) -> usize {
        3 + j
    }

    /// Is this id one of the sixteen region placeholders, and which slot?
    pub fn placeholder_slot(&self, id: usize) -> Option<usize> {
        (3..3 + MAX_REGIONS).contains(&id).then(|| id - 3)
    }

    /// Tokenize and map to ids; unknown tokens become `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Render ids back to space-joined text, stopping at `</s>` and
    /// skipping padding.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = Vec::new();
        for &id in ids {
            if id == Self::EOS_ID {
                break;
            }
            if id == Self::PAD_ID {
                continue;
            }
            out.push(self.tokens.get(id).map(|s| s.as_str()).unwrap_or(UNK));
        }
        out.join(" ")
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        let reserved = Self::reserved();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::Format(format!(
                "{} is not a vocabulary file (reserved prefix mismatch)",
                path.display()
            )));
        }
        let ids = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(Self { tokens, ids })
    }
}
