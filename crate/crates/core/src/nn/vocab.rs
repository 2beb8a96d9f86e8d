use std::collections::HashMap;

use crate::doc::Document;

pub const UNK: usize = 0;
pub const SOD: usize = 1;
pub const EOD: usize = 2;

const RESERVED: [&str; 3] = ["<unk>", "<sod>", "<eod>"];

/// Token-to-row mapping. Rows 0..3 are `<unk>`, `<sod>` and `<eod>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Reserved rows followed by every token seen, most frequent first,
    /// ties broken lexicographically.
    pub fn build<'a>(items: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in items {
            *counts.entry(t).or_default() += 1;
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !RESERVED.contains(t)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens =
            RESERVED.iter().map(|s| s.to_string()).chain(entries.into_iter().map(|(t, _)| t.to_string())).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_documents(docs: &[Document]) -> Self {
        Self::build(docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)))
    }

    /// Character inventory over all tokens of `docs`.
    pub fn chars_of(docs: &[Document]) -> Self {
        let chars: Vec<String> =
            docs.iter().flat_map(|d| d.tokens.iter()).flat_map(|t| t.chars()).map(String::from).collect();
        Self::build(chars.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        token.chars().map(|c| self.id(c.encode_utf8(&mut buf))).collect()
    }
}
