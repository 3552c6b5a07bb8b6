//! Whitespace vocabulary and tokenization.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Token table where line number equals id. The first five ids are the
/// special tokens PAD, UNK, CLS, SEP, MASK in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Lowercased whitespace split.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

pub fn is_special(id: u32) -> bool {
    (id as usize) < SPECIALS.len()
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Format(format!(
                "vocabulary must start with {}",
                SPECIALS.join(" ")
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from the corpus, most frequent words first (ties
    /// alphabetical), capped at `max_size` entries including specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let room = max_size.saturating_sub(tokens.len());
        tokens.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Vocab::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line.map_err(|e| Error::io(path, e))?);
        }
        Vocab::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for t in &self.tokens {
            writeln!(out, "{t}").expect("write to memory");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `[CLS] body [SEP]`, truncated to `max_seq` tokens with `[SEP]` kept last.
    pub fn tokenize(&self, text: &str, max_seq: usize) -> Encoding {
        let body_cap = max_seq.saturating_sub(2);
        let mut ids = Vec::with_capacity(16);
        ids.push(CLS);
        ids.extend(words(text).take(body_cap).map(|w| self.id(&w)));
        ids.push(SEP);
        ids.truncate(max_seq.max(1));
        let mask = vec![true; ids.len()];
        Encoding { ids, mask }
    }
}

/// Token ids with an attention mask marking real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Encoding {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let mask = ids.iter().map(|&i| i != PAD).collect();
        Encoding { ids, mask }
    }
}

/// Right-padded batch of encodings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<Vec<u32>>,
    pub mask: Vec<Vec<bool>>,
}

impl TokenBatch {
    pub fn new(encodings: &[Encoding]) -> Self {
        let width = encodings.iter().map(|e| e.ids.len()).max().unwrap_or(0);
        Self::padded_to(encodings, width)
    }

    pub fn padded_to(encodings: &[Encoding], width: usize) -> Self {
        let mut ids = Vec::with_capacity(encodings.len());
        let mut mask = Vec::with_capacity(encodings.len());
        for e in encodings {
            let mut row = e.ids.clone();
            let mut m = e.mask.clone();
            row.resize(width.max(row.len()), PAD);
            m.resize(row.len(), false);
            ids.push(row);
            mask.push(m);
        }
        TokenBatch { ids, mask }
    }

    pub fn tokenize<S: AsRef<str>>(texts: &[S], vocab: &Vocab, max_seq: usize) -> Self {
        let enc: Vec<Encoding> = texts.iter().map(|t| vocab.tokenize(t.as_ref(), max_seq)).collect();
        TokenBatch::new(&enc)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
