//! Word-level vocabulary with reserved special tokens.
//!
//! Specials occupy ids 0..5 in a fixed order; everything else is
//! frequency-ranked (ties broken lexicographically) so a rebuild from the
//! same corpus is identical. The vocabulary is padded with filler tokens
//! up to the configured size, which keeps the embedding matrix shape a
//! pure function of the config.

use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const GRAPH: usize = 4;
pub const VALUE: usize = 5;

pub const GRAPH_LITERAL: &str = "<|graph|>";
pub const VALUE_LITERAL: &str = "<|value|>";

const SPECIALS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", GRAPH_LITERAL, VALUE_LITERAL];

pub const MIN_VOCAB: usize = 200;
pub const MAX_VOCAB: usize = 4096;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocab size {0} outside [{MIN_VOCAB}, {MAX_VOCAB}]")]
    SizeOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary of exactly `size` entries from corpus lines.
    ///
    /// Words are lowercased and split on whitespace and punctuation. The
    /// most frequent words follow the six specials; unused slots are filled
    /// with reserved `<unused#>` tokens.
    pub fn build(corpus: &[String], size: usize) -> Result<Self, VocabError> {
        if corpus.iter().all(|l| l.trim().is_empty()) {
            return Err(VocabError::EmptyCorpus);
        }
        if !(MIN_VOCAB..=MAX_VOCAB).contains(&size) {
            return Err(VocabError::SizeOutOfRange(size));
        }

        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in corpus {
            for word in split_words(line) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (word, _) in ranked {
            if tokens.len() == size {
                break;
            }
            tokens.push(word);
        }
        let mut filler = 0usize;
        while tokens.len() < size {
            tokens.push(format!("<unused{filler}>"));
            filler += 1;
        }

        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup table from a stored token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < SPECIALS.len() || !(MIN_VOCAB..=MAX_VOCAB).contains(&tokens.len()) {
            return Err(VocabError::SizeOutOfRange(tokens.len()));
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, ids })
    }

    /// Tokenizes text to ids. The literal substrings `<|graph|>` and
    /// `<|value|>` map to their single special ids; out-of-vocabulary words
    /// map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for piece in split_on_placeholders(text) {
            match piece {
                Piece::Graph => out.push(GRAPH),
                Piece::Value => out.push(VALUE),
                Piece::Text(t) => {
                    for word in split_words(t) {
                        out.push(self.id(&word).unwrap_or(UNK));
                    }
                }
            }
        }
        out
    }
}

fn split_words(line: &str) -> Vec<String> {
    line.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

enum Piece<'a> {
    Graph,
    Value,
    Text(&'a str),
}

fn split_on_placeholders(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let g = rest.find(GRAPH_LITERAL);
        let v = rest.find(VALUE_LITERAL);
        let (pos, lit, piece) = match (g, v) {
            (Some(gi), Some(vi)) if gi <= vi => (gi, GRAPH_LITERAL, Piece::Graph),
            (Some(gi), None) => (gi, GRAPH_LITERAL, Piece::Graph),
            (_, Some(vi)) => (vi, VALUE_LITERAL, Piece::Value),
            (None, None) => break,
        };
        if pos > 0 {
            out.push(Piece::Text(&rest[..pos]));
        }
        out.push(piece);
        rest = &rest[pos + lit.len()..];
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<String> {
        vec!["a b a".to_string()]
    }

    #[test]
    fn frequency_orders_words_after_specials() {
        let v = Vocab::build(&corpus(), MIN_VOCAB).unwrap();
        assert_eq!(v.id("a"), Some(6));
        assert_eq!(v.id("b"), Some(7));
        assert_eq!(v.len(), MIN_VOCAB);
    }

    #[test]
    fn graph_special_has_reserved_id() {
        let v = Vocab::build(&corpus(), MIN_VOCAB).unwrap();
        assert_eq!(v.id(GRAPH_LITERAL), Some(GRAPH));
        assert_eq!(
            v.tokens().iter().filter(|t| *t == GRAPH_LITERAL).count(),
            1
        );
    }

    #[test]
    fn rebuild_is_identical() {
        let a = Vocab::build(&corpus(), MIN_VOCAB).unwrap();
        let b = Vocab::build(&corpus(), MIN_VOCAB).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(
            Vocab::build(&[], MIN_VOCAB).unwrap_err(),
            VocabError::EmptyCorpus
        );
        assert_eq!(
            Vocab::build(&["   ".to_string()], MIN_VOCAB).unwrap_err(),
            VocabError::EmptyCorpus
        );
    }

    #[test]
    fn tokenize_maps_placeholders_and_unknowns() {
        let v = Vocab::build(&["predict the value".to_string()], MIN_VOCAB).unwrap();
        let predict = v.id("predict").unwrap();
        assert_eq!(v.tokenize("predict <|value|>"), vec![predict, VALUE]);
        assert_eq!(v.tokenize(""), Vec::<usize>::new());
        assert_eq!(v.tokenize("zzzz"), vec![UNK]);
        assert_eq!(v.tokenize("<|graph|>"), vec![GRAPH]);
    }

    #[test]
    fn tokenize_is_case_insensitive_for_words() {
        let v = Vocab::build(&["Predict".to_string()], MIN_VOCAB).unwrap();
        assert_eq!(v.tokenize("PREDICT"), v.tokenize("predict"));
    }
}
