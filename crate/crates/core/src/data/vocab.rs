use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DataError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Whitespace-token vocabulary with the four specials at fixed ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from regular tokens in id order; specials are prepended.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (id, tok) in all.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(DataError::Contract(format!(
                    "invalid vocabulary token {tok:?}"
                )));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(DataError::Contract(format!(
                    "duplicate vocabulary token {tok:?}"
                )));
            }
        }
        Ok(Self { tokens: all, index })
    }

    /// Ranks whitespace tokens by descending frequency, ties broken
    /// lexicographically, keeping at most `max_size` entries including the
    /// specials.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in text.split_whitespace() {
                if !SPECIAL_TOKENS.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(DataError::Contract(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(NUM_SPECIALS));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Regular (non-special) tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    /// One regular token per line; line `i` (0-based) holds id `i + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.regular_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(contents: &str) -> Result<Self> {
        Self::from_tokens(contents.lines().filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&contents)
    }
}
