use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Char,
    #[default]
    Word,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Self::Char),
            "word" => Ok(Self::Word),
            other => Err(Error::config(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

/// Word mode lowercases and yields alphanumeric runs and single punctuation
/// characters; char mode yields every non-whitespace character.
pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        TokenizerMode::Word => {
            let mut out = Vec::new();
            let mut cur = String::new();
            for c in text.chars() {
                if c.is_alphanumeric() {
                    cur.extend(c.to_lowercase());
                    continue;
                }
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                if !c.is_whitespace() {
                    out.push(c.to_string());
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
            out
        }
    }
}

/// Token strings indexed by id, reserved tokens first.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    mode: TokenizerMode,
}

impl Vocabulary {
    /// Reserved tokens followed by the most frequent corpus tokens, ties
    /// broken lexicographically, up to `size` entries.
    pub fn build<S: AsRef<str>>(corpus: &[S], size: usize, mode: TokenizerMode) -> Result<Self> {
        if size < NUM_SPECIAL + 1 {
            return Err(Error::config(format!("vocabulary size {size} leaves no room beyond {NUM_SPECIAL} reserved tokens")));
        }
        if corpus.is_empty() {
            return Err(Error::input("empty corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for tok in tokenize(doc.as_ref(), mode) {
                if !SPECIAL_TOKENS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t).take(size - NUM_SPECIAL))
            .collect();
        Self::from_tokens(tokens, mode)
    }

    /// Requires the reserved tokens in their fixed positions and no
    /// duplicates.
    pub fn from_tokens(tokens: Vec<String>, mode: TokenizerMode) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::input("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::input(format!("invalid vocabulary entry {t:?} at line {}", i + 1)));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index, mode })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of a single token, `[UNK]` when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Tokenizes and maps to ids, without special tokens.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text, self.mode).iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, mode: TokenizerMode) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_tokenizer() {
        assert_eq!(tokenize("The cat, sat.", TokenizerMode::Word), vec!["the", "cat", ",", "sat", "."]);
        assert_eq!(tokenize(" a  b ", TokenizerMode::Char), vec!["a", "b"]);
    }

    #[test]
    fn build_examples() {
        let v = Vocabulary::build(&["a a b"], 7, TokenizerMode::Word).unwrap();
        assert_eq!(v.tokens()[5..], ["a".to_string(), "b".to_string()]);
        assert_eq!(v.len(), 7);
        let text = "hello world";
        let v = Vocabulary::build(&[text], 100, TokenizerMode::Char).unwrap();
        assert!(v.len() <= NUM_SPECIAL + 7);
        assert!(matches!(Vocabulary::build(&["a"], 5, TokenizerMode::Word), Err(Error::Config(_))));
        assert!(Vocabulary::build::<&str>(&[], 10, TokenizerMode::Word).is_err());
    }

    #[test]
    fn ties_and_truncation_are_deterministic() {
        let corpus = ["b a c", "c b"];
        let v = Vocabulary::build(&corpus, 7, TokenizerMode::Word).unwrap();
        assert_eq!(&v.tokens()[5..], &["b".to_string(), "c".to_string()]);
        let again = Vocabulary::build(&corpus, 7, TokenizerMode::Word).unwrap();
        assert_eq!(v.to_file_string(), again.to_file_string());
        assert_eq!(v.id("a"), UNK_ID);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::build(&["x y z y"], 20, TokenizerMode::Word).unwrap();
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p, TokenizerMode::Word).unwrap(), v);
        std::fs::write(&p, "[PAD]\n[UNK]\n").unwrap();
        assert!(Vocabulary::load(&p, TokenizerMode::Word).is_err());
    }
}
