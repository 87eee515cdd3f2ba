use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const CONTINUATION: &str = "##";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;

/// Subword inventory. Ids are dense in `[0, len)`, `[PAD]` is id 0 and the
/// extension set occupies the ids from `base_len` upwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    base_len: usize,
    unk: u32,
    cls: u32,
    sep: u32,
    mask: u32,
}

/// Shipped base inventory: characters, common words and domain sub-pieces.
pub const BASE_VOCAB: &str = include_str!("../../assets/base_vocab.txt");

impl Vocabulary {
    pub fn base() -> Self {
        Self::parse(BASE_VOCAB).expect("shipped base vocabulary parses")
    }

    /// Builds a vocabulary from tokens in id order. All of them form the base
    /// set.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("token {i} is empty or contains whitespace: {tok:?}")));
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate token {tok:?}")));
            }
        }
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Input(format!("{PAD} must be token 0")));
        }
        let id = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Input(format!("vocabulary lacks {s}")))
        };
        let (unk, cls, sep, mask) = (id(UNK)?, id(CLS)?, id(SEP)?, id(MASK)?);
        let base_len = tokens.len();
        Ok(Self {
            tokens,
            index,
            base_len,
            unk,
            cls,
            sep,
            mask,
        })
    }

    /// Parses the one-token-per-line format; line number is the id.
    pub fn parse(contents: &str) -> Result<Self> {
        Self::from_tokens(contents.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn mask_id(&self) -> u32 {
        self.mask
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == PAD_ID || id == self.unk || id == self.cls || id == self.sep || id == self.mask
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    /// Tokens added beyond the base inventory.
    pub fn extension(&self) -> &[String] {
        &self.tokens[self.base_len..]
    }

    /// Appends whole-word tokens to the extension set. Tokens already present
    /// are skipped.
    pub fn extend<I, S>(&mut self, tokens: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for tok in tokens {
            let tok = tok.into();
            if !self.index.contains_key(&tok) {
                self.index.insert(tok.clone(), self.tokens.len() as u32);
                self.tokens.push(tok);
            }
        }
    }

    /// Marks the first `base_len` tokens as the base set.
    pub fn with_base_len(mut self, base_len: usize) -> Result<Self> {
        if base_len > self.tokens.len() || base_len < SPECIALS.len() {
            return Err(Error::Input(format!(
                "base length {base_len} outside [{}, {}]",
                SPECIALS.len(),
                self.tokens.len()
            )));
        }
        self.base_len = base_len;
        Ok(self)
    }
}
