//! Sentence-pair data model, tokenization, vocabulary, and encoding into
//! the concatenated `[CLS] a [SEP] b [SEP]` form consumed by the encoder.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::LabelScheme;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Half-open token-index range `[start, end)` marking one keyword.
pub type Span = (usize, usize);

/// A raw sentence pair with its ordinal match label and, when distant
/// labeling has run, keyword spans over the whitespace-tokenized sentences.
///
/// `keyword_spans_*` being `None` means the pair carries no keyword
/// annotation; `Some(vec![])` means it was annotated and no keyword was
/// found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub text_a: String,
    pub text_b: String,
    pub label: usize,
    #[serde(rename = "keywords_a", default, skip_serializing_if = "Option::is_none")]
    pub keyword_spans_a: Option<Vec<Span>>,
    #[serde(rename = "keywords_b", default, skip_serializing_if = "Option::is_none")]
    pub keyword_spans_b: Option<Vec<Span>>,
}

impl SentencePair {
    pub fn new(text_a: impl Into<String>, text_b: impl Into<String>, label: usize) -> Self {
        Self {
            text_a: text_a.into(),
            text_b: text_b.into(),
            label,
            keyword_spans_a: None,
            keyword_spans_b: None,
        }
    }

    /// Whether both sentences carry keyword annotations (possibly empty).
    pub fn is_annotated(&self) -> bool {
        self.keyword_spans_a.is_some() && self.keyword_spans_b.is_some()
    }

    /// Checks the label against the scheme and the spans against the
    /// tokenized sentences: sorted, non-overlapping, within bounds.
    pub fn validate(&self, scheme: &LabelScheme) -> Result<()> {
        scheme.validate_label(self.label)?;
        if let Some(spans) = &self.keyword_spans_a {
            validate_spans(spans, tokenize(&self.text_a).len(), "a")?;
        }
        if let Some(spans) = &self.keyword_spans_b {
            validate_spans(spans, tokenize(&self.text_b).len(), "b")?;
        }
        Ok(())
    }
}

fn validate_spans(spans: &[Span], num_tokens: usize, side: &str) -> Result<()> {
    let mut prev_end = 0usize;
    for &(start, end) in spans {
        if start >= end {
            return Err(Error::InvalidSpans(alloc::format!(
                "sentence {side}: empty span [{start}, {end})"
            )));
        }
        if start < prev_end {
            return Err(Error::InvalidSpans(alloc::format!(
                "sentence {side}: span [{start}, {end}) overlaps or is out of order"
            )));
        }
        if end > num_tokens {
            return Err(Error::InvalidSpans(alloc::format!(
                "sentence {side}: span [{start}, {end}) exceeds {num_tokens} tokens"
            )));
        }
        prev_end = end;
    }
    Ok(())
}

/// Lowercases, splits on Unicode whitespace, and detaches leading/trailing
/// punctuation into single-character tokens. Interior punctuation (as in
/// "don't" or "10-year") is kept attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && !chars[start].is_alphanumeric() {
            start += 1;
        }
        while end > start && !chars[end - 1].is_alphanumeric() {
            end -= 1;
        }
        for &c in &chars[..start] {
            tokens.push(c.to_string());
        }
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        for &c in &chars[end..] {
            tokens.push(c.to_string());
        }
    }
    tokens
}

/// Token-to-id map with five fixed reserved entries at ids 0-4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from the corpus. Tokens seen at least `min_freq`
    /// times are kept; ids are assigned in descending frequency with ties
    /// broken lexicographically, so two builds over the same corpus are
    /// identical.
    pub fn build(pairs: &[SentencePair], min_freq: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if min_freq < 1 {
            return Err(Error::InvalidConfig(String::from("min_freq must be >= 1")));
        }
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for pair in pairs {
            for token in tokenize(&pair.text_a).into_iter().chain(tokenize(&pair.text_b)) {
                *freq.entry(token).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(token, n)| *n >= min_freq && !RESERVED_TOKENS.contains(&token.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut vocab = Self::reserved_only();
        for (token, _) in kept {
            let id = vocab.id_to_token.len() as u32;
            vocab.token_to_id.insert(token.clone(), id);
            vocab.id_to_token.push(token);
        }
        Ok(vocab)
    }

    fn reserved_only() -> Self {
        let mut token_to_id = BTreeMap::new();
        let mut id_to_token = Vec::with_capacity(NUM_RESERVED);
        for (id, token) in RESERVED_TOKENS.iter().enumerate() {
            token_to_id.insert(token.to_string(), id as u32);
            id_to_token.push(token.to_string());
        }
        Self { token_to_id, id_to_token }
    }

    /// Reconstructs a vocabulary from `(token, id)` entries, e.g. a parsed
    /// vocabulary file. The reserved tokens must be present at ids 0-4 and
    /// the ids must be contiguous.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, u32)>) -> Result<Self> {
        let mut by_id: BTreeMap<u32, String> = BTreeMap::new();
        for (token, id) in entries {
            if by_id.insert(id, token).is_some() {
                return Err(Error::InvalidConfig(alloc::format!("duplicate vocab id {id}")));
            }
        }
        let mut id_to_token = Vec::with_capacity(by_id.len());
        for (expect, (id, token)) in by_id.into_iter().enumerate() {
            if id as usize != expect {
                return Err(Error::InvalidConfig(alloc::format!(
                    "vocab ids are not contiguous at {id}"
                )));
            }
            id_to_token.push(token);
        }
        if id_to_token.len() < NUM_RESERVED
            || RESERVED_TOKENS.iter().enumerate().any(|(i, t)| id_to_token[i] != *t)
        {
            return Err(Error::InvalidConfig(String::from(
                "vocab is missing the reserved tokens at ids 0-4",
            )));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(id, token)| (token.clone(), id as u32))
            .collect();
        Ok(Self { token_to_id, id_to_token })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Token id, falling back to `[UNK]` for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.token_to_id.iter().map(|(t, &id)| (t.as_str(), id))
    }

    /// FNV-1a fingerprint over the (token, id) entries, used to tie
    /// checkpoints to the vocabulary they were trained with.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (id, token) in self.id_to_token.iter().enumerate() {
            eat(token.as_bytes());
            eat(&(id as u32).to_le_bytes());
        }
        hash
    }
}

/// Per-position role of an encoded token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupTag {
    Keyword,
    Intent,
    Special,
    Pad,
}

/// A sentence pair encoded as one fixed-length id sequence
/// `[CLS] a_1..a_la [SEP] b_1..b_lb [SEP] [PAD]...` with per-position group
/// tags and an attention mask that is false exactly on padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<u32>,
    pub group_tags: Vec<GroupTag>,
    pub attn_mask: Vec<bool>,
    pub label: usize,
}

impl EncodedPair {
    /// Number of non-padding positions; padding is always a suffix.
    pub fn seq_len(&self) -> usize {
        self.attn_mask.iter().filter(|&&m| m).count()
    }
}

/// How many tokens of each sentence survive truncation to `budget` total.
/// When the pair overflows, each sentence keeps a proportional prefix and
/// both keep at least one token.
fn truncated_lengths(len_a: usize, len_b: usize, budget: usize) -> (usize, usize) {
    if len_a + len_b <= budget {
        return (len_a, len_b);
    }
    let mut keep_a = (budget * len_a) / (len_a + len_b);
    if len_a > 0 {
        keep_a = keep_a.max(1);
    }
    let mut keep_b = budget - keep_a;
    if len_b > 0 && keep_b == 0 {
        keep_b = 1;
        keep_a = budget - 1;
    }
    if keep_b > len_b {
        keep_a += keep_b - len_b;
        keep_b = len_b;
    }
    if keep_a > len_a {
        keep_b += keep_a - len_a;
        keep_a = len_a;
    }
    (keep_a, keep_b)
}

/// Encodes a pair into the concatenated form. Keyword spans, when present,
/// refer to pre-truncation token indices; in-span positions are tagged
/// `Keyword`, remaining sentence tokens `Intent`.
pub fn encode_pair(pair: &SentencePair, vocab: &Vocab, max_len: usize) -> Result<EncodedPair> {
    if max_len < 5 {
        return Err(Error::MaxLenTooSmall { max_len });
    }
    let tokens_a = tokenize(&pair.text_a);
    let tokens_b = tokenize(&pair.text_b);
    let (keep_a, keep_b) = truncated_lengths(tokens_a.len(), tokens_b.len(), max_len - 3);

    let mut ids = Vec::with_capacity(max_len);
    let mut tags = Vec::with_capacity(max_len);

    ids.push(CLS_ID);
    tags.push(GroupTag::Special);
    push_sentence(&tokens_a[..keep_a], pair.keyword_spans_a.as_deref(), vocab, &mut ids, &mut tags);
    ids.push(SEP_ID);
    tags.push(GroupTag::Special);
    push_sentence(&tokens_b[..keep_b], pair.keyword_spans_b.as_deref(), vocab, &mut ids, &mut tags);
    ids.push(SEP_ID);
    tags.push(GroupTag::Special);

    let mut attn_mask = alloc::vec![true; ids.len()];
    while ids.len() < max_len {
        ids.push(PAD_ID);
        tags.push(GroupTag::Pad);
        attn_mask.push(false);
    }
    Ok(EncodedPair { ids, group_tags: tags, attn_mask, label: pair.label })
}

fn push_sentence(
    tokens: &[String],
    spans: Option<&[Span]>,
    vocab: &Vocab,
    ids: &mut Vec<u32>,
    tags: &mut Vec<GroupTag>,
) {
    for (pos, token) in tokens.iter().enumerate() {
        ids.push(vocab.id(token));
        let in_span = spans
            .map(|spans| spans.iter().any(|&(s, e)| pos >= s && pos < e))
            .unwrap_or(false);
        tags.push(if in_span { GroupTag::Keyword } else { GroupTag::Intent });
    }
}
