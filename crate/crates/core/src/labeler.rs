//! Distant supervision for keyword labels: gazetteer matching with a
//! part-of-speech filter, keyword BLEU statistics, and the masked
//! keyword-only / intent-only views of an encoded pair.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
// In std builds the inherent f64 methods shadow this trait.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EncodedPair, GroupTag, SentencePair, Span, MASK_ID, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::scheme::LabelScheme;

/// Flat dictionary of known multi-token terms, the knowledge-base stand-in
/// that drives distant keyword labeling. Terms are stored lowercased and
/// space-joined.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    terms: BTreeSet<String>,
    max_term_len: usize,
}

impl Gazetteer {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        let mut max_term_len = 0;
        for term in terms {
            let tokens = tokenize(term.as_ref());
            if tokens.is_empty() {
                continue;
            }
            if tokens.iter().any(|t| RESERVED_TOKENS.contains(&t.as_str())) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "gazetteer term {:?} contains a reserved token",
                    term.as_ref()
                )));
            }
            max_term_len = max_term_len.max(tokens.len());
            set.insert(tokens.join(" "));
        }
        Ok(Self { terms: set, max_term_len })
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn max_term_len(&self) -> usize {
        self.max_term_len
    }

    pub fn contains(&self, tokens: &[String]) -> bool {
        self.terms.contains(&tokens.join(" "))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}

/// Coarse part-of-speech classes used to filter keyword candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Other,
}

impl PosTag {
    /// Content-word classes eligible to form keywords.
    pub fn is_keyword_class(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Verb | PosTag::Adj)
    }
}

/// Word-to-tag lookup, total via an `Other` default for unknown words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosLexicon {
    map: BTreeMap<String, PosTag>,
}

impl PosLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, tag: PosTag) {
        self.map.insert(word.into().to_lowercase(), tag);
    }

    pub fn tag(&self, word: &str) -> PosTag {
        self.map.get(word).copied().unwrap_or(PosTag::Other)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, PosTag)> {
        self.map.iter().map(|(w, &t)| (w.as_str(), t))
    }
}

impl FromIterator<(String, PosTag)> for PosLexicon {
    fn from_iter<I: IntoIterator<Item = (String, PosTag)>>(iter: I) -> Self {
        let mut lex = Self::new();
        for (word, tag) in iter {
            lex.insert(word, tag);
        }
        lex
    }
}

/// Binary keyword/intent tags for one sentence: `true` marks a token inside
/// a keyword (I), `false` everything else (O).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoTags {
    tags: Vec<bool>,
}

impl IoTags {
    pub fn from_spans(num_tokens: usize, spans: &[Span]) -> Self {
        let mut tags = alloc::vec![false; num_tokens];
        for &(start, end) in spans {
            for tag in tags.iter_mut().take(end.min(num_tokens)).skip(start) {
                *tag = true;
            }
        }
        Self { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn is_keyword(&self, pos: usize) -> bool {
        self.tags[pos]
    }

    /// Maximal contiguous I-runs as half-open spans.
    pub fn runs(&self) -> Vec<Span> {
        let mut runs = Vec::new();
        let mut start = None;
        for (pos, &inside) in self.tags.iter().enumerate() {
            match (inside, start) {
                (true, None) => start = Some(pos),
                (false, Some(s)) => {
                    runs.push((s, pos));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.tags.len()));
        }
        runs
    }

    /// "IOIO..." rendering, handy in golden-file comparisons.
    pub fn as_io_string(&self) -> String {
        self.tags.iter().map(|&i| if i { 'I' } else { 'O' }).collect()
    }
}

/// Matches gazetteer terms greedily, longest first, left to right. A span
/// only qualifies when every token in it is tagged noun, verb, or adjective.
/// Returns the matched spans; spans never overlap.
pub fn keyword_spans(tokens: &[String], gaz: &Gazetteer, pos: &PosLexicon) -> Vec<Span> {
    let mut spans = Vec::new();
    if gaz.is_empty() {
        return spans;
    }
    let eligible: Vec<bool> =
        tokens.iter().map(|t| pos.tag(t).is_keyword_class()).collect();
    let mut i = 0;
    while i < tokens.len() {
        if !eligible[i] {
            i += 1;
            continue;
        }
        let longest = gaz.max_term_len().min(tokens.len() - i);
        let mut matched = 0;
        for len in (1..=longest).rev() {
            if !eligible[i..i + len].iter().all(|&e| e) {
                continue;
            }
            if gaz.contains(&tokens[i..i + len]) {
                matched = len;
                break;
            }
        }
        if matched > 0 {
            spans.push((i, i + matched));
            i += matched;
        } else {
            i += 1;
        }
    }
    spans
}

/// IO tags for one sentence under the gazetteer and POS filter. An empty
/// gazetteer labels everything O.
pub fn label_keywords(tokens: &[String], gaz: &Gazetteer, pos: &PosLexicon) -> IoTags {
    IoTags::from_spans(tokens.len(), &keyword_spans(tokens, gaz, pos))
}

/// BLEU over keyword token sequences, with `b` fixed as the reference.
///
/// Uses n-grams up to 4 over the orders the candidate can realize, add-one
/// smoothing on orders >= 2, and the standard brevity penalty. Keywords
/// average only a couple of tokens, so unsmoothed BLEU-4 would be
/// degenerate. Conventions for empty inputs: both empty -> 1.0, exactly one
/// empty -> 0.0.
pub fn keyword_bleu(keywords_a: &[String], keywords_b: &[String]) -> f64 {
    let (candidate, reference) = (keywords_a, keywords_b);
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut log_precision_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=4usize.min(candidate.len()) {
        let cand_counts = ngram_counts(candidate, n);
        let ref_counts = ngram_counts(reference, n);
        let total: usize = cand_counts.values().sum();
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_precision_sum += precision.ln();
        orders += 1;
    }
    let geo_mean = (log_precision_sum / orders as f64).exp();
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    brevity * geo_mean
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level keyword statistics over a distantly labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordStats {
    /// Contiguous keyword runs per pair, counting both sentences.
    pub avg_keywords_per_pair: f64,
    /// Mean run length in tokens; 0.0 when no keywords were found.
    pub avg_tokens_per_keyword: f64,
    /// Mean keyword BLEU over exact-match pairs; absent when there are none.
    pub bleu_match: Option<f64>,
    /// Mean keyword BLEU over mismatch pairs; absent when there are none.
    pub bleu_mismatch: Option<f64>,
}

/// Computes [`KeywordStats`]; every pair must carry keyword annotations.
pub fn corpus_stats(pairs: &[SentencePair], scheme: &LabelScheme) -> Result<KeywordStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut run_count = 0usize;
    let mut run_token_count = 0usize;
    let mut match_bleus = Vec::new();
    let mut mismatch_bleus = Vec::new();

    for (idx, pair) in pairs.iter().enumerate() {
        let (spans_a, spans_b) = match (&pair.keyword_spans_a, &pair.keyword_spans_b) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::MissingKeywordTags(alloc::format!(
                    "pair {idx} has no keyword annotations"
                )))
            }
        };
        let tokens_a = tokenize(&pair.text_a);
        let tokens_b = tokenize(&pair.text_b);
        for (tokens, spans) in [(&tokens_a, spans_a), (&tokens_b, spans_b)] {
            let runs = IoTags::from_spans(tokens.len(), spans).runs();
            run_count += runs.len();
            run_token_count += runs.iter().map(|(s, e)| e - s).sum::<usize>();
        }
        let kw_a = span_tokens(&tokens_a, spans_a);
        let kw_b = span_tokens(&tokens_b, spans_b);
        if pair.label == scheme.exact_match() {
            match_bleus.push(keyword_bleu(&kw_a, &kw_b));
        } else if pair.label == 0 {
            mismatch_bleus.push(keyword_bleu(&kw_a, &kw_b));
        }
    }

    let mean = |values: &[f64]| {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    Ok(KeywordStats {
        avg_keywords_per_pair: run_count as f64 / pairs.len() as f64,
        avg_tokens_per_keyword: if run_count == 0 {
            0.0
        } else {
            run_token_count as f64 / run_count as f64
        },
        bleu_match: mean(&match_bleus),
        bleu_mismatch: mean(&mismatch_bleus),
    })
}

fn span_tokens(tokens: &[String], spans: &[Span]) -> Vec<String> {
    spans
        .iter()
        .flat_map(|&(s, e)| tokens[s..e.min(tokens.len())].iter().cloned())
        .collect()
}

/// Which token group survives sub-problem masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeepGroup {
    Keyword,
    Intent,
}

/// Builds the masked sub-problem view of an encoded pair: tokens of the
/// complementary group are replaced by `[MASK]`, while special and padding
/// positions, group tags, attention mask, and label stay untouched.
pub fn mask_subproblem(enc: &EncodedPair, keep: KeepGroup) -> EncodedPair {
    let masked_tag = match keep {
        KeepGroup::Keyword => GroupTag::Intent,
        KeepGroup::Intent => GroupTag::Keyword,
    };
    let mut out = enc.clone();
    for (id, &tag) in out.ids.iter_mut().zip(&out.group_tags) {
        if tag == masked_tag {
            *id = MASK_ID;
        }
    }
    out
}
