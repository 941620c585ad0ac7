//! Synthetic sentence-pair generator with known keyword/intent structure.
//!
//! Every sentence is a question frame carrying one verb (the intent) and
//! one two-token keyword term drawn from a synthetic gazetteer. The gold
//! label of a pair is min(keyword degree, intent degree), so the combined
//! sub-problem distribution is the Bayes-optimal read of the task. Exact
//! keyword spans, the gazetteer, and a matching POS lexicon are emitted
//! alongside the data.
//!
//! Mismatch pairs are biased toward high surface overlap (same frame, same
//! verb, different keyword) and match pairs toward low overlap (paraphrase
//! frames, synonym verbs), which is what makes the task non-trivial for a
//! plain classifier.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::labeler::PosTag;

const NOUNS: [&str; 16] = [
    "reactor", "membrane", "turbine", "compiler", "glacier", "antenna", "enzyme", "pigment",
    "magnet", "satellite", "catalyst", "neuron", "lattice", "vaccine", "piston", "quasar",
];

const MODIFIERS: [&str; 8] =
    ["solar", "hybrid", "thermal", "quantum", "coastal", "digital", "organic", "arctic"];

/// Verb synonym sets; one set is one intent class. Consecutive pairs of
/// classes form a cluster (the partial-match neighborhood for K = 3).
const VERB_CLASSES: [[&str; 3]; 12] = [
    ["repair", "fix", "mend"],
    ["replace", "swap", "exchange"],
    ["clean", "wash", "scrub"],
    ["polish", "buff", "shine"],
    ["install", "mount", "attach"],
    ["remove", "detach", "strip"],
    ["inspect", "examine", "check"],
    ["calibrate", "tune", "adjust"],
    ["store", "keep", "stash"],
    ["transport", "move", "haul"],
    ["protect", "shield", "guard"],
    ["insure", "cover", "warrant"],
];

/// Question frames; `{v}` is the verb slot and `{kw}` the keyword slot.
const FRAMES: [&[&str]; 6] = [
    &["how", "do", "i", "{v}", "the", "{kw}"],
    &["what", "is", "the", "best", "way", "to", "{v}", "the", "{kw}"],
    &["can", "you", "{v}", "a", "{kw}", "safely"],
    &["tips", "for", "how", "to", "{v}", "a", "{kw}"],
    &["is", "it", "hard", "to", "{v}", "the", "{kw}"],
    &["should", "i", "{v}", "my", "{kw}", "this", "week"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// 2 for match/mismatch, 3 to add a partial-match degree.
    pub num_classes: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Target label distribution, one weight per class.
    pub label_mix: Vec<f64>,
    /// How many noun families / modifiers / verb classes / frames of the
    /// built-in pools to use.
    pub keyword_nouns: usize,
    pub keyword_modifiers: usize,
    pub intent_classes: usize,
    pub frames: usize,
    /// Probability that a mismatching intent reuses the exact frame and
    /// verb of the first sentence (maximal-overlap mismatch).
    pub hard_negative_rate: f64,
    /// Probability that a matching intent is forced to a different frame
    /// and synonym verb (minimal-overlap match).
    pub hard_positive_rate: f64,
}

impl SyntheticConfig {
    pub fn new(num_classes: usize, train: usize, dev: usize, test: usize, seed: u64) -> Self {
        Self {
            num_classes,
            train_size: train,
            dev_size: dev,
            test_size: test,
            seed,
            label_mix: alloc::vec![1.0 / num_classes as f64; num_classes],
            keyword_nouns: NOUNS.len(),
            keyword_modifiers: MODIFIERS.len(),
            intent_classes: VERB_CLASSES.len(),
            frames: FRAMES.len(),
            hard_negative_rate: 0.7,
            hard_positive_rate: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.num_classes == 2 || self.num_classes == 3) {
            return fail(alloc::format!("num_classes must be 2 or 3, got {}", self.num_classes));
        }
        if self.label_mix.len() != self.num_classes {
            return fail(String::from("label_mix length must equal num_classes"));
        }
        if self.label_mix.iter().any(|&w| w < 0.0) || self.label_mix.iter().sum::<f64>() <= 0.0 {
            return fail(String::from("label_mix weights must be non-negative and not all zero"));
        }
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return fail(String::from("split sizes must be >= 1"));
        }
        if self.keyword_nouns < 2 || self.keyword_nouns > NOUNS.len() {
            return fail(alloc::format!("keyword_nouns must be in 2..={}", NOUNS.len()));
        }
        if self.keyword_modifiers < 2 || self.keyword_modifiers > MODIFIERS.len() {
            return fail(alloc::format!("keyword_modifiers must be in 2..={}", MODIFIERS.len()));
        }
        let min_classes = if self.num_classes == 3 { 4 } else { 2 };
        if self.intent_classes < min_classes || self.intent_classes > VERB_CLASSES.len() {
            return fail(alloc::format!(
                "intent_classes must be in {min_classes}..={}",
                VERB_CLASSES.len()
            ));
        }
        if self.num_classes == 3 && self.intent_classes % 2 != 0 {
            return fail(String::from("three-class generation needs an even intent_classes"));
        }
        if self.frames < 2 || self.frames > FRAMES.len() {
            return fail(alloc::format!("frames must be in 2..={}", FRAMES.len()));
        }
        for rate in [self.hard_negative_rate, self.hard_positive_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return fail(String::from("hard-case rates must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    /// Every modifier-noun term the generator can draw from, sorted.
    pub gazetteer_terms: Vec<String>,
    /// Word-to-tag entries covering the generated vocabulary, sorted.
    pub pos_entries: Vec<(String, PosTag)>,
}

#[derive(Clone, Copy)]
struct Keyword {
    modifier: usize,
    noun: usize,
}

#[derive(Clone, Copy)]
struct Intent {
    class: usize,
    synonym: usize,
    frame: usize,
}

/// Generates disjoint train/dev/test splits with exact keyword spans, plus
/// the gazetteer and POS lexicon files' contents. Equal configurations
/// produce byte-identical outputs.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mix = WeightedIndex::new(&config.label_mix)
        .map_err(|e| Error::InvalidConfig(alloc::format!("bad label_mix: {e}")))?;

    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut sample_split = |rng: &mut ChaCha8Rng, size: usize| -> Result<Vec<SentencePair>> {
        let mut pairs = Vec::with_capacity(size);
        for _ in 0..size {
            let mut pair = sample_pair(config, &mix, rng);
            let mut attempts = 0;
            while !seen.insert((pair.text_a.clone(), pair.text_b.clone())) {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::InvalidConfig(String::from(
                        "pair space too small for the requested split sizes",
                    )));
                }
                pair = sample_pair(config, &mix, rng);
            }
            pairs.push(pair);
        }
        Ok(pairs)
    };
    let train = sample_split(&mut rng, config.train_size)?;
    let dev = sample_split(&mut rng, config.dev_size)?;
    let test = sample_split(&mut rng, config.test_size)?;

    let mut gazetteer_terms = Vec::new();
    for modifier in &MODIFIERS[..config.keyword_modifiers] {
        for noun in &NOUNS[..config.keyword_nouns] {
            gazetteer_terms.push(alloc::format!("{modifier} {noun}"));
        }
    }
    gazetteer_terms.sort();

    let mut pos_entries = Vec::new();
    for noun in &NOUNS[..config.keyword_nouns] {
        pos_entries.push((noun.to_string(), PosTag::Noun));
    }
    for modifier in &MODIFIERS[..config.keyword_modifiers] {
        pos_entries.push((modifier.to_string(), PosTag::Adj));
    }
    for class in &VERB_CLASSES[..config.intent_classes] {
        for verb in class {
            pos_entries.push((verb.to_string(), PosTag::Verb));
        }
    }
    let mut function_words: BTreeSet<&str> = BTreeSet::new();
    for frame in &FRAMES[..config.frames] {
        for token in frame.iter().filter(|t| !t.starts_with('{')) {
            function_words.insert(token);
        }
    }
    for word in function_words {
        pos_entries.push((word.to_string(), PosTag::Other));
    }
    pos_entries.sort_by(|a, b| a.0.cmp(&b.0));

    Ok(SyntheticData { train, dev, test, gazetteer_terms, pos_entries })
}

fn sample_pair(config: &SyntheticConfig, mix: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> SentencePair {
    let k = config.num_classes;
    let label = mix.sample(rng);

    // Pick the (keyword degree, intent degree) cell uniformly among those
    // with min == label.
    let mut cells = Vec::new();
    for kd in label..k {
        for id in label..k {
            if kd == label || id == label {
                cells.push((kd, id));
            }
        }
    }
    let (kd, id) = cells[rng.gen_range(0..cells.len())];

    let keyword_a = Keyword {
        modifier: rng.gen_range(0..config.keyword_modifiers),
        noun: rng.gen_range(0..config.keyword_nouns),
    };
    let keyword_b = sample_related_keyword(config, keyword_a, kd, rng);

    let intent_a = Intent {
        class: rng.gen_range(0..config.intent_classes),
        synonym: rng.gen_range(0..3),
        frame: rng.gen_range(0..config.frames),
    };
    let intent_b = sample_related_intent(config, intent_a, id, rng);

    let (text_a, span_a) = render(keyword_a, intent_a);
    let (text_b, span_b) = render(keyword_b, intent_b);
    let mut pair = SentencePair::new(text_a, text_b, label);
    pair.keyword_spans_a = Some(alloc::vec![span_a]);
    pair.keyword_spans_b = Some(alloc::vec![span_b]);
    pair
}

fn sample_related_keyword(
    config: &SyntheticConfig,
    anchor: Keyword,
    degree: usize,
    rng: &mut ChaCha8Rng,
) -> Keyword {
    let exact = config.num_classes - 1;
    if degree == exact {
        return anchor;
    }
    if degree > 0 {
        // Partial: same noun family, different modifier.
        return Keyword { modifier: other_index(anchor.modifier, config.keyword_modifiers, rng), noun: anchor.noun };
    }
    // Mismatch. In the binary scheme half the mismatches stay in the same
    // noun family to keep token-overlap confusers around; with three
    // classes those are the partial degree, so mismatches change the noun.
    if config.num_classes == 2 && rng.gen_bool(0.5) {
        Keyword { modifier: other_index(anchor.modifier, config.keyword_modifiers, rng), noun: anchor.noun }
    } else {
        Keyword {
            modifier: rng.gen_range(0..config.keyword_modifiers),
            noun: other_index(anchor.noun, config.keyword_nouns, rng),
        }
    }
}

fn sample_related_intent(
    config: &SyntheticConfig,
    anchor: Intent,
    degree: usize,
    rng: &mut ChaCha8Rng,
) -> Intent {
    let exact = config.num_classes - 1;
    if degree == exact {
        // Same meaning. A hard positive paraphrases: different frame and a
        // different synonym verb.
        if rng.gen_bool(config.hard_positive_rate) {
            return Intent {
                class: anchor.class,
                synonym: other_index(anchor.synonym, 3, rng),
                frame: other_index(anchor.frame, config.frames, rng),
            };
        }
        return Intent {
            class: anchor.class,
            synonym: rng.gen_range(0..3),
            frame: rng.gen_range(0..config.frames),
        };
    }
    if degree > 0 {
        // Partial: the other class of the same cluster.
        return Intent {
            class: anchor.class ^ 1,
            synonym: rng.gen_range(0..3),
            frame: rng.gen_range(0..config.frames),
        };
    }
    // Mismatch: a class from a different cluster. A hard negative reuses
    // the anchor's frame (and verb slot position), maximizing overlap.
    let cluster = anchor.class / 2;
    let num_clusters = config.intent_classes / 2;
    let class = if config.num_classes == 3 {
        let other_cluster = other_index(cluster, num_clusters, rng);
        other_cluster * 2 + rng.gen_range(0..2)
    } else {
        other_index(anchor.class, config.intent_classes, rng)
    };
    if rng.gen_bool(config.hard_negative_rate) {
        Intent { class, synonym: anchor.synonym, frame: anchor.frame }
    } else {
        Intent { class, synonym: rng.gen_range(0..3), frame: rng.gen_range(0..config.frames) }
    }
}

fn other_index(current: usize, size: usize, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(size >= 2);
    let offset = rng.gen_range(1..size);
    (current + offset) % size
}

fn render(keyword: Keyword, intent: Intent) -> (String, (usize, usize)) {
    let verb = VERB_CLASSES[intent.class][intent.synonym];
    let mut tokens: Vec<&str> = Vec::new();
    let mut span = (0, 0);
    for &slot in FRAMES[intent.frame] {
        match slot {
            "{v}" => tokens.push(verb),
            "{kw}" => {
                span = (tokens.len(), tokens.len() + 2);
                tokens.push(MODIFIERS[keyword.modifier]);
                tokens.push(NOUNS[keyword.noun]);
            }
            word => tokens.push(word),
        }
    }
    (tokens.join(" "), span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::labeler::{label_keywords, Gazetteer, PosLexicon};
    use crate::scheme::LabelScheme;

    fn small_config(k: usize) -> SyntheticConfig {
        SyntheticConfig::new(k, 60, 20, 20, 42)
    }

    #[test]
    fn equal_seeds_give_identical_datasets() {
        let a = generate(&small_config(2)).unwrap();
        let b = generate(&small_config(2)).unwrap();
        assert_eq!(a, b);
        let mut other = small_config(2);
        other.seed = 43;
        assert_ne!(generate(&other).unwrap().train, a.train);
    }

    #[test]
    fn splits_are_disjoint() {
        let data = generate(&small_config(3)).unwrap();
        let mut seen = BTreeSet::new();
        for pair in data.train.iter().chain(&data.dev).chain(&data.test) {
            assert!(seen.insert((pair.text_a.clone(), pair.text_b.clone())));
        }
    }

    #[test]
    fn pairs_validate_and_exact_matches_share_keywords() {
        for k in [2, 3] {
            let data = generate(&small_config(k)).unwrap();
            let scheme = LabelScheme::with_classes(k).unwrap();
            for pair in data.train.iter().chain(&data.dev).chain(&data.test) {
                pair.validate(&scheme).unwrap();
                let spans_a = pair.keyword_spans_a.as_ref().unwrap();
                let spans_b = pair.keyword_spans_b.as_ref().unwrap();
                assert_eq!(spans_a.len(), 1);
                assert_eq!(spans_b.len(), 1);
                let kw = |text: &str, span: (usize, usize)| {
                    tokenize(text)[span.0..span.1].join(" ")
                };
                let kw_a = kw(&pair.text_a, spans_a[0]);
                let kw_b = kw(&pair.text_b, spans_b[0]);
                if pair.label == k - 1 {
                    assert_eq!(kw_a, kw_b, "exact match must share the keyword");
                }
                if pair.label == 0 && kw_a == kw_b {
                    // Same keyword but mismatch: the intent must differ, so
                    // the sentences cannot be identical.
                    assert_ne!(pair.text_a, pair.text_b);
                }
            }
        }
    }

    #[test]
    fn label_distribution_tracks_the_configured_mix() {
        let mut config = SyntheticConfig::new(3, 1, 1, 1000, 7);
        config.label_mix = alloc::vec![0.5, 0.3, 0.2];
        let data = generate(&config).unwrap();
        let mut counts = [0usize; 3];
        for pair in &data.test {
            counts[pair.label] += 1;
        }
        for (count, &want) in counts.iter().zip(&config.label_mix) {
            let observed = *count as f64 / 1000.0;
            assert!(
                (observed - want).abs() <= 0.05,
                "label frequency {observed} strays from mix {want}"
            );
        }
    }

    #[test]
    fn distant_labeler_recovers_generated_spans() {
        let data = generate(&small_config(2)).unwrap();
        let gaz = Gazetteer::new(data.gazetteer_terms.iter().map(String::as_str)).unwrap();
        let lexicon: PosLexicon =
            data.pos_entries.iter().map(|(w, t)| (w.clone(), *t)).collect();
        for pair in data.train.iter().take(30) {
            let tokens = tokenize(&pair.text_a);
            let tags = label_keywords(&tokens, &gaz, &lexicon);
            assert_eq!(&tags.runs(), pair.keyword_spans_a.as_ref().unwrap());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SyntheticConfig::new(4, 10, 10, 10, 0)).is_err());
        let mut bad_mix = small_config(2);
        bad_mix.label_mix = alloc::vec![1.0];
        assert!(generate(&bad_mix).is_err());
        let mut odd_classes = small_config(3);
        odd_classes.intent_classes = 5;
        assert!(generate(&odd_classes).is_err());
    }
}
