//! Desk-scale synthetic sentiment task, victim model, and word-level
//! attack.
//!
//! Texts are bags of neutral filler plus a handful of polarity words; the
//! label is the polarity majority. The greedy attack substitutes one word
//! at a time with dictionary synonyms the victim never saw in training,
//! stopping as soon as the prediction flips — which yields genuine
//! benign/adversarial pairs with known perturbed positions for the
//! detection pipeline to work on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::corpus::CorpusRecord;
use crate::encoder::{
    train_classifier, ClassifierTrainConfig, Encoder, EncoderError, TransformerClassifier,
    TransformerConfig,
};
use crate::num::Float;
use crate::Label;

/// Polarity words the victim is trained on, with synonyms reserved for
/// the attacker (never present in training text).
const POSITIVE: &[(&str, &[&str])] = &[
    ("good", &["decent", "agreeable", "pleasant"]),
    ("great", &["grand", "majestic", "glorious"]),
    ("excellent", &["exceptional", "exemplary", "peerless"]),
    ("wonderful", &["marvelous", "wondrous", "magical"]),
    ("amazing", &["astonishing", "astounding", "staggering"]),
    ("brilliant", &["luminous", "dazzling", "radiant"]),
    ("superb", &["premium", "sterling", "topnotch"]),
    ("lovely", &["charming", "endearing", "adorable"]),
    ("enjoyable", &["satisfying", "gratifying", "pleasurable"]),
    ("fantastic", &["fabulous", "sensational", "spectacular"]),
    ("beautiful", &["gorgeous", "exquisite", "elegant"]),
    ("delightful", &["cheerful", "heartwarming", "uplifting"]),
    ("impressive", &["striking", "commanding", "formidable"]),
    ("perfect", &["flawless", "immaculate", "pristine"]),
    ("strong", &["sturdy", "robust", "vigorous"]),
    ("smart", &["clever", "astute", "shrewd"]),
];

const NEGATIVE: &[(&str, &[&str])] = &[
    ("bad", &["poor", "subpar", "shoddy"]),
    ("awful", &["dreadful", "horrendous", "ghastly"]),
    ("terrible", &["atrocious", "abysmal", "appalling"]),
    ("boring", &["tedious", "monotonous", "dreary"]),
    ("horrible", &["hideous", "gruesome", "grim"]),
    ("ugly", &["unsightly", "grotesque", "repulsive"]),
    ("weak", &["feeble", "flimsy", "frail"]),
    ("stupid", &["foolish", "senseless", "idiotic"]),
    ("annoying", &["irritating", "grating", "maddening"]),
    ("disappointing", &["underwhelming", "lackluster", "dismal"]),
    ("messy", &["sloppy", "chaotic", "disorderly"]),
    ("painful", &["agonizing", "excruciating", "harrowing"]),
    ("slow", &["sluggish", "plodding", "lethargic"]),
    ("cheap", &["tacky", "chintzy", "flimsier"]),
    ("broken", &["faulty", "defective", "damaged"]),
    ("confusing", &["bewildering", "perplexing", "muddled"]),
];

const FILLERS: &[&str] = &[
    "the", "a", "this", "that", "movie", "film", "story", "plot", "scene", "actor", "cast",
    "screen", "night", "today", "again", "really", "quite", "rather", "somehow", "mostly",
    "about", "through", "during", "while", "after", "before", "with", "without", "between",
    "people", "moment", "minute", "detail", "camera", "music", "sound", "light", "color",
    "place", "thing", "part", "kind", "sort", "style", "piece", "work", "time", "way",
];

/// Word pools and the attacker's synonym dictionary.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage;

impl SyntheticLanguage {
    pub fn positive_words(&self) -> impl Iterator<Item = &'static str> {
        POSITIVE.iter().map(|(w, _)| *w)
    }

    pub fn negative_words(&self) -> impl Iterator<Item = &'static str> {
        NEGATIVE.iter().map(|(w, _)| *w)
    }

    /// Attacker dictionary: substitutes for one surface word, if any.
    pub fn synonyms(&self, word: &str) -> &'static [&'static str] {
        for (w, syns) in POSITIVE.iter().chain(NEGATIVE.iter()) {
            if *w == word {
                return syns;
            }
        }
        &[]
    }
}

/// Controls for synthetic text sampling.
#[derive(Debug, Clone, Copy)]
pub struct TextShape {
    /// Total words, inclusive range.
    pub min_words: usize,
    pub max_words: usize,
    /// Polarity-word majority margin, inclusive range.
    pub min_margin: usize,
    pub max_margin: usize,
    /// Polarity words on the minority side, inclusive range.
    pub min_minority: usize,
    pub max_minority: usize,
}

impl Default for TextShape {
    fn default() -> Self {
        // Long enough that a K=50 sweep never saturates at the text length.
        TextShape {
            min_words: 52,
            max_words: 64,
            min_margin: 2,
            max_margin: 3,
            min_minority: 2,
            max_minority: 3,
        }
    }
}

/// Sentiment class indices for the victim task.
pub const NEGATIVE_CLASS: usize = 0;
pub const POSITIVE_CLASS: usize = 1;

/// Samples one text plus its sentiment class (the polarity majority).
pub fn sample_text(rng: &mut ChaCha20Rng, shape: &TextShape) -> (String, usize) {
    let lang = SyntheticLanguage;
    let total = rng.gen_range(shape.min_words..=shape.max_words);
    let margin = rng.gen_range(shape.min_margin..=shape.max_margin);
    let minority = rng.gen_range(shape.min_minority..=shape.max_minority);
    let majority = minority + margin;
    let positive_label = rng.gen_bool(0.5);

    let (n_pos, n_neg) = if positive_label {
        (majority, minority)
    } else {
        (minority, majority)
    };
    let mut words: Vec<&str> = Vec::with_capacity(total);
    let pos_pool: Vec<&str> = lang.positive_words().collect();
    let neg_pool: Vec<&str> = lang.negative_words().collect();
    for _ in 0..n_pos {
        words.push(pos_pool[rng.gen_range(0..pos_pool.len())]);
    }
    for _ in 0..n_neg {
        words.push(neg_pool[rng.gen_range(0..neg_pool.len())]);
    }
    while words.len() < total {
        words.push(FILLERS[rng.gen_range(0..FILLERS.len())]);
    }
    words.shuffle(rng);
    let class = if positive_label {
        POSITIVE_CLASS
    } else {
        NEGATIVE_CLASS
    };
    (words.join(" "), class)
}

/// Victim architecture used by the desk-scale experiments.
pub fn victim_config() -> TransformerConfig {
    TransformerConfig {
        vocab_size: 4096,
        dim: 32,
        layers: 2,
        heads: 2,
        ff_dim: 128,
        max_length: 160,
        classes: 2,
        chunk_len: 4,
    }
}

/// Trains a small sentiment classifier on sampled texts. Returns the
/// model and its final training accuracy.
pub fn train_victim<F: Float>(
    n_texts: usize,
    epochs: usize,
    seed: u64,
) -> Result<(TransformerClassifier<F>, f64), EncoderError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shape = TextShape {
        // A mix of margins during training stabilizes the decision rule.
        min_margin: 1,
        max_margin: 4,
        ..TextShape::default()
    };
    let data: Vec<(String, usize)> = (0..n_texts)
        .map(|_| sample_text(&mut rng, &shape))
        .collect();
    let mut model = TransformerClassifier::new(victim_config(), seed ^ 0x5eed, "victim");
    let accuracy = train_classifier(
        &mut model,
        &data,
        ClassifierTrainConfig {
            epochs,
            seed: seed ^ 0x7131,
            ..ClassifierTrainConfig::default()
        },
    )?;
    Ok((model, accuracy))
}

/// A successful attack on one text.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial_text: String,
    pub perturbed_indices: Vec<usize>,
    pub substitutions: usize,
}

/// Greedy single-word synonym substitution: at each step, try every
/// dictionary substitute at every not-yet-substituted position, keep the
/// one that lowers the originally predicted class's probability most,
/// and stop as soon as the prediction flips.
pub fn greedy_synonym_attack<F: Float>(
    victim: &TransformerClassifier<F>,
    text: &str,
    max_substitutions: usize,
) -> Result<Option<AttackOutcome>, EncoderError> {
    let lang = SyntheticLanguage;
    let tokenized = victim.tokenize(text)?;
    let original = victim.encode(&tokenized)?;
    let target = original.predicted_class;

    let mut words: Vec<String> = tokenized.words.clone();
    let mut substituted: Vec<usize> = Vec::new();

    for _step in 0..max_substitutions {
        let candidates: Vec<(usize, &'static str)> = words
            .iter()
            .enumerate()
            .filter(|(i, _)| !substituted.contains(i))
            .flat_map(|(i, w)| lang.synonyms(w).iter().map(move |&s| (i, s)))
            .collect();
        if candidates.is_empty() {
            return Ok(None);
        }
        let scored: Vec<(usize, &'static str, f64)> = candidates
            .par_iter()
            .map(|&(i, s)| {
                let mut attempt = words.clone();
                attempt[i] = s.to_string();
                let candidate_text = attempt.join(" ");
                let prob = victim
                    .tokenize(&candidate_text)
                    .and_then(|t| victim.encode(&t))
                    .map(|out| class_probability(&out.logits, target))
                    .unwrap_or(f64::INFINITY);
                (i, s, prob)
            })
            .collect();
        let (best_i, best_s, best_prob) = scored
            .into_iter()
            .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        if !best_prob.is_finite() {
            return Ok(None);
        }
        words[best_i] = best_s.to_string();
        substituted.push(best_i);

        if best_prob < 0.5 {
            substituted.sort_unstable();
            return Ok(Some(AttackOutcome {
                adversarial_text: words.join(" "),
                perturbed_indices: substituted,
                substitutions: _step + 1,
            }));
        }
    }
    Ok(None)
}

fn class_probability<F: Float>(logits: &ndarray::Array1<F>, class: usize) -> f64 {
    let vals: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    exps[class] / exps.iter().sum::<f64>()
}

/// Statistics from corpus construction.
#[derive(Debug, Clone, Serialize)]
pub struct AttackStats {
    pub attempted: usize,
    pub skipped_misclassified: usize,
    pub flipped: usize,
    pub mean_substitutions: f64,
}

use serde::Serialize;

/// Builds a paired benign/adversarial corpus by attacking sampled texts
/// the victim classifies correctly. Stops after `n_pairs` successes.
pub fn build_attack_corpus<F: Float>(
    victim: &TransformerClassifier<F>,
    n_pairs: usize,
    seed: u64,
    max_substitutions: usize,
) -> Result<(Vec<CorpusRecord>, AttackStats), EncoderError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shape = TextShape::default();
    let mut records = Vec::with_capacity(2 * n_pairs);
    let mut stats = AttackStats {
        attempted: 0,
        skipped_misclassified: 0,
        flipped: 0,
        mean_substitutions: 0.0,
    };
    let max_attempts = 20 * n_pairs;

    while stats.flipped < n_pairs && stats.attempted < max_attempts {
        stats.attempted += 1;
        let (text, class) = sample_text(&mut rng, &shape);
        let tokenized = victim.tokenize(&text)?;
        let out = victim.encode(&tokenized)?;
        if out.predicted_class != class {
            stats.skipped_misclassified += 1;
            continue;
        }
        let Some(outcome) = greedy_synonym_attack(victim, &text, max_substitutions)? else {
            continue;
        };
        let pair = stats.flipped;
        stats.flipped += 1;
        stats.mean_substitutions += outcome.substitutions as f64;
        records.push(CorpusRecord {
            id: format!("b{pair:04}"),
            text,
            label: Label::Benign,
            pair_id: Some(format!("p{pair:04}")),
            perturbed_indices: None,
        });
        records.push(CorpusRecord {
            id: format!("a{pair:04}"),
            text: outcome.adversarial_text,
            label: Label::Adversarial,
            pair_id: Some(format!("p{pair:04}")),
            perturbed_indices: Some(outcome.perturbed_indices),
        });
    }
    if stats.flipped > 0 {
        stats.mean_substitutions /= stats.flipped as f64;
    }
    Ok((records, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_texts_have_the_requested_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let shape = TextShape::default();
        for _ in 0..50 {
            let (text, _) = sample_text(&mut rng, &shape);
            let n = text.split_whitespace().count();
            assert!((shape.min_words..=shape.max_words).contains(&n));
        }
    }

    #[test]
    fn sampled_labels_match_the_polarity_majority() {
        let lang = SyntheticLanguage;
        let pos: std::collections::BTreeSet<&str> = lang.positive_words().collect();
        let neg: std::collections::BTreeSet<&str> = lang.negative_words().collect();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (text, class) = sample_text(&mut rng, &TextShape::default());
            let mut score = 0i64;
            for w in text.split_whitespace() {
                if pos.contains(w) {
                    score += 1;
                } else if neg.contains(w) {
                    score -= 1;
                }
            }
            let expected = if score > 0 { POSITIVE_CLASS } else { NEGATIVE_CLASS };
            assert_eq!(class, expected);
        }
    }

    #[test]
    fn synonyms_never_appear_in_training_pools() {
        let lang = SyntheticLanguage;
        let trained: std::collections::BTreeSet<&str> = lang
            .positive_words()
            .chain(lang.negative_words())
            .chain(FILLERS.iter().copied())
            .collect();
        for (_, syns) in POSITIVE.iter().chain(NEGATIVE.iter()) {
            for s in *syns {
                assert!(!trained.contains(s), "{s} leaks into training vocabulary");
            }
        }
    }
}
