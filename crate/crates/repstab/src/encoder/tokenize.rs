//! Word/subtoken alignment.
//!
//! Words are whitespace-split surface tokens with punctuation left
//! attached. Subtokens come from a deterministic chunk-hash scheme: a word
//! is cut into character chunks of fixed width and each chunk is hashed
//! into the vocabulary, so the pipeline needs no external vocabulary file
//! and every run tokenizes identically.

use std::ops::Range;

use super::EncoderError;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const MASK_ID: usize = 3;
/// First id available to hashed chunks.
const FIRST_HASH_ID: usize = 4;

/// Surface form that maps straight to the mask token.
pub const MASK_SURFACE: &str = "[MASK]";

/// One tokenized input: surface words, subtoken ids, and the alignment
/// between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    /// Whitespace-split surface words, in order.
    pub words: Vec<String>,
    /// Subtoken ids including special tokens.
    pub subtoken_ids: Vec<usize>,
    /// For each word, the contiguous subtoken positions it occupies.
    pub word_spans: Vec<Range<usize>>,
    /// True at special-token positions ([CLS]/[SEP]/pad).
    pub special_mask: Vec<bool>,
    pub mask_token_id: usize,
}

impl TokenizedText {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_subtokens(&self) -> usize {
        self.subtoken_ids.len()
    }

    /// Positions where `special_mask` is false, in order.
    pub fn non_special_positions(&self) -> Vec<usize> {
        self.special_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (!s).then_some(i))
            .collect()
    }

    /// Subtoken ids and special mask with word `word_index`'s span
    /// replaced by a single mask token. The sequence shortens by
    /// `|span| - 1`.
    pub fn masked_sequence(&self, word_index: usize) -> Result<(Vec<usize>, Vec<bool>), EncoderError> {
        let span = self
            .word_spans
            .get(word_index)
            .ok_or(EncoderError::IndexOutOfRange {
                index: word_index,
                len: self.words.len(),
            })?
            .clone();
        let mut ids = Vec::with_capacity(self.subtoken_ids.len() - span.len() + 1);
        let mut specials = Vec::with_capacity(ids.capacity());
        ids.extend_from_slice(&self.subtoken_ids[..span.start]);
        specials.extend_from_slice(&self.special_mask[..span.start]);
        ids.push(self.mask_token_id);
        specials.push(false);
        ids.extend_from_slice(&self.subtoken_ids[span.end..]);
        specials.extend_from_slice(&self.special_mask[span.end..]);
        Ok((ids, specials))
    }

    /// Checks the alignment invariants: spans are non-empty, contiguous,
    /// and partition the non-special region exactly.
    pub fn validate(&self) -> Result<(), String> {
        if self.words.is_empty() {
            return Err("no words".into());
        }
        if self.words.len() != self.word_spans.len() {
            return Err("word/span count mismatch".into());
        }
        if self.subtoken_ids.len() != self.special_mask.len() {
            return Err("id/special mask length mismatch".into());
        }
        let mut covered = Vec::new();
        for (w, span) in self.word_spans.iter().enumerate() {
            if span.is_empty() {
                return Err(format!("word {w} has an empty span"));
            }
            covered.extend(span.clone());
        }
        let non_special = self.non_special_positions();
        if covered != non_special {
            return Err("spans do not partition the non-special region".into());
        }
        Ok(())
    }
}

/// Deterministic chunk-hash subword tokenizer.
#[derive(Debug, Clone)]
pub struct ChunkTokenizer {
    vocab_size: usize,
    chunk_len: usize,
    max_length: usize,
}

impl ChunkTokenizer {
    pub fn new(vocab_size: usize, chunk_len: usize, max_length: usize) -> Self {
        assert!(vocab_size > FIRST_HASH_ID, "vocabulary too small");
        assert!(chunk_len >= 1);
        assert!(max_length >= 3, "need room for [CLS], one subtoken, [SEP]");
        ChunkTokenizer {
            vocab_size,
            chunk_len,
            max_length,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    /// Subtoken ids for one word.
    pub fn word_ids(&self, word: &str) -> Vec<usize> {
        if word == MASK_SURFACE {
            return vec![MASK_ID];
        }
        let chars: Vec<char> = word.chars().collect();
        chars
            .chunks(self.chunk_len)
            .map(|chunk| {
                let s: String = chunk.iter().collect();
                let bucket = fnv1a(s.as_bytes()) as usize % (self.vocab_size - FIRST_HASH_ID);
                FIRST_HASH_ID + bucket
            })
            .collect()
    }

    /// Tokenizes `raw_text`, truncating by whole trailing words so the
    /// spans always partition the kept sequence.
    pub fn tokenize(&self, raw_text: &str) -> Result<TokenizedText, EncoderError> {
        let surface: Vec<&str> = raw_text.split_whitespace().collect();
        if surface.is_empty() {
            return Err(EncoderError::EmptyText);
        }

        let mut words = Vec::new();
        let mut ids = vec![CLS_ID];
        let mut specials = vec![true];
        let mut spans = Vec::new();
        let budget = self.max_length - 1; // reserve [SEP]

        for word in surface {
            let word_ids = self.word_ids(word);
            if word_ids.is_empty() {
                return Err(EncoderError::AlignmentFailure {
                    word: word.to_string(),
                });
            }
            if ids.len() + word_ids.len() > budget {
                break;
            }
            let start = ids.len();
            ids.extend_from_slice(&word_ids);
            specials.extend(std::iter::repeat(false).take(word_ids.len()));
            spans.push(start..ids.len());
            words.push(word.to_string());
        }

        if words.is_empty() {
            // Even the first word does not fit the length budget.
            return Err(EncoderError::EmptyText);
        }
        ids.push(SEP_ID);
        specials.push(true);

        let text = TokenizedText {
            words,
            subtoken_ids: ids,
            word_spans: spans,
            special_mask: specials,
            mask_token_id: MASK_ID,
        };
        debug_assert!(text.validate().is_ok());
        Ok(text)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> ChunkTokenizer {
        ChunkTokenizer::new(256, 4, 64)
    }

    #[test]
    fn spans_partition_the_non_special_region() {
        let text = tok().tokenize("The film was awful").unwrap();
        assert_eq!(text.n_words(), 4);
        assert!(text.word_spans.iter().all(|s| !s.is_empty()));
        text.validate().unwrap();
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(tok().tokenize("   "), Err(EncoderError::EmptyText)));
        assert!(matches!(tok().tokenize(""), Err(EncoderError::EmptyText)));
    }

    /// Frozen from a run of this tokenizer: "useful" (6 chars, chunk 4)
    /// splits into two subtokens, its neighbours into one each, giving
    /// spans {1}, {2,3}, {4} after the [CLS] at position 0.
    #[test]
    fn middle_word_splitting_into_two_subtokens_shifts_spans() {
        let text = tok().tokenize("a useful map").unwrap();
        assert_eq!(text.word_spans, vec![1..2, 2..4, 4..5]);
        assert!(text.special_mask[0]);
        assert!(text.special_mask[5]);
        assert_eq!(text.subtoken_ids.len(), 6);
    }

    #[test]
    fn truncation_drops_whole_trailing_words() {
        let tk = ChunkTokenizer::new(256, 4, 8);
        // "three" needs two chunks, the rest one each; only five words fit
        // the [CLS] + 6 + [SEP] budget and "six" is dropped whole.
        let text = tk.tokenize("one two three four five six").unwrap();
        assert_eq!(text.n_words(), 5);
        assert_eq!(text.n_subtokens(), 8);
        text.validate().unwrap();
        let covered: usize = text.word_spans.iter().map(|s| s.len()).sum();
        assert_eq!(covered, text.n_subtokens() - 2);
    }

    #[test]
    fn mask_surface_maps_to_the_mask_token() {
        let text = tok().tokenize("fine [MASK] day").unwrap();
        assert_eq!(text.subtoken_ids[text.word_spans[1].start], MASK_ID);
        assert_eq!(text.word_spans[1].len(), 1);
    }

    #[test]
    fn masked_sequence_collapses_the_span() {
        let text = tok().tokenize("a useful map").unwrap();
        let (ids, specials) = text.masked_sequence(1).unwrap();
        assert_eq!(ids.len(), text.n_subtokens() - 1); // 2-subtoken word -> 1 mask
        assert_eq!(ids[2], MASK_ID);
        assert_eq!(specials.len(), ids.len());
        assert!(matches!(
            text.masked_sequence(3),
            Err(EncoderError::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn tokenization_is_deterministic() {
        let a = tok().tokenize("Some words repeat repeat").unwrap();
        let b = tok().tokenize("Some words repeat repeat").unwrap();
        assert_eq!(a, b);
        // Identical surface words share subtoken ids.
        assert_eq!(
            a.subtoken_ids[a.word_spans[2].clone()],
            a.subtoken_ids[a.word_spans[3].clone()]
        );
    }
}
