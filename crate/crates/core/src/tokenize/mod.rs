//! Sentence encoding for the three encoders: word ids with `<unk>`, per-word
//! character sequences with `[CLS]`, and learned subword segmentation, plus
//! the BIO2 subword tag scheme.

mod bio2;
mod subword;

pub use bio2::{bio2_decode, bio2_labels, Bio2DecodeCounters, Bio2Tag, Role};
pub use subword::{train_subword, SubwordModel, CONTINUATION_MARKER};

use crate::corpus::Vocabulary;

/// Per-sentence encodings for all three input routes.
///
/// `word_ids`, `char_ids` and `word_spans` all have one entry per word;
/// `word_spans[k]` is the half-open subword range of word k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub subword_ids: Vec<usize>,
    pub word_spans: Vec<(usize, usize)>,
}

/// Word-id encoding: OOV tokens map to `<unk>`.
pub fn word_encode(noisy: &[String], word_vocab: &Vocabulary) -> Vec<usize> {
    let unk = word_vocab.unk_id();
    noisy
        .iter()
        .map(|t| word_vocab.id_of(t).unwrap_or(unk))
        .collect()
}

/// Character encoding of one word: `[CLS]` then per-character ids, truncated
/// to `max_word_len` characters. Characters outside the vocabulary map to the
/// char-level `<unk>`.
pub fn char_encode(word: &str, char_vocab: &Vocabulary, max_word_len: usize) -> Vec<usize> {
    let unk = char_vocab.unk_id();
    let mut ids = Vec::with_capacity(1 + max_word_len);
    ids.push(char_vocab.cls_id());
    let mut buf = [0u8; 4];
    for c in word.chars().take(max_word_len) {
        let s: &str = c.encode_utf8(&mut buf);
        ids.push(char_vocab.id_of(s).unwrap_or(unk));
    }
    ids
}

/// Segments each word independently and records the per-word subword spans.
pub fn subword_encode(
    noisy: &[String],
    model: &SubwordModel,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(noisy.len());
    for word in noisy {
        let pieces = model.segment(word);
        debug_assert!(!pieces.is_empty());
        let start = ids.len();
        ids.extend(pieces);
        spans.push((start, ids.len()));
    }
    (ids, spans)
}

/// Full encoding of one (noisy) token sequence.
pub fn encode_sentence(
    noisy: &[String],
    word_vocab: &Vocabulary,
    char_vocab: &Vocabulary,
    subword_model: Option<&SubwordModel>,
    max_word_len: usize,
) -> EncodedSentence {
    let word_ids = word_encode(noisy, word_vocab);
    let char_ids = noisy
        .iter()
        .map(|w| char_encode(w, char_vocab, max_word_len))
        .collect();
    let (subword_ids, word_spans) = match subword_model {
        Some(m) => subword_encode(noisy, m),
        // Without a subword model every word is its own single "piece", which
        // keeps the span bookkeeping uniform for the word/char routes.
        None => (
            (0..noisy.len()).collect(),
            (0..noisy.len()).map(|i| (i, i + 1)).collect(),
        ),
    };
    EncodedSentence {
        word_ids,
        char_ids,
        subword_ids,
        word_spans,
    }
}
