//! Deterministic fixture data shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spellforge_core::corpus::SentenceRecord;

pub fn random_word(rng: &mut ChaCha8Rng, min_len: usize, max_len: usize) -> String {
    let len = rng.gen_range(min_len..=max_len);
    (0..len).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect()
}

/// A corpus over a closed vocabulary; every word type is used at least once.
pub fn corpus(n_sentences: usize, vocab_words: usize, words_per_sentence: usize) -> Vec<SentenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut words = Vec::with_capacity(vocab_words);
    while words.len() < vocab_words {
        let w = random_word(&mut rng, 4, 9);
        if !words.contains(&w) {
            words.push(w);
        }
    }
    (0..n_sentences)
        .map(|i| SentenceRecord {
            tokens: (0..words_per_sentence)
                .map(|j| words[(i * words_per_sentence + j) % vocab_words].clone())
                .collect(),
            source_id: format!("bench-{i}"),
        })
        .collect()
}
