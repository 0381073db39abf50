//! Shared toy-data generators for the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spellforge_core::corpus::{build_word_vocab, derive_char_vocab, SentenceRecord, Vocabulary};
use spellforge_core::noise::{MisspellingLexicon, Provenance};

pub fn random_word(rng: &mut ChaCha8Rng, min_len: usize, max_len: usize) -> String {
    let len = rng.gen_range(min_len..=max_len);
    (0..len).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect()
}

/// `count` distinct random lowercase words, deterministic in `rng`.
pub fn distinct_words(
    rng: &mut ChaCha8Rng,
    count: usize,
    min_len: usize,
    max_len: usize,
) -> Vec<String> {
    let mut seen = BTreeSet::new();
    while seen.len() < count {
        seen.insert(random_word(rng, min_len, max_len));
    }
    seen.into_iter().collect()
}

/// `n_sentences` of `words_per_sentence` tokens, covering all of a freshly
/// generated `vocab_words`-word vocabulary at least once.
pub fn covering_corpus(
    n_sentences: usize,
    vocab_words: usize,
    words_per_sentence: usize,
    seed: u64,
) -> Vec<SentenceRecord> {
    assert!(n_sentences * words_per_sentence >= vocab_words);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = distinct_words(&mut rng, vocab_words, 4, 6);
    let mut slots: Vec<usize> = (0..n_sentences * words_per_sentence)
        .map(|i| i % vocab_words)
        .collect();
    slots.shuffle(&mut rng);
    slots
        .chunks(words_per_sentence)
        .enumerate()
        .map(|(i, chunk)| SentenceRecord {
            tokens: chunk.iter().map(|&w| words[w].clone()).collect(),
            source_id: format!("toy-{i}"),
        })
        .collect()
}

/// Adjacent transpositions at a few positions; length-preserving, same error
/// family as the synthetic `Swap` noise kind.
pub fn mangle_swaps(word: &str) -> Vec<String> {
    let cs: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = Vec::new();
    for i in [0usize, 2, 4] {
        if i + 1 < cs.len() {
            let mut m = cs.clone();
            m.swap(i, i + 1);
            out.push(m.into_iter().collect());
        }
    }
    out.retain(|m| m != word);
    out.sort();
    out.dedup();
    out
}

/// Single-letter substitutions; the error family the synthetic keyboard and
/// random-interior noise kinds draw from.
pub fn mangle_subs(word: &str) -> Vec<String> {
    let cs: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = Vec::new();
    for i in [1usize, cs.len().saturating_sub(2)] {
        if i < cs.len() {
            let mut m = cs.clone();
            m[i] = (((m[i] as u8 - b'a' + 1) % 26) + b'a') as char;
            out.push(m.into_iter().collect());
        }
    }
    out.retain(|m| m != word);
    out.sort();
    out.dedup();
    out
}

/// All deterministic misspellings of a word.
pub fn mangles(word: &str) -> Vec<String> {
    let mut out = mangle_swaps(word);
    out.extend(mangle_subs(word));
    out.sort();
    out.dedup();
    out
}

/// A tiny synthetic language with two sentence families:
///
/// * context-determined: `[left_i, middle, right_i, dummy]` where the marker
///   pair uniquely identifies the middle word, and each middle word has a
///   confusable in-vocabulary partner listed as a natural misspelling (the
///   real-word case);
/// * spelling-determined: `[left_g, middle, right_g]` where one marker pair
///   is shared by several middle words, so only the word's own spelling can
///   recover it from a (non-word) misspelling.
///
/// Dummy words give natural corruption a second target, so context-family
/// middles also appear uncorrupted in training.
pub struct ToyLanguage {
    pub train: Vec<SentenceRecord>,
    pub dev: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
    /// Full natural misspelling lexicon (real-word confusions and mangles).
    pub lexicon: MisspellingLexicon,
    /// Training/dev lexicon: every real-word confusion plus the transposition
    /// mangles; the substitution mangles are test-only.
    pub known_lexicon: MisspellingLexicon,
    pub word_vocab: Vocabulary,
    pub char_vocab: Vocabulary,
}

pub fn toy_language(
    n_pairs: usize,
    n_groups: usize,
    group_size: usize,
    reps: (usize, usize, usize),
    seed: u64,
) -> ToyLanguage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dummies = 8;
    let total =
        2 * n_pairs + 4 * n_pairs + n_dummies + n_groups * group_size + 2 * n_groups;
    let words = distinct_words(&mut rng, total, 5, 7);
    let mut it = words.iter().cloned();
    let mut take = |n: usize| -> Vec<String> { it.by_ref().take(n).collect() };
    let confusables = take(2 * n_pairs);
    let pair_markers = take(4 * n_pairs);
    let dummies = take(n_dummies);
    let group_middles = take(n_groups * group_size);
    let group_markers = take(2 * n_groups);
    let vocab_set: BTreeSet<&String> = words.iter().collect();

    let mut lexicon = MisspellingLexicon::new();
    let mut known_lexicon = MisspellingLexicon::new();
    let add_mangles = |full: &mut MisspellingLexicon, known: &mut MisspellingLexicon, word: &str| {
        for m in mangle_swaps(word).into_iter().filter(|m| !vocab_set.contains(m)) {
            full.insert(word, &m, Provenance::Natural);
            known.insert(word, &m, Provenance::Natural);
        }
        for m in mangle_subs(word).into_iter().filter(|m| !vocab_set.contains(m)) {
            full.insert(word, &m, Provenance::Natural);
        }
    };
    for i in 0..n_pairs {
        let (u, v) = (&confusables[2 * i], &confusables[2 * i + 1]);
        for lex in [&mut lexicon, &mut known_lexicon] {
            lex.insert(u, v, Provenance::Natural);
            lex.insert(v, u, Provenance::Natural);
        }
        add_mangles(&mut lexicon, &mut known_lexicon, u);
        add_mangles(&mut lexicon, &mut known_lexicon, v);
    }
    for w in group_middles.iter() {
        add_mangles(&mut lexicon, &mut known_lexicon, w);
    }
    for d in dummies.iter() {
        add_mangles(&mut lexicon, &mut known_lexicon, d);
    }

    let mut make_split = |n: usize, tag: &str| -> Vec<SentenceRecord> {
        let mut out = Vec::new();
        for r in 0..n {
            for i in 0..n_pairs {
                for side in 0..2 {
                    let mid = &confusables[2 * i + side];
                    let l = &pair_markers[4 * i + 2 * side];
                    let rgt = &pair_markers[4 * i + 2 * side + 1];
                    let d = dummies.choose(&mut rng).unwrap();
                    out.push(SentenceRecord {
                        tokens: vec![l.clone(), mid.clone(), rgt.clone(), d.clone()],
                        source_id: format!("{tag}-pair{i}.{side}-{r}"),
                    });
                }
            }
            for gidx in 0..n_groups {
                for m in 0..group_size {
                    let mid = &group_middles[gidx * group_size + m];
                    let l = &group_markers[2 * gidx];
                    let rgt = &group_markers[2 * gidx + 1];
                    out.push(SentenceRecord {
                        tokens: vec![l.clone(), mid.clone(), rgt.clone()],
                        source_id: format!("{tag}-group{gidx}.{m}-{r}"),
                    });
                }
            }
        }
        out
    };
    let train = make_split(reps.0, "train");
    let dev = make_split(reps.1, "dev");
    let test = make_split(reps.2, "test");

    let all: Vec<&SentenceRecord> = train.iter().chain(&dev).chain(&test).collect();
    let word_vocab = build_word_vocab(all.into_iter(), total).unwrap();
    let char_vocab = derive_char_vocab(&word_vocab);
    ToyLanguage {
        train,
        dev,
        test,
        lexicon,
        known_lexicon,
        word_vocab,
        char_vocab,
    }
}
