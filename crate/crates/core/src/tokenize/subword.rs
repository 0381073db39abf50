//! Byte-pair-merge subword model, trained from scratch on the clean corpus.
//!
//! Words are segmented independently of sentence context. Non-initial pieces
//! carry the `##` continuation marker. Unknown characters become a single
//! `<unk>` piece.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{SentenceRecord, Vocabulary, VocabKind, UNK};
use crate::error::{Error, Result};

pub const CONTINUATION_MARKER: &str = "##";

const MERGES_HEADER: &str = "spellforge-subword-merges v1";

#[derive(Debug, Clone)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    vocab: Vocabulary,
    rank: HashMap<(String, String), usize>,
}

impl SubwordModel {
    fn new(merges: Vec<(String, String)>, vocab: Vocabulary) -> Self {
        let rank = merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.clone(), b.clone()), i))
            .collect();
        SubwordModel { merges, vocab, rank }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Splits a word into its initial symbol sequence: first character bare,
    /// the rest with the continuation marker; unknown characters become `<unk>`.
    fn initial_symbols(&self, word: &str) -> Vec<String> {
        initial_symbols_with(word, |sym| self.vocab.contains(sym))
    }

    /// Segments one word into subword piece ids. Deterministic; every word
    /// yields at least one piece.
    pub fn segment(&self, word: &str) -> Vec<usize> {
        let mut symbols = self.initial_symbols(word);
        if symbols.is_empty() {
            // Empty words never occur in valid sentences, but keep totality.
            return vec![self.vocab.unk_id()];
        }
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len() - 1 {
                if let Some(&r) = self
                    .rank
                    .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                {
                    if best.map_or(true, |(br, _)| r < br) {
                        best = Some((r, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = merge_symbols(&symbols[i], &symbols[i + 1]);
                    symbols.splice(i..=i + 1, [merged]);
                }
                None => break,
            }
        }
        let unk = self.vocab.unk_id();
        symbols
            .iter()
            .map(|s| self.vocab.id_of(s).unwrap_or(unk))
            .collect()
    }

    /// Content hash over the vocab and merge list; pins checkpoints.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.vocab.hash().as_bytes());
        for (a, b) in &self.merges {
            hasher.update(a.as_bytes());
            hasher.update([0u8]);
            hasher.update(b.as_bytes());
            hasher.update([1u8]);
        }
        let mut out = String::new();
        for byte in hasher.finalize() {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    /// Persists as `<prefix>.vocab` (one symbol per line) and
    /// `<prefix>.merges` (version header, then one pair per line).
    pub fn save(&self, prefix: &Path) -> Result<()> {
        self.vocab.save(&prefix.with_extension("vocab"))?;
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(prefix.with_extension("merges"))?);
        writeln!(f, "{MERGES_HEADER}")?;
        for (a, b) in &self.merges {
            writeln!(f, "{a}\t{b}")?;
        }
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&prefix.with_extension("vocab"), VocabKind::Subword)?;
        let merges_path = prefix.with_extension("merges");
        let f = BufReader::new(std::fs::File::open(&merges_path)?);
        let mut lines = f.lines();
        match lines.next() {
            Some(Ok(header)) if header == MERGES_HEADER => {}
            _ => {
                return Err(Error::SubwordModelParse {
                    path: merges_path,
                    reason: format!("missing version header {MERGES_HEADER:?}"),
                })
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::SubwordModelParse {
                        path: merges_path,
                        reason: format!("line {}: expected `left<TAB>right`", i + 2),
                    })
                }
            }
        }
        Ok(SubwordModel::new(merges, vocab))
    }
}

fn initial_symbols_with(word: &str, known: impl Fn(&str) -> bool) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            let sym = if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION_MARKER}{c}")
            };
            if known(&sym) {
                sym
            } else {
                UNK.to_string()
            }
        })
        .collect()
}

fn merge_symbols(left: &str, right: &str) -> String {
    format!(
        "{left}{}",
        right.strip_prefix(CONTINUATION_MARKER).unwrap_or(right)
    )
}

/// Trains a byte-pair-merge model: start from the character alphabet (with
/// continuation markers), repeatedly merge the most frequent adjacent symbol
/// pair until the non-special vocab reaches `target_vocab_size`. Ties are
/// broken by lexicographic pair order.
pub fn train_subword(
    corpus: &[SentenceRecord],
    target_vocab_size: usize,
) -> Result<SubwordModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // Word frequency table.
    let mut word_freq: BTreeMap<&str, u64> = BTreeMap::new();
    for s in corpus {
        for t in &s.tokens {
            *word_freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    // Alphabet.
    let mut alphabet: Vec<String> = Vec::new();
    for (&word, _) in &word_freq {
        for (i, c) in word.chars().enumerate() {
            alphabet.push(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION_MARKER}{c}")
            });
        }
    }
    alphabet.sort();
    alphabet.dedup();
    if target_vocab_size < alphabet.len() {
        return Err(Error::SubwordTargetTooSmall {
            target: target_vocab_size,
            alphabet: alphabet.len(),
        });
    }

    // Working segmentation of each distinct word.
    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .iter()
        .map(|(&w, &f)| {
            (
                w.chars()
                    .enumerate()
                    .map(|(i, c)| {
                        if i == 0 {
                            c.to_string()
                        } else {
                            format!("{CONTINUATION_MARKER}{c}")
                        }
                    })
                    .collect(),
                f,
            )
        })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut symbols = alphabet.clone();
    while symbols.len() < target_vocab_size {
        let mut pair_freq: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (segs, f) in &words {
            for pair in segs.windows(2) {
                *pair_freq
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += f;
            }
        }
        // Highest count wins; BTreeMap iteration makes the lexicographically
        // smallest pair win ties.
        let best = pair_freq
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(&(a, b), _)| (a.to_string(), b.to_string()));
        let Some((left, right)) = best else {
            break; // every word is a single symbol already
        };
        let merged = merge_symbols(&left, &right);
        for (segs, _) in &mut words {
            let mut i = 0;
            while i + 1 < segs.len() {
                if segs[i] == left && segs[i + 1] == right {
                    segs.splice(i..=i + 1, [merged.clone()]);
                }
                i += 1;
            }
        }
        merges.push((left, right));
        symbols.push(merged);
    }

    let vocab = Vocabulary::new(VocabKind::Subword, symbols);
    Ok(SubwordModel::new(merges, vocab))
}
