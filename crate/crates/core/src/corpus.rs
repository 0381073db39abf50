//! Corpus ingestion: vocabularies, sentence filtering, and train/dev/test splits.
//!
//! Input corpora are treated as pre-tokenized: one sentence per line, tokens
//! separated by spaces. No lowercasing or Unicode normalization is applied.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "<mask>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    Word,
    Char,
    Subword,
}

/// Closed symbol table with stable, contiguous integer ids.
///
/// Reserved symbols always occupy the lowest ids:
/// word vocab `<pad>`=0, `<unk>`=1; char vocab `[CLS]`=0, `<pad>`=1, `<unk>`=2;
/// subword vocab `<pad>`=0, `<unk>`=1, `<mask>`=2.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    kind: VocabKind,
    entries: Vec<String>,
    index: HashMap<String, usize>,
    n_specials: usize,
}

impl Vocabulary {
    pub fn specials_for(kind: VocabKind) -> &'static [&'static str] {
        match kind {
            VocabKind::Word => &[PAD, UNK],
            VocabKind::Char => &[CLS, PAD, UNK],
            VocabKind::Subword => &[PAD, UNK, MASK],
        }
    }

    /// Builds a vocabulary from non-special symbols, prepending the reserved
    /// symbols for `kind`.
    pub fn new(kind: VocabKind, symbols: impl IntoIterator<Item = String>) -> Self {
        let mut entries: Vec<String> = Self::specials_for(kind)
            .iter()
            .map(|s| s.to_string())
            .collect();
        let n_specials = entries.len();
        entries.extend(symbols);
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocabulary {
            kind,
            entries,
            index,
            n_specials,
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_specials(&self) -> usize {
        self.n_specials
    }

    /// Number of corpus-derived (non-special) symbols.
    pub fn n_symbols(&self) -> usize {
        self.entries.len() - self.n_specials
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn entry(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Non-special entries, i.e. the corpus-derived symbols.
    pub fn symbols(&self) -> &[String] {
        &self.entries[self.n_specials..]
    }

    pub fn pad_id(&self) -> usize {
        self.id_of(PAD).expect("pad is always reserved")
    }

    pub fn unk_id(&self) -> usize {
        self.id_of(UNK).expect("unk is always reserved")
    }

    pub fn cls_id(&self) -> usize {
        debug_assert_eq!(self.kind, VocabKind::Char);
        self.id_of(CLS).expect("cls is reserved in char vocabs")
    }

    pub fn mask_id(&self) -> usize {
        debug_assert_eq!(self.kind, VocabKind::Subword);
        self.id_of(MASK).expect("mask is reserved in subword vocabs")
    }

    /// SHA-256 over the entry list; used to pin checkpoints to vocabularies.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.as_bytes());
            hasher.update([0u8]);
        }
        let mut out = String::new();
        for b in hasher.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    /// One symbol per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path, kind: VocabKind) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for line in f.lines() {
            entries.push(line?);
        }
        let specials = Self::specials_for(kind);
        let n_specials = specials.len();
        if entries.len() < n_specials
            || entries[..n_specials] != specials.iter().map(|s| s.to_string()).collect::<Vec<_>>()
        {
            return Err(Error::Config(format!(
                "vocabulary file {} does not start with the reserved symbols {specials:?}",
                path.display()
            )));
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Vocabulary {
            kind,
            entries,
            index,
            n_specials,
        })
    }
}

/// A clean, pre-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    pub source_id: String,
}

impl SentenceRecord {
    /// Parses one whitespace-tokenized line. Returns `None` for blank lines.
    pub fn from_line(line: &str, source_id: impl Into<String>) -> Option<Self> {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            None
        } else {
            Some(SentenceRecord {
                tokens,
                source_id: source_id.into(),
            })
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Reads a one-sentence-per-line corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<SentenceRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        if let Some(rec) = SentenceRecord::from_line(&line?, format!("line{}", i + 1)) {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Keeps the `max_size` most frequent word types, ties broken by lexicographic
/// order of the surface string. Frequencies are counted over the raw stream,
/// before any length filtering.
pub fn build_word_vocab<'a, I>(sentences: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a SentenceRecord>,
{
    assert!(max_size >= 1, "max_size must be at least 1");
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut saw_any = false;
    for s in sentences {
        saw_any = true;
        for tok in &s.tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    if !saw_any || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Ok(Vocabulary::new(
        VocabKind::Word,
        ranked.into_iter().map(|(w, _)| w.to_string()),
    ))
}

/// Character vocabulary: every Unicode scalar value appearing in any word
/// entry, sorted by code point.
pub fn derive_char_vocab(word_vocab: &Vocabulary) -> Vocabulary {
    assert_eq!(word_vocab.kind(), VocabKind::Word);
    let mut chars: Vec<char> = word_vocab
        .symbols()
        .iter()
        .flat_map(|w| w.chars())
        .collect();
    chars.sort_unstable();
    chars.dedup();
    Vocabulary::new(VocabKind::Char, chars.into_iter().map(String::from))
}

/// Drops sentences containing OOV words, over-long sentences, and sentences
/// with over-long words. Order preserved; idempotent.
pub fn filter_sentences(
    sentences: Vec<SentenceRecord>,
    word_vocab: &Vocabulary,
    max_sent_len: usize,
    max_word_len: usize,
) -> Vec<SentenceRecord> {
    assert_eq!(word_vocab.kind(), VocabKind::Word);
    sentences
        .into_iter()
        .filter(|s| {
            s.tokens.len() <= max_sent_len
                && s.tokens
                    .iter()
                    .all(|t| t.chars().count() <= max_word_len && word_vocab.contains(t))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub dev_size: usize,
    pub test_size: usize,
}

/// Random disjoint split; train takes everything not drawn for dev/test and
/// keeps the original corpus order. Deterministic given the seed.
pub fn split_corpus(
    sentences: Vec<SentenceRecord>,
    spec: &SplitSpec,
) -> Result<(Vec<SentenceRecord>, Vec<SentenceRecord>, Vec<SentenceRecord>)> {
    let requested = spec.dev_size + spec.test_size;
    if requested > sentences.len() {
        return Err(Error::SplitShortfall {
            requested,
            available: sentences.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut idx: Vec<usize> = (0..sentences.len()).collect();
    idx.shuffle(&mut rng);
    let dev_idx = &idx[..spec.dev_size];
    let test_idx = &idx[spec.dev_size..spec.dev_size + spec.test_size];
    let mut held = vec![0u8; sentences.len()];
    for &i in dev_idx {
        held[i] = 1;
    }
    for &i in test_idx {
        held[i] = 2;
    }
    let mut dev = Vec::with_capacity(spec.dev_size);
    let mut test = Vec::with_capacity(spec.test_size);
    let mut train = Vec::with_capacity(sentences.len() - requested);
    let mut by_idx: Vec<Option<SentenceRecord>> = sentences.into_iter().map(Some).collect();
    for &i in dev_idx {
        dev.push(by_idx[i].take().unwrap());
    }
    for &i in test_idx {
        test.push(by_idx[i].take().unwrap());
    }
    for (i, slot) in by_idx.into_iter().enumerate() {
        if held[i] == 0 {
            train.push(slot.unwrap());
        }
    }
    Ok((train, dev, test))
}

/// Writes a split as a plain-text file, one sentence per line.
pub fn write_sentences(path: &Path, sentences: &[SentenceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in sentences {
        writeln!(f, "{}", s.tokens.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tokens: &[&str]) -> SentenceRecord {
        SentenceRecord {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            source_id: String::new(),
        }
    }

    #[test]
    fn frequency_ordering() {
        // {"a":5, "b":3, "c":1} over 3 sentences, max_size=2 -> ["a","b"]
        let corpus = vec![
            sent(&["a", "a", "b", "c"]),
            sent(&["a", "a", "b"]),
            sent(&["a", "b"]),
        ];
        let v = build_word_vocab(&corpus, 2).unwrap();
        assert_eq!(v.symbols(), ["a", "b"]);
        assert_eq!(v.id_of("a"), Some(2));
        assert_eq!(v.id_of(PAD), Some(0));
        assert_eq!(v.id_of(UNK), Some(1));
    }

    #[test]
    fn frequency_tie_breaks_lexicographically() {
        let corpus = vec![sent(&["y", "x"]), sent(&["x", "y"])];
        let v = build_word_vocab(&corpus, 1).unwrap();
        assert_eq!(v.symbols(), ["x"]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let corpus: Vec<SentenceRecord> = vec![];
        assert!(matches!(
            build_word_vocab(&corpus, 10),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn ids_are_contiguous() {
        let corpus = vec![sent(&["a", "b", "c"])];
        let v = build_word_vocab(&corpus, 10).unwrap();
        for (i, e) in v.entries().iter().enumerate() {
            assert_eq!(v.id_of(e), Some(i));
        }
    }

    #[test]
    fn vocab_size_is_min_of_max_and_distinct() {
        let corpus = vec![sent(&["a", "b", "c"])];
        assert_eq!(build_word_vocab(&corpus, 2).unwrap().n_symbols(), 2);
        assert_eq!(build_word_vocab(&corpus, 99).unwrap().n_symbols(), 3);
    }

    #[test]
    fn char_vocab_is_sorted_char_union() {
        let v = Vocabulary::new(VocabKind::Word, ["ab".into(), "ba".into()]);
        let c = derive_char_vocab(&v);
        assert_eq!(c.symbols(), ["a", "b"]);
        assert_eq!(c.id_of(CLS), Some(0));
        assert_eq!(c.id_of(PAD), Some(1));
        assert_eq!(c.id_of(UNK), Some(2));
    }

    #[test]
    fn char_vocab_single_entry() {
        let v = Vocabulary::new(VocabKind::Word, ["a".into()]);
        assert_eq!(derive_char_vocab(&v).n_symbols(), 1);
    }

    #[test]
    fn filter_drops_oov_long_sentences_and_long_words() {
        let v = Vocabulary::new(VocabKind::Word, ["the".into(), "cat".into()]);
        let kept = filter_sentences(vec![sent(&["the", "cat"])], &v, 200, 20);
        assert_eq!(kept.len(), 1);
        // OOV deletion
        assert!(filter_sentences(vec![sent(&["the", "dog"])], &v, 200, 20).is_empty());
        // 201 tokens with max_sent_len 200
        let long = SentenceRecord {
            tokens: vec!["the".to_string(); 201],
            source_id: String::new(),
        };
        assert!(filter_sentences(vec![long], &v, 200, 20).is_empty());
        // 21-char token with max_word_len 20
        let wide = Vocabulary::new(VocabKind::Word, ["a".repeat(21)]);
        assert!(filter_sentences(vec![sent(&[&"a".repeat(21)])], &wide, 200, 20).is_empty());
    }

    #[test]
    fn filter_is_idempotent() {
        let v = Vocabulary::new(VocabKind::Word, ["a".into(), "b".into()]);
        let input = vec![sent(&["a", "b"]), sent(&["a", "z"]), sent(&["b"])];
        let once = filter_sentences(input, &v, 200, 20);
        let twice = filter_sentences(once.clone(), &v, 200, 20);
        assert_eq!(once, twice);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let corpus: Vec<SentenceRecord> = (0..10).map(|i| sent(&[&format!("w{i}")])).collect();
        let spec = SplitSpec {
            seed: 7,
            dev_size: 1,
            test_size: 1,
        };
        let (tr1, d1, te1) = split_corpus(corpus.clone(), &spec).unwrap();
        let (tr2, d2, te2) = split_corpus(corpus.clone(), &spec).unwrap();
        assert_eq!((tr1.clone(), d1.clone(), te1.clone()), (tr2, d2, te2));
        assert_eq!(tr1.len(), 8);
        assert_eq!(d1.len(), 1);
        assert_eq!(te1.len(), 1);
        let mut all: Vec<_> = tr1.iter().chain(&d1).chain(&te1).collect();
        all.sort_by_key(|s| s.tokens[0].clone());
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_shortfall_is_an_error() {
        let corpus: Vec<SentenceRecord> = (0..10).map(|i| sent(&[&format!("w{i}")])).collect();
        let spec = SplitSpec {
            seed: 7,
            dev_size: 9,
            test_size: 2,
        };
        match split_corpus(corpus, &spec) {
            Err(Error::SplitShortfall {
                requested,
                available,
            }) => {
                assert_eq!(requested, 11);
                assert_eq!(available, 10);
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::new(VocabKind::Word, ["their".into(), "cat".into()]);
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path, VocabKind::Word).unwrap();
        assert_eq!(loaded.entries(), v.entries());
        assert_eq!(loaded.hash(), v.hash());
    }
}
