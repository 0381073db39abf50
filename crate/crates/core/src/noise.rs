//! Misspelling noise: the natural misspelling lexicon, the five synthetic
//! character-level corruptions, and sentence corruption into parallel examples.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{SentenceRecord, Vocabulary};
use crate::error::{Error, Result};

/// QWERTY adjacency used by [`NoiseKind::KeyboardTypo`]: same-row left/right
/// neighbors plus diagonal neighbors of the staggered rows.
pub const QWERTY_NEIGHBORS_TSV: &str = include_str!("../data/qwerty_neighbors.tsv");

#[derive(Debug, Clone)]
pub struct KeyboardMap {
    neighbors: HashMap<char, Vec<char>>,
}

impl KeyboardMap {
    pub fn qwerty() -> Self {
        Self::parse(QWERTY_NEIGHBORS_TSV).expect("bundled adjacency map is well-formed")
    }

    pub fn parse(tsv: &str) -> Result<Self> {
        let mut neighbors = HashMap::new();
        for (i, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let key = parts.next().and_then(|s| s.chars().next());
            let adj = parts.next();
            match (key, adj, parts.next()) {
                (Some(k), Some(adj), None) => {
                    neighbors.insert(k, adj.chars().collect());
                }
                _ => {
                    return Err(Error::Config(format!(
                        "keyboard map line {}: expected `key<TAB>neighbors`",
                        i + 1
                    )))
                }
            }
        }
        Ok(KeyboardMap { neighbors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        self.neighbors.get(&c).map(|v| v.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Natural,
    Synthetic,
}

/// Map from correct word to its observed misspellings. Case-sensitive; a
/// misspelling never equals its correct word.
#[derive(Debug, Clone, Default)]
pub struct MisspellingLexicon {
    entries: BTreeMap<String, Vec<(String, Provenance)>>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LexiconLoadStats {
    /// Lines skipped because the misspelling equals the correct word.
    pub skipped_self_pairs: usize,
    /// Duplicate (word, misspelling) pairs collapsed during merging.
    pub duplicates_collapsed: usize,
}

impl MisspellingLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a pair, returning false if it already existed or equals the word.
    pub fn insert(&mut self, word: &str, misspelling: &str, provenance: Provenance) -> bool {
        if word == misspelling {
            return false;
        }
        let list = self.entries.entry(word.to_string()).or_default();
        if list.iter().any(|(m, _)| m == misspelling) {
            return false;
        }
        list.push((misspelling.to_string(), provenance));
        true
    }

    pub fn misspellings_of(&self, word: &str) -> Option<&[(String, Provenance)]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn n_pairs(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn n_words(&self) -> usize {
        self.entries.len()
    }

    /// All (word, misspelling) pairs in deterministic order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, Provenance)> {
        self.entries
            .iter()
            .flat_map(|(w, ms)| ms.iter().map(move |(m, p)| (w.as_str(), m.as_str(), *p)))
    }

    /// Loads and merges TSV lexicon files (`correct_word<TAB>misspelling` per
    /// line). Self-pairs are skipped and counted; duplicates across files are
    /// collapsed.
    pub fn load_files<P: AsRef<Path>>(paths: &[P]) -> Result<(Self, LexiconLoadStats)> {
        let mut lex = MisspellingLexicon::new();
        let mut stats = LexiconLoadStats::default();
        for path in paths {
            let path = path.as_ref();
            let f = BufReader::new(std::fs::File::open(path)?);
            for (i, line) in f.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
                    return Err(Error::LexiconParse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason: format!("expected 2 tab-separated fields, got {}", fields.len()),
                    });
                }
                if fields[0] == fields[1] {
                    stats.skipped_self_pairs += 1;
                } else if !lex.insert(fields[0], fields[1], Provenance::Natural) {
                    stats.duplicates_collapsed += 1;
                }
            }
        }
        Ok((lex, stats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (w, m, _) in self.pairs() {
            writeln!(f, "{w}\t{m}")?;
        }
        Ok(())
    }
}

/// Samples `floor(fraction * N)` of the N (word, misspelling) pairs uniformly
/// to form the known-misspelling list; the full lexicon is returned unchanged.
pub fn split_known(
    lexicon: &MisspellingLexicon,
    fraction: f64,
    seed: u64,
) -> (MisspellingLexicon, MisspellingLexicon) {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0,1]");
    let mut pairs: Vec<(String, String, Provenance)> = lexicon
        .pairs()
        .map(|(w, m, p)| (w.to_string(), m.to_string(), p))
        .collect();
    let keep = (fraction * pairs.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let mut known = MisspellingLexicon::new();
    for (w, m, p) in pairs.into_iter().take(keep) {
        known.insert(&w, &m, p);
    }
    (known, lexicon.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Swap,
    MiddleRandom,
    FullyRandom,
    KeyboardTypo,
    RandomGenerate,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::Swap,
        NoiseKind::MiddleRandom,
        NoiseKind::FullyRandom,
        NoiseKind::KeyboardTypo,
        NoiseKind::RandomGenerate,
    ];
}

/// Where a corrupted token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    NaturalLexicon,
    Synthetic(NoiseKind),
}

impl Serialize for NoiseSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let name = match self {
            NoiseSource::NaturalLexicon => "NaturalLexicon",
            NoiseSource::Synthetic(k) => match k {
                NoiseKind::Swap => "Swap",
                NoiseKind::MiddleRandom => "MiddleRandom",
                NoiseKind::FullyRandom => "FullyRandom",
                NoiseKind::KeyboardTypo => "KeyboardTypo",
                NoiseKind::RandomGenerate => "RandomGenerate",
            },
        };
        s.serialize_str(name)
    }
}

impl<'de> Deserialize<'de> for NoiseSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Ok(match name.as_str() {
            "NaturalLexicon" => NoiseSource::NaturalLexicon,
            "Swap" => NoiseSource::Synthetic(NoiseKind::Swap),
            "MiddleRandom" => NoiseSource::Synthetic(NoiseKind::MiddleRandom),
            "FullyRandom" => NoiseSource::Synthetic(NoiseKind::FullyRandom),
            "KeyboardTypo" => NoiseSource::Synthetic(NoiseKind::KeyboardTypo),
            "RandomGenerate" => NoiseSource::Synthetic(NoiseKind::RandomGenerate),
            other => {
                return Err(serde::de::Error::custom(format!(
                    "unknown noise source {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub pos: usize,
    pub source: NoiseSource,
}

/// Aligned (clean, noisy) sentence pair. Token counts are always equal:
/// stand-alone correction never inserts or deletes tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub clean: SentenceRecord,
    pub noisy: Vec<String>,
    pub corrupted: Vec<CorruptionRecord>,
}

impl ParallelExample {
    /// Checks all structural invariants; used by tests and dataset audits.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.noisy.len() != self.clean.tokens.len() {
            return Err(format!(
                "token count changed: {} clean vs {} noisy",
                self.clean.tokens.len(),
                self.noisy.len()
            ));
        }
        let marked: std::collections::HashSet<usize> =
            self.corrupted.iter().map(|c| c.pos).collect();
        if marked.len() != self.corrupted.len() {
            return Err("duplicate corrupted positions".into());
        }
        for i in 0..self.noisy.len() {
            let differs = self.noisy[i] != self.clean.tokens[i];
            if differs != marked.contains(&i) {
                return Err(format!(
                    "position {i}: differs={differs} but marked={}",
                    marked.contains(&i)
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Std-dev of the Gaussian behind the replacement fraction alpha.
    pub sigma: f64,
    /// Probability that a corrupted position uses synthetic noise instead of
    /// the natural lexicon. Dev/test sets always use 0.
    pub synthetic_fraction: f64,
    pub seed: u64,
    pub max_word_len: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            sigma: 0.2,
            synthetic_fraction: 0.0,
            seed: 0,
            max_word_len: 20,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.synthetic_fraction) {
            return Err(Error::Config("synthetic_fraction must be in [0,1]".into()));
        }
        Ok(())
    }
}

const SYNTH_RETRY_BUDGET: usize = 8;

/// Generates one synthetic misspelling of `word`. If the requested kind cannot
/// produce a differing output (short words, uniform interiors, no mapped
/// keys), another kind is drawn; after the retry budget the generator falls
/// back to [`NoiseKind::RandomGenerate`], which always succeeds.
pub fn synth_misspell<R: Rng>(
    word: &str,
    kind: NoiseKind,
    char_vocab: &Vocabulary,
    keyboard: &KeyboardMap,
    max_word_len: usize,
    rng: &mut R,
) -> String {
    let mut kind = kind;
    for _ in 0..SYNTH_RETRY_BUDGET {
        if let Some(out) = try_kind(word, kind, char_vocab, keyboard, max_word_len, rng) {
            debug_assert_ne!(out, word);
            return out;
        }
        kind = *NoiseKind::ALL.choose(rng).unwrap();
    }
    random_generate(word, char_vocab, max_word_len, rng)
}

fn try_kind<R: Rng>(
    word: &str,
    kind: NoiseKind,
    char_vocab: &Vocabulary,
    keyboard: &KeyboardMap,
    max_word_len: usize,
    rng: &mut R,
) -> Option<String> {
    let chars: Vec<char> = word.chars().collect();
    match kind {
        NoiseKind::Swap => {
            if chars.len() < 4 {
                return None;
            }
            let candidates: Vec<usize> = (0..chars.len() - 1)
                .filter(|&i| chars[i] != chars[i + 1])
                .collect();
            let &i = candidates.choose(rng)?;
            let mut out = chars;
            out.swap(i, i + 1);
            Some(out.into_iter().collect())
        }
        NoiseKind::MiddleRandom => {
            if chars.len() < 4 {
                return None;
            }
            let mut out = chars.clone();
            let last = out.len() - 1;
            for _ in 0..SYNTH_RETRY_BUDGET {
                out[1..last].shuffle(rng);
                if out != chars {
                    return Some(out.into_iter().collect());
                }
            }
            None
        }
        NoiseKind::FullyRandom => {
            if chars.len() < 2 {
                return None;
            }
            let mut out = chars.clone();
            for _ in 0..SYNTH_RETRY_BUDGET {
                out.shuffle(rng);
                if out != chars {
                    return Some(out.into_iter().collect());
                }
            }
            None
        }
        NoiseKind::KeyboardTypo => {
            let candidates: Vec<usize> = (0..chars.len())
                .filter(|&i| keyboard.neighbors(chars[i]).is_some_and(|n| !n.is_empty()))
                .collect();
            let &i = candidates.choose(rng)?;
            let neighbors = keyboard.neighbors(chars[i]).unwrap();
            let &replacement = neighbors.choose(rng)?;
            if replacement == chars[i] {
                return None;
            }
            let mut out = chars;
            out[i] = replacement;
            Some(out.into_iter().collect())
        }
        NoiseKind::RandomGenerate => Some(random_generate(word, char_vocab, max_word_len, rng)),
    }
}

/// Fresh string of characters drawn from the character vocabulary, length
/// uniform in [1, max_word_len]. Loops until the result differs from `word`.
fn random_generate<R: Rng>(
    word: &str,
    char_vocab: &Vocabulary,
    max_word_len: usize,
    rng: &mut R,
) -> String {
    let alphabet: Vec<char> = char_vocab
        .symbols()
        .iter()
        .filter_map(|s| s.chars().next())
        .collect();
    assert!(!alphabet.is_empty(), "character vocabulary has no symbols");
    loop {
        let len = rng.gen_range(1..=max_word_len.max(1));
        let out: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
        if out != word {
            return out;
        }
    }
}

/// Number of words to replace in an n-word sentence:
/// `m = max(floor(alpha * n), 1)` with `alpha = min(|N(0, sigma)|, 1)`.
pub fn sample_replacement_count<R: Rng>(n: usize, config: &CorruptionConfig, rng: &mut R) -> usize {
    assert!(n >= 1);
    let normal = Normal::new(0.0, config.sigma).expect("sigma > 0");
    let alpha = normal.sample(rng).abs().min(1.0);
    ((alpha * n as f64).floor() as usize).clamp(1, n)
}

/// Corrupts `m` uniformly chosen positions of a clean sentence. Positions
/// whose word has no usable noise source are re-drawn; if nothing is
/// corruptible the example is emitted uncorrupted.
pub fn corrupt_sentence<R: Rng>(
    clean: &SentenceRecord,
    lexicon: &MisspellingLexicon,
    config: &CorruptionConfig,
    char_vocab: &Vocabulary,
    keyboard: &KeyboardMap,
    rng: &mut R,
) -> ParallelExample {
    let n = clean.tokens.len();
    let m = sample_replacement_count(n, config, rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut noisy = clean.tokens.clone();
    let mut corrupted = Vec::new();
    for &pos in &order {
        if corrupted.len() == m {
            break;
        }
        let word = &clean.tokens[pos];
        let synthetic =
            config.synthetic_fraction > 0.0 && rng.gen::<f64>() < config.synthetic_fraction;
        let (replacement, source) = if synthetic {
            let kind = *NoiseKind::ALL.choose(rng).unwrap();
            (
                synth_misspell(word, kind, char_vocab, keyboard, config.max_word_len, rng),
                NoiseSource::Synthetic(kind),
            )
        } else {
            match lexicon.misspellings_of(word) {
                Some(ms) if !ms.is_empty() => {
                    let (m, _) = ms.choose(rng).unwrap();
                    (m.clone(), NoiseSource::NaturalLexicon)
                }
                // Uncovered word under natural-only noise: re-draw the position.
                _ => continue,
            }
        };
        noisy[pos] = replacement;
        corrupted.push(CorruptionRecord { pos, source });
    }
    corrupted.sort_by_key(|c| c.pos);
    ParallelExample {
        clean: clean.clone(),
        noisy,
        corrupted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MisspellingClass {
    RealWord,
    NonWord,
}

/// A corrupted token is a real-word misspelling iff it is itself in the word
/// vocabulary. Classification is input-only; callers decide what counts as a
/// misspelling.
pub fn classify_misspelling(noisy_token: &str, word_vocab: &Vocabulary) -> MisspellingClass {
    if word_vocab.contains(noisy_token) {
        MisspellingClass::RealWord
    } else {
        MisspellingClass::NonWord
    }
}

/// Aggregate counters from a corpus corruption run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CorruptionStats {
    pub sentences: usize,
    pub uncorrupted_sentences: usize,
    pub corrupted_positions: usize,
    pub natural: usize,
    pub synthetic: usize,
    pub real_word: usize,
    pub non_word: usize,
}

impl CorruptionStats {
    pub fn real_word_fraction(&self) -> f64 {
        if self.corrupted_positions == 0 {
            0.0
        } else {
            self.real_word as f64 / self.corrupted_positions as f64
        }
    }
}

/// Corrupts a whole corpus. Each sentence draws its RNG stream from
/// (config.seed, sentence index), so the output is independent of iteration
/// scheduling and bit-reproducible under a fixed seed.
pub fn corrupt_corpus(
    sentences: &[SentenceRecord],
    lexicon: &MisspellingLexicon,
    config: &CorruptionConfig,
    word_vocab: &Vocabulary,
    char_vocab: &Vocabulary,
    keyboard: &KeyboardMap,
) -> (Vec<ParallelExample>, CorruptionStats) {
    let mut stats = CorruptionStats {
        sentences: sentences.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(sentences.len());
    for (i, clean) in sentences.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let ex = corrupt_sentence(clean, lexicon, config, char_vocab, keyboard, &mut rng);
        if ex.corrupted.is_empty() {
            stats.uncorrupted_sentences += 1;
        }
        for c in &ex.corrupted {
            stats.corrupted_positions += 1;
            match c.source {
                NoiseSource::NaturalLexicon => stats.natural += 1,
                NoiseSource::Synthetic(_) => stats.synthetic += 1,
            }
            match classify_misspelling(&ex.noisy[c.pos], word_vocab) {
                MisspellingClass::RealWord => stats.real_word += 1,
                MisspellingClass::NonWord => stats.non_word += 1,
            }
        }
        out.push(ex);
    }
    (out, stats)
}

/// JSON-lines dataset IO: one `ParallelExample` per line.
pub fn write_dataset(path: &Path, examples: &[ParallelExample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, ex)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ParallelExample>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
