//! The corrector architectures (char-only, word-only, word+char, subword
//! BIO2 tagger), training, masked-LM pretraining, and checkpointing.

mod checkpoint;
mod mlm;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mlm::{apply_mlm_masking, mlm_pretrain, MaskAction, MlmConfig, MlmOutcome};
pub use train::{evaluate_model, train, EpochRecord, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    encoder_forward, init_encoder_params, EncoderConfig, Graph, ParamSet, Scalar, Tid,
};
use crate::autodiff::BoundParams;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::ReportCounters;
use crate::tokenize::{
    bio2_decode, bio2_labels, encode_sentence, Bio2Tag, EncodedSentence, Role, SubwordModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Char,
    Word,
    WordChar,
    Subword,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Char => "char",
            Arch::Word => "word",
            Arch::WordChar => "wordchar",
            Arch::Subword => "subword",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "char" => Ok(Arch::Char),
            "word" => Ok(Arch::Word),
            "wordchar" => Ok(Arch::WordChar),
            "subword" => Ok(Arch::Subword),
            other => Err(Error::Config(format!("unknown architecture {other}"))),
        }
    }
}

/// Everything needed to run a model besides its parameters.
pub struct Resources {
    pub word_vocab: Vocabulary,
    pub char_vocab: Vocabulary,
    pub subword_model: Option<SubwordModel>,
    pub max_word_len: usize,
}

impl Resources {
    pub fn encode(&self, noisy: &[String]) -> EncodedSentence {
        encode_sentence(
            noisy,
            &self.word_vocab,
            &self.char_vocab,
            self.subword_model.as_ref(),
            self.max_word_len,
        )
    }
}

/// One corrector: architecture, encoder configs, and parameters. The output
/// label space is the word vocabulary minus its reserved symbols, so the
/// model can never emit `<pad>`/`<unk>`.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub arch: Arch,
    pub word_cfg: Option<EncoderConfig>,
    pub char_cfg: Option<EncoderConfig>,
    pub sub_cfg: Option<EncoderConfig>,
    pub n_specials: usize,
    pub n_labels: usize,
    pub word_vocab_hash: String,
    /// Hash of the char vocabulary (word/char routes) or the subword model.
    pub aux_hash: String,
    pub step: u64,
    pub params: ParamSet<F>,
}

impl<F: Scalar> Model<F> {
    /// Word/char/word+char family. Pass `None` for the branch an ablation
    /// drops; at least one branch is required. `vocab_size` and, for the char
    /// branch, `max_seq_len` are overwritten from the vocabularies.
    pub fn new_word_char(
        word_cfg: Option<EncoderConfig>,
        char_cfg: Option<EncoderConfig>,
        word_vocab: &Vocabulary,
        char_vocab: &Vocabulary,
        max_word_len: usize,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        let arch = match (&word_cfg, &char_cfg) {
            (Some(_), Some(_)) => Arch::WordChar,
            (Some(_), None) => Arch::Word,
            (None, Some(_)) => Arch::Char,
            (None, None) => {
                return Err(Error::Config("model needs at least one encoder branch".into()))
            }
        };
        let mut word_cfg = word_cfg;
        if let Some(c) = &mut word_cfg {
            c.vocab_size = word_vocab.len();
            c.validate()?;
        }
        let mut char_cfg = char_cfg;
        if let Some(c) = &mut char_cfg {
            c.vocab_size = char_vocab.len();
            // [CLS] plus up to max_word_len characters.
            c.max_seq_len = max_word_len + 1;
            c.validate()?;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        if let Some(c) = &word_cfg {
            init_encoder_params(&mut params, "word", c, &mut rng);
        }
        if let Some(c) = &char_cfg {
            init_encoder_params(&mut params, "char", c, &mut rng);
        }
        let width = word_cfg.map_or(0, |c| c.hidden_size) + char_cfg.map_or(0, |c| c.hidden_size);
        let n_labels = word_vocab.n_symbols();
        params.add_trunc_normal("out.w", width, n_labels, 0.02, &mut rng);
        params.add_zeros("out.b", 1, n_labels);
        Ok(Model {
            arch,
            word_cfg,
            char_cfg,
            sub_cfg: None,
            n_specials: word_vocab.n_specials(),
            n_labels,
            word_vocab_hash: word_vocab.hash(),
            aux_hash: char_vocab.hash(),
            step: 0,
            params,
        })
    }

    /// Subword BIO2 tagger over 2·|labels| tags.
    pub fn new_subword(
        mut sub_cfg: EncoderConfig,
        word_vocab: &Vocabulary,
        subword_model: &SubwordModel,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        sub_cfg.vocab_size = subword_model.vocab().len();
        sub_cfg.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_encoder_params(&mut params, "sub", &sub_cfg, &mut rng);
        let n_labels = word_vocab.n_symbols();
        params.add_trunc_normal("out.w", sub_cfg.hidden_size, 2 * n_labels, 0.02, &mut rng);
        params.add_zeros("out.b", 1, 2 * n_labels);
        Ok(Model {
            arch: Arch::Subword,
            word_cfg: None,
            char_cfg: None,
            sub_cfg: Some(sub_cfg),
            n_specials: word_vocab.n_specials(),
            n_labels,
            word_vocab_hash: word_vocab.hash(),
            aux_hash: subword_model.hash(),
            step: 0,
            params,
        })
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            arch: self.arch,
            word_cfg: self.word_cfg,
            char_cfg: self.char_cfg,
            sub_cfg: self.sub_cfg,
            n_specials: self.n_specials,
            n_labels: self.n_labels,
            word_vocab_hash: self.word_vocab_hash.clone(),
            aux_hash: self.aux_hash.clone(),
            step: self.step,
            params: self.params.cast(),
        }
    }

    /// Longest input (words or subwords, per route) the model accepts.
    pub fn max_input_len(&self) -> usize {
        match self.arch {
            Arch::Subword => self.sub_cfg.expect("subword config").max_seq_len,
            _ => self
                .word_cfg
                .or(self.char_cfg)
                .map(|c| c.max_seq_len)
                .unwrap_or(0),
        }
    }

    fn route_len(&self, enc: &EncodedSentence) -> usize {
        match self.arch {
            Arch::Subword => enc.subword_ids.len(),
            Arch::Char | Arch::Word | Arch::WordChar => enc.word_ids.len(),
        }
    }

    /// True when the encoded sentence fits the encoder's length budget. The
    /// word route is bounded by the word encoder; the char route is bounded
    /// per word by tokenize-stage truncation and never rejects here.
    pub fn fits(&self, enc: &EncodedSentence) -> bool {
        match self.arch {
            Arch::Char => true,
            _ => self.route_len(enc) <= self.max_input_len(),
        }
    }
}

/// Logits for one sentence: `[num_words, n_labels]` for the word/char family,
/// `[num_subwords, 2·n_labels]` for the subword tagger.
pub fn forward<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    bound: &BoundParams,
    enc: &EncodedSentence,
) -> Result<Tid> {
    let h = match model.arch {
        Arch::Subword => {
            let cfg = model.sub_cfg.as_ref().expect("subword config");
            encoder_forward(g, bound, "sub", cfg, &enc.subword_ids, None)?
        }
        _ => {
            let mut h_word = None;
            if let Some(cfg) = &model.word_cfg {
                h_word = Some(encoder_forward(g, bound, "word", cfg, &enc.word_ids, None)?);
            }
            let mut h_char = None;
            if let Some(cfg) = &model.char_cfg {
                // Per-word char encoder; the [CLS] row is the word's spelling
                // representation.
                let mut cls_rows = Vec::with_capacity(enc.char_ids.len());
                for ids in &enc.char_ids {
                    let out = encoder_forward(g, bound, "char", cfg, ids, None)?;
                    cls_rows.push(g.slice_rows(out, 0, 1)?);
                }
                h_char = Some(g.concat_rows(&cls_rows)?);
            }
            match (h_word, h_char) {
                (Some(w), Some(c)) => g.concat_cols(w, c)?,
                (Some(w), None) => w,
                (None, Some(c)) => c,
                (None, None) => unreachable!("constructor guarantees a branch"),
            }
        }
    };
    let proj = g.matmul(h, bound.tid("out.w"))?;
    g.add_row(proj, bound.tid("out.b"))
}

/// Gold class indices for one example, in the model's label space.
pub fn gold_labels<F: Scalar>(
    model: &Model<F>,
    enc: &EncodedSentence,
    clean: &[String],
    word_vocab: &Vocabulary,
) -> Result<Vec<usize>> {
    let gold_ids: Vec<usize> = clean
        .iter()
        .map(|w| {
            word_vocab
                .id_of(w)
                .ok_or_else(|| Error::Config(format!("gold word {w} not in vocabulary")))
        })
        .collect::<Result<_>>()?;
    match model.arch {
        Arch::Subword => {
            let tags = bio2_labels(&enc.word_spans, &gold_ids)?;
            Ok(tags.iter().map(|t| tag_index(model, t)).collect())
        }
        _ => Ok(gold_ids.iter().map(|&id| id - model.n_specials).collect()),
    }
}

fn tag_index<F: Scalar>(model: &Model<F>, tag: &Bio2Tag) -> usize {
    let role = match tag.role {
        Role::B => 0,
        Role::I => 1,
    };
    2 * (tag.word_id - model.n_specials) + role
}

fn tag_of_index<F: Scalar>(model: &Model<F>, idx: usize) -> Bio2Tag {
    Bio2Tag {
        role: if idx % 2 == 0 { Role::B } else { Role::I },
        word_id: idx / 2 + model.n_specials,
    }
}

/// Row-wise argmax; ties go to the lowest index.
fn argmax_rows<F: Scalar>(data: &[F], rows: usize, cols: usize) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// In-place correction of one token sequence. Total: sentences the model
/// cannot encode are returned unchanged and counted as skipped.
pub fn correct_sentence<F: Scalar>(
    model: &Model<F>,
    resources: &Resources,
    noisy: &[String],
    counters: &mut ReportCounters,
) -> Vec<String> {
    if noisy.is_empty() {
        return Vec::new();
    }
    let enc = resources.encode(noisy);
    if !model.fits(&enc) {
        counters.skipped_sentences += 1;
        return noisy.to_vec();
    }
    let mut g: Graph<F> = Graph::eval();
    let bound = model.params.bind(&mut g);
    let logits = forward(model, &mut g, &bound, &enc).expect("eval forward on fitting input");
    let (rows, cols) = g.shape(logits);
    let picks = argmax_rows(g.data(logits), rows, cols);
    let word_ids: Vec<usize> = match model.arch {
        Arch::Subword => {
            let tags: Vec<Bio2Tag> = picks.iter().map(|&i| tag_of_index(model, i)).collect();
            let (ids, dec) = bio2_decode(&tags, &enc.word_spans);
            counters.disagreements += dec.disagreements;
            counters.malformed_roles += dec.malformed_roles;
            ids
        }
        _ => picks.iter().map(|&label| label + model.n_specials).collect(),
    };
    word_ids
        .iter()
        .map(|&id| resources.word_vocab.entry(id).to_string())
        .collect()
}
