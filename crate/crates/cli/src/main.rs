mod pipeline;
mod progress;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use pipeline::{report_format, run_ablation, run_pipeline, stage_err, CliError};
use spellforge_core::autodiff::EncoderConfig;
use spellforge_core::corpus::{
    build_word_vocab, derive_char_vocab, filter_sentences, read_corpus, split_corpus,
    write_sentences, SentenceRecord, SplitSpec, VocabKind, Vocabulary,
};
use spellforge_core::eval::{evaluate, ReportCounters};
use spellforge_core::models::{
    correct_sentence, load_checkpoint, mlm_pretrain, save_checkpoint, train, Arch, MlmConfig,
    Model, Resources, TrainConfig,
};
use spellforge_core::noise::{
    corrupt_corpus, read_dataset, write_dataset, CorruptionConfig, KeyboardMap,
    MisspellingLexicon,
};
use spellforge_core::tokenize::{train_subword, SubwordModel};

#[derive(Parser)]
#[command(name = "spellforge", version, about = "Stand-alone spelling correction laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct EncoderArgs {
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    max_seq: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

impl EncoderArgs {
    fn config(&self) -> EncoderConfig {
        let mut c = EncoderConfig::new(self.hidden, self.layers, self.heads, self.max_seq, 8);
        c.dropout_rate = self.dropout;
        c
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build word and character vocabularies from a tokenized corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split a corpus into train/dev/test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: usize,
        #[arg(long)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Corrupt a clean corpus into a parallel noisy dataset.
    Corrupt {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        lexicon: Vec<PathBuf>,
        #[arg(long)]
        word_vocab: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        synthetic_fraction: f64,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_word_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a subword segmentation model.
    TrainSubword {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 500)]
        target_size: usize,
        /// Output prefix; writes <prefix>.vocab and <prefix>.merges.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Masked-subword pretraining of the subword encoder.
    PretrainMlm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        subword_prefix: PathBuf,
        #[arg(long)]
        word_vocab: PathBuf,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-5)]
        lr: f64,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a corrector.
    Train {
        #[arg(long, value_parser = ["word", "char", "wordchar", "subword"])]
        arch: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        vocab_dir: PathBuf,
        #[arg(long)]
        subword_prefix: Option<PathBuf>,
        /// Checkpoint whose subword encoder initializes this model.
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-5)]
        lr: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_word_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct whitespace-tokenized text, line by line.
    Correct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab_dir: PathBuf,
        #[arg(long)]
        subword_prefix: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        max_word_len: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a gold dataset.
    Eval {
        /// Dataset JSON-lines with gold and noisy tokens.
        #[arg(long)]
        gold: PathBuf,
        /// Predictions: one corrected sentence per line, aligned by index.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        word_vocab: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline from one TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train and compare several arms on shared data.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated arms, e.g. word,char,wordchar,subword+mlm.
        #[arg(long, value_delimiter = ',', required = true)]
        arms: Vec<String>,
        #[arg(long)]
        force: bool,
    },
}

fn load_resources(
    vocab_dir: &PathBuf,
    subword_prefix: Option<&PathBuf>,
    max_word_len: usize,
) -> Result<Resources, CliError> {
    let word_vocab = Vocabulary::load(&vocab_dir.join("word.vocab"), VocabKind::Word)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let char_vocab = Vocabulary::load(&vocab_dir.join("char.vocab"), VocabKind::Char)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let subword_model = match subword_prefix {
        Some(p) => Some(SubwordModel::load(p).map_err(|e| CliError::Config(e.to_string()))?),
        None => None,
    };
    Ok(Resources { word_vocab, char_vocab, subword_model, max_word_len })
}

fn read_lines(path: &PathBuf) -> Result<Vec<SentenceRecord>, CliError> {
    read_corpus(path).map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::BuildVocab { corpus, max_size, out_dir } => {
            let sentences = read_lines(&corpus)?;
            std::fs::create_dir_all(&out_dir).map_err(stage_err("build-vocab"))?;
            let wv = build_word_vocab(&sentences, max_size).map_err(stage_err("build-vocab"))?;
            let cv = derive_char_vocab(&wv);
            wv.save(&out_dir.join("word.vocab")).map_err(stage_err("build-vocab"))?;
            cv.save(&out_dir.join("char.vocab")).map_err(stage_err("build-vocab"))?;
            progress::emit(
                "build-vocab",
                "done",
                serde_json::json!({ "words": wv.len(), "chars": cv.len() }),
            );
            Ok(())
        }
        Cmd::Split { corpus, dev, test, seed, out_dir } => {
            let sentences = read_lines(&corpus)?;
            std::fs::create_dir_all(&out_dir).map_err(stage_err("split"))?;
            let spec = SplitSpec { seed, dev_size: dev, test_size: test };
            let (train, dev, test) =
                split_corpus(sentences, &spec).map_err(stage_err("split"))?;
            write_sentences(&out_dir.join("train.txt"), &train).map_err(stage_err("split"))?;
            write_sentences(&out_dir.join("dev.txt"), &dev).map_err(stage_err("split"))?;
            write_sentences(&out_dir.join("test.txt"), &test).map_err(stage_err("split"))?;
            Ok(())
        }
        Cmd::Corrupt {
            corpus,
            lexicon,
            word_vocab,
            sigma,
            synthetic_fraction,
            seed,
            max_word_len,
            out,
        } => {
            let wv = Vocabulary::load(&word_vocab, VocabKind::Word)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let cv = derive_char_vocab(&wv);
            let sentences = filter_sentences(read_lines(&corpus)?, &wv, usize::MAX, max_word_len);
            let (lex, stats) =
                MisspellingLexicon::load_files(&lexicon).map_err(stage_err("corrupt"))?;
            progress::emit("corrupt", "lexicon", serde_json::to_value(&stats).unwrap());
            let cfg = CorruptionConfig { sigma, synthetic_fraction, seed, max_word_len };
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let (examples, stats) =
                corrupt_corpus(&sentences, &lex, &cfg, &wv, &cv, &KeyboardMap::qwerty());
            write_dataset(&out, &examples).map_err(stage_err("corrupt"))?;
            progress::emit("corrupt", "stats", serde_json::to_value(&stats).unwrap());
            Ok(())
        }
        Cmd::TrainSubword { corpus, target_size, out_prefix } => {
            let sentences = read_lines(&corpus)?;
            let model =
                train_subword(&sentences, target_size).map_err(stage_err("train-subword"))?;
            model.save(&out_prefix).map_err(stage_err("train-subword"))?;
            progress::emit(
                "train-subword",
                "done",
                serde_json::json!({ "vocab": model.vocab().len(), "merges": model.merges().len() }),
            );
            Ok(())
        }
        Cmd::PretrainMlm {
            corpus,
            subword_prefix,
            word_vocab,
            encoder,
            steps,
            batch_size,
            lr,
            mask_rate,
            seed,
            out,
        } => {
            let wv = Vocabulary::load(&word_vocab, VocabKind::Word)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let sm = SubwordModel::load(&subword_prefix)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let sentences = read_lines(&corpus)?;
            let cfg = MlmConfig { mask_rate, steps, batch_size, base_lr: lr, seed };
            let mut model: Model<f32> = Model::new_subword(encoder.config(), &wv, &sm, seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let outcome =
                mlm_pretrain::<f32>(model.sub_cfg.as_ref().unwrap(), &sm, &sentences, &cfg)
                    .map_err(stage_err("pretrain-mlm"))?;
            outcome.params.copy_prefix_into("sub.", &mut model.params);
            save_checkpoint(&model, &out).map_err(stage_err("pretrain-mlm"))?;
            progress::emit(
                "pretrain-mlm",
                "done",
                serde_json::json!({
                    "first_loss": outcome.loss_log.first(),
                    "last_loss": outcome.loss_log.last(),
                }),
            );
            Ok(())
        }
        Cmd::Train {
            arch,
            data,
            dev,
            vocab_dir,
            subword_prefix,
            init_from,
            encoder,
            epochs,
            batch_size,
            lr,
            beta,
            seed,
            max_word_len,
            out,
        } => {
            let arch = Arch::parse(&arch).map_err(|e| CliError::Config(e.to_string()))?;
            if arch == Arch::Subword && subword_prefix.is_none() {
                return Err(CliError::Config("subword arch requires --subword-prefix".into()));
            }
            let res = load_resources(&vocab_dir, subword_prefix.as_ref(), max_word_len)?;
            let cfg = encoder.config();
            let mut model: Model<f32> = match arch {
                Arch::Subword => Model::new_subword(
                    cfg,
                    &res.word_vocab,
                    res.subword_model.as_ref().unwrap(),
                    seed,
                ),
                Arch::Word => Model::new_word_char(
                    Some(cfg),
                    None,
                    &res.word_vocab,
                    &res.char_vocab,
                    max_word_len,
                    seed,
                ),
                Arch::Char => Model::new_word_char(
                    None,
                    Some(cfg),
                    &res.word_vocab,
                    &res.char_vocab,
                    max_word_len,
                    seed,
                ),
                Arch::WordChar => Model::new_word_char(
                    Some(cfg),
                    Some(cfg),
                    &res.word_vocab,
                    &res.char_vocab,
                    max_word_len,
                    seed,
                ),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(init) = init_from {
                let pre: Model<f32> =
                    load_checkpoint(&init, Some(&model.word_vocab_hash), Some(&model.aux_hash))
                        .map_err(stage_err("train"))?;
                pre.params.copy_prefix_into("sub.", &mut model.params);
            }
            let train_set = read_dataset(&data).map_err(stage_err("train"))?;
            let dev_set = match dev {
                Some(p) => read_dataset(&p).map_err(stage_err("train"))?,
                None => Vec::new(),
            };
            let tc = TrainConfig {
                epochs,
                batch_size,
                base_lr: lr,
                seed,
                beta,
                stop_at_train_accuracy: None,
            };
            let outcome =
                train(model, &train_set, &dev_set, &res, &tc).map_err(stage_err("train"))?;
            for rec in &outcome.log {
                progress::emit("train", "epoch", serde_json::to_value(rec).unwrap());
            }
            if let Some(step) = outcome.diverged_at {
                progress::emit("train", "diverged", serde_json::json!({ "step": step }));
                save_checkpoint(&outcome.model, &out).map_err(stage_err("train"))?;
                return Err(CliError::Stage {
                    stage: "train".into(),
                    message: format!("diverged at step {step}; last good checkpoint saved"),
                });
            }
            save_checkpoint(&outcome.model, &out).map_err(stage_err("train"))?;
            Ok(())
        }
        Cmd::Correct { model, vocab_dir, subword_prefix, max_word_len, input, out } => {
            let res = load_resources(&vocab_dir, subword_prefix.as_ref(), max_word_len)?;
            let aux = match &res.subword_model {
                Some(sm) => sm.hash(),
                None => res.char_vocab.hash(),
            };
            let m: Model<f32> =
                load_checkpoint(&model, Some(&res.word_vocab.hash()), Some(&aux))
                    .map_err(stage_err("correct"))?;
            let text =
                std::fs::read_to_string(&input).map_err(|e| CliError::Config(e.to_string()))?;
            let mut counters = ReportCounters::default();
            let mut output = String::new();
            for line in text.lines() {
                let tokens: Vec<String> =
                    line.split_whitespace().map(str::to_string).collect();
                let fixed = correct_sentence(&m, &res, &tokens, &mut counters);
                output.push_str(&fixed.join(" "));
                output.push('\n');
            }
            std::fs::write(&out, output).map_err(stage_err("correct"))?;
            progress::emit("correct", "done", serde_json::to_value(&counters).unwrap());
            Ok(())
        }
        Cmd::Eval { gold, pred, word_vocab, beta, format, out } => {
            let wv = Vocabulary::load(&word_vocab, VocabKind::Word)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let dataset = read_dataset(&gold).map_err(stage_err("eval"))?;
            let pred_text =
                std::fs::read_to_string(&pred).map_err(|e| CliError::Config(e.to_string()))?;
            let pred_lines: Vec<Vec<String>> = pred_text
                .lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect())
                .collect();
            if pred_lines.len() != dataset.len() {
                return Err(CliError::Config(format!(
                    "prediction file has {} lines but the dataset has {} examples",
                    pred_lines.len(),
                    dataset.len()
                )));
            }
            let mut triples = Vec::new();
            for (ex, pred) in dataset.iter().zip(&pred_lines) {
                if pred.len() != ex.noisy.len() {
                    return Err(CliError::Config(
                        "prediction/sentence token count mismatch".into(),
                    ));
                }
                for ((n, p), g) in ex.noisy.iter().zip(pred).zip(&ex.clean.tokens) {
                    triples.push((n.clone(), p.clone(), g.clone()));
                }
            }
            let report = evaluate(
                triples.iter().map(|(n, p, g)| (n.as_str(), p.as_str(), g.as_str())),
                &wv,
                beta,
                ReportCounters::default(),
            )
            .map_err(stage_err("eval"))?;
            let fmt = report_format(&format)?;
            match out {
                Some(p) => report.write(&p, fmt).map_err(stage_err("eval"))?,
                None => print!("{}", report.render(fmt)),
            }
            Ok(())
        }
        Cmd::Run { config, force } => run_pipeline(&config, force),
        Cmd::Ablate { config, arms, force } => run_ablation(&config, &arms, force),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
