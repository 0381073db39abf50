//! End-to-end pipeline: corpus build, corruption, training, evaluation, and
//! the ablation matrix, driven by one TOML config and recorded in a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spellforge_core::autodiff::EncoderConfig;
use spellforge_core::corpus::{
    build_word_vocab, derive_char_vocab, filter_sentences, read_corpus, split_corpus,
    write_sentences, SplitSpec, Vocabulary,
};
use spellforge_core::eval::{MetricsReport, ReportFormat};
use spellforge_core::models::{
    evaluate_model, mlm_pretrain, save_checkpoint, train, Arch, MlmConfig, Model, Resources,
    TrainConfig,
};
use spellforge_core::noise::{
    corrupt_corpus, split_known, write_dataset, CorruptionConfig, KeyboardMap,
    MisspellingLexicon, ParallelExample,
};
use spellforge_core::tokenize::{train_subword, SubwordModel};

use crate::progress;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or unusable inputs: exit code 2.
    Config(String),
    /// A pipeline stage failed: exit code 3.
    Stage { stage: String, message: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Stage { stage, message } => write!(f, "stage {stage} failed: {message}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}

pub fn stage_err<E: std::fmt::Display>(stage: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Stage { stage: stage.to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub corpus: CorpusParams,
    #[serde(default)]
    pub corruption: CorruptionParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub mlm: MlmParams,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub lexicons: Vec<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub max_vocab_size: usize,
    pub max_sentence_len: usize,
    pub max_word_len: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            max_vocab_size: 2000,
            max_sentence_len: 200,
            max_word_len: 20,
            dev_sentences: 100,
            test_sentences: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionParams {
    pub sigma: f64,
    /// Synthetic-noise probability for the *training* set only; dev and test
    /// always corrupt from the natural lexicon alone.
    pub synthetic_fraction: f64,
    pub known_fraction: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        CorruptionParams { sigma: 0.2, synthetic_fraction: 0.0, known_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub arch: String,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub subword_vocab_size: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            arch: "wordchar".into(),
            hidden_size: 128,
            num_layers: 2,
            num_heads: 4,
            max_seq_len: 256,
            dropout: 0.1,
            subword_vocab_size: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmParams {
    pub enabled: bool,
    pub steps: usize,
    pub mask_rate: f64,
    pub batch_size: usize,
    pub base_lr: f64,
}

impl Default for MlmParams {
    fn default() -> Self {
        MlmParams { enabled: false, steps: 200, mask_rate: 0.15, batch_size: 16, base_lr: 5e-5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub beta: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 10, batch_size: 16, base_lr: 5e-5, beta: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub split: u64,
    pub corruption: u64,
    pub model: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 1, corruption: 2, model: 3 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths resolve against the config file's directory.
        if let Some(dir) = path.parent() {
            cfg.paths.corpus = resolve(dir, &cfg.paths.corpus);
            cfg.paths.lexicons = cfg.paths.lexicons.iter().map(|p| resolve(dir, p)).collect();
            cfg.paths.workdir = resolve(dir, &cfg.paths.workdir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !self.paths.corpus.is_file() {
            return Err(CliError::Config(format!(
                "corpus file not found: {}",
                self.paths.corpus.display()
            )));
        }
        if self.paths.lexicons.is_empty() {
            return Err(CliError::Config("at least one lexicon file is required".into()));
        }
        for p in &self.paths.lexicons {
            if !p.is_file() {
                return Err(CliError::Config(format!("lexicon file not found: {}", p.display())));
            }
        }
        Arch::parse(&self.model.arch)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.corruption.synthetic_fraction) {
            return Err(CliError::Config("synthetic_fraction must be in [0,1]".into()));
        }
        if !(0.0 < self.corruption.known_fraction && self.corruption.known_fraction <= 1.0) {
            return Err(CliError::Config("known_fraction must be in (0,1]".into()));
        }
        self.encoder_config(8).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex(&h.finalize())
    }

    fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(
            self.model.hidden_size,
            self.model.num_layers,
            self.model.num_heads,
            self.model.max_seq_len,
            vocab_size,
        );
        c.dropout_rate = self.model.dropout;
        c
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ms: u128,
}

/// Shared data artifacts produced by the corpus/corruption stages.
pub struct PreparedData {
    pub word_vocab: Vocabulary,
    pub char_vocab: Vocabulary,
    pub train_natural: Vec<ParallelExample>,
    /// Train set with the configured synthetic fraction (equals
    /// `train_natural` when synthetic_fraction is 0).
    pub train_mixed: Vec<ParallelExample>,
    pub dev: Vec<ParallelExample>,
    pub test: Vec<ParallelExample>,
    pub train_clean: Vec<spellforge_core::corpus::SentenceRecord>,
    pub stages: Vec<StageRecord>,
}

pub fn prepare_data(cfg: &PipelineConfig, workdir: &Path) -> Result<PreparedData, CliError> {
    let mut stages = Vec::new();
    let run = |name: &str,
                   stages: &mut Vec<StageRecord>,
                   f: &mut dyn FnMut() -> Result<(), CliError>|
     -> Result<(), CliError> {
        let ((), ms) = progress::stage(name, f)?;
        stages.push(StageRecord { name: name.to_string(), ms });
        Ok(())
    };

    // build-vocab
    let mut word_vocab: Option<Vocabulary> = None;
    let mut sentences = Vec::new();
    run("build-vocab", &mut stages, &mut || {
        let raw = read_corpus(&cfg.paths.corpus).map_err(stage_err("build-vocab"))?;
        let wv =
            build_word_vocab(&raw, cfg.corpus.max_vocab_size).map_err(stage_err("build-vocab"))?;
        sentences = filter_sentences(
            raw,
            &wv,
            cfg.corpus.max_sentence_len,
            cfg.corpus.max_word_len,
        );
        wv.save(&workdir.join("word.vocab")).map_err(stage_err("build-vocab"))?;
        let cv = derive_char_vocab(&wv);
        cv.save(&workdir.join("char.vocab")).map_err(stage_err("build-vocab"))?;
        word_vocab = Some(wv);
        Ok(())
    })?;
    let word_vocab = word_vocab.unwrap();
    let char_vocab = derive_char_vocab(&word_vocab);

    // split
    let mut splits = None;
    run("split", &mut stages, &mut || {
        let spec = SplitSpec {
            seed: cfg.seeds.split,
            dev_size: cfg.corpus.dev_sentences,
            test_size: cfg.corpus.test_sentences,
        };
        let (train, dev, test) =
            split_corpus(std::mem::take(&mut sentences), &spec).map_err(stage_err("split"))?;
        write_sentences(&workdir.join("train.txt"), &train).map_err(stage_err("split"))?;
        write_sentences(&workdir.join("dev.txt"), &dev).map_err(stage_err("split"))?;
        write_sentences(&workdir.join("test.txt"), &test).map_err(stage_err("split"))?;
        splits = Some((train, dev, test));
        Ok(())
    })?;
    let (train_clean, dev_clean, test_clean) = splits.unwrap();

    // corrupt
    let keyboard = KeyboardMap::qwerty();
    let mut datasets = None;
    run("corrupt", &mut stages, &mut || {
        let (lexicon, _) = MisspellingLexicon::load_files(&cfg.paths.lexicons)
            .map_err(stage_err("corrupt"))?;
        let (known, full) =
            split_known(&lexicon, cfg.corruption.known_fraction, cfg.seeds.corruption);
        let base = CorruptionConfig {
            sigma: cfg.corruption.sigma,
            synthetic_fraction: 0.0,
            seed: cfg.seeds.corruption,
            max_word_len: cfg.corpus.max_word_len,
        };
        let natural_cfg = base;
        let mixed_cfg = CorruptionConfig {
            synthetic_fraction: cfg.corruption.synthetic_fraction,
            ..base
        };
        let (train_natural, _) =
            corrupt_corpus(&train_clean, &known, &natural_cfg, &word_vocab, &char_vocab, &keyboard);
        let train_mixed = if cfg.corruption.synthetic_fraction > 0.0 {
            corrupt_corpus(&train_clean, &known, &mixed_cfg, &word_vocab, &char_vocab, &keyboard).0
        } else {
            train_natural.clone()
        };
        // Dev uses the known split; test the full lexicon, so it contains
        // held-out misspellings.
        let dev_cfg = CorruptionConfig { seed: cfg.seeds.corruption + 1, ..base };
        let test_cfg = CorruptionConfig { seed: cfg.seeds.corruption + 2, ..base };
        let (dev, _) =
            corrupt_corpus(&dev_clean, &known, &dev_cfg, &word_vocab, &char_vocab, &keyboard);
        let (test, _) =
            corrupt_corpus(&test_clean, &full, &test_cfg, &word_vocab, &char_vocab, &keyboard);
        write_dataset(&workdir.join("train.jsonl"), &train_mixed).map_err(stage_err("corrupt"))?;
        write_dataset(&workdir.join("dev.jsonl"), &dev).map_err(stage_err("corrupt"))?;
        write_dataset(&workdir.join("test.jsonl"), &test).map_err(stage_err("corrupt"))?;
        datasets = Some((train_natural, train_mixed, dev, test));
        Ok(())
    })?;
    let (train_natural, train_mixed, dev, test) = datasets.unwrap();

    Ok(PreparedData {
        word_vocab,
        char_vocab,
        train_natural,
        train_mixed,
        dev,
        test,
        train_clean,
        stages,
    })
}

/// One training arm: architecture plus data/pretraining variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmSpec {
    pub arch: Arch,
    /// Train on the synthetic-augmented set ("+rand" suffix).
    pub random_char: bool,
    /// Initialize the subword encoder from MLM pretraining ("+mlm" suffix).
    pub mlm: bool,
}

impl ArmSpec {
    pub fn parse(s: &str) -> Result<ArmSpec, CliError> {
        let mut parts = s.split('+');
        let arch = Arch::parse(parts.next().unwrap_or(""))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut arm = ArmSpec { arch, random_char: false, mlm: false };
        for p in parts {
            match p {
                "rand" => arm.random_char = true,
                "mlm" => arm.mlm = true,
                other => {
                    return Err(CliError::Config(format!("unknown arm modifier +{other}")))
                }
            }
        }
        if arm.mlm && arm.arch != Arch::Subword {
            return Err(CliError::Config("+mlm applies only to the subword arch".into()));
        }
        Ok(arm)
    }

    pub fn name(&self) -> String {
        let mut s = self.arch.name().to_string();
        if self.random_char {
            s.push_str("+rand");
        }
        if self.mlm {
            s.push_str("+mlm");
        }
        s
    }
}

pub struct ArmResult {
    pub name: String,
    pub dev: MetricsReport,
    pub test: MetricsReport,
}

/// Trains one arm on the prepared data and evaluates it on dev and test.
pub fn run_arm(
    cfg: &PipelineConfig,
    data: &PreparedData,
    arm: &ArmSpec,
    workdir: &Path,
) -> Result<ArmResult, CliError> {
    let max_word_len = cfg.corpus.max_word_len;
    let enc = |vocab: usize| cfg.encoder_config(vocab);
    let subword_model: Option<SubwordModel> = if arm.arch == Arch::Subword {
        let model = train_subword(&data.train_clean, cfg.model.subword_vocab_size)
            .map_err(stage_err("train-subword"))?;
        model
            .save(&workdir.join(format!("{}.subword", arm.name())))
            .map_err(stage_err("train-subword"))?;
        Some(model)
    } else {
        None
    };

    let mut model: Model<f32> = match arm.arch {
        Arch::Subword => Model::new_subword(
            enc(0),
            &data.word_vocab,
            subword_model.as_ref().unwrap(),
            cfg.seeds.model,
        )
        .map_err(stage_err("train"))?,
        Arch::Word => Model::new_word_char(
            Some(enc(0)),
            None,
            &data.word_vocab,
            &data.char_vocab,
            max_word_len,
            cfg.seeds.model,
        )
        .map_err(stage_err("train"))?,
        Arch::Char => Model::new_word_char(
            None,
            Some(enc(0)),
            &data.word_vocab,
            &data.char_vocab,
            max_word_len,
            cfg.seeds.model,
        )
        .map_err(stage_err("train"))?,
        Arch::WordChar => Model::new_word_char(
            Some(enc(0)),
            Some(enc(0)),
            &data.word_vocab,
            &data.char_vocab,
            max_word_len,
            cfg.seeds.model,
        )
        .map_err(stage_err("train"))?,
    };

    if arm.mlm {
        let sm = subword_model.as_ref().unwrap();
        let mlm_cfg = MlmConfig {
            mask_rate: cfg.mlm.mask_rate,
            steps: cfg.mlm.steps,
            batch_size: cfg.mlm.batch_size,
            base_lr: cfg.mlm.base_lr,
            seed: cfg.seeds.model,
        };
        let outcome = mlm_pretrain::<f32>(
            model.sub_cfg.as_ref().unwrap(),
            sm,
            &data.train_clean,
            &mlm_cfg,
        )
        .map_err(stage_err("pretrain-mlm"))?;
        outcome.params.copy_prefix_into("sub.", &mut model.params);
    }

    let resources = Resources {
        word_vocab: data.word_vocab.clone(),
        char_vocab: data.char_vocab.clone(),
        subword_model,
        max_word_len,
    };
    let train_set = if arm.random_char { &data.train_mixed } else { &data.train_natural };
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        base_lr: cfg.train.base_lr,
        seed: cfg.seeds.model,
        beta: cfg.train.beta,
        stop_at_train_accuracy: None,
    };
    let outcome =
        train(model, train_set, &data.dev, &resources, &train_cfg).map_err(stage_err("train"))?;
    if let Some(step) = outcome.diverged_at {
        progress::emit(
            "train",
            "diverged",
            serde_json::json!({ "arm": arm.name(), "step": step }),
        );
    }
    for rec in &outcome.log {
        progress::emit("train", "epoch", serde_json::to_value(rec).unwrap());
    }
    let model = outcome.model;
    save_checkpoint(&model, &workdir.join(format!("{}.spfg", arm.name())))
        .map_err(stage_err("train"))?;

    let dev = evaluate_model(&model, &resources, &data.dev, cfg.train.beta)
        .map_err(stage_err("eval"))?;
    let test = evaluate_model(&model, &resources, &data.test, cfg.train.beta)
        .map_err(stage_err("eval"))?;
    Ok(ArmResult { name: arm.name(), dev, test })
}

fn write_manifest(
    workdir: &Path,
    cfg: &PipelineConfig,
    stages: Vec<StageRecord>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: cfg.seeds.clone(),
        stages,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(workdir.join("manifest.json"), json + "\n")
        .map_err(stage_err("manifest"))?;
    Ok(())
}

/// Returns true when a manifest with the same config hash already exists.
fn is_up_to_date(workdir: &Path, cfg: &PipelineConfig) -> bool {
    let Ok(text) = std::fs::read_to_string(workdir.join("manifest.json")) else {
        return false;
    };
    serde_json::from_str::<Manifest>(&text)
        .map(|m| m.config_hash == cfg.hash())
        .unwrap_or(false)
}

pub fn run_pipeline(config_path: &Path, force: bool) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(config_path)?;
    let workdir = cfg.paths.workdir.clone();
    std::fs::create_dir_all(&workdir).map_err(stage_err("setup"))?;
    if !force && is_up_to_date(&workdir, &cfg) {
        progress::emit("pipeline", "up-to-date", serde_json::json!({}));
        println!("{}: up to date (use --force to re-run)", workdir.display());
        return Ok(());
    }

    let mut data = prepare_data(&cfg, &workdir)?;
    let arm = ArmSpec {
        arch: Arch::parse(&cfg.model.arch).map_err(|e| CliError::Config(e.to_string()))?,
        random_char: cfg.corruption.synthetic_fraction > 0.0,
        mlm: cfg.mlm.enabled,
    };
    let (result, ms) = progress::stage("train", || run_arm(&cfg, &data, &arm, &workdir))?;
    data.stages.push(StageRecord { name: "train".into(), ms });

    let ((), ms) = progress::stage("report", || {
        for (name, report) in [("dev", &result.dev), ("test", &result.test)] {
            for (fmt, ext) in [
                (ReportFormat::TextTable, "txt"),
                (ReportFormat::Csv, "csv"),
                (ReportFormat::Json, "json"),
            ] {
                report
                    .write(&workdir.join(format!("report.{name}.{ext}")), fmt)
                    .map_err(stage_err("report"))?;
            }
        }
        Ok(())
    })?;
    data.stages.push(StageRecord { name: "report".into(), ms });
    write_manifest(&workdir, &cfg, data.stages)?;
    print!("{}", result.test.render(ReportFormat::TextTable));
    Ok(())
}

/// Renders the arm comparison in the dev/test × Acc/P/R/F layout.
pub fn ablation_table(results: &[ArmResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "arm", "dAcc", "dP", "dR", "dF0.5", "tAcc", "tP", "tR", "tF0.5"
    );
    for r in results {
        let (d, t) = (&r.dev.overall, &r.test.overall);
        let _ = writeln!(
            out,
            "{:<16} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.name, d.accuracy, d.precision, d.recall, d.f_beta,
            t.accuracy, t.precision, t.recall, t.f_beta
        );
    }
    out
}

pub fn run_ablation(config_path: &Path, arms: &[String], force: bool) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(config_path)?;
    let specs: Vec<ArmSpec> =
        arms.iter().map(|a| ArmSpec::parse(a)).collect::<Result<_, _>>()?;
    if specs.is_empty() {
        return Err(CliError::Config("ablate needs at least one arm".into()));
    }
    let workdir = cfg.paths.workdir.clone();
    std::fs::create_dir_all(&workdir).map_err(stage_err("setup"))?;
    if !force && is_up_to_date(&workdir, &cfg) {
        progress::emit("ablate", "up-to-date", serde_json::json!({}));
        println!("{}: up to date (use --force to re-run)", workdir.display());
        return Ok(());
    }

    let mut data = prepare_data(&cfg, &workdir)?;
    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        let name = spec.name();
        let (result, ms) =
            progress::stage(&format!("train:{name}"), || run_arm(&cfg, &data, spec, &workdir))?;
        data.stages.push(StageRecord { name: format!("train:{name}"), ms });
        results.push(result);
    }

    let table = ablation_table(&results);
    std::fs::write(workdir.join("ablation.txt"), &table).map_err(stage_err("report"))?;
    let detail: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "arm": r.name,
                "dev": r.dev,
                "test": r.test,
            })
        })
        .collect();
    std::fs::write(
        workdir.join("ablation.json"),
        serde_json::to_string_pretty(&detail).unwrap() + "\n",
    )
    .map_err(stage_err("report"))?;
    write_manifest(&workdir, &cfg, data.stages)?;
    print!("{table}");
    Ok(())
}

pub fn report_format(s: &str) -> Result<ReportFormat, CliError> {
    match s {
        "text" | "text-table" => Ok(ReportFormat::TextTable),
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(CliError::Config(format!("unknown report format {other}"))),
    }
}
