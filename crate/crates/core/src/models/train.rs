//! Minibatch training with per-epoch dev evaluation and best-checkpoint
//! selection by dev F-beta.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{correct_sentence, forward, gold_labels, Model, Resources};
use crate::autodiff::{AdamConfig, Graph, OptimizerState, ParamSet, Scalar};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, ReportCounters};
use crate::noise::ParallelExample;
use crate::tokenize::EncodedSentence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub beta: f64,
    /// Stop once train word accuracy reaches this level (capacity runs).
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            base_lr: 5e-5,
            seed: 0,
            beta: 0.5,
            stop_at_train_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub train_accuracy: Option<f64>,
    pub dev_f_beta: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<F> {
    /// The selected (best-dev, or final when no dev set) model.
    pub model: Model<F>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_f_beta: Option<f64>,
    /// Step at which a non-finite loss aborted training, if any.
    pub diverged_at: Option<u64>,
    /// Training sentences dropped for exceeding the encoder length budget.
    pub skipped_sentences: usize,
    pub skipped_steps: usize,
}

fn word_accuracy<F: Scalar>(
    model: &Model<F>,
    resources: &Resources,
    examples: &[ParallelExample],
) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut counters = ReportCounters::default();
    for ex in examples {
        let pred = correct_sentence(model, resources, &ex.noisy, &mut counters);
        for (p, g) in pred.iter().zip(&ex.clean.tokens) {
            total += 1;
            if p == g {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Full dev-set evaluation via the eval module.
pub fn evaluate_model<F: Scalar>(
    model: &Model<F>,
    resources: &Resources,
    examples: &[ParallelExample],
    beta: f64,
) -> Result<MetricsReport> {
    let mut counters = ReportCounters::default();
    let mut triples: Vec<(String, String, String)> = Vec::new();
    for ex in examples {
        let pred = correct_sentence(model, resources, &ex.noisy, &mut counters);
        for ((noisy, p), gold) in ex.noisy.iter().zip(&pred).zip(&ex.clean.tokens) {
            triples.push((noisy.clone(), p.clone(), gold.clone()));
        }
    }
    evaluate(
        triples.iter().map(|(n, p, g)| (n.as_str(), p.as_str(), g.as_str())),
        &resources.word_vocab,
        beta,
        counters,
    )
}

pub fn train<F: Scalar>(
    mut model: Model<F>,
    train_set: &[ParallelExample],
    dev_set: &[ParallelExample],
    resources: &Resources,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut skipped = 0usize;
    let mut encoded: Vec<(EncodedSentence, Vec<usize>)> = Vec::with_capacity(train_set.len());
    for ex in train_set {
        let enc = resources.encode(&ex.noisy);
        if !model.fits(&enc) || ex.noisy.is_empty() {
            skipped += 1;
            continue;
        }
        let labels = gold_labels(&model, &enc, &ex.clean.tokens, &resources.word_vocab)?;
        encoded.push((enc, labels));
    }
    if encoded.is_empty() {
        return Err(Error::Config(
            "every training sentence exceeds the encoder length budget".into(),
        ));
    }

    let n_batches = encoded.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * n_batches;
    let mut opt = OptimizerState::new(
        AdamConfig {
            base_lr: cfg.base_lr,
            total_steps,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamSet<F>, u64)> = None;
    let mut diverged_at = None;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Dropout stream unique per (seed, epoch, batch).
            let dropout_seed = cfg
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((epoch * n_batches + b) as u64);
            let mut g: Graph<F> = Graph::new(true, dropout_seed);
            let bound = model.params.bind(&mut g);
            let mut batch_loss = None;
            for &i in batch {
                let (enc, labels) = &encoded[i];
                let logits = forward(&model, &mut g, &bound, enc)?;
                let keep = vec![true; labels.len()];
                let loss = g.cross_entropy(logits, labels, &keep)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => g.add(acc, loss)?,
                    None => loss,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean = g.scale(total, 1.0 / batch.len() as f64);
            let loss_val = g.scalar_value(mean).to_f64();
            if !loss_val.is_finite() {
                diverged_at = Some(model.step);
                break 'epochs;
            }
            loss_sum += loss_val;
            loss_n += 1;
            let grads = g.backward(mean)?;
            opt.apply(&mut model.params, &bound, &grads);
            model.step += 1;
        }

        let mut rec = EpochRecord {
            epoch,
            mean_loss: loss_sum / loss_n.max(1) as f64,
            lr: opt.current_lr(),
            train_accuracy: None,
            dev_f_beta: None,
            dev_accuracy: None,
        };
        if !dev_set.is_empty() {
            let report = evaluate_model(&model, resources, dev_set, cfg.beta)?;
            rec.dev_f_beta = Some(report.overall.f_beta);
            rec.dev_accuracy = Some(report.overall.accuracy);
            let better = best
                .as_ref()
                .map_or(true, |(_, f, _, _)| report.overall.f_beta > *f);
            if better {
                best = Some((epoch, report.overall.f_beta, model.params.clone(), model.step));
            }
        }
        if let Some(target) = cfg.stop_at_train_accuracy {
            let acc = word_accuracy(&model, resources, train_set);
            rec.train_accuracy = Some(acc);
            if acc >= target {
                log.push(rec);
                break;
            }
        }
        log.push(rec);
    }

    let (best_epoch, best_dev_f_beta) = match &best {
        Some((e, f, params, step)) => {
            let (e, f) = (*e, *f);
            model.params = params.clone();
            model.step = *step;
            (Some(e), Some(f))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_dev_f_beta,
        diverged_at,
        skipped_sentences: skipped,
        skipped_steps: opt.skipped_steps(),
    })
}
