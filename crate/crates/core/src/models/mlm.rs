//! Masked-subword pretraining for the subword encoder: desk-scale analogue
//! of initializing from a pretrained language model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    encoder_forward, init_encoder_params, AdamConfig, EncoderConfig, Graph, OptimizerState,
    ParamSet, Scalar,
};
use crate::corpus::SentenceRecord;
use crate::error::{Error, Result};
use crate::tokenize::{subword_encode, SubwordModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub mask_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            mask_rate: 0.15,
            steps: 100,
            batch_size: 16,
            base_lr: 5e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    /// Replaced by `<mask>` (80%).
    Mask,
    /// Replaced by a random subword (10%).
    Random,
    /// Left as-is but still predicted (10%).
    Unchanged,
}

/// Selects each position with probability `mask_rate`, then applies the
/// 80/10/10 mask/random/unchanged rule. Returns the corrupted ids, the
/// selected positions, and the action taken at each.
pub fn apply_mlm_masking<R: Rng>(
    ids: &[usize],
    mask_rate: f64,
    vocab_len: usize,
    mask_id: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>, Vec<MaskAction>) {
    let mut masked = ids.to_vec();
    let mut selected = Vec::new();
    let mut actions = Vec::new();
    for (i, slot) in masked.iter_mut().enumerate() {
        if rng.gen::<f64>() >= mask_rate {
            continue;
        }
        selected.push(i);
        let r = rng.gen::<f64>();
        let action = if r < 0.8 {
            *slot = mask_id;
            MaskAction::Mask
        } else if r < 0.9 {
            *slot = rng.gen_range(0..vocab_len);
            MaskAction::Random
        } else {
            MaskAction::Unchanged
        };
        actions.push(action);
    }
    (masked, selected, actions)
}

#[derive(Debug)]
pub struct MlmOutcome<F> {
    /// `sub.*` encoder weights plus the `mlm.*` prediction head. Transplant
    /// the encoder into a tagger with `copy_prefix_into("sub.", ...)`.
    pub params: ParamSet<F>,
    /// Mean loss per optimizer step; index 0 is the fresh-init loss.
    pub loss_log: Vec<f64>,
    pub skipped_steps: usize,
}

pub fn mlm_pretrain<F: Scalar>(
    sub_cfg: &EncoderConfig,
    subword_model: &SubwordModel,
    corpus: &[SentenceRecord],
    cfg: &MlmConfig,
) -> Result<MlmOutcome<F>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0 < cfg.mask_rate && cfg.mask_rate < 1.0) {
        return Err(Error::Config("mask_rate must be in (0,1)".into()));
    }
    let mut sub_cfg = *sub_cfg;
    sub_cfg.vocab_size = subword_model.vocab().len();
    sub_cfg.validate()?;
    let vocab_len = subword_model.vocab().len();
    let mask_id = subword_model.vocab().mask_id();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ParamSet<F> = ParamSet::new();
    init_encoder_params(&mut params, "sub", &sub_cfg, &mut rng);
    params.add_trunc_normal("mlm.w", sub_cfg.hidden_size, vocab_len, 0.02, &mut rng);
    params.add_zeros("mlm.b", 1, vocab_len);

    // Pre-segment once; drop over-long sentences.
    let encoded: Vec<Vec<usize>> = corpus
        .iter()
        .filter(|s| !s.tokens.is_empty())
        .map(|s| subword_encode(&s.tokens, subword_model).0)
        .filter(|ids| ids.len() <= sub_cfg.max_seq_len)
        .collect();
    if encoded.is_empty() {
        return Err(Error::Config(
            "no pretraining sentence fits the encoder length budget".into(),
        ));
    }

    let mut opt = OptimizerState::new(
        AdamConfig {
            base_lr: cfg.base_lr,
            total_steps: cfg.steps,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut loss_log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut g: Graph<F> = Graph::new(true, cfg.seed.wrapping_add(step as u64 + 1));
        let bound = params.bind(&mut g);
        let mut batch_loss = None;
        let mut in_batch = 0usize;
        // Walk the shuffled corpus; sentences where the Bernoulli draw
        // selected nothing contribute no loss and are passed over.
        let mut attempts = 0usize;
        while in_batch < cfg.batch_size && attempts < 4 * cfg.batch_size {
            attempts += 1;
            let ids = &encoded[order[cursor]];
            cursor += 1;
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (masked, selected, _) =
                apply_mlm_masking(ids, cfg.mask_rate, vocab_len, mask_id, &mut rng);
            if selected.is_empty() {
                continue;
            }
            let h = encoder_forward(&mut g, &bound, "sub", &sub_cfg, &masked, None)?;
            let proj = g.matmul(h, bound.tid("mlm.w"))?;
            let logits = g.add_row(proj, bound.tid("mlm.b"))?;
            let mut keep = vec![false; ids.len()];
            for &i in &selected {
                keep[i] = true;
            }
            let loss = g.cross_entropy(logits, ids, &keep)?;
            batch_loss = Some(match batch_loss {
                Some(acc) => g.add(acc, loss)?,
                None => loss,
            });
            in_batch += 1;
        }
        let Some(total) = batch_loss else { continue };
        let mean = g.scale(total, 1.0 / in_batch as f64);
        let loss_val = g.scalar_value(mean).to_f64();
        if !loss_val.is_finite() {
            return Err(Error::Diverged { step });
        }
        loss_log.push(loss_val);
        let grads = g.backward(mean)?;
        opt.apply(&mut params, &bound, &grads);
    }

    Ok(MlmOutcome {
        params,
        loss_log,
        skipped_steps: opt.skipped_steps(),
    })
}
