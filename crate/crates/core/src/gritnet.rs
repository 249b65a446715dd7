//! The composed sequence classifier: event embedding, bidirectional LSTM,
//! global max pooling over time, and a sigmoid head (Fig.-style
//! embedding -> BLSTM -> GMP -> FC -> sigmoid stack), plus its training
//! loop.
//!
//! Sequences shorter than the training set's longest are pre-padded with
//! sentinel positions whose embedding is the zero vector; the recurrent
//! state still runs across padding (no masking), so deterministic padding
//! to the model's `t_max` keeps predictions independent of how a set of
//! students is split into batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::encoding::{pad_and_batch, Batch, BatchOrder, EncodedSequence, OrdinalMap};
use crate::error::{Error, Result};
use crate::eval;
use crate::nncore::{
    bce_loss, bilstm_backward, bilstm_forward, embedding_backward, embedding_forward,
    fc_bce_backward, fc_sigmoid_forward, global_max_pool, gmp_backward, load_checkpoint,
    rmsprop_step, save_checkpoint, BiLstmCache, GradMap, LstmParams, ParamStore, Tensor,
    TokenBatch,
};

pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_HIDDEN_DIM: usize = 256;

/// The four parameter groups of a model.
pub const PARAM_GROUPS: [&str; 4] = ["embedding", "lstm_fwd", "lstm_bwd", "fc"];

const PREDICT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GritNetConfig {
    /// Number of unique actions L.
    pub action_vocab: usize,
    /// Day-delta bucket cap; the event vocabulary is `L + d_cap + 1`.
    pub d_cap: u32,
    pub embed_dim: usize,
    /// LSTM cells per direction.
    pub hidden_dim: usize,
    /// Padded sequence length; fixed from the training split's longest
    /// sequence on the first call to [`train`].
    pub t_max: Option<usize>,
}

impl GritNetConfig {
    pub fn new(action_vocab: usize, d_cap: u32) -> GritNetConfig {
        GritNetConfig {
            action_vocab,
            d_cap,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            t_max: None,
        }
    }

    pub fn with_dims(mut self, embed_dim: usize, hidden_dim: usize) -> GritNetConfig {
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn event_vocab(&self) -> usize {
        self.action_vocab + self.d_cap as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_vocab == 0 {
            return Err(Error::invalid_argument("action vocabulary must be non-empty"));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid_argument("embed_dim and hidden_dim must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GritNetModel {
    pub config: GritNetConfig,
    pub params: ParamStore,
}

/// Builds and initializes a model for the given ordinal map; deterministic
/// per seed.
pub fn build_model(
    embed_dim: usize,
    hidden_dim: usize,
    map: &OrdinalMap,
    seed: u64,
) -> Result<GritNetModel> {
    let config = GritNetConfig::new(map.action_vocab_len(), map.d_cap())
        .with_dims(embed_dim, hidden_dim);
    GritNetModel::init(config, seed)
}

impl GritNetModel {
    /// Initializes all parameter groups with uniform(-r, r), r = 1/sqrt(fan_in),
    /// a forget-gate bias of 1 and a zero output head.
    pub fn init(config: GritNetConfig, seed: u64) -> Result<GritNetModel> {
        config.validate()?;
        let vocab = config.event_vocab();
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let r_embed = 1.0 / (vocab as f64).sqrt();
        params.insert("embedding", Tensor::uniform(&[vocab, e], r_embed, &mut rng));

        for dir in ["lstm_fwd", "lstm_bwd"] {
            let r_ih = 1.0 / (e as f64).sqrt();
            let r_hh = 1.0 / (h as f64).sqrt();
            params.insert(format!("{dir}.w_ih"), Tensor::uniform(&[4 * h, e], r_ih, &mut rng));
            params.insert(format!("{dir}.w_hh"), Tensor::uniform(&[4 * h, h], r_hh, &mut rng));
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            params.insert(format!("{dir}.bias"), bias);
        }

        let r_fc = 1.0 / (2.0 * h as f64).sqrt();
        params.insert("fc.weight", Tensor::uniform(&[1, 2 * h], r_fc, &mut rng));
        params.insert("fc.bias", Tensor::zeros(&[1]));

        let model = GritNetModel { config, params };
        model.validate()?;
        Ok(model)
    }

    /// Checks that exactly the four named groups exist with mutually
    /// consistent shapes.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let vocab = self.config.event_vocab();
        let (e, h) = (self.config.embed_dim, self.config.hidden_dim);
        let expected: [(&str, Vec<usize>); 9] = [
            ("embedding", vec![vocab, e]),
            ("lstm_fwd.w_ih", vec![4 * h, e]),
            ("lstm_fwd.w_hh", vec![4 * h, h]),
            ("lstm_fwd.bias", vec![4 * h]),
            ("lstm_bwd.w_ih", vec![4 * h, e]),
            ("lstm_bwd.w_hh", vec![4 * h, h]),
            ("lstm_bwd.bias", vec![4 * h]),
            ("fc.weight", vec![1, 2 * h]),
            ("fc.bias", vec![1]),
        ];
        for (name, shape) in &expected {
            let tensor = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter group entry {name:?}")))?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
        }
        if self.params.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected exactly {} tensors across groups {:?}, found {}",
                expected.len(),
                PARAM_GROUPS,
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, &self.config, path)
    }

    pub fn load(path: &Path) -> Result<GritNetModel> {
        let (params, config) = load_checkpoint(path)?;
        let config: GritNetConfig = serde_json::from_value(config)
            .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        let model = GritNetModel { config, params };
        model.validate()?;
        Ok(model)
    }

    fn lstm_params(&self, dir: &str) -> Result<LstmParams<'_>> {
        Ok(LstmParams {
            w_ih: self.params.tensor(&format!("{dir}.w_ih"))?,
            w_hh: self.params.tensor(&format!("{dir}.w_hh"))?,
            bias: self.params.tensor(&format!("{dir}.bias"))?,
        })
    }

    fn check_vocab(&self, sequences: &[EncodedSequence]) -> Result<()> {
        let l = self.config.action_vocab as u32;
        for s in sequences {
            for e in &s.events {
                if e.action >= l || e.delta > self.config.d_cap {
                    return Err(Error::Encode(format!(
                        "student {:?} carries index pair ({}, {}) incompatible with vocabulary L={l}, d_cap={}",
                        s.student_id, e.action, e.delta, self.config.d_cap
                    )));
                }
            }
        }
        Ok(())
    }
}

fn to_tokens(batch: &Batch) -> TokenBatch {
    let rows = batch
        .items
        .iter()
        .map(|item| {
            (0..batch.t_max)
                .map(|t| item.token(t).map(|e| (e.action, e.delta)))
                .collect()
        })
        .collect();
    TokenBatch { t_max: batch.t_max, rows }
}

struct ForwardCache {
    tokens: TokenBatch,
    embedded: Tensor,
    bilstm_out_shape: Vec<usize>,
    bilstm_cache: BiLstmCache,
    pooled: Tensor,
    argmax: Vec<usize>,
    probs: Vec<f64>,
}

fn forward_full(model: &GritNetModel, tokens: TokenBatch) -> Result<ForwardCache> {
    let table = model.params.tensor("embedding")?;
    let embedded = embedding_forward(&tokens, table, model.config.action_vocab)?;
    let fwd = model.lstm_params("lstm_fwd")?;
    let bwd = model.lstm_params("lstm_bwd")?;
    let (hcat, bilstm_cache) = bilstm_forward(&embedded, &fwd, &bwd)?;
    let (pooled, argmax) = global_max_pool(&hcat)?;
    let probs = fc_sigmoid_forward(&pooled, model.params.tensor("fc.weight")?, model.params.tensor("fc.bias")?)?;
    Ok(ForwardCache {
        tokens,
        embedded,
        bilstm_out_shape: hcat.shape().to_vec(),
        bilstm_cache,
        pooled,
        argmax,
        probs,
    })
}

/// Forward plus reverse-mode pass over one batch. Returns the mean BCE
/// loss, per-item probabilities and gradients for exactly the unfrozen
/// parameters; frozen groups below the head skip gradient computation
/// entirely.
fn forward_backward(
    model: &GritNetModel,
    tokens: TokenBatch,
    labels: &[f64],
) -> Result<(f64, Vec<f64>, GradMap)> {
    let cache = forward_full(model, tokens)?;
    let loss = bce_loss(&cache.probs, labels);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }

    let unfrozen = model.params.unfrozen_names();
    let mut grads = GradMap::new();
    if unfrozen.is_empty() {
        return Ok((loss, cache.probs, grads));
    }

    let w = model.params.tensor("fc.weight")?;
    let (dw, dbias, dv) = fc_bce_backward(&cache.probs, labels, &cache.pooled, w)?;
    if !model.params.is_frozen("fc.weight") {
        grads.insert("fc.weight".into(), dw);
    }
    if !model.params.is_frozen("fc.bias") {
        grads.insert("fc.bias".into(), dbias);
    }

    let below_fc: Vec<&String> = unfrozen.iter().filter(|n| !n.starts_with("fc")).collect();
    if !below_fc.is_empty() {
        let dhcat = gmp_backward(&cache.argmax, &dv, &cache.bilstm_out_shape)?;
        let fwd = model.lstm_params("lstm_fwd")?;
        let bwd = model.lstm_params("lstm_bwd")?;
        let (gf, gb, dx) = bilstm_backward(&cache.embedded, &cache.bilstm_cache, &fwd, &bwd, &dhcat)?;
        for (name, tensor) in [
            ("lstm_fwd.w_ih", gf.w_ih),
            ("lstm_fwd.w_hh", gf.w_hh),
            ("lstm_fwd.bias", gf.bias),
            ("lstm_bwd.w_ih", gb.w_ih),
            ("lstm_bwd.w_hh", gb.w_hh),
            ("lstm_bwd.bias", gb.bias),
        ] {
            if !model.params.is_frozen(name) {
                grads.insert(name.into(), tensor);
            }
        }
        if !model.params.is_frozen("embedding") {
            let table_shape = model.params.tensor("embedding")?.shape().to_vec();
            let dtable =
                embedding_backward(&cache.tokens, &dx, &table_shape, model.config.action_vocab)?;
            grads.insert("embedding".into(), dtable);
        }
    }

    for (name, g) in &grads {
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name:?}")));
        }
    }
    Ok((loss, cache.probs, grads))
}

/// One forward+backward over an ad-hoc batch; the entry point used by
/// gradient checks.
pub fn batch_forward_backward(
    model: &GritNetModel,
    sequences: &[EncodedSequence],
    t_max: usize,
) -> Result<(f64, GradMap)> {
    let batches = pad_and_batch(sequences, t_max, sequences.len().max(1), BatchOrder::Stable)?;
    let batch = &batches[0];
    let labels: Vec<f64> = batch.items.iter().map(|i| f64::from(u8::from(i.label))).collect();
    let (loss, _, grads) = forward_backward(model, to_tokens(batch), &labels)?;
    Ok((loss, grads))
}

/// GMP-layer outputs (the sequence-level embeddings), in input order.
pub fn pooled_features(model: &GritNetModel, sequences: &[EncodedSequence]) -> Result<Vec<Vec<f64>>> {
    model.check_vocab(sequences)?;
    let t_eff = effective_t_max(model, sequences);
    let clipped = clip_to_recent(sequences, t_eff);
    let mut feats = Vec::with_capacity(clipped.len());
    for batch in pad_and_batch(&clipped, t_eff, PREDICT_BATCH, BatchOrder::Stable)? {
        let cache = forward_full(model, to_tokens(&batch))?;
        let f = cache.pooled.shape()[1];
        for bi in 0..batch.items.len() {
            feats.push(cache.pooled.row(bi).to_vec());
        }
        debug_assert_eq!(f, 2 * model.config.hidden_dim);
    }
    Ok(feats)
}

/// One graduation probability per student, deterministic and independent
/// of batch partitioning.
pub fn predict(model: &GritNetModel, sequences: &[EncodedSequence]) -> Result<Vec<f64>> {
    let feats = pooled_features(model, sequences)?;
    let w = model.params.tensor("fc.weight")?;
    let bias = model.params.tensor("fc.bias")?;
    let f = w.shape()[1];
    feats
        .into_iter()
        .map(|row| {
            let v = Tensor::from_vec(&[1, f], row)?;
            Ok(fc_sigmoid_forward(&v, w, bias)?[0])
        })
        .collect()
}

fn effective_t_max(model: &GritNetModel, sequences: &[EncodedSequence]) -> usize {
    model
        .config
        .t_max
        .unwrap_or_else(|| sequences.iter().map(|s| s.events.len()).max().unwrap_or(0))
        .max(1)
}

/// Sequences longer than `t_eff` keep their most recent `t_eff` events.
fn clip_to_recent(sequences: &[EncodedSequence], t_eff: usize) -> Vec<EncodedSequence> {
    sequences
        .iter()
        .map(|s| {
            if s.events.len() <= t_eff {
                s.clone()
            } else {
                EncodedSequence {
                    student_id: s.student_id.clone(),
                    label: s.label,
                    events: s.events[s.events.len() - t_eff..].to_vec(),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stop patience on validation loss; `None` disables early stop.
    pub patience: Option<usize>,
    pub seed: u64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Explicit padded length; default is the training split's longest
    /// sequence.
    pub t_max: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 20,
            patience: Some(5),
            seed: 0,
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-8,
            t_max: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// One JSON object per completed epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch stats serialize"));
            out.push('\n');
        }
        out
    }
}

/// Trains in place. Shuffles each epoch with a seeded PRNG, respects
/// freeze flags, and — when a validation split is given — restores the
/// best-validation-loss parameters at the end.
pub fn train(
    model: &mut GritNetModel,
    train_set: &[EncodedSequence],
    config: &TrainConfig,
    val_set: Option<&[EncodedSequence]>,
) -> Result<TrainHistory> {
    if config.epochs == 0 {
        return Err(Error::invalid_argument("epochs must be >= 1"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid_argument("batch_size must be >= 1"));
    }
    if train_set.is_empty() {
        return Err(Error::invalid_argument("training set is empty"));
    }
    let positives = train_set.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::invalid_argument(
            "training data has a single label class; need at least one example of each",
        ));
    }
    model.check_vocab(train_set)?;

    let longest = train_set.iter().map(|s| s.events.len()).max().unwrap_or(0);
    let t_max = config.t_max.or(model.config.t_max).unwrap_or(longest).max(1);
    if longest > t_max {
        return Err(Error::invalid_argument(format!(
            "longest training sequence ({longest}) exceeds t_max ({t_max})"
        )));
    }
    model.config.t_max = Some(t_max);

    let unfrozen = model.params.unfrozen_names();
    let below_fc_unfrozen = unfrozen.iter().any(|n| !n.starts_with("fc"));
    let head_only = !unfrozen.is_empty() && !below_fc_unfrozen;

    // In head-only fine-tuning the pooled features cannot change, so they
    // are computed once and the epochs run on the cached rows.
    let cached_feats =
        if head_only { Some(pooled_features(model, train_set)?) } else { None };

    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let shuffle_seed: u64 = seed_rng.random();
        let train_loss = if unfrozen.is_empty() {
            epoch_loss_frozen(model, train_set, config)?
        } else if let Some(feats) = &cached_feats {
            epoch_head_only(model, feats, train_set, config, shuffle_seed)?
        } else {
            epoch_full(model, train_set, config, t_max, shuffle_seed)?
        };

        let (val_loss, val_auc) = match val_set {
            Some(vs) if !vs.is_empty() => {
                let p = predict(model, vs)?;
                let y: Vec<f64> = vs.iter().map(|s| f64::from(u8::from(s.label))).collect();
                let labels: Vec<bool> = vs.iter().map(|s| s.label).collect();
                (Some(bce_loss(&p, &y)), eval::auc(&p, &labels).ok())
            }
            _ => (None, None),
        };
        history.epochs.push(EpochStats { epoch, train_loss, val_loss, val_auc });

        if let Some(vl) = val_loss {
            let improved = best.as_ref().map_or(true, |(b, _, _)| vl < *b);
            if improved {
                best = Some((vl, epoch, model.params.clone()));
            } else if let (Some(patience), Some((_, best_epoch, _))) = (config.patience, best.as_ref())
            {
                if epoch - best_epoch > patience {
                    break;
                }
            }
        }
    }

    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(history)
}

fn epoch_full(
    model: &mut GritNetModel,
    train_set: &[EncodedSequence],
    config: &TrainConfig,
    t_max: usize,
    shuffle_seed: u64,
) -> Result<f64> {
    let batches = pad_and_batch(train_set, t_max, config.batch_size, BatchOrder::Shuffled(shuffle_seed))?;
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let labels: Vec<f64> = batch.items.iter().map(|i| f64::from(u8::from(i.label))).collect();
        let n = labels.len();
        let (loss, _, grads) = forward_backward(model, to_tokens(&batch), &labels)?;
        rmsprop_step(&mut model.params, &grads, config.lr, config.rho, config.eps)?;
        loss_sum += loss * n as f64;
        count += n;
    }
    Ok(loss_sum / count as f64)
}

fn epoch_head_only(
    model: &mut GritNetModel,
    feats: &[Vec<f64>],
    train_set: &[EncodedSequence],
    config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<f64> {
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let f = 2 * model.config.hidden_dim;
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(config.batch_size) {
        let mut rows = Vec::with_capacity(chunk.len() * f);
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            rows.extend_from_slice(&feats[i]);
            labels.push(f64::from(u8::from(train_set[i].label)));
        }
        let v = Tensor::from_vec(&[chunk.len(), f], rows)?;
        let w = model.params.tensor("fc.weight")?;
        let bias = model.params.tensor("fc.bias")?;
        let p = fc_sigmoid_forward(&v, w, bias)?;
        let loss = bce_loss(&p, &labels);
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite training loss".into()));
        }
        let (dw, dbias, _) = fc_bce_backward(&p, &labels, &v, w)?;
        let mut grads = GradMap::new();
        if !model.params.is_frozen("fc.weight") {
            grads.insert("fc.weight".into(), dw);
        }
        if !model.params.is_frozen("fc.bias") {
            grads.insert("fc.bias".into(), dbias);
        }
        rmsprop_step(&mut model.params, &grads, config.lr, config.rho, config.eps)?;
        loss_sum += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(loss_sum / count as f64)
}

fn epoch_loss_frozen(
    model: &GritNetModel,
    train_set: &[EncodedSequence],
    _config: &TrainConfig,
) -> Result<f64> {
    let p = predict(model, train_set)?;
    let y: Vec<f64> = train_set.iter().map(|s| f64::from(u8::from(s.label))).collect();
    Ok(bce_loss(&p, &y))
}
