use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gradkernel::{clip_global_norm, AdamConfig, AdamState, Tape, Tensor};
use crate::parallel::{map_slice, Execution};
use crate::textmetrics::bleu2;

use super::io::Checkpoint;
use super::nets::{self, Net, Pair};
use super::{Model, ModelConfig, ModelError, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Gradient work is split into sub-batches of this size; the split is
    /// fixed so results do not depend on the thread count.
    pub micro_batch: usize,
    pub lr: f64,
    pub clip: f64,
    /// Validate BLEU on at most this many pairs.
    pub valid_limit: Option<usize>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            micro_batch: 8,
            lr: AdamConfig::default().lr,
            clip: 5.0,
            valid_limit: None,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token training NLL; absent before the first update.
    pub train_loss: Option<f64>,
    pub valid_bleu2: f64,
}

impl EpochLog {
    pub fn to_csv(logs: &[EpochLog]) -> String {
        let mut s = String::from("epoch,train_loss,valid_bleu2\n");
        for l in logs {
            let loss = l.train_loss.map(|x| format!("{x:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{},{:.6}\n", l.epoch, loss, l.valid_bleu2));
        }
        s
    }
}

/// Where and why training stopped on a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub untrained: Model,
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub last_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub divergence: Option<DivergenceRecord>,
}

/// Corpus BLEU-2 of greedy responses against references.
pub fn validation_bleu(model: &Model, pairs: &[Pair], exec: Execution) -> Result<f64, ModelError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let inputs: Vec<_> = pairs.iter().map(|p| p.input.clone()).collect();
    let hyp = model.greedy_decode_all(&inputs, exec)?;
    let as_str = |v: &[usize]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    let cands: Vec<Vec<String>> = hyp.iter().map(|h| as_str(h)).collect();
    let refs: Vec<Vec<String>> =
        pairs.iter().map(|p| as_str(&p.target[..p.target.len().min(model.config.max_decode_len)])).collect();
    Ok(bleu2(&cands, &refs).map(|r| r.bleu2).unwrap_or(0.0))
}

/// Summed loss and gradients of one batch, accumulated over fixed sub-batches.
fn batch_gradients(
    model: &Model,
    batch: &[&Pair],
    micro: usize,
    exec: Execution,
) -> Result<(f64, Vec<Tensor<f32>>), ModelError> {
    let parts: Vec<&[&Pair]> = batch.chunks(micro.max(1)).collect();
    let results = map_slice(exec, &parts, |part| -> Result<(f64, Vec<Tensor<f32>>), ModelError> {
        let mut tape = Tape::new();
        let vars = tape.bind(&model.params);
        let net = Net { cfg: &model.config, ids: model.ids(), vars: &vars };
        let loss = nets::batch_loss(&mut tape, &net, part)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?.for_params(&tape, &vars);
        Ok((value, grads))
    });
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (v, g) = r?;
        total += v;
        if !v.is_finite() {
            return Ok((v, Vec::new()));
        }
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&g) {
                    for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                        *p += *q;
                    }
                }
            }
        }
    }
    Ok((total, acc.unwrap_or_default()))
}

/// Trains `config` on `train_pairs`, validating BLEU-2 after every epoch
/// (and before the first). `sink` receives every checkpoint as it is made:
/// untrained, each `epoch-N` (N = 0 is the untrained state), best-BLEU and last.
pub fn train(
    config: ModelConfig,
    train_pairs: &[Pair],
    valid_pairs: &[Pair],
    tcfg: &TrainConfig,
    sink: &mut dyn FnMut(&Checkpoint) -> Result<(), ModelError>,
) -> Result<TrainOutcome, ModelError> {
    if tcfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    if train_pairs.is_empty() {
        return Err(ModelError::Config("no training pairs".into()));
    }
    let valid = &valid_pairs[..tcfg.valid_limit.unwrap_or(valid_pairs.len()).min(valid_pairs.len())];
    let mut model = Model::new(config)?;
    let adam = AdamConfig::with_lr(tcfg.lr);
    let mut opt = AdamState::new(&model.params);
    let untrained = model.clone();

    let bleu0 = validation_bleu(&model, valid, tcfg.exec)?;
    let mut logs = vec![EpochLog { epoch: 0, train_loss: None, valid_bleu2: bleu0 }];
    sink(&Checkpoint { model: model.clone(), stage: Stage::Untrained, epoch: 0, valid_bleu2: Some(bleu0) })?;
    sink(&Checkpoint { model: model.clone(), stage: Stage::Epoch(0), epoch: 0, valid_bleu2: Some(bleu0) })?;
    let (mut best, mut best_epoch, mut best_bleu) = (model.clone(), 0, bleu0);
    let mut divergence = None;
    let mut last_epoch = 0;
    let max_len = model.config.max_decode_len;

    'epochs: for epoch in 1..=tcfg.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        let epoch_start = model.clone();
        for (bi, idx) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&Pair> = idx.iter().map(|&i| &train_pairs[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, tcfg.micro_batch, tcfg.exec)?;
            if !loss.is_finite() {
                divergence = Some(DivergenceRecord { epoch, batch: bi, loss });
                // the partially updated epoch is discarded
                model = epoch_start;
                break 'epochs;
            }
            loss_sum += loss;
            tokens += batch.iter().map(|p| p.target.len().min(max_len) + 1).sum::<usize>();
            let inv = 1.0 / batch.len() as f32;
            for g in grads.iter_mut() {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            clip_global_norm(&mut grads, tcfg.clip);
            opt.update(&mut model.params, &grads, &adam);
        }
        let bleu = validation_bleu(&model, valid, tcfg.exec)?;
        logs.push(EpochLog { epoch, train_loss: Some(loss_sum / tokens.max(1) as f64), valid_bleu2: bleu });
        sink(&Checkpoint { model: model.clone(), stage: Stage::Epoch(epoch), epoch, valid_bleu2: Some(bleu) })?;
        last_epoch = epoch;
        if bleu > best_bleu {
            best = model.clone();
            best_epoch = epoch;
            best_bleu = bleu;
        }
    }
    sink(&Checkpoint { model: best.clone(), stage: Stage::BestBleu, epoch: best_epoch, valid_bleu2: Some(best_bleu) })?;
    let last_bleu = logs.last().map(|l| l.valid_bleu2);
    sink(&Checkpoint { model: model.clone(), stage: Stage::LastEpoch, epoch: last_epoch, valid_bleu2: last_bleu })?;
    Ok(TrainOutcome { untrained, best, best_epoch, last: model, last_epoch, logs, divergence })
}
