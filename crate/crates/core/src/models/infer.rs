use std::collections::HashMap;

use crate::corpus::{BOS, EOS};
use crate::gradkernel::{KernelError, ParamStore, Scalar, Tape, Tensor, Var};
use crate::parallel::{map_chunks, Execution};

use super::io::RepresentationRecord;
use super::layout::{init_params, name_index, param_shapes};
use super::nets::{self, EncoderInput, Net, Pair};
use super::{ModelConfig, ModelError, ModelKind};

/// Inference batches are cut at this size regardless of thread count.
pub(crate) const INFER_CHUNK: usize = 32;

/// Seeded initial parameters of an architecture.
pub fn initial_params<T: Scalar>(cfg: &ModelConfig) -> Result<ParamStore<T>, ModelError> {
    init_params(cfg)
}

/// Summed teacher-forced NLL of `batch` with parameters bound as `vars`
/// (in layout order).
pub fn sequence_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    vars: &[Var],
    batch: &[Pair],
) -> Result<Var, KernelError> {
    let ids = name_index(cfg);
    let net = Net { cfg, ids: &ids, vars };
    let refs: Vec<&Pair> = batch.iter().collect();
    nets::batch_loss(tape, &net, &refs)
}

/// A configuration with its `f32` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    ids: HashMap<String, usize>,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        let params = init_params(&config)?;
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: ModelConfig, params: ParamStore<f32>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_shapes(&config);
        if specs.len() != params.len() {
            return Err(ModelError::Integrity(format!(
                "{} parameters stored, {} expected for {}",
                params.len(),
                specs.len(),
                config.kind
            )));
        }
        for (i, s) in specs.iter().enumerate() {
            if params.name(i) != s.name || params.tensor(i).shape() != s.shape.as_slice() {
                return Err(ModelError::Integrity(format!(
                    "parameter {} has name {} shape {:?}, expected {:?}",
                    i,
                    params.name(i),
                    params.tensor(i).shape(),
                    s.shape
                )));
            }
        }
        let ids = name_index(&config);
        Ok(Model { config, params, ids })
    }

    pub(crate) fn ids(&self) -> &HashMap<String, usize> {
        &self.ids
    }

    /// Probed encoder vectors, one row of `probe_dim` per input.
    pub fn encode(&self, inputs: &[EncoderInput]) -> Result<Vec<Vec<f32>>, ModelError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = tape.bind_constants(&self.params);
        let net = Net { cfg: &self.config, ids: &self.ids, vars: &vars };
        let enc = nets::encode_graph(&mut tape, &net, inputs)?;
        let v = tape.value(enc.probe);
        Ok((0..inputs.len()).map(|b| v.row(b).to_vec()).collect())
    }

    /// Greedy responses (without EOS), at most `max_decode_len` tokens each.
    pub fn greedy_decode(&self, inputs: &[EncoderInput]) -> Result<Vec<Vec<usize>>, ModelError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = tape.bind_constants(&self.params);
        let net = Net { cfg: &self.config, ids: &self.ids, vars: &vars };
        let out = if self.config.kind == ModelKind::Transformer {
            greedy_transformer(&mut tape, &net, inputs)?
        } else {
            greedy_recurrent(&mut tape, &net, inputs)?
        };
        Ok(out)
    }

    /// Greedy decoding in fixed chunks, possibly in parallel.
    pub fn greedy_decode_all(&self, inputs: &[EncoderInput], exec: Execution) -> Result<Vec<Vec<usize>>, ModelError> {
        map_chunks(exec, inputs, INFER_CHUNK, |c| vec![self.greedy_decode(c)])
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().flatten().collect())
    }

    /// Mean per-token NLL of `pairs` under teacher forcing.
    pub fn mean_loss(&self, pairs: &[Pair]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let vars = tape.bind_constants(&self.params);
        let net = Net { cfg: &self.config, ids: &self.ids, vars: &vars };
        let refs: Vec<&Pair> = pairs.iter().collect();
        let loss = nets::batch_loss(&mut tape, &net, &refs)?;
        let tokens: usize = pairs.iter().map(|p| p.target.len().min(self.config.max_decode_len) + 1).sum();
        Ok(tape.value(loss).item() as f64 / tokens.max(1) as f64)
    }

    /// Decoder attention weights `[B, T]` per teacher-forced step.
    pub fn attention(&self, pairs: &[Pair]) -> Result<Vec<Tensor<f32>>, ModelError> {
        if !self.config.kind.has_attention() {
            return Err(ModelError::Config(format!("{} has no decoder attention", self.config.kind)));
        }
        let mut tape = Tape::new();
        let vars = tape.bind_constants(&self.params);
        let net = Net { cfg: &self.config, ids: &self.ids, vars: &vars };
        let refs: Vec<&Pair> = pairs.iter().collect();
        let alphas = nets::attention_weights(&mut tape, &net, &refs)?;
        Ok(alphas.into_iter().map(|a| tape.value(a).clone()).collect())
    }
}

fn pick_rows(logits: &Tensor<f32>) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

fn greedy_recurrent(tape: &mut Tape<f32>, net: &Net, inputs: &[EncoderInput]) -> Result<Vec<Vec<usize>>, KernelError> {
    let enc = nets::encode_graph(tape, net, inputs)?;
    let b = inputs.len();
    let mut state = enc.init.clone();
    let mut prev = vec![BOS; b];
    let mut out = vec![Vec::new(); b];
    let mut done = vec![false; b];
    for _ in 0..net.cfg.max_decode_len {
        let dec = nets::rnn_decode(tape, net, &enc, &prev, 1, &state)?;
        let logits = nets::lin(tape, net, "out", dec.features[0])?;
        let next = pick_rows(tape.value(logits));
        state = dec.state;
        for (i, &tok) in next.iter().enumerate() {
            if !done[i] {
                if tok == EOS {
                    done[i] = true;
                } else {
                    out[i].push(tok);
                }
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
        prev = next;
    }
    Ok(out)
}

fn greedy_transformer(
    tape: &mut Tape<f32>,
    net: &Net,
    inputs: &[EncoderInput],
) -> Result<Vec<Vec<usize>>, KernelError> {
    let enc = nets::encode_graph(tape, net, inputs)?;
    let b = inputs.len();
    let mut prefixes = vec![vec![BOS]; b];
    let mut out = vec![Vec::new(); b];
    let mut done = vec![false; b];
    for k in 1..=net.cfg.max_decode_len {
        let feats = nets::transformer_decode(tape, net, &enc, &prefixes, k)?;
        let idx: Vec<Option<usize>> = (0..b).map(|i| Some(i * k + k - 1)).collect();
        let last = tape.gather(feats, &idx)?;
        let logits = nets::lin(tape, net, "out", last)?;
        let next = pick_rows(tape.value(logits));
        for (i, &tok) in next.iter().enumerate() {
            if !done[i] {
                if tok == EOS {
                    done[i] = true;
                } else {
                    out[i].push(tok);
                }
            }
            prefixes[i].push(tok);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

/// Positional token accuracy of predictions against references; extra or
/// missing tokens count as errors.
pub fn token_accuracy(predictions: &[Vec<usize>], references: &[Vec<usize>]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, r) in predictions.iter().zip(references) {
        total += p.len().max(r.len());
        hit += p.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Encoder vectors for `(dialogue_id, turn_index, input)` items, in input order.
pub fn export_representations(
    model: &Model,
    items: &[(String, usize, EncoderInput)],
    exec: Execution,
) -> Result<Vec<RepresentationRecord>, ModelError> {
    let chunks = map_chunks(exec, items, INFER_CHUNK, |c| {
        let inputs: Vec<EncoderInput> = c.iter().map(|i| i.2.clone()).collect();
        vec![model.encode(&inputs).map(|vs| {
            c.iter()
                .zip(vs)
                .map(|(i, v)| RepresentationRecord { dialogue_id: i.0.clone(), turn_index: i.1, vector: v })
                .collect::<Vec<_>>()
        })]
    });
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ModelKind) -> ModelConfig {
        let mut c = ModelConfig::desk_scale(kind, 12);
        c.embed_dim = 8;
        c.hidden_dim = 8;
        c.ff_dim = 16;
        c.max_decode_len = 5;
        c
    }

    fn inputs() -> Vec<EncoderInput> {
        vec![
            EncoderInput::new(vec![4, 5, 6, 7], vec![2, 2]),
            EncoderInput::new(vec![8], vec![1]),
            EncoderInput::new(vec![], vec![]),
            EncoderInput::new(vec![9, 10, 11], vec![1, 1, 1]),
        ]
    }

    #[test]
    fn batching_does_not_change_vectors() {
        for kind in ModelKind::ALL {
            let m = Model::new(tiny(kind)).unwrap();
            let all = m.encode(&inputs()).unwrap();
            for (i, inp) in inputs().into_iter().enumerate() {
                let solo = m.encode(&[inp]).unwrap();
                for (a, b) in solo[0].iter().zip(&all[i]) {
                    assert!((a - b).abs() < 1e-5, "{kind} row {i}");
                }
            }
            assert_eq!(all[0].len(), m.config.probe_dim());
        }
    }

    #[test]
    fn greedy_respects_length_limit() {
        for kind in ModelKind::ALL {
            let m = Model::new(tiny(kind)).unwrap();
            let out = m.greedy_decode(&inputs()).unwrap();
            assert_eq!(out.len(), 4);
            assert!(out.iter().all(|o| o.len() <= 5 && !o.contains(&EOS)));
            assert_eq!(out, m.greedy_decode_all(&inputs(), Execution::Parallel).unwrap());
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_skip_padding() {
        let m = Model::new(tiny(ModelKind::LstmAttn)).unwrap();
        let pairs: Vec<Pair> = inputs().into_iter().map(|input| Pair { input, target: vec![4, 5] }).collect();
        let alphas = m.attention(&pairs).unwrap();
        assert_eq!(alphas.len(), 3);
        for a in &alphas {
            for r in 0..4 {
                let s: f32 = a.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
            // second example has one memory position
            assert!(a.row(1)[1..].iter().all(|&x| x == 0.0));
        }
        assert!(Model::new(tiny(ModelKind::Lstm)).unwrap().attention(&pairs).is_err());
    }

    #[test]
    fn accuracy_counts_length_errors() {
        assert_eq!(token_accuracy(&[vec![1, 2]], &[vec![1, 2]]), 1.0);
        assert_eq!(token_accuracy(&[vec![1, 2, 3]], &[vec![1, 2]]), 2.0 / 3.0);
        assert_eq!(token_accuracy(&[vec![]], &[vec![1, 2]]), 0.0);
    }

    #[test]
    fn layout_mismatch_is_an_integrity_error() {
        let m = Model::new(tiny(ModelKind::Lstm)).unwrap();
        assert!(matches!(Model::from_params(tiny(ModelKind::Hred), m.params), Err(ModelError::Integrity(_))));
    }
}
