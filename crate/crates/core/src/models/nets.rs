//! Forward graphs shared by training, gradient checks and inference.

use std::collections::HashMap;

use crate::corpus::{BOS, EOS, PAD};
use crate::gradkernel::{KernelError, Scalar, Tape, Tensor, Var};

use super::{ModelConfig, ModelKind, Pooling};

/// Additive score given to padded memory positions before the softmax.
pub const MEMORY_MASK: f64 = -1e9;

/// Encoder input: context token ids plus per-turn segment lengths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncoderInput {
    pub tokens: Vec<usize>,
    /// Turn lengths summing to `tokens.len()`; only HRED reads them.
    pub segments: Vec<usize>,
}

impl EncoderInput {
    pub fn new(tokens: Vec<usize>, segments: Vec<usize>) -> Self {
        EncoderInput { tokens, segments }
    }

    /// Tokens and segments with the empty context replaced by a lone BOS
    /// and inconsistent segments collapsed into one.
    pub(crate) fn prepared(&self) -> (Vec<usize>, Vec<usize>) {
        if self.tokens.is_empty() {
            return (vec![BOS], vec![1]);
        }
        let ok = !self.segments.is_empty()
            && self.segments.iter().all(|&s| s > 0)
            && self.segments.iter().sum::<usize>() == self.tokens.len();
        let segs = if ok { self.segments.clone() } else { vec![self.tokens.len()] };
        (self.tokens.clone(), segs)
    }
}

/// A (context, response) training example; `target` excludes EOS.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pair {
    pub input: EncoderInput,
    pub target: Vec<usize>,
}

/// Bound parameter variables addressed by name.
pub(crate) struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub ids: &'a HashMap<String, usize>,
    pub vars: &'a [Var],
}

impl Net<'_> {
    fn p(&self, name: &str) -> Var {
        match self.ids.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} missing from the {} layout", self.cfg.kind),
        }
    }
}

pub(crate) struct Encoded {
    /// Probed vector per example, `[B, H]`.
    pub probe: Var,
    /// Decoder initial `(h, c)` per layer (recurrent kinds).
    pub init: Vec<(Var, Var)>,
    /// Attention memory: time-major `[T*B, H]` for recurrent kinds,
    /// batch-major `[B*T, d]` for the transformer.
    pub mem: Option<Var>,
    pub mem_proj: Option<Var>,
    /// Additive key mask `[B, T]`.
    pub mem_bias: Option<Var>,
    pub steps: usize,
    pub lens: Vec<usize>,
    pub batch: usize,
}

fn cst<T: Scalar>(tape: &mut Tape<T>, shape: Vec<usize>, data: Vec<T>) -> Result<Var, KernelError> {
    Ok(tape.constant(Tensor::new(shape, data)?))
}

fn key_bias<T: Scalar>(lens: &[usize], steps: usize) -> Vec<T> {
    let mask = T::from_f64_lossy(MEMORY_MASK);
    let mut v = vec![T::zero(); lens.len() * steps];
    for (b, &len) in lens.iter().enumerate() {
        for t in len..steps {
            v[b * steps + t] = mask;
        }
    }
    v
}

/// Per-step blend masks; `None` where every sequence is still running.
fn step_masks<T: Scalar>(lens: &[usize], steps: usize) -> Vec<Option<Vec<T>>> {
    (0..steps)
        .map(|t| {
            if lens.iter().all(|&l| t < l) {
                None
            } else {
                Some(lens.iter().map(|&l| if t < l { T::one() } else { T::zero() }).collect())
            }
        })
        .collect()
}

/// Time-major ids: row `t * B + b` holds token `t` of sequence `b`, PAD past its end.
fn time_major(seqs: &[Vec<usize>], steps: usize) -> Vec<usize> {
    let b = seqs.len();
    let mut ids = vec![PAD; steps * b];
    for (i, s) in seqs.iter().enumerate() {
        for (t, &tok) in s.iter().enumerate().take(steps) {
            ids[t * b + i] = tok;
        }
    }
    ids
}

/// One LSTM layer over `steps` time-major blocks of `x` (`[steps*B, In]`).
fn lstm_layer<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    prefix: &str,
    x: Var,
    steps: usize,
    batch: usize,
    masks: &[Option<Vec<T>>],
    init: (Var, Var),
) -> Result<(Vec<Var>, (Var, Var)), KernelError> {
    let hd = net.cfg.hidden_dim;
    let wh = net.p(&format!("{prefix}.wh"));
    let xw = tape.matmul(x, net.p(&format!("{prefix}.wx")))?;
    let xw = tape.add_row_bias(xw, net.p(&format!("{prefix}.b")))?;
    let (mut h, mut c) = init;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = if steps == 1 { xw } else { tape.slice_rows(xw, t * batch, batch)? };
        let hw = tape.matmul(h, wh)?;
        let g = tape.add(xt, hw)?;
        let i = tape.slice_cols(g, 0, hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(g, hd, hd)?;
        let f = tape.sigmoid(f)?;
        let gg = tape.slice_cols(g, 2 * hd, hd)?;
        let gg = tape.tanh(gg)?;
        let o = tape.slice_cols(g, 3 * hd, hd)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, gg)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        match masks.get(t).and_then(Option::as_ref) {
            Some(m) => {
                h = tape.blend(m, h_new, h)?;
                c = tape.blend(m, c_new, c)?;
            }
            None => {
                h = h_new;
                c = c_new;
            }
        }
        outs.push(h);
    }
    Ok((outs, (h, c)))
}

/// Stacked LSTM; returns top-layer outputs per step and final states per layer.
#[allow(clippy::too_many_arguments)]
fn lstm_stack<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    prefix: &str,
    x: Var,
    steps: usize,
    batch: usize,
    masks: &[Option<Vec<T>>],
    init: Option<&[(Var, Var)]>,
) -> Result<(Vec<Var>, Vec<(Var, Var)>), KernelError> {
    let layers = net.cfg.layers;
    let zero = if init.is_none() {
        Some(cst(tape, vec![batch, net.cfg.hidden_dim], vec![T::zero(); batch * net.cfg.hidden_dim])?)
    } else {
        None
    };
    let mut input = x;
    let mut finals = Vec::with_capacity(layers);
    let mut outs = Vec::new();
    for l in 0..layers {
        let start = match (init, zero) {
            (Some(s), _) => s[l],
            (None, Some(z)) => (z, z),
            (None, None) => unreachable!(),
        };
        let (o, fin) = lstm_layer(tape, net, &format!("{prefix}.l{l}"), input, steps, batch, masks, start)?;
        finals.push(fin);
        if l + 1 < layers {
            input = tape.concat(&o, 0)?;
        }
        outs = o;
    }
    Ok((outs, finals))
}

/// Runs a stacked LSTM over right-padded sequences of token ids.
fn run_sequences<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    emb: &str,
    prefix: &str,
    seqs: &[Vec<usize>],
) -> Result<(Vec<Var>, Vec<(Var, Var)>, Vec<usize>), KernelError> {
    let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let steps = lens.iter().copied().max().unwrap_or(0);
    let x = tape.embed(net.p(emb), &time_major(seqs, steps))?;
    let masks = step_masks::<T>(&lens, steps);
    let (outs, finals) = lstm_stack(tape, net, prefix, x, steps, seqs.len(), &masks, None)?;
    Ok((outs, finals, lens))
}

/// Final top-layer state of the HRED sentence encoder for every turn
/// segment, in example order then segment order.
pub(crate) fn hred_sentences<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    inputs: &[(Vec<usize>, Vec<usize>)],
) -> Result<(Var, Vec<usize>), KernelError> {
    let mut sentences = Vec::new();
    let mut counts = Vec::with_capacity(inputs.len());
    for (tokens, segs) in inputs {
        let mut at = 0;
        for &s in segs {
            sentences.push(tokens[at..at + s].to_vec());
            at += s;
        }
        counts.push(segs.len());
    }
    let (_, finals, _) = run_sequences(tape, net, "enc.emb", "sent", &sentences)?;
    Ok((finals.last().expect("at least one layer").0, counts))
}

pub(crate) fn encode_graph<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    inputs: &[EncoderInput],
) -> Result<Encoded, KernelError> {
    let prepared: Vec<(Vec<usize>, Vec<usize>)> = inputs.iter().map(EncoderInput::prepared).collect();
    let batch = inputs.len();
    if net.cfg.kind == ModelKind::Transformer {
        let seqs: Vec<Vec<usize>> = prepared.into_iter().map(|p| p.0).collect();
        return transformer_encode(tape, net, &seqs);
    }
    let (outs, finals, lens) = match net.cfg.kind {
        ModelKind::Lstm | ModelKind::LstmAttn => {
            let seqs: Vec<Vec<usize>> = prepared.into_iter().map(|p| p.0).collect();
            run_sequences(tape, net, "enc.emb", "enc", &seqs)?
        }
        ModelKind::BilstmAttn => {
            let seqs: Vec<Vec<usize>> = prepared.into_iter().map(|p| p.0).collect();
            let rev: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().rev().copied().collect()).collect();
            let (fo, ff, lens) = run_sequences(tape, net, "enc.emb", "enc.fwd", &seqs)?;
            let (bo, bf, _) = run_sequences(tape, net, "enc.emb", "enc.bwd", &rev)?;
            let mut finals = Vec::with_capacity(ff.len());
            for (f, b) in ff.iter().zip(&bf) {
                finals.push((tape.add(f.0, b.0)?, tape.add(f.1, b.1)?));
            }
            // align backward outputs with forward positions before summing
            let steps = fo.len();
            let bwd = tape.concat(&bo, 0)?;
            let idx: Vec<Option<usize>> = (0..steps)
                .flat_map(|t| lens.iter().enumerate().map(move |(b, &l)| (t < l).then(|| (l - 1 - t) * batch + b)))
                .collect();
            let bwd = tape.gather(bwd, &idx)?;
            let fwd = tape.concat(&fo, 0)?;
            let mem = tape.add(fwd, bwd)?;
            let outs = (0..steps).map(|t| tape.slice_rows(mem, t * batch, batch)).collect::<Result<Vec<_>, _>>()?;
            (outs, finals, lens)
        }
        ModelKind::Hred => {
            let (sent, counts) = hred_sentences(tape, net, &prepared)?;
            let steps = counts.iter().copied().max().unwrap_or(0);
            let mut offsets = Vec::with_capacity(batch);
            let mut acc = 0;
            for &c in &counts {
                offsets.push(acc);
                acc += c;
            }
            let idx: Vec<Option<usize>> = (0..steps)
                .flat_map(|t| counts.iter().zip(&offsets).map(move |(&c, &o)| (t < c).then_some(o + t)))
                .collect();
            let x = tape.gather(sent, &idx)?;
            let masks = step_masks::<T>(&counts, steps);
            let (outs, finals) = lstm_stack(tape, net, "ctx", x, steps, batch, &masks, None)?;
            (outs, finals, counts)
        }
        ModelKind::Transformer => unreachable!(),
    };
    let steps = outs.len();
    let probe = finals.last().expect("at least one layer").0;
    let mut enc = Encoded { probe, init: finals, mem: None, mem_proj: None, mem_bias: None, steps, lens, batch };
    if net.cfg.kind.has_attention() {
        let mem = tape.concat(&outs, 0)?;
        enc.mem_proj = Some(tape.linear(mem, net.p("att.m.w"), net.p("att.m.b"))?);
        enc.mem = Some(mem);
        let bias = key_bias::<T>(&enc.lens, steps);
        enc.mem_bias = Some(cst(tape, vec![batch, steps], bias)?);
    }
    Ok(enc)
}

/// Additive attention for one decoder step; returns the attentional
/// feature `[B, H]` and the weights `[B, T]`.
fn attention_step<T: Scalar>(tape: &mut Tape<T>, net: &Net, enc: &Encoded, s: Var) -> Result<(Var, Var), KernelError> {
    let (mem, proj, bias) = (enc.mem.unwrap(), enc.mem_proj.unwrap(), enc.mem_bias.unwrap());
    let q = tape.matmul(s, net.p("att.wq"))?;
    let q = if enc.steps > 1 { tape.tile_rows(q, enc.steps)? } else { q };
    let e = tape.add(q, proj)?;
    let e = tape.tanh(e)?;
    let sc = tape.matmul(e, net.p("att.v"))?;
    let sc = tape.reshape(sc, &[enc.steps, enc.batch])?;
    let sc = tape.transpose(sc)?;
    let sc = tape.add(sc, bias)?;
    let alpha = tape.softmax(sc)?;
    let ctx = tape.attend(alpha, mem)?;
    let sc = tape.concat(&[s, ctx], 1)?;
    let feat = tape.linear(sc, net.p("att.c.w"), net.p("att.c.b"))?;
    Ok((tape.tanh(feat)?, alpha))
}

/// Recurrent decoder over `steps` time-major input ids.
pub(crate) struct RnnDecoded {
    pub features: Vec<Var>,
    pub state: Vec<(Var, Var)>,
    pub alphas: Vec<Var>,
}

pub(crate) fn rnn_decode<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    enc: &Encoded,
    ids_tm: &[usize],
    steps: usize,
    state: &[(Var, Var)],
) -> Result<RnnDecoded, KernelError> {
    let x = tape.embed(net.p("dec.emb"), ids_tm)?;
    let masks: Vec<Option<Vec<T>>> = vec![None; steps];
    let (outs, finals) = lstm_stack(tape, net, "dec", x, steps, enc.batch, &masks, Some(state))?;
    let mut features = Vec::with_capacity(steps);
    let mut alphas = Vec::new();
    for s in outs {
        if net.cfg.kind.has_attention() {
            let (f, a) = attention_step(tape, net, enc, s)?;
            features.push(f);
            alphas.push(a);
        } else {
            features.push(s);
        }
    }
    Ok(RnnDecoded { features, state: finals, alphas })
}

fn positional<T: Scalar>(steps: usize, d: usize) -> Vec<T> {
    let mut pe = vec![T::zero(); steps * d];
    for t in 0..steps {
        for i in (0..d).step_by(2) {
            let angle = t as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[t * d + i] = T::from_f64_lossy(angle.sin());
            if i + 1 < d {
                pe[t * d + i + 1] = T::from_f64_lossy(angle.cos());
            }
        }
    }
    pe
}

/// Batch-major embeddings `[B*T, d]` scaled by `sqrt(d)` plus positions.
fn transformer_embed<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    table: &str,
    seqs: &[Vec<usize>],
    steps: usize,
) -> Result<Var, KernelError> {
    let d = net.cfg.hidden_dim;
    let mut ids = vec![PAD; seqs.len() * steps];
    for (b, s) in seqs.iter().enumerate() {
        ids[b * steps..b * steps + s.len().min(steps)].copy_from_slice(&s[..s.len().min(steps)]);
    }
    let x = tape.embed(net.p(table), &ids)?;
    let x = tape.scale(x, T::from_f64_lossy((d as f64).sqrt()))?;
    let pe = positional::<T>(steps, d);
    let mut tiled = Vec::with_capacity(seqs.len() * steps * d);
    for _ in seqs {
        tiled.extend_from_slice(&pe);
    }
    let pos = cst(tape, vec![seqs.len() * steps, d], tiled)?;
    tape.add(x, pos)
}

fn layer_norm<T: Scalar>(tape: &mut Tape<T>, net: &Net, prefix: &str, x: Var) -> Result<Var, KernelError> {
    tape.layer_norm(x, net.p(&format!("{prefix}.g")), net.p(&format!("{prefix}.b")))
}

pub(crate) fn lin<T: Scalar>(tape: &mut Tape<T>, net: &Net, prefix: &str, x: Var) -> Result<Var, KernelError> {
    tape.linear(x, net.p(&format!("{prefix}.w")), net.p(&format!("{prefix}.b")))
}

/// Multi-head scaled dot-product attention; `bias` is a constant `[B, tq, tk]`.
#[allow(clippy::too_many_arguments)]
fn mha<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    prefix: &str,
    xq: Var,
    xkv: Var,
    batch: usize,
    tq: usize,
    tk: usize,
    bias: Var,
) -> Result<Var, KernelError> {
    let d = net.cfg.hidden_dim;
    let heads = net.cfg.heads;
    let dh = d / heads;
    let q = lin(tape, net, &format!("{prefix}.q"), xq)?;
    let k = lin(tape, net, &format!("{prefix}.k"), xkv)?;
    let v = lin(tape, net, &format!("{prefix}.v"), xkv)?;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let qh = tape.reshape(qh, &[batch, tq, dh])?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let kh = tape.reshape(kh, &[batch, tk, dh])?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let vh = tape.reshape(vh, &[batch, tk, dh])?;
        let s = tape.batch_matmul(qh, kh, true)?;
        let s = tape.scale(s, scale)?;
        let s = tape.add(s, bias)?;
        let a = tape.softmax(s)?;
        let o = tape.batch_matmul(a, vh, false)?;
        outs.push(tape.reshape(o, &[batch * tq, dh])?);
    }
    let o = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    lin(tape, net, &format!("{prefix}.o"), o)
}

fn feed_forward<T: Scalar>(tape: &mut Tape<T>, net: &Net, prefix: &str, x: Var) -> Result<Var, KernelError> {
    let h = lin(tape, net, &format!("{prefix}.ff1"), x)?;
    let h = tape.relu(h)?;
    lin(tape, net, &format!("{prefix}.ff2"), h)
}

/// `[B, tq, tk]` additive mask: padded keys, plus future keys when `causal`.
fn attention_bias<T: Scalar>(key_lens: &[usize], tq: usize, tk: usize, causal: bool) -> Vec<T> {
    let mask = T::from_f64_lossy(MEMORY_MASK);
    let mut v = vec![T::zero(); key_lens.len() * tq * tk];
    for (b, &len) in key_lens.iter().enumerate() {
        for i in 0..tq {
            for j in 0..tk {
                if j >= len || (causal && j > i) {
                    v[(b * tq + i) * tk + j] = mask;
                }
            }
        }
    }
    v
}

fn transformer_encode<T: Scalar>(tape: &mut Tape<T>, net: &Net, seqs: &[Vec<usize>]) -> Result<Encoded, KernelError> {
    let batch = seqs.len();
    let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let steps = lens.iter().copied().max().unwrap_or(1);
    let d = net.cfg.hidden_dim;
    let mut x = transformer_embed(tape, net, "enc.emb", seqs, steps)?;
    let bias = cst(tape, vec![batch, steps, steps], attention_bias::<T>(&lens, steps, steps, false))?;
    for l in 0..net.cfg.encoder_layers() {
        let p = format!("enc.{l}");
        let y = layer_norm(tape, net, &format!("{p}.ln1"), x)?;
        let a = mha(tape, net, &format!("{p}.att"), y, y, batch, steps, steps, bias)?;
        x = tape.add(x, a)?;
        let y = layer_norm(tape, net, &format!("{p}.ln2"), x)?;
        let f = feed_forward(tape, net, &p, y)?;
        x = tape.add(x, f)?;
    }
    let mem = layer_norm(tape, net, "enc.ln", x)?;
    let probe = match net.cfg.pooling {
        Pooling::Mean => {
            let mut pool = vec![T::zero(); batch * batch * steps];
            for (b, &len) in lens.iter().enumerate() {
                let w = T::one() / T::from_usize(len.max(1)).unwrap_or_else(T::one);
                for t in 0..len {
                    pool[b * batch * steps + b * steps + t] = w;
                }
            }
            let pool = cst(tape, vec![batch, batch * steps], pool)?;
            tape.matmul(pool, mem)?
        }
        Pooling::Last => {
            let idx: Vec<Option<usize>> =
                lens.iter().enumerate().map(|(b, &l)| Some(b * steps + l.max(1) - 1)).collect();
            tape.gather(mem, &idx)?
        }
    };
    let _ = d;
    let bias = key_bias::<T>(&lens, steps);
    let mem_bias = Some(cst(tape, vec![batch, steps], bias)?);
    Ok(Encoded { probe, init: Vec::new(), mem: Some(mem), mem_proj: None, mem_bias, steps, lens, batch })
}

/// Decoder features `[B*Td, d]` (batch-major) for right-padded inputs of width `td`.
pub(crate) fn transformer_decode<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    enc: &Encoded,
    inputs: &[Vec<usize>],
    td: usize,
) -> Result<Var, KernelError> {
    let batch = inputs.len();
    let mem = enc.mem.expect("transformer memory");
    let in_lens: Vec<usize> = inputs.iter().map(|s| s.len().min(td)).collect();
    let mut x = transformer_embed(tape, net, "dec.emb", inputs, td)?;
    let self_bias = cst(tape, vec![batch, td, td], attention_bias::<T>(&in_lens, td, td, true))?;
    let cross_bias = cst(tape, vec![batch, td, enc.steps], attention_bias::<T>(&enc.lens, td, enc.steps, false))?;
    for l in 0..net.cfg.decoder_layers() {
        let p = format!("dec.{l}");
        let y = layer_norm(tape, net, &format!("{p}.ln1"), x)?;
        let a = mha(tape, net, &format!("{p}.att"), y, y, batch, td, td, self_bias)?;
        x = tape.add(x, a)?;
        let y = layer_norm(tape, net, &format!("{p}.ln2"), x)?;
        let a = mha(tape, net, &format!("{p}.x"), y, mem, batch, td, enc.steps, cross_bias)?;
        x = tape.add(x, a)?;
        let y = layer_norm(tape, net, &format!("{p}.ln3"), x)?;
        let f = feed_forward(tape, net, &p, y)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, net, "dec.ln", x)
}

/// Target with EOS, truncated to the decode limit first.
pub(crate) fn with_eos(target: &[usize], max_len: usize) -> Vec<usize> {
    let mut t: Vec<usize> = target.iter().copied().take(max_len).collect();
    t.push(EOS);
    t
}

/// Summed teacher-forced NLL over all non-pad target steps of a batch.
pub(crate) fn batch_loss<T: Scalar>(tape: &mut Tape<T>, net: &Net, batch: &[&Pair]) -> Result<Var, KernelError> {
    let inputs: Vec<EncoderInput> = batch.iter().map(|p| p.input.clone()).collect();
    let enc = encode_graph(tape, net, &inputs)?;
    let targets: Vec<Vec<usize>> = batch.iter().map(|p| with_eos(&p.target, net.cfg.max_decode_len)).collect();
    let dec_in: Vec<Vec<usize>> =
        targets.iter().map(|t| std::iter::once(BOS).chain(t[..t.len() - 1].iter().copied()).collect()).collect();
    let td = targets.iter().map(Vec::len).max().unwrap_or(1);
    let b = batch.len();
    let (features, gold) = if net.cfg.kind == ModelKind::Transformer {
        let f = transformer_decode(tape, net, &enc, &dec_in, td)?;
        let gold: Vec<Option<usize>> = targets.iter().flat_map(|t| (0..td).map(move |s| t.get(s).copied())).collect();
        (f, gold)
    } else {
        let ids = time_major(&dec_in, td);
        let dec = rnn_decode(tape, net, &enc, &ids, td, &enc.init.clone())?;
        let f = tape.concat(&dec.features, 0)?;
        let gold: Vec<Option<usize>> = (0..td).flat_map(|s| targets.iter().map(move |t| t.get(s).copied())).collect();
        (f, gold)
    };
    debug_assert_eq!(gold.len(), td * b);
    let logits = lin(tape, net, "out", features)?;
    tape.cross_entropy(logits, &gold)
}

/// Attention weights of every decode step for a teacher-forced batch.
pub(crate) fn attention_weights<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Net,
    batch: &[&Pair],
) -> Result<Vec<Var>, KernelError> {
    let inputs: Vec<EncoderInput> = batch.iter().map(|p| p.input.clone()).collect();
    let enc = encode_graph(tape, net, &inputs)?;
    let dec_in: Vec<Vec<usize>> = batch
        .iter()
        .map(|p| std::iter::once(BOS).chain(p.target.iter().copied().take(net.cfg.max_decode_len)).collect())
        .collect();
    let td = dec_in.iter().map(Vec::len).max().unwrap_or(1);
    let ids = time_major(&dec_in, td);
    Ok(rnn_decode(tape, net, &enc, &ids, td, &enc.init.clone())?.alphas)
}
