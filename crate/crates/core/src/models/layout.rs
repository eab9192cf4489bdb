use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, ModelKind};
use crate::gradkernel::{Init, ParamStore, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec { name, shape: shape.to_vec(), init });
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.w"), &[fan_in, fan_out], Init::fan_in(fan_in));
        self.push(format!("{prefix}.b"), &[fan_out], Init::Zeros);
    }

    /// Input weights, recurrent weights and bias (forget slice set after init).
    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize, layers: usize) {
        let init = Init::fan_in(hidden);
        for l in 0..layers {
            let fan = if l == 0 { input } else { hidden };
            self.push(format!("{prefix}.l{l}.wx"), &[fan, 4 * hidden], init);
            self.push(format!("{prefix}.l{l}.wh"), &[hidden, 4 * hidden], init);
            self.push(format!("{prefix}.l{l}.b"), &[4 * hidden], Init::Zeros);
        }
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.g"), &[d], Init::Constant(1.0));
        self.push(format!("{prefix}.b"), &[d], Init::Zeros);
    }

    fn mha(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }
}

/// Every parameter of an architecture, in storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
    let mut s = Specs(Vec::new());
    match cfg.kind {
        ModelKind::Transformer => {
            let emb = Init::Normal(1.0 / (e as f64).sqrt());
            s.push("enc.emb".into(), &[v, e], emb);
            s.push("dec.emb".into(), &[v, e], emb);
            for l in 0..cfg.encoder_layers() {
                let p = format!("enc.{l}");
                s.layer_norm(&format!("{p}.ln1"), h);
                s.mha(&format!("{p}.att"), h);
                s.layer_norm(&format!("{p}.ln2"), h);
                s.linear(&format!("{p}.ff1"), h, cfg.ff_dim);
                s.linear(&format!("{p}.ff2"), cfg.ff_dim, h);
            }
            s.layer_norm("enc.ln", h);
            for l in 0..cfg.decoder_layers() {
                let p = format!("dec.{l}");
                s.layer_norm(&format!("{p}.ln1"), h);
                s.mha(&format!("{p}.att"), h);
                s.layer_norm(&format!("{p}.ln2"), h);
                s.mha(&format!("{p}.x"), h);
                s.layer_norm(&format!("{p}.ln3"), h);
                s.linear(&format!("{p}.ff1"), h, cfg.ff_dim);
                s.linear(&format!("{p}.ff2"), cfg.ff_dim, h);
            }
            s.layer_norm("dec.ln", h);
            s.linear("out", h, v);
        }
        kind => {
            let emb = Init::Normal(0.1);
            s.push("enc.emb".into(), &[v, e], emb);
            match kind {
                ModelKind::BilstmAttn => {
                    s.lstm("enc.fwd", e, h, cfg.layers);
                    s.lstm("enc.bwd", e, h, cfg.layers);
                }
                ModelKind::Hred => {
                    s.lstm("sent", e, h, cfg.layers);
                    s.lstm("ctx", h, h, cfg.layers);
                }
                _ => s.lstm("enc", e, h, cfg.layers),
            }
            s.push("dec.emb".into(), &[v, e], emb);
            s.lstm("dec", e, h, cfg.layers);
            if kind.has_attention() {
                s.push("att.wq".into(), &[h, h], Init::fan_in(h));
                s.linear("att.m", h, h);
                s.push("att.v".into(), &[h, 1], Init::fan_in(h));
                s.linear("att.c", 2 * h, h);
            }
            s.linear("out", h, v);
        }
    }
    s.0
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_shapes(cfg).iter().map(|p| p.shape.iter().product::<usize>()).sum()
}

/// Name → storage position.
pub(crate) fn name_index(cfg: &ModelConfig) -> HashMap<String, usize> {
    param_shapes(cfg).into_iter().enumerate().map(|(i, p)| (p.name, i)).collect()
}

fn is_lstm_bias(name: &str) -> bool {
    let mut parts = name.rsplit('.');
    parts.next() == Some("b")
        && parts.next().is_some_and(|l| l.len() > 1 && l.starts_with('l') && l[1..].bytes().all(|c| c.is_ascii_digit()))
}

/// Seeded parameters; LSTM forget-gate biases start at 1.
pub(crate) fn init_params<T: Scalar>(cfg: &ModelConfig) -> Result<ParamStore<T>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    for spec in param_shapes(cfg) {
        store.add(&spec.name, &spec.shape, spec.init, &mut rng);
        if cfg.kind.is_recurrent() && is_lstm_bias(&spec.name) {
            let h = cfg.hidden_dim;
            let t = store.get_mut(&spec.name).expect("just inserted");
            for x in &mut t.data_mut()[h..2 * h] {
                *x = T::one();
            }
        }
    }
    Ok(store)
}
