use dialprobe::gradkernel::{AdamConfig, AdamState, Tape};
use dialprobe::models::{
    export_representations, sequence_loss, train, EncoderInput, Model, ModelConfig, ModelKind, Pair, Stage, TrainConfig,
};
use dialprobe::Execution;

fn small(kind: ModelKind, vocab: usize) -> ModelConfig {
    let mut c = ModelConfig::desk_scale(kind, vocab);
    c.embed_dim = 6;
    c.hidden_dim = 6;
    c.ff_dim = 10;
    c
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM cell step from zero state, gates i, f, g, o.
fn cell_from_zero(x: &[f64], wx: &[f32], b: &[f32], h: usize) -> Vec<f64> {
    let gate = |k: usize, j: usize| -> f64 {
        let col = k * h + j;
        b[col] as f64 + x.iter().enumerate().map(|(r, xr)| xr * wx[r * 4 * h + col] as f64).sum::<f64>()
    };
    (0..h)
        .map(|j| {
            let c = sigmoid(gate(0, j)) * gate(2, j).tanh();
            sigmoid(gate(3, j)) * c.tanh()
        })
        .collect()
}

#[test]
fn single_token_encoding_is_one_cell_step_per_layer() {
    let m = Model::new(small(ModelKind::Lstm, 10)).unwrap();
    let h = m.config.hidden_dim;
    let e = m.config.embed_dim;
    let tok = 7;
    let p = |n: &str| m.params.get(n).unwrap().data().to_vec();
    let emb = p("enc.emb");
    let x: Vec<f64> = emb[tok * e..(tok + 1) * e].iter().map(|&v| v as f64).collect();
    let h0 = cell_from_zero(&x, &p("enc.l0.wx"), &p("enc.l0.b"), h);
    let h1 = cell_from_zero(&h0, &p("enc.l1.wx"), &p("enc.l1.b"), h);
    let got = m.encode(&[EncoderInput::new(vec![tok], vec![1])]).unwrap();
    assert_eq!(got[0].len(), h);
    for (a, b) in got[0].iter().zip(&h1) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn tied_bilstm_on_palindrome_doubles_one_direction() {
    let mut bi = Model::new(small(ModelKind::BilstmAttn, 10)).unwrap();
    let mut uni = Model::new(small(ModelKind::Lstm, 10)).unwrap();
    let emb = bi.params.get("enc.emb").unwrap().data().to_vec();
    uni.params.set("enc.emb", emb).unwrap();
    for l in 0..2 {
        for w in ["wx", "wh", "b"] {
            let fwd = bi.params.get(&format!("enc.fwd.l{l}.{w}")).unwrap().data().to_vec();
            bi.params.set(&format!("enc.bwd.l{l}.{w}"), fwd.clone()).unwrap();
            uni.params.set(&format!("enc.l{l}.{w}"), fwd).unwrap();
        }
    }
    let input = EncoderInput::new(vec![5, 6, 8, 6, 5], vec![5]);
    let both = bi.encode(&[input.clone()]).unwrap();
    let one = uni.encode(&[input]).unwrap();
    for (a, b) in both[0].iter().zip(&one[0]) {
        assert!((a - 2.0 * b).abs() < 1e-6, "{a} vs 2 x {b}");
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let v = 100;
    let pair = Pair { input: EncoderInput::new(vec![10, 20, 30], vec![3]), target: vec![11, 42, 57, 63, 99] };
    let uniform = 5.0 * (v as f64).ln();
    for kind in ModelKind::ALL {
        let cfg = ModelConfig::desk_scale(kind, v);
        let m = Model::new(cfg.clone()).unwrap();
        let mut tape = Tape::new();
        let vars = tape.bind_constants(&m.params);
        let loss = sequence_loss(&mut tape, &cfg, &vars, std::slice::from_ref(&pair)).unwrap();
        let l = tape.value(loss).item() as f64;
        assert!(l > uniform / 2.0 && l < uniform * 2.0, "{kind}: {l} vs {uniform}");
    }
}

#[test]
fn one_pair_is_memorized() {
    let pair = Pair { input: EncoderInput::new(vec![4, 9, 6], vec![2, 1]), target: vec![7, 5, 8] };
    for kind in ModelKind::ALL {
        let cfg = ModelConfig::desk_scale(kind, 12);
        let mut params = Model::new(cfg.clone()).unwrap().params;
        let mut adam = AdamState::new(&params);
        let step_loss = |params: &dialprobe::gradkernel::ParamStore<f32>| {
            let mut tape = Tape::new();
            let vars = tape.bind(params);
            let loss = sequence_loss(&mut tape, &cfg, &vars, std::slice::from_ref(&pair)).unwrap();
            let grads = tape.backward(loss).unwrap().for_params(&tape, &vars);
            (tape.value(loss).item() as f64, grads)
        };
        let first = step_loss(&params).0;
        for _ in 0..50 {
            let (_, g) = step_loss(&params);
            adam.update(&mut params, &g, &AdamConfig::with_lr(1e-2));
        }
        let last = step_loss(&params).0;
        assert!(last < 0.1 * first, "{kind}: {first} -> {last}");
        let m = Model::from_params(cfg, params).unwrap();
        assert_eq!(m.greedy_decode(&[pair.input.clone()]).unwrap()[0], pair.target, "{kind}");
    }
}

#[test]
fn zero_epochs_alias_every_stage_to_the_initial_weights() {
    let pairs: Vec<Pair> =
        (0..6).map(|i| Pair { input: EncoderInput::new(vec![4 + i, 5], vec![2]), target: vec![6 + i] }).collect();
    let cfg = small(ModelKind::LstmAttn, 12);
    let init = Model::new(cfg.clone()).unwrap();
    let mut seen = Vec::new();
    let tc = TrainConfig { epochs: 0, ..TrainConfig::default() };
    train(cfg, &pairs, &pairs, &tc, &mut |c| {
        assert_eq!(c.model.params, init.params, "{}", c.stage);
        seen.push(c.stage);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, [Stage::Untrained, Stage::Epoch(0), Stage::BestBleu, Stage::LastEpoch]);
}

#[test]
fn export_is_complete_and_execution_independent() {
    let items: Vec<(String, usize, EncoderInput)> = (0..70)
        .map(|i| {
            (format!("d{}", i / 7), i % 7, EncoderInput::new((0..1 + i % 9).map(|j| 4 + (i + j) % 8).collect(), vec![]))
        })
        .collect();
    for kind in ModelKind::ALL {
        let m = Model::new(small(kind, 12)).unwrap();
        let seq = export_representations(&m, &items, Execution::Sequential).unwrap();
        let par = export_representations(&m, &items, Execution::Parallel).unwrap();
        assert_eq!(seq.len(), items.len());
        assert_eq!(seq, par, "{kind}");
        for (r, it) in seq.iter().zip(&items) {
            assert_eq!((&r.dialogue_id, r.turn_index), (&it.0, it.1));
            assert_eq!(r.vector.len(), m.config.probe_dim());
        }
    }
}
