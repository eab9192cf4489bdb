#![allow(dead_code)]

use dialprobe::gradkernel::{
    grad_check, GradCheckOptions, GradCheckReport, KernelError, ParamStore, Tape, Tensor, Var,
};
use dialprobe::models::{initial_params, sequence_loss, EncoderInput, ModelConfig, ModelKind, Pair, Pooling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LossFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError>>;

/// Uniform(-1, 1) entries kept at least 0.05 away from zero so kinks
/// (relu) stay outside the finite-difference stencil.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            if x.abs() < 0.05 {
                x + 0.1f64.copysign(x)
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_store(seed: u64, shapes: &[&[usize]]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        store.insert(format!("p{i}"), random_tensor(&mut rng, s));
    }
    store
}

/// Scalar `sum(w * x)` with fixed uneven weights, so that outputs with a
/// constant plain sum (softmax rows) still have informative gradients.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var) -> Result<Var, KernelError> {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0 + 0.1).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

pub fn check(store: &ParamStore<f64>, tolerance: f64, f: LossFn) -> GradCheckReport {
    grad_check(store, f, &GradCheckOptions::with_tolerance(tolerance)).expect("loss graph builds")
}

/// One gradient-check case: parameter shapes plus a graph over them.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub tolerance: f64,
    pub loss: LossFn,
}

fn case(
    name: &'static str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError> + 'static,
) -> OpCase {
    OpCase { name, shapes: shapes.iter().map(|s| s.to_vec()).collect(), tolerance: 1e-4, loss: Box::new(f) }
}

/// Weighted sum of a single op output.
fn unary(
    name: &'static str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError> + 'static,
) -> OpCase {
    case(name, shapes, move |t, p| {
        let y = f(t, p)?;
        weighted_sum(t, y)
    })
}

/// Every differentiable tape op at small fixed shapes.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        unary("matmul", &[&[3, 4], &[4, 2]], |t, p| t.matmul(p[0], p[1])),
        unary("add", &[&[3, 4], &[3, 4]], |t, p| t.add(p[0], p[1])),
        unary("mul", &[&[3, 4], &[3, 4]], |t, p| t.mul(p[0], p[1])),
        unary("add_row_bias", &[&[3, 4], &[4]], |t, p| t.add_row_bias(p[0], p[1])),
        unary("scale", &[&[3, 4]], |t, p| t.scale(p[0], 1.7)),
        unary("sigmoid", &[&[3, 4]], |t, p| t.sigmoid(p[0])),
        unary("tanh", &[&[3, 4]], |t, p| t.tanh(p[0])),
        unary("relu", &[&[3, 4]], |t, p| t.relu(p[0])),
        unary("softmax", &[&[3, 5]], |t, p| t.softmax(p[0])),
        unary("gather", &[&[5, 3]], |t, p| t.gather(p[0], &[Some(1), None, Some(4), Some(1)])),
        unary("embed", &[&[6, 3]], |t, p| t.embed(p[0], &[0, 2, 2, 5])),
        unary("concat_rows", &[&[2, 3], &[3, 3]], |t, p| t.concat(&[p[0], p[1]], 0)),
        unary("concat_cols", &[&[3, 2], &[3, 4]], |t, p| t.concat(&[p[0], p[1]], 1)),
        unary("slice_cols", &[&[3, 5]], |t, p| t.slice_cols(p[0], 1, 3)),
        unary("slice_rows", &[&[5, 3]], |t, p| t.slice_rows(p[0], 1, 2)),
        unary("reshape", &[&[3, 4]], |t, p| {
            let r = t.reshape(p[0], &[4, 3])?;
            t.tanh(r)
        }),
        unary("transpose", &[&[3, 4]], |t, p| t.transpose(p[0])),
        unary("tile_rows", &[&[2, 3]], |t, p| t.tile_rows(p[0], 3)),
        unary("blend", &[&[3, 4], &[3, 4]], |t, p| t.blend(&[1.0, 0.0, 1.0], p[0], p[1])),
        unary("attend", &[&[2, 3], &[6, 4]], |t, p| {
            let a = t.softmax(p[0])?;
            t.attend(a, p[1])
        }),
        unary("batch_matmul", &[&[2, 3, 4], &[2, 4, 5]], |t, p| t.batch_matmul(p[0], p[1], false)),
        unary("batch_matmul_trans", &[&[2, 3, 4], &[2, 5, 4]], |t, p| t.batch_matmul(p[0], p[1], true)),
        unary("layer_norm", &[&[3, 5], &[5], &[5]], |t, p| t.layer_norm(p[0], p[1], p[2])),
        case("sum", &[&[3, 4]], |t, p| {
            let y = t.tanh(p[0])?;
            t.sum(y)
        }),
        case("mean", &[&[3, 4]], |t, p| {
            let y = t.sigmoid(p[0])?;
            t.mean(y)
        }),
        case("cross_entropy", &[&[4, 5]], |t, p| t.cross_entropy(p[0], &[Some(0), None, Some(3), Some(4)])),
        case("sigmoid_bce", &[&[3, 4]], |t, p| {
            let y: Vec<f64> = (0..12).map(|i| ((i * 5) % 3 == 0) as u8 as f64).collect();
            t.sigmoid_bce(p[0], &y)
        }),
    ];
    let mut linear = unary("linear", &[&[3, 4], &[4, 2], &[2]], |t, p| t.linear(p[0], p[1], p[2]));
    linear.tolerance = 1e-6;
    cases.push(linear);
    cases
}

/// A tanh chain of the given depth.
pub fn tanh_chain(depth: usize) -> OpCase {
    case("tanh_chain", &[&[3, 4]], move |t, p| {
        let mut x = p[0];
        for _ in 0..depth {
            let s = t.scale(x, 1.5)?;
            x = t.tanh(s)?;
        }
        weighted_sum(t, x)
    })
}

/// One LSTM cell step written with tape ops, gates ordered i, f, g, o.
pub fn lstm_cell() -> OpCase {
    const H: usize = 4;
    case("lstm_cell", &[&[2, 3], &[2, H], &[2, H], &[3, 4 * H], &[H, 4 * H], &[4 * H]], |t, p| {
        let (x, h, c, wx, wh, b) = (p[0], p[1], p[2], p[3], p[4], p[5]);
        let xw = t.linear(x, wx, b)?;
        let hw = t.matmul(h, wh)?;
        let g = t.add(xw, hw)?;
        let i = t.slice_cols(g, 0, H)?;
        let i = t.sigmoid(i)?;
        let f = t.slice_cols(g, H, H)?;
        let f = t.sigmoid(f)?;
        let gg = t.slice_cols(g, 2 * H, H)?;
        let gg = t.tanh(gg)?;
        let o = t.slice_cols(g, 3 * H, H)?;
        let o = t.sigmoid(o)?;
        let fc = t.mul(f, c)?;
        let ig = t.mul(i, gg)?;
        let c2 = t.add(fc, ig)?;
        let tc = t.tanh(c2)?;
        let h2 = t.mul(o, tc)?;
        let both = t.concat(&[h2, c2], 1)?;
        weighted_sum(t, both)
    })
}

pub fn run_case(c: &OpCase, seed: u64) -> GradCheckReport {
    let shapes: Vec<&[usize]> = c.shapes.iter().map(Vec::as_slice).collect();
    let store = random_store(seed, &shapes);
    grad_check(&store, &c.loss, &GradCheckOptions::with_tolerance(c.tolerance)).expect("loss graph builds")
}

/// Tiny configuration used for whole-model gradient checks.
pub fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        vocab_size: 12,
        embed_dim: 8,
        hidden_dim: 8,
        layers: 2,
        heads: 2,
        ff_dim: 16,
        window: 5,
        max_decode_len: 30,
        pooling: Pooling::Mean,
        seed: 3,
    }
}

/// Two pairs with 5-token contexts split into turns.
pub fn tiny_pairs() -> Vec<Pair> {
    vec![
        Pair { input: EncoderInput::new(vec![4, 5, 6, 7, 8], vec![2, 3]), target: vec![9, 10, 11] },
        Pair { input: EncoderInput::new(vec![11, 4, 9, 6, 5], vec![3, 1, 1]), target: vec![7, 4] },
    ]
}

/// Finite-difference check of the summed NLL of a whole model in f64.
pub fn model_check(kind: ModelKind) -> GradCheckReport {
    let cfg = tiny_config(kind);
    let mut params = initial_params::<f64>(&cfg).expect("valid config");
    // move off the zero-initialized biases so every path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for id in 0..params.len() {
        for x in params.tensor_mut(id).data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    let pairs = tiny_pairs();
    grad_check(
        &params,
        move |t: &mut Tape<f64>, v: &[Var]| sequence_loss(t, &cfg, v, &pairs),
        &GradCheckOptions::default(),
    )
    .expect("loss graph builds")
}
