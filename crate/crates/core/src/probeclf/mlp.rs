use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gradkernel::{AdamConfig, AdamState, Init, ParamStore, Tape, Tensor};
use crate::probelab::Label;

use super::{BinaryHead, ClassifierKind, Diagnostics, ProbeClassifier, ProbeDataset, ProbeError, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    /// Epoch cap.
    pub max_iter: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Minimum epoch-loss improvement that resets the patience counter.
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 100, max_iter: 250, lr: 1e-3, batch_size: 64, tol: 1e-4, patience: 10, seed: 0 }
    }
}

pub fn train_mlp(ds: &ProbeDataset, cfg: &MlpConfig) -> Result<ProbeClassifier, ProbeError> {
    if cfg.hidden == 0 {
        return Err(ProbeError::Config("the MLP needs at least one hidden unit".into()));
    }
    if cfg.batch_size == 0 {
        return Err(ProbeError::Config("batch_size must be positive".into()));
    }
    ds.check_trainable()?;
    let (n, d, c, h) = (ds.n_train(), ds.dim, ds.num_labels, cfg.hidden);

    // targets: class ids, or a dense 0/1 matrix for label sets
    let classes = ds.single_targets();
    let mut dense = vec![0f32; if ds.set_task { n * c } else { 0 }];
    if ds.set_task {
        for (i, y) in ds.train_y.iter().enumerate() {
            if let Label::Set(s) = y {
                for &l in s {
                    dense[i * c + l as usize] = 1.0;
                }
            }
        }
        let constant = (0..c).all(|l| (0..n).all(|i| dense[i * c + l] == dense[l]));
        if constant {
            let heads = (0..c).map(|l| BinaryHead::Constant(dense[l] > 0.0)).collect();
            let diag = Diagnostics { degenerate_heads: c, ..Diagnostics::default() };
            return Ok(ProbeClassifier::new(ClassifierKind::Mlp, ds, Weights::OneVsRest(heads), diag));
        }
    } else if classes.iter().all(|&v| v == classes[0]) {
        let diag = Diagnostics { degenerate_heads: 1, ..Diagnostics::default() };
        return Ok(ProbeClassifier::new(ClassifierKind::Mlp, ds, Weights::Constant(classes[0]), diag));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ParamStore<f32> = ParamStore::new();
    params.add("w1", &[d, h], Init::fan_in(d), &mut rng);
    params.add("b1", &[h], Init::Zeros, &mut rng);
    params.add("w2", &[h, c], Init::fan_in(h), &mut rng);
    params.add("b2", &[c], Init::Zeros, &mut rng);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt = AdamState::new(&params);
    let x32: Vec<f32> = ds.train_x.iter().map(|&v| v as f32).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut diag = Diagnostics::default();
    let mut trace = Vec::new();
    for epoch in 0..cfg.max_iter {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let mut xb = Vec::with_capacity(b * d);
            for &i in idx {
                xb.extend_from_slice(&x32[i * d..(i + 1) * d]);
            }
            let mut tape = Tape::new();
            let vars = tape.bind(&params);
            let x = tape.constant(Tensor::new(vec![b, d], xb).expect("batch shape"));
            let run = |tape: &mut Tape<f32>| -> Result<_, crate::gradkernel::KernelError> {
                let z = tape.linear(x, vars[0], vars[1])?;
                let z = tape.relu(z)?;
                let z = tape.linear(z, vars[2], vars[3])?;
                let loss = if ds.set_task {
                    let mut t = Vec::with_capacity(b * c);
                    for &i in idx {
                        t.extend_from_slice(&dense[i * c..(i + 1) * c]);
                    }
                    tape.sigmoid_bce(z, &t)?
                } else {
                    let t: Vec<Option<usize>> = idx.iter().map(|&i| Some(classes[i] as usize)).collect();
                    tape.cross_entropy(z, &t)?
                };
                tape.scale(loss, 1.0 / b as f32)
            };
            let loss = run(&mut tape).map_err(|e| ProbeError::Integrity(e.to_string()))?;
            total += tape.value(loss).item() as f64 * b as f64;
            let grads = tape.backward(loss).map_err(|e| ProbeError::Integrity(e.to_string()))?.for_params(&tape, &vars);
            opt.update(&mut params, &grads, &adam);
        }
        let mean = total / n as f64;
        trace.push(mean);
        diag.iterations = epoch + 1;
        if mean > best - cfg.tol {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(mean);
    }
    diag.objective = trace.last().copied().unwrap_or(f64::NAN);
    diag.history.push(trace);
    let grab = |name: &str| params.get(name).expect("mlp parameter").data().iter().map(|&v| v as f64).collect();
    let weights = Weights::Mlp { w1: grab("w1"), b1: grab("b1"), w2: grab("w2"), b2: grab("b2") };
    Ok(ProbeClassifier::new(ClassifierKind::Mlp, ds, weights, diag))
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, train_logreg, LogregConfig};
    use super::*;
    use crate::probelab::ProbeTaskId;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn xor() -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (cx, cy) in [(-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (1.0, -1.0)] {
            for _ in 0..50 {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                rows.push(vec![cx + 0.15 * nx, cy + 0.15 * ny]);
                ys.push(Label::Single(u32::from(cx * cy < 0.0)));
            }
        }
        ProbeDataset::from_rows(ProbeTaskId::IsMultiTopic, 2, None, &rows, ys.clone(), &rows, ys).unwrap()
    }

    #[test]
    fn xor_needs_the_hidden_layer() {
        let ds = xor();
        let mlp = train_mlp(&ds, &MlpConfig::default()).unwrap();
        let f_mlp = evaluate(&mlp, &ds).unwrap().report.f1;
        let f_lr = evaluate(&train_logreg(&ds, &LogregConfig::default()).unwrap(), &ds).unwrap().report.f1;
        assert!(f_mlp >= 0.95, "mlp {f_mlp}");
        assert!(f_lr <= 0.75, "logreg {f_lr}");
    }

    #[test]
    fn zero_hidden_is_a_config_error() {
        let cfg = MlpConfig { hidden: 0, ..MlpConfig::default() };
        assert!(matches!(train_mlp(&xor(), &cfg), Err(ProbeError::Config(_))));
    }

    #[test]
    fn seeded_training_repeats() {
        let ds = xor();
        let cfg = MlpConfig { max_iter: 5, ..MlpConfig::default() };
        assert_eq!(train_mlp(&ds, &cfg).unwrap(), train_mlp(&ds, &cfg).unwrap());
    }
}
