use crate::gradkernel::Scalar;

use super::lbfgs::minimize;
use super::{BinaryHead, ClassifierKind, Diagnostics, ProbeClassifier, ProbeDataset, ProbeError, Weights};
use crate::probelab::Label;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogregConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogregConfig {
    fn default() -> Self {
        LogregConfig { c: 1.0, max_iter: 250, tol: 1e-4 }
    }
}

/// `out[n×c] = x[n×d] · w[c×d]ᵀ + b`.
pub(crate) fn affine(x: &[f64], n: usize, d: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let c = b.len();
    for row in out.chunks_exact_mut(c) {
        row.copy_from_slice(b);
    }
    f64::gemm(n, d, c, x, false, w, true, 1.0, out);
}

/// Summed softmax NLL plus `‖W‖² / 2C`; gradient written to `grad`.
pub(crate) fn multinomial_objective(
    theta: &[f64],
    grad: &mut [f64],
    x: &[f64],
    y: &[u32],
    d: usize,
    classes: usize,
    c_reg: f64,
    scratch: &mut Vec<f64>,
) -> f64 {
    let n = y.len();
    let (w, b) = theta.split_at(classes * d);
    scratch.resize(n * classes, 0.0);
    affine(x, n, d, w, b, scratch);
    let mut loss = 0.0;
    for (row, &t) in scratch.chunks_exact_mut(classes).zip(y) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
        loss -= row[t as usize].max(f64::MIN_POSITIVE).ln();
        row[t as usize] -= 1.0;
    }
    let (gw, gb) = grad.split_at_mut(classes * d);
    // gW = Gᵀ X
    f64::gemm(classes, n, d, scratch, true, x, false, 0.0, gw);
    gb.iter_mut().for_each(|v| *v = 0.0);
    for row in scratch.chunks_exact(classes) {
        for (g, r) in gb.iter_mut().zip(row) {
            *g += r;
        }
    }
    let inv_c = 1.0 / c_reg;
    let mut pen = 0.0;
    for (g, wv) in gw.iter_mut().zip(w) {
        *g += inv_c * wv;
        pen += wv * wv;
    }
    loss + 0.5 * inv_c * pen
}

/// Summed binary logistic loss plus `‖w‖² / 2C`.
pub(crate) fn binary_objective(
    theta: &[f64],
    grad: &mut [f64],
    x: &[f64],
    y: &[bool],
    d: usize,
    c_reg: f64,
    scratch: &mut Vec<f64>,
) -> f64 {
    let n = y.len();
    let (w, b) = theta.split_at(d);
    scratch.resize(n, 0.0);
    affine(x, n, d, w, b, scratch);
    let mut loss = 0.0;
    for (z, &t) in scratch.iter_mut().zip(y) {
        // log(1 + e^z) - t z, stably
        let sp = if *z > 0.0 { *z + (-*z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += sp - if t { *z } else { 0.0 };
        let p = 1.0 / (1.0 + (-*z).exp());
        *z = p - if t { 1.0 } else { 0.0 };
    }
    let (gw, gb) = grad.split_at_mut(d);
    f64::gemm(1, n, d, scratch, false, x, false, 0.0, gw);
    gb[0] = scratch.iter().sum();
    let inv_c = 1.0 / c_reg;
    let mut pen = 0.0;
    for (g, wv) in gw.iter_mut().zip(w) {
        *g += inv_c * wv;
        pen += wv * wv;
    }
    loss + 0.5 * inv_c * pen
}

pub fn train_logreg(ds: &ProbeDataset, cfg: &LogregConfig) -> Result<ProbeClassifier, ProbeError> {
    if cfg.c <= 0.0 || !cfg.c.is_finite() {
        return Err(ProbeError::Config(format!("C must be positive, got {}", cfg.c)));
    }
    ds.check_trainable()?;
    let d = ds.dim;
    let mut diag = Diagnostics::default();
    let weights = if ds.set_task {
        let mut heads = Vec::with_capacity(ds.num_labels);
        let mut scratch = Vec::new();
        for l in 0..ds.num_labels as u32 {
            let y: Vec<bool> = ds.train_y.iter().map(|lab| matches!(lab, Label::Set(s) if s.contains(&l))).collect();
            let pos = y.iter().filter(|&&v| v).count();
            if pos == 0 || pos == y.len() {
                heads.push(BinaryHead::Constant(pos > 0));
                diag.degenerate_heads += 1;
                continue;
            }
            let r = minimize(
                vec![0.0; d + 1],
                |t, g| binary_objective(t, g, &ds.train_x, &y, d, cfg.c, &mut scratch),
                cfg.max_iter,
                cfg.tol,
            );
            diag.iterations = diag.iterations.max(r.iterations);
            diag.objective += r.objective;
            diag.grad_norm = diag.grad_norm.max(r.grad_norm);
            diag.history.push(r.history);
            let (w, b) = r.x.split_at(d);
            heads.push(BinaryHead::Fitted { w: w.to_vec(), b: b[0] });
        }
        Weights::OneVsRest(heads)
    } else {
        let y = ds.single_targets();
        let first = y[0];
        if y.iter().all(|&v| v == first) {
            diag.degenerate_heads = 1;
            Weights::Constant(first)
        } else {
            let c = ds.num_labels;
            let mut scratch = Vec::new();
            let r = minimize(
                vec![0.0; c * d + c],
                |t, g| multinomial_objective(t, g, &ds.train_x, &y, d, c, cfg.c, &mut scratch),
                cfg.max_iter,
                cfg.tol,
            );
            diag.iterations = r.iterations;
            diag.objective = r.objective;
            diag.grad_norm = r.grad_norm;
            diag.history.push(r.history);
            let (w, b) = r.x.split_at(c * d);
            Weights::Multinomial { w: w.to_vec(), b: b.to_vec() }
        }
    };
    Ok(ProbeClassifier::new(ClassifierKind::Logreg, ds, weights, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        let (n, d, c) = (7, 3, 4);
        let x: Vec<f64> = (0..n * d).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let y: Vec<u32> = (0..n as u32).map(|i| i % c as u32).collect();
        let theta: Vec<f64> = (0..c * d + c).map(|i| ((i * 13 % 7) as f64 - 3.0) / 10.0).collect();
        let mut scratch = Vec::new();
        let mut g = vec![0.0; theta.len()];
        multinomial_objective(&theta, &mut g, &x, &y, d, c, 0.7, &mut scratch);
        let mut dummy = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += 1e-6;
            let fp = multinomial_objective(&tp, &mut dummy, &x, &y, d, c, 0.7, &mut scratch);
            tp[i] -= 2e-6;
            let fm = multinomial_objective(&tp, &mut dummy, &x, &y, d, c, 0.7, &mut scratch);
            assert!(((fp - fm) / 2e-6 - g[i]).abs() < 1e-5, "coordinate {i}");
        }
        let yb: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let th = &theta[..d + 1];
        let mut g = vec![0.0; d + 1];
        binary_objective(th, &mut g, &x, &yb, d, 2.0, &mut scratch);
        let mut dummy = vec![0.0; d + 1];
        for i in 0..=d {
            let mut tp = th.to_vec();
            tp[i] += 1e-6;
            let fp = binary_objective(&tp, &mut dummy, &x, &yb, d, 2.0, &mut scratch);
            tp[i] -= 2e-6;
            let fm = binary_objective(&tp, &mut dummy, &x, &yb, d, 2.0, &mut scratch);
            assert!(((fp - fm) / 2e-6 - g[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_init_is_uniform() {
        // N ln C at the origin, whatever the features
        let (n, d, c) = (8, 2, 4);
        let x: Vec<f64> = (0..n * d).map(|i| i as f64).collect();
        let y: Vec<u32> = (0..n as u32).map(|i| i % 4).collect();
        let mut g = vec![0.0; c * d + c];
        let f = multinomial_objective(&vec![0.0; c * d + c], &mut g, &x, &y, d, c, 1.0, &mut Vec::new());
        assert!((f - n as f64 * (c as f64).ln()).abs() < 1e-12);
        // balanced labels: bias gradient vanishes
        assert!(g[c * d..].iter().all(|v| v.abs() < 1e-12));
    }
}
