use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KernelError, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Elements compared; every element is checked when the model is smaller.
    pub samples: usize,
    /// Denominator floor: errors on gradients smaller than this are measured
    /// against `floor` instead of the gradient magnitude.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-4, tolerance: 1e-4, samples: 200, floor: 1e-3, seed: 7 }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions { tolerance, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub checked: usize,
    /// Element with the largest relative error.
    pub worst: Option<ElementCheck>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "pass" } else { "FAIL" };
        match &self.worst {
            Some(w) => write!(
                f,
                "{verdict}: {} elements, worst {}[{}] analytic {:.6e} numeric {:.6e} rel {:.3e}",
                self.checked, w.param, w.index, w.analytic, w.numeric, w.rel_error
            ),
            None => write!(f, "{verdict}: no elements checked"),
        }
    }
}

/// Compares backprop gradients of `loss_fn` with central finite differences.
///
/// `loss_fn` receives a fresh checked tape and the bound parameter variables
/// (in store order) and must return a scalar.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError>,
{
    let mut tape = Tape::checked();
    let bound = tape.bind(params);
    let loss = loss_fn(&mut tape, &bound)?;
    let grads = tape.backward(loss)?.for_params(&tape, &bound);
    compare_gradients(params, loss_fn, &grads, opts)
}

/// Checks supplied `analytic` gradients against finite differences of `loss_fn`.
pub fn compare_gradients<F>(
    params: &ParamStore<f64>,
    loss_fn: F,
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64, KernelError> {
        let mut tape = Tape::checked();
        let bound = tape.bind(p);
        let loss = loss_fn(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    };

    let mut all: Vec<(usize, usize)> = Vec::new();
    for id in 0..params.len() {
        all.extend((0..params.tensor(id).len()).map(|j| (id, j)));
    }
    let picked: Vec<(usize, usize)> = if all.len() <= opts.samples {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, all.len(), opts.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i]).collect()
    };

    let mut work = params.clone();
    let mut worst: Option<ElementCheck> = None;
    let mut passed = true;
    for &(id, j) in &picked {
        let orig = work.tensor(id).data()[j];
        work.tensor_mut(id).data_mut()[j] = orig + opts.epsilon;
        let up = eval(&work)?;
        work.tensor_mut(id).data_mut()[j] = orig - opts.epsilon;
        let down = eval(&work)?;
        work.tensor_mut(id).data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * opts.epsilon);
        let a = analytic[id].data()[j];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel_error > opts.tolerance {
            passed = false;
        }
        if worst.as_ref().map_or(true, |w| rel_error > w.rel_error) {
            worst =
                Some(ElementCheck { param: params.name(id).to_string(), index: j, analytic: a, numeric, rel_error });
        }
    }
    Ok(GradCheckReport { passed, checked: picked.len(), worst })
}
