//! Central-difference validation of analytic gradients (64-bit only).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::error::Result;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Elements perturbed per input tensor; larger inputs are sampled.
    pub max_elements: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            max_elements: 64,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
    /// Set when the function under test failed to evaluate.
    pub error: Option<String>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Scalar loss `sum(r * out)` with a fixed random `r`, so every output
/// element contributes with a distinct weight.
pub fn project_to_scalar(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = tape.value(out).shape().to_vec();
    let n = tape.value(out).len();
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let r = tape.leaf(r)?;
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Compares the tape's gradients of `f` against central differences with
/// respect to every input tensor.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> GradcheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    match run(&f, inputs, opts) {
        Ok(report) => report,
        Err(e) => GradcheckReport {
            max_rel_error: f64::INFINITY,
            worst: None,
            checked: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

fn run<F>(f: &F, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = None;
    let mut max_err = 0.0f64;
    let mut checked = 0;
    let mut perturbed = inputs.to_vec();

    for (which, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[which])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let indices: Vec<usize> = if input.len() <= opts.max_elements {
            (0..input.len()).collect()
        } else {
            let mut idx = sample(&mut rng, input.len(), opts.max_elements).into_vec();
            idx.sort_unstable();
            idx
        };
        for i in indices {
            let orig = input.data()[i];
            perturbed[which].data_mut()[i] = orig + opts.step;
            let up = evaluate(f, &perturbed)?;
            perturbed[which].data_mut()[i] = orig - opts.step;
            let down = evaluate(f, &perturbed)?;
            perturbed[which].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic.data()[i], numeric);
            checked += 1;
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((which, i));
            }
        }
    }
    Ok(GradcheckReport {
        max_rel_error: max_err,
        worst,
        checked,
        passed: max_err < opts.tolerance,
        error: None,
    })
}
