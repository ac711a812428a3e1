use super::cells::{recurrent_backward, recurrent_forward, RecurrentCache, RecurrentGrads, RecurrentParams};
use super::kernels::{affine_rows, affine_rows_backward};
use super::{Architecture, GradientSet, ParameterSet, Scalar};
use crate::error::{Error, Result};

/// Activations of one forward pass, borrowed against the parameters that
/// produced them so a backward pass can never see stale weights.
#[derive(Debug)]
pub struct ForwardCache<'p, T: Scalar> {
    params: &'p ParameterSet<T>,
    steps: usize,
    input: Vec<T>,
    recurrent: Vec<RecurrentCache<T>>,
    /// Input to each linear layer, head last. `steps x hidden` each.
    linear_inputs: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<'p, T: Scalar> ForwardCache<'p, T> {
    /// `steps x output_dim`, row-major.
    pub fn outputs(&self) -> &[T] {
        &self.output
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_outputs(self) -> Vec<T> {
        self.output
    }
}

struct Offsets {
    recurrent: Vec<usize>,
    linear: Vec<usize>,
}

fn offsets(arch: &Architecture) -> Offsets {
    let layout = arch.layout();
    let recurrent = (0..arch.recurrent_layers).map(|l| layout[4 * l].offset).collect();
    let linear = (0..=arch.linear_layers)
        .map(|k| layout[4 * arch.recurrent_layers + 2 * k].offset)
        .collect();
    Offsets { recurrent, linear }
}

fn recurrent_len(arch: &Architecture, layer: usize) -> usize {
    let gh = arch.recurrent_kind.gates() * arch.hidden_width;
    gh * (arch.layer_input(layer) + arch.hidden_width) + 2 * gh
}

/// Runs the network over one sequence. `inputs` is `steps x input_dim`,
/// row-major; recurrent state starts at zero.
pub fn forward<'p, T: Scalar>(params: &'p ParameterSet<T>, inputs: &[T]) -> Result<ForwardCache<'p, T>> {
    let arch = &params.arch;
    if params.values.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: arch.param_count(),
            actual: params.values.len(),
        });
    }
    if inputs.len() % arch.input_dim != 0 {
        return Err(Error::DimensionMismatch {
            context: "input sequence width",
            expected: arch.input_dim,
            actual: inputs.len() % arch.input_dim,
        });
    }
    let steps = inputs.len() / arch.input_dim;
    let h = arch.hidden_width;
    let off = offsets(arch);

    let mut recurrent = Vec::with_capacity(arch.recurrent_layers);
    for l in 0..arch.recurrent_layers {
        let region = &params.values[off.recurrent[l]..off.recurrent[l] + recurrent_len(arch, l)];
        let p = RecurrentParams::split(arch.recurrent_kind, region, arch.layer_input(l), h);
        let layer_input = match recurrent.last() {
            None => inputs,
            Some(prev) => RecurrentCache::outputs(prev, h),
        };
        let cache = recurrent_forward(&p, layer_input, steps);
        recurrent.push(cache);
    }

    let mut linear_inputs = Vec::with_capacity(arch.linear_layers + 1);
    let mut current = recurrent
        .last()
        .map(|c| c.outputs(h).to_vec())
        .unwrap_or_default();
    for k in 0..=arch.linear_layers {
        let rows = if k == arch.linear_layers { arch.output_dim } else { h };
        let o = off.linear[k];
        let w = &params.values[o..o + rows * h];
        let b = &params.values[o + rows * h..o + rows * h + rows];
        let next = affine_rows(w, b, h, &current, steps);
        linear_inputs.push(std::mem::replace(&mut current, next));
    }

    Ok(ForwardCache {
        params,
        steps,
        input: inputs.to_vec(),
        recurrent,
        linear_inputs,
        output: current,
    })
}

/// Mean over all steps and components of the squared error.
pub fn mse_loss<T: Scalar>(outputs: &[T], targets: &[T]) -> Result<T> {
    if outputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "loss targets",
            expected: outputs.len(),
            actual: targets.len(),
        });
    }
    if outputs.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = outputs.iter().zip(targets).map(|(&y, &t)| (y - t) * (y - t)).sum();
    Ok(sum / T::of_f64(outputs.len() as f64))
}

/// Exact gradient of [`mse_loss`] over the cached sequence.
pub fn backward<T: Scalar>(cache: &ForwardCache<'_, T>, targets: &[T]) -> Result<GradientSet<T>> {
    let mut grads = GradientSet::zeros(cache.params.arch);
    accumulate_gradients(cache, targets, T::one(), &mut grads)?;
    Ok(grads)
}

/// Adds `weight * d(mse)/d(params)` into `grads`.
pub fn accumulate_gradients<T: Scalar>(
    cache: &ForwardCache<'_, T>,
    targets: &[T],
    weight: T,
    grads: &mut GradientSet<T>,
) -> Result<()> {
    let params = cache.params;
    let arch = &params.arch;
    if grads.arch != *arch || grads.values.len() != params.values.len() {
        return Err(Error::ArchitectureMismatch(
            "gradient buffer does not match the cached parameters".into(),
        ));
    }
    if targets.len() != cache.output.len() {
        return Err(Error::DimensionMismatch {
            context: "backward targets",
            expected: cache.output.len(),
            actual: targets.len(),
        });
    }
    if cache.steps == 0 {
        return Ok(());
    }
    let h = arch.hidden_width;
    let steps = cache.steps;
    let off = offsets(arch);
    let scale = weight * T::of_f64(2.0 / cache.output.len() as f64);

    let mut d_current: Vec<T> = cache
        .output
        .iter()
        .zip(targets)
        .map(|(&y, &t)| scale * (y - t))
        .collect();

    for k in (0..=arch.linear_layers).rev() {
        let rows = if k == arch.linear_layers { arch.output_dim } else { h };
        let o = off.linear[k];
        let w = &params.values[o..o + rows * h];
        let (dw, db) = grads.values[o..o + rows * h + rows].split_at_mut(rows * h);
        d_current = affine_rows_backward(w, h, &cache.linear_inputs[k], &d_current, dw, db, true);
    }

    for l in (0..arch.recurrent_layers).rev() {
        let len = recurrent_len(arch, l);
        let region = &params.values[off.recurrent[l]..off.recurrent[l] + len];
        let p = RecurrentParams::split(arch.recurrent_kind, region, arch.layer_input(l), h);
        let g_region = &mut grads.values[off.recurrent[l]..off.recurrent[l] + len];
        let g = RecurrentGrads::split(arch.recurrent_kind, g_region, arch.layer_input(l), h);
        let layer_input: &[T] = if l == 0 {
            &cache.input
        } else {
            cache.recurrent[l - 1].outputs(h)
        };
        d_current = recurrent_backward(&p, &cache.recurrent[l], layer_input, &d_current, g, l > 0);
    }
    debug_assert!(steps > 0);
    Ok(())
}
