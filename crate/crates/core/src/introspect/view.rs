use num_complex::Complex64;

use super::IntrospectError;
use crate::dsp;
use crate::nn::{LayerKind, ModelSpec, ModelState, INPUT_CHANNELS};
use crate::synth::FRAME_LEN;

/// 128-point forward DFT, `X[k] = sum_n x[n] exp(-j 2 pi k n / 128)`.
///
/// # Panics
/// If `x` is not 128 samples long.
pub fn fft128(x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(x.len(), FRAME_LEN, "fft128 needs exactly {FRAME_LEN} samples");
    dsp::fft(x)
}

/// Inverse of [`fft128`].
pub fn ifft128(x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(x.len(), FRAME_LEN, "ifft128 needs exactly {FRAME_LEN} samples");
    dsp::ifft(x)
}

/// One first-layer filter read as complex taps `h[n] = w[f][0][n] + j w[f][1][n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterView {
    pub layer: usize,
    pub filter: usize,
    pub taps: Vec<Complex64>,
    /// `|fft128(taps zero-padded to 128)|`.
    pub spectrum: Vec<f64>,
}

fn conv_weights<'a>(
    spec: &ModelSpec,
    state: &'a ModelState<f32>,
    layer: usize,
) -> Result<(&'a crate::engine::Tensor<f32>, usize, usize), IntrospectError> {
    if !state.matches(spec) {
        return Err(crate::nn::ModelError::StateMismatch.into());
    }
    let l = spec.layers.get(layer).ok_or_else(|| IntrospectError::Target {
        layer,
        detail: format!("model has {} layers", spec.layers.len()),
    })?;
    let LayerKind::Conv1d { filters, taps } = l.kind else {
        return Err(IntrospectError::Target {
            layer,
            detail: format!("`{}` is not a conv1d layer", l.name),
        });
    };
    let offsets = ModelState::<f32>::layer_offsets(spec).map_err(crate::nn::ModelError::from)?;
    let w = &state.params[offsets[layer]];
    if w.shape()[1] != INPUT_CHANNELS {
        return Err(IntrospectError::Target {
            layer,
            detail: format!("filters span {} channels, need {INPUT_CHANNELS} (I and Q)", w.shape()[1]),
        });
    }
    if taps > FRAME_LEN {
        return Err(IntrospectError::Target {
            layer,
            detail: format!("{taps} taps do not fit a {FRAME_LEN}-point transform"),
        });
    }
    Ok((w, filters, taps))
}

/// Number of filters in conv layer `layer` if it reads I/Q directly.
pub fn filter_count(spec: &ModelSpec, state: &ModelState<f32>, layer: usize) -> Result<usize, IntrospectError> {
    conv_weights(spec, state, layer).map(|(_, f, _)| f)
}

/// Time and frequency view of one filter of a conv layer with two input
/// channels. Taps are zero-padded to 128 before the transform.
pub fn filter_view(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    layer: usize,
    filter: usize,
) -> Result<FilterView, IntrospectError> {
    let (w, filters, taps) = conv_weights(spec, state, layer)?;
    if filter >= filters {
        return Err(IntrospectError::Target {
            layer,
            detail: format!("filter {filter} out of range ({filters} filters)"),
        });
    }
    let base = filter * INPUT_CHANNELS * taps;
    let d = w.data();
    let h: Vec<Complex64> = (0..taps)
        .map(|n| Complex64::new(d[base + n] as f64, d[base + taps + n] as f64))
        .collect();
    let mut padded = h.clone();
    padded.resize(FRAME_LEN, Complex64::new(0.0, 0.0));
    let spectrum = fft128(&padded).iter().map(|c| c.norm()).collect();
    Ok(FilterView {
        layer,
        filter,
        taps: h,
        spectrum,
    })
}
