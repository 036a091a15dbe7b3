//! Policy-input construction: the 3-channel state tensor.
//!
//! Channel 0 marks covered cells, channel 1 believed obstacles, channel 2 the
//! robot cell (one-hot). Known-area mode emits the full grid; unknown-area
//! mode crops the discovered region and squeezes it into an n-by-n tensor via
//! bicubic interpolation when it does not fit.

use crate::env::{Belief, Observation};
use crate::scalar::{cast, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// H x W x 3 observation tensor, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> StateTensor<S> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![S::zero(); 3 * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, channel: usize, r: usize, c: usize) -> S {
        self.data[(channel * self.height + r) * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, r: usize, c: usize, v: S) {
        self.data[(channel * self.height + r) * self.width + c] = v;
    }

    pub fn channel(&self, channel: usize) -> &[S] {
        let plane = self.height * self.width;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [S] {
        let plane = self.height * self.width;
        &mut self.data[channel * plane..(channel + 1) * plane]
    }

    /// Raw channel-major storage (length 3 * H * W).
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }
}

/// How observations are turned into network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderMode {
    /// Arena size is known: tensors span the full grid.
    Known,
    /// Arena size is unknown: tensors are n x n over the discovered region.
    Unknown { n: usize },
}

impl EncoderMode {
    /// Tensor side lengths (height, width) for a given arena size.
    pub fn tensor_dims(&self, map_h: usize, map_w: usize) -> (usize, usize) {
        match *self {
            EncoderMode::Known => (map_h, map_w),
            EncoderMode::Unknown { n } => {
                assert!(n >= 3, "unknown-area mode requires n >= 3");
                (n, n)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("bicubic resize requires both input sides >= 2, got {h}x{w}")]
    DimensionError { h: usize, w: usize },
}

/// Encodes the full arena (known-area mode). All channels are binary.
pub fn encode_known<S: Scalar>(obs: &Observation) -> StateTensor<S> {
    let mut t = StateTensor::zeros(obs.height, obs.width);
    for r in 0..obs.height {
        for c in 0..obs.width {
            if obs.covered_at(r, c) {
                t.set(0, r, c, S::one());
            }
            if obs.belief_at(r, c) == Belief::Obstacle {
                t.set(1, r, c, S::one());
            }
        }
    }
    t.set(2, obs.robot.0, obs.robot.1, S::one());
    t
}

/// Encodes into an n-by-n tensor (unknown-area mode).
///
/// The bounding box of discovered cells (non-unknown belief or covered) is
/// cropped; if it fits in n x n it is pasted at the top-left with zero
/// padding, otherwise channels 0 and 1 are bicubically resized and clamped to
/// [0, 1]. The robot channel is never interpolated: it is rebuilt one-hot at
/// the nearest scaled cell.
pub fn encode_unknown<S: Scalar>(obs: &Observation, n: usize) -> StateTensor<S> {
    assert!(n >= 3, "unknown-area mode requires n >= 3");
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..obs.height {
        for c in 0..obs.width {
            if obs.covered_at(r, c) || obs.belief_at(r, c) != Belief::Unknown {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    // The robot cell is always covered, so the box is nonempty.
    let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut t = StateTensor::zeros(n, n);
    if bh <= n && bw <= n {
        for r in 0..bh {
            for c in 0..bw {
                if obs.covered_at(r0 + r, c0 + c) {
                    t.set(0, r, c, S::one());
                }
                if obs.belief_at(r0 + r, c0 + c) == Belief::Obstacle {
                    t.set(1, r, c, S::one());
                }
            }
        }
        t.set(2, obs.robot.0 - r0, obs.robot.1 - c0, S::one());
    } else {
        let mut covered = vec![S::zero(); bh * bw];
        let mut obstacles = vec![S::zero(); bh * bw];
        for r in 0..bh {
            for c in 0..bw {
                if obs.covered_at(r0 + r, c0 + c) {
                    covered[r * bw + c] = S::one();
                }
                if obs.belief_at(r0 + r, c0 + c) == Belief::Obstacle {
                    obstacles[r * bw + c] = S::one();
                }
            }
        }
        let covered = resize_any(&covered, bh, bw, n, n);
        let obstacles = resize_any(&obstacles, bh, bw, n, n);
        for (dst, src) in t.channel_mut(0).iter_mut().zip(&covered) {
            *dst = src.max(S::zero()).min(S::one());
        }
        for (dst, src) in t.channel_mut(1).iter_mut().zip(&obstacles) {
            *dst = src.max(S::zero()).min(S::one());
        }
        let rr = scale_index(obs.robot.0 - r0, bh, n);
        let rc = scale_index(obs.robot.1 - c0, bw, n);
        t.set(2, rr, rc, S::one());
    }
    t
}

/// Dispatches on the encoder mode.
pub fn encode<S: Scalar>(obs: &Observation, mode: EncoderMode) -> StateTensor<S> {
    match mode {
        EncoderMode::Known => encode_known(obs),
        EncoderMode::Unknown { n } => encode_unknown(obs, n),
    }
}

/// Nearest output cell for a source cell center under the resize mapping.
fn scale_index(i: usize, in_len: usize, out_len: usize) -> usize {
    let pos = (i as f64 + 0.5) * out_len as f64 / in_len as f64;
    (pos.floor() as usize).min(out_len - 1)
}

/// Resizes a real matrix with the standard bicubic convolution kernel
/// (a = -0.5), clamping sample indices at the edges. Identity when the sizes
/// already match.
pub fn bicubic_resize<S: Scalar>(
    m: &[S],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<S>, EncodeError> {
    if h < 2 || w < 2 {
        return Err(EncodeError::DimensionError { h, w });
    }
    assert_eq!(m.len(), h * w, "matrix length does not match dimensions");
    assert!(out_h >= 1 && out_w >= 1);
    Ok(resize_any(m, h, w, out_h, out_w))
}

/// Internal resize that also tolerates degenerate (length-1) axes by
/// treating them as constant.
fn resize_any<S: Scalar>(m: &[S], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<S> {
    // Separable: rows first, then columns.
    let rows = resize_axis(m, h, w, out_h, true);
    resize_axis(&rows, out_h, w, out_w, false)
}

/// Cubic convolution kernel with a = -0.5.
fn cubic_kernel(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Tap positions and weights for one output index along an axis.
fn axis_taps(out_i: usize, in_len: usize, out_len: usize) -> ([usize; 4], [f64; 4]) {
    if in_len == out_len {
        // Exact identity path.
        return ([out_i, out_i, out_i, out_i], [1.0, 0.0, 0.0, 0.0]);
    }
    if in_len == 1 {
        return ([0, 0, 0, 0], [1.0, 0.0, 0.0, 0.0]);
    }
    let src = (out_i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let base = src.floor();
    let frac = src - base;
    let base = base as i64;
    let mut idx = [0usize; 4];
    let mut wts = [0f64; 4];
    for k in 0..4 {
        let tap = base - 1 + k as i64;
        idx[k] = tap.clamp(0, in_len as i64 - 1) as usize;
        wts[k] = cubic_kernel(frac - (k as f64 - 1.0));
    }
    (idx, wts)
}

fn resize_axis<S: Scalar>(m: &[S], h: usize, w: usize, out: usize, vertical: bool) -> Vec<S> {
    let (out_h, out_w) = if vertical { (out, w) } else { (h, out) };
    let axis_in = if vertical { h } else { w };
    let mut result = vec![S::zero(); out_h * out_w];
    let taps: Vec<_> = (0..out).map(|i| axis_taps(i, axis_in, out)).collect();
    if vertical {
        for (oi, (idx, wts)) in taps.iter().enumerate() {
            for c in 0..w {
                let mut acc = S::zero();
                for k in 0..4 {
                    acc += cast::<S>(wts[k]) * m[idx[k] * w + c];
                }
                result[oi * out_w + c] = acc;
            }
        }
    } else {
        for r in 0..h {
            for (oi, (idx, wts)) in taps.iter().enumerate() {
                let mut acc = S::zero();
                for k in 0..4 {
                    acc += cast::<S>(wts[k]) * m[r * w + idx[k]];
                }
                result[r * out_w + oi] = acc;
            }
        }
    }
    result
}
