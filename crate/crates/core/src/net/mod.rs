//! Self-contained Q-network engine: two 3x3 same-padded convolutions, dense
//! layers, leaky-ReLU activations, a plain or dueling head, Huber loss, exact
//! backpropagation, and Adam. All parameters live in one flat vector so the
//! optimizer, checkpointing, and finite-difference checks stay simple.

mod checkpoint;

pub use checkpoint::CheckpointError;

use crate::scalar::{cast, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Output head of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// One linear output per action.
    Plain,
    /// State-value plus mean-centered advantages.
    Dueling,
}

/// Static architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    /// Filter counts of the two convolutional layers.
    pub conv_filters: [usize; 2],
    /// Square kernel side (3), stride 1, zero padding preserves H x W.
    pub kernel: usize,
    /// Widths of the fully-connected hidden layers.
    pub fc_units: Vec<usize>,
    pub actions: usize,
    pub head: HeadKind,
    pub leaky_slope: f64,
}

impl NetworkSpec {
    /// Default architecture for an H x W x 3 input and |A| actions.
    pub fn new(in_h: usize, in_w: usize, actions: usize) -> Self {
        Self {
            in_h,
            in_w,
            in_c: 3,
            conv_filters: [16, 32],
            kernel: 3,
            fc_units: vec![64],
            actions,
            head: HeadKind::Dueling,
            leaky_slope: 0.01,
        }
    }

    pub fn with_filters(mut self, c1: usize, c2: usize) -> Self {
        self.conv_filters = [c1, c2];
        self
    }

    pub fn with_fc_units(mut self, units: Vec<usize>) -> Self {
        assert!(!units.is_empty(), "at least one hidden layer required");
        self.fc_units = units;
        self
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    fn plane(&self) -> usize {
        self.in_h * self.in_w
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("incompatible network specs")]
    SpecMismatch,
    #[error("non-finite gradient at parameter index {0}")]
    NonFiniteGradient(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Flat-vector segment addresses for every layer.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    conv1_w: Range<usize>,
    conv1_b: Range<usize>,
    conv2_w: Range<usize>,
    conv2_b: Range<usize>,
    fc: Vec<(Range<usize>, Range<usize>)>,
    val: Option<(Range<usize>, Range<usize>)>,
    adv: (Range<usize>, Range<usize>),
    total: usize,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let k2 = spec.kernel * spec.kernel;
        let [c1, c2] = spec.conv_filters;
        let mut cursor = 0usize;
        let mut seg = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let conv1_w = seg(c1 * spec.in_c * k2);
        let conv1_b = seg(c1);
        let conv2_w = seg(c2 * c1 * k2);
        let conv2_b = seg(c2);
        let mut fc = Vec::new();
        let mut fan_in = c2 * spec.plane();
        for &units in &spec.fc_units {
            let w = seg(units * fan_in);
            let b = seg(units);
            fc.push((w, b));
            fan_in = units;
        }
        let val = match spec.head {
            HeadKind::Dueling => Some((seg(fan_in), seg(1))),
            HeadKind::Plain => None,
        };
        let adv = (seg(spec.actions * fan_in), seg(spec.actions));
        Layout { conv1_w, conv1_b, conv2_w, conv2_b, fc, val, adv, total: cursor }
    }
}

/// Q-network parameters. Cloning copies the weights; optimizer moments live
/// separately in [`AdamState`].
#[derive(Clone, Debug)]
pub struct QNetwork<S> {
    spec: NetworkSpec,
    layout: Layout,
    params: Vec<S>,
}

/// Adam moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(net: &QNetwork<S>) -> Self {
        Self { m: vec![S::zero(); net.params.len()], v: vec![S::zero(); net.params.len()], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Adam hyper-parameters; `minibatch` is the sampling batch size used by the
/// trainer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub minibatch: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, minibatch: 32 }
    }
}

/// Huber loss with kappa = 1: value and derivative at `residual`.
#[inline]
pub fn huber<S: Scalar>(residual: S) -> (S, S) {
    let kappa = S::one();
    if residual.abs() <= kappa {
        (cast::<S>(0.5) * residual * residual, residual)
    } else {
        (kappa * (residual.abs() - cast::<S>(0.5) * kappa), kappa * residual.signum())
    }
}

/// One training sample for [`QNetwork::backward`].
pub struct BatchItem<'a, S> {
    /// Encoded state tensor, channel-major, length `spec.input_len()`.
    pub x: &'a [S],
    pub action: usize,
    pub target: S,
    /// Importance-sampling weight.
    pub weight: S,
}

/// Gradients plus diagnostics from one backward pass.
pub struct BackwardOut<S> {
    /// Flat gradient, same layout as the parameter vector.
    pub grads: Vec<S>,
    /// Mean weighted Huber loss over the batch.
    pub mean_loss: S,
    /// Per-sample TD residuals q(x)[action] - target.
    pub residuals: Vec<S>,
}

struct ForwardCache<S> {
    patches1: Vec<S>,
    z1: Vec<S>,
    patches2: Vec<S>,
    z2: Vec<S>,
    a2: Vec<S>,
    fc_z: Vec<Vec<S>>,
    fc_a: Vec<Vec<S>>,
    q: Vec<S>,
}

impl<S: Scalar> QNetwork<S> {
    /// Fan-in-scaled uniform initialization, deterministic per seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let layout = Layout::new(&spec);
        let mut params = vec![S::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = spec.kernel * spec.kernel;
        let mut fill = |range: Range<usize>, fan_in: usize, params: &mut Vec<S>| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for i in range {
                params[i] = cast::<S>(rng.random_range(-bound..bound));
            }
        };
        fill(layout.conv1_w.clone(), spec.in_c * k2, &mut params);
        fill(layout.conv2_w.clone(), spec.conv_filters[0] * k2, &mut params);
        let mut fan_in = spec.conv_filters[1] * spec.plane();
        for (i, (w, _)) in layout.fc.iter().enumerate() {
            fill(w.clone(), fan_in, &mut params);
            fan_in = spec.fc_units[i];
        }
        if let Some((w, _)) = &layout.val {
            fill(w.clone(), fan_in, &mut params);
        }
        fill(layout.adv.0.clone(), fan_in, &mut params);
        Self { spec, layout, params }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named parameter segments in flat-vector order, for diagnostics and
    /// per-layer gradient checks.
    pub fn layer_segments(&self) -> Vec<(String, Range<usize>)> {
        let l = &self.layout;
        let mut segs = vec![
            ("conv1_w".to_string(), l.conv1_w.clone()),
            ("conv1_b".to_string(), l.conv1_b.clone()),
            ("conv2_w".to_string(), l.conv2_w.clone()),
            ("conv2_b".to_string(), l.conv2_b.clone()),
        ];
        for (i, (w, b)) in l.fc.iter().enumerate() {
            segs.push((format!("fc{i}_w"), w.clone()));
            segs.push((format!("fc{i}_b"), b.clone()));
        }
        if let Some((w, b)) = &l.val {
            segs.push(("value_w".to_string(), w.clone()));
            segs.push(("value_b".to_string(), b.clone()));
        }
        segs.push(("advantage_w".to_string(), l.adv.0.clone()));
        segs.push(("advantage_b".to_string(), l.adv.1.clone()));
        segs
    }

    /// Copies weights from `src` (optimizer moments are untouched).
    pub fn copy_weights_from(&mut self, src: &QNetwork<S>) -> Result<(), NetError> {
        if self.spec != src.spec {
            return Err(NetError::SpecMismatch);
        }
        self.params.copy_from_slice(&src.params);
        Ok(())
    }

    /// Q-values for one encoded state.
    pub fn forward(&self, x: &[S]) -> Result<Vec<S>, NetError> {
        Ok(self.forward_cached(self.check_input(x)?).q)
    }

    fn check_input<'a>(&self, x: &'a [S]) -> Result<&'a [S], NetError> {
        if x.len() != self.spec.input_len() {
            return Err(NetError::Shape { expected: self.spec.input_len(), got: x.len() });
        }
        Ok(x)
    }

    fn leaky(&self, v: S) -> S {
        if v >= S::zero() {
            v
        } else {
            cast::<S>(self.spec.leaky_slope) * v
        }
    }

    fn leaky_grad(&self, pre: S) -> S {
        if pre >= S::zero() {
            S::one()
        } else {
            cast::<S>(self.spec.leaky_slope)
        }
    }

    fn forward_cached(&self, x: &[S]) -> ForwardCache<S> {
        let spec = &self.spec;
        let plane = spec.plane();
        let k2 = spec.kernel * spec.kernel;
        let [c1, c2] = spec.conv_filters;

        let patches1 = im2col(x, spec.in_c, spec.in_h, spec.in_w, spec.kernel);
        let mut z1 = vec![S::zero(); c1 * plane];
        conv_forward(
            &mut z1,
            &self.params[self.layout.conv1_w.clone()],
            &self.params[self.layout.conv1_b.clone()],
            &patches1,
            c1,
            spec.in_c * k2,
            plane,
        );
        let a1: Vec<S> = z1.iter().map(|&v| self.leaky(v)).collect();

        let patches2 = im2col(&a1, c1, spec.in_h, spec.in_w, spec.kernel);
        let mut z2 = vec![S::zero(); c2 * plane];
        conv_forward(
            &mut z2,
            &self.params[self.layout.conv2_w.clone()],
            &self.params[self.layout.conv2_b.clone()],
            &patches2,
            c2,
            c1 * k2,
            plane,
        );
        let a2: Vec<S> = z2.iter().map(|&v| self.leaky(v)).collect();

        let mut fc_z = Vec::with_capacity(self.layout.fc.len());
        let mut fc_a = Vec::with_capacity(self.layout.fc.len());
        let mut input: &[S] = &a2;
        for (w, b) in &self.layout.fc {
            let units = b.len();
            let fan_in = w.len() / units;
            let mut z = vec![S::zero(); units];
            dense_forward(&mut z, &self.params[w.clone()], &self.params[b.clone()], input, fan_in);
            let a: Vec<S> = z.iter().map(|&v| self.leaky(v)).collect();
            fc_z.push(z);
            fc_a.push(a);
            input = fc_a.last().unwrap();
        }
        let hidden = fc_a.last().unwrap();
        let fan_in = hidden.len();

        let (adv_w, adv_b) = &self.layout.adv;
        let mut adv = vec![S::zero(); spec.actions];
        dense_forward(&mut adv, &self.params[adv_w.clone()], &self.params[adv_b.clone()], hidden, fan_in);

        let q = match &self.layout.val {
            None => adv.clone(),
            Some((vw, vb)) => {
                let mut val = vec![S::zero(); 1];
                dense_forward(&mut val, &self.params[vw.clone()], &self.params[vb.clone()], hidden, fan_in);
                let mean = adv.iter().copied().sum::<S>() / cast::<S>(spec.actions as f64);
                adv.iter().map(|&a| val[0] + a - mean).collect()
            }
        };
        ForwardCache { patches1, z1, patches2, z2, a2, fc_z, fc_a, q }
    }

    /// Gradient of the batch loss
    /// mean_i weight_i * huber(q(x_i)[action_i] - target_i)
    /// with respect to every parameter.
    pub fn backward(&self, items: &[BatchItem<'_, S>]) -> Result<BackwardOut<S>, NetError> {
        if items.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let mut grads = vec![S::zero(); self.params.len()];
        let mut residuals = Vec::with_capacity(items.len());
        let mut loss_sum = S::zero();
        let inv_batch = S::one() / cast::<S>(items.len() as f64);
        for item in items {
            let x = self.check_input(item.x)?;
            if item.action >= self.spec.actions {
                return Err(NetError::Shape { expected: self.spec.actions, got: item.action });
            }
            let cache = self.forward_cached(x);
            let residual = cache.q[item.action] - item.target;
            let (loss, dloss) = huber(residual);
            loss_sum += item.weight * loss;
            residuals.push(residual);
            let gout = item.weight * dloss * inv_batch;
            self.backward_sample(&cache, item.action, gout, &mut grads);
        }
        Ok(BackwardOut { grads, mean_loss: loss_sum * inv_batch, residuals })
    }

    fn backward_sample(&self, cache: &ForwardCache<S>, action: usize, gout: S, grads: &mut [S]) {
        let spec = &self.spec;
        let [c1, c2] = spec.conv_filters;
        let hidden = cache.fc_a.last().unwrap();
        let fan_in = hidden.len();

        // Head: dQ is one-hot at `action` scaled by gout.
        let (adv_w, adv_b) = &self.layout.adv;
        let mut dhidden = vec![S::zero(); fan_in];
        match &self.layout.val {
            None => {
                let row = &self.params[adv_w.clone()][action * fan_in..(action + 1) * fan_in];
                let gw = &mut grads[adv_w.start + action * fan_in..adv_w.start + (action + 1) * fan_in];
                axpy(gw, gout, hidden);
                grads[adv_b.start + action] += gout;
                axpy(&mut dhidden, gout, row);
            }
            Some((vw, vb)) => {
                // q_j = v + adv_j - mean(adv)
                let inv_a = S::one() / cast::<S>(spec.actions as f64);
                let dval = gout;
                for j in 0..spec.actions {
                    let dadv = if j == action { gout - gout * inv_a } else { -gout * inv_a };
                    let row = &self.params[adv_w.clone()][j * fan_in..(j + 1) * fan_in];
                    let gw = &mut grads[adv_w.start + j * fan_in..adv_w.start + (j + 1) * fan_in];
                    axpy(gw, dadv, hidden);
                    grads[adv_b.start + j] += dadv;
                    axpy(&mut dhidden, dadv, row);
                }
                let vrow = &self.params[vw.clone()];
                let gw = &mut grads[vw.start..vw.end];
                axpy(gw, dval, hidden);
                grads[vb.start] += dval;
                axpy(&mut dhidden, dval, vrow);
            }
        }

        // Fully-connected stack, reversed.
        let mut dout = dhidden;
        for (i, (w, b)) in self.layout.fc.iter().enumerate().rev() {
            let units = b.len();
            let fin = w.len() / units;
            let prev: &[S] = if i == 0 { &cache.a2 } else { &cache.fc_a[i - 1] };
            let z = &cache.fc_z[i];
            let mut din = vec![S::zero(); fin];
            for o in 0..units {
                let dz = dout[o] * self.leaky_grad(z[o]);
                if dz == S::zero() {
                    continue;
                }
                let row = &self.params[w.clone()][o * fin..(o + 1) * fin];
                let gw = &mut grads[w.start + o * fin..w.start + (o + 1) * fin];
                axpy(gw, dz, prev);
                grads[b.start + o] += dz;
                axpy(&mut din, dz, row);
            }
            dout = din;
        }

        // Conv2.
        let mut dz2 = dout;
        for (d, z) in dz2.iter_mut().zip(&cache.z2) {
            *d *= self.leaky_grad(*z);
        }
        let da1 = conv_backward(
            &dz2,
            &self.params[self.layout.conv2_w.clone()],
            &cache.patches2,
            &mut grads[self.layout.conv2_w.start..self.layout.conv2_b.end],
            c2,
            c1,
            spec.in_h,
            spec.in_w,
            spec.kernel,
        );

        // Conv1. The input gradient is discarded.
        let mut dz1 = da1;
        for (d, z) in dz1.iter_mut().zip(&cache.z1) {
            *d *= self.leaky_grad(*z);
        }
        conv_backward(
            &dz1,
            &self.params[self.layout.conv1_w.clone()],
            &cache.patches1,
            &mut grads[self.layout.conv1_w.start..self.layout.conv1_b.end],
            c1,
            spec.in_c,
            spec.in_h,
            spec.in_w,
            spec.kernel,
        );
    }

    /// Standard bias-corrected Adam update.
    pub fn adam_step(
        &mut self,
        state: &mut AdamState<S>,
        cfg: &AdamConfig,
        grads: &[S],
    ) -> Result<(), NetError> {
        if grads.len() != self.params.len() {
            return Err(NetError::Shape { expected: self.params.len(), got: grads.len() });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient(bad));
        }
        state.step += 1;
        let b1 = cast::<S>(cfg.beta1);
        let b2 = cast::<S>(cfg.beta2);
        let lr = cast::<S>(cfg.learning_rate);
        let eps = cast::<S>(cfg.epsilon);
        let bc1 = S::one() - cast::<S>(cfg.beta1.powi(state.step as i32));
        let bc2 = S::one() - cast::<S>(cfg.beta2.powi(state.step as i32));
        for (((p, m), v), &g) in
            self.params.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(grads)
        {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[inline]
fn axpy<S: Scalar>(out: &mut [S], alpha: S, x: &[S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Expands channel-major feature maps into the patch matrix
/// (rows = channels * k * k, columns = H * W output positions).
fn im2col<S: Scalar>(x: &[S], channels: usize, h: usize, w: usize, k: usize) -> Vec<S> {
    let plane = h * w;
    let pad = k / 2;
    let mut patches = vec![S::zero(); channels * k * k * plane];
    for ic in 0..channels {
        let src = &x[ic * plane..(ic + 1) * plane];
        for kr in 0..k {
            for kc in 0..k {
                let row = ((ic * k + kr) * k + kc) * plane;
                let dst = &mut patches[row..row + plane];
                for r in 0..h {
                    let sr = r as i64 + kr as i64 - pad as i64;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let sr = sr as usize;
                    let c_lo = pad.saturating_sub(kc);
                    let c_hi = (w + pad).saturating_sub(kc).min(w);
                    for c in c_lo..c_hi {
                        dst[r * w + c] = src[sr * w + c + kc - pad];
                    }
                }
            }
        }
    }
    patches
}

/// out[f][p] = bias[f] + sum_k weights[f][k] * patches[k][p]
fn conv_forward<S: Scalar>(
    out: &mut [S],
    weights: &[S],
    bias: &[S],
    patches: &[S],
    filters: usize,
    kdim: usize,
    plane: usize,
) {
    for f in 0..filters {
        let orow = &mut out[f * plane..(f + 1) * plane];
        orow.fill(bias[f]);
        let wrow = &weights[f * kdim..(f + 1) * kdim];
        for (kidx, &wv) in wrow.iter().enumerate() {
            if wv == S::zero() {
                continue;
            }
            axpy(orow, wv, &patches[kidx * plane..(kidx + 1) * plane]);
        }
    }
}

/// Accumulates conv weight/bias gradients (into the contiguous weight+bias
/// gradient segment) and returns the gradient with respect to the layer
/// input (via col2im).
#[allow(clippy::too_many_arguments)]
fn conv_backward<S: Scalar>(
    dz: &[S],
    weights: &[S],
    patches: &[S],
    gw_gb: &mut [S],
    filters: usize,
    in_channels: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<S> {
    let plane = h * w;
    let kdim = in_channels * k * k;
    let (gw, gb) = gw_gb.split_at_mut(filters * kdim);
    let mut dpatches = vec![S::zero(); kdim * plane];
    for f in 0..filters {
        let dzrow = &dz[f * plane..(f + 1) * plane];
        gb[f] += dzrow.iter().copied().sum::<S>();
        let wrow = &weights[f * kdim..(f + 1) * kdim];
        let gwrow = &mut gw[f * kdim..(f + 1) * kdim];
        for kidx in 0..kdim {
            let prow = &patches[kidx * plane..(kidx + 1) * plane];
            gwrow[kidx] += dot(dzrow, prow);
            axpy(&mut dpatches[kidx * plane..(kidx + 1) * plane], wrow[kidx], dzrow);
        }
    }
    // col2im: scatter patch gradients back onto the input feature maps.
    let pad = k / 2;
    let mut dx = vec![S::zero(); in_channels * plane];
    for ic in 0..in_channels {
        let dst = &mut dx[ic * plane..(ic + 1) * plane];
        for kr in 0..k {
            for kc in 0..k {
                let row = ((ic * k + kr) * k + kc) * plane;
                let src = &dpatches[row..row + plane];
                for r in 0..h {
                    let sr = r as i64 + kr as i64 - pad as i64;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let sr = sr as usize;
                    let c_lo = pad.saturating_sub(kc);
                    let c_hi = (w + pad).saturating_sub(kc).min(w);
                    for c in c_lo..c_hi {
                        dst[sr * w + c + kc - pad] += src[r * w + c];
                    }
                }
            }
        }
    }
    dx
}

/// out[o] = bias[o] + dot(weights[o], input)
fn dense_forward<S: Scalar>(out: &mut [S], weights: &[S], bias: &[S], input: &[S], fan_in: usize) {
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = bias[o] + dot(&weights[o * fan_in..(o + 1) * fan_in], input);
    }
}
