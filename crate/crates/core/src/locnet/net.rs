//! Compact temporal convolutional network with hand-written backprop.
//!
//! Layout: conv blocks (`same` padding, stride 1) each followed by ReLU and
//! max-pool of width 2, then adaptive average pooling to a fixed width, and
//! a fully connected layer to the warp dimension. An optional classifier
//! head reads the same pooled features.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// Variance of the output layer weights at initialization, small enough
/// that fresh models predict near-identity warps.
pub const OUTPUT_INIT_VARIANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
}

/// Network shape, independent of the signal and warp dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub blocks: Vec<ConvSpec>,
    /// Output width of the adaptive average pool.
    pub pool_width: usize,
    /// Classifier head size; 0 disables the head.
    pub n_classes: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            blocks: vec![
                ConvSpec { kernel: 7, channels: 32 },
                ConvSpec { kernel: 5, channels: 64 },
                ConvSpec { kernel: 3, channels: 64 },
            ],
            pool_width: 8,
            n_classes: 0,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self, input_len: usize) -> Result<()> {
        if self.pool_width == 0 {
            return Err(DtanError::invalid("pool width must be positive"));
        }
        for b in &self.blocks {
            if b.kernel == 0 || b.kernel % 2 == 0 || b.channels == 0 {
                return Err(DtanError::invalid(format!("conv kernel must be odd and channels positive, got {b:?}")));
            }
        }
        if input_len >> self.blocks.len() == 0 {
            return Err(DtanError::invalid(format!(
                "input length {input_len} vanishes after {} pooling layers",
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Tensor {
    offset: usize,
    len: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    w: Tensor,
    b: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w: Tensor,
    b: Tensor,
}

/// Localization network: parameters live in one flat vector.
#[derive(Clone, Debug)]
pub struct LocNet<T> {
    arch: ArchSpec,
    in_channels: usize,
    input_len: usize,
    convs: Vec<ConvLayer>,
    out: Dense,
    head: Option<Dense>,
    params: Vec<T>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NetCache<T> {
    /// Zero-padded input of each conv block.
    padded: Vec<Vec<T>>,
    /// Input length of each conv block.
    lens: Vec<usize>,
    /// Post-ReLU conv output of each block.
    act: Vec<Vec<T>>,
    /// Source index of every max-pool output.
    argmax: Vec<Vec<usize>>,
    /// Length entering the adaptive pool.
    pooled_len: usize,
    pub features: Vec<T>,
}

/// Output of [`LocNet::forward`].
#[derive(Clone, Debug)]
pub struct NetOutput<T> {
    pub theta: Vec<T>,
    pub logits: Option<Vec<T>>,
    pub cache: NetCache<T>,
}

fn take(cursor: &mut usize, len: usize) -> Tensor {
    let t = Tensor { offset: *cursor, len };
    *cursor += len;
    t
}

fn pool_bounds(i: usize, len: usize, width: usize) -> (usize, usize) {
    let start = i * len / width;
    let end = ((i + 1) * len).div_ceil(width);
    (start, end.max(start + 1))
}

impl<T: Scalar> LocNet<T> {
    /// Zero-initialized network for `in_channels x input_len` inputs and
    /// `out_dim` outputs.
    pub fn zeros(arch: &ArchSpec, in_channels: usize, input_len: usize, out_dim: usize) -> Result<Self> {
        arch.validate(input_len)?;
        if in_channels == 0 || out_dim == 0 {
            return Err(DtanError::invalid("network needs at least one input channel and one output"));
        }
        let mut cursor = 0;
        let mut convs = Vec::with_capacity(arch.blocks.len());
        let mut in_ch = in_channels;
        for b in &arch.blocks {
            let w = take(&mut cursor, b.channels * in_ch * b.kernel);
            let bias = take(&mut cursor, b.channels);
            convs.push(ConvLayer { in_ch, out_ch: b.channels, kernel: b.kernel, w, b: bias });
            in_ch = b.channels;
        }
        let features = in_ch * arch.pool_width;
        let dense = |cursor: &mut usize, outputs: usize| Dense {
            inputs: features,
            outputs,
            w: take(cursor, outputs * features),
            b: take(cursor, outputs),
        };
        let out = dense(&mut cursor, out_dim);
        let head = (arch.n_classes > 0).then(|| dense(&mut cursor, arch.n_classes));
        Ok(Self { arch: arch.clone(), in_channels, input_len, convs, out, head, params: vec![T::zero(); cursor] })
    }

    /// Hidden layers `N(0, 1 / (3 fan_in))`, output layer `N(0, 1e-5)`,
    /// head `N(0, 1 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        arch: &ArchSpec,
        in_channels: usize,
        input_len: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(arch, in_channels, input_len, out_dim)?;
        let mut fill = |params: &mut [T], t: Tensor, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[t.offset..t.offset + t.len] {
                *p = T::lit(normal.sample(rng));
            }
        };
        for c in net.convs.clone() {
            fill(&mut net.params, c.w, (1.0 / (3 * c.in_ch * c.kernel) as f64).sqrt());
        }
        let out = net.out;
        fill(&mut net.params, out.w, OUTPUT_INIT_VARIANCE.sqrt());
        if let Some(h) = net.head {
            fill(&mut net.params, h.w, (1.0 / h.inputs as f64).sqrt());
        }
        Ok(net)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn out_dim(&self) -> usize {
        self.out.outputs
    }

    pub fn n_classes(&self) -> usize {
        self.head.map_or(0, |h| h.outputs)
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Weights of the output layer (`out_dim x features`, row-major).
    pub fn output_weights(&self) -> &[T] {
        &self.params[self.out.w.offset..self.out.w.offset + self.out.w.len]
    }

    /// Output layer bias.
    pub fn output_bias(&self) -> &[T] {
        &self.params[self.out.b.offset..self.out.b.offset + self.out.b.len]
    }

    /// Parameter ranges of the classifier head, if present.
    pub fn head_range(&self) -> Option<std::ops::Range<usize>> {
        self.head.map(|h| h.w.offset..h.b.offset + h.b.len)
    }

    /// Named parameter tensors with their shapes, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![c.out_ch, c.in_ch, c.kernel]));
            out.push((format!("conv{i}.bias"), vec![c.out_ch]));
        }
        out.push(("fc.weight".into(), vec![self.out.outputs, self.out.inputs]));
        out.push(("fc.bias".into(), vec![self.out.outputs]));
        if let Some(h) = self.head {
            out.push(("head.weight".into(), vec![h.outputs, h.inputs]));
            out.push(("head.bias".into(), vec![h.outputs]));
        }
        out
    }

    pub fn forward(&self, input: &[T]) -> Result<NetOutput<T>> {
        if input.len() != self.in_channels * self.input_len {
            return Err(DtanError::shape(format!(
                "network expects {} x {} inputs, got {} values",
                self.in_channels,
                self.input_len,
                input.len()
            )));
        }
        let p = &self.params;
        let n_blocks = self.convs.len();
        let mut cache = NetCache {
            padded: Vec::with_capacity(n_blocks),
            lens: Vec::with_capacity(n_blocks),
            act: Vec::with_capacity(n_blocks),
            argmax: Vec::with_capacity(n_blocks),
            pooled_len: 0,
            features: Vec::new(),
        };
        let mut x = input.to_vec();
        let mut len = self.input_len;
        for c in &self.convs {
            let pad = c.kernel / 2;
            let plen = len + 2 * pad;
            let mut padded = vec![T::zero(); c.in_ch * plen];
            for i in 0..c.in_ch {
                padded[i * plen + pad..i * plen + pad + len].copy_from_slice(&x[i * len..(i + 1) * len]);
            }
            let w = &p[c.w.offset..c.w.offset + c.w.len];
            let mut act = vec![T::zero(); c.out_ch * len];
            for o in 0..c.out_ch {
                let row = &mut act[o * len..(o + 1) * len];
                row.fill(p[c.b.offset + o]);
                for i in 0..c.in_ch {
                    let src = &padded[i * plen..(i + 1) * plen];
                    for k in 0..c.kernel {
                        let wk = w[(o * c.in_ch + i) * c.kernel + k];
                        for (r, &s) in row.iter_mut().zip(&src[k..k + len]) {
                            *r += wk * s;
                        }
                    }
                }
                row.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            let half = len / 2;
            let mut pooled = vec![T::zero(); c.out_ch * half];
            let mut argmax = vec![0; c.out_ch * half];
            for o in 0..c.out_ch {
                for t in 0..half {
                    let (a, b) = (o * len + 2 * t, o * len + 2 * t + 1);
                    let src = if act[b] > act[a] { b } else { a };
                    pooled[o * half + t] = act[src];
                    argmax[o * half + t] = src;
                }
            }
            cache.padded.push(padded);
            cache.lens.push(len);
            cache.act.push(act);
            cache.argmax.push(argmax);
            x = pooled;
            len = half;
        }
        let channels = self.convs.last().map_or(self.in_channels, |c| c.out_ch);
        let width = self.arch.pool_width;
        let mut features = vec![T::zero(); channels * width];
        for ch in 0..channels {
            for j in 0..width {
                let (s, e) = pool_bounds(j, len, width);
                let sum: T = x[ch * len + s..ch * len + e].iter().copied().sum();
                features[ch * width + j] = sum / T::from_usize_lossy(e - s);
            }
        }
        cache.pooled_len = len;
        let theta = self.dense_forward(&self.out, &features);
        let logits = self.head.map(|h| self.dense_forward(&h, &features));
        cache.features = features;
        Ok(NetOutput { theta, logits, cache })
    }

    fn dense_forward(&self, d: &Dense, x: &[T]) -> Vec<T> {
        let w = &self.params[d.w.offset..d.w.offset + d.w.len];
        (0..d.outputs)
            .map(|o| self.params[d.b.offset + o] + crate::scalar::dot(&w[o * d.inputs..(o + 1) * d.inputs], x))
            .collect()
    }

    fn dense_backward(&self, d: &Dense, x: &[T], g_out: &[T], grad: &mut [T], g_x: &mut [T]) {
        let w = &self.params[d.w.offset..d.w.offset + d.w.len];
        for (o, &g) in g_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad[d.b.offset + o] += g;
            let gw = &mut grad[d.w.offset + o * d.inputs..d.w.offset + (o + 1) * d.inputs];
            crate::scalar::axpy(g, x, gw);
            crate::scalar::axpy(g, &w[o * d.inputs..(o + 1) * d.inputs], g_x);
        }
    }

    /// Accumulates parameter gradients into `grad` (length `n_params`).
    ///
    /// Returns the gradient on the input when `need_input` is set.
    pub fn backward(
        &self,
        cache: &NetCache<T>,
        g_theta: &[T],
        g_logits: Option<&[T]>,
        grad: &mut [T],
        need_input: bool,
    ) -> Result<Option<Vec<T>>> {
        if g_theta.len() != self.out.outputs || grad.len() != self.params.len() {
            return Err(DtanError::shape("gradient buffers do not match the network"));
        }
        let p = &self.params;
        let mut g_feat = vec![T::zero(); cache.features.len()];
        self.dense_backward(&self.out, &cache.features, g_theta, grad, &mut g_feat);
        if let (Some(h), Some(gl)) = (self.head, g_logits) {
            self.dense_backward(&h, &cache.features, gl, grad, &mut g_feat);
        }
        let channels = self.convs.last().map_or(self.in_channels, |c| c.out_ch);
        let width = self.arch.pool_width;
        let len = cache.pooled_len;
        let mut g_x = vec![T::zero(); channels * len];
        for ch in 0..channels {
            for j in 0..width {
                let (s, e) = pool_bounds(j, len, width);
                let share = g_feat[ch * width + j] / T::from_usize_lossy(e - s);
                for v in &mut g_x[ch * len + s..ch * len + e] {
                    *v += share;
                }
            }
        }
        for (bi, c) in self.convs.iter().enumerate().rev() {
            let in_len = cache.lens[bi];
            let act = &cache.act[bi];
            let mut g_act = vec![T::zero(); c.out_ch * in_len];
            for (&src, &g) in cache.argmax[bi].iter().zip(&g_x) {
                if act[src] > T::zero() {
                    g_act[src] += g;
                }
            }
            let pad = c.kernel / 2;
            let plen = in_len + 2 * pad;
            let padded = &cache.padded[bi];
            let w = &p[c.w.offset..c.w.offset + c.w.len];
            let want_input = need_input || bi > 0;
            let mut g_pad = if want_input { vec![T::zero(); c.in_ch * plen] } else { Vec::new() };
            for o in 0..c.out_ch {
                let go = &g_act[o * in_len..(o + 1) * in_len];
                grad[c.b.offset + o] += go.iter().copied().sum();
                for i in 0..c.in_ch {
                    let src = &padded[i * plen..(i + 1) * plen];
                    for k in 0..c.kernel {
                        let idx = (o * c.in_ch + i) * c.kernel + k;
                        grad[c.w.offset + idx] += crate::scalar::dot(go, &src[k..k + in_len]);
                        if want_input {
                            let wk = w[idx];
                            for (gp, &g) in g_pad[i * plen + k..i * plen + k + in_len].iter_mut().zip(go) {
                                *gp += wk * g;
                            }
                        }
                    }
                }
            }
            if !want_input {
                return Ok(None);
            }
            let mut g_in = vec![T::zero(); c.in_ch * in_len];
            for i in 0..c.in_ch {
                g_in[i * in_len..(i + 1) * in_len].copy_from_slice(&g_pad[i * plen + pad..i * plen + pad + in_len]);
            }
            g_x = g_in;
        }
        Ok(need_input.then_some(g_x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ArchSpec {
        ArchSpec {
            blocks: vec![ConvSpec { kernel: 3, channels: 2 }, ConvSpec { kernel: 3, channels: 3 }],
            pool_width: 3,
            n_classes: 2,
        }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = LocNet::<f64>::zeros(&ArchSpec::default(), 1, 32, 5).unwrap();
        let n = net.n_params();
        let bias_start = n - 5;
        for (j, p) in net.params_mut()[bias_start..].iter_mut().enumerate() {
            *p = j as f64;
        }
        let out = net.forward(&[0.5; 32]).unwrap();
        assert_eq!(out.theta, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = LocNet::<f64>::init(&tiny(), 2, 13, 3, &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..26).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gt = [0.3, -1.0, 0.7];
        let gl = [0.2, -0.4];
        let objective = |input: &[f64]| {
            let o = net.forward(input).unwrap();
            crate::scalar::dot(&o.theta, &gt) + crate::scalar::dot(o.logits.as_ref().unwrap(), &gl)
        };
        let out = net.forward(&x).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        let gx = net.backward(&out.cache, &gt, Some(&gl), &mut grad, true).unwrap().unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (objective(&p) - objective(&m)) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-6, "{i}: {fd} vs {}", gx[i]);
        }
    }

    #[test]
    fn adaptive_pool_covers_short_inputs() {
        assert_eq!(pool_bounds(0, 2, 4), (0, 1));
        assert_eq!(pool_bounds(3, 2, 4), (1, 2));
        assert_eq!(pool_bounds(1, 16, 8), (2, 4));
    }
}
