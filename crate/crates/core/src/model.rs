//! Small encoder–decoder segmentation network with configurable skip strides
//! and an exact, hand-written backward pass.
//!
//! Feature maps are channel-major `[C][H][W]` contiguous slices. Convolutions
//! run as im2col + GEMM. The encoder downsamples to stride 16; the decoder
//! upsamples bilinearly, concatenating encoder features at each configured
//! stride; the head emits two logits per pixel, bilinearly upsampled to the
//! input size.

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegNetConfig {
    /// 2 for a SAR-only student, 6 for the stacked-input teacher.
    pub in_channels: usize,
    pub base_width: usize,
    /// Decoder skip strides, a descending subset of {4, 2, 1}.
    pub skip_strides: Vec<usize>,
    pub seed: u64,
}

impl SegNetConfig {
    pub fn new(in_channels: usize, base_width: usize, skip_strides: Vec<usize>, seed: u64) -> Self {
        SegNetConfig {
            in_channels,
            base_width,
            skip_strides,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(CoreError::Config("in_channels must be >= 1".into()));
        }
        if self.base_width == 0 {
            return Err(CoreError::Config("base_width must be >= 1".into()));
        }
        if self.skip_strides.is_empty() {
            return Err(CoreError::Config("skip_strides must be non-empty".into()));
        }
        for s in &self.skip_strides {
            if ![1, 2, 4].contains(s) {
                return Err(CoreError::Config(format!("invalid skip stride {s}")));
            }
        }
        if !self.skip_strides.windows(2).all(|w| w[0] > w[1]) {
            return Err(CoreError::Config(
                "skip_strides must be strictly descending".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            in_channels: 2,
            base_width: 8,
            skip_strides: vec![4, 2],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv<F: Scalar> {
    weight: Vec<F>, // c_out × (c_in·k·k), row-major
    bias: Vec<F>,   // c_out
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
}

impl<F: Scalar> Conv<F> {
    fn zeroed(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Conv {
            weight: vec![F::zero(); c_out * c_in * k * k],
            bias: vec![F::zero(); c_out],
            c_in,
            c_out,
            k,
            stride,
        }
    }

    fn init(&mut self, rng: &mut ChaCha20Rng) {
        let fan_in = (self.c_in * self.k * self.k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        for w in self.weight.iter_mut() {
            *w = F::from_f64(rng.gen_range(-bound..bound));
        }
        // biases stay zero
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (h + 2 * pad - self.k) / self.stride + 1,
            (w + 2 * pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, input: &[F], h: usize, w: usize) -> (Vec<F>, usize, usize) {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kk = self.k * self.k;
        let pad = self.k / 2 as usize;
        let mut col = vec![F::zero(); self.c_in * kk * n];
        for c in 0..self.c_in {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * kk + ky * self.k + kx) * n;
                    for oy in 0..oh {
                        let sy = (oy * self.stride + ky) as i64 - pad as i64;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        let src_row = sy as usize * w;
                        let dst_row = row + oy * ow;
                        for ox in 0..ow {
                            let sx = (ox * self.stride + kx) as i64 - pad as i64;
                            if sx >= 0 && sx < w as i64 {
                                col[dst_row + ox] = plane[src_row + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        (col, oh, ow)
    }

    fn col2im(&self, grad_col: &[F], h: usize, w: usize) -> Vec<F> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kk = self.k * self.k;
        let pad = self.k / 2;
        let mut grad_input = vec![F::zero(); self.c_in * h * w];
        for c in 0..self.c_in {
            let plane = &mut grad_input[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * kk + ky * self.k + kx) * n;
                    for oy in 0..oh {
                        let sy = (oy * self.stride + ky) as i64 - pad as i64;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        let src_row = sy as usize * w;
                        let col_row = row + oy * ow;
                        for ox in 0..ow {
                            let sx = (ox * self.stride + kx) as i64 - pad as i64;
                            if sx >= 0 && sx < w as i64 {
                                plane[src_row + sx as usize] += grad_col[col_row + ox];
                            }
                        }
                    }
                }
            }
        }
        grad_input
    }

    /// Returns (output, col matrix, out_h, out_w).
    fn forward(&self, input: &[F], h: usize, w: usize) -> (Vec<F>, Vec<F>, usize, usize) {
        let (col, oh, ow) = self.im2col(input, h, w);
        let n = oh * ow;
        let kdim = self.c_in * self.k * self.k;
        let mut out = vec![F::zero(); self.c_out * n];
        F::gemm_acc(self.c_out, kdim, n, &self.weight, false, &col, false, &mut out);
        for c in 0..self.c_out {
            let b = self.bias[c];
            for v in &mut out[c * n..(c + 1) * n] {
                *v += b;
            }
        }
        (out, col, oh, ow)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(
        &self,
        col: &[F],
        grad_out: &[F],
        h: usize,
        w: usize,
        grad_weight: &mut [F],
        grad_bias: &mut [F],
    ) -> Vec<F> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let kdim = self.c_in * self.k * self.k;
        for c in 0..self.c_out {
            let mut s = F::zero();
            for &g in &grad_out[c * n..(c + 1) * n] {
                s += g;
            }
            grad_bias[c] += s;
        }
        // grad_W (c_out×K) += grad_out (c_out×N) · colᵀ (N×K)
        F::gemm_acc(self.c_out, n, kdim, grad_out, false, col, true, grad_weight);
        // grad_col (K×N) = Wᵀ (K×c_out) · grad_out (c_out×N)
        let mut grad_col = vec![F::zero(); kdim * n];
        F::gemm_acc(kdim, self.c_out, n, &self.weight, true, grad_out, false, &mut grad_col);
        self.col2im(&grad_col, h, w)
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn silu<F: Scalar>(z: &[F]) -> Vec<F> {
    z.iter().map(|&x| x * sigmoid(x)).collect()
}

fn silu_backward<F: Scalar>(z: &[F], grad_out: &[F]) -> Vec<F> {
    z.iter()
        .zip(grad_out)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * s * (F::one() + x * (F::one() - s))
        })
        .collect()
}

/// Bilinear resize of a channel-major feature map with pixel-center alignment.
fn resize_bilinear<F: Scalar>(
    data: &[F],
    c: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); c * out_h * out_w];
    let taps_y = axis_taps(out_h, in_h);
    let taps_x = axis_taps(out_w, in_w);
    for ch in 0..c {
        let plane = &data[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        let out_plane = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (r, &(y0, y1, fy)) in taps_y.iter().enumerate() {
            for (cidx, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                let one = F::one();
                let top = plane[y0 * in_w + x0] * (one - fx) + plane[y0 * in_w + x1] * fx;
                let bot = plane[y1 * in_w + x0] * (one - fx) + plane[y1 * in_w + x1] * fx;
                out_plane[r * out_w + cidx] = top * (one - fy) + bot * fy;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatter output gradients back to inputs.
fn resize_bilinear_adjoint<F: Scalar>(
    grad_out: &[F],
    c: usize,
    out_h: usize,
    out_w: usize,
    in_h: usize,
    in_w: usize,
) -> Vec<F> {
    let mut grad_in = vec![F::zero(); c * in_h * in_w];
    let taps_y = axis_taps(out_h, in_h);
    let taps_x = axis_taps(out_w, in_w);
    for ch in 0..c {
        let gplane = &grad_out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let iplane = &mut grad_in[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (r, &(y0, y1, fy)) in taps_y.iter().enumerate() {
            for (cidx, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                let g = gplane[r * out_w + cidx];
                let one = F::one();
                iplane[y0 * in_w + x0] += g * (one - fy) * (one - fx);
                iplane[y0 * in_w + x1] += g * (one - fy) * fx;
                iplane[y1 * in_w + x0] += g * fy * (one - fx);
                iplane[y1 * in_w + x1] += g * fy * fx;
            }
        }
    }
    grad_in
}

fn axis_taps<F: Scalar>(out_n: usize, in_n: usize) -> Vec<(usize, usize, F)> {
    (0..out_n)
        .map(|i| {
            let src = crate::raster::src_coord(i, out_n, in_n).clamp(0.0, (in_n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_n - 1);
            (i0, i1, F::from_f64(src - i0 as f64))
        })
        .collect()
}

/// Numerically stable per-pixel two-class softmax. Layout `[2][N]`.
pub fn softmax_probs<F: Scalar>(logits: &[F]) -> Vec<F> {
    let n = logits.len() / 2;
    let mut out = vec![F::zero(); 2 * n];
    for i in 0..n {
        let (a, b) = (logits[i], logits[n + i]);
        let m = a.max(b);
        let ea = (a - m).exp();
        let eb = (b - m).exp();
        let z = ea + eb;
        out[i] = ea / z;
        out[n + i] = eb / z;
    }
    out
}

struct DecRecord<F: Scalar> {
    stride: usize,
    /// dims of the decoder feature before upsampling
    d_dims: (usize, usize, usize), // (c, h, w)
    col: Vec<F>,
    z: Vec<F>,
}

/// Cached activations from one forward pass, sufficient for exact backward.
pub struct ForwardTrace<F: Scalar> {
    in_h: usize,
    in_w: usize,
    input: Vec<F>,
    enc_z: Vec<Vec<F>>, // pre-activations
    enc_cols: Vec<Vec<F>>,
    dec: Vec<DecRecord<F>>,
    head_col: Vec<F>,
    net_fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    /// Same order and shapes as [`SegNet::param_names`].
    pub tensors: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &SegNet<F>) -> Self {
        Gradients {
            tensors: net.params().iter().map(|p| vec![F::zero(); p.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn max_abs(&self) -> F {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(F::zero(), |m, &v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct SegNet<F: Scalar> {
    config: SegNetConfig,
    enc: Vec<Conv<F>>,
    dec: Vec<Conv<F>>,
    head: Conv<F>,
}

const NUM_CLASSES: usize = 2;
const ENCODER_DEPTH: usize = 4;

impl<F: Scalar> SegNet<F> {
    /// Deterministic fan-in-scaled uniform initialization, zero biases.
    pub fn init(config: &SegNetConfig) -> Result<Self> {
        let mut net = SegNet::zeroed(config)?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        for layer in net.layers_mut() {
            layer.init(&mut rng);
        }
        Ok(net)
    }

    /// All-zero parameters (test fixture: logits are identically zero).
    pub fn zeroed(config: &SegNetConfig) -> Result<Self> {
        config.validate()?;
        let bw = config.base_width;
        let widths = [bw, 2 * bw, 4 * bw, 8 * bw];
        let mut enc = Vec::with_capacity(ENCODER_DEPTH);
        let mut c_prev = config.in_channels;
        for &c_out in &widths {
            enc.push(Conv::zeroed(c_prev, c_out, 3, 2));
            c_prev = c_out;
        }
        let dec_width = 4 * bw;
        let mut dec = Vec::new();
        let mut d_ch = 8 * bw;
        for &s in &config.skip_strides {
            let skip_ch = match s {
                4 => 2 * bw,
                2 => bw,
                1 => config.in_channels,
                _ => unreachable!("validated"),
            };
            dec.push(Conv::zeroed(d_ch + skip_ch, dec_width, 3, 1));
            d_ch = dec_width;
        }
        let head = Conv::zeroed(dec_width, NUM_CLASSES, 1, 1);
        Ok(SegNet {
            config: config.clone(),
            enc,
            dec,
            head,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    fn layers(&self) -> impl Iterator<Item = &Conv<F>> {
        self.enc.iter().chain(self.dec.iter()).chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv<F>> {
        self.enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.enc.len() {
            names.push(format!("enc{}.w", i + 1));
            names.push(format!("enc{}.b", i + 1));
        }
        for s in &self.config.skip_strides {
            names.push(format!("dec_s{s}.w"));
            names.push(format!("dec_s{s}.b"));
        }
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    pub fn params(&self) -> Vec<&[F]> {
        self.layers()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out: Vec<&mut Vec<F>> = Vec::new();
        for l in self
            .enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .chain(std::iter::once(&mut self.head))
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// FNV-1a over the little-endian f32 encoding of all parameters.
    pub fn param_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for &v in p {
                for byte in v.as_f32().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        hash
    }

    fn skip_feature_index(stride: usize) -> Option<usize> {
        // index into [input, f1, f2, f3, f4] by stride
        match stride {
            1 => Some(0),
            2 => Some(1),
            4 => Some(2),
            _ => None,
        }
    }

    /// Forward pass. `x` is channel-major `[in_channels][h][w]`; returns
    /// logits `[2][h][w]` and the trace needed for backward.
    pub fn forward(&self, x: &[F], h: usize, w: usize) -> Result<(Vec<F>, ForwardTrace<F>)> {
        if x.len() != self.config.in_channels * h * w {
            return Err(CoreError::Schema(format!(
                "input has {} values, expected {}×{h}×{w}",
                x.len(),
                self.config.in_channels
            )));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(CoreError::Schema(format!(
                "input dims {h}×{w} must be positive multiples of 16"
            )));
        }
        let mut enc_z = Vec::with_capacity(ENCODER_DEPTH);
        let mut enc_f = Vec::with_capacity(ENCODER_DEPTH);
        let mut enc_cols = Vec::with_capacity(ENCODER_DEPTH);
        let mut cur = x.to_vec();
        let mut dims = (h, w);
        for conv in &self.enc {
            let (z, col, oh, ow) = conv.forward(&cur, dims.0, dims.1);
            let f = silu(&z);
            enc_z.push(z);
            enc_cols.push(col);
            cur = f.clone();
            enc_f.push(f);
            dims = (oh, ow);
        }

        // decoder
        let bw = self.config.base_width;
        let mut d = cur;
        let mut d_dims = (8 * bw, h / 16, w / 16);
        let mut dec_records = Vec::new();
        for (conv, &s) in self.dec.iter().zip(&self.config.skip_strides) {
            let (th, tw) = (h / s, w / s);
            let up = resize_bilinear(&d, d_dims.0, d_dims.1, d_dims.2, th, tw);
            let skip_idx = Self::skip_feature_index(s).expect("validated stride");
            let skip: &[F] = if skip_idx == 0 { x } else { &enc_f[skip_idx - 1] };
            let mut concat = up;
            concat.extend_from_slice(skip);
            let (z, col, _, _) = conv.forward(&concat, th, tw);
            let f = silu(&z);
            dec_records.push(DecRecord {
                stride: s,
                d_dims,
                col,
                z,
            });
            d = f;
            d_dims = (conv.c_out, th, tw);
        }

        let (logits_small, head_col, sh, sw) = self.head.forward(&d, d_dims.1, d_dims.2);
        let s_min = *self.config.skip_strides.last().expect("non-empty");
        let logits = if s_min > 1 {
            resize_bilinear(&logits_small, NUM_CLASSES, sh, sw, h, w)
        } else {
            logits_small
        };
        let trace = ForwardTrace {
            in_h: h,
            in_w: w,
            input: x.to_vec(),
            enc_z,
            enc_cols,
            dec: dec_records,
            head_col,
            net_fingerprint: self.param_checksum(),
        };
        Ok((logits, trace))
    }

    /// Exact gradients of `sum(logits ⊙ grad_logits)` w.r.t. every parameter.
    pub fn backward(&self, trace: &ForwardTrace<F>, grad_logits: &[F]) -> Result<Gradients<F>> {
        if trace.net_fingerprint != self.param_checksum() {
            return Err(CoreError::Contract(
                "trace does not match current network parameters".into(),
            ));
        }
        let (h, w) = (trace.in_h, trace.in_w);
        if grad_logits.len() != NUM_CLASSES * h * w {
            return Err(CoreError::Schema("grad_logits shape mismatch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let n_enc = self.enc.len();
        // tensor indices: enc i -> (2i, 2i+1); dec j -> (2n_enc+2j, +1); head last two
        let head_w_idx = 2 * n_enc + 2 * self.dec.len();

        let s_min = *self.config.skip_strides.last().expect("non-empty");
        let (sh, sw) = (h / s_min, w / s_min);
        let grad_small = if s_min > 1 {
            resize_bilinear_adjoint(grad_logits, NUM_CLASSES, h, w, sh, sw)
        } else {
            grad_logits.to_vec()
        };

        // head (1×1 conv, no activation)
        let (gw, rest) = grads.tensors.split_at_mut(head_w_idx + 1);
        let mut grad_d = self.head.backward(
            &trace.head_col,
            &grad_small,
            sh,
            sw,
            &mut gw[head_w_idx],
            &mut rest[0],
        );

        // decoder, reversed; collect skip gradients per encoder level
        let mut skip_grads: Vec<Option<Vec<F>>> = vec![None; ENCODER_DEPTH + 1];
        for (j, (conv, rec)) in self.dec.iter().zip(&trace.dec).enumerate().rev() {
            let (th, tw) = (h / rec.stride, w / rec.stride);
            let grad_z = silu_backward(&rec.z, &grad_d);
            let widx = 2 * n_enc + 2 * j;
            let (left, right) = grads.tensors.split_at_mut(widx + 1);
            let grad_concat =
                conv.backward(&rec.col, &grad_z, th, tw, &mut left[widx], &mut right[0]);
            let (dc, dh, dw) = rec.d_dims;
            let up_len = dc_up_len(dc, th, tw);
            let (g_up, g_skip) = grad_concat.split_at(up_len);
            let g_d = resize_bilinear_adjoint(g_up, dc, th, tw, dh, dw);
            let skip_idx = Self::skip_feature_index(rec.stride).expect("validated");
            match &mut skip_grads[skip_idx] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g_skip) {
                        *a += *b;
                    }
                }
                None => skip_grads[skip_idx] = Some(g_skip.to_vec()),
            }
            grad_d = g_d;
        }

        // encoder, reversed; grad_d is now the gradient at f4
        let mut grad_f = grad_d;
        for i in (0..n_enc).rev() {
            if let Some(sg) = &skip_grads[i + 1] {
                for (a, b) in grad_f.iter_mut().zip(sg) {
                    *a += *b;
                }
            }
            let (ih, iw) = (h >> i, w >> i); // input dims of enc layer i
            let grad_z = silu_backward(&trace.enc_z[i], &grad_f);
            let (left, right) = grads.tensors.split_at_mut(2 * i + 1);
            grad_f = self.enc[i].backward(
                &trace.enc_cols[i],
                &grad_z,
                ih,
                iw,
                &mut left[2 * i],
                &mut right[0],
            );
        }
        let _ = trace.input; // input gradient (grad_f at level 0) is discarded
        Ok(grads)
    }
}

fn dc_up_len(dc: usize, th: usize, tw: usize) -> usize {
    dc * th * tw
}

const CKPT_MAGIC: &[u8; 4] = b"FSNW";

/// Write an FSNW checkpoint: magic, config block, then every named tensor as
/// f32 little-endian.
pub fn save_checkpoint<F: Scalar>(net: &SegNet<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CoreError::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(io_err)?;
    let cfg = net.config();
    w.write_all(&(cfg.in_channels as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(cfg.base_width as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&[cfg.skip_strides.len() as u8]).map_err(io_err)?;
    for &s in &cfg.skip_strides {
        w.write_all(&(s as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&cfg.seed.to_le_bytes()).map_err(io_err)?;
    let names = net.param_names();
    let params = net.params();
    w.write_all(&(names.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in names.iter().zip(params) {
        w.write_all(&[name.len() as u8]).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(tensor.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &v in tensor {
            w.write_all(&v.as_f32().to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<SegNet<F>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| CoreError::io(path, e))?;
    if &magic != CKPT_MAGIC {
        return Err(CoreError::Format("bad checkpoint magic".into()));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    let mut u8b = [0u8; 1];
    r.read_exact(&mut u32b).map_err(|e| CoreError::io(path, e))?;
    let in_channels = u32::from_le_bytes(u32b) as usize;
    r.read_exact(&mut u32b).map_err(|e| CoreError::io(path, e))?;
    let base_width = u32::from_le_bytes(u32b) as usize;
    r.read_exact(&mut u8b).map_err(|e| CoreError::io(path, e))?;
    let mut skip_strides = Vec::new();
    for _ in 0..u8b[0] {
        r.read_exact(&mut u32b).map_err(|e| CoreError::io(path, e))?;
        skip_strides.push(u32::from_le_bytes(u32b) as usize);
    }
    r.read_exact(&mut u64b).map_err(|e| CoreError::io(path, e))?;
    let seed = u64::from_le_bytes(u64b);
    let config = SegNetConfig::new(in_channels, base_width, skip_strides, seed);
    let mut net = SegNet::zeroed(&config)
        .map_err(|e| CoreError::Format(format!("invalid config in checkpoint: {e}")))?;
    r.read_exact(&mut u32b).map_err(|e| CoreError::io(path, e))?;
    let n_tensors = u32::from_le_bytes(u32b) as usize;
    let names = net.param_names();
    if n_tensors != names.len() {
        return Err(CoreError::Format(format!(
            "checkpoint has {n_tensors} tensors, config implies {}",
            names.len()
        )));
    }
    let mut params = net.params_mut();
    for (name, tensor) in names.iter().zip(params.iter_mut()) {
        r.read_exact(&mut u8b).map_err(|e| CoreError::io(path, e))?;
        let mut nb = vec![0u8; u8b[0] as usize];
        r.read_exact(&mut nb).map_err(|e| CoreError::io(path, e))?;
        let fname = String::from_utf8(nb)
            .map_err(|_| CoreError::Format("bad tensor name".into()))?;
        if &fname != name {
            return Err(CoreError::Format(format!(
                "tensor '{fname}' does not match expected '{name}'"
            )));
        }
        r.read_exact(&mut u32b).map_err(|e| CoreError::io(path, e))?;
        let len = u32::from_le_bytes(u32b) as usize;
        if len != tensor.len() {
            return Err(CoreError::Format(format!(
                "tensor '{name}' has {len} values, expected {}",
                tensor.len()
            )));
        }
        let mut payload = vec![0u8; len * 4];
        r.read_exact(&mut payload).map_err(|e| CoreError::io(path, e))?;
        for (dst, chunk) in tensor.iter_mut().zip(payload.chunks_exact(4)) {
            *dst = F::from_f32(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
    }
    Ok(net)
}

/// Load a checkpoint and reject it unless its config matches `expected`.
pub fn load_checkpoint_expect<F: Scalar>(
    path: impl AsRef<Path>,
    expected: &SegNetConfig,
) -> Result<SegNet<F>> {
    let net = load_checkpoint(path)?;
    if net.config() != expected {
        return Err(CoreError::Config(format!(
            "checkpoint config {:?} does not match expected {:?}",
            net.config(),
            expected
        )));
    }
    Ok(net)
}
