//! Frequency-embedded EM feature network.
//!
//! Two ReLU MLPs evaluated per Gaussian: an attenuation trunk mapping
//! (enc(P_G), enc(P_TX), enc(freq)) to a hidden feature h plus a bounded
//! attenuation residual delta_f in (-0.5, 0.5), and a radiance net mapping
//! (h, enc(freq)) to a nonnegative emission Sig. The frequency embedding
//! is concatenated into both stages. Gradients are hand-written
//! reverse-mode, exact for the forward map, including gradients with
//! respect to the Gaussian position input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{Aabb, Vec3};

/// Positional-encoding configuration. Positions are normalized into
/// [-1, 1]^3 by the scene bounds; the frequency scalar is
/// log10(f / 1 GHz) / 2 so 1-100 GHz maps onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    pub l_pos: usize,
    pub l_freq: usize,
    pub bounds: Aabb,
}

impl EncodingConfig {
    pub fn with_bounds(bounds: Aabb) -> Self {
        EncodingConfig { l_pos: 10, l_freq: 6, bounds }
    }

    pub fn pos_dim(&self) -> usize {
        3 * (2 * self.l_pos + 1)
    }

    pub fn freq_dim(&self) -> usize {
        2 * self.l_freq + 1
    }

    /// Normalize one position axis into [-1, 1], clamping out-of-range
    /// inputs. Returns (normalized, d_norm/d_raw, clamped).
    fn norm_axis(&self, p: f64, axis: usize) -> (f64, f64, bool) {
        let lo = self.bounds.min[axis];
        let hi = self.bounds.max[axis];
        let scale = 2.0 / (hi - lo);
        let t = (p - lo) * scale - 1.0;
        if t < -1.0 {
            (-1.0, 0.0, true)
        } else if t > 1.0 {
            (1.0, 0.0, true)
        } else {
            (t, scale, false)
        }
    }

    fn norm_freq(&self, f: f64) -> (f64, bool) {
        let u = (f / 1e9).log10() / 2.0;
        if u < 0.0 {
            (0.0, true)
        } else if u > 1.0 {
            (1.0, true)
        } else {
            (u, false)
        }
    }
}

/// Sinusoidal encoding of a scalar: (sin(2^0 pi x), cos(2^0 pi x), ...,
/// sin(2^{L-1} pi x), cos(2^{L-1} pi x)) with the raw input appended.
pub fn encode(x: f64, l: usize) -> Vec<f64> {
    assert!(l >= 1);
    let mut out = Vec::with_capacity(2 * l + 1);
    encode_into(x, l, &mut out);
    out
}

fn encode_into(x: f64, l: usize, out: &mut Vec<f64>) {
    for k in 0..l {
        let arg = (1u64 << k) as f64 * std::f64::consts::PI * x;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out.push(x);
}

/// dL/dx for one encoded scalar given upstream gradients over its 2L+1
/// entries.
fn encode_backward(x: f64, l: usize, upstream: &[f64]) -> f64 {
    let mut g = 0.0;
    for k in 0..l {
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        let arg = freq * x;
        g += upstream[2 * k] * freq * arg.cos();
        g -= upstream[2 * k + 1] * freq * arg.sin();
    }
    g + upstream[2 * l]
}

/// One dense layer, weights row-major [out x in].
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let biases = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Dense { weights, biases, in_dim, out_dim }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Network architecture constants; sizes are configurable because the
/// gradient code is shape-generic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub atten_width: usize,
    pub atten_depth: usize,
    pub h_dim: usize,
    pub rad_width: usize,
    pub rad_depth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { atten_width: 128, atten_depth: 3, h_dim: 64, rad_width: 64, rad_depth: 2 }
    }
}

/// All weights of the attenuation and radiance networks plus the encoding
/// configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EmNetParams {
    pub enc: EncodingConfig,
    pub net: NetConfig,
    pub atten: Vec<Dense>,
    pub h_head: Dense,
    pub delta_head: Dense,
    pub rad: Vec<Dense>,
    pub sig_head: Dense,
}

/// Forward outputs for one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub h: Vec<f64>,
    pub delta_f: f64,
    pub sig: f64,
    /// True when any input was clamped into its normalization range.
    pub clamped: bool,
}

/// Retained activations for the backward pass.
#[derive(Debug, Clone)]
pub struct NetTrace {
    input: Vec<f64>,
    atten_acts: Vec<Vec<f64>>,
    delta_raw: f64,
    rad_input: Vec<f64>,
    rad_acts: Vec<Vec<f64>>,
    sig_raw: f64,
    pg_norm: [f64; 3],
    pg_scale: [f64; 3],
    ptx_norm: [f64; 3],
    ptx_scale: [f64; 3],
}

/// Flat parameter gradients in the same order as `params_flat`.
pub type FlatGrad = Vec<f64>;

/// Gradients with respect to the raw (world-space) inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputGrad {
    pub d_p_g: Vec3,
    pub d_p_tx: Vec3,
}

/// Uniform fan-in scaled initialization, deterministic per seed.
pub fn init_params(enc: EncodingConfig, net: NetConfig, seed: u64) -> EmNetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atten_in = 2 * enc.pos_dim() + enc.freq_dim();
    let mut atten = Vec::with_capacity(net.atten_depth);
    let mut d = atten_in;
    for _ in 0..net.atten_depth {
        atten.push(Dense::new(d, net.atten_width, &mut rng));
        d = net.atten_width;
    }
    let h_head = Dense::new(net.atten_width, net.h_dim, &mut rng);
    let delta_head = Dense::new(net.atten_width, 1, &mut rng);
    let rad_in = net.h_dim + enc.freq_dim();
    let mut rad = Vec::with_capacity(net.rad_depth);
    let mut d = rad_in;
    for _ in 0..net.rad_depth {
        rad.push(Dense::new(d, net.rad_width, &mut rng));
        d = net.rad_width;
    }
    let sig_head = Dense::new(net.rad_width, 1, &mut rng);
    EmNetParams { enc, net, atten, h_head, delta_head, rad, sig_head }
}

impl EmNetParams {
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.atten
            .iter()
            .chain(std::iter::once(&self.h_head))
            .chain(std::iter::once(&self.delta_head))
            .chain(self.rad.iter())
            .chain(std::iter::once(&self.sig_head))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    /// Flatten all weights and biases in a fixed layer order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut off = 0;
        for l in self
            .atten
            .iter_mut()
            .chain(std::iter::once(&mut self.h_head))
            .chain(std::iter::once(&mut self.delta_head))
            .chain(self.rad.iter_mut())
            .chain(std::iter::once(&mut self.sig_head))
        {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    pub fn check_finite(&self) -> Result<(), String> {
        for (i, l) in self.layers().enumerate() {
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(format!("non-finite parameter in layer {i}"));
            }
        }
        Ok(())
    }

    /// Evaluate the network for one Gaussian without keeping the trace.
    pub fn forward(&self, p_g: Vec3, p_tx: Vec3, freq: f64) -> NetOutput {
        self.forward_traced(p_g, p_tx, freq).0
    }

    /// Evaluate and retain everything the backward pass needs.
    pub fn forward_traced(&self, p_g: Vec3, p_tx: Vec3, freq: f64) -> (NetOutput, NetTrace) {
        let enc = &self.enc;
        let mut clamped = false;
        let mut input = Vec::with_capacity(2 * enc.pos_dim() + enc.freq_dim());
        let mut pg_norm = [0.0; 3];
        let mut pg_scale = [0.0; 3];
        for axis in 0..3 {
            let (t, s, c) = enc.norm_axis(p_g[axis], axis);
            pg_norm[axis] = t;
            pg_scale[axis] = s;
            clamped |= c;
            encode_into(t, enc.l_pos, &mut input);
        }
        let mut ptx_norm = [0.0; 3];
        let mut ptx_scale = [0.0; 3];
        for axis in 0..3 {
            let (t, s, c) = enc.norm_axis(p_tx[axis], axis);
            ptx_norm[axis] = t;
            ptx_scale[axis] = s;
            clamped |= c;
            encode_into(t, enc.l_pos, &mut input);
        }
        let (u, c) = enc.norm_freq(freq);
        clamped |= c;
        let freq_enc_start = input.len();
        encode_into(u, enc.l_freq, &mut input);
        let freq_enc = input[freq_enc_start..].to_vec();

        // Attenuation trunk.
        let mut atten_acts = Vec::with_capacity(self.atten.len());
        let mut cur = input.clone();
        for layer in &self.atten {
            let mut next = Vec::new();
            layer.forward(&cur, &mut next);
            relu_inplace(&mut next);
            atten_acts.push(next.clone());
            cur = next;
        }
        let mut h = Vec::new();
        self.h_head.forward(&cur, &mut h);
        let mut delta_raw_v = Vec::new();
        self.delta_head.forward(&cur, &mut delta_raw_v);
        let delta_raw = delta_raw_v[0];
        let delta_f = 0.5 * delta_raw.tanh();

        // Radiance net on (h, enc(freq)).
        let mut rad_input = h.clone();
        rad_input.extend_from_slice(&freq_enc);
        let mut rad_acts = Vec::with_capacity(self.rad.len());
        let mut cur = rad_input.clone();
        for layer in &self.rad {
            let mut next = Vec::new();
            layer.forward(&cur, &mut next);
            relu_inplace(&mut next);
            rad_acts.push(next.clone());
            cur = next;
        }
        let mut sig_raw_v = Vec::new();
        self.sig_head.forward(&cur, &mut sig_raw_v);
        let sig_raw = sig_raw_v[0];
        let sig = softplus(sig_raw);

        (
            NetOutput { h: h.clone(), delta_f, sig, clamped },
            NetTrace {
                input,
                atten_acts,
                delta_raw,
                rad_input,
                rad_acts,
                sig_raw,
                pg_norm,
                pg_scale,
                ptx_norm,
                ptx_scale,
            },
        )
    }

    /// Reverse-mode gradients of the forward map. Parameter gradients are
    /// accumulated into `grad` (flat layout of `params_flat`); returns the
    /// gradients with respect to the raw inputs.
    pub fn backward(
        &self,
        trace: &NetTrace,
        d_h: &[f64],
        d_delta_f: f64,
        d_sig: f64,
        grad: &mut [f64],
    ) -> InputGrad {
        assert_eq!(grad.len(), self.param_count());
        assert_eq!(d_h.len(), self.net.h_dim);

        // Flat offsets per layer in params_flat order.
        let mut offsets = Vec::new();
        let mut off = 0;
        for l in self.layers() {
            offsets.push(off);
            off += l.param_count();
        }
        let n_atten = self.atten.len();
        let off_h_head = offsets[n_atten];
        let off_delta_head = offsets[n_atten + 1];
        let off_rad0 = n_atten + 2;
        let off_sig_head = offsets[n_atten + 2 + self.rad.len()];

        // sig = softplus(sig_raw).
        let d_sig_raw = d_sig * crate::geom::logistic(trace.sig_raw);
        // Radiance trunk backward.
        let rad_last = if self.rad.is_empty() { &trace.rad_input } else { trace.rad_acts.last().unwrap() };
        let mut d_cur =
            dense_backward_single(&self.sig_head, rad_last, d_sig_raw, grad, off_sig_head);
        for (li, layer) in self.rad.iter().enumerate().rev() {
            let inp = if li == 0 { &trace.rad_input } else { &trace.rad_acts[li - 1] };
            let act = &trace.rad_acts[li];
            for (g, a) in d_cur.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            d_cur = dense_backward(layer, inp, &d_cur, grad, offsets[off_rad0 + li]);
        }
        // Split radiance-input gradient into d_h (adds to upstream) and the
        // frequency encoding (whose input gradient is not needed).
        let mut d_h_total: Vec<f64> = d_h.to_vec();
        for (i, g) in d_cur.iter().take(self.net.h_dim).enumerate() {
            d_h_total[i] += g;
        }

        // delta_f = 0.5 * tanh(delta_raw).
        let th = trace.delta_raw.tanh();
        let d_delta_raw = d_delta_f * 0.5 * (1.0 - th * th);

        let atten_last = if self.atten.is_empty() { &trace.input } else { trace.atten_acts.last().unwrap() };
        let mut d_trunk = dense_backward(&self.h_head, atten_last, &d_h_total, grad, off_h_head);
        let d_trunk_delta =
            dense_backward_single(&self.delta_head, atten_last, d_delta_raw, grad, off_delta_head);
        for (a, b) in d_trunk.iter_mut().zip(&d_trunk_delta) {
            *a += b;
        }
        for (li, layer) in self.atten.iter().enumerate().rev() {
            let inp = if li == 0 { &trace.input } else { &trace.atten_acts[li - 1] };
            let act = &trace.atten_acts[li];
            for (g, a) in d_trunk.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            d_trunk = dense_backward(layer, inp, &d_trunk, grad, offsets[li]);
        }

        // Through the positional encoding of P_G (first pos_dim entries)
        // and P_TX (next pos_dim entries).
        let per_scalar = 2 * self.enc.l_pos + 1;
        let mut d_p_g = [0.0; 3];
        let mut d_p_tx = [0.0; 3];
        for axis in 0..3 {
            let seg = &d_trunk[axis * per_scalar..(axis + 1) * per_scalar];
            let d_norm = encode_backward(trace.pg_norm[axis], self.enc.l_pos, seg);
            d_p_g[axis] = d_norm * trace.pg_scale[axis];
        }
        for axis in 0..3 {
            let start = self.enc.pos_dim() + axis * per_scalar;
            let seg = &d_trunk[start..start + per_scalar];
            let d_norm = encode_backward(trace.ptx_norm[axis], self.enc.l_pos, seg);
            d_p_tx[axis] = d_norm * trace.ptx_scale[axis];
        }
        InputGrad { d_p_g, d_p_tx }
    }
}

/// Backward through a dense layer with a vector upstream gradient; writes
/// parameter gradients at `off` and returns dL/d(input).
fn dense_backward(
    layer: &Dense,
    input: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    off: usize,
) -> Vec<f64> {
    let mut d_in = vec![0.0; layer.in_dim];
    let bias_off = off + layer.weights.len();
    for o in 0..layer.out_dim {
        let g = d_out[o];
        if g == 0.0 {
            continue;
        }
        let row_off = off + o * layer.in_dim;
        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
        for i in 0..layer.in_dim {
            grad[row_off + i] += g * input[i];
            d_in[i] += g * row[i];
        }
        grad[bias_off + o] += g;
    }
    d_in
}

fn dense_backward_single(
    layer: &Dense,
    input: &[f64],
    d_out: f64,
    grad: &mut [f64],
    off: usize,
) -> Vec<f64> {
    debug_assert_eq!(layer.out_dim, 1);
    dense_backward(layer, input, &[d_out], grad, off)
}
