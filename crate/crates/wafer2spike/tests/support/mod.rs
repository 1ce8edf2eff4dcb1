//! Double-precision reference implementation of the smooth-mode network,
//! written as straight definitional loops with no shared code paths with the
//! production kernels. Finite differences taken against this reference are
//! accurate to ~1e-10, which makes it a trustworthy oracle for the f32
//! backward pass. Shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wafer2spike::layers::{network_forward, ConvSpec, Network, NetworkConfig};
use wafer2spike::lif::{SpikeActivation, SurrogateSpec};
use wafer2spike::tensor::{conv_out_extent, Tensor};
use wafer2spike::train::{cross_entropy, stbp_backward};

/// Relative tolerance for gradient agreement with the oracle.
pub const REL: f64 = 1e-3;
/// Absolute floor below which deviations are ignored.
pub const FLOOR: f64 = 1e-6;
/// Central-difference step.
pub const H: f64 = 1e-5;

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Copies a network's parameters (canonical declaration order) into f64.
pub fn params_to_f64(net: &Network) -> Vec<Vec<f64>> {
    net.parameters()
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reference conv: `input [B,D,H,W]`, `kernel [M,D,kh,kw]`, square geometry
/// handled per-axis, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    input: &[f64],
    b: usize,
    d: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    m: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; b * m * oh * ow];
    for bi in 0..b {
        for mi in 0..m {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[mi];
                    for di in 0..d {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((bi * d + di) * h + iy as usize) * w + ix as usize];
                                let kv = kernel[((mi * d + di) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((bi * m + mi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Reference affine: `input [B,K] · weight [U,K]^T + bias [U]`.
pub fn affine_ref(
    input: &[f64],
    b: usize,
    k: usize,
    weight: &[f64],
    u: usize,
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; b * u];
    for bi in 0..b {
        for ui in 0..u {
            let mut acc = bias[ui];
            for ki in 0..k {
                acc += input[bi * k + ki] * weight[ui * k + ki];
            }
            out[bi * u + ui] = acc;
        }
    }
    out
}

/// One smooth LIF step over a flat layer of `sites` neurons, batched.
/// Returns (isc, v, spk).
#[allow(clippy::too_many_arguments)]
fn lif_step_ref(
    prev_isc: &[f64],
    prev_v: &[f64],
    psp: &[f64],
    scd: &[f64],
    vd: &[f64],
    v_thr: f64,
    v_reset: f64,
    width_a: f64,
    batch: usize,
    sites: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut isc = vec![0.0; batch * sites];
    let mut v = vec![0.0; batch * sites];
    let mut spk = vec![0.0; batch * sites];
    for b in 0..batch {
        for i in 0..sites {
            let o = b * sites + i;
            let cur = scd[i] * prev_isc[o] + psp[o];
            let pre = vd[i] * prev_v[o] + cur;
            let s = sigmoid(4.0 * (pre - v_thr) / width_a);
            isc[o] = cur;
            spk[o] = s;
            v[o] = v_reset * s + pre * (1.0 - s);
        }
    }
    (isc, v, spk)
}

/// Full smooth-mode forward plus mean cross-entropy, entirely in f64.
/// `params` follow the canonical declaration order; `input` is `[B,1,H,W]`
/// row-major; the surrogate width is shared by every layer.
pub fn ref_network_loss(
    config: &NetworkConfig,
    params: &[Vec<f64>],
    input: &[f64],
    batch: usize,
    labels: &[usize],
    width_a: f64,
) -> f64 {
    let v_thr = config.v_thr as f64;
    let v_reset = config.v_reset as f64;
    let t_len = config.time_steps;
    let mut p = params.iter();

    // Encoder geometry and parameters.
    let enc_kernel = p.next().unwrap();
    let enc_bias = p.next().unwrap();
    let enc_scd = p.next().unwrap();
    let enc_vd = p.next().unwrap();
    let eh = conv_out_extent(config.input_height, config.encoder_kernel, 1, 0).unwrap();
    let ew = conv_out_extent(config.input_width, config.encoder_kernel, 1, 0).unwrap();
    let enc_sites = config.encoder_maps * eh * ew;

    struct ConvRef<'a> {
        kernel: &'a [f64],
        bias: &'a [f64],
        scd: &'a [f64],
        vd: &'a [f64],
        out_channels: usize,
        in_channels: usize,
        k: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    }
    let mut convs = Vec::new();
    let mut channels = config.encoder_maps;
    let (mut h, mut w) = (eh, ew);
    for spec in &config.conv_layers {
        let oh = conv_out_extent(h, spec.kernel, spec.stride, spec.padding).unwrap();
        let ow = conv_out_extent(w, spec.kernel, spec.stride, spec.padding).unwrap();
        convs.push(ConvRef {
            kernel: p.next().unwrap(),
            bias: p.next().unwrap(),
            scd: p.next().unwrap(),
            vd: p.next().unwrap(),
            out_channels: spec.out_channels,
            in_channels: channels,
            k: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
        });
        channels = spec.out_channels;
        h = oh;
        w = ow;
    }
    let flatten = channels * h * w;

    let fc_weight = p.next().unwrap();
    let fc_bias = p.next().unwrap();
    let fc_scd = p.next().unwrap();
    let fc_vd = p.next().unwrap();
    let units = config.fc_units;

    let out_weight = p.next().unwrap();
    let out_bias = p.next().unwrap();
    let time_weights = p.next().unwrap();
    assert!(p.next().is_none(), "unconsumed parameter tensors");
    assert_eq!(time_weights.len(), t_len);
    let classes = config.classes;

    // State per layer: (isc, v), initialised to zeros.
    let mut enc_isc = vec![0.0; batch * enc_sites];
    let mut enc_v = vec![0.0; batch * enc_sites];
    let mut conv_state: Vec<(Vec<f64>, Vec<f64>)> = convs
        .iter()
        .map(|c| {
            let n = batch * c.out_channels * c.out_h * c.out_w;
            (vec![0.0; n], vec![0.0; n])
        })
        .collect();
    let mut fc_isc = vec![0.0; batch * units];
    let mut fc_v = vec![0.0; batch * units];

    let input_f64: Vec<f64> = input.to_vec();
    let (enc_psp, _, _) = conv2d_ref(
        &input_f64,
        batch,
        1,
        config.input_height,
        config.input_width,
        enc_kernel,
        config.encoder_maps,
        config.encoder_kernel,
        config.encoder_kernel,
        enc_bias,
        1,
        0,
    );

    let mut scores = vec![0.0; batch * classes];
    for t in 0..t_len {
        let (isc, v, spk) = lif_step_ref(
            &enc_isc, &enc_v, &enc_psp, enc_scd, enc_vd, v_thr, v_reset, width_a, batch, enc_sites,
        );
        enc_isc = isc;
        enc_v = v;
        let mut spikes = spk;

        for (c, state) in convs.iter().zip(conv_state.iter_mut()) {
            let (psp, _, _) = conv2d_ref(
                &spikes,
                batch,
                c.in_channels,
                c.in_h,
                c.in_w,
                c.kernel,
                c.out_channels,
                c.k,
                c.k,
                c.bias,
                c.stride,
                c.padding,
            );
            let sites = c.out_channels * c.out_h * c.out_w;
            let (isc, v, spk) = lif_step_ref(
                &state.0, &state.1, &psp, c.scd, c.vd, v_thr, v_reset, width_a, batch, sites,
            );
            state.0 = isc;
            state.1 = v;
            spikes = spk;
        }

        let psp = affine_ref(&spikes, batch, flatten, fc_weight, units, fc_bias);
        let (isc, v, spk) = lif_step_ref(
            &fc_isc, &fc_v, &psp, fc_scd, fc_vd, v_thr, v_reset, width_a, batch, units,
        );
        fc_isc = isc;
        fc_v = v;

        let step_out = affine_ref(&spk, batch, units, out_weight, classes, out_bias);
        for (s, &o) in scores.iter_mut().zip(&step_out) {
            *s += time_weights[t] * o;
        }
    }

    // Mean cross-entropy with max subtraction.
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &scores[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&s| (s - max).exp()).sum();
        loss += sum.ln() - (row[labels[b]] - max);
    }
    loss / batch as f64
}

/// Central finite differences of `f` over every parameter entry.
pub fn fd_gradient<F>(mut f: F, params: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for ti in 0..params.len() {
        let mut g = vec![0.0; params[ti].len()];
        for i in 0..params[ti].len() {
            let keep = work[ti][i];
            work[ti][i] = keep + h;
            let fp = f(&work);
            work[ti][i] = keep - h;
            let fm = f(&work);
            work[ti][i] = keep;
            g[i] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `|a − b| ≤ floor + rel · |b|`, the agreement test used throughout the
/// gradient checks (`b` is the oracle).
pub fn close_to_oracle(a: f64, oracle: f64, rel: f64, floor: f64) -> bool {
    (a - oracle).abs() <= floor + rel * oracle.abs()
}

/// The tiny smooth-mode network used by the STBP gradient oracle: 6×6 input,
/// 4-map 3×3 encoder, one spiking conv, FC 8, 3 classes, T=2.
pub fn tiny_smooth_config() -> NetworkConfig {
    NetworkConfig {
        input_height: 6,
        input_width: 6,
        encoder_maps: 4,
        encoder_kernel: 3,
        conv_layers: vec![ConvSpec { out_channels: 3, kernel: 2, stride: 1, padding: 0 }],
        fc_units: 8,
        classes: 3,
        time_steps: 2,
        v_thr: 0.4,
        v_reset: 0.0,
        scd_init: 0.7,
        vd_init: 0.8,
    }
}

/// One randomized draw of the STBP-vs-finite-difference comparison. Returns
/// the largest absolute deviation beyond the tolerance (0.0 when all
/// parameters agree).
pub fn stbp_fd_draw(seed: u64) -> f64 {
    let width_a = 1.0;
    let activation = SpikeActivation::Smooth(SurrogateSpec::new(width_a as f32).unwrap());
    let config = tiny_smooth_config();
    let mut net = Network::init(config.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(17));
    // Scribble irregular values: weights in ±0.8, decay factors in (0, 1).
    let mask = net.decay_mask();
    for (p, is_decay) in net.parameters_mut().into_iter().zip(mask) {
        for v in p.data_mut() {
            *v = if is_decay {
                rng.gen_range(0.05..0.95)
            } else {
                rng.gen_range(-0.8..0.8)
            };
        }
    }

    let batch = 2;
    let input: Vec<f64> = (0..batch * 36).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..3)).collect();
    let t_in = Tensor::from_vec(&[batch, 1, 6, 6], to_f32(&input)).unwrap();

    let (scores, cache) = network_forward(&net, &t_in, 2, &activation).unwrap();
    let (loss, grad_scores) = cross_entropy(&scores, &labels).unwrap();
    let grads = stbp_backward(&cache, &grad_scores, &net).unwrap();

    let params = params_to_f64(&net);
    let ref_loss = ref_network_loss(&config, &params, &input, batch, &labels, width_a);
    assert!(
        (loss - ref_loss).abs() <= 1e-4 * ref_loss.abs().max(1.0),
        "forward disagreement: f32 {loss} vs f64 {ref_loss}"
    );

    let fd = fd_gradient(
        |p| ref_network_loss(&config, p, &input, batch, &labels, width_a),
        &params,
        H,
    );

    let mut worst = 0.0f64;
    for (t_got, t_fd) in grads.tensors().iter().zip(&fd) {
        for (&g, &o) in t_got.data().iter().zip(t_fd) {
            let excess = (g as f64 - o).abs() - (FLOOR + REL * o.abs());
            worst = worst.max(excess);
        }
    }
    worst
}
