//! The four layer types of the network and the unrolled forward pass: a
//! convolutional spike encoder that turns the real-valued wafer map into
//! spike trains, spiking convolutional layers, a spiking fully connected
//! layer, and a non-spiking output decoder that maps the fully connected
//! layer's spike history to class scores.
//!
//! The input is static: every time step feeds the identical wafer tensor
//! through the encoder; only the LIF state evolves. All inter-layer traffic
//! after the encoder is binary spikes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lif::{lif_step, LifParams, LifState, SpikeActivation};
use crate::tensor::{self, Tensor};

/// Geometry of one spiking convolutional layer (square kernel).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Full architecture description. `variant_2c/3c/4c` give the default
/// wafer-map stacks; tests build smaller configs directly.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub encoder_maps: usize,
    pub encoder_kernel: usize,
    pub conv_layers: Vec<ConvSpec>,
    pub fc_units: usize,
    pub classes: usize,
    pub time_steps: usize,
    pub v_thr: f32,
    pub v_reset: f32,
    pub scd_init: f32,
    pub vd_init: f32,
}

impl NetworkConfig {
    fn wafer_base(conv_layers: Vec<ConvSpec>) -> NetworkConfig {
        NetworkConfig {
            input_height: 36,
            input_width: 36,
            encoder_maps: 64,
            encoder_kernel: 7,
            conv_layers,
            fc_units: 256,
            classes: 9,
            time_steps: 4,
            v_thr: 1.0,
            v_reset: 0.0,
            scd_init: 0.7,
            vd_init: 0.8,
        }
    }

    /// Two spiking conv layers: 64→128 and 128→128, both 3×3 stride 2.
    pub fn variant_2c() -> NetworkConfig {
        NetworkConfig::wafer_base(vec![
            ConvSpec { out_channels: 128, kernel: 3, stride: 2, padding: 0 },
            ConvSpec { out_channels: 128, kernel: 3, stride: 2, padding: 0 },
        ])
    }

    /// 2C plus one extent-preserving 128→128 3×3 layer.
    pub fn variant_3c() -> NetworkConfig {
        let mut cfg = NetworkConfig::variant_2c();
        cfg.conv_layers.push(ConvSpec { out_channels: 128, kernel: 3, stride: 1, padding: 1 });
        cfg
    }

    /// 3C plus a second extent-preserving layer.
    pub fn variant_4c() -> NetworkConfig {
        let mut cfg = NetworkConfig::variant_3c();
        cfg.conv_layers.push(ConvSpec { out_channels: 128, kernel: 3, stride: 1, padding: 1 });
        cfg
    }
}

/// Convolutional spike encoder: conv over the real-valued input, LIF over
/// the resulting feature maps.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    /// Kernel `[maps, 1, k, k]`.
    pub kernel: Tensor,
    /// Per-map bias.
    pub bias: Tensor,
    pub lif: LifParams,
}

/// Spiking convolutional layer: conv over binary spikes, LIF on top.
#[derive(Clone, Debug)]
pub struct SpikingConvLayer {
    /// Kernel `[out_c, in_c, kh, kw]`.
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub lif: LifParams,
}

/// Spiking fully connected layer over the flattened conv spikes.
#[derive(Clone, Debug)]
pub struct SpikingFcLayer {
    /// Weight `[units, units_prev]`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub lif: LifParams,
}

/// Non-spiking temporal decoder: a per-step affine readout of the fully
/// connected layer's spikes, combined across steps by learned scalar
/// weights.
#[derive(Clone, Debug)]
pub struct OutputLayer {
    /// Weight `[classes, units]`.
    pub weight: Tensor,
    pub bias: Tensor,
    /// One scalar per time step.
    pub time_weights: Tensor,
}

/// The full stack plus the config it was built from.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub encoder: EncoderLayer,
    pub convs: Vec<SpikingConvLayer>,
    pub fc: SpikingFcLayer,
    pub output: OutputLayer,
}

/// Init gain for layers whose inputs are binary spike trains. Only a
/// fraction of a spiking layer's fan-in is active at any step, so the
/// classical `sqrt(1/fan_in)` bound leaves the summed drive far below the
/// firing threshold and the deep layers start silent — and a silent layer
/// sits outside the surrogate window, so no gradient can revive it. The
/// larger bound keeps every layer firing at initialization.
const SPIKE_INPUT_GAIN: f32 = 5.0;

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f32) -> Tensor {
    let bound = (gain / fan_in as f32).sqrt();
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-bound..bound);
    }
    t
}

impl Network {
    /// Builds and initializes a network. Kernels and weights draw from a
    /// zero-mean uniform distribution with bound `sqrt(1/fan_in)`, biases
    /// start at zero, decay factors at their configured initial values, and
    /// time weights at `1/T`. The same seed always yields the same network.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Network> {
        if config.time_steps == 0 {
            return Err(Error::Input("time_steps must be at least 1".into()));
        }
        if config.encoder_maps == 0 || config.classes == 0 {
            return Err(Error::Input("encoder_maps and classes must be positive".into()));
        }
        if config.fc_units < config.classes {
            return Err(Error::Input(format!(
                "fc_units {} must be at least the class count {}",
                config.fc_units, config.classes
            )));
        }
        if !(config.scd_init >= 0.0 && config.scd_init <= 1.0)
            || !(config.vd_init >= 0.0 && config.vd_init <= 1.0)
        {
            return Err(Error::Input("decay initial values must lie in [0, 1]".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.encoder_kernel;
        let mut h = tensor::conv_out_extent(config.input_height, k, 1, 0)?;
        let mut w = tensor::conv_out_extent(config.input_width, k, 1, 0)?;
        let encoder = EncoderLayer {
            kernel: uniform_tensor(&mut rng, &[config.encoder_maps, 1, k, k], k * k, 1.0),
            bias: Tensor::zeros(&[config.encoder_maps]),
            lif: LifParams::new(
                &[config.encoder_maps, h, w],
                config.scd_init,
                config.vd_init,
                config.v_thr,
                config.v_reset,
            )?,
        };

        let mut channels = config.encoder_maps;
        let mut convs = Vec::with_capacity(config.conv_layers.len());
        for spec in &config.conv_layers {
            h = tensor::conv_out_extent(h, spec.kernel, spec.stride, spec.padding)?;
            w = tensor::conv_out_extent(w, spec.kernel, spec.stride, spec.padding)?;
            let fan_in = channels * spec.kernel * spec.kernel;
            convs.push(SpikingConvLayer {
                kernel: uniform_tensor(
                    &mut rng,
                    &[spec.out_channels, channels, spec.kernel, spec.kernel],
                    fan_in,
                    SPIKE_INPUT_GAIN,
                ),
                bias: Tensor::zeros(&[spec.out_channels]),
                stride: spec.stride,
                padding: spec.padding,
                lif: LifParams::new(
                    &[spec.out_channels, h, w],
                    config.scd_init,
                    config.vd_init,
                    config.v_thr,
                    config.v_reset,
                )?,
            });
            channels = spec.out_channels;
        }

        let flat = channels * h * w;
        let fc = SpikingFcLayer {
            weight: uniform_tensor(&mut rng, &[config.fc_units, flat], flat, SPIKE_INPUT_GAIN),
            bias: Tensor::zeros(&[config.fc_units]),
            lif: LifParams::new(
                &[config.fc_units],
                config.scd_init,
                config.vd_init,
                config.v_thr,
                config.v_reset,
            )?,
        };
        let output = OutputLayer {
            weight: uniform_tensor(
                &mut rng,
                &[config.classes, config.fc_units],
                config.fc_units,
                1.0,
            ),
            bias: Tensor::zeros(&[config.classes]),
            time_weights: Tensor::filled(&[config.time_steps], 1.0 / config.time_steps as f32),
        };

        Ok(Network { config, encoder, convs, fc, output })
    }

    /// Flattened input size of the fully connected layer.
    pub fn flatten_len(&self) -> usize {
        self.fc.weight.shape()[1]
    }

    /// All learnable tensors in the canonical order used by the optimizer
    /// and the checkpoint codec: encoder (kernel, bias, w_scd, w_vd), each
    /// spiking conv likewise, the fully connected layer likewise, then the
    /// output layer (weight, bias, time_weights).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = vec![
            &self.encoder.kernel,
            &self.encoder.bias,
            &self.encoder.lif.w_scd,
            &self.encoder.lif.w_vd,
        ];
        for c in &self.convs {
            p.extend([&c.kernel, &c.bias, &c.lif.w_scd, &c.lif.w_vd]);
        }
        p.extend([&self.fc.weight, &self.fc.bias, &self.fc.lif.w_scd, &self.fc.lif.w_vd]);
        p.extend([&self.output.weight, &self.output.bias, &self.output.time_weights]);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![
            &mut self.encoder.kernel,
            &mut self.encoder.bias,
            &mut self.encoder.lif.w_scd,
            &mut self.encoder.lif.w_vd,
        ];
        for c in &mut self.convs {
            p.extend([&mut c.kernel, &mut c.bias, &mut c.lif.w_scd, &mut c.lif.w_vd]);
        }
        p.extend([
            &mut self.fc.weight,
            &mut self.fc.bias,
            &mut self.fc.lif.w_scd,
            &mut self.fc.lif.w_vd,
        ]);
        p.extend([&mut self.output.weight, &mut self.output.bias, &mut self.output.time_weights]);
        p
    }

    /// `true` at positions of [`Self::parameters`] holding decay factors,
    /// which the optimizer clamps to `[0, 1]` after every step.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false, false, true, true];
        for _ in &self.convs {
            m.extend([false, false, true, true]);
        }
        m.extend([false, false, true, true]);
        m.extend([false, false, false]);
        m
    }
}

fn ensure_binary(t: &Tensor, what: &str) -> Result<()> {
    for (i, &x) in t.data().iter().enumerate() {
        if x != 0.0 && x != 1.0 {
            return Err(Error::Contract(format!(
                "{what} must be binary spikes; found {x} at flat index {i}"
            )));
        }
    }
    Ok(())
}

/// One step through the encoder: convolve the (static) wafer tensor, then
/// run the LIF update. Returns the new state and the pre-reset potential
/// the backward pass caches.
pub fn encoder_forward(
    wafer_input: &Tensor,
    layer: &EncoderLayer,
    prev: &LifState,
    activation: &SpikeActivation,
) -> Result<(LifState, Tensor)> {
    let psp = tensor::conv2d(wafer_input, &layer.kernel, &layer.bias, 1, 0)?;
    lif_step(prev, &psp, &layer.lif, activation)
}

/// One step through a spiking conv layer. With the hard threshold active the
/// input is checked to be strictly binary.
pub fn spiking_conv_forward(
    spikes_in: &Tensor,
    layer: &SpikingConvLayer,
    prev: &LifState,
    activation: &SpikeActivation,
) -> Result<(LifState, Tensor)> {
    if let SpikeActivation::Hard(_) = activation {
        ensure_binary(spikes_in, "spiking conv input")?;
    }
    let psp = tensor::conv2d(spikes_in, &layer.kernel, &layer.bias, layer.stride, layer.padding)?;
    lif_step(prev, &psp, &layer.lif, activation)
}

/// One step through the spiking fully connected layer.
pub fn spiking_fc_forward(
    spikes_in: &Tensor,
    layer: &SpikingFcLayer,
    prev: &LifState,
    activation: &SpikeActivation,
) -> Result<(LifState, Tensor)> {
    if let SpikeActivation::Hard(_) = activation {
        ensure_binary(spikes_in, "spiking fc input")?;
    }
    let psp = tensor::matmul_affine(spikes_in, &layer.weight, &layer.bias)?;
    lif_step(prev, &psp, &layer.lif, activation)
}

/// Decodes the fully connected layer's spike history `[T, B, U]` into class
/// scores: an affine readout per step, then a weighted sum over steps.
/// Scores are unnormalized; softmax happens inside the loss.
pub fn output_decode(spike_history: &Tensor, layer: &OutputLayer) -> Result<(Tensor, Tensor)> {
    let [t_len, batch, units] = *spike_history.expect_rank::<3>("spike history")?;
    if t_len != layer.time_weights.len() {
        return Err(Error::dimension(format!(
            "history has {} steps but the decoder holds {} time weights",
            t_len,
            layer.time_weights.len()
        )));
    }
    let classes = layer.weight.shape()[0];
    let mut per_step = Tensor::zeros(&[t_len, batch, classes]);
    let mut scores = Tensor::zeros(&[batch, classes]);
    for t in 0..t_len {
        let step_in = Tensor::from_vec(
            &[batch, units],
            spike_history.data()[t * batch * units..(t + 1) * batch * units].to_vec(),
        )?;
        let step_out = tensor::matmul_affine(&step_in, &layer.weight, &layer.bias)?;
        let wt = layer.time_weights.data()[t];
        let dst = &mut per_step.data_mut()[t * batch * classes..(t + 1) * batch * classes];
        dst.copy_from_slice(step_out.data());
        for (s, &o) in scores.data_mut().iter_mut().zip(step_out.data()) {
            *s += wt * o;
        }
    }
    Ok((scores, per_step))
}

/// Forward values recorded for one layer at one time step. The previous
/// step's record (or zeros at t = 0) supplies `prev_isc`; the post-reset
/// voltage is recomputed from `v_pre` and `spk` when needed.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub isc: Tensor,
    pub v_pre: Tensor,
    pub spk: Tensor,
}

impl StepRecord {
    /// Post-reset membrane voltage, recomputed exactly as the forward pass
    /// produced it from the cached pre-reset potential and spikes.
    pub fn post_reset_v(&self, lif: &LifParams, activation: &SpikeActivation) -> Tensor {
        let mut v = Tensor::zeros(self.v_pre.shape());
        let out = v.data_mut().iter_mut().zip(self.v_pre.data().iter().zip(self.spk.data()));
        match activation {
            SpikeActivation::Hard(_) => {
                for (o, (&pre, &s)) in out {
                    *o = if s == 1.0 { lif.v_reset } else { pre };
                }
            }
            SpikeActivation::Smooth(_) => {
                for (o, (&pre, &s)) in out {
                    *o = lif.v_reset * s + pre * (1.0 - s);
                }
            }
        }
        v
    }
}

/// Everything the backward pass needs from one forward run.
pub struct NetworkCache {
    /// The wafer tensor, identical across steps.
    pub input: Tensor,
    pub encoder: Vec<StepRecord>,
    /// Indexed `[layer][step]`.
    pub convs: Vec<Vec<StepRecord>>,
    pub fc: Vec<StepRecord>,
    /// Fully connected spikes `[T, B, U]`.
    pub fc_history: Tensor,
    /// Decoder readout per step `[T, B, classes]`.
    pub per_step: Tensor,
    pub class_scores: Tensor,
    /// Nonlinearity the forward pass ran with; backward must match it.
    pub activation: SpikeActivation,
}

/// Runs the full T-step unrolled forward pass and returns class scores plus
/// the cache for backpropagation. Two runs with identical weights and input
/// produce bit-identical results.
pub fn network_forward(
    net: &Network,
    wafer_input: &Tensor,
    time_steps: usize,
    activation: &SpikeActivation,
) -> Result<(Tensor, NetworkCache)> {
    let [batch, depth, in_h, in_w] = *wafer_input.expect_rank::<4>("wafer input")?;
    if depth != 1 || in_h != net.config.input_height || in_w != net.config.input_width {
        return Err(Error::dimension(format!(
            "wafer input shape {:?} does not match configured [B, 1, {}, {}]",
            wafer_input.shape(),
            net.config.input_height,
            net.config.input_width
        )));
    }
    if time_steps == 0 || time_steps != net.output.time_weights.len() {
        return Err(Error::dimension(format!(
            "requested {} steps but the decoder holds {} time weights",
            time_steps,
            net.output.time_weights.len()
        )));
    }

    let units = net.fc.weight.shape()[0];
    let mut enc_state = LifState::zeros(batch, net.encoder.lif.site_shape());
    let mut conv_states: Vec<LifState> = net
        .convs
        .iter()
        .map(|c| LifState::zeros(batch, c.lif.site_shape()))
        .collect();
    let mut fc_state = LifState::zeros(batch, net.fc.lif.site_shape());

    let mut enc_records = Vec::with_capacity(time_steps);
    let mut conv_records: Vec<Vec<StepRecord>> =
        net.convs.iter().map(|_| Vec::with_capacity(time_steps)).collect();
    let mut fc_records = Vec::with_capacity(time_steps);
    let mut fc_history = Tensor::zeros(&[time_steps, batch, units]);

    // The wafer input is static across steps, so the encoder's psp is too;
    // computing it once outside the loop is bit-identical and saves the
    // repeated convolution.
    let encoder_psp = tensor::conv2d(wafer_input, &net.encoder.kernel, &net.encoder.bias, 1, 0)?;

    for t in 0..time_steps {
        let (next, v_pre) = lif_step(&enc_state, &encoder_psp, &net.encoder.lif, activation)?;
        enc_records.push(StepRecord { isc: next.isc.clone(), v_pre, spk: next.spk.clone() });
        enc_state = next;

        let mut spikes = enc_state.spk.clone();
        for (i, layer) in net.convs.iter().enumerate() {
            let (next, v_pre) = spiking_conv_forward(&spikes, layer, &conv_states[i], activation)?;
            conv_records[i].push(StepRecord {
                isc: next.isc.clone(),
                v_pre,
                spk: next.spk.clone(),
            });
            spikes = next.spk.clone();
            conv_states[i] = next;
        }

        let flat = spikes.reshaped(&[batch, net.flatten_len()])?;
        let (next, v_pre) = spiking_fc_forward(&flat, &net.fc, &fc_state, activation)?;
        fc_history.data_mut()[t * batch * units..(t + 1) * batch * units]
            .copy_from_slice(next.spk.data());
        fc_records.push(StepRecord { isc: next.isc.clone(), v_pre, spk: next.spk.clone() });
        fc_state = next;
    }

    let (class_scores, per_step) = output_decode(&fc_history, &net.output)?;
    let cache = NetworkCache {
        input: wafer_input.clone(),
        encoder: enc_records,
        convs: conv_records,
        fc: fc_records,
        fc_history,
        per_step,
        class_scores: class_scores.clone(),
        activation: *activation,
    };
    Ok((class_scores, cache))
}
