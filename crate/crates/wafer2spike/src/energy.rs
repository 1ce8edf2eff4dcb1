//! FLOPs/SOPs accounting and energy estimation.
//!
//! A conventional network layer costs `Power = 12.5 pJ × FLOPs`. A spiking
//! layer only performs work when an input spike arrives, so its cost is
//! counted in synaptic operations, `SOPs = T · γ · FLOPs`, at 77 fJ each,
//! where γ is the mean input-spike density of the layer: spikes arriving per
//! input site per time step, averaged over the measured batch. γ is bounded
//! by 1 because neurons emit at most one spike per step.
//!
//! The spike encoder consumes real-valued inputs, not spikes, so it is
//! costed as a single conventional conv pass and reported as its own line;
//! totals are given both with and without it.

use crate::error::{Error, Result};
use crate::layers::{network_forward, Network, NetworkConfig, StepRecord};
use crate::lif::SpikeActivation;
use crate::tensor::{conv_out_extent, Tensor};

/// Joules per synaptic operation in a spiking implementation.
pub const JOULES_PER_SOP: f64 = 77e-15;
/// Joules per floating point operation in a conventional implementation.
pub const JOULES_PER_FLOP: f64 = 12.5e-12;

/// FLOPs of a conv layer producing `c` maps of `w_c × h_c` sites from `d`
/// input channels through a `w_w × h_w` kernel: one multiply and one add
/// per kernel tap per output site.
pub fn flops_conv(c: usize, d: usize, w_c: usize, h_c: usize, w_w: usize, h_w: usize) -> u64 {
    2 * c as u64 * d as u64 * w_c as u64 * h_c as u64 * w_w as u64 * h_w as u64
}

/// FLOPs of a fully connected layer with `u` units fed by `u_prev` inputs.
pub fn flops_fc(u: usize, u_prev: usize) -> u64 {
    2 * u as u64 * u_prev as u64
}

/// Synaptic operations for a layer executed over `time_steps` steps at input
/// spike density `gamma`.
pub fn sops(layer_flops: u64, gamma: f64, time_steps: usize) -> f64 {
    time_steps as f64 * gamma * layer_flops as f64
}

/// Energy of a spiking execution, in millijoules.
pub fn power_snn_mj(total_sops: f64) -> f64 {
    total_sops * JOULES_PER_SOP * 1e3
}

/// Energy of a conventional execution, in millijoules.
pub fn power_dnn_mj(total_flops: f64) -> f64 {
    total_flops * JOULES_PER_FLOP * 1e3
}

/// Arithmetic shape of a costed layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    /// `maps` output channels of `out_height × out_width` sites, `depth`
    /// input channels, `kernel_height × kernel_width` taps.
    Conv {
        maps: usize,
        depth: usize,
        out_height: usize,
        out_width: usize,
        kernel_height: usize,
        kernel_width: usize,
    },
    Fc { units: usize, units_prev: usize },
}

impl LayerShape {
    /// Per-pass FLOPs from the closed-form formulas.
    pub fn flops(&self) -> u64 {
        match *self {
            LayerShape::Conv {
                maps,
                depth,
                out_height,
                out_width,
                kernel_height,
                kernel_width,
            } => flops_conv(maps, depth, out_width, out_height, kernel_width, kernel_height),
            LayerShape::Fc { units, units_prev } => flops_fc(units, units_prev),
        }
    }

    /// Number of input sites feeding the layer (used to cross-check measured
    /// firing statistics against the configured geometry).
    fn input_sites(&self, input_height: usize, input_width: usize) -> usize {
        match *self {
            LayerShape::Conv { depth, .. } => depth * input_height * input_width,
            LayerShape::Fc { units_prev, .. } => units_prev,
        }
    }
}

/// Input-spike traffic observed at one layer over a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiringStats {
    /// Total spikes that arrived at the layer across all steps and samples.
    pub spikes: u64,
    /// Observation period.
    pub time_steps: usize,
    /// Input sites per sample.
    pub sites: usize,
    /// Samples in the measured batch.
    pub samples: usize,
}

impl FiringStats {
    /// Mean input-spike density: spikes per site per step, averaged over the
    /// batch. Zero for an empty observation.
    pub fn gamma(&self) -> f64 {
        let denom = self.time_steps as u64 * self.sites as u64 * self.samples as u64;
        if denom == 0 {
            0.0
        } else {
            self.spikes as f64 / denom as f64
        }
    }
}

/// Counts spikes in a per-step record trace; values are exactly 0 or 1 under
/// hard thresholding so summation is exact.
fn count_spikes(records: &[StepRecord]) -> (u64, usize, usize) {
    let mut spikes = 0.0f64;
    let mut sites = 0;
    let mut samples = 0;
    for record in records {
        spikes += record.spk.data().iter().map(|&s| s as f64).sum::<f64>();
        let shape = record.spk.shape();
        samples = shape[0];
        sites = record.spk.len() / shape[0];
    }
    (spikes.round() as u64, sites, samples)
}

/// Runs a forward pass and measures input-spike density at every
/// spike-consuming layer: each spiking conv, the fully connected layer, and
/// the output decoder. Returned in that order.
pub fn measure_firing_rates(
    net: &Network,
    inputs: &Tensor,
    time_steps: usize,
    activation: &SpikeActivation,
) -> Result<Vec<FiringStats>> {
    let (_, cache) = network_forward(net, inputs, time_steps, activation)?;
    let mut stats = Vec::new();
    let mut push = |records: &[StepRecord]| {
        let (spikes, sites, samples) = count_spikes(records);
        stats.push(FiringStats {
            spikes,
            time_steps,
            sites,
            samples,
        });
    };
    for i in 0..net.convs.len() {
        if i == 0 {
            push(&cache.encoder);
        } else {
            push(&cache.convs[i - 1]);
        }
    }
    // Flattening does not change spike counts, so the FC layer sees the same
    // traffic as the trace that feeds it.
    if let Some(last) = cache.convs.last() {
        push(last);
    } else {
        push(&cache.encoder);
    }
    push(&cache.fc);
    Ok(stats)
}

/// One line of the energy report.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub shape: LayerShape,
    /// Per-pass FLOPs of the layer.
    pub flops: u64,
    /// Synaptic operations over the full observation period; `None` for the
    /// encoder line, which is costed conventionally.
    pub sops: Option<f64>,
    pub millijoules: f64,
}

/// Energy estimate for a network configuration under measured firing rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub lines: Vec<LayerCost>,
    pub time_steps: usize,
    /// Totals over the spiking layers.
    pub spiking_sops: f64,
    pub spiking_millijoules: f64,
    /// The encoder's conventional single-pass cost.
    pub encoder_flops: u64,
    pub encoder_millijoules: f64,
    /// Spiking energy plus the encoder line.
    pub total_millijoules: f64,
}

/// Spike-consuming layer shapes for a configuration, in forward order
/// (convs, fc, output), preceded by the encoder shape.
fn layer_shapes(config: &NetworkConfig) -> Result<(LayerShape, Vec<(String, LayerShape)>)> {
    let mut h = conv_out_extent(config.input_height, config.encoder_kernel, 1, 0)?;
    let mut w = conv_out_extent(config.input_width, config.encoder_kernel, 1, 0)?;
    let encoder = LayerShape::Conv {
        maps: config.encoder_maps,
        depth: 1,
        out_height: h,
        out_width: w,
        kernel_height: config.encoder_kernel,
        kernel_width: config.encoder_kernel,
    };
    let mut channels = config.encoder_maps;
    let mut shapes = Vec::new();
    for (i, spec) in config.conv_layers.iter().enumerate() {
        let oh = conv_out_extent(h, spec.kernel, spec.stride, spec.padding)?;
        let ow = conv_out_extent(w, spec.kernel, spec.stride, spec.padding)?;
        shapes.push((
            format!("conv{}", i + 1),
            LayerShape::Conv {
                maps: spec.out_channels,
                depth: channels,
                out_height: oh,
                out_width: ow,
                kernel_height: spec.kernel,
                kernel_width: spec.kernel,
            },
        ));
        channels = spec.out_channels;
        h = oh;
        w = ow;
    }
    let flatten = channels * h * w;
    shapes.push((
        "fc".to_string(),
        LayerShape::Fc {
            units: config.fc_units,
            units_prev: flatten,
        },
    ));
    shapes.push((
        "output".to_string(),
        LayerShape::Fc {
            units: config.classes,
            units_prev: config.fc_units,
        },
    ));
    Ok((encoder, shapes))
}

/// Input extents seen by each spiking layer, for validating measured stats.
fn input_extents(config: &NetworkConfig) -> Result<Vec<(usize, usize)>> {
    let mut h = conv_out_extent(config.input_height, config.encoder_kernel, 1, 0)?;
    let mut w = conv_out_extent(config.input_width, config.encoder_kernel, 1, 0)?;
    let mut extents = Vec::new();
    for spec in &config.conv_layers {
        extents.push((h, w));
        h = conv_out_extent(h, spec.kernel, spec.stride, spec.padding)?;
        w = conv_out_extent(w, spec.kernel, spec.stride, spec.padding)?;
    }
    extents.push((1, 1)); // fc input is flat
    extents.push((1, 1)); // output input is flat
    Ok(extents)
}

/// Combines a configuration's layer arithmetic with measured firing rates
/// into per-layer costs and totals.
pub fn estimate_network_energy(
    config: &NetworkConfig,
    stats: &[FiringStats],
    time_steps: usize,
) -> Result<EnergyReport> {
    let (encoder_shape, shapes) = layer_shapes(config)?;
    if stats.len() != shapes.len() {
        return Err(Error::Input(format!(
            "firing stats cover {} layers but the configuration has {} spike-consuming layers",
            stats.len(),
            shapes.len()
        )));
    }
    let extents = input_extents(config)?;
    let encoder_flops = encoder_shape.flops();
    let encoder_millijoules = power_dnn_mj(encoder_flops as f64);
    let mut lines = vec![LayerCost {
        name: "encoder".to_string(),
        shape: encoder_shape,
        flops: encoder_flops,
        sops: None,
        millijoules: encoder_millijoules,
    }];
    let mut spiking_sops = 0.0;
    for ((stat, (name, shape)), (ih, iw)) in stats.iter().zip(&shapes).zip(extents) {
        let expected_sites = shape.input_sites(ih, iw);
        if stat.sites != expected_sites {
            return Err(Error::Input(format!(
                "layer {name}: measured {} input sites but the configuration implies {expected_sites}",
                stat.sites
            )));
        }
        let flops = shape.flops();
        let layer_sops = sops(flops, stat.gamma(), time_steps);
        spiking_sops += layer_sops;
        lines.push(LayerCost {
            name: name.clone(),
            shape: *shape,
            flops,
            sops: Some(layer_sops),
            millijoules: power_snn_mj(layer_sops),
        });
    }
    let spiking_millijoules = power_snn_mj(spiking_sops);
    Ok(EnergyReport {
        lines,
        time_steps,
        spiking_sops,
        spiking_millijoules,
        encoder_flops,
        encoder_millijoules,
        total_millijoules: spiking_millijoules + encoder_millijoules,
    })
}

impl EnergyReport {
    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>14} {:>18} {:>12}\n",
            "layer", "FLOPs", "SOPs", "energy (mJ)"
        ));
        for line in &self.lines {
            let sops = match line.sops {
                Some(s) => format!("{s:.1}"),
                None => "—".to_string(),
            };
            out.push_str(&format!(
                "{:<10} {:>14} {:>18} {:>12.6}\n",
                line.name, line.flops, sops, line.millijoules
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>14} {:>18.1} {:>12.6}\n",
            "spiking", "", self.spiking_sops, self.spiking_millijoules
        ));
        out.push_str(&format!(
            "{:<10} {:>14} {:>18} {:>12.6}\n",
            "total", "", "", self.total_millijoules
        ));
        out
    }

    /// CSV rows `model,flops,sops,millijoules`, one per layer plus totals.
    pub fn csv(&self) -> String {
        let mut out = String::from("model,flops,sops,millijoules\n");
        for line in &self.lines {
            let sops = match line.sops {
                Some(s) => format!("{s}"),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                line.name, line.flops, sops, line.millijoules
            ));
        }
        out.push_str(&format!(
            "spiking_total,,{},{}\n",
            self.spiking_sops, self.spiking_millijoules
        ));
        out.push_str(&format!("total,,,{}\n", self.total_millijoules));
        out
    }
}
