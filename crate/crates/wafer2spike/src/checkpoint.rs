//! Model checkpoints: the "W2S1" binary container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "W2S1"
//! n_desc       u32      number of layer descriptors
//! descriptor   u8 tag, u32 n_shape, n_shape × u32 shape ints
//!   tag 1 encoder: [input_height, input_width, maps, kernel]
//!   tag 2 conv:    [out_channels, in_channels, kernel, stride, padding]
//!   tag 3 fc:      [units, units_prev]
//!   tag 4 output:  [classes, units, time_steps]
//! v_thr        f32
//! v_reset      f32
//! scd_init     f32      decay-tensor construction defaults; the stored
//! vd_init      f32      tensors carry the trained values
//! params       raw f32 data of every parameter tensor, declaration order
//! ```
//!
//! Descriptors appear in network order: one encoder, zero or more convs,
//! one fc, one output. Parameter tensors follow in the same canonical order
//! used by the trainer (per layer: kernel/weight, bias, then the two decay
//! tensors; the output layer stores weight, bias, time weights). Shapes are
//! fully determined by the descriptors, so the data section carries no
//! framing. Round-trips are bit-exact: floats are moved as raw bit patterns.

use std::fs;
use std::path::Path;

use crate::data::codec::Reader;
use crate::error::{Error, Result};
use crate::layers::{ConvSpec, Network, NetworkConfig};

const MAGIC: &[u8; 4] = b"W2S1";

const TAG_ENCODER: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_FC: u8 = 3;
const TAG_OUTPUT: u8 = 4;

fn push_u32(out: &mut Vec<u8>, value: usize, what: &str) -> Result<()> {
    let v: u32 = value
        .try_into()
        .map_err(|_| Error::Input(format!("{what} {value} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_descriptor(out: &mut Vec<u8>, tag: u8, ints: &[usize]) -> Result<()> {
    out.push(tag);
    push_u32(out, ints.len(), "descriptor length")?;
    for &v in ints {
        push_u32(out, v, "descriptor shape int")?;
    }
    Ok(())
}

/// Serializes a network to the W2S1 container.
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cfg = &net.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, 3 + cfg.conv_layers.len(), "descriptor count")?;
    push_descriptor(
        &mut out,
        TAG_ENCODER,
        &[cfg.input_height, cfg.input_width, cfg.encoder_maps, cfg.encoder_kernel],
    )?;
    let mut channels = cfg.encoder_maps;
    for spec in &cfg.conv_layers {
        push_descriptor(
            &mut out,
            TAG_CONV,
            &[spec.out_channels, channels, spec.kernel, spec.stride, spec.padding],
        )?;
        channels = spec.out_channels;
    }
    push_descriptor(&mut out, TAG_FC, &[cfg.fc_units, net.flatten_len()])?;
    push_descriptor(&mut out, TAG_OUTPUT, &[cfg.classes, cfg.fc_units, cfg.time_steps])?;
    out.extend_from_slice(&cfg.v_thr.to_le_bytes());
    out.extend_from_slice(&cfg.v_reset.to_le_bytes());
    out.extend_from_slice(&cfg.scd_init.to_le_bytes());
    out.extend_from_slice(&cfg.vd_init.to_le_bytes());
    for tensor in net.parameters() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_descriptor(r: &mut Reader<'_>, expect_len: usize, what: &str) -> Result<Vec<usize>> {
    let len_offset = r.offset;
    let n = r.u32(what)? as usize;
    if n != expect_len {
        return Err(Error::format(
            len_offset as u64,
            format!("{what} descriptor has {n} shape ints, expected {expect_len}"),
        ));
    }
    let mut ints = Vec::with_capacity(n);
    for _ in 0..n {
        ints.push(r.u32(what)? as usize);
    }
    Ok(ints)
}

/// Parses a W2S1 container back into a network. The stored parameter bytes
/// are restored verbatim, so `load(save(net))` reproduces `net` bit for bit.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, offset: 0 };

    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"W2S1\""));
    }
    let n_desc = r.u32("descriptor count")? as usize;
    if n_desc < 3 {
        return Err(Error::format(
            4,
            format!("{n_desc} descriptors; need at least encoder, fc, and output"),
        ));
    }

    let tag_offset = r.offset;
    if r.u8("descriptor tag")? != TAG_ENCODER {
        return Err(Error::format(tag_offset as u64, "first descriptor must be the encoder"));
    }
    let enc = read_descriptor(&mut r, 4, "encoder")?;
    let mut conv_layers = Vec::new();
    let mut channels = enc[2];
    let mut fc = None;
    let mut output = None;
    for _ in 1..n_desc {
        let tag_offset = r.offset;
        let tag = r.u8("descriptor tag")?;
        match tag {
            TAG_CONV => {
                if fc.is_some() {
                    return Err(Error::format(tag_offset as u64, "conv descriptor after fc"));
                }
                let d = read_descriptor(&mut r, 5, "conv")?;
                if d[1] != channels {
                    return Err(Error::format(
                        tag_offset as u64,
                        format!("conv expects {} input channels but the previous layer emits {channels}", d[1]),
                    ));
                }
                channels = d[0];
                conv_layers.push(ConvSpec {
                    out_channels: d[0],
                    kernel: d[2],
                    stride: d[3],
                    padding: d[4],
                });
            }
            TAG_FC => {
                if fc.is_some() {
                    return Err(Error::format(tag_offset as u64, "duplicate fc descriptor"));
                }
                fc = Some(read_descriptor(&mut r, 2, "fc")?);
            }
            TAG_OUTPUT => {
                if fc.is_none() {
                    return Err(Error::format(tag_offset as u64, "output descriptor before fc"));
                }
                if output.is_some() {
                    return Err(Error::format(tag_offset as u64, "duplicate output descriptor"));
                }
                output = Some(read_descriptor(&mut r, 3, "output")?);
            }
            other => {
                return Err(Error::format(
                    tag_offset as u64,
                    format!("unknown descriptor tag {other}"),
                ));
            }
        }
    }
    let Some(fc) = fc else {
        return Err(Error::format(r.offset as u64, "missing fc descriptor"));
    };
    let Some(output) = output else {
        return Err(Error::format(r.offset as u64, "missing output descriptor"));
    };
    if output[1] != fc[0] {
        return Err(Error::Input(format!(
            "output layer reads {} units but fc provides {}",
            output[1], fc[0]
        )));
    }

    let v_thr = r.f32("v_thr")?;
    let v_reset = r.f32("v_reset")?;
    let scd_init = r.f32("scd_init")?;
    let vd_init = r.f32("vd_init")?;

    let config = NetworkConfig {
        input_height: enc[0],
        input_width: enc[1],
        encoder_maps: enc[2],
        encoder_kernel: enc[3],
        conv_layers,
        fc_units: fc[0],
        classes: output[0],
        time_steps: output[2],
        v_thr,
        v_reset,
        scd_init,
        vd_init,
    };
    let mut net = Network::init(config, 0)?;
    if net.flatten_len() != fc[1] {
        return Err(Error::Input(format!(
            "fc descriptor claims {} inputs but the conv stack flattens to {}",
            fc[1],
            net.flatten_len()
        )));
    }

    for tensor in net.parameters_mut() {
        let offset = r.offset;
        let raw = r.take(4 * tensor.len(), "parameter data")?;
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            let at = i * 4;
            *v = f32::from_le_bytes(raw[at..at + 4].try_into().unwrap());
        }
        debug_assert_eq!(r.offset, offset + 4 * tensor.len());
    }
    if r.offset != bytes.len() {
        return Err(Error::format(
            r.offset as u64,
            format!("{} trailing bytes after the parameter data", bytes.len() - r.offset),
        ));
    }
    Ok(net)
}
