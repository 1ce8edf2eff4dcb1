//! First-order current-based leaky integrate-and-fire dynamics: the state
//! update, spike generation with reset, and the surrogate derivative used in
//! place of the threshold's during backpropagation.
//!
//! Per time step, with per-neuron decay factors:
//!
//!   isc   = w_scd * isc_prev + psp
//!   v_pre = w_vd  * v_prev   + isc
//!   spk   = 1 if v_pre > v_thr else 0
//!   v     = v_reset where spk fired, else v_pre
//!
//! Decay factors are learnable and clamped to [0, 1] by the optimizer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learnable per-neuron decay factors plus the firing threshold and reset
/// baseline shared by a layer.
#[derive(Clone, Debug)]
pub struct LifParams {
    /// Synaptic current decay, one factor per neuron site.
    pub w_scd: Tensor,
    /// Membrane voltage decay, one factor per neuron site.
    pub w_vd: Tensor,
    pub v_thr: f32,
    pub v_reset: f32,
}

impl LifParams {
    pub fn new(site_shape: &[usize], scd: f32, vd: f32, v_thr: f32, v_reset: f32) -> Result<Self> {
        if v_thr <= v_reset {
            return Err(Error::Input(format!(
                "v_thr {v_thr} must exceed v_reset {v_reset}"
            )));
        }
        Ok(LifParams {
            w_scd: Tensor::filled(site_shape, scd),
            w_vd: Tensor::filled(site_shape, vd),
            v_thr,
            v_reset,
        })
    }

    pub fn site_shape(&self) -> &[usize] {
        self.w_scd.shape()
    }

    pub fn site_count(&self) -> usize {
        self.w_scd.len()
    }
}

/// Synaptic current, post-reset membrane voltage, and spike output of one
/// layer for one time step, batched: shape `[batch, site...]`.
#[derive(Clone, Debug)]
pub struct LifState {
    pub isc: Tensor,
    pub v: Tensor,
    pub spk: Tensor,
}

impl LifState {
    pub fn zeros(batch: usize, site_shape: &[usize]) -> LifState {
        let mut shape = Vec::with_capacity(site_shape.len() + 1);
        shape.push(batch);
        shape.extend_from_slice(site_shape);
        LifState {
            isc: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            spk: Tensor::zeros(&shape),
        }
    }
}

/// Rectangular surrogate derivative: 1/width_a inside a window of width_a
/// centered on the threshold, zero outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub width_a: f32,
}

impl SurrogateSpec {
    pub fn new(width_a: f32) -> Result<Self> {
        if !(width_a > 0.0) {
            return Err(Error::Input(format!(
                "surrogate width must be positive, got {width_a}"
            )));
        }
        Ok(SurrogateSpec { width_a })
    }
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { width_a: 1.0 }
    }
}

/// Spike nonlinearity used in the forward pass.
///
/// `Hard` is the production mode: binary threshold forward, rectangular
/// surrogate in the backward pass. `Smooth` swaps the threshold for a sigmoid
/// whose true derivative is used in the backward pass; its center slope
/// matches the rectangular window, which makes the whole network
/// differentiable and finite-difference checkable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpikeActivation {
    Hard(SurrogateSpec),
    Smooth(SurrogateSpec),
}

impl Default for SpikeActivation {
    /// Production mode: hard threshold with the unit-width surrogate.
    fn default() -> SpikeActivation {
        SpikeActivation::Hard(SurrogateSpec::default())
    }
}

impl SpikeActivation {
    pub fn surrogate(&self) -> SurrogateSpec {
        match *self {
            SpikeActivation::Hard(s) | SpikeActivation::Smooth(s) => s,
        }
    }

    /// Spike output for membrane offset `x = v_pre - v_thr`.
    pub fn spike(&self, x: f32) -> f32 {
        match *self {
            SpikeActivation::Hard(_) => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeActivation::Smooth(s) => sigmoid(4.0 * x / s.width_a),
        }
    }

    /// Derivative substituted for d spk / d v_pre in the backward pass.
    pub fn derivative(&self, x: f32) -> f32 {
        match *self {
            SpikeActivation::Hard(s) => rect_window(x, s.width_a),
            SpikeActivation::Smooth(s) => {
                let sig = sigmoid(4.0 * x / s.width_a);
                4.0 / s.width_a * sig * (1.0 - sig)
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn rect_window(x: f32, width: f32) -> f32 {
    if x.abs() < width / 2.0 {
        1.0 / width
    } else {
        0.0
    }
}

fn check_state_shape(t: &Tensor, params: &LifParams, what: &str) -> Result<usize> {
    let shape = t.shape();
    if shape.len() != params.site_shape().len() + 1 || &shape[1..] != params.site_shape() {
        return Err(Error::dimension(format!(
            "{what} shape {:?} does not match [batch, {:?}]",
            shape,
            params.site_shape()
        )));
    }
    Ok(shape[0])
}

/// One LIF update. Returns the new state plus the pre-reset membrane
/// potential, which the backward pass needs.
pub fn lif_step(
    prev: &LifState,
    psp: &Tensor,
    params: &LifParams,
    activation: &SpikeActivation,
) -> Result<(LifState, Tensor)> {
    let batch = check_state_shape(psp, params, "psp")?;
    if check_state_shape(&prev.isc, params, "prev.isc")? != batch
        || check_state_shape(&prev.v, params, "prev.v")? != batch
    {
        return Err(Error::dimension(
            "prev state batch does not match psp batch",
        ));
    }

    let sites = params.site_count();
    let mut isc = Tensor::zeros(psp.shape());
    let mut v = Tensor::zeros(psp.shape());
    let mut spk = Tensor::zeros(psp.shape());
    let mut v_pre = Tensor::zeros(psp.shape());

    for b in 0..batch {
        let o = b * sites;
        for i in 0..sites {
            let cur = params.w_scd.data()[i] * prev.isc.data()[o + i] + psp.data()[o + i];
            let pre = params.w_vd.data()[i] * prev.v.data()[o + i] + cur;
            let s = activation.spike(pre - params.v_thr);
            isc.data_mut()[o + i] = cur;
            v_pre.data_mut()[o + i] = pre;
            spk.data_mut()[o + i] = s;
            v.data_mut()[o + i] = if let SpikeActivation::Hard(_) = activation {
                if s == 1.0 {
                    params.v_reset
                } else {
                    pre
                }
            } else {
                params.v_reset * s + pre * (1.0 - s)
            };
        }
    }
    Ok((LifState { isc, v, spk }, v_pre))
}

/// Rectangular surrogate window evaluated at every pre-reset potential.
pub fn surrogate_derivative(v_pre: &Tensor, params: &LifParams, spec: &SurrogateSpec) -> Tensor {
    let mut out = Tensor::zeros(v_pre.shape());
    for (o, &p) in out.data_mut().iter_mut().zip(v_pre.data()) {
        *o = rect_window(p - params.v_thr, spec.width_a);
    }
    out
}

/// Forward values one step's backward pass needs; `prev_*` come from the
/// previous step (zeros at t = 0).
#[derive(Clone, Copy)]
pub struct LifStepCache<'a> {
    pub prev_isc: &'a Tensor,
    pub prev_v: &'a Tensor,
    pub v_pre: &'a Tensor,
    pub spk: &'a Tensor,
}

/// Cotangents produced by [`lif_step_backward`]. `w_scd`/`w_vd` are summed
/// over the batch onto the per-site parameter shape.
pub struct LifStepGrads {
    pub psp: Tensor,
    pub prev_isc: Tensor,
    pub prev_v: Tensor,
    pub w_scd: Tensor,
    pub w_vd: Tensor,
}

/// Reverse-mode step through the LIF update.
///
/// `g_spk`, `g_v`, `g_isc` are the cotangents arriving at this step's three
/// outputs. The reset is treated as `v = v_reset*spk + v_pre*(1-spk)` with
/// the spike's dependence on `v_pre` carried through the surrogate.
pub fn lif_step_backward(
    g_spk: &Tensor,
    g_v: &Tensor,
    g_isc: &Tensor,
    cache: &LifStepCache,
    params: &LifParams,
    activation: &SpikeActivation,
) -> Result<LifStepGrads> {
    let batch = check_state_shape(cache.v_pre, params, "cached v_pre")?;
    for (t, what) in [
        (g_spk, "g_spk"),
        (g_v, "g_v"),
        (g_isc, "g_isc"),
        (cache.prev_isc, "cached prev.isc"),
        (cache.prev_v, "cached prev.v"),
        (cache.spk, "cached spk"),
    ] {
        if check_state_shape(t, params, what)? != batch {
            return Err(Error::Contract(format!("{what} batch mismatch")));
        }
    }

    let sites = params.site_count();
    let mut g_psp = Tensor::zeros(cache.v_pre.shape());
    let mut g_prev_isc = Tensor::zeros(cache.v_pre.shape());
    let mut g_prev_v = Tensor::zeros(cache.v_pre.shape());
    let mut g_w_scd = Tensor::zeros(params.site_shape());
    let mut g_w_vd = Tensor::zeros(params.site_shape());

    for b in 0..batch {
        let o = b * sites;
        for i in 0..sites {
            let pre = cache.v_pre.data()[o + i];
            let spk = cache.spk.data()[o + i];
            let sd = activation.derivative(pre - params.v_thr);
            let gv = g_v.data()[o + i];
            let d_vpre = gv * (1.0 - spk) + (g_spk.data()[o + i] + gv * (params.v_reset - pre)) * sd;
            let d_isc = g_isc.data()[o + i] + d_vpre;
            g_psp.data_mut()[o + i] = d_isc;
            g_prev_isc.data_mut()[o + i] = params.w_scd.data()[i] * d_isc;
            g_prev_v.data_mut()[o + i] = params.w_vd.data()[i] * d_vpre;
            g_w_scd.data_mut()[i] += d_isc * cache.prev_isc.data()[o + i];
            g_w_vd.data_mut()[i] += d_vpre * cache.prev_v.data()[o + i];
        }
    }
    Ok(LifStepGrads {
        psp: g_psp,
        prev_isc: g_prev_isc,
        prev_v: g_prev_v,
        w_scd: g_w_scd,
        w_vd: g_w_vd,
    })
}
