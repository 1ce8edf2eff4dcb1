//! Training: softmax cross-entropy, spatio-temporal backpropagation through
//! the unrolled network, SGD/Adam parameter updates, and the train/evaluate
//! loops.
//!
//! The backward pass walks time steps in reverse. At each step every LIF
//! site receives three cotangents — for its spike output, its carried
//! voltage, and its carried synaptic current — and emits cotangents for the
//! step's potential function and the previous step's state. Spatial
//! cotangents then flow through the convolution / affine adjoints exactly as
//! in a conventional network.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{network_forward, Network, NetworkCache, StepRecord};
use crate::lif::{lif_step_backward, LifParams, LifStepCache, SpikeActivation, SurrogateSpec};
use crate::metrics::{confusion, per_class_stats, ConfusionMatrix, MetricsBundle};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyperparameters for one training run. Every default here is a declared
/// choice and configurable; nothing is hard-coded elsewhere.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub time_steps: usize,
    pub learning_rate: f32,
    /// Per-epoch multiplicative learning-rate factor; 1.0 disables decay.
    pub lr_decay: f32,
    /// L2 coefficient applied to weights and biases (not to the clamped
    /// LIF decay factors); 0.0 disables it.
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_epsilon: f32,
    pub surrogate: SurrogateSpec,
    /// Always honored: every code path reduces in a fixed order, so equal
    /// seeds give bit-identical runs. Recorded here as the stated contract.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            time_steps: 4,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            surrogate: SurrogateSpec::default(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Input("time_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Input(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Input("lr_decay must be positive, weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn activation(&self) -> SpikeActivation {
        SpikeActivation::Hard(self.surrogate)
    }
}

/// One normalized input map with its class index.
#[derive(Clone, Debug)]
pub struct TrainSample {
    /// Shape `[1, H, W]`.
    pub input: Tensor,
    pub label: usize,
}

/// Loss summary over one pass of a dataset.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub loss: f64,
    pub n_samples: usize,
    pub n_classes: usize,
    pub per_class_correct: Vec<usize>,
}

/// One line of training history.
#[derive(Clone, Debug)]
pub struct EpochReport {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub wall_seconds: f64,
}

/// Gradients for every learnable tensor, in the same canonical order as
/// [`Network::parameters`].
pub struct ParameterGradients {
    tensors: Vec<Tensor>,
}

impl ParameterGradients {
    pub fn zeros_like(net: &Network) -> ParameterGradients {
        ParameterGradients {
            tensors: net.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Softmax cross-entropy with max-subtraction. Returns the mean loss and
/// `(softmax - onehot) / batch`, the cotangent for the class scores.
pub fn cross_entropy(class_scores: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [batch, classes] = *class_scores.expect_rank::<2>("class scores")?;
    if labels.len() != batch {
        return Err(Error::Input(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut loss = 0.0f64;
    for b in 0..batch {
        let label = labels[b];
        if label >= classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = &class_scores.data()[b * classes..(b + 1) * classes];
        let grow = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (g, &s) in grow.iter_mut().zip(row) {
            *g = (s - max).exp();
            sum += *g;
        }
        for g in grow.iter_mut() {
            *g /= sum;
        }
        loss -= (grow[label] as f64).ln();
        grow[label] -= 1.0;
        for g in grow.iter_mut() {
            *g /= batch as f32;
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Argmax per row; ties break to the lowest class index.
pub fn predict(class_scores: &Tensor) -> Result<Vec<usize>> {
    let [batch, classes] = *class_scores.expect_rank::<2>("class scores")?;
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &class_scores.data()[b * classes..(b + 1) * classes];
        let mut best = 0;
        for (c, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

struct Carry {
    isc: Tensor,
    v: Tensor,
}

/// Backward through one LIF site group at step `t`: consumes the spike
/// cotangent plus the temporal carry, accumulates decay-factor gradients,
/// and returns the potential-function cotangent with the new carry.
fn lif_backward_at(
    records: &[StepRecord],
    t: usize,
    g_spk: &Tensor,
    carry: &Carry,
    lif: &LifParams,
    activation: &SpikeActivation,
    g_scd: &mut Tensor,
    g_vd: &mut Tensor,
) -> Result<(Tensor, Carry)> {
    let zero;
    let prev_isc: &Tensor;
    let prev_v: Tensor;
    if t == 0 {
        zero = Tensor::zeros(g_spk.shape());
        prev_isc = &zero;
        prev_v = zero.clone();
    } else {
        prev_isc = &records[t - 1].isc;
        prev_v = records[t - 1].post_reset_v(lif, activation);
    }
    let cache = LifStepCache {
        prev_isc,
        prev_v: &prev_v,
        v_pre: &records[t].v_pre,
        spk: &records[t].spk,
    };
    let grads = lif_step_backward(g_spk, &carry.v, &carry.isc, &cache, lif, activation)?;
    g_scd.add_assign(&grads.w_scd)?;
    g_vd.add_assign(&grads.w_vd)?;
    Ok((grads.psp, Carry { isc: grads.prev_isc, v: grads.prev_v }))
}

/// Spatio-temporal backpropagation: walks t = T..1 through the cached
/// forward pass and accumulates gradients for every learnable parameter,
/// including the LIF decay factors and the decoder's time weights.
pub fn stbp_backward(
    cache: &NetworkCache,
    grad_scores: &Tensor,
    net: &Network,
) -> Result<ParameterGradients> {
    let t_len = net.output.time_weights.len();
    if cache.encoder.len() != t_len
        || cache.fc.len() != t_len
        || cache.convs.len() != net.convs.len()
        || cache.convs.iter().any(|c| c.len() != t_len)
    {
        return Err(Error::Contract(
            "forward cache does not cover every layer and time step".into(),
        ));
    }
    let [batch, classes] = *grad_scores.expect_rank::<2>("grad_scores")?;
    let units = net.fc.weight.shape()[0];
    if classes != net.output.weight.shape()[0] || cache.fc_history.shape() != [t_len, batch, units]
    {
        return Err(Error::Contract("cache shapes do not match the network".into()));
    }
    let activation = cache.activation;

    // Output decoder backward: per-step affine adjoint plus time weights.
    let mut g_out_w = Tensor::zeros(net.output.weight.shape());
    let mut g_out_b = Tensor::zeros(&[classes]);
    let mut g_tw = Tensor::zeros(&[t_len]);
    let mut g_hist: Vec<Tensor> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let wt = net.output.time_weights.data()[t];
        let mut g_step = Tensor::zeros(&[batch, classes]);
        for (g, &gs) in g_step.data_mut().iter_mut().zip(grad_scores.data()) {
            *g = wt * gs;
        }
        let step_scores = &cache.per_step.data()[t * batch * classes..(t + 1) * batch * classes];
        g_tw.data_mut()[t] = grad_scores
            .data()
            .iter()
            .zip(step_scores)
            .map(|(&g, &p)| g * p)
            .sum();
        let hist_t = Tensor::from_vec(
            &[batch, units],
            cache.fc_history.data()[t * batch * units..(t + 1) * batch * units].to_vec(),
        )?;
        let (g_h, g_w, g_b) = tensor::matmul_affine_backward(&g_step, &hist_t, &net.output.weight)?;
        g_out_w.add_assign(&g_w)?;
        g_out_b.add_assign(&g_b)?;
        g_hist.push(g_h);
    }

    let n_convs = net.convs.len();
    let mut g_enc_k = Tensor::zeros(net.encoder.kernel.shape());
    let mut g_enc_b = Tensor::zeros(net.encoder.bias.shape());
    let mut g_enc_scd = Tensor::zeros(net.encoder.lif.site_shape());
    let mut g_enc_vd = Tensor::zeros(net.encoder.lif.site_shape());
    let mut g_conv_k: Vec<Tensor> =
        net.convs.iter().map(|c| Tensor::zeros(c.kernel.shape())).collect();
    let mut g_conv_b: Vec<Tensor> =
        net.convs.iter().map(|c| Tensor::zeros(c.bias.shape())).collect();
    let mut g_conv_scd: Vec<Tensor> =
        net.convs.iter().map(|c| Tensor::zeros(c.lif.site_shape())).collect();
    let mut g_conv_vd: Vec<Tensor> =
        net.convs.iter().map(|c| Tensor::zeros(c.lif.site_shape())).collect();
    let mut g_fc_w = Tensor::zeros(net.fc.weight.shape());
    let mut g_fc_b = Tensor::zeros(net.fc.bias.shape());
    let mut g_fc_scd = Tensor::zeros(net.fc.lif.site_shape());
    let mut g_fc_vd = Tensor::zeros(net.fc.lif.site_shape());

    let state_zeros = |site: &[usize]| {
        let mut shape = vec![batch];
        shape.extend_from_slice(site);
        Carry { isc: Tensor::zeros(&shape), v: Tensor::zeros(&shape) }
    };
    let mut enc_carry = state_zeros(net.encoder.lif.site_shape());
    let mut conv_carries: Vec<Carry> =
        net.convs.iter().map(|c| state_zeros(c.lif.site_shape())).collect();
    let mut fc_carry = state_zeros(net.fc.lif.site_shape());

    for t in (0..t_len).rev() {
        // Spiking fully connected layer.
        let (g_psp_fc, carry) = lif_backward_at(
            &cache.fc,
            t,
            &g_hist[t],
            &fc_carry,
            &net.fc.lif,
            &activation,
            &mut g_fc_scd,
            &mut g_fc_vd,
        )?;
        fc_carry = carry;
        let pre_fc_spk = if n_convs == 0 {
            &cache.encoder[t].spk
        } else {
            &cache.convs[n_convs - 1][t].spk
        };
        let flat_in = pre_fc_spk.clone().reshaped(&[batch, net.flatten_len()])?;
        let (g_flat, g_w, g_b) = tensor::matmul_affine_backward(&g_psp_fc, &flat_in, &net.fc.weight)?;
        g_fc_w.add_assign(&g_w)?;
        g_fc_b.add_assign(&g_b)?;
        let mut g_spk = g_flat.reshaped(pre_fc_spk.shape())?;

        // Spiking conv layers, deepest first.
        for i in (0..n_convs).rev() {
            let (g_psp, carry) = lif_backward_at(
                &cache.convs[i],
                t,
                &g_spk,
                &conv_carries[i],
                &net.convs[i].lif,
                &activation,
                &mut g_conv_scd[i],
                &mut g_conv_vd[i],
            )?;
            conv_carries[i] = carry;
            let input_t = if i == 0 { &cache.encoder[t].spk } else { &cache.convs[i - 1][t].spk };
            let (g_in, g_k, g_b) = tensor::conv2d_backward(
                &g_psp,
                input_t,
                &net.convs[i].kernel,
                net.convs[i].stride,
                net.convs[i].padding,
            )?;
            g_conv_k[i].add_assign(&g_k)?;
            g_conv_b[i].add_assign(&g_b)?;
            g_spk = g_in;
        }

        // Encoder; the gradient toward the wafer input is discarded.
        let (g_psp_enc, carry) = lif_backward_at(
            &cache.encoder,
            t,
            &g_spk,
            &enc_carry,
            &net.encoder.lif,
            &activation,
            &mut g_enc_scd,
            &mut g_enc_vd,
        )?;
        enc_carry = carry;
        let (_, g_k, g_b) =
            tensor::conv2d_backward(&g_psp_enc, &cache.input, &net.encoder.kernel, 1, 0)?;
        g_enc_k.add_assign(&g_k)?;
        g_enc_b.add_assign(&g_b)?;
    }

    let mut tensors = vec![g_enc_k, g_enc_b, g_enc_scd, g_enc_vd];
    for i in 0..n_convs {
        tensors.push(std::mem::replace(&mut g_conv_k[i], Tensor::zeros(&[1])));
        tensors.push(std::mem::replace(&mut g_conv_b[i], Tensor::zeros(&[1])));
        tensors.push(std::mem::replace(&mut g_conv_scd[i], Tensor::zeros(&[1])));
        tensors.push(std::mem::replace(&mut g_conv_vd[i], Tensor::zeros(&[1])));
    }
    tensors.extend([g_fc_w, g_fc_b, g_fc_scd, g_fc_vd, g_out_w, g_out_b, g_tw]);
    Ok(ParameterGradients { tensors })
}

/// First/second moment buffers for Adam plus the shared step counter.
pub struct OptimizerState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(net: &Network) -> OptimizerState {
        let zeros: Vec<Tensor> =
            net.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// Applies one SGD or Adam update, then clamps the LIF decay factors to
/// `[0, 1]`. Rejects NaN gradients.
pub fn optimizer_step(
    net: &mut Network,
    grads: &ParameterGradients,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    let mask = net.decay_mask();
    let mut params = net.parameters_mut();
    let gs = grads.tensors();
    if gs.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradient tensors for {} parameters",
            gs.len(),
            params.len()
        )));
    }
    for (g, p) in gs.iter().zip(params.iter()) {
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if g.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN gradient".into()));
        }
    }

    state.step += 1;
    let lr = cfg.learning_rate;
    let bc1 = 1.0 - (cfg.adam_beta1 as f64).powi(state.step as i32);
    let bc2 = 1.0 - (cfg.adam_beta2 as f64).powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let n = p.len();
        for j in 0..n {
            let mut g = gs[i].data()[j];
            if cfg.weight_decay > 0.0 && !mask[i] {
                g += cfg.weight_decay * p.data()[j];
            }
            let delta = match cfg.optimizer {
                OptimizerKind::Sgd => lr * g,
                OptimizerKind::Adam => {
                    let m = &mut state.m[i].data_mut()[j];
                    *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
                    let v = &mut state.v[i].data_mut()[j];
                    *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
                    let m_hat = *m as f64 / bc1;
                    let v_hat = *v as f64 / bc2;
                    (lr as f64 * m_hat / (v_hat.sqrt() + cfg.adam_epsilon as f64)) as f32
                }
            };
            p.data_mut()[j] -= delta;
        }
        if mask[i] {
            for x in p.data_mut() {
                *x = x.clamp(0.0, 1.0);
            }
        }
    }
    Ok(())
}

/// Shuffled visit order for one epoch: a seeded permutation, different each
/// epoch, reproducible across runs.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order
}

fn assemble_batch(
    samples: &[TrainSample],
    indices: &[usize],
    net: &Network,
) -> Result<(Tensor, Vec<usize>)> {
    let (h, w) = (net.config.input_height, net.config.input_width);
    let mut input = Tensor::zeros(&[indices.len(), 1, h, w]);
    let mut labels = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let s = &samples[i];
        if s.input.shape() != [1, h, w] {
            return Err(Error::dimension(format!(
                "sample {i} has shape {:?}, expected [1, {h}, {w}]",
                s.input.shape()
            )));
        }
        if s.label >= net.config.classes {
            return Err(Error::Input(format!(
                "sample {i} label {} out of range for {} classes",
                s.label, net.config.classes
            )));
        }
        input.data_mut()[k * h * w..(k + 1) * h * w].copy_from_slice(s.input.data());
        labels.push(s.label);
    }
    Ok((input, labels))
}

/// Trains in place and returns per-epoch history. `on_epoch` runs after
/// every epoch with the 1-based epoch number and the current network; the
/// command-line tool uses it to write checkpoints and log lines.
pub fn train_with_hook(
    samples: &[TrainSample],
    net: &mut Network,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Network, &EpochReport) -> Result<bool>,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let activation = cfg.activation();
    let mut opt_state = OptimizerState::new(net);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut epoch_cfg = cfg.clone();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0f64;
        let mut n_correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, labels) = assemble_batch(samples, chunk, net)?;
            let (scores, cache) = network_forward(net, &input, cfg.time_steps, &activation)?;
            let (loss, grad_scores) = cross_entropy(&scores, &labels)?;
            loss_sum += loss * labels.len() as f64;
            n_correct += predict(&scores)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = stbp_backward(&cache, &grad_scores, net)?;
            optimizer_step(net, &grads, &epoch_cfg, &mut opt_state)?;
        }
        let n = samples.len() as f64;
        let report = EpochReport {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            train_accuracy: n_correct as f64 / n,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let keep_going = on_epoch(epoch + 1, net, &report)?;
        reports.push(report);
        if !keep_going {
            break;
        }
        epoch_cfg.learning_rate *= cfg.lr_decay;
    }
    Ok(reports)
}

/// [`train_with_hook`] without a callback.
pub fn train(
    samples: &[TrainSample],
    net: &mut Network,
    cfg: &TrainConfig,
) -> Result<Vec<EpochReport>> {
    train_with_hook(samples, net, cfg, |_, _, _| Ok(true))
}

/// Full evaluation result: the confusion matrix, the derived per-class
/// statistics, and the mean cross-entropy loss.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsBundle,
    pub mean_loss: f64,
}

/// Runs the network over a dataset without mutating it and derives metrics.
pub fn evaluate(samples: &[TrainSample], net: &Network, cfg: &TrainConfig) -> Result<Evaluation> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let activation = cfg.activation();
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut labels_all = Vec::with_capacity(samples.len());
    let mut preds_all = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0f64;
    for chunk in indices.chunks(cfg.batch_size) {
        let (input, labels) = assemble_batch(samples, chunk, net)?;
        let (scores, _) = network_forward(net, &input, cfg.time_steps, &activation)?;
        let (loss, _) = cross_entropy(&scores, &labels)?;
        loss_sum += loss * labels.len() as f64;
        preds_all.extend(predict(&scores)?);
        labels_all.extend(labels);
    }
    let cm = confusion(&labels_all, &preds_all, net.config.classes)?;
    Ok(Evaluation {
        metrics: per_class_stats(&cm),
        confusion: cm,
        mean_loss: loss_sum / samples.len() as f64,
    })
}

/// Per-class correctness counts for a labeled score set; used by reports.
pub fn loss_report(class_scores: &Tensor, labels: &[usize]) -> Result<LossReport> {
    let [_, classes] = *class_scores.expect_rank::<2>("class scores")?;
    let (loss, _) = cross_entropy(class_scores, labels)?;
    let preds = predict(class_scores)?;
    let mut per_class_correct = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            per_class_correct[l] += 1;
        }
    }
    Ok(LossReport { loss, n_samples: labels.len(), n_classes: classes, per_class_correct })
}
