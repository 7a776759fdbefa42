//! A small 1D convolutional network over the ordered cluster axis, trained
//! from scratch with mini-batch Adam on binary cross-entropy.
//!
//! The cluster ordering makes adjacent feature indices spatially adjacent,
//! so 1D convolution picks up localized perfusion patterns. Architecture:
//! conv (stride 1, zero padding preserving length) + ReLU per conv layer,
//! flatten, dense + ReLU per hidden width, dense(1) + sigmoid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_len: usize,
    /// Conv layers as (kernel_size, out_channels); kernel sizes must be odd.
    pub conv: Vec<(usize, usize)>,
    /// Hidden dense widths; the final dense(1) output layer is implicit.
    pub dense: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl NetConfig {
    pub fn with_input_len(input_len: usize) -> Self {
        Self {
            input_len,
            conv: vec![(5, 8), (5, 16)],
            dense: vec![32],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            l2: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::Config("input_len must be positive".into()));
        }
        for &(k, ch) in &self.conv {
            if k % 2 == 0 || k == 0 {
                return Err(Error::Config(format!("conv kernel size {k} must be odd")));
            }
            if ch == 0 {
                return Err(Error::Config("conv channel count must be >= 1".into()));
            }
        }
        if self.dense.iter().any(|&w| w == 0) {
            return Err(Error::Config("dense widths must be >= 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvShape {
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    len: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct DenseShape {
    n_in: usize,
    n_out: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvShape>,
    denses: Vec<DenseShape>,
    n_params: usize,
    /// True at weight positions (biases excluded from the L2 penalty).
    is_weight: Vec<bool>,
}

fn build_layout(cfg: &NetConfig) -> Layout {
    let len = cfg.input_len;
    let mut convs = Vec::new();
    let mut is_weight = Vec::new();
    let mut off = 0usize;
    let mut in_ch = 1usize;
    for &(ksize, out_ch) in &cfg.conv {
        let w_off = off;
        let n_w = out_ch * in_ch * ksize;
        off += n_w;
        let b_off = off;
        off += out_ch;
        is_weight.extend(std::iter::repeat(true).take(n_w));
        is_weight.extend(std::iter::repeat(false).take(out_ch));
        convs.push(ConvShape { in_ch, out_ch, ksize, len, w_off, b_off });
        in_ch = out_ch;
    }
    let mut denses = Vec::new();
    let mut n_in = in_ch * len;
    for &n_out in cfg.dense.iter().chain(std::iter::once(&1usize)) {
        let w_off = off;
        let n_w = n_out * n_in;
        off += n_w;
        let b_off = off;
        off += n_out;
        is_weight.extend(std::iter::repeat(true).take(n_w));
        is_weight.extend(std::iter::repeat(false).take(n_out));
        denses.push(DenseShape { n_in, n_out, w_off, b_off });
        n_in = n_out;
    }
    Layout { convs, denses, n_params: off, is_weight }
}

/// Network weights plus the architecture they belong to.
#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: NetConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

struct ForwardCache {
    /// Post-activation inputs to each conv layer (index 0 = raw input).
    conv_inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each conv layer.
    conv_pre: Vec<Vec<f64>>,
    /// Post-activation inputs to each dense layer.
    dense_inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each dense layer.
    dense_pre: Vec<Vec<f64>>,
    prob: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    /// Seeded He-style Gaussian initialization.
    pub fn init(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg);
        let mut rng = SplitMix64::substream(cfg.seed, 0x6e65745f696e6974);
        let mut params = vec![0.0; layout.n_params];
        for shape in &layout.convs {
            let fan_in = (shape.in_ch * shape.ksize) as f64;
            let scale = (2.0 / fan_in).sqrt();
            for i in 0..shape.out_ch * shape.in_ch * shape.ksize {
                params[shape.w_off + i] = scale * rng.next_gaussian();
            }
        }
        for shape in &layout.denses {
            let scale = (2.0 / shape.n_in as f64).sqrt();
            for i in 0..shape.n_out * shape.n_in {
                params[shape.w_off + i] = scale * rng.next_gaussian();
            }
        }
        Ok(Self { cfg, params, layout })
    }

    pub fn zeroed(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg);
        let params = vec![0.0; layout.n_params];
        Ok(Self { cfg, params, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        debug_assert_eq!(x.len(), self.cfg.input_len);
        let mut conv_inputs = Vec::new();
        let mut conv_pre = Vec::new();
        let mut current: Vec<f64> = x.to_vec(); // channel-major [ch*len + i]
        for shape in &self.layout.convs {
            conv_inputs.push(current.clone());
            let pad = (shape.ksize - 1) / 2;
            let len = shape.len;
            let mut pre = vec![0.0; shape.out_ch * len];
            for oc in 0..shape.out_ch {
                let bias = self.params[shape.b_off + oc];
                for i in 0..len {
                    let mut acc = bias;
                    for ic in 0..shape.in_ch {
                        let w_base = shape.w_off + (oc * shape.in_ch + ic) * shape.ksize;
                        for t in 0..shape.ksize {
                            let j = i as i64 + t as i64 - pad as i64;
                            if j < 0 || j >= len as i64 {
                                continue;
                            }
                            acc += self.params[w_base + t] * current[ic * len + j as usize];
                        }
                    }
                    pre[oc * len + i] = acc;
                }
            }
            conv_pre.push(pre.clone());
            current = pre.iter().map(|&z| z.max(0.0)).collect();
        }

        let mut dense_inputs = Vec::new();
        let mut dense_pre = Vec::new();
        let n_dense = self.layout.denses.len();
        for (li, shape) in self.layout.denses.iter().enumerate() {
            dense_inputs.push(current.clone());
            let mut pre = vec![0.0; shape.n_out];
            for o in 0..shape.n_out {
                let mut acc = self.params[shape.b_off + o];
                let w_base = shape.w_off + o * shape.n_in;
                for i in 0..shape.n_in {
                    acc += self.params[w_base + i] * current[i];
                }
                pre[o] = acc;
            }
            dense_pre.push(pre.clone());
            current = if li + 1 == n_dense {
                vec![sigmoid(pre[0])]
            } else {
                pre.iter().map(|&z| z.max(0.0)).collect()
            };
        }
        ForwardCache { conv_inputs, conv_pre, dense_inputs, dense_pre, prob: current[0] }
    }

    /// Probability of the positive class for a standardized input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.cfg.input_len {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match network input_len {}",
                x.len(),
                self.cfg.input_len
            )));
        }
        Ok(self.forward_cached(x).prob)
    }

    /// Binary cross-entropy of one example (without the L2 term).
    pub fn example_loss(&self, x: &[f64], y: f64) -> Result<f64> {
        let p = self.forward(x)?.clamp(1e-12, 1.0 - 1e-12);
        Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
    }

    /// L2 penalty over weights (biases excluded).
    pub fn l2_penalty(&self) -> f64 {
        self.cfg.l2
            * self
                .params
                .iter()
                .zip(&self.layout.is_weight)
                .filter(|(_, &w)| w)
                .map(|(&p, _)| p * p)
                .sum::<f64>()
    }

    /// Mean BCE over a batch plus the L2 penalty, and its gradient.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, Vec<f64>)> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
        }
        let batch = xs.len() as f64;
        let mut grad = vec![0.0; self.layout.n_params];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let cache = self.forward_cached(x);
            let p = cache.prob.clamp(1e-12, 1.0 - 1e-12);
            loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            self.backward(&cache, y, &mut grad);
        }
        loss /= batch;
        for g in grad.iter_mut() {
            *g /= batch;
        }
        // L2 term over weights only.
        for i in 0..self.params.len() {
            if self.layout.is_weight[i] {
                grad[i] += 2.0 * self.cfg.l2 * self.params[i];
            }
        }
        loss += self.l2_penalty();
        Ok((loss, grad))
    }

    /// Accumulate the gradient of one example's BCE into `grad`.
    fn backward(&self, cache: &ForwardCache, y: f64, grad: &mut [f64]) {
        let n_dense = self.layout.denses.len();
        // dL/dlogit for sigmoid + BCE.
        let mut delta: Vec<f64> = vec![cache.prob - y];
        for li in (0..n_dense).rev() {
            let shape = &self.layout.denses[li];
            let input = &cache.dense_inputs[li];
            // Parameter gradients.
            for o in 0..shape.n_out {
                grad[shape.b_off + o] += delta[o];
                let w_base = shape.w_off + o * shape.n_in;
                for i in 0..shape.n_in {
                    grad[w_base + i] += delta[o] * input[i];
                }
            }
            // Input gradient, through the previous ReLU when appropriate.
            let mut d_in = vec![0.0; shape.n_in];
            for o in 0..shape.n_out {
                let w_base = shape.w_off + o * shape.n_in;
                for i in 0..shape.n_in {
                    d_in[i] += self.params[w_base + i] * delta[o];
                }
            }
            if li > 0 {
                let pre = &cache.dense_pre[li - 1];
                for (d, &z) in d_in.iter_mut().zip(pre) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }

        // delta now holds the gradient w.r.t. the flattened conv output
        // (post-ReLU of the last conv layer, or the raw input when there
        // are no conv layers).
        let n_conv = self.layout.convs.len();
        for li in (0..n_conv).rev() {
            let shape = &self.layout.convs[li];
            let pad = (shape.ksize - 1) / 2;
            let len = shape.len;
            let pre = &cache.conv_pre[li];
            // Through this layer's ReLU.
            let mut d_pre = delta;
            for (d, &z) in d_pre.iter_mut().zip(pre) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &cache.conv_inputs[li];
            for oc in 0..shape.out_ch {
                for i in 0..len {
                    let d = d_pre[oc * len + i];
                    if d == 0.0 {
                        continue;
                    }
                    grad[shape.b_off + oc] += d;
                    for ic in 0..shape.in_ch {
                        let w_base = shape.w_off + (oc * shape.in_ch + ic) * shape.ksize;
                        for t in 0..shape.ksize {
                            let j = i as i64 + t as i64 - pad as i64;
                            if j < 0 || j >= len as i64 {
                                continue;
                            }
                            grad[w_base + t] += d * input[ic * len + j as usize];
                        }
                    }
                }
            }
            let mut d_in = vec![0.0; shape.in_ch * len];
            for oc in 0..shape.out_ch {
                for ic in 0..shape.in_ch {
                    let w_base = shape.w_off + (oc * shape.in_ch + ic) * shape.ksize;
                    for i in 0..len {
                        let d = d_pre[oc * len + i];
                        if d == 0.0 {
                            continue;
                        }
                        for t in 0..shape.ksize {
                            let j = i as i64 + t as i64 - pad as i64;
                            if j < 0 || j >= len as i64 {
                                continue;
                            }
                            d_in[ic * len + j as usize] += self.params[w_base + t] * d;
                        }
                    }
                }
            }
            delta = d_in;
        }
    }
}

/// Per-column standardization constants learned from training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DegenerateInput("cannot standardize zero rows".into()));
        }
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for ((s, &v), &m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0; // constant columns pass through centered
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }
}

/// A trained classifier: architecture echo, flat parameters, and the
/// standardization constants from its training folds.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub standardizer: Standardizer,
    /// Mean training loss per epoch (BCE + L2).
    pub history: Vec<f64>,
}

impl TrainedModel {
    /// Probability of the positive class for a raw (unstandardized) row.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        self.network.forward(&self.standardizer.apply(row))
    }
}

fn check_class_counts(labels: &[f64]) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y >= 0.5).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::DegenerateInput(format!(
            "training requires >= 2 examples per class, got {pos} positive / {neg} negative"
        )));
    }
    Ok(())
}

/// Train the conv net with mini-batch Adam (moment decays 0.9 / 0.999).
pub fn train(cfg: &NetConfig, features: &[Vec<f64>], labels: &[f64]) -> Result<TrainedModel> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    check_class_counts(labels)?;
    let standardizer = Standardizer::fit(features)?;
    let rows: Vec<Vec<f64>> = features.iter().map(|r| standardizer.apply(r)).collect();

    let mut net = Network::init(cfg.clone())?;
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::substream(cfg.seed, 0x7368_7566_666c_6573);

    let beta1: f64 = 0.9;
    let beta2: f64 = 0.999;
    let eps = 1e-8;
    let mut m = vec![0.0; net.n_params()];
    let mut v = vec![0.0; net.n_params()];
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = net.loss_and_grad(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch} (loss = {loss})"
                )));
            }
            step += 1;
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - beta2.powi(step as i32);
            for i in 0..net.params.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                net.params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
            epoch_loss += loss;
            batches += 1.0;
        }
        let mean_loss = epoch_loss / batches;
        if !mean_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!(
                "parameters diverged at epoch {epoch} (mean loss = {mean_loss})"
            )));
        }
        history.push(mean_loss);
    }

    Ok(TrainedModel { network: net, standardizer, history })
}

/// Logistic regression: the degenerate conv-free, hidden-free network,
/// fitted by full-batch gradient descent from zero initialization until the
/// gradient norm drops below 1e-6 or 10k iterations pass.
pub fn train_logreg(features: &[Vec<f64>], labels: &[f64], l2: f64) -> Result<TrainedModel> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    check_class_counts(labels)?;
    let standardizer = Standardizer::fit(features)?;
    let rows: Vec<Vec<f64>> = features.iter().map(|r| standardizer.apply(r)).collect();
    let dim = rows[0].len();

    let cfg = NetConfig {
        input_len: dim,
        conv: vec![],
        dense: vec![],
        learning_rate: 0.0,
        epochs: 1,
        batch_size: features.len(),
        l2,
        seed: 0,
    };
    let mut net = Network::zeroed(cfg)?;

    // Fixed step from a Lipschitz bound of the mean-BCE objective:
    // L <= max_i ||x_i||^2 / 4 + 2*l2 (sigmoid curvature <= 1/4).
    let max_norm2 = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let lr = 1.0 / (max_norm2 / 4.0 + 2.0 * l2 + 0.25);

    let xs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let mut history = Vec::new();
    for _ in 0..10_000 {
        let (loss, grad) = net.loss_and_grad(&xs, labels)?;
        history.push(loss);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-6 {
            break;
        }
        for (p, g) in net.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    Ok(TrainedModel { network: net, standardizer, history })
}

/// Compare analytic gradients against central finite differences
/// (h = 1e-5) at `n_probe` randomly chosen parameters; returns the largest
/// relative error.
pub fn gradient_check(cfg: &NetConfig, x: &[f64], y: f64, n_probe: usize) -> Result<f64> {
    let net = Network::init(cfg.clone())?;
    let (_, grad) = net.loss_and_grad(&[x], &[y])?;
    max_rel_error_vs_fd(&net, x, y, &grad, n_probe)
}

/// Shared comparison loop, also used by the fault-injection test.
pub fn max_rel_error_vs_fd(
    net: &Network,
    x: &[f64],
    y: f64,
    analytic: &[f64],
    n_probe: usize,
) -> Result<f64> {
    let h = 1e-5;
    let n = net.n_params();
    let mut rng = SplitMix64::substream(net.cfg.seed, 0x6664_7072_6f62_6573);
    let probes: Vec<usize> = if n <= n_probe {
        (0..n).collect()
    } else {
        (0..n_probe).map(|_| rng.next_below(n as u64) as usize).collect()
    };
    let mut worst = 0.0f64;
    let mut scratch = net.clone();
    for &i in &probes {
        let orig = scratch.params[i];
        scratch.params[i] = orig + h;
        let plus = scratch.example_loss(x, y)? + scratch.l2_penalty();
        scratch.params[i] = orig - h;
        let minus = scratch.example_loss(x, y)? + scratch.l2_penalty();
        scratch.params[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
