//! Rectifier MLP classifier with optional ghost batch normalization.
//!
//! Parameters live in one flat vector. Per layer, in order: the weight matrix
//! (row-major `fan_out x fan_in`), then either the bias (plain layers and the
//! output layer) or the BN scale and shift (normalized hidden layers; the
//! bias is dropped there because BN cancels it).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::dataset::{argmax, SyntheticDataset};
use crate::models::LossModel;
use crate::numkit::{axpy, dot, Rng, Vector};

/// Variance floor added inside the BN square root.
pub const BN_EPS: f64 = 1e-5;
/// Running statistics: `running = BN_MOMENTUM * running + (1 - BN_MOMENTUM) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    GhostBn,
    None,
}

/// Output of [`ghost_bn_forward`], kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GhostBnOutput {
    /// `scale * normalized + shift`, row-major `rows x features`.
    pub output: Vec<f64>,
    /// Pre-scale normalized activations.
    pub normalized: Vec<f64>,
    /// `(start_row, len)` of each ghost group.
    pub groups: Vec<(usize, usize)>,
    /// Per group, per feature.
    pub group_mean: Vec<f64>,
    /// Per group, per feature (population variance).
    pub group_var: Vec<f64>,
    inv_std: Vec<f64>,
    features: usize,
}

impl GhostBnOutput {
    /// Mean over ghost groups of the group statistics, used for the running
    /// averages.
    pub fn batch_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let f = self.features;
        let g = self.groups.len() as f64;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for k in 0..self.groups.len() {
            axpy(1.0 / g, &self.group_mean[k * f..(k + 1) * f], &mut mean);
            axpy(1.0 / g, &self.group_var[k * f..(k + 1) * f], &mut var);
        }
        (mean, var)
    }
}

/// Splits `rows` into contiguous ghost groups of `ghost_size`; a shorter
/// final group keeps its own statistics.
fn ghost_groups(rows: usize, ghost_size: usize) -> Result<Vec<(usize, usize)>> {
    if ghost_size < 2 {
        return Err(Error::InvalidArgument(format!("ghost batch size must be >= 2, got {ghost_size}")));
    }
    let mut groups = Vec::with_capacity(rows.div_ceil(ghost_size));
    let mut start = 0;
    while start < rows {
        let len = ghost_size.min(rows - start);
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "ghost group starting at row {start} has a single example; batch norm needs at least two"
            )));
        }
        groups.push((start, len));
        start += len;
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("batch norm on an empty batch".into()));
    }
    Ok(groups)
}

/// Training-mode batch normalization with statistics computed independently
/// over each contiguous ghost group of `ghost_size` rows.
pub fn ghost_bn_forward(
    x: &[f64],
    features: usize,
    ghost_size: usize,
    scale: &[f64],
    shift: &[f64],
) -> Result<GhostBnOutput> {
    if features == 0 || x.len() % features != 0 {
        return Err(Error::DimensionMismatch { expected: features, actual: x.len() });
    }
    if scale.len() != features || shift.len() != features {
        return Err(Error::DimensionMismatch { expected: features, actual: scale.len() });
    }
    let rows = x.len() / features;
    let groups = ghost_groups(rows, ghost_size)?;
    let f = features;
    let mut normalized = vec![0.0; x.len()];
    let mut output = vec![0.0; x.len()];
    let mut group_mean = vec![0.0; groups.len() * f];
    let mut group_var = vec![0.0; groups.len() * f];
    let mut inv_std = vec![0.0; groups.len() * f];
    for (k, &(start, len)) in groups.iter().enumerate() {
        let block = &x[start * f..(start + len) * f];
        let mean = &mut group_mean[k * f..(k + 1) * f];
        for row in block.chunks_exact(f) {
            axpy(1.0, row, mean);
        }
        mean.iter_mut().for_each(|m| *m /= len as f64);
        let var = &mut group_var[k * f..(k + 1) * f];
        for row in block.chunks_exact(f) {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(mean.iter()) {
                *v += (xi - m) * (xi - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= len as f64);
        let istd = &mut inv_std[k * f..(k + 1) * f];
        for (s, v) in istd.iter_mut().zip(var.iter()) {
            *s = 1.0 / (v + BN_EPS).sqrt();
        }
        for r in start..start + len {
            for j in 0..f {
                let n = (x[r * f + j] - mean[j]) * istd[j];
                normalized[r * f + j] = n;
                output[r * f + j] = scale[j] * n + shift[j];
            }
        }
    }
    Ok(GhostBnOutput { output, normalized, groups, group_mean, group_var, inv_std, features })
}

/// Backward pass of [`ghost_bn_forward`]: returns `(d_input, d_scale, d_shift)`.
pub fn ghost_bn_backward(d_out: &[f64], fwd: &GhostBnOutput, scale: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let f = fwd.features;
    let mut d_in = vec![0.0; d_out.len()];
    let mut d_scale = vec![0.0; f];
    let mut d_shift = vec![0.0; f];
    let mut sum_dn = vec![0.0; f];
    let mut sum_dn_n = vec![0.0; f];
    for (k, &(start, len)) in fwd.groups.iter().enumerate() {
        sum_dn.iter_mut().for_each(|v| *v = 0.0);
        sum_dn_n.iter_mut().for_each(|v| *v = 0.0);
        for r in start..start + len {
            for j in 0..f {
                let dy = d_out[r * f + j];
                let n = fwd.normalized[r * f + j];
                d_scale[j] += dy * n;
                d_shift[j] += dy;
                let dn = dy * scale[j];
                sum_dn[j] += dn;
                sum_dn_n[j] += dn * n;
            }
        }
        let m = len as f64;
        let istd = &fwd.inv_std[k * f..(k + 1) * f];
        for r in start..start + len {
            for j in 0..f {
                let dn = d_out[r * f + j] * scale[j];
                let n = fwd.normalized[r * f + j];
                d_in[r * f + j] = istd[j] / m * (m * dn - sum_dn[j] - n * sum_dn_n[j]);
            }
        }
    }
    (d_in, d_scale, d_shift)
}

/// Running BN statistics, one entry per normalized hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BnStats {
    /// Folds one training step's batch statistics into the running averages.
    pub fn update(&mut self, batch: &BnStats) {
        for (run, new) in self.mean.iter_mut().zip(&batch.mean).chain(self.var.iter_mut().zip(&batch.var)) {
            for (r, n) in run.iter_mut().zip(new) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * n;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Ghost-BN batch statistics.
    Train,
    /// Running statistics.
    Eval(&'a BnStats),
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vector,
    /// Batch statistics to fold into the running averages (train mode with BN).
    pub batch_stats: Option<BnStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: Option<usize>,
    bn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// `[input, hidden..., classes]`
    pub widths: Vec<usize>,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    #[serde(default = "default_ghost")]
    pub ghost_batch_size: usize,
    #[serde(default = "default_l2")]
    pub l2_coeff: f64,
}

fn default_normalization() -> Normalization {
    Normalization::GhostBn
}
fn default_ghost() -> usize {
    64
}
fn default_l2() -> f64 {
    5e-4
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![20, 64, 64, 4],
            normalization: default_normalization(),
            ghost_batch_size: default_ghost(),
            l2_coeff: default_l2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<LayerLayout>,
    param_count: usize,
}

impl MlpModel {
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.widths.len() < 2 || config.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "widths must list at least input and output sizes, all positive; got {:?}",
                config.widths
            )));
        }
        if config.widths[config.widths.len() - 1] < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if config.normalization == Normalization::GhostBn && config.ghost_batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "ghost batch size must be >= 2, got {}",
                config.ghost_batch_size
            )));
        }
        if !(config.l2_coeff >= 0.0) || !config.l2_coeff.is_finite() {
            return Err(Error::InvalidArgument(format!("l2 coefficient must be >= 0, got {}", config.l2_coeff)));
        }
        let n_layers = config.widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for (l, pair) in config.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = offset;
            offset += fan_in * fan_out;
            let normalized = l + 1 < n_layers && config.normalization == Normalization::GhostBn;
            let (bias, bn) = if normalized { (None, Some(offset)) } else { (Some(offset), None) };
            offset += if normalized { 2 * fan_out } else { fan_out };
            layers.push(LayerLayout { fan_in, fan_out, weight, bias, bn });
        }
        Ok(Self { config, layers, param_count: offset })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_dim(&self) -> usize {
        self.config.widths[0]
    }

    pub fn classes(&self) -> usize {
        self.config.widths[self.config.widths.len() - 1]
    }

    pub fn uses_bn(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    /// He-normal weights (`N(0, 2/fan_in)`, or `N(0, 1/fan_in)` for the
    /// output layer), zero biases and shifts, unit BN scales.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let gain = if l == last { 1.0 } else { 2.0 };
            let sd = (gain / layer.fan_in as f64).sqrt();
            for w in &mut p[layer.weight..layer.weight + layer.fan_in * layer.fan_out] {
                *w = sd * rng.normal();
            }
            if let Some(at) = layer.bn {
                p[at..at + layer.fan_out].iter_mut().for_each(|g| *g = 1.0);
            }
        }
        p
    }

    /// Running statistics before any update: zero mean, unit variance.
    pub fn fresh_bn_stats(&self) -> BnStats {
        let widths = self.layers.iter().filter(|l| l.bn.is_some()).map(|l| l.fan_out);
        BnStats {
            mean: widths.clone().map(|f| vec![0.0; f]).collect(),
            var: widths.map(|f| vec![1.0; f]).collect(),
        }
    }

    pub fn l2_term(&self, params: &[f64]) -> f64 {
        0.5 * self.config.l2_coeff * dot(params, params)
    }
}

enum BnCache {
    Train(GhostBnOutput),
    Eval { normalized: Vec<f64>, inv_std: Vec<f64> },
}

struct HiddenCache {
    input: Vec<f64>,
    /// Post-normalization, pre-rectifier activations.
    pre_act: Vec<f64>,
    bn: Option<BnCache>,
}

struct Forward {
    hidden: Vec<HiddenCache>,
    /// Input of the output layer.
    last_input: Vec<f64>,
    logits: Vec<f64>,
    batch_stats: Option<BnStats>,
}

/// Accuracy and loss of a parameter vector on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy plus the L2 term.
    pub loss: f64,
    /// Percent correct.
    pub accuracy: f64,
}

impl MlpModel {
    fn check_batch(&self, params: &[f64], x: &[f64], labels: &[usize]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::DimensionMismatch { expected: self.param_count, actual: params.len() });
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("batch must contain at least one example".into()));
        }
        if x.len() != labels.len() * self.input_dim() {
            return Err(Error::DimensionMismatch { expected: labels.len() * self.input_dim(), actual: x.len() });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.classes()) {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        Ok(())
    }

    fn forward(&self, params: &[f64], x: &[f64], rows: usize, mode: Mode<'_>) -> Result<Forward> {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut act = x.to_vec();
        let mut stats = BnStats { mean: Vec::new(), var: Vec::new() };
        let mut bn_index = 0;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let w = &params[layer.weight..layer.weight + fi * fo];
            let mut z = vec![0.0; rows * fo];
            for (zr, ar) in z.chunks_exact_mut(fo).zip(act.chunks_exact(fi)) {
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot(&w[o * fi..(o + 1) * fi], ar);
                }
            }
            if let Some(b) = layer.bias {
                let bias = &params[b..b + fo];
                for zr in z.chunks_exact_mut(fo) {
                    axpy(1.0, bias, zr);
                }
            }
            if l == last {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Overflow { layer: "output".into(), step: 0 });
                }
                let batch_stats = (bn_index > 0 && matches!(mode, Mode::Train)).then_some(stats);
                return Ok(Forward { hidden, last_input: act, logits: z, batch_stats });
            }
            let (pre_act, bn) = match layer.bn {
                None => (z, None),
                Some(at) => {
                    let (scale, shift) = (&params[at..at + fo], &params[at + fo..at + 2 * fo]);
                    let out = match mode {
                        Mode::Train => {
                            let fwd = ghost_bn_forward(&z, fo, self.config.ghost_batch_size, scale, shift)?;
                            let (m, v) = fwd.batch_stats();
                            stats.mean.push(m);
                            stats.var.push(v);
                            (fwd.output.clone(), BnCache::Train(fwd))
                        }
                        Mode::Eval(running) => {
                            let (m, v) = (&running.mean[bn_index], &running.var[bn_index]);
                            let inv_std: Vec<f64> = v.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                            let mut normalized = z;
                            let mut y = vec![0.0; normalized.len()];
                            for (nr, yr) in normalized.chunks_exact_mut(fo).zip(y.chunks_exact_mut(fo)) {
                                for j in 0..fo {
                                    nr[j] = (nr[j] - m[j]) * inv_std[j];
                                    yr[j] = scale[j] * nr[j] + shift[j];
                                }
                            }
                            (y, BnCache::Eval { normalized, inv_std })
                        }
                    };
                    bn_index += 1;
                    (out.0, Some(out.1))
                }
            };
            if pre_act.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { layer: format!("hidden{}", l + 1), step: 0 });
            }
            let next: Vec<f64> = pre_act.iter().map(|v| v.max(0.0)).collect();
            hidden.push(HiddenCache { input: std::mem::replace(&mut act, next), pre_act, bn });
        }
        unreachable!("the output layer returns")
    }

    /// Mean cross-entropy plus `(l2/2) |params|^2`, and its exact gradient.
    ///
    /// In [`Mode::Train`] hidden layers normalize with ghost-group statistics;
    /// the returned `batch_stats` should be folded into the running averages
    /// with [`BnStats::update`].
    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], labels: &[usize], mode: Mode<'_>) -> Result<LossGrad> {
        self.check_batch(params, x, labels)?;
        let rows = labels.len();
        let fwd = self.forward(params, x, rows, mode)?;
        let k = self.classes();
        let inv_rows = 1.0 / rows as f64;

        let mut d = vec![0.0; rows * k];
        let mut ce = 0.0;
        for ((zr, dr), &y) in fwd.logits.chunks_exact(k).zip(d.chunks_exact_mut(k)).zip(labels) {
            let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (di, z) in dr.iter_mut().zip(zr) {
                *di = (z - m).exp();
                sum += *di;
            }
            ce += m + sum.ln() - zr[y];
            for di in dr.iter_mut() {
                *di *= inv_rows / sum;
            }
            dr[y] -= inv_rows;
        }
        let loss = ce * inv_rows + self.l2_term(params);
        if !loss.is_finite() {
            return Err(Error::Overflow { layer: "loss".into(), step: 0 });
        }

        let mut grad = vec![0.0; self.param_count];
        let last = self.layers.len() - 1;
        // `d` holds dLoss/dz for the linear output z of layer `l`.
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let input: &[f64] = if l == last { &fwd.last_input } else { &fwd.hidden[l].input };
            let gw = &mut grad[layer.weight..layer.weight + fi * fo];
            for (dr, ar) in d.chunks_exact(fo).zip(input.chunks_exact(fi)) {
                for (o, &g) in dr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, ar, &mut gw[o * fi..(o + 1) * fi]);
                    }
                }
            }
            if let Some(b) = layer.bias {
                for dr in d.chunks_exact(fo) {
                    axpy(1.0, dr, &mut grad[b..b + fo]);
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[layer.weight..layer.weight + fi * fo];
            let mut da = vec![0.0; rows * fi];
            for (dr, dar) in d.chunks_exact(fo).zip(da.chunks_exact_mut(fi)) {
                for (o, &g) in dr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, &w[o * fi..(o + 1) * fi], dar);
                    }
                }
            }
            let cache = &fwd.hidden[l - 1];
            for (g, p) in da.iter_mut().zip(&cache.pre_act) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
            let prev = &self.layers[l - 1];
            d = match (&cache.bn, prev.bn) {
                (None, _) => da,
                (Some(bn), Some(at)) => {
                    let f = prev.fan_out;
                    let scale = &params[at..at + f];
                    match bn {
                        BnCache::Train(out) => {
                            let (dx, ds, dsh) = ghost_bn_backward(&da, out, scale);
                            grad[at..at + f].copy_from_slice(&ds);
                            grad[at + f..at + 2 * f].copy_from_slice(&dsh);
                            dx
                        }
                        BnCache::Eval { normalized, inv_std } => {
                            for (dr, nr) in da.chunks_exact_mut(f).zip(normalized.chunks_exact(f)) {
                                for j in 0..f {
                                    grad[at + j] += dr[j] * nr[j];
                                    grad[at + f + j] += dr[j];
                                    dr[j] *= scale[j] * inv_std[j];
                                }
                            }
                            da
                        }
                    }
                }
                (Some(_), None) => unreachable!("BN cache only on normalized layers"),
            };
        }
        axpy(self.config.l2_coeff, params, &mut grad);
        Ok(LossGrad { loss, grad: Vector::new(grad)?, batch_stats: fwd.batch_stats })
    }

    /// Loss value only (no gradient).
    pub fn loss(&self, params: &[f64], x: &[f64], labels: &[usize], mode: Mode<'_>) -> Result<f64> {
        self.loss_and_grad(params, x, labels, mode).map(|lg| lg.loss)
    }

    /// Eval-mode loss and accuracy over a whole split, in chunks.
    pub fn evaluate(&self, params: &[f64], bn: &BnStats, x: &[f64], labels: &[usize]) -> Result<Evaluation> {
        const CHUNK: usize = 1024;
        let d = self.input_dim();
        let k = self.classes();
        if labels.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
        }
        let mut ce = 0.0;
        let mut correct = 0usize;
        for (xc, yc) in x.chunks(CHUNK * d).zip(labels.chunks(CHUNK)) {
            self.check_batch(params, xc, yc)?;
            let fwd = self.forward(params, xc, yc.len(), Mode::Eval(bn))?;
            for (zr, &y) in fwd.logits.chunks_exact(k).zip(yc) {
                let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + zr.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                ce += lse - zr[y];
                if argmax(zr) == y {
                    correct += 1;
                }
            }
        }
        let n = labels.len() as f64;
        Ok(Evaluation { loss: ce / n + self.l2_term(params), accuracy: 100.0 * correct as f64 / n })
    }
}

/// An MLP bound to its training data and BN running statistics, exposing
/// eval-mode per-example gradients.
#[derive(Debug, Clone)]
pub struct MlpTask<'a> {
    pub model: &'a MlpModel,
    pub data: &'a SyntheticDataset,
    pub bn: BnStats,
}

impl LossModel for MlpTask<'_> {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn num_examples(&self) -> usize {
        self.data.n_train()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        self.model
            .evaluate(params, &self.bn, &self.data.train_x, &self.data.train_y)
            .map(|e| e.loss)
            .unwrap_or(f64::NAN)
    }

    fn example_grad(&self, index: usize, params: &[f64]) -> Vector {
        let x = self.data.train_row(index);
        let y = [self.data.train_y[index]];
        let mut g = self
            .model
            .loss_and_grad(params, x, &y, Mode::Eval(&self.bn))
            .map(|lg| lg.grad)
            .unwrap_or_else(|_| Vector::zeros(params.len()));
        // per-example loss excludes the shared L2 term
        g.axpy(-self.model.config.l2_coeff, params);
        g
    }
}
