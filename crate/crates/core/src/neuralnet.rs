//! Feed-forward beam recommenders with three output-head structures.
//!
//! All heads share the same trunk: six context features, `n_hidden` tanh
//! layers of equal width with inverted dropout at train time. The heads
//! differ only in how the output layer is split into softmax groups:
//!
//! * `St`  one softmax over all `N_AP * N_UT` beam pairs.
//! * `Mt`  an AP softmax and a UT softmax, combined as `o = o^t ⊗ o^r`.
//! * `Emt` horizontal and vertical softmaxes at both ends, combined as
//!   `o^t = o^{tE} ⊗ o^{tA}`, `o^r = o^{rE} ⊗ o^{rA}`, then `o^t ⊗ o^r`.
//!
//! Cross entropy against an M-hot label splits over the factored groups into
//! cross entropies against the label marginals, so the factored heads train
//! on marginal targets directly.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::channel::{ArrayDims, GridBounds};
use crate::codebook::{PairIndex, PairLayout};
use crate::dataset::{LabelMatrix, Sample};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::{self, salt, SimRng};

pub const INPUT_WIDTH: usize = 6;
const LOG_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    St,
    Mt,
    Emt,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::St, HeadKind::Mt, HeadKind::Emt];

    /// Softmax group sizes, in output-neuron order.
    pub fn group_sizes(&self, ap: ArrayDims, ut: ArrayDims) -> Vec<usize> {
        match self {
            HeadKind::St => vec![ap.len() * ut.len()],
            HeadKind::Mt => vec![ap.len(), ut.len()],
            HeadKind::Emt => vec![ap.n_h, ap.n_v, ut.n_h, ut.n_v],
        }
    }

    pub fn output_width(&self, ap: ArrayDims, ut: ArrayDims) -> usize {
        self.group_sizes(ap, ut).iter().sum()
    }

    pub fn label(&self) -> &'static str {
        match self {
            HeadKind::St => "DNN-ST",
            HeadKind::Mt => "DNN-MT",
            HeadKind::Emt => "DNN-EMT",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "st" | "dnn-st" => Ok(HeadKind::St),
            "mt" | "dnn-mt" => Ok(HeadKind::Mt),
            "emt" | "dnn-emt" => Ok(HeadKind::Emt),
            other => Err(Error::arg(format!("unknown head '{other}' (expected st, mt or emt)"))),
        }
    }
}

/// Maps positions to `[-1, 1]` over the user grid and angles to `angle / pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub center: [f64; INPUT_WIDTH],
    pub half_range: [f64; INPUT_WIDTH],
}

impl FeatureScaler {
    pub fn from_grid(grid: &GridBounds) -> Self {
        let mut center = [0.0; INPUT_WIDTH];
        let mut half_range = [std::f64::consts::PI; INPUT_WIDTH];
        for k in 0..3 {
            center[k] = 0.5 * (grid.min[k] + grid.max[k]);
            let h = 0.5 * (grid.max[k] - grid.min[k]);
            half_range[k] = if h > 0.0 { h } else { 1.0 };
        }
        Self { center, half_range }
    }

    pub fn identity() -> Self {
        Self { center: [0.0; INPUT_WIDTH], half_range: [1.0; INPUT_WIDTH] }
    }

    pub fn scale(&self, raw: &[f64; INPUT_WIDTH]) -> [f64; INPUT_WIDTH] {
        std::array::from_fn(|k| (raw[k] - self.center[k]) / self.half_range[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Array2::zeros((n_out, n_in)), b: Array1::zeros(n_out) }
    }

    fn zeros_like(other: &Dense) -> Self {
        Self { w: Array2::zeros(other.w.dim()), b: Array1::zeros(other.b.len()) }
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Per-layer gradients (or optimizer moments), shaped like the model layers.
pub type Gradients = Vec<Dense>;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub head: HeadKind,
    pub ap: ArrayDims,
    pub ut: ArrayDims,
    pub scaler: FeatureScaler,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
}

/// Softmax group outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub head: HeadKind,
    pub groups: Vec<Array1<f64>>,
}

impl MlpModel {
    /// All-zero weights.
    pub fn zeros(head: HeadKind, ap: ArrayDims, ut: ArrayDims, n_hidden: usize, width: usize, scaler: FeatureScaler) -> Self {
        let mut layers = Vec::with_capacity(n_hidden + 1);
        let mut n_in = INPUT_WIDTH;
        for _ in 0..n_hidden {
            layers.push(Dense::zeros(n_in, width));
            n_in = width;
        }
        layers.push(Dense::zeros(n_in, head.output_width(ap, ut)));
        Self { head, ap, ut, scaler, layers }
    }

    /// Glorot-uniform weights `U(-sqrt(6 / (fan_in + fan_out)), +...)`, zero biases.
    pub fn new<R: Rng + ?Sized>(
        head: HeadKind,
        ap: ArrayDims,
        ut: ArrayDims,
        n_hidden: usize,
        width: usize,
        scaler: FeatureScaler,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(head, ap, ut, n_hidden, width, scaler);
        for layer in &mut model.layers {
            let (fan_out, fan_in) = layer.w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        model
    }

    pub fn layout(&self) -> PairLayout {
        PairLayout { n_ap: self.ap.len(), n_ut: self.ut.len() }
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.head.group_sizes(self.ap, self.ut)
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn output_layer_params(&self) -> usize {
        self.layers.last().map_or(0, Dense::n_params)
    }

    fn check_finite(x: &[f64]) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::arg("non-finite input feature"))
        }
    }

    /// Inference on already-scaled features.
    pub fn forward(&self, x: &[f64; INPUT_WIDTH]) -> Result<HeadOutput> {
        Self::check_finite(x)?;
        let batch = Array2::from_shape_vec((1, INPUT_WIDTH), x.to_vec()).expect("shape");
        let probs = self.forward_batch(batch.view(), None).probs;
        Ok(self.split_groups(probs.row(0)))
    }

    /// Forward pass in training mode: hidden units dropped with probability
    /// `rate`, survivors scaled by `1 / (1 - rate)`.
    pub fn forward_train<R: Rng>(&self, x: &[f64; INPUT_WIDTH], rate: f64, rng: &mut R) -> Result<HeadOutput> {
        Self::check_finite(x)?;
        let batch = Array2::from_shape_vec((1, INPUT_WIDTH), x.to_vec()).expect("shape");
        let probs = self.forward_batch(batch.view(), Some((rate, rng as &mut dyn rand::RngCore))).probs;
        Ok(self.split_groups(probs.row(0)))
    }

    fn split_groups(&self, row: ArrayView1<f64>) -> HeadOutput {
        let mut groups = Vec::new();
        let mut start = 0;
        for n in self.group_sizes() {
            groups.push(row.slice(s![start..start + n]).to_owned());
            start += n;
        }
        HeadOutput { head: self.head, groups }
    }

    fn forward_batch(&self, x: ArrayView2<f64>, mut dropout: Option<(f64, &mut dyn rand::RngCore)>) -> ForwardCache {
        let mut hidden = Vec::with_capacity(self.n_hidden());
        let mut masks = Vec::with_capacity(self.n_hidden());
        let mut a = x.to_owned();
        for layer in &self.layers[..self.n_hidden()] {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(f64::tanh);
            let out = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - *rate);
                    let mask = z.mapv(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep });
                    let out = &z * &mask;
                    masks.push(Some(mask));
                    out
                }
                _ => {
                    masks.push(None);
                    z.clone()
                }
            };
            hidden.push(z);
            a = out;
        }
        let last = self.layers.last().expect("output layer");
        let mut logits = a.dot(&last.w.t());
        logits += &last.b;
        let sizes = self.group_sizes();
        for mut row in logits.rows_mut() {
            let mut start = 0;
            for &n in &sizes {
                let mut g = row.slice_mut(s![start..start + n]);
                let mx = g.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                g.mapv_inplace(|v| (v - mx).exp());
                let sum = g.sum();
                g.mapv_inplace(|v| v / sum);
                start += n;
            }
        }
        ForwardCache { input: x.to_owned(), hidden, masks, probs: logits }
    }

    /// Summed cross-entropy loss and its gradient over a batch of scaled
    /// inputs. Targets are the label marginals for each softmax group,
    /// normalized by the label order so each group's target sums to one.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> (f64, Gradients) {
        let cache = self.forward_batch(inputs, dropout);
        let loss: f64 = Zip::from(&cache.probs)
            .and(&targets)
            .fold(0.0, |acc, &p, &t| if t > 0.0 { acc - t * p.max(LOG_FLOOR).ln() } else { acc });
        // Softmax + cross entropy: d loss / d logits = o - t per group when
        // each group's targets sum to one.
        let delta = &cache.probs - &targets;
        (loss, self.backward(&cache, delta))
    }

    fn backward(&self, cache: &ForwardCache, mut delta: Array2<f64>) -> Gradients {
        let n = self.layers.len();
        let mut grads: Gradients = self.layers.iter().map(Dense::zeros_like).collect();
        for l in (0..n).rev() {
            let prev = if l == 0 {
                cache.input.clone()
            } else {
                match &cache.masks[l - 1] {
                    Some(mask) => &cache.hidden[l - 1] * mask,
                    None => cache.hidden[l - 1].clone(),
                }
            };
            grads[l].w = delta.t().dot(&prev);
            grads[l].b = delta.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut d_prev = delta.dot(&self.layers[l].w);
            if let Some(mask) = &cache.masks[l - 1] {
                d_prev *= mask;
            }
            Zip::from(&mut d_prev).and(&cache.hidden[l - 1]).for_each(|d, &h| *d *= 1.0 - h * h);
            delta = d_prev;
        }
        grads
    }

    /// Combined beam-pair probabilities for a batch of raw poses,
    /// `(batch, N_AP * N_UT)`.
    pub fn predict_pairs(&self, poses: &[Pose]) -> Result<Array2<f64>> {
        let x = self.scaled_inputs(poses.iter().map(|p| p.features()))?;
        let probs = self.forward_batch(x.view(), None).probs;
        let mut out = Array2::zeros((poses.len(), self.layout().len()));
        for (row, mut dst) in probs.rows().into_iter().zip(out.rows_mut()) {
            dst.assign(&combine_heads(&self.split_groups(row), self.ap, self.ut));
        }
        Ok(out)
    }

    pub fn scaled_inputs(&self, raw: impl Iterator<Item = [f64; INPUT_WIDTH]>) -> Result<Array2<f64>> {
        let rows: Vec<f64> = raw.flat_map(|f| self.scaler.scale(&f)).collect();
        Self::check_finite(&rows)?;
        Ok(Array2::from_shape_vec((rows.len() / INPUT_WIDTH, INPUT_WIDTH), rows).expect("shape"))
    }

    /// The `n_b` most probable beam pairs for a raw pose.
    pub fn recommend(&self, pose: &Pose, n_b: usize) -> Result<CandidateList> {
        let o = self.predict_pairs(std::slice::from_ref(pose))?;
        top_candidates(o.row(0).as_slice().expect("contiguous"), n_b)
    }
}

struct ForwardCache {
    input: Array2<f64>,
    /// tanh outputs before dropout.
    hidden: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    probs: Array2<f64>,
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)))
}

/// Beam-pair probabilities `o[i * N_UT + j]` from the head's softmax groups.
pub fn combine_heads(out: &HeadOutput, ap: ArrayDims, ut: ArrayDims) -> Array1<f64> {
    let g = &out.groups;
    match out.head {
        HeadKind::St => g[0].clone(),
        HeadKind::Mt => kron(&g[0], &g[1]),
        HeadKind::Emt => {
            debug_assert_eq!((g[0].len(), g[1].len(), g[2].len(), g[3].len()), (ap.n_h, ap.n_v, ut.n_h, ut.n_v));
            let o_t = kron(&g[1], &g[0]);
            let o_r = kron(&g[3], &g[2]);
            kron(&o_t, &o_r)
        }
    }
}

/// Label marginals per softmax group (unnormalized counts).
pub fn label_marginals(label: &LabelMatrix, head: HeadKind, ap: ArrayDims, ut: ArrayDims) -> Vec<Array1<f64>> {
    let layout = label.layout();
    let mut groups: Vec<Array1<f64>> = head.group_sizes(ap, ut).into_iter().map(Array1::zeros).collect();
    for &k in label.ranked() {
        let k = k as usize;
        let (i, j) = layout.split(k);
        match head {
            HeadKind::St => groups[0][k] += 1.0,
            HeadKind::Mt => {
                groups[0][i] += 1.0;
                groups[1][j] += 1.0;
            }
            HeadKind::Emt => {
                groups[0][i % ap.n_h] += 1.0;
                groups[1][i / ap.n_h] += 1.0;
                groups[2][j % ut.n_h] += 1.0;
                groups[3][j / ut.n_h] += 1.0;
            }
        }
    }
    groups
}

/// `-sum L_ij log o_ij` over a combined probability vector.
pub fn joint_cross_entropy(o: &[f64], label: &LabelMatrix) -> f64 {
    label.ranked().iter().map(|&k| -o[k as usize].max(LOG_FLOOR).ln()).sum()
}

/// Sum over softmax groups of `-sum l_g log o_g` with the label marginals
/// `l_g`.
pub fn branch_cross_entropy(out: &HeadOutput, label: &LabelMatrix, ap: ArrayDims, ut: ArrayDims) -> f64 {
    let marginals = label_marginals(label, out.head, ap, ut);
    out.groups
        .iter()
        .zip(&marginals)
        .map(|(o, l)| o.iter().zip(l).filter(|(_, &t)| t > 0.0).map(|(&p, &t)| -t * p.max(LOG_FLOOR).ln()).sum::<f64>())
        .sum()
}

/// Beam-pair indices ranked by descending probability, ties toward smaller
/// indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList(Vec<PairIndex>);

impl CandidateList {
    pub fn new(indices: Vec<PairIndex>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::arg("candidate list must not be empty"));
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[PairIndex] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prefix(&self, n: usize) -> CandidateList {
        CandidateList(self.0[..n.min(self.0.len())].to_vec())
    }
}

pub fn top_candidates(o: &[f64], n_b: usize) -> Result<CandidateList> {
    if n_b == 0 || n_b > o.len() {
        return Err(Error::arg(format!("n_b = {n_b} outside 1..={}", o.len())));
    }
    let mut idx: Vec<usize> = (0..o.len()).collect();
    let cmp = |a: &usize, b: &usize| o[*b].total_cmp(&o[*a]).then(a.cmp(b));
    if n_b < idx.len() {
        idx.select_nth_unstable_by(n_b - 1, cmp);
        idx.truncate(n_b);
    }
    idx.sort_unstable_by(cmp);
    CandidateList::new(idx)
}

/// First- and second-moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Gradients = model.layers.iter().map(Dense::zeros_like).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != model.layers.len() || state.m.len() != model.layers.len() {
        return Err(Error::Dimension("gradient/optimizer state does not match model".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
    };
    for (l, layer) in model.layers.iter_mut().enumerate() {
        if layer.w.dim() != grads[l].w.dim() || layer.b.len() != grads[l].b.len() {
            return Err(Error::Dimension(format!("layer {l} gradient shape mismatch")));
        }
        Zip::from(&mut layer.w).and(&grads[l].w).and(&mut state.m[l].w).and(&mut state.v[l].w).for_each(update);
        Zip::from(&mut layer.b).and(&grads[l].b).and(&mut state.m[l].b).and(&mut state.v[l].b).for_each(update);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_start: usize,
    pub batch_max: usize,
    /// Epochs between batch-size doublings; `None` means `ceil(epochs / 9)`.
    pub doubling_every: Option<usize>,
    pub learning_rate: f64,
    pub dropout: f64,
    pub n_hidden: usize,
    pub width: usize,
    /// Relabel training samples to this order before training.
    pub label_order: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_start: 32,
            batch_max: 8192,
            doubling_every: None,
            learning_rate: 1e-3,
            dropout: 0.1,
            n_hidden: 5,
            width: 128,
            label_order: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_start == 0 || self.batch_max < self.batch_start || self.width == 0 {
            return Err(Error::config("epochs, batch sizes and width must be positive with batch_max >= batch_start"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    /// Minibatch size used in (zero-based) `epoch` for a training set of `n`.
    pub fn batch_size(&self, epoch: usize, n: usize) -> usize {
        let every = self.doubling_every.unwrap_or(self.epochs.div_ceil(9)).max(1);
        let doublings = (epoch / every).min(40) as u32;
        let size = self.batch_start.saturating_mul(1usize << doublings);
        size.min(self.batch_max).min(n).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Dense training targets, `(n, output_width)`, each group summing to one.
pub fn training_targets(labels: &[&LabelMatrix], head: HeadKind, ap: ArrayDims, ut: ArrayDims) -> Array2<f64> {
    let width = head.output_width(ap, ut);
    let mut out = Array2::zeros((labels.len(), width));
    for (mut row, label) in out.rows_mut().into_iter().zip(labels) {
        let m = label.m() as f64;
        let flat: Vec<f64> = label_marginals(label, head, ap, ut).into_iter().flatten().collect();
        for (dst, v) in row.iter_mut().zip(flat) {
            *dst = v / m;
        }
    }
    out
}

/// Train with Adam on minibatches whose size doubles on a fixed epoch
/// schedule. Deterministic given `cfg.seed`.
pub fn train(model: &mut MlpModel, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let relabeled: Vec<LabelMatrix>;
    let labels: Vec<&LabelMatrix> = match cfg.label_order {
        Some(m) if samples.iter().any(|s| s.label.m() != m) => {
            relabeled = samples.iter().map(|s| s.recompute_label(m)).collect::<Result<_>>()?;
            relabeled.iter().collect()
        }
        _ => samples.iter().map(|s| &s.label).collect(),
    };
    if labels.iter().any(|l| l.layout() != model.layout()) {
        return Err(Error::Dimension("label shape does not match model arrays".into()));
    }
    let x = model.scaled_inputs(samples.iter().map(|s| s.pose.features()))?;
    let t = training_targets(&labels, model.head, model.ap, model.ut);
    let n = samples.len();
    let mut state = AdamState::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[salt::SHUFFLE, epoch as u64]));
        let mut drop_rng: SimRng = rng::stream(cfg.seed, &[salt::DROPOUT, epoch as u64]);
        let bs = cfg.batch_size(epoch, n);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let xb = x.select(Axis(0), chunk);
            let tb = t.select(Axis(0), chunk);
            let (loss, mut grads) = model.loss_and_gradients(xb.view(), tb.view(), Some((cfg.dropout, &mut drop_rng)));
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.w *= scale;
                g.b *= scale;
            }
            adam_step(model, &grads, &mut state, cfg.learning_rate)?;
            total += loss;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("mean loss {mean} with batch size {bs}") });
        }
        log::debug!("epoch {epoch}: batch {bs}, loss {mean:.5}");
        history.push(mean);
    }
    Ok(TrainReport { loss_history: history })
}

pub const MODEL_MAGIC: &[u8; 5] = b"BSNN1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    head: HeadKind,
    ap: ArrayDims,
    ut: ArrayDims,
    scaler: FeatureScaler,
    /// `(out, in)` per layer.
    layer_shapes: Vec<[usize; 2]>,
}

pub fn write_model<W: Write>(model: &MlpModel, mut w: W) -> Result<()> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        head: model.head,
        ap: model.ap,
        ut: model.ut,
        scaler: model.scaler,
        layer_shapes: model.layers.iter().map(|l| [l.w.nrows(), l.w.ncols()]).collect(),
    };
    let bytes = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    for layer in &model.layers {
        for v in layer.w.iter().chain(layer.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<MlpModel> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format("not a model file (bad magic)"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    let header: ModelHeader = serde_json::from_slice(&bytes).map_err(|e| Error::format(e.to_string()))?;
    if header.version != MODEL_VERSION {
        return Err(Error::format(format!("unsupported model version {}", header.version)));
    }
    let shapes = &header.layer_shapes;
    let out_width = header.head.output_width(header.ap, header.ut);
    let chained = shapes.windows(2).all(|w| w[0][0] == w[1][1]);
    if shapes.len() < 2 || shapes[0][1] != INPUT_WIDTH || shapes.last().unwrap()[0] != out_width || !chained {
        return Err(Error::Dimension("model layer shapes inconsistent with head and arrays".into()));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    let mut buf = [0u8; 8];
    for &[n_out, n_in] in shapes {
        let mut vals = Vec::with_capacity(n_out * n_in + n_out);
        for _ in 0..n_out * n_in + n_out {
            r.read_exact(&mut buf).map_err(|_| Error::format("truncated model weights"))?;
            vals.push(f64::from_le_bytes(buf));
        }
        let b = Array1::from(vals.split_off(n_out * n_in));
        let w = Array2::from_shape_vec((n_out, n_in), vals).expect("shape");
        layers.push(Dense { w, b });
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::format("trailing bytes after model weights"));
    }
    Ok(MlpModel { head: header.head, ap: header.ap, ut: header.ut, scaler: header.scaler, layers })
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

/// Load a model and check it was built for the given arrays.
pub fn load_model(path: &Path, ap: ArrayDims, ut: ArrayDims) -> Result<MlpModel> {
    let model = read_model(BufReader::new(File::open(path)?))?;
    if model.ap != ap || model.ut != ut {
        return Err(Error::Dimension(format!(
            "model built for {:?}/{:?}, expected {:?}/{:?}",
            model.ap, model.ut, ap, ut
        )));
    }
    Ok(model)
}
