//! The observer network: a residual convolutional trunk shared by target,
//! next-action, next-state and (for [`Variant::Beliefs`]) belief heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, INPUT_LEN, PLANES};
use crate::error::{Error, Result};
use crate::gridworld::{Action, Position, CELLS, GRID};
use crate::neural::layers::{BatchNorm, Conv2d, GlobalAvgPool, LeakyRelu, Linear};
use crate::neural::{
    cross_entropy, kl_divergence, Adam, Checkpoint, Mode, NamedArray, OptimizerState, ParamMut, ParamRef, Real,
    Tensor,
};
use crate::seed;

pub const TRUNK_CHANNELS: usize = 32;
const HEAD_CHANNELS: usize = 16;
const PATH_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Beliefs,
    NoBeliefs,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Beliefs, Variant::NoBeliefs];

    pub fn descriptor(self) -> &'static str {
        match self {
            Variant::Beliefs => "beliefs-v1",
            Variant::NoBeliefs => "nobeliefs-v1",
        }
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.descriptor() == s)
            .ok_or_else(|| Error::format("checkpoint", format!("unknown architecture `{s}`")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Beliefs => "beliefs",
            Variant::NoBeliefs => "nobeliefs",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beliefs" => Ok(Variant::Beliefs),
            "nobeliefs" => Ok(Variant::NoBeliefs),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture `{s}` (expected beliefs or nobeliefs)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub target: f64,
    pub action: f64,
    pub state: f64,
    pub belief: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            target: 1.0,
            action: 1.0,
            state: 1.0,
            belief: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        let ws = [self.target, self.action, self.state, self.belief];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be non-negative: {self:?}")));
        }
        let active = match variant {
            Variant::Beliefs => &ws[..],
            Variant::NoBeliefs => &ws[..3],
        };
        if active.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("all loss weights are zero".into()));
        }
        Ok(())
    }
}

/// Raw logits for a batch of `n` samples, row-major per head.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions<T = f32> {
    pub n: usize,
    pub target: Vec<T>,
    pub action: Vec<T>,
    pub state: Vec<T>,
    pub belief: Option<Vec<T>>,
}

impl<T: Real> Predictions<T> {
    pub fn target_row(&self, i: usize) -> &[T] {
        &self.target[i * CELLS..(i + 1) * CELLS]
    }

    pub fn action_row(&self, i: usize) -> &[T] {
        &self.action[i * Action::COUNT..(i + 1) * Action::COUNT]
    }

    pub fn state_row(&self, i: usize) -> &[T] {
        &self.state[i * CELLS..(i + 1) * CELLS]
    }

    pub fn belief_row(&self, i: usize) -> Option<&[T]> {
        self.belief.as_ref().map(|b| &b[i * CELLS..(i + 1) * CELLS])
    }
}

/// Supervision for a batch; `belief` is `n × 121` and ignored by
/// NoBeliefs models.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchLabels {
    pub target: Vec<usize>,
    pub action: Vec<usize>,
    pub state: Vec<usize>,
    pub belief: Vec<f32>,
}

impl BatchLabels {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub target: f64,
    pub action: f64,
    pub state: f64,
    pub belief: Option<f64>,
}

/// Loss gradients with respect to each head's logits.
#[derive(Clone, Debug)]
pub struct HeadGrads<T> {
    pub target: Vec<T>,
    pub action: Vec<T>,
    pub state: Vec<T>,
    pub belief: Option<Vec<T>>,
}

/// Weighted sum of the per-head losses and its logit gradients.
pub fn multihead_loss<T: Real>(
    pred: &Predictions<T>,
    labels: &BatchLabels,
    w: &LossWeights,
) -> Result<(LossBreakdown, HeadGrads<T>)> {
    let n = pred.n;
    if labels.len() != n || labels.action.len() != n || labels.state.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} predictions, {} labels", labels.len())));
    }
    let scale = |g: Vec<T>, w: f64| -> Vec<T> {
        let w = T::of(w);
        g.into_iter().map(|v| v * w).collect()
    };
    let (lt, gt) = cross_entropy(&pred.target, CELLS, &labels.target);
    let (la, ga) = cross_entropy(&pred.action, Action::COUNT, &labels.action);
    let (ls, gs) = cross_entropy(&pred.state, CELLS, &labels.state);
    let mut loss = LossBreakdown {
        total: w.target * lt + w.action * la + w.state * ls,
        target: lt,
        action: la,
        state: ls,
        belief: None,
    };
    let belief = match &pred.belief {
        Some(logits) => {
            if labels.belief.len() != n * CELLS {
                return Err(Error::ShapeMismatch(format!(
                    "belief labels have {} values for {n} samples",
                    labels.belief.len()
                )));
            }
            let (lb, gb) = kl_divergence(logits, CELLS, &labels.belief);
            loss.total += w.belief * lb;
            loss.belief = Some(lb);
            Some(scale(gb, w.belief))
        }
        None => None,
    };
    let grads = HeadGrads {
        target: scale(gt, w.target),
        action: scale(ga, w.action),
        state: scale(gs, w.state),
        belief,
    };
    Ok((loss, grads))
}

/// Index into `objects` of the highest target logit among the four object
/// cells; equal logits go to the lowest cell index.
pub fn predict_target<T: Real>(target_logits: &[T], objects: &[Position; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        let (a, b) = (target_logits[objects[i].index()], target_logits[objects[best].index()]);
        if a > b || (a == b && objects[i].index() < objects[best].index()) {
            best = i;
        }
    }
    best
}

/// Unrestricted argmax over all 121 cells, lowest index on ties.
pub fn argmax<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct ResBlock<T> {
    conv_a: Conv2d<T>,
    bn_a: BatchNorm<T>,
    act_a: LeakyRelu<T>,
    conv_b: Conv2d<T>,
    bn_b: BatchNorm<T>,
    act_out: LeakyRelu<T>,
}

impl<T: Real> ResBlock<T> {
    fn new(rng: &mut seed::Rng) -> Self {
        ResBlock {
            conv_a: Conv2d::new(TRUNK_CHANNELS, TRUNK_CHANNELS, 3, rng),
            bn_a: BatchNorm::new(TRUNK_CHANNELS),
            act_a: LeakyRelu::new(),
            conv_b: Conv2d::new(TRUNK_CHANNELS, TRUNK_CHANNELS, 3, rng),
            bn_b: BatchNorm::new(TRUNK_CHANNELS),
            act_out: LeakyRelu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.conv_a.forward(x)?;
        let a = self.act_a.forward(&self.bn_a.forward(&a, mode)?);
        let b = self.bn_b.forward(&self.conv_b.forward(&a)?, mode)?;
        Ok(self.act_out.forward(&b.add(x)?))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let ds = self.act_out.backward(dy);
        let da = self.conv_b.backward(&self.bn_b.backward(&ds));
        let dx = self.conv_a.backward(&self.bn_a.backward(&self.act_a.backward(&da)));
        dx.add(&ds).expect("skip shape")
    }

    fn params_mut<'a>(&'a mut self, p: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.conv_a.params_mut(&format!("{p}.conv_a"), out);
        self.bn_a.params_mut(&format!("{p}.bn_a"), out);
        self.conv_b.params_mut(&format!("{p}.conv_b"), out);
        self.bn_b.params_mut(&format!("{p}.bn_b"), out);
    }

    fn params<'a>(&'a self, p: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.conv_a.params(&format!("{p}.conv_a"), out);
        self.bn_a.params(&format!("{p}.bn_a"), out);
        self.conv_b.params(&format!("{p}.conv_b"), out);
        self.bn_b.params(&format!("{p}.bn_b"), out);
    }

    fn buffers_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        self.bn_a.buffers_mut(&format!("{p}.bn_a"), out);
        self.bn_b.buffers_mut(&format!("{p}.bn_b"), out);
    }

    fn buffers<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a [T])>) {
        self.bn_a.buffers(&format!("{p}.bn_a"), out);
        self.bn_b.buffers(&format!("{p}.bn_b"), out);
    }
}

#[derive(Clone, Debug)]
struct Trunk<T> {
    conv_in: Conv2d<T>,
    bn_in: BatchNorm<T>,
    act_in: LeakyRelu<T>,
    blocks: [ResBlock<T>; 2],
}

impl<T: Real> Trunk<T> {
    fn new(rng: &mut seed::Rng) -> Self {
        Trunk {
            conv_in: Conv2d::new(PLANES, TRUNK_CHANNELS, 3, rng),
            bn_in: BatchNorm::new(TRUNK_CHANNELS),
            act_in: LeakyRelu::new(),
            blocks: [ResBlock::new(rng), ResBlock::new(rng)],
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.conv_in.forward(x)?;
        h = self.act_in.forward(&self.bn_in.forward(&h, mode)?);
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>) {
        let mut d = dy.clone();
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        self.conv_in.backward(&self.bn_in.backward(&self.act_in.backward(&d)));
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamMut<'a, T>>) {
        self.conv_in.params_mut("trunk.conv_in", out);
        self.bn_in.params_mut("trunk.bn_in", out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("trunk.block{i}"), out);
        }
    }

    fn params<'a>(&'a self, out: &mut Vec<ParamRef<'a, T>>) {
        self.conv_in.params("trunk.conv_in", out);
        self.bn_in.params("trunk.bn_in", out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("trunk.block{i}"), out);
        }
    }

    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        self.bn_in.buffers_mut("trunk.bn_in", out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.buffers_mut(&format!("trunk.block{i}"), out);
        }
    }

    fn buffers<'a>(&'a self, out: &mut Vec<(String, &'a [T])>) {
        self.bn_in.buffers("trunk.bn_in", out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.buffers(&format!("trunk.block{i}"), out);
        }
    }
}

/// conv32 → conv16, then the sum of a fully connected map to 121 logits and
/// a conv4 → conv1 (1×1) map read as 121 logits.
#[derive(Clone, Debug)]
struct SpatialHead<T> {
    name: &'static str,
    conv1: Conv2d<T>,
    act1: LeakyRelu<T>,
    conv2: Conv2d<T>,
    act2: LeakyRelu<T>,
    fc: Linear<T>,
    conv3: Conv2d<T>,
    act3: LeakyRelu<T>,
    conv4: Conv2d<T>,
}

impl<T: Real> SpatialHead<T> {
    fn new(name: &'static str, rng: &mut seed::Rng) -> Self {
        SpatialHead {
            name,
            conv1: Conv2d::new(TRUNK_CHANNELS, TRUNK_CHANNELS, 3, rng),
            act1: LeakyRelu::new(),
            conv2: Conv2d::new(TRUNK_CHANNELS, HEAD_CHANNELS, 3, rng),
            act2: LeakyRelu::new(),
            fc: Linear::new(CELLS * HEAD_CHANNELS, CELLS, rng),
            conv3: Conv2d::new(HEAD_CHANNELS, PATH_CHANNELS, 3, rng),
            act3: LeakyRelu::new(),
            conv4: Conv2d::new(PATH_CHANNELS, 1, 1, rng),
        }
    }

    fn forward(&mut self, h: &Tensor<T>) -> Result<Vec<T>> {
        let a1 = self.act1.forward(&self.conv1.forward(h)?);
        let a2 = self.act2.forward(&self.conv2.forward(&a1)?);
        let dense = self.fc.forward(&a2)?;
        let conv = self.conv4.forward(&self.act3.forward(&self.conv3.forward(&a2)?))?;
        Ok(dense.values().iter().zip(conv.values()).map(|(&a, &b)| a + b).collect())
    }

    fn backward(&mut self, dlogits: &[T]) -> Tensor<T> {
        let n = dlogits.len() / CELLS;
        let d_dense = Tensor::new(&[n, CELLS], dlogits.to_vec()).expect("logit shape");
        let d_conv = Tensor::new(&[n, GRID, GRID, 1], dlogits.to_vec()).expect("logit shape");
        let from_fc = self.fc.backward(&d_dense);
        let from_conv = self.conv3.backward(&self.act3.backward(&self.conv4.backward(&d_conv)));
        let d2 = from_fc.add(&from_conv).expect("head shape");
        let d1 = self.conv2.backward(&self.act2.backward(&d2));
        self.conv1.backward(&self.act1.backward(&d1))
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamMut<'a, T>>) {
        let p = self.name;
        self.conv1.params_mut(&format!("{p}.conv1"), out);
        self.conv2.params_mut(&format!("{p}.conv2"), out);
        self.fc.params_mut(&format!("{p}.fc"), out);
        self.conv3.params_mut(&format!("{p}.conv3"), out);
        self.conv4.params_mut(&format!("{p}.conv4"), out);
    }

    fn params<'a>(&'a self, out: &mut Vec<ParamRef<'a, T>>) {
        let p = self.name;
        self.conv1.params(&format!("{p}.conv1"), out);
        self.conv2.params(&format!("{p}.conv2"), out);
        self.fc.params(&format!("{p}.fc"), out);
        self.conv3.params(&format!("{p}.conv3"), out);
        self.conv4.params(&format!("{p}.conv4"), out);
    }
}

/// conv32 → global average pool → FC 32 → FC 9.
#[derive(Clone, Debug)]
struct ActionHead<T> {
    conv: Conv2d<T>,
    act: LeakyRelu<T>,
    pool: GlobalAvgPool,
    fc1: Linear<T>,
    act1: LeakyRelu<T>,
    fc2: Linear<T>,
}

impl<T: Real> ActionHead<T> {
    fn new(rng: &mut seed::Rng) -> Self {
        ActionHead {
            conv: Conv2d::new(TRUNK_CHANNELS, TRUNK_CHANNELS, 3, rng),
            act: LeakyRelu::new(),
            pool: GlobalAvgPool::new(),
            fc1: Linear::new(TRUNK_CHANNELS, TRUNK_CHANNELS, rng),
            act1: LeakyRelu::new(),
            fc2: Linear::new(TRUNK_CHANNELS, Action::COUNT, rng),
        }
    }

    fn forward(&mut self, h: &Tensor<T>) -> Result<Vec<T>> {
        let a = self.act.forward(&self.conv.forward(h)?);
        let p = self.pool.forward(&a)?;
        let f = self.act1.forward(&self.fc1.forward(&p)?);
        Ok(self.fc2.forward(&f)?.into_values())
    }

    fn backward(&mut self, dlogits: &[T]) -> Tensor<T> {
        let n = dlogits.len() / Action::COUNT;
        let d = Tensor::new(&[n, Action::COUNT], dlogits.to_vec()).expect("logit shape");
        let d = self.fc1.backward(&self.act1.backward(&self.fc2.backward(&d)));
        let d = self.pool.backward(&d);
        self.conv.backward(&self.act.backward(&d))
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamMut<'a, T>>) {
        self.conv.params_mut("action.conv", out);
        self.fc1.params_mut("action.fc1", out);
        self.fc2.params_mut("action.fc2", out);
    }

    fn params<'a>(&'a self, out: &mut Vec<ParamRef<'a, T>>) {
        self.conv.params("action.conv", out);
        self.fc1.params("action.fc1", out);
        self.fc2.params("action.fc2", out);
    }
}

#[derive(Clone, Debug)]
pub struct ObserverModel<T = f32> {
    variant: Variant,
    trunk: Trunk<T>,
    target: SpatialHead<T>,
    action: ActionHead<T>,
    state: SpatialHead<T>,
    belief: Option<SpatialHead<T>>,
}

impl<T: Real> ObserverModel<T> {
    /// He-uniform initialisation. The shared layers draw from the same
    /// stream for both variants, so a Beliefs and a NoBeliefs model built
    /// from one seed agree on every common parameter.
    pub fn new(variant: Variant, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive_str(seed, "observer"));
        let trunk = Trunk::new(&mut rng);
        let target = SpatialHead::new("target", &mut rng);
        let action = ActionHead::new(&mut rng);
        let state = SpatialHead::new("state", &mut rng);
        let belief = (variant == Variant::Beliefs).then(|| {
            let mut rng = seed::rng(seed::derive_str(seed, "observer/belief"));
            SpatialHead::new("belief", &mut rng)
        });
        ObserverModel {
            variant,
            trunk,
            target,
            action,
            state,
            belief,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// `x` is `[n, 11, 11, 20]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Predictions<T>> {
        let n = match *x.shape() {
            [n, GRID, GRID, PLANES] if n > 0 => n,
            ref s => {
                return Err(Error::ShapeMismatch(format!(
                    "observer input must be [n, {GRID}, {GRID}, {PLANES}], got {s:?}"
                )))
            }
        };
        let h = self.trunk.forward(x, mode)?;
        Ok(Predictions {
            n,
            target: self.target.forward(&h)?,
            action: self.action.forward(&h)?,
            state: self.state.forward(&h)?,
            belief: match &mut self.belief {
                Some(head) => Some(head.forward(&h)?),
                None => None,
            },
        })
    }

    /// Accumulates parameter gradients for the most recent forward pass.
    pub fn backward(&mut self, g: &HeadGrads<T>) {
        let mut dh = self.target.backward(&g.target);
        let add = |dh: &mut Tensor<T>, d: Tensor<T>| {
            for (a, &b) in dh.values_mut().iter_mut().zip(d.values()) {
                *a += b;
            }
        };
        add(&mut dh, self.action.backward(&g.action));
        add(&mut dh, self.state.backward(&g.state));
        if let (Some(head), Some(gb)) = (&mut self.belief, &g.belief) {
            add(&mut dh, head.backward(gb));
        }
        self.trunk.backward(&dh);
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        self.trunk.params_mut(&mut out);
        self.target.params_mut(&mut out);
        self.action.params_mut(&mut out);
        self.state.params_mut(&mut out);
        if let Some(b) = &mut self.belief {
            b.params_mut(&mut out);
        }
        out
    }

    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.trunk.params(&mut out);
        self.target.params(&mut out);
        self.action.params(&mut out);
        self.state.params(&mut out);
        if let Some(b) = &self.belief {
            b.params(&mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        self.trunk.buffers_mut(&mut out);
        out
    }

    pub fn buffers(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        self.trunk.buffers(&mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// Parameters of the belief head alone (zero for NoBeliefs).
    pub fn belief_head_param_count(&self) -> usize {
        self.belief.as_ref().map_or(0, |h| {
            let mut out = Vec::new();
            h.params(&mut out);
            out.iter().map(|p| p.tensor.len()).sum()
        })
    }

    /// Same weights in another float type.
    pub fn cast<U: Real>(&self) -> ObserverModel<U> {
        let mut m = ObserverModel::<U>::new(self.variant, 0);
        for (dst, src) in m.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.tensor.values_mut().iter_mut().zip(src.tensor.values()) {
                *d = U::of(s.as_f64());
            }
        }
        for ((_, dst), (_, src)) in m.buffers_mut().into_iter().zip(self.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::of(s.as_f64());
            }
        }
        m
    }
}

/// Stacks the inputs of samples `idx` into one batch tensor.
pub fn batch_input(ds: &Dataset, idx: &[usize]) -> Tensor<f32> {
    let mut values = Vec::with_capacity(idx.len() * INPUT_LEN);
    for &i in idx {
        values.extend_from_slice(ds.input(i));
    }
    Tensor::new(&[idx.len(), GRID, GRID, PLANES], values).expect("input shape")
}

pub fn batch_labels(ds: &Dataset, idx: &[usize]) -> BatchLabels {
    let mut l = BatchLabels::default();
    for &i in idx {
        let info = &ds.info[i];
        l.target.push(info.target as usize);
        l.action.push(info.next_action as usize);
        l.state.push(info.next_state as usize);
        l.belief.extend_from_slice(ds.belief(i));
    }
    l
}

fn to_arrays<'a>(items: impl Iterator<Item = (String, &'a [f32])>) -> Vec<NamedArray> {
    items
        .map(|(name, values)| NamedArray {
            name,
            values: values.to_vec(),
        })
        .collect()
}

fn fill_arrays<'a>(
    what: &str,
    dst: impl Iterator<Item = (String, &'a mut [f32])>,
    src: &[NamedArray],
) -> Result<()> {
    let dst: Vec<_> = dst.collect();
    if dst.len() != src.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} {what} arrays, architecture has {}", src.len(), dst.len()),
        ));
    }
    for ((name, d), s) in dst.into_iter().zip(src) {
        if name != s.name || d.len() != s.values.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{what} `{}` ({} values) where `{name}` ({}) was expected", s.name, s.values.len(), d.len()),
            ));
        }
        d.copy_from_slice(&s.values);
    }
    Ok(())
}

impl ObserverModel<f32> {
    pub fn to_checkpoint(&self, optimizer: Option<(&Adam<f32>, u64, f64)>) -> Checkpoint {
        let params = to_arrays(self.params().into_iter().map(|p| (p.name, p.tensor.values())));
        let optimizer = optimizer.map(|(adam, epoch, lr)| {
            let names: Vec<String> = self.params().into_iter().map(|p| p.name).collect();
            let moments = |m: &Vec<Vec<f32>>| {
                if m.is_empty() {
                    Vec::new()
                } else {
                    to_arrays(names.iter().cloned().zip(m.iter().map(|v| v.as_slice())))
                }
            };
            OptimizerState {
                step: adam.step,
                epoch,
                lr,
                m: moments(&adam.m),
                v: moments(&adam.v),
            }
        });
        Checkpoint {
            descriptor: self.variant.descriptor().into(),
            params,
            buffers: to_arrays(self.buffers().into_iter()),
            optimizer,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let variant = Variant::from_descriptor(&ck.descriptor)?;
        let mut model = ObserverModel::new(variant, 0);
        fill_arrays(
            "parameter",
            model.params_mut().into_iter().map(|p| (p.name, p.tensor.values_mut())),
            &ck.params,
        )?;
        fill_arrays(
            "buffer",
            model.buffers_mut().into_iter().map(|(n, b)| (n, b.as_mut_slice())),
            &ck.buffers,
        )?;
        Ok(model)
    }

    /// Adam state stored alongside the weights, if any.
    pub fn optimizer_from_checkpoint(&self, ck: &Checkpoint) -> Result<Option<(Adam<f32>, u64, f64)>> {
        let Some(o) = &ck.optimizer else {
            return Ok(None);
        };
        let mut adam = Adam::new();
        adam.step = o.step;
        if !o.m.is_empty() {
            let params = self.params();
            let check = |arrays: &[NamedArray]| -> Result<Vec<Vec<f32>>> {
                if arrays.len() != params.len()
                    || arrays
                        .iter()
                        .zip(&params)
                        .any(|(a, p)| a.name != p.name || a.values.len() != p.tensor.len())
                {
                    return Err(Error::format("checkpoint", "optimizer state does not match parameters"));
                }
                Ok(arrays.iter().map(|a| a.values.clone()).collect())
            };
            adam.m = check(&o.m)?;
            adam.v = check(&o.v)?;
        }
        Ok(Some((adam, o.epoch, o.lr)))
    }

    /// Eval-mode predictions in chunks of `batch`.
    pub fn predict(&mut self, ds: &Dataset, idx: &[usize], batch: usize) -> Result<Predictions<f32>> {
        let mut all = Predictions {
            n: 0,
            target: Vec::new(),
            action: Vec::new(),
            state: Vec::new(),
            belief: (self.variant == Variant::Beliefs).then(Vec::new),
        };
        for chunk in idx.chunks(batch.max(1)) {
            let p = self.forward(&batch_input(ds, chunk), Mode::Eval)?;
            all.n += p.n;
            all.target.extend(p.target);
            all.action.extend(p.action);
            all.state.extend(p.state);
            if let (Some(a), Some(b)) = (&mut all.belief, p.belief) {
                a.extend(b);
            }
        }
        Ok(all)
    }
}

/// Accuracy summary of one evaluation pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub n: usize,
    /// Restricted 4-way argmax over the object cells.
    pub correct: usize,
    /// Unrestricted 121-way argmax, diagnostic only.
    pub correct_any_cell: usize,
    pub correct_action: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }

    pub fn any_cell_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct_any_cell as f64 / self.n as f64
        }
    }
}

pub fn score(pred: &Predictions<f32>, ds: &Dataset, idx: &[usize]) -> Accuracy {
    let mut acc = Accuracy {
        n: idx.len(),
        ..Accuracy::default()
    };
    for (row, &i) in idx.iter().enumerate() {
        let info = &ds.info[i];
        let objects = info.objects.map(|c| Position::from_index(c as usize));
        let logits = pred.target_row(row);
        if objects[predict_target(logits, &objects)].index() == info.target as usize {
            acc.correct += 1;
        }
        if argmax(logits) == info.target as usize {
            acc.correct_any_cell += 1;
        }
        if argmax(pred.action_row(row)) == info.next_action as usize {
            acc.correct_action += 1;
        }
    }
    acc
}

pub fn evaluate(model: &mut ObserverModel<f32>, ds: &Dataset, idx: &[usize]) -> Result<Accuracy> {
    let pred = model.predict(ds, idx, 64)?;
    Ok(score(&pred, ds, idx))
}
