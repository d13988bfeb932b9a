//! Hard-shared multi-task network: one convolutional trunk, one dense head
//! per task, Adam optimization, and checkpoint IO.
//!
//! The trunk parameters are shared by every task; each head sees only the
//! trunk's feature vector. Gradients of one head's loss w.r.t. another
//! head's parameters are identically zero by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Identifier of a classification task (one disease, one head).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One trunk layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { size: usize },
    GlobalAvgPool,
    Dense { out_dim: usize },
}

/// One per-task output head: a single dense layer over the trunk feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: TaskId,
    pub classes: usize,
}

/// Architecture description: shared trunk plus per-task heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

/// Shape of an activation flowing through the trunk.
#[derive(Clone, Debug, PartialEq)]
enum Activation {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl NetworkSpec {
    /// The default desk-scale trunk: two conv/relu/pool blocks, a third conv
    /// with global average pooling, then a dense layer to a 32-unit shared
    /// feature.
    pub fn desk_scale(input_shape: [usize; 3], heads: Vec<(TaskId, usize)>) -> Self {
        Self {
            input_shape,
            trunk: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: 32 },
                LayerSpec::Relu,
            ],
            heads: heads
                .into_iter()
                .map(|(task, classes)| HeadSpec { task, classes })
                .collect(),
        }
    }

    /// Copy of this spec restricted to a single head.
    pub fn restricted_to(&self, task: &TaskId) -> Result<Self> {
        let head = self
            .heads
            .iter()
            .find(|h| &h.task == task)
            .ok_or_else(|| Error::Lookup(format!("no head for task '{task}'")))?;
        Ok(Self {
            input_shape: self.input_shape,
            trunk: self.trunk.clone(),
            heads: vec![head.clone()],
        })
    }

    pub fn head(&self, task: &TaskId) -> Result<&HeadSpec> {
        self.heads
            .iter()
            .find(|h| &h.task == task)
            .ok_or_else(|| Error::Lookup(format!("no head for task '{task}'")))
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.heads.iter().map(|h| h.task.clone()).collect()
    }

    /// Shape-check the trunk and return the shared feature dimension.
    pub fn feature_dim(&self) -> Result<usize> {
        if self.heads.is_empty() {
            return Err(Error::Validation("network needs at least one head".into()));
        }
        if let Some(h) = self.heads.iter().find(|h| h.classes < 2) {
            return Err(Error::Validation(format!(
                "head '{}' has {} classes, need >= 2",
                h.task, h.classes
            )));
        }
        let [c, h, w] = self.input_shape;
        let mut act = Activation::Map { c, h, w };
        for (i, layer) in self.trunk.iter().enumerate() {
            act = match (layer, act) {
                (LayerSpec::Conv { out_channels, kernel, stride, padding }, Activation::Map { h, w, .. }) => {
                    let hp = h + 2 * padding;
                    let wp = w + 2 * padding;
                    if *kernel > hp || *kernel > wp || *stride == 0 {
                        return Err(Error::Dimension(format!(
                            "trunk layer {i}: conv kernel {kernel} on padded {hp}x{wp}"
                        )));
                    }
                    Activation::Map {
                        c: *out_channels,
                        h: (hp - kernel) / stride + 1,
                        w: (wp - kernel) / stride + 1,
                    }
                }
                (LayerSpec::Relu, a) => a,
                (LayerSpec::MaxPool { size }, Activation::Map { c, h, w }) => {
                    if *size == 0 || h / size == 0 || w / size == 0 {
                        return Err(Error::Dimension(format!(
                            "trunk layer {i}: pool {size} on {h}x{w}"
                        )));
                    }
                    Activation::Map { c, h: h / size, w: w / size }
                }
                (LayerSpec::GlobalAvgPool, Activation::Map { c, .. }) => Activation::Flat(c),
                (LayerSpec::Dense { out_dim }, Activation::Flat(_)) => Activation::Flat(*out_dim),
                (layer, act) => {
                    return Err(Error::Dimension(format!(
                        "trunk layer {i}: {layer:?} cannot follow activation {act:?}"
                    )))
                }
            };
        }
        match act {
            Activation::Flat(f) => Ok(f),
            Activation::Map { .. } => Err(Error::Dimension(
                "trunk must end in a flat feature (use global average pooling)".into(),
            )),
        }
    }

    /// Stable fingerprint of the architecture.
    pub fn spec_hash(&self) -> String {
        let encoded = serde_json::to_string(self).expect("spec serializes");
        hex_digest(encoded.as_bytes())
    }

    /// Names of the trunk's conv layers, in order (Grad-CAM targets).
    pub fn conv_layer_names(&self) -> Vec<String> {
        self.trunk
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| format!("trunk.{i}"))
            .collect()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Param {
    value: Tensor,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
}

/// Named parameters (`trunk.*` shared, `head.<task>.*` per task) with their
/// Adam state and a step counter common to all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
    step: u64,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradientMap(pub BTreeMap<String, Vec<f64>>);

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(|v| v.as_slice())
    }

    /// Add another gradient map into this one (missing entries are inserted).
    pub fn add_assign(&mut self, other: &GradientMap) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
    }
}

impl ParameterSet {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Replace a parameter value, resetting its Adam moments.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("unknown parameter '{name}'")))?;
        if param.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                param.value.shape(),
                value.shape()
            )));
        }
        let n = value.numel();
        *param = Param { value, moment1: vec![0.0; n], moment2: vec![0.0; n] };
        Ok(())
    }

    /// Copy parameter values (not optimizer state) from another set.
    pub fn copy_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, p) in &other.params {
            self.set(name, p.value.clone())?;
        }
        Ok(())
    }

    /// Stable fingerprint of all parameter values (bitwise).
    pub fn value_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, p) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        hex_digest(&bytes)
    }

    /// One Adam step with bias correction over the covered parameters.
    ///
    /// Hyperparameters are fixed at beta1 0.9, beta2 0.999, epsilon 1e-8,
    /// decay 0; the learning rate is the caller's. Parameters without a
    /// gradient entry keep their value and moments untouched; the step
    /// counter advances once per call for all parameters.
    pub fn adam_step(&mut self, grads: &GradientMap, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Domain(format!("learning rate must be > 0, got {lr}")));
        }
        for (name, g) in &grads.0 {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::Lookup(format!("gradient for unknown parameter '{name}'")))?;
            if g.len() != p.value.numel() {
                return Err(Error::Dimension(format!(
                    "gradient for '{name}' has {} entries, parameter has {}",
                    g.len(),
                    p.value.numel()
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for (name, g) in &grads.0 {
            let p = self.params.get_mut(name).expect("validated above");
            let data = p.value.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                p.moment1[i] = ADAM_BETA1 * p.moment1[i] + (1.0 - ADAM_BETA1) * gi;
                p.moment2[i] = ADAM_BETA2 * p.moment2[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = p.moment1[i] / bc1;
                let v_hat = p.moment2[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Draw fan-in-scaled normal weights (std = sqrt(2/fan_in)) and zero biases,
/// deterministically from the seed.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    let feature_dim = spec.feature_dim()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();

    let mut insert = |name: String, value: Tensor| {
        let n = value.numel();
        params.insert(name, Param { value, moment1: vec![0.0; n], moment2: vec![0.0; n] });
    };

    let draw = |rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize| -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is positive");
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| normal.sample(rng)).collect();
        Tensor::new(shape, data).expect("sampled weights are finite")
    };

    let [c0, _, _] = spec.input_shape;
    let mut in_dim = c0;
    for (i, layer) in spec.trunk.iter().enumerate() {
        match layer {
            LayerSpec::Conv { out_channels, kernel, .. } => {
                let fan_in = in_dim * kernel * kernel;
                insert(
                    format!("trunk.{i}.weight"),
                    draw(&mut rng, vec![*out_channels, in_dim, *kernel, *kernel], fan_in),
                );
                insert(format!("trunk.{i}.bias"), Tensor::zeros(vec![*out_channels]));
                in_dim = *out_channels;
            }
            LayerSpec::Dense { out_dim } => {
                insert(format!("trunk.{i}.weight"), draw(&mut rng, vec![in_dim, *out_dim], in_dim));
                insert(format!("trunk.{i}.bias"), Tensor::zeros(vec![*out_dim]));
                in_dim = *out_dim;
            }
            LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::GlobalAvgPool => {}
        }
    }
    for head in &spec.heads {
        insert(
            format!("head.{}.weight", head.task),
            draw(&mut rng, vec![feature_dim, head.classes], feature_dim),
        );
        insert(format!("head.{}.bias", head.task), Tensor::zeros(vec![head.classes]));
    }
    Ok(ParameterSet { params, step: 0 })
}

/// A recorded forward pass: the tape plus handles to everything callers may
/// want gradients of or values from.
pub struct ForwardPass {
    pub tape: Tape,
    /// Per-task logits, [B, K_t].
    pub logits: BTreeMap<TaskId, Var>,
    /// Shared trunk output, [B, F].
    pub trunk_feature: Var,
    /// Output var of every conv layer, keyed by layer name ("trunk.{i}").
    pub conv_outputs: BTreeMap<String, Var>,
    /// Leaf vars of the parameters used in this pass.
    pub param_vars: BTreeMap<String, Var>,
}

impl ForwardPass {
    /// Extract named parameter gradients after `tape.backward`.
    pub fn named_gradients(&self, grads: &crate::tensor::Gradients) -> GradientMap {
        named_gradients(&self.param_vars, grads)
    }

    /// Run the backward sweep from a scalar loss produced on this pass's
    /// tape. Consumes the pass; returns named parameter gradients along with
    /// the raw per-var gradients.
    pub fn backward(self, loss: Var) -> Result<(GradientMap, crate::tensor::Gradients)> {
        let ForwardPass { tape, param_vars, .. } = self;
        let grads = tape.backward(loss)?;
        Ok((named_gradients(&param_vars, &grads), grads))
    }
}

/// Collect gradients for named parameter leaves.
pub fn named_gradients(
    param_vars: &BTreeMap<String, Var>,
    grads: &crate::tensor::Gradients,
) -> GradientMap {
    let mut map = BTreeMap::new();
    for (name, var) in param_vars {
        if let Some(g) = grads.get(*var) {
            map.insert(name.clone(), g.to_vec());
        }
    }
    GradientMap(map)
}

/// Run the trunk once on the batch and every head on the shared feature.
///
/// `trainable` controls whether parameters are registered as gradient
/// leaves; evaluation passes use `false` and never build gradient state.
pub fn forward_pass(
    params: &ParameterSet,
    spec: &NetworkSpec,
    batch: &Tensor,
    trainable: bool,
) -> Result<ForwardPass> {
    let [c, h, w] = spec.input_shape;
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
        return Err(Error::Dimension(format!(
            "batch shape {shape:?} does not match input {:?}",
            spec.input_shape
        )));
    }
    let mut tape = Tape::new();
    let mut param_vars = BTreeMap::new();
    let leaf = |tape: &mut Tape, vars: &mut BTreeMap<String, Var>, name: String| -> Result<Var> {
        let tensor = params
            .get(&name)
            .ok_or_else(|| Error::Lookup(format!("missing parameter '{name}'")))?;
        let var = tape.leaf(tensor, trainable);
        vars.insert(name, var);
        Ok(var)
    };

    // Unit-range images are centered before the first conv; zero-mean inputs
    // condition the shared trunk far better than raw [0,1] pixels.
    let raw = tape.constant(batch);
    let mut x = tape.add_scalar(raw, -0.5);
    let mut conv_outputs = BTreeMap::new();
    for (i, layer) in spec.trunk.iter().enumerate() {
        x = match layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let wv = leaf(&mut tape, &mut param_vars, format!("trunk.{i}.weight"))?;
                let bv = leaf(&mut tape, &mut param_vars, format!("trunk.{i}.bias"))?;
                let y = tape.conv2d(x, wv, *stride, *padding)?;
                let y = tape.channel_bias(y, bv)?;
                conv_outputs.insert(format!("trunk.{i}"), y);
                y
            }
            LayerSpec::Relu => tape.relu(x),
            LayerSpec::MaxPool { size } => tape.max_pool2d(x, *size)?,
            LayerSpec::GlobalAvgPool => tape.global_avg_pool(x)?,
            LayerSpec::Dense { .. } => {
                let wv = leaf(&mut tape, &mut param_vars, format!("trunk.{i}.weight"))?;
                let bv = leaf(&mut tape, &mut param_vars, format!("trunk.{i}.bias"))?;
                let y = tape.matmul(x, wv)?;
                tape.row_bias(y, bv)?
            }
        };
    }
    let trunk_feature = x;

    let mut logits = BTreeMap::new();
    for head in &spec.heads {
        let wv = leaf(&mut tape, &mut param_vars, format!("head.{}.weight", head.task))?;
        let bv = leaf(&mut tape, &mut param_vars, format!("head.{}.bias", head.task))?;
        let y = tape.matmul(trunk_feature, wv)?;
        let y = tape.row_bias(y, bv)?;
        logits.insert(head.task.clone(), y);
    }

    Ok(ForwardPass { tape, logits, trunk_feature, conv_outputs, param_vars })
}

/// Per-task logits for a batch, as plain tensors.
pub fn forward(
    params: &ParameterSet,
    spec: &NetworkSpec,
    batch: &Tensor,
) -> Result<BTreeMap<TaskId, Tensor>> {
    let pass = forward_pass(params, spec, batch, false)?;
    Ok(pass
        .logits
        .iter()
        .map(|(task, var)| (task.clone(), pass.tape.value(*var).clone()))
        .collect())
}

/// A single-image prediction for one task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub task_id: TaskId,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Classify one image ([c,h,w]) for one task: softmax at T=1, argmax with
/// lowest-index tie-break.
pub fn predict(
    params: &ParameterSet,
    spec: &NetworkSpec,
    image: &Tensor,
    task: &TaskId,
) -> Result<TaskPrediction> {
    spec.head(task)?;
    let batch = Tensor::stack(&[image])?;
    let mut pass = forward_pass(params, spec, &batch, false)?;
    let logits = pass.logits.get(task).copied().expect("head validated");
    let probs_var = pass.tape.softmax_t(logits, 1.0)?;
    let probabilities = pass.tape.value(probs_var).data().to_vec();
    let predicted_class = argmax(&probabilities);
    Ok(TaskPrediction { task_id: task.clone(), probabilities, predicted_class })
}

// ── checkpoint IO ───────────────────────────────────────────────────────

/// Write parameters to a text checkpoint. Values are stored as hex-encoded
/// IEEE-754 bits so the round trip is bitwise exact.
pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "sall-checkpoint v1")?;
    writeln!(w, "spec_hash {}", spec.spec_hash())?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "step {}", params.step)?;
    for (name, p) in &params.params {
        write!(w, "param {name} {}", p.value.shape().len())?;
        for d in p.value.shape() {
            write!(w, " {d}")?;
        }
        for v in p.value.data() {
            write!(w, " {:016x}", v.to_bits())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Header fields of a checkpoint.
#[derive(Clone, Debug)]
pub struct CheckpointHeader {
    pub spec_hash: String,
    pub seed: u64,
    pub step: u64,
}

/// Read a checkpoint written by [`save_checkpoint`]. Adam moments restart
/// at zero; the step counter is restored from the header.
pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, CheckpointHeader)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let magic = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Validation("empty checkpoint".into()))?;
    if magic != "sall-checkpoint v1" {
        return Err(Error::Validation(format!("bad checkpoint magic '{magic}'")));
    }
    let mut spec_hash = None;
    let mut seed = None;
    let mut step = None;
    let mut params = BTreeMap::new();
    for line in lines {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("spec_hash") => spec_hash = it.next().map(String::from),
            Some("seed") => {
                seed = Some(parse_field(it.next(), "seed")?);
            }
            Some("step") => {
                step = Some(parse_field(it.next(), "step")?);
            }
            Some("param") => {
                let name: String = it
                    .next()
                    .ok_or_else(|| Error::Validation("param line missing name".into()))?
                    .to_string();
                let ndim: usize = parse_field(it.next(), "ndim")?;
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(parse_field(it.next(), "dim")?);
                }
                let numel: usize = shape.iter().product();
                let mut data = Vec::with_capacity(numel);
                for _ in 0..numel {
                    let hexv = it
                        .next()
                        .ok_or_else(|| Error::Validation(format!("param '{name}' truncated")))?;
                    let bits = u64::from_str_radix(hexv, 16)
                        .map_err(|e| Error::Validation(format!("bad value in '{name}': {e}")))?;
                    data.push(f64::from_bits(bits));
                }
                let value = Tensor::new(shape, data)?;
                let n = value.numel();
                params.insert(name, Param { value, moment1: vec![0.0; n], moment2: vec![0.0; n] });
            }
            Some(other) => {
                return Err(Error::Validation(format!("unknown checkpoint line '{other}'")))
            }
            None => {}
        }
    }
    let header = CheckpointHeader {
        spec_hash: spec_hash.ok_or_else(|| Error::Validation("checkpoint missing spec_hash".into()))?,
        seed: seed.ok_or_else(|| Error::Validation("checkpoint missing seed".into()))?,
        step: step.unwrap_or(0),
    };
    Ok((ParameterSet { params, step: header.step }, header))
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    field
        .ok_or_else(|| Error::Validation(format!("checkpoint missing {what}")))?
        .parse()
        .map_err(|e| Error::Validation(format!("bad {what}: {e}")))
}
