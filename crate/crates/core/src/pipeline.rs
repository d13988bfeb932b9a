//! The three-stage training scheme: single-task pre-training, synergic
//! soft-label generation by cross-feeding images through frozen pre-trained
//! models, and joint multi-task training on mixed hard/soft supervision.
//!
//! Multi-task training draws mixed batches across tasks. For head `t`, a
//! batch row contributes its hard one-hot label when the example is native
//! to `t` (temperature 1) and its synergic soft label otherwise (temperature
//! `T`). The total loss is the unweighted sum of the per-head losses; one
//! backward pass therefore updates the trunk with the summed gradient and
//! each head with only its own.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::PredictionRecord;
use crate::data::{apply_augment, AugmentParams, LabeledExample};
use crate::error::{Error, Result};
use crate::network::{forward_pass, init_params, NetworkSpec, ParameterSet, TaskId};
use crate::seeding::derive_seed;
use crate::tensor::{Tensor, Var};

/// How training-time augmentation is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    /// Fresh augmentation of every example each epoch.
    Online,
    /// Dataset expanded once up front by `offline_copies` augmented copies.
    Offline,
    /// No augmentation.
    None,
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Softmax temperature for the soft-label branch (and label generation).
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Exact number of training examples drawn per task; tasks not listed
    /// use their full dataset.
    #[serde(default)]
    pub per_task_counts: BTreeMap<TaskId, usize>,
    pub seed: u64,
    #[serde(default = "default_augment")]
    pub augment: AugmentMode,
    #[serde(default = "default_offline_copies")]
    pub offline_copies: usize,
    /// Apply the temperature to hard-label rows too (off by default: hard
    /// supervision stays sharp).
    #[serde(default)]
    pub apply_t_to_hard: bool,
    /// Multiply soft-branch loss terms by T^2 (classic distillation
    /// compensation; off by default, the total loss is an unweighted sum).
    #[serde(default)]
    pub t_squared_compensation: bool,
    /// Each example supervises only its native head (plain multi-task
    /// training, no synergic labels). Off by default: foreign rows then
    /// require a soft label for every other head.
    #[serde(default)]
    pub native_only_supervision: bool,
}

fn default_augment() -> AugmentMode {
    AugmentMode::Online
}

fn default_offline_copies() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Domain(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A synergic soft label: the temperature-scaled softmax output of another
/// task's frozen model on this image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub source_model_task: TaskId,
    pub probabilities: Vec<f64>,
}

/// Summary statistics of a batch of soft labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    /// Mean over labels of the maximum probability.
    pub mean_max: f64,
    /// Mean over labels of the population variance of the probability vector.
    pub mean_variance: f64,
}

/// Losses recorded at one optimizer step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub per_head: BTreeMap<TaskId, f64>,
    pub total: f64,
}

/// Final parameters plus the loss trajectory of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParameterSet,
    pub steps: Vec<StepRecord>,
}

/// Pre-train a single-task model by cross-entropy on hard labels.
///
/// This is exactly multi-task training degenerated to one head and no soft
/// labels; it delegates to [`train_multitask`] so the reduction is bitwise.
pub fn pretrain_single(
    dataset: &[LabeledExample],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::Validation("pretrain on empty dataset".into()));
    }
    if spec.heads.len() != 1 {
        return Err(Error::Validation(format!(
            "pretrain_single needs exactly one head, spec has {}",
            spec.heads.len()
        )));
    }
    let head = &spec.heads[0];
    if let Some(ex) = dataset.iter().find(|ex| ex.task_id != head.task) {
        return Err(Error::Validation(format!(
            "example '{}' belongs to task '{}', spec head is '{}'",
            ex.id, ex.task_id, head.task
        )));
    }
    if let Some(ex) = dataset.iter().find(|ex| ex.grades() != head.classes) {
        return Err(Error::Validation(format!(
            "example '{}' has {} grades, head '{}' expects {}",
            ex.id,
            ex.grades(),
            head.task,
            head.classes
        )));
    }
    let mut datasets = BTreeMap::new();
    datasets.insert(head.task.clone(), dataset.to_vec());
    train_multitask(&datasets, spec, config)
}

/// Run frozen `model_params` over `inputs` from other tasks and attach the
/// temperature-scaled softmax outputs as soft labels for `model_task`.
pub fn generate_synergic_labels(
    model_params: &ParameterSet,
    spec: &NetworkSpec,
    model_task: &TaskId,
    inputs: &mut [LabeledExample],
    temperature: f64,
) -> Result<Vec<SoftLabel>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    spec.head(model_task)?;
    if let Some(ex) = inputs.iter().find(|ex| &ex.task_id == model_task) {
        return Err(Error::Contract(format!(
            "example '{}' belongs to the generating task '{model_task}'",
            ex.id
        )));
    }
    let mut labels = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks_mut(EVAL_BATCH) {
        let images: Vec<&Tensor> = chunk.iter().map(|ex| &ex.image).collect();
        let batch = Tensor::stack(&images)?;
        let mut pass = forward_pass(model_params, spec, &batch, false)?;
        let logits = *pass.logits.get(model_task).expect("head checked above");
        let probs_var = pass.tape.softmax_t(logits, temperature)?;
        let probs = pass.tape.value(probs_var);
        let k = *probs.shape().last().unwrap();
        for (i, ex) in chunk.iter_mut().enumerate() {
            let row = probs.data()[i * k..(i + 1) * k].to_vec();
            ex.soft_labels.insert(model_task.clone(), row.clone());
            labels.push(SoftLabel {
                source_model_task: model_task.clone(),
                probabilities: row,
            });
        }
    }
    Ok(labels)
}

const EVAL_BATCH: usize = 64;

/// Mean max-probability and mean population variance over soft labels.
pub fn label_stats(labels: &[SoftLabel]) -> Result<LabelStats> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Validation("label_stats over empty label set".into()))?;
    let k = first.probabilities.len();
    let mut sum_max = 0.0;
    let mut sum_var = 0.0;
    for label in labels {
        if label.probabilities.len() != k {
            return Err(Error::Validation(format!(
                "mixed label widths: {} vs {k}",
                label.probabilities.len()
            )));
        }
        let mean: f64 = label.probabilities.iter().sum::<f64>() / k as f64;
        sum_max += label
            .probabilities
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        sum_var += label.probabilities.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>()
            / k as f64;
    }
    let n = labels.len() as f64;
    Ok(LabelStats { mean_max: sum_max / n, mean_variance: sum_var / n })
}

/// Joint training of the shared trunk and all heads (fresh initialization).
pub fn train_multitask(
    datasets: &BTreeMap<TaskId, Vec<LabeledExample>>,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_multitask_init(datasets, spec, config, None)
}

/// Joint training with an optional warm start (parameter values copied from
/// `init` where names match; Adam state starts fresh).
pub fn train_multitask_init(
    datasets: &BTreeMap<TaskId, Vec<LabeledExample>>,
    spec: &NetworkSpec,
    config: &TrainConfig,
    init: Option<&ParameterSet>,
) -> Result<TrainOutput> {
    config.validate()?;
    spec.feature_dim()?;
    validate_datasets(datasets, spec, config)?;

    let mut params = init_params(spec, derive_seed(config.seed, "init"))?;
    if let Some(warm) = init {
        let names: Vec<String> = warm.names().map(String::from).collect();
        for name in names {
            if params.get(&name).is_some() {
                params.set(&name, warm.get(&name).expect("name exists").clone())?;
            }
        }
    }

    // Fix the per-task training pools once, honoring exact per-task counts.
    let mut pools: Vec<(TaskId, Vec<LabeledExample>)> = Vec::new();
    for (task, examples) in datasets {
        let mut selected: Vec<LabeledExample> = match config.per_task_counts.get(task) {
            None => examples.clone(),
            Some(&count) => {
                if count == 0 {
                    return Err(Error::Validation(format!(
                        "configured count for task '{task}' is 0"
                    )));
                }
                if count > examples.len() {
                    return Err(Error::Validation(format!(
                        "configured count {count} for task '{task}' exceeds {} examples",
                        examples.len()
                    )));
                }
                let mut idx: Vec<usize> = (0..examples.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &format!("subsample/{task}"),
                ));
                idx.shuffle(&mut rng);
                idx.truncate(count);
                idx.sort_unstable();
                idx.into_iter().map(|i| examples[i].clone()).collect()
            }
        };
        if let AugmentMode::Offline = config.augment {
            let mut expanded = Vec::with_capacity(selected.len() * (1 + config.offline_copies));
            for ex in &selected {
                expanded.push(ex.clone());
                for copy in 0..config.offline_copies {
                    let seed = derive_seed(config.seed, &format!("offline/{}/{copy}", ex.id));
                    expanded.push(crate::data::augment(ex, seed));
                }
            }
            selected = expanded;
        }
        pools.push((task.clone(), selected));
    }

    let mut rng_order = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "order"));
    let mut rng_augment = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "augment"));

    let mut steps = Vec::new();
    let mut step_index = 0usize;
    for _epoch in 0..config.epochs {
        let mut order: Vec<(usize, usize)> = pools
            .iter()
            .enumerate()
            .flat_map(|(ti, (_, pool))| (0..pool.len()).map(move |ei| (ti, ei)))
            .collect();
        order.shuffle(&mut rng_order);

        for batch_ids in order.chunks(config.batch_size) {
            let mut batch_examples: Vec<LabeledExample> = Vec::with_capacity(batch_ids.len());
            for &(ti, ei) in batch_ids {
                let ex = &pools[ti].1[ei];
                let ex = if let AugmentMode::Online = config.augment {
                    apply_augment(ex, &AugmentParams::sample(&mut rng_augment))
                } else {
                    ex.clone()
                };
                batch_examples.push(ex);
            }
            let record = train_step(&mut params, spec, &batch_examples, config, step_index)?;
            steps.push(record);
            step_index += 1;
        }
    }
    Ok(TrainOutput { params, steps })
}

/// One optimizer step over a mixed batch.
fn train_step(
    params: &mut ParameterSet,
    spec: &NetworkSpec,
    batch: &[LabeledExample],
    config: &TrainConfig,
    step_index: usize,
) -> Result<StepRecord> {
    let images: Vec<&Tensor> = batch.iter().map(|ex| &ex.image).collect();
    let input = Tensor::stack(&images)?;
    let mut pass = forward_pass(params, spec, &input, true)?;

    let mut per_head = BTreeMap::new();
    let mut head_losses: Vec<Var> = Vec::new();
    // pass.logits is a BTreeMap, so heads are processed in sorted task order
    // and the total below folds in that same order.
    let logits_by_task: Vec<(TaskId, Var)> =
        pass.logits.iter().map(|(t, v)| (t.clone(), *v)).collect();
    for (task, logits) in &logits_by_task {
        let k = spec.head(task)?.classes;
        let mut targets = Vec::with_capacity(batch.len() * k);
        let mut temps = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        for ex in batch {
            if &ex.task_id == task {
                targets.extend_from_slice(&ex.hard_label);
                temps.push(if config.apply_t_to_hard { config.temperature } else { 1.0 });
                weights.push(1.0);
            } else if config.native_only_supervision {
                // Foreign rows carry no supervision for this head: a valid
                // placeholder target with zero loss weight.
                targets.extend(std::iter::repeat(1.0 / k as f64).take(k));
                temps.push(1.0);
                weights.push(0.0);
            } else {
                let soft = ex.soft_labels.get(task).ok_or_else(|| {
                    Error::Validation(format!(
                        "example '{}' is missing a soft label for head '{task}'",
                        ex.id
                    ))
                })?;
                targets.extend_from_slice(soft);
                temps.push(config.temperature);
                weights.push(if config.t_squared_compensation {
                    config.temperature * config.temperature
                } else {
                    1.0
                });
            }
        }
        let target_tensor = Tensor::new(vec![batch.len(), k], targets)?;
        let loss = pass
            .tape
            .cross_entropy_rows(*logits, &target_tensor, &temps, &weights)?;
        per_head.insert(task.clone(), pass.tape.value(loss).item()?);
        head_losses.push(loss);
    }

    let mut total_var = head_losses[0];
    for loss in head_losses.iter().skip(1) {
        total_var = pass.tape.add(total_var, *loss)?;
    }
    let total = pass.tape.value(total_var).item()?;

    let (named, _) = pass.backward(total_var)?;
    params.adam_step(&named, config.learning_rate)?;

    Ok(StepRecord { step: step_index, per_head, total })
}

fn validate_datasets(
    datasets: &BTreeMap<TaskId, Vec<LabeledExample>>,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::Validation("no datasets given".into()));
    }
    for head in &spec.heads {
        if !datasets.contains_key(&head.task) {
            return Err(Error::Validation(format!("no dataset for head '{}'", head.task)));
        }
    }
    for (task, examples) in datasets {
        if examples.is_empty() {
            return Err(Error::Validation(format!("dataset for task '{task}' is empty")));
        }
        // Datasets from tasks without a head (labels-only training) supervise
        // other heads through their soft labels.
        let native_head = spec.heads.iter().find(|h| &h.task == task);
        if native_head.is_none() && config.native_only_supervision {
            return Err(Error::Validation(format!(
                "dataset for task '{task}' has no head and native-only supervision is set"
            )));
        }
        for ex in examples {
            if let Some(head) = native_head {
                if ex.grades() != head.classes {
                    return Err(Error::Validation(format!(
                        "example '{}' has {} grades, head '{task}' expects {}",
                        ex.id,
                        ex.grades(),
                        head.classes
                    )));
                }
            }
            if config.native_only_supervision {
                continue;
            }
            // Every foreign head needs a soft label before joint training.
            for other in &spec.heads {
                if other.task != *task && !ex.soft_labels.contains_key(&other.task) {
                    return Err(Error::Validation(format!(
                        "example '{}' is missing a soft label for head '{}'",
                        ex.id, other.task
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Batched evaluation: softmax (T=1) outputs paired with true grades.
pub fn prediction_records(
    params: &ParameterSet,
    spec: &NetworkSpec,
    examples: &[LabeledExample],
    task: &TaskId,
) -> Result<Vec<PredictionRecord>> {
    spec.head(task)?;
    let mut records = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let images: Vec<&Tensor> = chunk.iter().map(|ex| &ex.image).collect();
        let batch = Tensor::stack(&images)?;
        let mut pass = forward_pass(params, spec, &batch, false)?;
        let logits = *pass.logits.get(task).expect("head checked above");
        let probs_var = pass.tape.softmax_t(logits, 1.0)?;
        let probs = pass.tape.value(probs_var);
        let k = *probs.shape().last().unwrap();
        for (i, ex) in chunk.iter().enumerate() {
            records.push(PredictionRecord::new(
                probs.data()[i * k..(i + 1) * k].to_vec(),
                ex.grade,
            )?);
        }
    }
    Ok(records)
}

/// Fraction of examples whose argmax prediction matches the true grade.
pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64
}

// ── sidecar and run-log IO ──────────────────────────────────────────────

/// One line of a soft-label sidecar file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SoftLabelRecord {
    pub example_id: String,
    pub source_task: TaskId,
    pub probabilities: Vec<f64>,
    pub temperature: f64,
    pub model_checkpoint_hash: String,
}

/// Write soft-label records as JSON lines.
pub fn write_soft_labels(path: &Path, records: &[SoftLabelRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_soft_labels(path: &Path) -> Result<Vec<SoftLabelRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Attach sidecar records to examples by id.
pub fn apply_soft_labels(
    examples: &mut [LabeledExample],
    records: &[SoftLabelRecord],
) -> Result<()> {
    let index: BTreeMap<String, usize> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| (ex.id.clone(), i))
        .collect();
    for r in records {
        let &i = index.get(&r.example_id).ok_or_else(|| {
            Error::Lookup(format!("soft label for unknown example '{}'", r.example_id))
        })?;
        examples[i]
            .soft_labels
            .insert(r.source_task.clone(), r.probabilities.clone());
    }
    Ok(())
}

/// Write a run log: a JSON header (config snapshot + seed) followed by one
/// JSON line per optimizer step.
pub fn write_run_log(
    path: &Path,
    config: &TrainConfig,
    steps: &[StepRecord],
    fingerprint: &str,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::json!({
        "fingerprint": fingerprint,
        "seed": config.seed,
        "config": config,
    });
    writeln!(w, "{header}")?;
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
