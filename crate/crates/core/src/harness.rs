//! Training, evaluation and search.
//!
//! Every trial is single-threaded and a pure function of its inputs and
//! seed. Grids fan trials out over a rayon pool; results are collected in
//! plan order so the record set does not depend on the number of workers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Batch, NetworkSpec, ParamSet, Tensor2D};
use crate::regularizers::{self, make_reg_plan, RegPlan};
use crate::seed;
use crate::transfer::{build_lr_map, reinit_top_layers, Checkpoint, FineTunePlan, LrMap};

/// Version of the [`RunRecord`] JSON-lines schema.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Runs per plan in the repeated-run protocol.
pub const DEFAULT_RUNS: usize = 4;

/// Consecutive evaluations above `DIVERGENCE_FACTOR` x the initial loss that
/// count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 3;
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            momentum: 0.9,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and eval_every must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    /// 1-based epoch at which the evaluation happened.
    pub epoch: usize,
    /// Mean data loss over the epoch (penalty excluded).
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_top1: Option<f64>,
}

/// SGD with momentum and per-block learning rates.
///
/// `v <- momentum * v - lr_b * grad_b; w <- w + v`. Blocks whose rate is zero
/// are never touched.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: ParamSet,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: ParamSet::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, rates: &[f64], scale: f64) {
        for (b, &lr) in rates.iter().enumerate() {
            if lr == 0.0 {
                continue;
            }
            let step = lr * scale;
            let v = &mut self.velocity.blocks[b];
            for ((w, vel), g) in params.blocks[b]
                .values_mut()
                .zip(v.values_mut())
                .zip(grads.blocks[b].values())
            {
                *vel = self.momentum * *vel - step * g;
                *w += *vel;
            }
        }
    }
}

fn schedule_scale(schedule: LrSchedule, step: usize, total: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => 1.0,
        LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
    }
}

/// Trains `init` on `dataset.train`, evaluating on `dataset.val` every
/// `eval_every` epochs.
pub fn sgd_train(
    spec: &NetworkSpec,
    init: &ParamSet,
    lr_map: &LrMap,
    reg_plan: &RegPlan,
    config: &TrainConfig,
    dataset: &LabeledDataset,
) -> Result<(ParamSet, Vec<EpochStat>)> {
    config.validate()?;
    init.check_matches(spec)?;
    if lr_map.len() != spec.n_blocks() {
        return Err(Error::Shape(format!(
            "learning-rate map has {} entries for {} blocks",
            lr_map.len(),
            spec.n_blocks()
        )));
    }
    if let Some(r) = lr_map.rates().iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::InvalidArgument(format!("learning rate {r} is invalid")));
    }
    regularizers::validate_against(init, reg_plan)?;
    let train = &dataset.train;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    train.check_labels(spec.n_classes)?;
    if !dataset.val.is_empty() {
        dataset.val.check_labels(spec.n_classes)?;
    }

    let mut params = init.clone();
    let Some(lowest) = lr_map.lowest_trainable() else {
        // Nothing trains: the data loss is constant across epochs.
        let loss = nn::batch_loss(spec, &params, train)?;
        let val = val_top1(spec, &params, &dataset.val)?;
        let history = (1..=config.epochs)
            .filter(|e| e % config.eval_every == 0)
            .map(|epoch| EpochStat {
                epoch,
                train_loss: loss,
                val_top1: val,
            })
            .collect();
        return Ok((params, history));
    };

    let initial_loss = nn::batch_loss(spec, &params, train)?;
    let mut opt = Sgd::new(&params, config.momentum);
    let mut rng = seed::rng(config.seed, &[seed::STREAM_SHUFFLE]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(config.epochs / config.eval_every);
    let mut strikes = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let (logits, cache) = nn::forward(spec, &params, &batch.inputs)?;
            let (loss, dlogits) = nn::loss_and_dlogits(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let mut grads = nn::backward_from(spec, &params, &cache, &dlogits, lowest)?;
            regularizers::add_reg_grad(&params, reg_plan, &mut grads);
            let scale = schedule_scale(config.lr_schedule, step, total_steps);
            opt.step(&mut params, &grads, lr_map.rates(), scale);
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        if epoch % config.eval_every == 0 {
            if train_loss > DIVERGENCE_FACTOR * initial_loss {
                strikes += 1;
                if strikes >= DIVERGENCE_PATIENCE {
                    return Err(Error::Divergence {
                        epoch,
                        reason: format!(
                            "train loss {train_loss:.4} above {DIVERGENCE_FACTOR}x initial {initial_loss:.4} for {strikes} evaluations"
                        ),
                    });
                }
            } else {
                strikes = 0;
            }
            history.push(EpochStat {
                epoch,
                train_loss,
                val_top1: val_top1(spec, &params, &dataset.val)?,
            });
        }
    }
    Ok((params, history))
}

fn val_top1(spec: &NetworkSpec, params: &ParamSet, val: &Batch) -> Result<Option<f64>> {
    if val.is_empty() {
        Ok(None)
    } else {
        evaluate_top1(spec, params, val).map(Some)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn top1_of(scores: &Tensor2D, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(scores.row(*i)) == l)
        .count();
    100.0 * correct as f64 / labels.len() as f64
}

/// Percentage of rows whose argmax logit is the label.
pub fn evaluate_top1(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty batch".into()));
    }
    batch.check_labels(spec.n_classes)?;
    let logits = nn::predict(spec, params, &batch.inputs)?;
    Ok(top1_of(&logits, &batch.labels))
}

/// Top-1 of the member-averaged softmax probabilities.
pub fn ensemble_eval(spec: &NetworkSpec, members: &[ParamSet], batch: &Batch) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least 2 members, got {}",
            members.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty batch".into()));
    }
    batch.check_labels(spec.n_classes)?;
    let mut sum = Tensor2D::zeros(batch.len(), spec.n_classes);
    for (m, params) in members.iter().enumerate() {
        params
            .check_matches(spec)
            .map_err(|e| Error::Shape(format!("ensemble member {m}: {e}")))?;
        let probs = nn::softmax(&nn::predict(spec, params, &batch.inputs)?);
        for (s, p) in sum.as_mut_slice().iter_mut().zip(probs.as_slice()) {
            *s += p;
        }
    }
    let n = members.len() as f64;
    sum.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(top1_of(&sum, &batch.labels))
}

/// Everything a fine-tuning trial starts from.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub spec: NetworkSpec,
    pub init: ParamSet,
    pub lr_map: LrMap,
    pub reg_plan: RegPlan,
}

/// Applies `plan` to `checkpoint` for a target with `n_classes` classes.
pub fn prepare_trial(
    checkpoint: &Checkpoint,
    plan: &FineTunePlan,
    n_classes: usize,
    seed: u64,
) -> Result<TrialSetup> {
    let n_blocks = checkpoint.n_blocks();
    let lr_map = build_lr_map(plan, n_blocks)?;
    let spec = checkpoint.spec.with_classes(n_classes);
    let init = reinit_top_layers(checkpoint, plan.reinit_count, n_classes, seed)?;
    let anchors = (plan.l2sp_layer_count > 0).then(|| checkpoint.params.clone());
    let reg_plan = make_reg_plan(n_blocks, plan.l2sp_layer_count, plan.alpha, plan.beta, anchors)?;
    Ok(TrialSetup {
        spec,
        init,
        lr_map,
        reg_plan,
    })
}

/// Outcome of one training trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub dataset: String,
    pub plan_index: usize,
    pub run_index: usize,
    pub plan: FineTunePlan,
    pub config: TrainConfig,
    pub seed: u64,
    pub history: Vec<EpochStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_val_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_test_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn without_timing(mut self) -> Self {
        self.wall_time = None;
        self
    }
}

/// A finished trial: its record and, if it succeeded, the trained parameters.
#[derive(Debug, Clone)]
pub struct Trial {
    pub record: RunRecord,
    pub params: Option<ParamSet>,
}

/// Fine-tunes `checkpoint` on `dataset` under `plan` with `trial_seed`
/// driving both re-initialization and shuffling. Training failures are
/// captured in the record; only invalid inputs are returned as errors.
pub fn run_trial(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    plan: &FineTunePlan,
    config: &TrainConfig,
    trial_seed: u64,
    evaluate_test: bool,
) -> Result<Trial> {
    let start = Instant::now();
    let setup = prepare_trial(checkpoint, plan, dataset.n_classes, trial_seed)?;
    let config = config.with_seed(trial_seed);
    let mut record = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        plan_index: 0,
        run_index: 0,
        plan: plan.clone(),
        config: config.clone(),
        seed: trial_seed,
        history: Vec::new(),
        final_val_top1: None,
        final_test_top1: None,
        error: None,
        wall_time: None,
        config_digest: None,
    };
    let outcome = sgd_train(
        &setup.spec,
        &setup.init,
        &setup.lr_map,
        &setup.reg_plan,
        &config,
        dataset,
    );
    let params = match outcome {
        Ok((params, history)) => {
            record.history = history;
            record.final_val_top1 = val_top1(&setup.spec, &params, &dataset.val)?;
            if evaluate_test {
                record.final_test_top1 = Some(evaluate_top1(&setup.spec, &params, &dataset.test)?);
            }
            Some(params)
        }
        Err(e @ Error::Divergence { .. }) => {
            record.error = Some(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    record.wall_time = Some(start.elapsed().as_secs_f64());
    Ok(Trial { record, params })
}

/// Trial seed for `plan` under `base_seed`: depends on the plan's contents,
/// not its position, so reordering or extending a grid leaves other trials
/// untouched.
pub fn trial_seed(base_seed: u64, plan: &FineTunePlan, run_index: usize) -> u64 {
    seed::mix(base_seed, &[plan.fingerprint(), run_index as u64])
}

/// Fresh classifier on frozen pre-trained blocks; returns validation top-1.
pub fn fixed_feature_probe(
    checkpoint: &Checkpoint,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    head_lr: f64,
) -> Result<f64> {
    let n_blocks = checkpoint.n_blocks();
    let spec = checkpoint.spec.with_classes(dataset.n_classes);
    let init = reinit_top_layers(checkpoint, 1, dataset.n_classes, config.seed)?;
    let mut rates = vec![0.0; n_blocks];
    rates[n_blocks - 1] = head_lr;
    let (params, _) = sgd_train(
        &spec,
        &init,
        &LrMap(rates),
        &RegPlan::none(n_blocks),
        config,
        dataset,
    )?;
    evaluate_top1(&spec, &params, &dataset.val)
}

/// Full network from random initialization at one rate; returns validation top-1.
pub fn scratch_probe(
    spec: &NetworkSpec,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let spec = spec.with_classes(dataset.n_classes);
    let init = nn::init_params(&spec, config.seed);
    let (params, _) = sgd_train(
        &spec,
        &init,
        &LrMap::uniform(spec.n_blocks(), lr),
        &RegPlan::none(spec.n_blocks()),
        config,
        dataset,
    )?;
    evaluate_top1(&spec, &params, &dataset.val)
}

/// Index of the best successful record: highest validation top-1, then
/// lower `high_lr`, then lower `reinit_count`, then earlier position.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(val) = r.final_val_top1.filter(|_| r.succeeded()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &records[b];
                let cur_val = cur.final_val_top1.expect("best has a score");
                val > cur_val
                    || (val == cur_val
                        && (r.plan.high_lr, r.plan.reinit_count) < (cur.plan.high_lr, cur.plan.reinit_count))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// One per plan, in plan order. Only the best record carries a test score.
    pub records: Vec<RunRecord>,
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_plan(&self) -> Option<&FineTunePlan> {
        self.best.map(|b| &self.records[b].plan)
    }

    pub fn best_record(&self) -> Option<&RunRecord> {
        self.best.map(|b| &self.records[b])
    }
}

/// Runs every plan once and selects the best on validation accuracy.
/// The winner alone is scored on the test split.
pub fn grid_search(
    checkpoint: &Checkpoint,
    plans: &[FineTunePlan],
    config: &TrainConfig,
    dataset: &LabeledDataset,
    parallelism: usize,
) -> Result<GridResult> {
    if plans.is_empty() {
        return Err(Error::InvalidArgument("empty plan grid".into()));
    }
    config.validate()?;
    let run = |(i, plan): (usize, &FineTunePlan)| -> Result<Trial> {
        let mut trial = run_trial(checkpoint, dataset, plan, config, trial_seed(config.seed, plan, 0), false)?;
        trial.record.plan_index = i;
        Ok(trial)
    };
    let trials: Vec<Trial> = if parallelism <= 1 {
        plans.iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| plans.par_iter().enumerate().map(run).collect::<Result<_>>())?
    };
    let mut records: Vec<RunRecord> = trials.iter().map(|t| t.record.clone()).collect();
    let best = select_best(&records);
    if let Some(b) = best {
        let spec = checkpoint.spec.with_classes(dataset.n_classes);
        let params = trials[b].params.as_ref().expect("best trial succeeded");
        records[b].final_test_top1 = Some(evaluate_top1(&spec, params, &dataset.test)?);
    }
    Ok(GridResult { records, best })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct RepeatedRuns {
    pub records: Vec<RunRecord>,
    pub params: Vec<ParamSet>,
    pub mean_test_top1: f64,
    pub std_test_top1: f64,
}

/// `n` runs of `plan` with seeds `config.seed + 0 .. n - 1`.
pub fn repeated_runs(
    checkpoint: &Checkpoint,
    plan: &FineTunePlan,
    config: &TrainConfig,
    dataset: &LabeledDataset,
    n: usize,
) -> Result<RepeatedRuns> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {n}")));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| config.seed.wrapping_add(i)).collect();
    repeated_runs_with_seeds(checkpoint, plan, config, dataset, &seeds)
}

/// Repeated runs with explicit trial seeds.
pub fn repeated_runs_with_seeds(
    checkpoint: &Checkpoint,
    plan: &FineTunePlan,
    config: &TrainConfig,
    dataset: &LabeledDataset,
    seeds: &[u64],
) -> Result<RepeatedRuns> {
    let mut records = Vec::with_capacity(seeds.len());
    let mut params = Vec::with_capacity(seeds.len());
    for (i, &s) in seeds.iter().enumerate() {
        let trial = run_trial(checkpoint, dataset, plan, config, s, true)?;
        if let Some(err) = &trial.record.error {
            return Err(Error::Divergence {
                epoch: trial.record.history.len(),
                reason: format!("run {i}: {err}"),
            });
        }
        let mut record = trial.record;
        record.run_index = i;
        records.push(record);
        params.push(trial.params.expect("successful trial"));
    }
    let tests: Vec<f64> = records
        .iter()
        .map(|r| r.final_test_top1.expect("evaluated"))
        .collect();
    let (mean, std) = mean_std(&tests);
    Ok(RepeatedRuns {
        records,
        params,
        mean_test_top1: mean,
        std_test_top1: std,
    })
}

pub fn write_records(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(RECORD_SCHEMA_VERSION as u64) {
            return Err(Error::Schema {
                line: i as u64 + 1,
                found: version,
                expected: RECORD_SCHEMA_VERSION,
            });
        }
        records.push(serde_json::from_value(value)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_source, gen_target, SyntheticSpec};
    use crate::nn::{init_params, Activation, Block};
    use std::collections::BTreeMap;

    fn spec_small() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 4,
            latent_dim: 4,
            input_dim: 8,
            samples_per_class: 30,
            noise_sigma: 0.3,
            mixing_depth: 2,
            train_per_class: 15,
            val_per_class: 5,
            prototype_scale: 1.0,
            mixing_gain: 1.5,
            ..SyntheticSpec::default_source()
        }
    }

    fn net() -> NetworkSpec {
        NetworkSpec::new(8, vec![10, 8], 4, Activation::Relu).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            batch_size: 8,
            momentum: 0.9,
            lr_schedule: LrSchedule::Constant,
            seed: 3,
            eval_every: 2,
        }
    }

    fn checkpoint() -> (Checkpoint, LabeledDataset) {
        let (src, mixing) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let (params, _) = sgd_train(
            &spec,
            &init_params(&spec, 1),
            &LrMap::uniform(3, 0.05),
            &RegPlan::none(3),
            &config(),
            &src,
        )
        .unwrap();
        let target_spec = SyntheticSpec {
            n_classes: 3,
            ..spec_small()
        };
        let target = gen_target(&target_spec, &mixing, 1.0, 2).unwrap();
        (Checkpoint::new(spec, params, BTreeMap::new()).unwrap(), target)
    }

    #[test]
    fn zero_rates_leave_params_unchanged() {
        let (src, _) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let init = init_params(&spec, 5);
        let (params, history) = sgd_train(
            &spec,
            &init,
            &LrMap::uniform(3, 0.0),
            &RegPlan::none(3),
            &config(),
            &src,
        )
        .unwrap();
        assert_eq!(params, init);
        assert_eq!(history.len(), 3);
        assert!(history.windows(2).all(|w| w[0].train_loss == w[1].train_loss));
    }

    #[test]
    fn frozen_blocks_are_bit_identical() {
        let (src, _) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let init = init_params(&spec, 5);
        let anchors = init_params(&spec, 6);
        let reg = make_reg_plan(3, 2, 0.1, 0.1, Some(anchors)).unwrap();
        let (params, _) = sgd_train(&spec, &init, &LrMap(vec![0.0, 0.05, 0.05]), &reg, &config(), &src).unwrap();
        assert_eq!(params.blocks[0], init.blocks[0]);
        assert_ne!(params.blocks[1], init.blocks[1]);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (src, _) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let run = || {
            sgd_train(
                &spec,
                &init_params(&spec, 5),
                &LrMap::uniform(3, 0.05),
                &RegPlan::none(3),
                &config(),
                &src,
            )
            .unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap().train_loss < ha[0].train_loss);
        assert!(evaluate_top1(&spec, &a, &src.test).unwrap() > 60.0);
    }

    #[test]
    fn history_length_is_epochs_over_eval_every() {
        let (src, _) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let mut cfg = config();
        cfg.epochs = 7;
        cfg.eval_every = 3;
        cfg.lr_schedule = LrSchedule::Cosine;
        let (_, h) = sgd_train(&spec, &init_params(&spec, 1), &LrMap::uniform(3, 0.01), &RegPlan::none(3), &cfg, &src).unwrap();
        assert_eq!(h.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![3, 6]);
    }

    #[test]
    fn huge_rate_diverges_with_epoch() {
        let (src, _) = gen_source(&spec_small(), 1).unwrap();
        let spec = net();
        let err = sgd_train(&spec, &init_params(&spec, 1), &LrMap::uniform(3, 1e6), &RegPlan::none(3), &config(), &src)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch, .. } if epoch >= 1));
    }

    #[test]
    fn pure_penalty_contracts_geometrically() {
        let spec = net();
        let anchors = init_params(&spec, 1);
        let mut params = init_params(&spec, 2);
        let (lr, alpha) = (0.1, 0.5);
        let reg = make_reg_plan(3, 3, alpha, 0.0, Some(anchors.clone())).unwrap();
        let mut opt = Sgd::new(&params, 0.0);
        let dist = |p: &ParamSet| -> f64 {
            p.blocks
                .iter()
                .zip(&anchors.blocks)
                .flat_map(|(a, b)| a.values().zip(b.values()).map(|(x, y)| (x - y) * (x - y)))
                .sum::<f64>()
                .sqrt()
        };
        for _ in 0..5 {
            let before = dist(&params);
            let g = regularizers::reg_grad(&params, &reg).unwrap();
            opt.step(&mut params, &g, &[lr; 3], 1.0);
            let ratio = dist(&params) / before;
            assert!((ratio - (1.0 - lr * alpha)).abs() < 1e-12, "{ratio}");
        }
    }

    #[test]
    fn top1_conventions() {
        let spec = NetworkSpec::new(2, vec![2], 3, Activation::Relu).unwrap();
        let params = ParamSet::zeros(&spec);
        let batch = Batch::new(Tensor2D::zeros(5, 2), vec![0; 5]).unwrap();
        assert_eq!(evaluate_top1(&spec, &params, &batch).unwrap(), 100.0);
        let batch = Batch::new(Tensor2D::zeros(4, 2), vec![0, 1, 2, 0]).unwrap();
        assert_eq!(evaluate_top1(&spec, &params, &batch).unwrap(), 50.0);
        let empty = Batch {
            inputs: Tensor2D::zeros(0, 2),
            labels: vec![],
        };
        assert!(evaluate_top1(&spec, &params, &empty).is_err());
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn fixed_predictor_on_random_labels_is_near_chance() {
        // Binomial(2000, 0.1): sd = sqrt(2000 * 0.09) / 20 = 0.67 points.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let spec = NetworkSpec::new(1, vec![1], 10, Activation::Relu).unwrap();
        let mut params = ParamSet::zeros(&spec);
        params.blocks[1].bias[3] = 1.0;
        let labels: Vec<usize> = (0..2000).map(|_| rng.random_range(0..10)).collect();
        let batch = Batch::new(Tensor2D::zeros(2000, 1), labels).unwrap();
        let acc = evaluate_top1(&spec, &params, &batch).unwrap();
        assert!((acc - 10.0).abs() < 3.0, "{acc}");
    }

    #[test]
    fn ensemble_of_identical_members_matches_single() {
        let (ck, target) = checkpoint();
        let trial = run_trial(&ck, &target, &FineTunePlan::uniform(0.02, 0.0), &config(), 4, true).unwrap();
        let params = trial.params.unwrap();
        let spec = ck.spec.with_classes(target.n_classes);
        let single = evaluate_top1(&spec, &params, &target.test).unwrap();
        let ens = ensemble_eval(&spec, &[params.clone(), params.clone()], &target.test).unwrap();
        assert_eq!(single, ens);
        assert!(ensemble_eval(&spec, std::slice::from_ref(&params), &target.test).is_err());
        let wrong = init_params(&ck.spec, 0);
        assert!(ensemble_eval(&spec, &[params, wrong], &target.test).is_err());
    }

    #[test]
    fn ensemble_member_order_irrelevant() {
        let spec = net();
        let members: Vec<ParamSet> = (0..3).map(|s| init_params(&spec, s)).collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let batch = nn::random_batch(&mut rng, 50, 8, 4);
        let a = ensemble_eval(&spec, &members, &batch).unwrap();
        let rev: Vec<ParamSet> = members.iter().rev().cloned().collect();
        assert_eq!(a, ensemble_eval(&spec, &rev, &batch).unwrap());
    }

    #[test]
    fn probes_match_explicit_training() {
        let (ck, target) = checkpoint();
        let cfg = config();
        let probe = fixed_feature_probe(&ck, &target, &cfg, 0.05).unwrap();
        let spec = ck.spec.with_classes(3);
        let init = reinit_top_layers(&ck, 1, 3, cfg.seed).unwrap();
        let (params, _) = sgd_train(&spec, &init, &LrMap(vec![0.0, 0.0, 0.05]), &RegPlan::none(3), &cfg, &target).unwrap();
        assert_eq!(probe, evaluate_top1(&spec, &params, &target.val).unwrap());

        let a = scratch_probe(&ck.spec, &target, &cfg, 0.05).unwrap();
        let b = scratch_probe(&ck.spec, &target, &cfg, 0.05).unwrap();
        assert_eq!(a, b);
    }

    fn record(val: Option<f64>, lr: f64, k: usize) -> RunRecord {
        let mut plan = FineTunePlan::uniform(lr, 0.0);
        plan.reinit_count = k;
        RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            dataset: "t".into(),
            plan_index: 0,
            run_index: 0,
            plan,
            config: TrainConfig::default(),
            seed: 0,
            history: vec![],
            final_val_top1: val,
            final_test_top1: None,
            error: None,
            wall_time: None,
            config_digest: None,
        }
    }

    #[test]
    fn best_selection_tie_breaks() {
        assert_eq!(select_best(&[record(Some(50.0), 0.1, 1)]), Some(0));
        let recs = [
            record(Some(80.0), 0.1, 2),
            record(Some(80.0), 0.01, 3),
            record(Some(80.0), 0.01, 2),
            record(Some(80.0), 0.01, 2),
            record(None, 0.001, 1),
        ];
        assert_eq!(select_best(&recs), Some(2));
        let mut diverged = record(Some(99.0), 0.1, 1);
        diverged.error = Some("boom".into());
        assert_eq!(select_best(&[diverged, record(Some(10.0), 0.1, 1)]), Some(1));
    }

    #[test]
    fn grid_is_parallel_invariant_and_contains_divergence() {
        let (ck, target) = checkpoint();
        let plans = vec![
            FineTunePlan::uniform(0.01, 0.0),
            FineTunePlan::uniform(1e7, 0.0),
            FineTunePlan::uniform(0.03, 0.001),
            FineTunePlan::uniform(0.01, 0.0),
        ];
        let serial = grid_search(&ck, &plans, &config(), &target, 1).unwrap();
        let parallel = grid_search(&ck, &plans, &config(), &target, 4).unwrap();
        let strip = |g: &GridResult| g.records.iter().cloned().map(RunRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&serial), strip(&parallel));
        assert_eq!(serial.best, parallel.best);
        assert!(serial.records[1].error.is_some());
        assert!(serial.records[0].succeeded() && serial.records[2].succeeded());
        // Duplicate plans train identically; the first one wins ties.
        assert_eq!(serial.records[0].final_val_top1, serial.records[3].final_val_top1);
        assert_ne!(serial.best, Some(3));
        let best = serial.best.unwrap();
        for (i, r) in serial.records.iter().enumerate() {
            assert_eq!(r.final_test_top1.is_some(), i == best);
        }
    }

    #[test]
    fn repeated_runs_protocol() {
        let (ck, target) = checkpoint();
        let plan = FineTunePlan::uniform(0.02, 0.0);
        let runs = repeated_runs(&ck, &plan, &config(), &target, DEFAULT_RUNS).unwrap();
        assert_eq!(runs.records.len(), 4);
        let seeds: Vec<u64> = runs.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![3, 4, 5, 6]);
        let same = repeated_runs_with_seeds(&ck, &plan, &config(), &target, &[9, 9, 9]).unwrap();
        assert_eq!(same.std_test_top1, 0.0);
        assert!(repeated_runs(&ck, &plan, &config(), &target, 1).is_err());
    }

    #[test]
    fn mean_std_is_population_and_order_free() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((m, s), (5.0, 2.0));
        let (m2, _) = mean_std(&[9.0, 7.0, 5.0, 5.0, 4.0, 4.0, 4.0, 2.0]);
        assert_eq!(m, m2);
    }

    #[test]
    fn records_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut r = record(Some(12.5), 0.01, 1);
        r.history.push(EpochStat {
            epoch: 1,
            train_loss: 0.1 + 0.2,
            val_top1: Some(33.3),
        });
        write_records(&path, &[r.clone(), r.clone()]).unwrap();
        assert_eq!(read_records(&path).unwrap(), vec![r.clone(), r.clone()]);

        let mut v = serde_json::to_value(&r).unwrap();
        v["schema_version"] = 99.into();
        std::fs::write(&path, format!("{v}\n")).unwrap();
        assert!(matches!(read_records(&path), Err(Error::Schema { line: 1, found: Some(_), expected: 1 })));
    }

    #[test]
    fn sgd_skips_zero_rate_blocks() {
        let spec = net();
        let mut params = init_params(&spec, 1);
        let before = params.clone();
        let mut grads = ParamSet::zeros(&spec);
        grads.blocks[0] = Block {
            weights: Tensor2D::from_vec(10, 8, vec![f64::NAN; 80]).unwrap_or_else(|_| before.blocks[0].weights.clone()),
            bias: vec![1.0; 10],
        };
        let mut opt = Sgd::new(&params, 0.9);
        opt.step(&mut params, &grads, &[0.0, 0.1, 0.1], 1.0);
        assert_eq!(params.blocks[0], before.blocks[0]);
    }
}
