//! Synthetic regime study: pre-train on a source task, then compare
//! fine-tuning strategies on a related (`theta = 1`) and an unrelated
//! (`theta = 0`) target.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{gen_source, gen_target, LabeledDataset, Mixing, SyntheticSpec};
use crate::error::{Error, Result};
use crate::harness::{
    self, fixed_feature_probe, run_trial, scratch_probe, sgd_train, RunRecord, TrainConfig,
};
use crate::metrics::{transfer_gap, DomainMeasures};
use crate::nn::{init_params, Activation, NetworkSpec};
use crate::recommender::{low_rate_for, propose_plans, regime_for_gap, Regime};
use crate::regularizers::make_reg_plan;
use crate::seed;
use crate::transfer::{Checkpoint, FineTunePlan, LrMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub source: SyntheticSpec,
    pub target: SyntheticSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub pretrain: TrainConfig,
    pub pretrain_lr: f64,
    pub pretrain_beta: f64,
    pub finetune: TrainConfig,
    pub lr_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    /// Trials averaged per plan.
    pub runs: usize,
    /// Accuracy points the pruned optimum may trail the full optimum by.
    pub tolerance: f64,
    pub parallelism: usize,
}

impl Default for StudyConfig {
    /// Six class-bearing latent coordinates plus ten nuisance ones; a
    /// 100-class source and a 10-shot, 10-class target.
    fn default() -> Self {
        let source = SyntheticSpec {
            n_classes: 100,
            latent_dim: 6,
            input_dim: 64,
            samples_per_class: 120,
            noise_sigma: 0.5,
            mixing_depth: 2,
            train_per_class: 80,
            val_per_class: 10,
            prototype_scale: 1.0,
            mixing_gain: 2.0,
            nuisance_dim: 10,
            nuisance_sigma: 1.0,
        };
        let target = SyntheticSpec {
            n_classes: 10,
            samples_per_class: 80,
            train_per_class: 10,
            val_per_class: 40,
            ..source.clone()
        };
        Self {
            source,
            target,
            hidden: vec![64, 64, 64, 64],
            activation: Activation::Relu,
            pretrain: TrainConfig {
                epochs: 20,
                batch_size: 32,
                momentum: 0.9,
                lr_schedule: harness::LrSchedule::Cosine,
                seed: 0,
                eval_every: 5,
            },
            pretrain_lr: 0.02,
            pretrain_beta: 1e-4,
            finetune: TrainConfig {
                epochs: 30,
                batch_size: 16,
                momentum: 0.9,
                lr_schedule: harness::LrSchedule::Cosine,
                seed: 0,
                eval_every: 5,
            },
            lr_grid: vec![0.001, 0.0025, 0.005, 0.01, 0.02, 0.04, 0.08, 0.16],
            alpha_grid: vec![0.1, 0.3],
            beta_grid: vec![0.0001, 0.001],
            runs: 4,
            tolerance: 1.0,
            parallelism: 1,
        }
    }
}

impl StudyConfig {
    pub fn network(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(
            self.source.input_dim,
            self.hidden.clone(),
            self.source.n_classes,
            self.activation,
        )
    }

    /// The configured hidden blocks sized for `data` rather than the source spec.
    pub fn network_for(&self, data: &LabeledDataset) -> Result<NetworkSpec> {
        NetworkSpec::new(data.dim(), self.hidden.clone(), data.n_classes, self.activation)
    }
}

/// Mean validation top-1 of a plan over the study's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub plan: FineTunePlan,
    pub val_top1: f64,
}

/// Everything measured on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub theta: f64,
    pub measures: DomainMeasures,
    pub regime: Regime,
    /// Best uniform rate with only the classifier re-initialized.
    pub best_lr: f64,
    pub reinit_one: f64,
    pub reinit_two: f64,
    pub low_lr_lower: f64,
    pub l2sp: f64,
    pub l2: f64,
    pub pruned_best: f64,
    pub full_best: f64,
    pub scores: Vec<PlanScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub related: ArmOutcome,
    pub unrelated: ArmOutcome,
    /// Optimal single rate is lower on the related target.
    pub a: bool,
    /// Re-initializing more than the classifier helps only on the related target.
    pub b: bool,
    /// Slower lower blocks help only on the unrelated target.
    pub c: bool,
    /// Anchoring is at least as good as plain decay on the related target and
    /// worse on the unrelated one.
    pub d: bool,
    /// The regime's pruned grid holds a plan near the full optimum on both targets.
    pub e: bool,
    pub cpu_seconds: f64,
}

/// Source pre-training: returns the checkpoint, the source mixing and the
/// source test top-1.
pub fn pretrain(config: &StudyConfig, seed: u64) -> Result<(Checkpoint, Mixing, f64)> {
    let (source, mixing) = gen_source(&config.source, seed)?;
    let checkpoint = pretrain_on(config, &source, seed)?;
    let acc = harness::evaluate_top1(&checkpoint.spec, &checkpoint.params, &source.test)?;
    Ok((checkpoint, mixing, acc))
}

/// Trains the configured network on `source`. The checkpoint meta carries the
/// seed and the final source validation top-1.
pub fn pretrain_on(config: &StudyConfig, source: &LabeledDataset, seed: u64) -> Result<Checkpoint> {
    let spec = config.network_for(source)?;
    let n = spec.n_blocks();
    let reg = make_reg_plan(n, 0, 0.0, config.pretrain_beta, None)?;
    let (params, _) = sgd_train(
        &spec,
        &init_params(&spec, seed),
        &LrMap::uniform(n, config.pretrain_lr),
        &reg,
        &config.pretrain.with_seed(seed),
        source,
    )?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), seed.to_string());
    if !source.val.is_empty() {
        let val = harness::evaluate_top1(&spec, &params, &source.val)?;
        meta.insert("source_val_top1".to_string(), val.to_string());
    }
    Checkpoint::new(spec, params, meta)
}

struct Evaluator<'a> {
    checkpoint: &'a Checkpoint,
    target: &'a LabeledDataset,
    config: &'a StudyConfig,
    seed: u64,
    cache: BTreeMap<u64, f64>,
    records: Vec<RunRecord>,
    cpu_seconds: f64,
}

impl Evaluator<'_> {
    /// Scores every plan not yet scored, in parallel when configured.
    fn score_all(&mut self, plans: &[FineTunePlan]) -> Result<()> {
        let mut todo: Vec<&FineTunePlan> = Vec::new();
        for p in plans {
            let fp = p.fingerprint();
            if !self.cache.contains_key(&fp) && !todo.iter().any(|q| q.fingerprint() == fp) {
                todo.push(p);
            }
        }
        let jobs: Vec<(&FineTunePlan, usize)> = todo
            .iter()
            .flat_map(|p| (0..self.config.runs).map(move |r| (*p, r)))
            .collect();
        let (ck, target, cfg, base) = (self.checkpoint, self.target, &self.config.finetune, self.seed);
        let run = |(plan, r): &(&FineTunePlan, usize)| {
            run_trial(ck, target, plan, cfg, harness::trial_seed(base, plan, *r), false).map(|mut t| {
                t.record.run_index = *r;
                t.record
            })
        };
        let records: Vec<RunRecord> = if self.config.parallelism <= 1 {
            jobs.iter().map(run).collect::<Result<_>>()?
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.parallelism)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
        };
        for chunk in records.chunks(self.config.runs) {
            let mean = chunk
                .iter()
                .map(|r| r.final_val_top1.filter(|_| r.succeeded()).unwrap_or(0.0))
                .sum::<f64>()
                / chunk.len() as f64;
            self.cache.insert(chunk[0].plan.fingerprint(), mean);
            self.cpu_seconds += chunk.iter().filter_map(|r| r.wall_time).sum::<f64>();
        }
        self.records.extend(records);
        Ok(())
    }

    fn score(&self, plan: &FineTunePlan) -> f64 {
        self.cache[&plan.fingerprint()]
    }

    /// Best score among `plans`; ties go to the earliest.
    fn best<'p>(&self, plans: &'p [FineTunePlan]) -> (&'p FineTunePlan, f64) {
        let mut best = (&plans[0], self.score(&plans[0]));
        for p in &plans[1..] {
            let s = self.score(p);
            if s > best.1 {
                best = (p, s);
            }
        }
        best
    }
}

fn tolerate_divergence(score: Result<f64>) -> Result<f64> {
    match score {
        Err(Error::Divergence { .. }) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Best validation top-1 over `lr_grid` of the scratch and the fixed-feature
/// probes, as `(scratch, fixed)`. Diverged rates are skipped.
pub fn best_probes(
    checkpoint: &Checkpoint,
    target: &LabeledDataset,
    config: &TrainConfig,
    lr_grid: &[f64],
) -> Result<(f64, f64)> {
    if lr_grid.is_empty() {
        return Err(Error::InvalidArgument("probe learning-rate grid is empty".into()));
    }
    let mut fixed = f64::NEG_INFINITY;
    let mut scratch = f64::NEG_INFINITY;
    for &lr in lr_grid {
        fixed = fixed.max(tolerate_divergence(fixed_feature_probe(checkpoint, target, config, lr))?);
        scratch = scratch.max(tolerate_divergence(scratch_probe(&checkpoint.spec, target, config, lr))?);
    }
    if !(fixed.is_finite() && scratch.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            reason: "every probe rate diverged".into(),
        });
    }
    Ok((scratch, fixed))
}

fn uniform_plan(k: usize, lr: f64) -> FineTunePlan {
    FineTunePlan {
        reinit_count: k,
        ..FineTunePlan::uniform(lr, 0.0)
    }
}

/// Seed of the target task paired with the source drawn from `seed`.
pub fn target_seed(seed: u64) -> u64 {
    seed::mix(seed, &[0x7467_7473])
}

/// Runs both probes and every strategy family on one target.
pub fn run_arm(
    config: &StudyConfig,
    checkpoint: &Checkpoint,
    target: &LabeledDataset,
    theta: f64,
    seed: u64,
) -> Result<(ArmOutcome, Vec<RunRecord>, f64)> {
    let start = Instant::now();
    let n = checkpoint.n_blocks();
    let (scratch, fixed) = best_probes(checkpoint, target, &config.finetune.with_seed(seed), &config.lr_grid)?;
    let gap = transfer_gap(scratch, fixed);
    let regime = regime_for_gap(gap);
    let probe_seconds = start.elapsed().as_secs_f64();

    let mut ev = Evaluator {
        checkpoint,
        target,
        config,
        seed,
        cache: BTreeMap::new(),
        records: Vec::new(),
        cpu_seconds: 0.0,
    };
    let lrs = &config.lr_grid;
    let k1: Vec<FineTunePlan> = lrs.iter().map(|&lr| uniform_plan(1, lr)).collect();
    let k2: Vec<FineTunePlan> = lrs.iter().map(|&lr| uniform_plan(2, lr)).collect();
    let low: Vec<FineTunePlan> = lrs
        .iter()
        .map(|&lr| FineTunePlan {
            low_lr: low_rate_for(lr, lrs),
            low_layer_count: n / 2,
            ..uniform_plan(1, lr)
        })
        .collect();
    ev.score_all(&k1)?;
    let (best_k1, reinit_one) = ev.best(&k1);
    let best_lr = best_k1.high_lr;

    // One strength grid each, so neither family gets more draws.
    let head_beta = config.beta_grid[0];
    let l2sp: Vec<FineTunePlan> = config
        .alpha_grid
        .iter()
        .map(|&alpha| FineTunePlan {
            l2sp_layer_count: n - 1,
            alpha,
            beta: head_beta,
            ..uniform_plan(1, best_lr)
        })
        .collect();
    let l2: Vec<FineTunePlan> = config
        .beta_grid
        .iter()
        .map(|&beta| FineTunePlan {
            beta,
            ..uniform_plan(1, best_lr)
        })
        .collect();
    let anchored = propose_plans(Regime::Anchored, n, lrs, &config.alpha_grid, &config.beta_grid)?;
    let adapted = propose_plans(Regime::Adapted, n, lrs, &config.alpha_grid, &config.beta_grid)?;
    for family in [&k2, &low, &l2sp, &l2, &anchored, &adapted] {
        ev.score_all(family)?;
    }

    let pruned = match regime {
        Regime::Anchored => &anchored,
        Regime::Adapted => &adapted,
    };
    let all: Vec<FineTunePlan> = [&k1, &k2, &low, &l2sp, &l2, &anchored, &adapted]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    let outcome = ArmOutcome {
        theta,
        measures: DomainMeasures {
            scratch_top1: Some(scratch),
            fixed_top1: Some(fixed),
            gap: Some(gap),
            ..Default::default()
        },
        regime,
        best_lr,
        reinit_one,
        reinit_two: ev.best(&k2).1,
        low_lr_lower: ev.best(&low).1,
        l2sp: ev.best(&l2sp).1,
        l2: ev.best(&l2).1,
        pruned_best: ev.best(pruned).1,
        full_best: ev.best(&all).1,
        scores: ev
            .records
            .iter()
            .filter(|r| r.run_index == 0)
            .map(|r| PlanScore {
                plan: r.plan.clone(),
                val_top1: ev.score(&r.plan),
            })
            .collect(),
    };
    let cpu = probe_seconds + ev.cpu_seconds;
    Ok((outcome, ev.records, cpu))
}

/// One seed of the study: pre-training plus both targets.
pub fn run_seed(config: &StudyConfig, seed: u64) -> Result<(SeedOutcome, Vec<RunRecord>)> {
    let start = Instant::now();
    let (checkpoint, mixing, _) = pretrain(config, seed)?;
    let pretrain_seconds = start.elapsed().as_secs_f64();
    let target_seed = target_seed(seed);
    let mut records = Vec::new();
    let mut cpu = pretrain_seconds;
    let mut arm = |theta: f64| -> Result<ArmOutcome> {
        let mut target = gen_target(&config.target, &mixing, theta, target_seed)?;
        target.name = format!("theta={theta}");
        let (outcome, recs, secs) = run_arm(config, &checkpoint, &target, theta, seed)?;
        records.extend(recs);
        cpu += secs;
        Ok(outcome)
    };
    let related = arm(1.0)?;
    let unrelated = arm(0.0)?;
    let a = related.best_lr < unrelated.best_lr;
    let b = related.reinit_two > related.reinit_one && unrelated.reinit_two <= unrelated.reinit_one;
    let c = unrelated.low_lr_lower > unrelated.reinit_one && related.low_lr_lower <= related.reinit_one;
    let d = related.l2sp >= related.l2 && unrelated.l2 > unrelated.l2sp;
    let e = [&related, &unrelated]
        .iter()
        .all(|arm| arm.pruned_best >= arm.full_best - config.tolerance);
    Ok((
        SeedOutcome {
            seed,
            related,
            unrelated,
            a,
            b,
            c,
            d,
            e,
            cpu_seconds: cpu,
        },
        records,
    ))
}

/// The five regime properties, in reporting order.
pub const PROPERTIES: [&str; 5] = ["a", "b", "c", "d", "e"];

impl SeedOutcome {
    pub fn properties(&self) -> [bool; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub seeds: Vec<SeedOutcome>,
    /// Seeds on which each property held, indexed like [`PROPERTIES`].
    pub counts: [usize; 5],
    pub cpu_seconds: f64,
}

impl StudySummary {
    /// Strict majority of seeds.
    pub fn majority(&self, property: usize) -> bool {
        2 * self.counts[property] > self.seeds.len()
    }
}

/// Runs every seed in order and tallies the properties.
pub fn regime_study(config: &StudyConfig, seeds: &[u64]) -> Result<(StudySummary, Vec<RunRecord>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("regime study needs at least one seed".into()));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    let mut records = Vec::new();
    let mut counts = [0usize; 5];
    let mut cpu = 0.0;
    for &s in seeds {
        let (outcome, recs) = run_seed(config, s)?;
        for (c, held) in counts.iter_mut().zip(outcome.properties()) {
            *c += usize::from(held);
        }
        cpu += outcome.cpu_seconds;
        outcomes.push(outcome);
        records.extend(recs);
    }
    Ok((
        StudySummary {
            seeds: outcomes,
            counts,
            cpu_seconds: cpu,
        },
        records,
    ))
}
