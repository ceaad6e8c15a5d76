use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nbtl::datasets::{gen_source, gen_target, LabeledDataset};
use nbtl::harness::{ensemble_eval, grid_search, read_records, repeated_runs, write_records, RunRecord};
use nbtl::metrics::{
    centroid_emd, default_ridge, extract_features, fisher_score, penultimate_block,
    similarity_from_distance, DomainMeasures,
};
use nbtl::recommender::recommend;
use nbtl::report::{fmt_mean_std, write_report};
use nbtl::study::{best_probes, pretrain_on, regime_study, target_seed, PROPERTIES};
use nbtl::transfer::{load_checkpoint, save_checkpoint, validate_plan, Checkpoint};
use nbtl::{Error, FineTunePlan};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{Command, Failure};

type Outcome = Result<(), Failure>;

pub fn run(command: Command, seed: Option<u64>) -> Outcome {
    match command {
        Command::Config { config } => {
            let cfg = ExperimentConfig::resolve(config.as_deref(), seed)?;
            print!("# sha256 {}\n{}", cfg.digest(), cfg.canonical());
            Ok(())
        }
        Command::GenData { spec, theta, out } => gen_data(&ExperimentConfig::resolve(spec.as_deref(), seed)?, theta, &out),
        Command::Pretrain { data, config, out } => {
            pretrain(&ExperimentConfig::resolve(config.as_deref(), seed)?, &data, &out)
        }
        Command::Probe { ckpt, data, config, out } => {
            probe(&ExperimentConfig::resolve(config.as_deref(), seed)?, &ckpt, &data, out.as_deref())
        }
        Command::Recommend { measures, ckpt, config, out } => recommend_cmd(
            &ExperimentConfig::resolve(config.as_deref(), seed)?,
            &measures,
            ckpt.as_deref(),
            out.as_deref(),
        ),
        Command::Grid { ckpt, data, plans, jobs, config, out, timing } => {
            let cfg = ExperimentConfig::resolve(config.as_deref(), seed)?;
            let jobs = jobs.unwrap_or(cfg.jobs);
            if jobs == 0 {
                return Err(Failure::Config("--jobs must be >= 1".into()));
            }
            grid(&cfg, &ckpt, &data, &plans, jobs, &out, timing)
        }
        Command::Finetune { ckpt, data, plan, runs, config, out, timing } => finetune(
            &ExperimentConfig::resolve(config.as_deref(), seed)?,
            &ckpt,
            &data,
            &plan,
            runs,
            &out,
            timing,
        ),
        Command::Report { records, out } => report(&records, &out),
        Command::Study { config, seeds, out, timing } => {
            study(&ExperimentConfig::resolve(config.as_deref(), seed)?, &seeds, &out, timing)
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::from(e).context(&path.display().to_string())
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Config(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_data(dir: &Path, prefix: &str) -> Result<LabeledDataset, Failure> {
    LabeledDataset::load_splits(dir, prefix).map_err(with_path(dir))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(with_path(path))
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_digest: String,
    seed: u64,
    target_seed: u64,
    theta: f64,
    /// `source` when the target reuses the source mixing exactly,
    /// `independent` when it shares nothing, `interpolated` otherwise.
    target_mixing: &'static str,
    source_spec: &'a nbtl::datasets::SyntheticSpec,
    target_spec: &'a nbtl::datasets::SyntheticSpec,
    files: BTreeMap<String, String>,
}

fn gen_data(cfg: &ExperimentConfig, theta: f64, out: &Path) -> Outcome {
    let (source, mixing) = gen_source(&cfg.source, cfg.seed)?;
    let t_seed = target_seed(cfg.seed);
    let target = gen_target(&cfg.target, &mixing, theta, t_seed)?;
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut files = BTreeMap::new();
    for (ds, prefix) in [(&source, "source"), (&target, "target")] {
        for path in ds.save_splits(out, prefix).map_err(with_path(out))? {
            let name = path.file_name().expect("file path").to_string_lossy().into_owned();
            files.insert(name, sha256_file(&path)?);
        }
    }
    let manifest = Manifest {
        config_digest: cfg.digest(),
        seed: cfg.seed,
        target_seed: t_seed,
        theta,
        target_mixing: if theta == 1.0 {
            "source"
        } else if theta == 0.0 {
            "independent"
        } else {
            "interpolated"
        },
        source_spec: &cfg.source,
        target_spec: &cfg.target,
        files,
    };
    write_json(Some(&out.join("manifest.json")), &manifest)?;
    println!("wrote {} source and {} target training rows to {}", source.train.len(), target.train.len(), out.display());
    Ok(())
}

fn pretrain(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Outcome {
    let source = load_data(data, "source")?;
    let mut ck = pretrain_on(&cfg.study(), &source, cfg.seed)?;
    ck.meta.insert("config_digest".into(), cfg.digest());
    save_checkpoint(out, &ck).map_err(with_path(out))?;
    match ck.meta.get("source_val_top1") {
        Some(v) => println!("source val top-1: {v}"),
        None => println!("source val top-1: n/a (empty validation split)"),
    }
    Ok(())
}

fn probe(cfg: &ExperimentConfig, ckpt: &Path, data: &Path, out: Option<&Path>) -> Outcome {
    let ck = load_ckpt(ckpt)?;
    let target = load_data(data, "target")?;
    let (scratch, fixed) = best_probes(&ck, &target, &cfg.finetune_config(), &cfg.lr_grid)?;
    let mut m = DomainMeasures::from_probes(scratch, fixed);
    let block = penultimate_block(&ck.spec);
    let tf = extract_features(&ck.spec, &ck.params, &target.train, block)?;
    let ridge = default_ridge(&tf)?;
    match fisher_score(&tf, ridge) {
        Ok(f) => {
            m.fisher = Some(f);
            m.fisher_ridge = Some(ridge);
        }
        Err(e @ Error::Conditioning { .. }) => eprintln!("nbtl: fisher score skipped: {e}"),
        Err(e) => return Err(e.into()),
    }
    if data.join("source.train.csv").exists() {
        let source = load_data(data, "source")?;
        let sf = extract_features(&ck.spec, &ck.params, &source.train, block)?;
        let d = centroid_emd(&sf, &tf)?;
        m.emd_distance = Some(d);
        m.emd_similarity = Some(similarity_from_distance(d, cfg.gamma));
        m.gamma = Some(cfg.gamma);
    } else {
        eprintln!("nbtl: no source splits under {}; EMD similarity skipped", data.display());
    }
    m.feature_block = Some(block);
    m.config_digest = Some(cfg.digest());
    write_json(out, &m)
}

fn recommend_cmd(cfg: &ExperimentConfig, measures: &Path, ckpt: Option<&Path>, out: Option<&Path>) -> Outcome {
    let m = DomainMeasures::load(measures).map_err(with_path(measures))?;
    let n_blocks = match ckpt {
        Some(p) => load_ckpt(p)?.n_blocks(),
        None => cfg.hidden.len() + 1,
    };
    let rec = recommend(&m, n_blocks, &cfg.lr_grid, &cfg.alpha_grid, &cfg.beta_grid)?;
    let mut value = serde_json::to_value(&rec).map_err(|e| Failure::Config(e.to_string()))?;
    value["config_digest"] = Value::String(cfg.digest());
    write_json(out, &value)
}

/// A plan array, or any object with a `plans` array (a recommendation).
fn read_plans(path: &Path, n_blocks: usize) -> Result<Vec<FineTunePlan>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let bad = |m: String| Failure::Config(format!("{}: {m}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let list = match value {
        Value::Array(_) => value,
        Value::Object(mut o) => o.remove("plans").ok_or_else(|| bad("object has no 'plans' array".into()))?,
        _ => return Err(bad("expected a plan array or a recommendation".into())),
    };
    let plans: Vec<FineTunePlan> = serde_json::from_value(list).map_err(|e| bad(e.to_string()))?;
    if plans.is_empty() {
        return Err(bad("no plans".into()));
    }
    for (i, p) in plans.iter().enumerate() {
        check_plan(p, n_blocks).map_err(|m| bad(format!("plan {i}: {m}")))?;
    }
    Ok(plans)
}

fn check_plan(plan: &FineTunePlan, n_blocks: usize) -> Result<(), String> {
    let v = validate_plan(plan, n_blocks);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v.iter().map(|x| x.message.clone()).collect::<Vec<_>>().join("; "))
    }
}

fn finish_records(records: &mut [RunRecord], cfg: &ExperimentConfig, timing: bool) {
    for r in records.iter_mut() {
        r.config_digest = Some(cfg.digest());
        if !timing {
            r.wall_time = None;
        }
    }
}

fn save_records(path: &Path, records: &[RunRecord]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    write_records(path, records).map_err(with_path(path))
}

fn grid(cfg: &ExperimentConfig, ckpt: &Path, data: &Path, plans: &Path, jobs: usize, out: &Path, timing: bool) -> Outcome {
    let ck = load_ckpt(ckpt)?;
    let plans = read_plans(plans, ck.n_blocks())?;
    let target = load_data(data, "target")?;
    let mut result = grid_search(&ck, &plans, &cfg.finetune_config(), &target, jobs)?;
    finish_records(&mut result.records, cfg, timing);
    save_records(out, &result.records)?;
    for r in result.records.iter().filter(|r| !r.succeeded()) {
        eprintln!("nbtl: plan {} diverged: {}", r.plan_index, r.error.as_deref().unwrap_or("unknown"));
    }
    let Some(best) = result.best_record() else {
        return Err(Failure::Diverged(format!("all {} trials diverged", plans.len())));
    };
    let summary = serde_json::json!({
        "best_plan_index": best.plan_index,
        "best_plan": best.plan,
        "val_top1": best.final_val_top1,
        "test_top1": best.final_test_top1,
        "trials": result.records.len(),
        "diverged": result.records.iter().filter(|r| !r.succeeded()).count(),
        "config_digest": cfg.digest(),
    });
    write_json(None, &summary)
}

fn finetune(
    cfg: &ExperimentConfig,
    ckpt: &Path,
    data: &Path,
    plan: &Path,
    runs: usize,
    out: &Path,
    timing: bool,
) -> Outcome {
    let ck = load_ckpt(ckpt)?;
    let text = fs::read_to_string(plan).map_err(|e| io(plan, e))?;
    let p: FineTunePlan =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", plan.display())))?;
    check_plan(&p, ck.n_blocks()).map_err(|m| Failure::Config(format!("{}: {m}", plan.display())))?;
    let target = load_data(data, "target")?;
    let mut rr = repeated_runs(&ck, &p, &cfg.finetune_config(), &target, runs)?;
    let spec = ck.spec.with_classes(target.n_classes);
    let ensemble = ensemble_eval(&spec, &rr.params, &target.test)?;
    finish_records(&mut rr.records, cfg, timing);
    save_records(out, &rr.records)?;
    let summary = serde_json::json!({
        "runs": runs,
        "test_top1": fmt_mean_std(rr.mean_test_top1, rr.std_test_top1),
        "test_top1_mean": rr.mean_test_top1,
        "test_top1_std": rr.std_test_top1,
        "ensemble_test_top1": ensemble,
        "config_digest": cfg.digest(),
    });
    write_json(None, &summary)
}

fn report(records: &Path, out: &Path) -> Outcome {
    let recs = read_records(records).map_err(with_path(records))?;
    if recs.is_empty() {
        return Err(Failure::Config(format!("{}: no records", records.display())));
    }
    for path in write_report(&recs, out).map_err(with_path(out))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn strip_key(v: &mut Value, key: &str) {
    match v {
        Value::Object(o) => {
            o.remove(key);
            o.values_mut().for_each(|x| strip_key(x, key));
        }
        Value::Array(a) => a.iter_mut().for_each(|x| strip_key(x, key)),
        _ => {}
    }
}

fn study(cfg: &ExperimentConfig, seeds: &[u64], out: &Path, timing: bool) -> Outcome {
    let (summary, mut records) = regime_study(&cfg.study(), seeds)?;
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    finish_records(&mut records, cfg, timing);
    save_records(&out.join("records.jsonl"), &records)?;
    let mut value = serde_json::to_value(&summary).map_err(|e| Failure::Config(e.to_string()))?;
    if !timing {
        strip_key(&mut value, "cpu_seconds");
    }
    value["config_digest"] = Value::String(cfg.digest());
    write_json(Some(&out.join("study.json")), &value)?;
    let n = summary.seeds.len();
    for (i, name) in PROPERTIES.iter().enumerate() {
        let verdict = if summary.majority(i) { "majority" } else { "minority" };
        println!("property {name}: {}/{n} seeds ({verdict})", summary.counts[i]);
    }
    if timing {
        println!("cpu seconds: {:.1}", summary.cpu_seconds);
    }
    Ok(())
}
