//! Subcommand bodies. Each writes JSON reports into the output directory
//! and returns a short human-readable summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use glam_core::contamination::{report, reports_to_csv, NgramIndex};
use glam_core::cost::{co2_estimate, energy_estimate};
use glam_core::data::{
    filter_documents, pack_examples, read_jsonl, write_jsonl, ByteTokenizer, Document, MixtureSampler,
    QualityClassifier, Source, Tokenizer,
};
use glam_core::eval::{aggregate, evaluate_task, EvalOptions, Task};
use glam_core::model::{count_params, flops_per_token, Checkpoint, GlamModel};
use glam_core::shardplan::{comm_volume, per_device_memory, plan, summary_table, validate, Mesh};
use glam_core::trainer::{run, CheckpointManager, ShuffledBatches, TrainLog, Trainer};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> CliResult<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn byte_model_config(cfg: &RunConfig) -> CliResult<glam_core::model::ModelConfig> {
    let model = cfg.model_config()?;
    if model.vocab < ByteTokenizer::VOCAB {
        return Err(CliError::InvalidConfig(format!(
            "model.vocab must be at least {} for the byte tokenizer, got {}",
            ByteTokenizer::VOCAB,
            model.vocab
        )));
    }
    Ok(model)
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    steps: u64,
    optimizer_steps: u64,
    skipped_steps: usize,
    rollbacks: u64,
    final_loss: f64,
    param_checksum: String,
    checkpoint: String,
    log: String,
}

pub fn train(cfg: &RunConfig) -> CliResult<String> {
    let model_cfg = byte_model_config(cfg)?;
    let path = cfg.require(&cfg.data.train_path, "data.train_path")?;
    let docs = read_jsonl(path)?;
    if docs.is_empty() {
        return Err(CliError::InvalidConfig(format!("{} has no documents", path.display())));
    }
    let tok = ByteTokenizer;
    let encoded = docs.iter().map(|d| std::iter::once(tok.bos()).chain(tok.encode(&d.text)).collect());
    let batches = pack_examples(encoded, model_cfg.seq_len, model_cfg.batch, tok.eos(), tok.pad())?;

    let seeds = cfg.seeds();
    let mut train_cfg = cfg.train.clone();
    train_cfg.ignore_token.get_or_insert(tok.pad());
    let model = GlamModel::<f64>::build(&model_cfg, seeds.derive_seed("model"))?;
    let mut trainer = Trainer::new(model, train_cfg);
    let mut source = ShuffledBatches::new(batches, seeds.derive_seed("data"))?;
    let mut manager = CheckpointManager::new(cfg.checkpoint, seeds.derive_seed("restart"));
    let mut log = TrainLog::new();
    run(&mut trainer, &mut source, cfg.train.total_steps, Some(&mut manager), &mut log)?;

    let out = prepare_out(cfg)?;
    let mut ckpt = Checkpoint::from_model(&trainer.model);
    ckpt.optimizer = Some(trainer.optimizer.snapshot());
    ckpt.metadata = json!({ "seed": cfg.seed, "steps": trainer.attempted_steps() });
    ckpt.save(out.join("checkpoint.bin"))?;
    log.write_jsonl(out.join("train_log.jsonl"))?;
    let records = log.records();
    let report = TrainReport {
        seed: cfg.seed,
        steps: trainer.attempted_steps(),
        optimizer_steps: trainer.optimizer.step(),
        skipped_steps: records.iter().filter(|r| r.skipped).count(),
        rollbacks: manager.rollback_count(),
        final_loss: records.last().map_or(f64::NAN, |r| r.loss),
        param_checksum: format!("{:016x}", trainer.model.checksum()),
        checkpoint: "checkpoint.bin".into(),
        log: "train_log.jsonl".into(),
    };
    write_json(out, "train_report.json", &report)?;
    Ok(format!(
        "trained {} steps ({} skipped, {} rollbacks), final loss {:.4}",
        report.steps, report.skipped_steps, report.rollbacks, report.final_loss
    ))
}

pub fn eval(cfg: &RunConfig) -> CliResult<String> {
    if cfg.eval.tasks.is_empty() {
        return Err(CliError::InvalidConfig("eval.tasks is empty".into()));
    }
    let model: GlamModel<f64> = match &cfg.eval.checkpoint {
        Some(p) => Checkpoint::load(p)?.restore_model()?,
        None => GlamModel::build(&byte_model_config(cfg)?, cfg.seeds().derive_seed("model"))?,
    };
    if model.config().vocab < ByteTokenizer::VOCAB {
        return Err(CliError::InvalidConfig("checkpoint vocabulary is smaller than the byte tokenizer".into()));
    }
    let opts = EvalOptions {
        seed: cfg.seeds().derive_seed("eval"),
        beam_width: cfg.eval.beam_width,
        max_new_tokens: cfg.eval.max_new_tokens,
    };
    let mut results = Vec::new();
    for path in &cfg.eval.tasks {
        let task = Task::load(path)?;
        results.push(evaluate_task(&model, &ByteTokenizer, &task, &opts)?);
    }
    let report = aggregate(results)?;
    let out = prepare_out(cfg)?;
    write_json(out, "eval_report.json", &report)?;
    std::fs::write(out.join("eval_summary.csv"), report.to_csv())?;
    let mut s = String::new();
    for t in &report.tasks {
        let _ = writeln!(s, "{:<24} {:>3}-shot {:>7.2}", t.name, t.shots, t.score);
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.2}"));
    let _ = write!(s, "avg NLG {}  avg NLU {}", fmt(report.avg_nlg), fmt(report.avg_nlu));
    Ok(s)
}

#[derive(Serialize)]
struct FilterOutput {
    input: usize,
    kept: usize,
    dropped: usize,
    alpha: f64,
    per_source: BTreeMap<Source, glam_core::data::SourceCounts>,
    output: String,
}

pub fn data_filter(cfg: &RunConfig) -> CliResult<String> {
    let d = &cfg.data;
    let curated = read_jsonl(cfg.require(&d.curated_path, "data.curated_path")?)?;
    let web_path = cfg.require(&d.web_path, "data.web_path")?;
    let web = read_jsonl(web_path)?;
    let input = match &d.input_path {
        Some(p) => read_jsonl(p)?,
        None => web.clone(),
    };
    let seeds = cfg.seeds().child("data");
    let clf = QualityClassifier::train(
        curated.iter().map(|d| d.text.as_str()),
        web.iter().map(|d| d.text.as_str()),
        &d.classifier.options(seeds.derive_seed("classifier")),
    )?;
    let n = input.len();
    let (kept, rep) = filter_documents(input, &clf, d.pareto_alpha, &mut seeds.substream("pareto"))?;
    let out = prepare_out(cfg)?;
    write_jsonl(out.join("filtered.jsonl"), &kept)?;
    let report = FilterOutput {
        input: n,
        kept: rep.kept,
        dropped: rep.dropped,
        alpha: rep.alpha,
        per_source: rep.per_source,
        output: "filtered.jsonl".into(),
    };
    write_json(out, "filter_report.json", &report)?;
    Ok(format!("kept {} of {} documents (alpha {})", report.kept, n, report.alpha))
}

#[derive(Serialize)]
struct MixReport {
    count: usize,
    target: BTreeMap<Source, f64>,
    observed: BTreeMap<Source, f64>,
    output: String,
}

pub fn data_mix(cfg: &RunConfig) -> CliResult<String> {
    let d = &cfg.data;
    let docs = read_jsonl(cfg.require(&d.input_path, "data.input_path")?)?;
    let mut pools: BTreeMap<Source, Vec<Document>> = BTreeMap::new();
    for doc in docs {
        pools.entry(doc.source).or_default().push(doc);
    }
    let sampler = MixtureSampler::new(pools, &d.mixture, cfg.seeds().child("data").substream("mix"))?;
    let mixed: Vec<Document> = sampler.take(d.mix_count).collect();
    let mut observed: BTreeMap<Source, f64> = d.mixture.weights.keys().map(|&s| (s, 0.0)).collect();
    for doc in &mixed {
        *observed.entry(doc.source).or_default() += 1.0 / d.mix_count.max(1) as f64;
    }
    let out = prepare_out(cfg)?;
    write_jsonl(out.join("mixed.jsonl"), &mixed)?;
    let report =
        MixReport { count: mixed.len(), target: d.mixture.weights.clone(), observed, output: "mixed.jsonl".into() };
    write_json(out, "mix_report.json", &report)?;
    let mut s = format!("sampled {} documents\n", report.count);
    for (src, w) in &report.target {
        let _ = writeln!(s, "{:<16} target {:.3} observed {:.3}", src.as_str(), w, report.observed[src]);
    }
    Ok(s.trim_end().to_owned())
}

pub fn contamination(cfg: &RunConfig) -> CliResult<String> {
    let c = &cfg.contamination;
    if c.datasets.is_empty() {
        return Err(CliError::InvalidConfig("contamination.datasets is empty".into()));
    }
    let corpus = read_jsonl(cfg.require(&cfg.data.train_path, "data.train_path")?)?;
    let mut indexes: BTreeMap<usize, NgramIndex> = BTreeMap::new();
    let mut reports = Vec::new();
    for ds in &c.datasets {
        let n = ds.n.unwrap_or(c.n);
        if !indexes.contains_key(&n) {
            indexes.insert(n, NgramIndex::build(corpus.iter().map(|d| d.text.as_str()), n)?);
        }
        let task = Task::load(&ds.path)?;
        let texts: Vec<String> = task.eval.iter().map(|e| e.demonstration()).collect();
        reports.push(report(&ds.name, &ds.split, &texts, &indexes[&n])?);
    }
    let out = prepare_out(cfg)?;
    write_json(out, "contamination.json", &reports)?;
    let csv = reports_to_csv(&reports);
    std::fs::write(out.join("contamination.csv"), &csv)?;
    Ok(csv.trim_end().to_owned())
}

pub fn shard_plan(cfg: &RunConfig) -> CliResult<String> {
    let model = cfg.model_config()?;
    let mesh = Mesh::new(cfg.shard.mesh_x, cfg.shard.mesh_y)?;
    let p = plan(&model, mesh)?;
    if let Err(v) = validate(&p) {
        return Err(CliError::Runtime(glam_core::GlamError::Plan(format!("plan failed validation: {v:?}"))));
    }
    let comm = comm_volume(&p);
    let mem = per_device_memory(&p, cfg.shard.bytes_per_element);
    let out = prepare_out(cfg)?;
    write_json(
        out,
        "shard_plan.json",
        &json!({
            "plan": p,
            "comm_volume": comm,
            "bytes_per_element": cfg.shard.bytes_per_element,
            "per_device_bytes": mem,
        }),
    )?;
    Ok(format!(
        "{}dispatch {} elements, combine {} elements per MoE layer",
        summary_table(&p, cfg.shard.bytes_per_element),
        comm.dispatch_elements,
        comm.combine_elements
    ))
}

#[derive(Serialize)]
struct ParamsReport {
    model: glam_core::model::ModelConfig,
    n_params: u64,
    n_act_params: u64,
    embedding_params: u64,
    gflops_per_token: f64,
}

pub fn params(cfg: &RunConfig) -> CliResult<String> {
    let model = cfg.model_config()?;
    let count = count_params(&model);
    let report = ParamsReport {
        n_params: count.n_params,
        n_act_params: count.n_act_params,
        embedding_params: count.embedding,
        gflops_per_token: flops_per_token(&model),
        model,
    };
    write_json(prepare_out(cfg)?, "params.json", &report)?;
    Ok(format!(
        "{:<12} {:>16} {:>16} {:>10}\n{:<12} {:>16} {:>16} {:>10.3}",
        "model",
        "n_params",
        "n_act_params",
        "GFLOPs/tok",
        cfg.model_preset.as_deref().unwrap_or("custom"),
        report.n_params,
        report.n_act_params,
        report.gflops_per_token
    ))
}

#[derive(Serialize)]
struct EnergyReport {
    chips: f64,
    watts_per_chip: f64,
    hours: f64,
    pue: f64,
    mwh: f64,
    tco2e_per_mwh: f64,
    net_tco2e: f64,
    reference_mwh: Option<f64>,
    ratio_to_reference: Option<f64>,
}

pub fn energy(cfg: &RunConfig) -> CliResult<String> {
    let e = &cfg.energy;
    let mwh = energy_estimate(e.chips, e.watts_per_chip, e.hours, e.pue)?;
    let net = co2_estimate(mwh, e.tco2e_per_mwh)?;
    let ratio = e.reference_mwh.filter(|&r| r > 0.0).map(|r| mwh / r);
    let report = EnergyReport {
        chips: e.chips,
        watts_per_chip: e.watts_per_chip,
        hours: e.hours,
        pue: e.pue,
        mwh,
        tco2e_per_mwh: e.tco2e_per_mwh,
        net_tco2e: net,
        reference_mwh: e.reference_mwh,
        ratio_to_reference: ratio,
    };
    write_json(prepare_out(cfg)?, "energy.json", &report)?;
    let mut s = format!("{mwh:.1} MWh, {net:.1} net tCO2e");
    if let Some(r) = ratio {
        let _ = write!(s, ", {r:.3} of reference");
    }
    Ok(s)
}
