//! `gen`, `train`, `eval` and `inspect`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use refex_core::datagen::{dataset_stats, generate_bundle, read_jsonl, write_jsonl, DatasetBundle, GenSpec};
use refex_core::domain::{Example, SplitTag, Variant};
use refex_core::interpret::{
    build_construction, column_ordering, command_sign, decompose_logits, export_heatmap, extract_m,
    extract_s_head, HeatmapFormat,
};
use refex_core::model::{
    evaluate, load_checkpoint, save_checkpoint, train, EvalReport, ModelConfig, ModelWeights, TrainHyper,
    TrainingLog,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: RunConfig,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file, keyed by name relative to the output dir.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `config.resolved.toml` and `manifest.json` into `out`, hashing
/// every other file already there.
pub fn finish_run(cfg: &RunConfig, subcommand: &str, inputs: &[PathBuf], out: &Path) -> Result<Manifest, CliError> {
    fs::write(out.join("config.resolved.toml"), cfg.to_toml())?;
    let mut outputs = BTreeMap::new();
    let mut names: Vec<_> = fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    for name in names {
        outputs.insert(name.clone(), sha256_file(&out.join(&name))?);
    }
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = Manifest {
        tool: "refex".into(),
        version: TOOL_VERSION.into(),
        subcommand: subcommand.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs: input_hashes,
        outputs,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn test_file_name(tag: SplitTag) -> String {
    format!("test_{tag}.jsonl")
}

/// Writes a bundle's JSONL files, `spec.json` and `stats.json` into `out`.
pub fn write_bundle(spec: &GenSpec, bundle: &DatasetBundle, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut stats = BTreeMap::new();
    let mut sets: Vec<(String, &Vec<Example>)> = vec![
        ("train.jsonl".into(), &bundle.train),
        ("val.jsonl".into(), &bundle.val),
        (test_file_name(SplitTag::Random), &bundle.random_test),
    ];
    for (tag, set) in &bundle.split_tests {
        sets.push((test_file_name(*tag), set));
    }
    for (name, set) in sets {
        write_jsonl(set, out.join(&name))?;
        stats.insert(name.trim_end_matches(".jsonl").to_string(), dataset_stats(set));
    }
    write_json(&out.join("spec.json"), spec)?;
    write_json(&out.join("stats.json"), &stats)?;
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let spec = cfg.gen_spec()?;
    let bundle = generate_bundle(&spec)?;
    write_bundle(&spec, &bundle, &cfg.out)?;
    finish_run(cfg, "gen", &[], &cfg.out)
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.data.as_deref().ok_or_else(|| CliError::Config("--data <dir> is required".into()))
}

fn read_set(path: &Path) -> Result<Vec<Example>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing {}", path.display())));
    }
    let set = read_jsonl(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if set.is_empty() {
        return Err(CliError::Data(format!("empty dataset: {}", path.display())));
    }
    Ok(set)
}

/// Test files present in a data dir, keyed by split, in split order.
pub fn test_files(dir: &Path) -> BTreeMap<SplitTag, PathBuf> {
    SplitTag::ALL
        .into_iter()
        .map(|t| (t, dir.join(test_file_name(t))))
        .filter(|(_, p)| p.exists())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub holdout: BTreeSet<SplitTag>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_random: f64,
    pub best_val_splits: BTreeMap<SplitTag, f64>,
    /// Accuracy per test file.
    pub test: BTreeMap<SplitTag, f64>,
}

pub struct TrainOutcome {
    pub config: ModelConfig,
    pub weights: ModelWeights<f32>,
    pub log: TrainingLog,
    pub report: TrainReport,
}

/// Trains, writes `best.ckpt`, `log.csv` and `report.json` into `out`.
pub fn train_and_report(
    model: &ModelConfig,
    hyper: &TrainHyper,
    holdout: &BTreeSet<SplitTag>,
    train_set: &[Example],
    val_set: &[Example],
    tests: &BTreeMap<SplitTag, Vec<Example>>,
    out: &Path,
    label: &str,
) -> Result<TrainOutcome, CliError> {
    fs::create_dir_all(out)?;
    let (weights, log) = train(model, train_set, val_set, holdout, hyper, |r| {
        let splits: Vec<String> = r.val_splits.iter().map(|(t, a)| format!("{t} {a:.4}")).collect();
        eprintln!(
            "[{label}] epoch {:>3} loss {:.5} val random {:.4} {}",
            r.epoch,
            r.loss,
            r.val_random,
            splits.join(" ")
        );
    })?;
    save_checkpoint(model, &weights, out.join("best.ckpt"))?;
    fs::write(out.join("log.csv"), log.to_csv())?;
    let mut test = BTreeMap::new();
    for (tag, set) in tests {
        test.insert(*tag, evaluate(&weights, model, set)?.accuracy);
    }
    let best = log.best();
    let report = TrainReport {
        variant: model.variant,
        model: model.clone(),
        hyper: hyper.clone(),
        holdout: holdout.clone(),
        best_epoch: log.best_epoch,
        epochs_run: log.epochs.len(),
        best_val_random: best.val_random,
        best_val_splits: best.val_splits.clone(),
        test,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(TrainOutcome { config: model.clone(), weights, log, report })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let dir = data_dir(cfg)?;
    let train_path = dir.join("train.jsonl");
    let val_path = dir.join("val.jsonl");
    let train_set = read_set(&train_path)?;
    let val_set = read_set(&val_path)?;
    let variant = train_set[0].variant();
    let spec: Option<GenSpec> = match fs::read_to_string(dir.join("spec.json")) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let holdout: BTreeSet<SplitTag> = match (&cfg.holdout, &spec) {
        (Some(h), _) => h.iter().copied().collect(),
        (None, Some(s)) => s.holdout.clone(),
        (None, None) => variant.split_tags().iter().copied().collect(),
    };
    let model = cfg.model_config(variant)?;
    let hyper = cfg.hyper()?;
    let mut inputs = vec![train_path, val_path];
    let mut tests = BTreeMap::new();
    for (tag, path) in test_files(dir) {
        tests.insert(tag, read_set(&path)?);
        inputs.push(path);
    }
    train_and_report(&model, &hyper, &holdout, &train_set, &val_set, &tests, &cfg.out, "train")?;
    finish_run(cfg, "train", &inputs, &cfg.out)
}

/// Model named by the config: hand-built weights or a checkpoint.
pub fn load_model(cfg: &RunConfig, variant_hint: Option<Variant>) -> Result<(ModelConfig, ModelWeights<f64>, String), CliError> {
    if cfg.construct {
        let variant = variant_hint.unwrap_or(cfg.variant);
        let (c, w) = build_construction(&cfg.construction(variant))?;
        return Ok((c, w, "construct".into()));
    }
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("--checkpoint <file> or --construct is required".into()))?;
    let (c, w) = load_checkpoint(path)?;
    Ok((c, w.cast(), "learned".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub source: String,
    pub variant: Variant,
    pub tests: BTreeMap<String, EvalReport>,
}

fn eval_sets(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>, CliError> {
    if let Some(file) = &cfg.examples {
        let name = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, file.clone())]);
    }
    let dir = data_dir(cfg)?;
    let files = test_files(dir);
    if files.is_empty() {
        return Err(CliError::Data(format!("no test_*.jsonl files in {}", dir.display())));
    }
    Ok(files.into_iter().map(|(t, p)| (format!("test_{t}"), p)).collect())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let sets = eval_sets(cfg)?;
    let mut loaded = Vec::new();
    for (name, path) in &sets {
        loaded.push((name.clone(), read_set(path)?));
    }
    let data_variant = loaded[0].1[0].variant();
    let (model, weights, source) = load_model(cfg, Some(data_variant))?;
    let mut tests = BTreeMap::new();
    for (name, set) in &loaded {
        if let Some(ex) = set.iter().find(|e| e.variant() != model.variant) {
            return Err(CliError::Data(format!(
                "{name}: model is {}, data is {}",
                model.variant,
                ex.variant()
            )));
        }
        tests.insert(name.clone(), evaluate(&weights, &model, set)?);
    }
    fs::create_dir_all(&cfg.out)?;
    let output = EvalOutput { source, variant: model.variant, tests };
    write_json(&cfg.out.join("report.json"), &output)?;
    let mut inputs: Vec<PathBuf> = sets.into_iter().map(|(_, p)| p).collect();
    if let (false, Some(c)) = (cfg.construct, &cfg.checkpoint) {
        inputs.push(c.clone());
    }
    finish_run(cfg, "eval", &inputs, &cfg.out)
}

fn write_s(path: &Path, labels: &[String], values: &[f64]) -> Result<(), CliError> {
    let mut text = String::from("token,s\n");
    for (l, v) in labels.iter().zip(values) {
        text.push_str(&format!("{l},{v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes the M heatmaps and s tables for every layer/head, plus
/// `column_ordering.json`. Returns notices about multi-layer semantics.
pub fn write_inspection(
    model: &ModelConfig,
    weights: &ModelWeights<f64>,
    source: &str,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(out)?;
    let mut notices = Vec::new();
    if model.layers > 1 {
        notices.push(format!(
            "{}-layer model: s and the logit decomposition use one-layer semantics; \
             later-layer tables read raw embeddings, not that layer's residual input",
            model.layers
        ));
    }
    let mut orderings = BTreeMap::new();
    for l in 0..model.layers {
        for h in 0..model.heads {
            let suffix = if (l, h) == (0, 0) { String::new() } else { format!("_l{l}_h{h}") };
            let m = extract_m(weights, model, l, h)?;
            let s = extract_s_head(weights, model, l, h)?;
            for fmt in [HeatmapFormat::Csv, HeatmapFormat::Pgm, HeatmapFormat::Svg] {
                let path = out.join(format!("M_{source}{suffix}.{}", fmt.extension()));
                export_heatmap(&m.labels, &m.labels, &m.values, path, fmt)?;
            }
            write_s(&out.join(format!("s_{source}{suffix}.csv")), &s.labels, &s.values)?;
            orderings.insert(format!("layer{l}_head{h}"), column_ordering(&m, command_sign(&s)));
        }
    }
    write_json(&out.join("column_ordering.json"), &orderings)?;
    Ok(notices)
}

pub fn cmd_inspect(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let (model, weights, source) = load_model(cfg, None)?;
    let mut notices = write_inspection(&model, &weights, &source, &cfg.out)?;
    let mut inputs = Vec::new();
    if let (false, Some(c)) = (cfg.construct, &cfg.checkpoint) {
        inputs.push(c.clone());
    }
    if let Some(id) = cfg.example_id {
        let file = match (&cfg.examples, &cfg.data) {
            (Some(f), _) => f.clone(),
            (None, Some(d)) => d.join(test_file_name(SplitTag::Random)),
            (None, None) => return Err(CliError::Config("--example-id needs --examples or --data".into())),
        };
        let set = read_set(&file)?;
        let ex = set
            .get(id)
            .ok_or_else(|| CliError::Data(format!("{} has {} examples, no id {id}", file.display(), set.len())))?;
        if model.layers == 1 {
            write_json(&cfg.out.join("decomposition.json"), &decompose_logits(&weights, &model, ex)?)?;
        } else {
            notices.push("decomposition.json skipped: it requires a one-layer model".into());
        }
        inputs.push(file);
    }
    for n in &notices {
        eprintln!("notice: {n}");
    }
    if !notices.is_empty() {
        fs::write(cfg.out.join("notices.txt"), notices.join("\n") + "\n")?;
    }
    finish_run(cfg, "inspect", &inputs, &cfg.out)
}
