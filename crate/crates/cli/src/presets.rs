//! `reproduce` presets. Each preset owns its seeds so a rerun needs no flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use refex_core::datagen::{generate_bundle, DatasetBundle, GenSpec};
use refex_core::domain::{Example, SplitTag, Variant};
use refex_core::interpret::{build_construction, ConstructionParams};
use refex_core::model::{evaluate, ModelConfig, TrainHyper};
use serde::{Deserialize, Serialize};

use crate::run::{train_and_report, write_bundle, write_inspection, TrainOutcome};
use crate::CliError;

/// Base dataset seed; each variant offsets it by its code.
pub const DATA_SEED: u64 = 2023;
pub const TRAIN_SEED: u64 = 1;
/// Training restarts per preset run, seeds `TRAIN_SEED..`. The kept model is
/// the one with the best compositional validation accuracy.
pub const RESTARTS: usize = 5;
/// Green-square distractor scale of the modified training distribution.
pub const MODIFIED_SCALE: f64 = 0.25;

pub fn data_seed(variant: Variant) -> u64 {
    DATA_SEED + variant.code() as u64
}

/// Data spec every preset starts from.
pub fn preset_spec(variant: Variant, distractor_scale: f64) -> GenSpec {
    let mut spec = GenSpec::new(variant, data_seed(variant));
    spec.green_square_distractor_scale = distractor_scale;
    spec
}

pub fn preset_hyper() -> TrainHyper {
    TrainHyper { seed: TRAIN_SEED, ..TrainHyper::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Table6,
    A1Distractor,
    Construction,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "table6" => Ok(Preset::Table6),
            "a1-distractor" => Ok(Preset::A1Distractor),
            "construction" => Ok(Preset::Construction),
            other => Err(CliError::Config(format!(
                "unknown preset `{other}` (expected table6, a1-distractor or construction)"
            ))),
        }
    }
}

/// Accepted accuracy range for one cell of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn at_least(lo: f64) -> Self {
        Band { lo, hi: 1.0 }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table6Row {
    pub name: &'static str,
    pub variant: Variant,
    pub layers: usize,
    /// Seeds tried; the relational rows are too slow for more than one.
    pub restarts: usize,
    /// (split, published accuracy in percent, accepted band).
    pub cells: Vec<(SplitTag, f64, Band)>,
}

pub fn table6_rows() -> Vec<Table6Row> {
    use SplitTag::*;
    let top = Band::at_least(0.99);
    vec![
        Table6Row {
            name: "two-attr-1l",
            variant: Variant::TwoAttr,
            layers: 1,
            restarts: RESTARTS,
            cells: vec![(Random, 100.0, top), (A1, 100.0, top), (A2, 100.0, top)],
        },
        Table6Row {
            name: "three-attr-1l",
            variant: Variant::ThreeAttr,
            layers: 1,
            restarts: RESTARTS,
            cells: vec![(Random, 100.0, top), (A1, 100.0, top), (A2, 100.0, top), (A3, 100.0, top), (A4, 100.0, top)],
        },
        Table6Row {
            name: "three-attr-rel-1l",
            variant: Variant::ThreeAttrRel,
            layers: 1,
            restarts: 1,
            cells: vec![
                (Random, 78.8, Band { lo: 0.65, hi: 0.90 }),
                (A1, 31.9, Band { lo: 0.15, hi: 0.50 }),
                (A2, 33.5, Band { lo: 0.15, hi: 0.50 }),
            ],
        },
        Table6Row {
            name: "three-attr-rel-2l",
            variant: Variant::ThreeAttrRel,
            layers: 2,
            restarts: 1,
            cells: vec![
                (Random, 99.7, Band::at_least(0.97)),
                (A1, 99.4, Band::at_least(0.97)),
                (A2, 98.8, Band::at_least(0.97)),
            ],
        },
    ]
}

/// Test sets of a bundle keyed by split.
pub fn test_sets(bundle: &DatasetBundle) -> BTreeMap<SplitTag, Vec<Example>> {
    let mut out = BTreeMap::new();
    out.insert(SplitTag::Random, bundle.random_test.clone());
    for (t, set) in &bundle.split_tests {
        out.insert(*t, set.clone());
    }
    out
}

/// Size overrides for quick runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub epochs: Option<usize>,
    pub restarts: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut GenSpec, hyper: &mut TrainHyper) {
        if let Some(n) = self.train_count {
            spec.train_count = n;
        }
        if let Some(n) = self.test_count {
            spec.test_count = n;
            spec.val_count = n;
        }
        if let Some(n) = self.epochs {
            hyper.max_epochs = n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub split: SplitTag,
    pub published: f64,
    pub measured: f64,
    pub band: Band,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub variant: Variant,
    pub layers: usize,
    pub cells: Vec<CellResult>,
}

/// Validation summary of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub val_random: f64,
    pub val_splits: BTreeMap<SplitTag, f64>,
    /// Reported only, never used for selection.
    pub test: BTreeMap<SplitTag, f64>,
    pub kept: bool,
}

/// Trains up to `restarts` seeds into `out/seed-{s}` and moves the best run's
/// files up into `out`. With `stop_when_perfect`, stops at the first seed that
/// is perfect on validation.
#[allow(clippy::too_many_arguments)]
pub fn train_with_restarts(
    model: &ModelConfig,
    hyper: &TrainHyper,
    restarts: usize,
    stop_when_perfect: bool,
    holdout: &std::collections::BTreeSet<SplitTag>,
    bundle: &DatasetBundle,
    out: &Path,
    label: &str,
) -> Result<(TrainOutcome, Vec<RestartSummary>), CliError> {
    let tests = test_sets(bundle);
    let mut best: Option<(TrainOutcome, u64)> = None;
    let mut summaries = Vec::new();
    for k in 0..restarts.max(1) {
        let seed = hyper.seed + k as u64;
        let h = TrainHyper { seed, ..hyper.clone() };
        let dir = out.join(format!("seed-{seed}"));
        let outcome =
            train_and_report(model, &h, holdout, &bundle.train, &bundle.val, &tests, &dir, &format!("{label} seed {seed}"))?;
        let rec = outcome.log.best().clone();
        summaries.push(RestartSummary {
            seed,
            best_epoch: outcome.log.best_epoch,
            val_random: rec.val_random,
            val_splits: rec.val_splits.clone(),
            test: outcome.report.test.clone(),
            kept: false,
        });
        let better = best.as_ref().is_none_or(|(b, _)| rec.selection_key() > b.log.best().selection_key());
        let perfect = rec.selection_key() == (1.0, 1.0);
        if better {
            best = Some((outcome, seed));
        }
        if perfect && stop_when_perfect {
            break;
        }
    }
    let (outcome, seed) = best.expect("at least one restart");
    for s in summaries.iter_mut() {
        s.kept = s.seed == seed;
    }
    let kept = out.join(format!("seed-{seed}"));
    for f in ["best.ckpt", "log.csv", "report.json"] {
        fs::rename(kept.join(f), out.join(f))?;
    }
    for s in &summaries {
        let _ = fs::remove_dir_all(out.join(format!("seed-{}", s.seed)));
    }
    fs::write(out.join("restarts.json"), serde_json::to_string_pretty(&summaries)? + "\n")?;
    Ok((outcome, summaries))
}

/// Generates (and writes) a preset bundle under `out/data`.
fn preset_bundle(spec: &GenSpec, out: &Path) -> Result<DatasetBundle, CliError> {
    let bundle = generate_bundle(spec)?;
    write_bundle(spec, &bundle, out)?;
    Ok(bundle)
}

pub fn run_table6_row(row: &Table6Row, overrides: &Overrides, out: &Path) -> Result<RowResult, CliError> {
    let mut spec = preset_spec(row.variant, MODIFIED_SCALE);
    let mut hyper = preset_hyper();
    overrides.apply(&mut spec, &mut hyper);
    let data_dir = out.join(format!("data-{}", row.variant));
    let bundle = if data_dir.join("spec.json").exists() {
        generate_bundle(&spec)?
    } else {
        preset_bundle(&spec, &data_dir)?
    };
    let model = ModelConfig::new(row.variant, row.layers, 1);
    let restarts = overrides.restarts.unwrap_or(row.restarts);
    let (outcome, _) = train_with_restarts(&model, &hyper, restarts, true, &spec.holdout, &bundle, &out.join(row.name), row.name)?;
    let cells = row
        .cells
        .iter()
        .map(|(split, published, band)| {
            let measured = outcome.report.test.get(split).copied().unwrap_or(f64::NAN);
            CellResult { split: *split, published: *published, measured, band: *band, pass: band.contains(measured) }
        })
        .collect();
    Ok(RowResult { name: row.name.into(), variant: row.variant, layers: row.layers, cells })
}

fn table6_markdown(rows: &[RowResult]) -> String {
    let mut md = String::from("| row | split | published | measured | band | pass |\n|---|---|---|---|---|---|\n");
    for r in rows {
        for c in &r.cells {
            let _ = writeln!(
                md,
                "| {} | {} | {:.1} | {:.1} | [{:.0}, {:.0}] | {} |",
                r.name,
                c.split,
                c.published,
                100.0 * c.measured,
                100.0 * c.band.lo,
                100.0 * c.band.hi,
                if c.pass { "yes" } else { "no" }
            );
        }
    }
    md
}

fn table6_csv(rows: &[RowResult]) -> String {
    let mut csv = String::from("row,variant,layers,split,published,measured,band_lo,band_hi,pass\n");
    for r in rows {
        for c in &r.cells {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                r.name, r.variant, r.layers, c.split, c.published, c.measured, c.band.lo, c.band.hi, c.pass
            );
        }
    }
    csv
}

pub fn reproduce_table6(overrides: &Overrides, out: &Path) -> Result<Vec<RowResult>, CliError> {
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    for row in table6_rows() {
        results.push(run_table6_row(&row, overrides, out)?);
        // Partial results survive a later fault.
        fs::write(out.join("table6.md"), table6_markdown(&results))?;
        fs::write(out.join("table6.csv"), table6_csv(&results))?;
        fs::write(out.join("table6.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorResult {
    pub scale: f64,
    /// A1 test accuracy of the selected seed.
    pub a1_accuracy: f64,
    /// A1 test accuracy of every seed tried.
    pub seed_a1: Vec<(u64, f64)>,
    pub mean_green_square_distractors: f64,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1DistractorSummary {
    pub runs: Vec<DistractorResult>,
    pub jump: f64,
    pub pass: bool,
}

pub const A1_SCALES: [f64; 2] = [1.0, MODIFIED_SCALE];

pub fn a1_run_name(scale: f64) -> String {
    format!("two-attr-scale-{scale}")
}

pub fn reproduce_a1_distractor(overrides: &Overrides, out: &Path) -> Result<A1DistractorSummary, CliError> {
    fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for scale in A1_SCALES {
        let mut spec = preset_spec(Variant::TwoAttr, scale);
        let mut hyper = preset_hyper();
        overrides.apply(&mut spec, &mut hyper);
        let name = a1_run_name(scale);
        let bundle = preset_bundle(&spec, &out.join(format!("data-{name}")))?;
        let model = ModelConfig::new(Variant::TwoAttr, 1, 1);
        let run_dir = out.join(&name);
        let restarts = overrides.restarts.unwrap_or(RESTARTS);
        let (outcome, seeds) = train_with_restarts(&model, &hyper, restarts, false, &spec.holdout, &bundle, &run_dir, &name)?;
        let stats = refex_core::datagen::dataset_stats(&bundle.train);
        runs.push(DistractorResult {
            scale,
            a1_accuracy: outcome.report.test[&SplitTag::A1],
            seed_a1: seeds.iter().map(|r| (r.seed, r.test[&SplitTag::A1])).collect(),
            mean_green_square_distractors: stats.mean_green_square_distractors,
            checkpoint: run_dir.join("best.ckpt"),
        });
    }
    let (base, modified) = (runs[0].a1_accuracy, runs[1].a1_accuracy);
    let summary = A1DistractorSummary { jump: modified - base, pass: modified >= 0.995 && modified > base, runs };
    fs::write(out.join("a1_distractor.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut md = String::from(
        "| scale | green-square distractors / example | A1 accuracy | A1 per seed | seeds >= 99.5 |\n|---|---|---|---|---|\n",
    );
    for r in &summary.runs {
        let per_seed: Vec<String> = r.seed_a1.iter().map(|(s, a)| format!("{s}: {:.1}", 100.0 * a)).collect();
        let solved = r.seed_a1.iter().filter(|(_, a)| *a >= 0.995).count();
        let _ = writeln!(
            md,
            "| {} | {:.3} | {:.1} | {} | {}/{} |",
            r.scale,
            r.mean_green_square_distractors,
            100.0 * r.a1_accuracy,
            per_seed.join(", "),
            solved,
            r.seed_a1.len()
        );
    }
    fs::write(out.join("a1_distractor.md"), md)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionResult {
    pub variant: Variant,
    pub params: ConstructionParams,
    pub accuracy: BTreeMap<SplitTag, f64>,
    pub pass: bool,
}

pub fn reproduce_construction(overrides: &Overrides, out: &Path) -> Result<Vec<ConstructionResult>, CliError> {
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    for variant in [Variant::TwoAttr, Variant::ThreeAttr] {
        let mut spec = preset_spec(variant, 1.0);
        spec.train_count = 1;
        let mut hyper = preset_hyper();
        overrides.apply(&mut spec, &mut hyper);
        let bundle = generate_bundle(&spec)?;
        let params = ConstructionParams::new(variant);
        let (model, weights) = build_construction(&params)?;
        let mut accuracy = BTreeMap::new();
        for (tag, set) in test_sets(&bundle) {
            accuracy.insert(tag, evaluate(&weights, &model, &set)?.accuracy);
        }
        write_inspection(&model, &weights, "construct", &out.join(variant.as_str()))?;
        let pass = accuracy.values().all(|a| *a == 1.0);
        results.push(ConstructionResult { variant, params, accuracy, pass });
    }
    fs::write(out.join("construction.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    Ok(results)
}
