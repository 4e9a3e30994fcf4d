//! Run configuration: built-in defaults, then an optional TOML file, then flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use refex_core::datagen::GenSpec;
use refex_core::domain::{SplitTag, Variant};
use refex_core::interpret::ConstructionParams;
use refex_core::model::{ModelConfig, TrainHyper};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,

    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub green_square_distractor_scale: f64,
    /// Held-out tags; absent means every split of the variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout: Option<Vec<SplitTag>>,

    pub layers: usize,
    pub heads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_qk: Option<usize>,
    pub scale_scores: bool,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub init_std: f64,
    pub train_seed: u64,

    /// Use the hand-built weights instead of a checkpoint.
    pub construct: bool,
    pub gamma_attr: f64,
    pub gamma_size: f64,
    pub sigma: f64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_id: Option<usize>,
    /// JSONL file the inspected example is taken from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenSpec::new(Variant::TwoAttr, 0);
        let h = TrainHyper::default();
        let c = ConstructionParams::new(Variant::TwoAttr);
        RunConfig {
            variant: Variant::TwoAttr,
            seed: 0,
            data: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            train_count: g.train_count,
            val_count: g.val_count,
            test_count: g.test_count,
            min_objects: g.min_objects,
            max_objects: g.max_objects,
            green_square_distractor_scale: g.green_square_distractor_scale,
            holdout: None,
            layers: 1,
            heads: 1,
            d_qk: None,
            scale_scores: false,
            lr: h.lr,
            batch_size: h.batch_size,
            epochs: h.max_epochs,
            patience: h.patience,
            init_std: h.init_std,
            train_seed: h.seed,
            construct: false,
            gamma_attr: c.gamma_attr,
            gamma_size: c.gamma_size,
            sigma: c.sigma,
            example_id: None,
            examples: None,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("reading {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn gen_spec(&self) -> Result<GenSpec, CliError> {
        let holdout: BTreeSet<SplitTag> = match &self.holdout {
            Some(tags) => tags.iter().copied().collect(),
            None => self.variant.split_tags().iter().copied().collect(),
        };
        let spec = GenSpec {
            variant: self.variant,
            seed: self.seed,
            train_count: self.train_count,
            val_count: self.val_count,
            test_count: self.test_count,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            green_square_distractor_scale: self.green_square_distractor_scale,
            holdout,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn model_config(&self, variant: Variant) -> Result<ModelConfig, CliError> {
        let mut c = ModelConfig::new(variant, self.layers, self.heads);
        if let Some(d) = self.d_qk {
            c.d_qk = d;
        }
        c.scale_scores = self.scale_scores;
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn hyper(&self) -> Result<TrainHyper, CliError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(CliError::Config("lr, batch_size and epochs must be positive".into()));
        }
        Ok(TrainHyper {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience.max(1),
            init_std: self.init_std,
            seed: self.train_seed,
        })
    }

    pub fn construction(&self, variant: Variant) -> ConstructionParams {
        ConstructionParams { variant, gamma_attr: self.gamma_attr, gamma_size: self.gamma_size, sigma: self.sigma }
    }
}

/// Parses `A1,A2`, or `none` for an empty holdout.
pub fn parse_holdout(s: &str) -> Result<Vec<SplitTag>, String> {
    if s.trim().eq_ignore_ascii_case("none") || s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| SplitTag::parse(t.trim()).map_err(|e| e.to_string())).collect()
}
