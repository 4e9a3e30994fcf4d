//! Attention-only transformer over `command ++ 36 grid slots`.
//!
//! Each layer adds multi-head attention output back into the residual
//! stream; there are no feed-forward blocks and no normalization. The logit
//! for grid cell `c` is the plain sum of the final residual vector at that
//! cell's slot.

mod embedding;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CellIndex, Example, SplitTag, Variant, GRID_CELLS};
use crate::tensor::{
    read_checkpoint, write_checkpoint, AdamError, CheckpointError, CheckpointHeader, Matrix,
    ParamSet, Scalar, Tape, Var, VERSION,
};

pub use embedding::{CommandWord, EmbeddingTable, TokenKind};
pub use train::{train, EpochRecord, TrainHyper, TrainingLog};

pub const MAX_LAYERS: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite activation in layer {layer} head {head}")]
    NonFinite { layer: usize, head: usize },
    #[error("training diverged at epoch {epoch} step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },
    #[error("variant mismatch: model is {expected}, data is {found}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("token `{0}` not in the vocabulary")]
    UnknownToken(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Adam(#[from] AdamError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub heads: usize,
    /// Query/key/value width per head.
    pub d_qk: usize,
    /// Divide scores by `sqrt(d_qk)`. Off by default so the bilinear table
    /// read off the weights is exactly what enters the softmax.
    pub scale_scores: bool,
    /// Learned positional vectors on the command slots.
    pub use_positional: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, layers: usize, heads: usize) -> Self {
        ModelConfig {
            variant,
            layers,
            heads,
            d_qk: EmbeddingTable::get(variant).d_model(),
            scale_scores: false,
            use_positional: variant == Variant::ThreeAttrRel,
        }
    }

    pub fn d_model(&self) -> usize {
        EmbeddingTable::get(self.variant).d_model()
    }

    pub fn seq_len(&self) -> usize {
        self.variant.command_len() + GRID_CELLS
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.layers > MAX_LAYERS {
            return Err(ModelError::Config(format!(
                "layers = {}; attention-only models here have 1 or {MAX_LAYERS} layers",
                self.layers
            )));
        }
        if self.heads == 0 || self.d_qk == 0 {
            return Err(ModelError::Config("heads and d_qk must be positive".into()));
        }
        if self.use_positional != (self.variant == Variant::ThreeAttrRel) {
            return Err(ModelError::Config(
                "positional embeddings are used exactly for three-attr-rel".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    /// `d_qk × d_model`.
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub heads: Vec<HeadWeights<T>>,
    /// `d_model × (heads · d_qk)`.
    pub w_o: Matrix<T>,
}

/// All learnable state: per-layer Q/K/V/O and the optional positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub layers: Vec<LayerWeights<T>>,
    /// `d_model × command_len`.
    pub positional: Option<Matrix<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    fn build(config: &ModelConfig, mut make: impl FnMut(usize, usize) -> Matrix<T>) -> Self {
        let d = config.d_model();
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                heads: (0..config.heads)
                    .map(|_| HeadWeights {
                        w_q: make(config.d_qk, d),
                        w_k: make(config.d_qk, d),
                        w_v: make(config.d_qk, d),
                    })
                    .collect(),
                w_o: make(d, config.heads * config.d_qk),
            })
            .collect();
        let positional = config.use_positional.then(|| make(d, config.variant.command_len()));
        ModelWeights { layers, positional }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, Matrix::zeros)
    }

    /// Gaussian init with standard deviation `std`.
    pub fn random(config: &ModelConfig, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |r, c| Matrix::random_normal(r, c, std, &mut rng))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&Matrix<T>) -> Matrix<U>) -> ModelWeights<U> {
        ModelWeights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadWeights { w_q: f(&h.w_q), w_k: f(&h.w_k), w_v: f(&h.w_v) })
                        .collect(),
                    w_o: f(&l.w_o),
                })
                .collect(),
            positional: self.positional.as_ref().map(f),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        self.map(|m| m.cast())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn head(&self, layer: usize, head: usize) -> Option<&HeadWeights<T>> {
        self.layers.get(layer).and_then(|l| l.heads.get(head))
    }

    /// Columns of `W_o` belonging to `head`: `d_model × d_qk`.
    pub fn output_block(&self, layer: usize, head: usize) -> Matrix<T> {
        let l = &self.layers[layer];
        let d_qk = l.heads[head].w_v.rows();
        let mut out = Matrix::zeros(l.w_o.rows(), d_qk);
        for r in 0..l.w_o.rows() {
            out.row_mut(r).copy_from_slice(&l.w_o.row(r)[head * d_qk..(head + 1) * d_qk]);
        }
        out
    }
}

impl<T: Scalar> ParamSet<T> for ModelWeights<T> {
    fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layers.{l}.heads.{h}.w_q"), &head.w_q));
                out.push((format!("layers.{l}.heads.{h}.w_k"), &head.w_k));
                out.push((format!("layers.{l}.heads.{h}.w_v"), &head.w_v));
            }
            out.push((format!("layers.{l}.w_o"), &layer.w_o));
        }
        if let Some(p) = &self.positional {
            out.push(("positional".to_string(), p));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("layers.{l}.heads.{h}.w_q"), &mut head.w_q));
                out.push((format!("layers.{l}.heads.{h}.w_k"), &mut head.w_k));
                out.push((format!("layers.{l}.heads.{h}.w_v"), &mut head.w_v));
            }
            out.push((format!("layers.{l}.w_o"), &mut layer.w_o));
        }
        if let Some(p) = &mut self.positional {
            out.push(("positional".to_string(), p));
        }
        out
    }
}

/// Token ids: command slots first, then the 36 grid slots in cell order.
pub fn encode_input(example: &Example, variant: Variant) -> Result<Vec<usize>, ModelError> {
    if example.variant() != variant {
        return Err(ModelError::VariantMismatch { expected: variant, found: example.variant() });
    }
    let table = EmbeddingTable::get(variant);
    let mut ids = Vec::with_capacity(variant.command_len() + GRID_CELLS);
    for tok in example.command.tokens() {
        ids.push(table.token_id(tok).ok_or_else(|| ModelError::UnknownToken(tok.to_string()))?);
    }
    for cell in CellIndex::all() {
        ids.push(match example.world.get(cell) {
            Some(obj) => table
                .object_token(obj)
                .ok_or_else(|| ModelError::UnknownToken(crate::datagen::object_label(obj)))?,
            None => table.empty_token(),
        });
    }
    Ok(ids)
}

/// Embedded input sequence `x_1..x_n` as rows, before positional vectors.
pub fn embed_tokens<T: Scalar>(variant: Variant, tokens: &[usize]) -> Matrix<T> {
    let table = EmbeddingTable::get(variant);
    let d = table.d_model();
    let mut x = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        for r in 0..d {
            x[(i, r)] = T::from_f64(table.matrix[(r, t)]);
        }
    }
    x
}

pub(crate) struct Graph {
    pub params: Vec<Var>,
    pub x: Var,
    pub attention: Vec<Vec<Var>>,
    pub values: Vec<Vec<Var>>,
    pub residuals: Vec<Var>,
    pub logits: Var,
}

pub(crate) fn build_graph<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    weights: &ModelWeights<T>,
    tokens: &[usize],
) -> Result<Graph, ModelError> {
    assert_eq!(tokens.len(), config.seq_len(), "sequence length vs {} model", config.variant);
    assert_eq!(weights.layers.len(), config.layers, "weights vs config layer count");
    let params: Vec<Var> = weights.tensors().into_iter().map(|(_, m)| tape.param(m.clone())).collect();
    let mut next = params.iter().copied();

    let mut layer_params = Vec::with_capacity(config.layers);
    for layer in &weights.layers {
        let heads: Vec<[Var; 3]> = layer
            .heads
            .iter()
            .map(|_| [next.next().unwrap(), next.next().unwrap(), next.next().unwrap()])
            .collect();
        layer_params.push((heads, next.next().unwrap()));
    }
    let positional = weights.positional.as_ref().map(|_| next.next().unwrap());

    let mut x = tape.constant(embed_tokens(config.variant, tokens));
    if let Some(p) = positional {
        let cmd_len = config.variant.command_len();
        let slots = (0..tokens.len()).map(|i| (i < cmd_len).then_some(i)).collect();
        let pos = tape.gather(p, slots);
        x = tape.add(x, pos);
    }
    let input = x;

    let score_scale = T::from_f64(1.0 / (config.d_qk as f64).sqrt());
    let mut attention = Vec::with_capacity(config.layers);
    let mut values = Vec::with_capacity(config.layers);
    let mut residuals = Vec::with_capacity(config.layers);
    for (l, (heads, w_o)) in layer_params.iter().enumerate() {
        let mut outs = Vec::with_capacity(heads.len());
        let mut maps = Vec::with_capacity(heads.len());
        let mut vals = Vec::with_capacity(heads.len());
        for (h, [w_q, w_k, w_v]) in heads.iter().enumerate() {
            let q = tape.matmul_nt(x, *w_q);
            let k = tape.matmul_nt(x, *w_k);
            let v = tape.matmul_nt(x, *w_v);
            let mut s = tape.matmul_nt(q, k);
            if config.scale_scores {
                s = tape.scale(s, score_scale);
            }
            let a = tape.softmax_rows(s);
            let o = tape.matmul(a, v);
            if !tape.value(o).is_finite() {
                return Err(ModelError::NonFinite { layer: l, head: h });
            }
            maps.push(a);
            vals.push(v);
            outs.push(o);
        }
        let cat = tape.concat_cols(&outs);
        let delta = tape.matmul_nt(cat, *w_o);
        x = tape.add(x, delta);
        attention.push(maps);
        values.push(vals);
        residuals.push(x);
    }
    let sums = tape.row_sum(x);
    let logits = tape.slice_rows(sums, config.variant.command_len(), GRID_CELLS);
    Ok(Graph { params, x: input, attention, values, residuals, logits })
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub tokens: Vec<usize>,
    /// Input embeddings (including positional vectors), one row per token.
    pub x: Matrix<T>,
    /// `attention[layer][head]`, `n × n`, rows are queries.
    pub attention: Vec<Vec<Matrix<T>>>,
    /// `values[layer][head]`, `n × d_qk`.
    pub values: Vec<Vec<Matrix<T>>>,
    /// Residual stream after each layer, `n × d_model`.
    pub residuals: Vec<Matrix<T>>,
    pub logits: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Argmax over the 36 grid logits, lowest cell on ties.
    pub fn prediction(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn forward<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    tokens: &[usize],
) -> Result<ForwardTrace<T>, ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, tokens)?;
    let vals = |vs: &Vec<Vec<Var>>| -> Vec<Vec<Matrix<T>>> {
        vs.iter().map(|l| l.iter().map(|v| tape.value(*v).clone()).collect()).collect()
    };
    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        x: tape.value(g.x).clone(),
        attention: vals(&g.attention),
        values: vals(&g.values),
        residuals: g.residuals.iter().map(|v| tape.value(*v).clone()).collect(),
        logits: tape.value(g.logits).data().to_vec(),
    })
}

/// Grid logits only.
pub fn logits<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    tokens: &[usize],
) -> Result<Vec<T>, ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, tokens)?;
    Ok(tape.value(g.logits).data().to_vec())
}

/// An encoded example: token ids and target cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub tokens: Vec<usize>,
    pub target: usize,
}

pub fn encode_all(examples: &[Example], variant: Variant) -> Result<Vec<Encoded>, ModelError> {
    examples
        .iter()
        .map(|ex| Ok(Encoded { tokens: encode_input(ex, variant)?, target: ex.target.index() }))
        .collect()
}

/// Adds this example's loss gradient, scaled by `weight`, into `grads`; returns its loss.
pub(crate) fn accumulate_example<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    example: &Encoded,
    weight: T,
    grads: &mut ModelWeights<T>,
) -> Result<T, ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, &example.tokens)?;
    let loss = tape.cross_entropy(g.logits, example.target);
    let mut back = tape.backward(loss);
    for (var, (_, slot)) in g.params.iter().zip(grads.tensors_mut()) {
        if let Some(mut d) = back.take(*var) {
            d.scale_in_place(weight);
            slot.add_assign(&d);
        }
    }
    Ok(tape.value(loss)[(0, 0)])
}

/// Mean cross-entropy over `batch` and its gradient for every learnable tensor.
pub fn loss_and_grads<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    batch: &[Encoded],
) -> Result<(T, ModelWeights<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset("loss over an empty batch".into()));
    }
    let mut grads = weights.zeros_like();
    let w = T::one() / T::from_f64(batch.len() as f64);
    let mut total = T::zero();
    for ex in batch {
        total = total + accumulate_example(weights, config, ex, w, &mut grads)?;
    }
    Ok((total * w, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misprediction {
    pub id: usize,
    pub predicted: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub total: usize,
    pub per_split: BTreeMap<SplitTag, SplitScore>,
    pub errors: Vec<Misprediction>,
}

/// Scores arbitrary predictions against the stored targets.
pub fn score_predictions(examples: &[Example], predictions: &[usize]) -> EvalReport {
    assert_eq!(examples.len(), predictions.len(), "one prediction per example");
    let mut per_split: BTreeMap<SplitTag, SplitScore> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut correct = 0;
    for (id, (ex, &pred)) in examples.iter().zip(predictions).enumerate() {
        let ok = pred == ex.target.index();
        if ok {
            correct += 1;
        } else {
            errors.push(Misprediction { id, predicted: pred, target: ex.target.index() });
        }
        for tag in &ex.tags {
            let s = per_split.entry(*tag).or_insert(SplitScore { correct: 0, total: 0, accuracy: 0.0 });
            s.total += 1;
            s.correct += ok as usize;
        }
    }
    for s in per_split.values_mut() {
        s.accuracy = s.correct as f64 / s.total as f64;
    }
    let total = examples.len();
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        total,
        per_split,
        errors,
    }
}

pub fn predict<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    examples: &[Example],
) -> Result<Vec<usize>, ModelError> {
    examples
        .iter()
        .map(|ex| Ok(argmax(&logits(weights, config, &encode_input(ex, config.variant)?)?)))
        .collect()
}

pub fn evaluate<T: Scalar>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    examples: &[Example],
) -> Result<EvalReport, ModelError> {
    Ok(score_predictions(examples, &predict(weights, config, examples)?))
}

pub fn save_checkpoint(
    config: &ModelConfig,
    weights: &ModelWeights<f32>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        version: VERSION,
        variant: config.variant.as_str().to_string(),
        layers: config.layers,
        heads: config.heads,
        d_model: config.d_model(),
        scale_scores: config.scale_scores,
        tensors: Vec::new(),
    };
    write_checkpoint(path, header, &weights.tensors())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelWeights<f32>), ModelError> {
    let (header, tensors) = read_checkpoint(path)?;
    let inconsistent = |m: String| ModelError::Checkpoint(CheckpointError::Inconsistent(m));
    let variant = Variant::parse(&header.variant).map_err(|e| inconsistent(e.to_string()))?;
    let d_qk = tensors
        .first()
        .map(|(_, m)| m.rows())
        .ok_or_else(|| inconsistent("checkpoint holds no tensors".into()))?;
    let config = ModelConfig {
        variant,
        layers: header.layers,
        heads: header.heads,
        d_qk,
        scale_scores: header.scale_scores,
        use_positional: tensors.iter().any(|(n, _)| n == "positional"),
    };
    config.validate()?;
    if header.d_model != config.d_model() {
        return Err(inconsistent(format!(
            "d_model {} does not match the {variant} embedding width {}",
            header.d_model,
            config.d_model()
        )));
    }
    let mut weights = ModelWeights::<f32>::zeros(&config);
    let slots = weights.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(inconsistent(format!("expected {} tensors, found {}", slots.len(), tensors.len())));
    }
    for ((name, slot), (found, m)) in slots.into_iter().zip(tensors) {
        if name != found || slot.shape() != m.shape() {
            return Err(inconsistent(format!(
                "expected `{name}` {:?}, found `{found}` {:?}",
                slot.shape(),
                m.shape()
            )));
        }
        *slot = m;
    }
    Ok((config, weights))
}
