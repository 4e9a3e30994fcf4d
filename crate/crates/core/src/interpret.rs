//! Reading a trained model at the vocabulary level.
//!
//! `M[a, b]` is the attention score token `a` (as query) gives token `b` (as
//! key); `s[t]` is how much attending to `t` moves a slot's logit. For a
//! one-layer model the grid logits decompose exactly into these pieces, and
//! a hand-built `(B, w)` pair realizes the same mechanism with transparent
//! numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Example, Variant, GRID_CELLS};
use crate::model::{
    encode_input, forward, predict, CommandWord, EmbeddingTable, HeadWeights, LayerWeights,
    ModelConfig, ModelError, ModelWeights, TokenKind,
};
use crate::tensor::{matmul, matmul_tn, Matrix};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("layer {layer} out of range (model has {layers})")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("head {head} out of range (layer has {heads})")]
    HeadOutOfRange { head: usize, heads: usize },
    #[error("requires a one-layer model, got {0} layers")]
    MultiLayer(usize),
    #[error("no construction for {0}")]
    UnsupportedVariant(Variant),
    #[error("variant mismatch: {0} vs {1}")]
    VariantMismatch(Variant, Variant),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_head(weights: &ModelWeights<f64>, layer: usize, head: usize) -> Result<&HeadWeights<f64>, InterpretError> {
    let l = weights
        .layers
        .get(layer)
        .ok_or(InterpretError::LayerOutOfRange { layer, layers: weights.layers.len() })?;
    l.heads.get(head).ok_or(InterpretError::HeadOutOfRange { head, heads: l.heads.len() })
}

/// Embedding matrix (`d × |vocab|`) with positional column `slot` added to every token.
fn embeddings_at(variant: Variant, weights: &ModelWeights<f64>, slot: Option<usize>) -> Matrix<f64> {
    let mut e = EmbeddingTable::get(variant).matrix.clone();
    if let (Some(slot), Some(p)) = (slot, &weights.positional) {
        for r in 0..e.rows() {
            let offset = p[(r, slot)];
            for v in e.row_mut(r) {
                *v += offset;
            }
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabMatrix {
    pub variant: Variant,
    pub layer: usize,
    pub head: usize,
    pub labels: Vec<String>,
    /// Rows are queries, columns are keys.
    pub values: Matrix<f64>,
}

impl VocabMatrix {
    pub fn get(&self, query: &str, key: &str) -> Option<f64> {
        let q = self.labels.iter().position(|l| l == query)?;
        let k = self.labels.iter().position(|l| l == key)?;
        Some(self.values[(q, k)])
    }
}

/// Query-key table over the whole vocabulary, at zero positional offset.
pub fn extract_m(
    weights: &ModelWeights<f64>,
    config: &ModelConfig,
    layer: usize,
    head: usize,
) -> Result<VocabMatrix, InterpretError> {
    extract_m_at(weights, config, layer, head, None, None)
}

/// As [`extract_m`], with the positional vectors of `query_slot` / `key_slot`
/// added to the query and key embeddings respectively.
pub fn extract_m_at(
    weights: &ModelWeights<f64>,
    config: &ModelConfig,
    layer: usize,
    head: usize,
    query_slot: Option<usize>,
    key_slot: Option<usize>,
) -> Result<VocabMatrix, InterpretError> {
    let h = check_head(weights, layer, head)?;
    let q = matmul(&h.w_q, &embeddings_at(config.variant, weights, query_slot));
    let k = matmul(&h.w_k, &embeddings_at(config.variant, weights, key_slot));
    Ok(VocabMatrix {
        variant: config.variant,
        layer,
        head,
        labels: EmbeddingTable::get(config.variant).vocab.clone(),
        values: matmul_tn(&q, &k),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SVector {
    pub variant: Variant,
    pub layer: usize,
    pub head: usize,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl SVector {
    pub fn get(&self, token: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == token).map(|i| self.values[i])
    }
}

/// `s[t] = ⟨1, W_o W_V E[:, t]⟩` for one head. For layers past the first
/// this reads the raw embeddings, not the residual stream that layer sees.
pub fn extract_s_head(
    weights: &ModelWeights<f64>,
    config: &ModelConfig,
    layer: usize,
    head: usize,
) -> Result<SVector, InterpretError> {
    let h = check_head(weights, layer, head)?;
    let ov = matmul(&weights.output_block(layer, head), &h.w_v);
    let e = &EmbeddingTable::get(config.variant).matrix;
    let out = matmul(&ov, e);
    let values = (0..out.cols()).map(|t| out.column(t).iter().sum()).collect();
    Ok(SVector {
        variant: config.variant,
        layer,
        head,
        labels: EmbeddingTable::get(config.variant).vocab.clone(),
        values,
    })
}

/// `s` of the first layer's first head.
pub fn extract_s(weights: &ModelWeights<f64>, config: &ModelConfig) -> Result<SVector, InterpretError> {
    extract_s_head(weights, config, 0, 0)
}

/// +1 when the command-token entries of `s` sum to a non-negative value, -1 otherwise.
pub fn command_sign(s: &SVector) -> f64 {
    let table = EmbeddingTable::get(s.variant);
    let total: f64 = table.command_token_ids_all().map(|t| s.values[t]).sum();
    if total < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Fraction of the example's largest command summand above which a summand counts as large.
pub const LARGE_SUMMAND_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchClass {
    FullMatch,
    PartialMatch,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summand {
    pub head: usize,
    pub slot: usize,
    pub token: String,
    pub is_command: bool,
    pub alpha: f64,
    pub s: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDecomposition {
    pub cell: usize,
    pub token: String,
    pub baseline: f64,
    pub summands: Vec<Summand>,
    /// `baseline + Σ products`.
    pub total: f64,
    /// Logit from the forward pass.
    pub logit: f64,
    pub large_command_summands: usize,
    pub class: MatchClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub variant: Variant,
    pub command: Vec<String>,
    pub target: usize,
    pub prediction: usize,
    pub cells: Vec<CellDecomposition>,
    /// `max |total − logit|` over cells.
    pub max_identity_error: f64,
}

/// Splits every grid logit of a one-layer model into `⟨1, x_i⟩ + Σ_j α_ij s_j`.
///
/// A command summand is large when its sign-normalized value reaches
/// [`LARGE_SUMMAND_RATIO`] of the example's largest one; two or more large
/// summands is a full match, one is partial.
pub fn decompose_logits(
    weights: &ModelWeights<f64>,
    config: &ModelConfig,
    example: &Example,
) -> Result<DecompositionReport, InterpretError> {
    if config.layers != 1 {
        return Err(InterpretError::MultiLayer(config.layers));
    }
    if example.variant() != config.variant {
        return Err(InterpretError::VariantMismatch(config.variant, example.variant()));
    }
    let table = EmbeddingTable::get(config.variant);
    let tokens = encode_input(example, config.variant)?;
    let trace = forward(weights, config, &tokens)?;
    let n = tokens.len();
    let cmd_len = config.variant.command_len();

    // s per head per slot, from the actual slot inputs (positional vectors included).
    let per_head_s: Vec<Vec<f64>> = (0..config.heads)
        .map(|h| {
            let out = crate::tensor::matmul_nt(&trace.values[0][h], &weights.output_block(0, h));
            out.row_sums()
        })
        .collect();
    let sign = {
        let total: f64 = per_head_s.iter().flat_map(|s| s[..cmd_len].iter()).sum();
        if total < 0.0 {
            -1.0
        } else {
            1.0
        }
    };

    let mut cells = Vec::with_capacity(GRID_CELLS);
    let mut max_cmd: f64 = 0.0;
    for c in 0..GRID_CELLS {
        let i = cmd_len + c;
        let baseline: f64 = trace.x.row(i).iter().sum();
        let mut summands = Vec::with_capacity(n * config.heads);
        for (h, s) in per_head_s.iter().enumerate() {
            let alpha = trace.attention[0][h].row(i);
            for j in 0..n {
                let product = alpha[j] * s[j];
                if j < cmd_len {
                    max_cmd = max_cmd.max(sign * product);
                }
                summands.push(Summand {
                    head: h,
                    slot: j,
                    token: table.vocab[tokens[j]].clone(),
                    is_command: j < cmd_len,
                    alpha: alpha[j],
                    s: s[j],
                    product,
                });
            }
        }
        let total = baseline + summands.iter().map(|r| r.product).sum::<f64>();
        cells.push(CellDecomposition {
            cell: c,
            token: table.vocab[tokens[i]].clone(),
            baseline,
            summands,
            total,
            logit: trace.logits[c],
            large_command_summands: 0,
            class: MatchClass::NoMatch,
        });
    }
    let threshold = LARGE_SUMMAND_RATIO * max_cmd;
    for cell in &mut cells {
        let large = cell
            .summands
            .iter()
            .filter(|r| r.is_command && max_cmd > 0.0 && sign * r.product >= threshold)
            .count();
        cell.large_command_summands = large;
        cell.class = match large {
            0 => MatchClass::NoMatch,
            1 => MatchClass::PartialMatch,
            _ => MatchClass::FullMatch,
        };
    }
    let max_identity_error = cells.iter().map(|c| (c.total - c.logit).abs()).fold(0.0, f64::max);
    Ok(DecompositionReport {
        variant: config.variant,
        command: example.command.tokens().iter().map(|t| t.to_string()).collect(),
        target: example.target.index(),
        prediction: trace.prediction(),
        cells,
        max_identity_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub variant: Variant,
    /// Score a grid query gives a command key naming one of its colors or shapes.
    pub gamma_attr: f64,
    /// Peak of the size-word ramps.
    pub gamma_size: f64,
    /// Logit gain per unit of attention on a command attribute token.
    pub sigma: f64,
}

impl ConstructionParams {
    pub fn new(variant: Variant) -> Self {
        ConstructionParams { variant, gamma_attr: 8.0, gamma_size: 4.0, sigma: 4.0 }
    }

    fn check(&self) -> Result<(), InterpretError> {
        match self.variant {
            Variant::TwoAttr | Variant::ThreeAttr => Ok(()),
            v => Err(InterpretError::UnsupportedVariant(v)),
        }
    }

    /// `d × d` bilinear table; rows are query dimensions, columns key dimensions.
    pub fn bilinear(&self) -> Result<Matrix<f64>, InterpretError> {
        self.check()?;
        let table = EmbeddingTable::get(self.variant);
        let dim = |name: &str| table.dim_id(name).expect("known dimension");
        let mut b = Matrix::zeros(table.d_model(), table.d_model());
        for kind in &table.kinds {
            match kind {
                TokenKind::Command(CommandWord::Color(c)) => {
                    b[(dim(&format!("world_{c}")), dim(c.as_str()))] = self.gamma_attr;
                }
                TokenKind::Command(CommandWord::Shape(s)) => {
                    b[(dim(&format!("world_{s}")), dim(s.as_str()))] = self.gamma_attr;
                }
                _ => {}
            }
        }
        if self.variant.has_size() {
            for k in 1..=4u8 {
                let row = dim(&format!("world_size_{k}"));
                b[(row, dim("big"))] = self.gamma_size * f64::from(k - 1) / 3.0;
                b[(row, dim("small"))] = self.gamma_size * f64::from(4 - k) / 3.0;
            }
        }
        Ok(b)
    }

    /// Value read-out vector: `sigma` on command-attribute dimensions.
    pub fn readout(&self) -> Result<Vec<f64>, InterpretError> {
        self.check()?;
        let table = EmbeddingTable::get(self.variant);
        let mut w = vec![0.0; table.d_model()];
        for id in table.command_token_ids_all() {
            let col = table.column(id);
            for (r, v) in col.iter().enumerate() {
                if *v != 0.0 {
                    w[r] = self.sigma;
                }
            }
        }
        Ok(w)
    }
}

/// One-layer one-head weights realizing `⟨q_i, k_j⟩ = x_iᵀ B x_j` and `⟨1, W_o v_j⟩ = ⟨w, x_j⟩`.
pub fn build_construction(
    params: &ConstructionParams,
) -> Result<(ModelConfig, ModelWeights<f64>), InterpretError> {
    let b = params.bilinear()?;
    let w = params.readout()?;
    let d = b.rows();
    let config = ModelConfig::new(params.variant, 1, 1);
    let mut w_o = Matrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            w_o[(r, c)] = w[c] / d as f64;
        }
    }
    let weights = ModelWeights {
        layers: vec![LayerWeights {
            heads: vec![HeadWeights { w_q: b.transpose(), w_k: Matrix::identity(d), w_v: Matrix::identity(d) }],
            w_o,
        }],
        positional: None,
    };
    Ok((config, weights))
}

/// Tries `(gamma_attr, gamma_size, sigma)` candidates in order and returns the
/// first whose construction predicts every example correctly.
pub fn search_construction(
    variant: Variant,
    candidates: &[(f64, f64, f64)],
    examples: &[Example],
) -> Result<Option<ConstructionParams>, InterpretError> {
    for &(gamma_attr, gamma_size, sigma) in candidates {
        let params = ConstructionParams { variant, gamma_attr, gamma_size, sigma };
        let (config, weights) = build_construction(&params)?;
        let preds = predict(&weights, &config, examples)?;
        if preds.iter().zip(examples).all(|(p, e)| *p == e.target.index()) {
            return Ok(Some(params));
        }
    }
    Ok(None)
}

/// Default search grid, smallest magnitudes first.
pub fn default_search_grid(variant: Variant) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for gamma_attr in [2.0, 4.0, 8.0, 16.0] {
        let sizes: Vec<f64> =
            if variant.has_size() { vec![gamma_attr / 4.0, gamma_attr / 2.0] } else { vec![0.0] };
        for gamma_size in sizes {
            for sigma in [1.0, 2.0, 4.0, 8.0] {
                out.push((gamma_attr, gamma_size, sigma));
            }
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "spearman over unequal lengths");
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|i, j| x[*i].total_cmp(&x[*j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnAgreement {
    pub key: String,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub columns: Vec<ColumnAgreement>,
    /// Mean over columns with a defined correlation.
    pub mean_spearman: Option<f64>,
    pub prediction_agreement: f64,
    /// Whether the learned model's `M` was negated because its command `s` is negative.
    pub sign_flipped: bool,
}

/// Rank agreement of the two `M` tables on grid queries, per command key,
/// and argmax agreement over `examples`.
pub fn compare_learned_vs_construct(
    learned: (&ModelConfig, &ModelWeights<f64>),
    construct: (&ModelConfig, &ModelWeights<f64>),
    examples: &[Example],
) -> Result<AgreementReport, InterpretError> {
    let (lc, lw) = learned;
    let (cc, cw) = construct;
    if lc.variant != cc.variant {
        return Err(InterpretError::VariantMismatch(lc.variant, cc.variant));
    }
    if lc.layers != 1 || cc.layers != 1 || lc.heads != 1 || cc.heads != 1 {
        return Err(InterpretError::ShapeMismatch("both models must be 1-layer 1-head".into()));
    }
    let ml = extract_m(lw, lc, 0, 0)?;
    let mc = extract_m(cw, cc, 0, 0)?;
    let sign = command_sign(&extract_s(lw, lc)?);
    let table = EmbeddingTable::get(lc.variant);
    let grid: Vec<usize> = table.grid_token_ids().collect();
    let columns: Vec<ColumnAgreement> = table
        .command_token_ids_all()
        .map(|k| {
            let a: Vec<f64> = grid.iter().map(|g| sign * ml.values[(*g, k)]).collect();
            let b: Vec<f64> = grid.iter().map(|g| mc.values[(*g, k)]).collect();
            ColumnAgreement { key: table.vocab[k].clone(), spearman: spearman(&a, &b) }
        })
        .collect();
    let defined: Vec<f64> = columns.iter().filter_map(|c| c.spearman).collect();
    let mean_spearman = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let pl = predict(lw, lc, examples)?;
    let pc = predict(cw, cc, examples)?;
    let agree = pl.iter().zip(&pc).filter(|(a, b)| a == b).count();
    Ok(AgreementReport {
        columns,
        mean_spearman,
        prediction_agreement: if examples.is_empty() { 0.0 } else { agree as f64 / examples.len() as f64 },
        sign_flipped: sign < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnOrdering {
    pub key: String,
    pub min_matching: f64,
    pub max_nonmatching: f64,
    pub holds: bool,
}

/// For each color/shape command key: does every grid query carrying that
/// attribute score it above every grid query that does not? `sign` flips `M`
/// first (pass [`command_sign`] of the model's `s`).
pub fn column_ordering(m: &VocabMatrix, sign: f64) -> Vec<ColumnOrdering> {
    let table = EmbeddingTable::get(m.variant);
    table
        .command_token_ids_all()
        .filter(|k| {
            matches!(table.kinds[*k], TokenKind::Command(CommandWord::Color(_) | CommandWord::Shape(_)))
        })
        .map(|k| {
            let mut min_matching = f64::INFINITY;
            let mut max_nonmatching = f64::NEG_INFINITY;
            for g in table.grid_token_ids() {
                let v = sign * m.values[(g, k)];
                if table.attribute_match(g, k) {
                    min_matching = min_matching.min(v);
                } else {
                    max_nonmatching = max_nonmatching.max(v);
                }
            }
            ColumnOrdering {
                key: table.vocab[k].clone(),
                min_matching,
                max_nonmatching,
                holds: min_matching > max_nonmatching,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Csv,
    Pgm,
    Svg,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
            HeatmapFormat::Svg => "svg",
        }
    }
}

/// Gray level per entry: minimum → 255 (white), maximum → 0 (black); a
/// constant matrix is uniformly 128.
pub fn gray_levels(values: &Matrix<f64>) -> Vec<u8> {
    let (lo, hi) = values
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    values
        .data()
        .iter()
        .map(|v| if hi > lo { (255.0 * (hi - v) / (hi - lo)).round() as u8 } else { 128 })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn heatmap_csv(rows: &[String], cols: &[String], values: &Matrix<f64>) -> String {
    let mut out = String::new();
    for c in cols {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (r, label) in rows.iter().enumerate() {
        out.push_str(&csv_field(label));
        for v in values.row(r) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses [`heatmap_csv`] output back into labels and values.
pub fn parse_heatmap_csv(text: &str) -> Option<(Vec<String>, Vec<String>, Matrix<f64>)> {
    let mut lines = text.lines();
    let cols: Vec<String> = lines.next()?.split(',').skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for line in lines {
        let mut fields = line.split(',');
        rows.push(fields.next()?.to_string());
        for f in fields {
            data.push(f.parse().ok()?);
        }
    }
    (data.len() == rows.len() * cols.len()).then(|| {
        let m = Matrix::from_vec(rows.len(), cols.len(), data);
        (rows, cols, m)
    })
}

pub fn heatmap_pgm(values: &Matrix<f64>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", values.cols(), values.rows()).into_bytes();
    out.extend(gray_levels(values));
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn heatmap_svg(rows: &[String], cols: &[String], values: &Matrix<f64>) -> String {
    const CELL: usize = 14;
    const MARGIN: usize = 110;
    let grays = gray_levels(values);
    let (w, h) = (MARGIN + CELL * cols.len(), MARGIN + CELL * rows.len());
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"9\">\n"
    );
    for (c, label) in cols.iter().enumerate() {
        let x = MARGIN + c * CELL + CELL / 2;
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-90 {x} {})\">{}</text>",
            MARGIN - 4,
            MARGIN - 4,
            xml_escape(label)
        );
    }
    for (r, label) in rows.iter().enumerate() {
        let y = MARGIN + r * CELL;
        let _ = writeln!(out, "<text x=\"2\" y=\"{}\">{}</text>", y + CELL - 4, xml_escape(label));
        for c in 0..cols.len() {
            let g = grays[r * cols.len() + c];
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({g},{g},{g})\"><title>{}</title></rect>",
                MARGIN + c * CELL,
                values[(r, c)]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn export_heatmap(
    rows: &[String],
    cols: &[String],
    values: &Matrix<f64>,
    path: impl AsRef<Path>,
    format: HeatmapFormat,
) -> Result<(), InterpretError> {
    if rows.len() != values.rows() || cols.len() != values.cols() {
        return Err(InterpretError::ShapeMismatch(format!(
            "{}×{} labels for a {:?} matrix",
            rows.len(),
            cols.len(),
            values.shape()
        )));
    }
    if !values.is_finite() {
        return Err(InterpretError::NonFinite);
    }
    match format {
        HeatmapFormat::Csv => fs::write(path, heatmap_csv(rows, cols, values))?,
        HeatmapFormat::Pgm => fs::write(path, heatmap_pgm(values))?,
        HeatmapFormat::Svg => fs::write(path, heatmap_svg(rows, cols, values))?,
    }
    Ok(())
}
