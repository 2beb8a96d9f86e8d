//! Parameter layout and the forward computations of the parser.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{softmax, Graph, Var};
use super::params::{Gradients, ParamId, ParamSet, Tensor};
use super::vocab::{Vocab, EOD, SOD, UNK};
use super::Real;
use crate::doc::{Document, LabelSet, RelationLabel};
use crate::tree::{tree_to_splits_e2e, tree_to_splits_edu, TreeError};

/// Which segmentation the parser works on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseMode {
    /// Token-level boundaries; EDUs are predicted.
    #[default]
    #[serde(rename = "e2e")]
    EndToEnd,
    /// EDU-level boundaries from the gold segmentation.
    #[serde(rename = "gold-edu")]
    GoldEdu,
}

impl fmt::Display for ParseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseMode::EndToEnd => "e2e",
            ParseMode::GoldEdu => "gold-edu",
        })
    }
}

impl FromStr for ParseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e2e" | "end-to-end" => Ok(ParseMode::EndToEnd),
            "gold-edu" | "edu" => Ok(ParseMode::GoldEdu),
            other => Err(format!("unknown mode `{other}` (expected e2e or gold-edu)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderInit {
    /// Linear projection of the final encoder states.
    #[default]
    Learned,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub use_chars: bool,
    pub char_dim: usize,
    /// Per direction.
    pub char_hidden: usize,
    /// Per direction; the decoder uses the same size.
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub mlp_dim: usize,
    pub boundary_lstm: bool,
    pub decoder_init: DecoderInit,
    pub leaky_slope: f64,
    /// Inverted dropout on embeddings and encoder outputs during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            use_chars: true,
            char_dim: 50,
            char_hidden: 50,
            hidden: 400,
            enc_layers: 3,
            dec_layers: 3,
            mlp_dim: 500,
            boundary_lstm: true,
            decoder_init: DecoderInit::Learned,
            leaky_slope: 0.01,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        let dims = [
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("mlp_dim", self.mlp_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.use_chars && (self.char_dim == 0 || self.char_hidden == 0) {
            return Err(ModelError::Config("char_dim and char_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("label set is empty")]
    NoLabels,
    #[error("config enables characters but no character vocabulary was given")]
    MissingChars,
    #[error("document `{0}` has no tokens")]
    EmptyDocument(String),
    #[error("document `{0}` has no EDU boundaries (required in gold-edu mode)")]
    MissingEdus(String),
    #[error("document `{0}` has no gold tree")]
    MissingTree(String),
    #[error("span ({i}, {j}) is outside boundaries 0..={size}")]
    SpanOutOfRange { i: usize, j: usize, size: usize },
    #[error("span ({i}, {j}) has no valid split point")]
    EmptyRange { i: usize, j: usize },
    #[error("label {0} is not in the model's label set")]
    UnknownLabel(RelationLabel),
    #[error("gold tree: {0}")]
    Tree(#[from] TreeError),
    #[error("gold boundary {0} is not an EDU boundary")]
    NotEduBoundary(usize),
}

#[derive(Clone, Debug)]
struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    word_emb: ParamId,
    char_emb: Option<ParamId>,
    char_lstm: Option<BiLstm>,
    encoder: Vec<BiLstm>,
    boundary: Option<BiLstm>,
    w1: ParamId,
    w2: ParamId,
    decoder: Vec<Lstm>,
    dec_init: Option<Linear>,
    mlp_d: Linear,
    mlp_h: Linear,
    w_dh: ParamId,
    w_h: ParamId,
    mlp_l: Linear,
    mlp_r: Linear,
    w_lr: ParamId,
    w_l: ParamId,
    w_r: ParamId,
    b_l: ParamId,
}

struct Builder<T> {
    params: ParamSet<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(self.rng.gen_range(-limit..limit))).collect();
        self.params.add(name, Tensor { rows, cols, data })
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let limit = (3.0 / cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(self.rng.gen_range(-limit..limit))).collect();
        self.params.add(name, Tensor { rows, cols, data })
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.params.add(name, Tensor::zeros(rows, cols))
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Linear {
        Linear { w: self.xavier(format!("{name}.w"), out, inp), b: self.zeros(format!("{name}.b"), 1, out) }
    }

    fn lstm(&mut self, name: &str, inp: usize, hidden: usize) -> Lstm {
        let w_ih = self.xavier(format!("{name}.w_ih"), 4 * hidden, inp);
        let w_hh = self.xavier(format!("{name}.w_hh"), 4 * hidden, hidden);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for v in &mut bias.data[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = self.params.add(format!("{name}.b"), bias);
        Lstm { w_ih, w_hh, b }
    }

    fn bilstm(&mut self, name: &str, inp: usize, hidden: usize) -> BiLstm {
        BiLstm {
            fwd: self.lstm(&format!("{name}.fwd"), inp, hidden),
            bwd: self.lstm(&format!("{name}.bwd"), inp, hidden),
        }
    }
}

/// Encoder output for one document.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub mode: ParseMode,
    /// `h_0 .. h_n`, one row per token boundary.
    pub token_boundaries: Var,
    /// Rows used for pointing and labeling: `h` in end-to-end mode, `h̄` in
    /// gold-EDU mode.
    pub boundaries: Var,
    /// `MLP_h` applied to every row of `boundaries`.
    pub projected: Var,
    /// `[f_{n+1}; b_0]`, the final states of the two directions.
    pub summary: Var,
    /// Token boundary of each row of `boundaries` in gold-EDU mode.
    pub positions: Option<Vec<usize>>,
    /// Largest boundary index (`n`, or `m` in gold-EDU mode).
    pub size: usize,
}

impl Encoded {
    /// Index of token boundary `b` among the pointing rows.
    pub fn index_of(&self, b: usize) -> Result<usize, ModelError> {
        match &self.positions {
            None => Ok(b),
            Some(p) => p.binary_search(&b).map_err(|_| ModelError::NotEduBoundary(b)),
        }
    }

    /// Token boundary of pointing row `idx`.
    pub fn position(&self, idx: usize) -> usize {
        match &self.positions {
            None => idx,
            Some(p) => p[idx],
        }
    }
}

/// Layered decoder LSTM state `(h, c)` per layer.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: Vec<(Var, Var)>,
}

/// A teacher-forcing step in pointing-row coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub label: Option<RelationLabel>,
}

/// Loss terms for one document.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub split: Var,
    pub label: Var,
    pub total: Var,
}

pub enum PointingMode {
    /// Softmax over every boundary.
    Training,
    /// Candidate splits restricted to the valid range of a span.
    Inference(ParseMode),
}

/// Pointing probabilities for span `(i, j)`. Training mode returns the
/// softmax over all boundaries; inference mode zeroes every boundary outside
/// the valid range and renormalizes.
pub fn pointing_distribution<T: Real>(
    scores: &[T],
    i: usize,
    j: usize,
    mode: PointingMode,
) -> Result<Vec<T>, ModelError> {
    if i >= j || j >= scores.len() {
        return Err(ModelError::SpanOutOfRange { i, j, size: scores.len().saturating_sub(1) });
    }
    match mode {
        PointingMode::Training => Ok(softmax(scores)),
        PointingMode::Inference(m) => {
            let range = valid_range(i, j, m);
            if range.is_empty() {
                return Err(ModelError::EmptyRange { i, j });
            }
            let sub = softmax(&scores[range.clone()]);
            let mut out = vec![T::zero(); scores.len()];
            out[range].copy_from_slice(&sub);
            Ok(out)
        }
    }
}

/// Candidate split points of `(i, j)`: `i < k <= j` end to end, `i < k < j`
/// over gold EDUs.
pub fn valid_range(i: usize, j: usize, mode: ParseMode) -> std::ops::Range<usize> {
    match mode {
        ParseMode::EndToEnd => i + 1..j + 1,
        ParseMode::GoldEdu => i + 1..j,
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub chars: Option<Vocab>,
    pub labels: LabelSet,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl<T: Real> Model<T> {
    /// Fresh model with Xavier-uniform weights, zero biases and forget-gate
    /// biases of one.
    pub fn new(
        config: ModelConfig,
        vocab: Vocab,
        chars: Option<Vocab>,
        labels: LabelSet,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.check()?;
        if labels.is_empty() {
            return Err(ModelError::NoLabels);
        }
        let chars = if config.use_chars { Some(chars.ok_or(ModelError::MissingChars)?) } else { None };
        let mut b = Builder { params: ParamSet::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let h = config.hidden;
        let d = config.mlp_dim;
        let nl = labels.len();

        let word_emb = b.embedding("word_emb", vocab.len(), config.word_dim);
        let (char_emb, char_lstm) = match &chars {
            Some(cv) => (
                Some(b.embedding("char_emb", cv.len(), config.char_dim)),
                Some(b.bilstm("char", config.char_dim, config.char_hidden)),
            ),
            None => (None, None),
        };
        let mut inp = config.word_dim + if config.use_chars { 2 * config.char_hidden } else { 0 };
        let mut encoder = Vec::new();
        for l in 0..config.enc_layers {
            encoder.push(b.bilstm(&format!("enc{l}"), inp, h));
            inp = 2 * h;
        }
        let boundary = config.boundary_lstm.then(|| b.bilstm("boundary", 2 * h, h));
        let w1 = b.xavier("span.w1".into(), 2 * h, 2 * h);
        let w2 = b.xavier("span.w2".into(), 2 * h, 2 * h);
        let mut decoder = Vec::new();
        for l in 0..config.dec_layers {
            let inp = if l == 0 { 2 * h } else { h };
            decoder.push(b.lstm(&format!("dec{l}"), inp, h));
        }
        let dec_init = (config.decoder_init == DecoderInit::Learned)
            .then(|| b.linear("dec_init", 2 * config.dec_layers * h, 2 * h));
        let mlp_d = b.linear("mlp_d", d, h);
        let mlp_h = b.linear("mlp_h", d, 2 * h);
        let w_dh = b.xavier("point.w_dh".into(), d, d);
        let w_h = b.xavier("point.w_h".into(), 1, d);
        let mlp_l = b.linear("mlp_l", d, 4 * h);
        let mlp_r = b.linear("mlp_r", d, 4 * h);
        let w_lr = b.xavier("label.w_lr".into(), nl * d, d);
        let w_l = b.xavier("label.w_l".into(), nl, d);
        let w_r = b.xavier("label.w_r".into(), nl, d);
        let b_l = b.zeros("label.b".into(), 1, nl);

        let layout = Layout {
            word_emb,
            char_emb,
            char_lstm,
            encoder,
            boundary,
            w1,
            w2,
            decoder,
            dec_init,
            mlp_d,
            mlp_h,
            w_dh,
            w_h,
            mlp_l,
            mlp_r,
            w_lr,
            w_l,
            w_r,
            b_l,
        };
        Ok(Model { config, vocab, chars, labels, params: b.params, layout })
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            chars: self.chars.clone(),
            labels: self.labels.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.params.id_of(name)
    }

    pub fn word_embedding_id(&self) -> ParamId {
        self.layout.word_emb
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn graph(&self) -> Graph<'_, T> {
        Graph::new(&self.params)
    }

    fn slope(&self) -> T {
        T::of(self.config.leaky_slope)
    }

    fn dropout(&self, g: &mut Graph<'_, T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let (r, c) = g.shape(x);
                let keep = T::of(1.0 / (1.0 - p));
                let mask = (0..r * c).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
                g.mask(x, mask)
            }
            _ => x,
        }
    }

    /// Hidden states of one LSTM direction over the rows of `xs`, returned in
    /// row order.
    fn run_lstm(&self, g: &mut Graph<'_, T>, lstm: &Lstm, xs: Var, reverse: bool) -> Vec<Var> {
        let n = g.shape(xs).0;
        let w_ih = g.param(lstm.w_ih);
        let w_hh = g.param(lstm.w_hh);
        let b = g.param(lstm.b);
        let pre = g.affine(xs, w_ih, Some(b));
        let mut out = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let x = g.row(pre, t);
            let gates = match state {
                Some((h, _)) => {
                    let rec = g.affine(h, w_hh, None);
                    g.add(x, rec)
                }
                None => x,
            };
            let (h, c) = g.lstm_cell(gates, state.map(|s| s.1));
            out[t] = Some(h);
            state = Some((h, c));
        }
        out.into_iter().map(Option::unwrap).collect()
    }

    /// Forward and backward state matrices of a Bi-LSTM layer.
    fn run_bilstm(&self, g: &mut Graph<'_, T>, layer: &BiLstm, xs: Var) -> (Var, Var) {
        let f = self.run_lstm(g, &layer.fwd, xs, false);
        let b = self.run_lstm(g, &layer.bwd, xs, true);
        (g.concat_rows(&f), g.concat_rows(&b))
    }

    fn char_rep(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Var {
        let (emb, lstm) = (self.layout.char_emb.unwrap(), self.layout.char_lstm.as_ref().unwrap());
        let table = g.param(emb);
        let xs = g.gather(table, ids);
        let f = self.run_lstm(g, &lstm.fwd, xs, false);
        let b = self.run_lstm(g, &lstm.bwd, xs, true);
        g.concat_cols(&[*f.last().unwrap(), b[0]])
    }

    /// Encodes `doc` with sentinels around the tokens.
    pub fn encode(&self, g: &mut Graph<'_, T>, doc: &Document, mode: ParseMode) -> Result<Encoded, ModelError> {
        self.encode_with(g, doc, mode, None)
    }

    pub fn encode_with(
        &self,
        g: &mut Graph<'_, T>,
        doc: &Document,
        mode: ParseMode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded, ModelError> {
        let n = doc.len();
        if n == 0 {
            return Err(ModelError::EmptyDocument(doc.id.clone()));
        }
        let positions = match mode {
            ParseMode::EndToEnd => None,
            ParseMode::GoldEdu => {
                let edus = doc.edu_boundaries.as_ref().ok_or_else(|| ModelError::MissingEdus(doc.id.clone()))?;
                Some(std::iter::once(0).chain(edus.iter().copied()).collect::<Vec<_>>())
            }
        };

        let mut ids = Vec::with_capacity(n + 2);
        ids.push(SOD);
        ids.extend(doc.tokens.iter().map(|t| self.vocab.id(t)));
        ids.push(EOD);
        let table = g.param(self.layout.word_emb);
        let words = g.gather(table, &ids);
        let mut x = if let Some(cv) = &self.chars {
            let mut cache: HashMap<&str, Var> = HashMap::new();
            let mut reps = Vec::with_capacity(n + 2);
            reps.push(self.char_rep(g, &[SOD]));
            for t in &doc.tokens {
                let rep = match cache.get(t.as_str()) {
                    Some(&v) => v,
                    None => {
                        let mut cids = cv.char_ids(t);
                        if cids.is_empty() {
                            cids.push(UNK);
                        }
                        let v = self.char_rep(g, &cids);
                        cache.insert(t, v);
                        v
                    }
                };
                reps.push(rep);
            }
            reps.push(self.char_rep(g, &[EOD]));
            let chars = g.concat_rows(&reps);
            g.concat_cols(&[chars, words])
        } else {
            words
        };
        x = self.dropout(g, x, &mut rng);

        let mut fb = (x, x);
        for layer in &self.layout.encoder {
            fb = self.run_bilstm(g, layer, x);
            x = g.concat_cols(&[fb.0, fb.1]);
            x = self.dropout(g, x, &mut rng);
        }
        let (f, b) = fb;
        let fwd_rows: Vec<usize> = (0..=n).collect();
        let bwd_rows: Vec<usize> = (1..=n + 1).collect();
        let fk = g.gather(f, &fwd_rows);
        let bk = g.gather(b, &bwd_rows);
        let token_boundaries = g.concat_cols(&[fk, bk]);
        let f_last = g.row(f, n + 1);
        let b_first = g.row(b, 0);
        let summary = g.concat_cols(&[f_last, b_first]);

        let (boundaries, size) = match &positions {
            None => (token_boundaries, n),
            Some(p) => {
                let sel = g.gather(token_boundaries, p);
                let rows = match &self.layout.boundary {
                    Some(layer) => {
                        let (bf, bb) = self.run_bilstm(g, layer, sel);
                        g.concat_cols(&[bf, bb])
                    }
                    None => sel,
                };
                (rows, p.len() - 1)
            }
        };
        let (w, bias) = (g.param(self.layout.mlp_h.w), g.param(self.layout.mlp_h.b));
        let pre = g.affine(boundaries, w, Some(bias));
        let projected = g.leaky_relu(pre, self.slope());
        Ok(Encoded { mode, token_boundaries, boundaries, projected, summary, positions, size })
    }

    /// `W_1 h_i + W_2 h_j` over pointing rows.
    pub fn span_rep(&self, g: &mut Graph<'_, T>, enc: &Encoded, i: usize, j: usize) -> Result<Var, ModelError> {
        if i >= j || j > enc.size {
            return Err(ModelError::SpanOutOfRange { i, j, size: enc.size });
        }
        let hi = g.row(enc.boundaries, i);
        let hj = g.row(enc.boundaries, j);
        let w1 = g.param(self.layout.w1);
        let w2 = g.param(self.layout.w2);
        let a = g.affine(hi, w1, None);
        let b = g.affine(hj, w2, None);
        Ok(g.add(a, b))
    }

    pub fn init_decoder(&self, g: &mut Graph<'_, T>, enc: &Encoded) -> DecoderState {
        let h = self.config.hidden;
        let layers = match &self.layout.dec_init {
            Some(lin) => {
                let (w, b) = (g.param(lin.w), g.param(lin.b));
                let p = g.affine(enc.summary, w, Some(b));
                (0..self.config.dec_layers)
                    .map(|l| (g.slice_cols(p, 2 * l * h, h), g.slice_cols(p, (2 * l + 1) * h, h)))
                    .collect()
            }
            None => (0..self.config.dec_layers).map(|_| (g.zeros(1, h), g.zeros(1, h))).collect(),
        };
        DecoderState { layers }
    }

    /// Advances the decoder on `input` and scores every boundary:
    /// `s_i = d'^T W_dh h'_i + h'_i^T w_h`. Scores are a `1 x (size + 1)` row.
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_, T>,
        enc: &Encoded,
        state: &DecoderState,
        input: Var,
    ) -> (DecoderState, Var) {
        let mut x = input;
        let mut layers = Vec::with_capacity(state.layers.len());
        for (lstm, &(h_prev, c_prev)) in self.layout.decoder.iter().zip(&state.layers) {
            let (w_ih, w_hh, b) = (g.param(lstm.w_ih), g.param(lstm.w_hh), g.param(lstm.b));
            let a = g.affine(x, w_ih, Some(b));
            let r = g.affine(h_prev, w_hh, None);
            let gates = g.add(a, r);
            let (h, c) = g.lstm_cell(gates, Some(c_prev));
            layers.push((h, c));
            x = h;
        }
        let (w, b) = (g.param(self.layout.mlp_d.w), g.param(self.layout.mlp_d.b));
        let pre = g.affine(x, w, Some(b));
        let dp = g.leaky_relu(pre, self.slope());
        let w_dh = g.param(self.layout.w_dh);
        let w_h = g.param(self.layout.w_h);
        let u = g.matmul(dp, w_dh);
        let u = g.add(u, w_h);
        let col = g.affine(enc.projected, u, None);
        let scores = g.reshape(col, 1, enc.size + 1);
        (DecoderState { layers }, scores)
    }

    /// Biaffine label scores for the split `(i, k, j)`, one per label.
    pub fn label_logits(
        &self,
        g: &mut Graph<'_, T>,
        enc: &Encoded,
        i: usize,
        k: usize,
        j: usize,
    ) -> Result<Var, ModelError> {
        if !(i < k && k < j) || j > enc.size {
            return Err(ModelError::SpanOutOfRange { i, j, size: enc.size });
        }
        let slope = self.slope();
        let hi = g.row(enc.boundaries, i);
        let hk = g.row(enc.boundaries, k);
        let hj = g.row(enc.boundaries, j);
        let left = g.concat_cols(&[hi, hk]);
        let right = g.concat_cols(&[hk, hj]);
        let (wl, bl) = (g.param(self.layout.mlp_l.w), g.param(self.layout.mlp_l.b));
        let (wr, br) = (g.param(self.layout.mlp_r.w), g.param(self.layout.mlp_r.b));
        let pl = g.affine(left, wl, Some(bl));
        let hl = g.leaky_relu(pl, slope);
        let pr = g.affine(right, wr, Some(br));
        let hr = g.leaky_relu(pr, slope);

        let nl = self.labels.len();
        let d = self.config.mlp_dim;
        let w_lr = g.param(self.layout.w_lr);
        let t = g.affine(hr, w_lr, None);
        let t = g.reshape(t, nl, d);
        let bilinear = g.affine(hl, t, None);
        let w_l = g.param(self.layout.w_l);
        let w_r = g.param(self.layout.w_r);
        let b = g.param(self.layout.b_l);
        let lin_l = g.affine(hl, w_l, None);
        let lin_r = g.affine(hr, w_r, Some(b));
        let s = g.add(bilinear, lin_l);
        Ok(g.add(s, lin_r))
    }

    /// Gold decoder steps in pointing-row coordinates. End to end, width-1
    /// spans are skipped since the decoder never visits them.
    pub fn gold_steps(&self, doc: &Document, mode: ParseMode) -> Result<Vec<Step>, ModelError> {
        let tree = doc.gold_discourse_tree().ok_or_else(|| ModelError::MissingTree(doc.id.clone()))??;
        match mode {
            ParseMode::EndToEnd => Ok(tree_to_splits_e2e(&tree)
                .iter()
                .filter(|d| d.span.width() > 1)
                .map(|d| Step { i: d.span.start, j: d.span.end, k: d.split, label: d.label })
                .collect()),
            ParseMode::GoldEdu => {
                let edus = doc.edu_boundaries.as_ref().ok_or_else(|| ModelError::MissingEdus(doc.id.clone()))?;
                let idx = |b: usize| -> Result<usize, ModelError> {
                    if b == 0 {
                        return Ok(0);
                    }
                    edus.binary_search(&b).map(|p| p + 1).map_err(|_| ModelError::NotEduBoundary(b))
                };
                tree_to_splits_edu(&tree)
                    .iter()
                    .map(|d| Ok(Step { i: idx(d.span.start)?, j: idx(d.span.end)?, k: idx(d.split)?, label: d.label }))
                    .collect()
            }
        }
    }

    /// Teacher-forced split and label losses over `steps`.
    pub fn loss_vars(&self, g: &mut Graph<'_, T>, enc: &Encoded, steps: &[Step]) -> Result<LossVars, ModelError> {
        let mut state = self.init_decoder(g, enc);
        let mut split_terms = Vec::with_capacity(steps.len());
        let mut label_terms = Vec::new();
        for s in steps {
            let x = self.span_rep(g, enc, s.i, s.j)?;
            let (next, scores) = self.decoder_step(g, enc, &state, x);
            state = next;
            split_terms.push(g.nll(scores, s.k));
            if s.k < s.j {
                if let Some(label) = s.label {
                    let target = self.labels.index_of(label).ok_or(ModelError::UnknownLabel(label))?;
                    let logits = self.label_logits(g, enc, s.i, s.k, s.j)?;
                    label_terms.push(g.nll(logits, target));
                }
            }
        }
        let split = g.sum(&split_terms);
        let label = g.sum(&label_terms);
        let total = g.sum(&[split, label]);
        Ok(LossVars { split, label, total })
    }

    /// `L = L_s + L_l` for one document and the gradient of `L` for every
    /// parameter. Returns `(L_s, L_l, gradients)`.
    pub fn total_loss(
        &self,
        doc: &Document,
        mode: ParseMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, T, Gradients<T>), ModelError> {
        let steps = self.gold_steps(doc, mode)?;
        let mut g = self.graph();
        let enc = self.encode_with(&mut g, doc, mode, rng)?;
        let loss = self.loss_vars(&mut g, &enc, &steps)?;
        let mut grads = Gradients::zeros_like(&self.params);
        g.backward(loss.total, &mut grads);
        Ok((g.scalar(loss.split), g.scalar(loss.label), grads))
    }

    /// Loss value only, without the backward pass.
    pub fn loss_value(&self, doc: &Document, mode: ParseMode) -> Result<(T, T), ModelError> {
        let steps = self.gold_steps(doc, mode)?;
        let mut g = self.graph();
        let enc = self.encode(&mut g, doc, mode)?;
        let loss = self.loss_vars(&mut g, &enc, &steps)?;
        Ok((g.scalar(loss.split), g.scalar(loss.label)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{Nuclearity, Relation};
    use crate::synth::generate_synthetic_corpus;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            use_chars: false,
            char_dim: 3,
            char_hidden: 2,
            hidden: 3,
            enc_layers: 1,
            dec_layers: 1,
            mlp_dim: 3,
            boundary_lstm: true,
            decoder_init: DecoderInit::Learned,
            leaky_slope: 0.01,
            dropout: 0.0,
        }
    }

    fn labels2() -> LabelSet {
        LabelSet::new(vec![
            RelationLabel::new(Relation::Elaboration, Nuclearity::NS),
            RelationLabel::new(Relation::Joint, Nuclearity::NN),
        ])
    }

    fn tiny_model(cfg: ModelConfig, docs: &[Document]) -> Model<f64> {
        let chars = cfg.use_chars.then(|| Vocab::chars_of(docs));
        Model::new(cfg, Vocab::from_documents(docs), chars, labels2(), 3).unwrap()
    }

    fn set(model: &mut Model<f64>, name: &str, f: impl Fn(usize, usize) -> f64) {
        let id = model.param(name).unwrap();
        let t = model.params.get_mut(id);
        for r in 0..t.rows {
            for c in 0..t.cols {
                t.data[r * t.cols + c] = f(r, c);
            }
        }
    }

    fn doc44() -> Document {
        Document {
            id: "sample".into(),
            tokens: (0..44).map(|i| format!("t{i}")).collect(),
            sentence_boundaries: vec![25, 44],
            edu_boundaries: Some(vec![4, 17, 25, 33, 37, 44]),
            gold_tree: None,
        }
    }

    #[test]
    fn boundary_counts() {
        let doc = doc44();
        let model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        assert_eq!(g.shape(enc.boundaries), (45, 6));
        let enc = model.encode(&mut g, &doc, ParseMode::GoldEdu).unwrap();
        assert_eq!(enc.positions.as_deref(), Some(&[0, 4, 17, 25, 33, 37, 44][..]));
        assert_eq!(g.shape(enc.boundaries), (7, 6));
        assert_eq!(enc.size, 6);
    }

    #[test]
    fn zero_network_gives_equal_boundaries() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        for id in model.params.ids().collect::<Vec<_>>() {
            model.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let v = g.value(enc.token_boundaries);
        let first = &v[0..6];
        assert!(v.chunks(6).all(|row| row == first));
    }

    #[test]
    fn span_rep_projection_and_symmetry() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        set(&mut model, "span.w1", |r, c| (r == c) as u8 as f64);
        set(&mut model, "span.w2", |_, _| 0.0);
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let s = model.span_rep(&mut g, &enc, 3, 10).unwrap();
        assert_eq!(g.value(s), &g.value(enc.boundaries)[18..24]);
        assert!(model.span_rep(&mut g, &enc, 3, 45).is_err());
        assert!(model.span_rep(&mut g, &enc, 5, 5).is_err());
    }

    #[test]
    fn span_rep_matches_hand_multiply() {
        let doc = doc44();
        let model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let s = model.span_rep(&mut g, &enc, 2, 9).unwrap();
        let h = g.value(enc.boundaries);
        let w1 = model.params.get(model.param("span.w1").unwrap());
        let w2 = model.params.get(model.param("span.w2").unwrap());
        for r in 0..6 {
            let mut want = 0.0;
            for c in 0..6 {
                want += w1.data[r * 6 + c] * h[2 * 6 + c] + w2.data[r * 6 + c] * h[9 * 6 + c];
            }
            assert!((g.value(s)[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pointing_weights_give_zero_scores() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        set(&mut model, "point.w_dh", |_, _| 0.0);
        set(&mut model, "point.w_h", |_, _| 0.0);
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let st = model.init_decoder(&mut g, &enc);
        let x = model.span_rep(&mut g, &enc, 0, 44).unwrap();
        let (_, scores) = model.decoder_step(&mut g, &enc, &st, x);
        assert_eq!(g.value(scores).len(), 45);
        assert!(g.value(scores).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scores_match_scalar_recomputation() {
        let doc = doc44();
        let mut cfg = tiny_config();
        cfg.mlp_dim = 2;
        let model = tiny_model(cfg, std::slice::from_ref(&doc));
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let st = model.init_decoder(&mut g, &enc);
        let x = model.span_rep(&mut g, &enc, 4, 25).unwrap();
        let (next, scores) = model.decoder_step(&mut g, &enc, &st, x);
        let d = g.value(next.layers[0].0).to_vec();
        let p = |name: &str| model.params.get(model.param(name).unwrap()).data.clone();
        let leaky = |v: f64| if v > 0.0 { v } else { 0.01 * v };
        let (wd, bd, wh, bh, wdh, w_h) =
            (p("mlp_d.w"), p("mlp_d.b"), p("mlp_h.w"), p("mlp_h.b"), p("point.w_dh"), p("point.w_h"));
        let dp: Vec<f64> = (0..2).map(|a| leaky(bd[a] + (0..3).map(|c| wd[a * 3 + c] * d[c]).sum::<f64>())).collect();
        let h = g.value(enc.boundaries).to_vec();
        for i in 0..45 {
            let hp: Vec<f64> =
                (0..2).map(|a| leaky(bh[a] + (0..6).map(|c| wh[a * 6 + c] * h[i * 6 + c]).sum::<f64>())).collect();
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    s += dp[a] * wdh[a * 2 + b] * hp[b];
                }
                s += hp[a] * w_h[a];
            }
            assert!((g.value(scores)[i] - s).abs() < 1e-12, "boundary {i}");
        }
    }

    #[test]
    fn scores_of_a_boundary_ignore_span_length() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        set(&mut model, "span.w1", |_, _| 0.0);
        set(&mut model, "span.w2", |_, _| 0.0);
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let st = model.init_decoder(&mut g, &enc);
        let a = model.span_rep(&mut g, &enc, 0, 44).unwrap();
        let b = model.span_rep(&mut g, &enc, 30, 31).unwrap();
        let (_, sa) = model.decoder_step(&mut g, &enc, &st, a);
        let (_, sb) = model.decoder_step(&mut g, &enc, &st, b);
        assert_eq!(g.value(sa), g.value(sb));
    }

    #[test]
    fn decoder_init_zero_and_deterministic() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let a = model.init_decoder(&mut g, &enc);
        let b = model.init_decoder(&mut g, &enc);
        assert_eq!(g.value(a.layers[0].0), g.value(b.layers[0].0));
        let p = |m: &Model<f64>, n: &str| m.params.get(m.param(n).unwrap()).data.clone();
        let (w, bias) = (p(&model, "dec_init.w"), p(&model, "dec_init.b"));
        let s = g.value(enc.summary).to_vec();
        for u in 0..3 {
            let want: f64 = bias[u] + (0..6).map(|c| w[u * 6 + c] * s[c]).sum::<f64>();
            assert!((g.value(a.layers[0].0)[u] - want).abs() < 1e-12);
        }
        drop(g);
        set(&mut model, "dec_init.w", |_, _| 0.0);
        set(&mut model, "dec_init.b", |_, _| 0.0);
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let z = model.init_decoder(&mut g, &enc);
        assert!(g.value(z.layers[0].0).iter().chain(g.value(z.layers[0].1)).all(|&v| v == 0.0));
    }

    #[test]
    fn label_bias_only() {
        let doc = doc44();
        let mut model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        for name in ["label.w_lr", "label.w_l", "label.w_r"] {
            set(&mut model, name, |_, _| 0.0);
        }
        set(&mut model, "label.b", |_, c| if c == 0 { 1.0 } else { 0.0 });
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        for (i, k, j) in [(0, 4, 44), (4, 17, 25), (30, 31, 32)] {
            let l = model.label_logits(&mut g, &enc, i, k, j).unwrap();
            assert_eq!(g.value(l), &[1.0, 0.0]);
        }
        assert!(model.label_logits(&mut g, &enc, 3, 3, 9).is_err());
    }

    #[test]
    fn label_logits_match_scalar_recomputation() {
        let doc = doc44();
        let mut cfg = tiny_config();
        cfg.mlp_dim = 2;
        let model = tiny_model(cfg, std::slice::from_ref(&doc));
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let (i, k, j) = (4, 17, 25);
        let logits = model.label_logits(&mut g, &enc, i, k, j).unwrap();
        let h = g.value(enc.boundaries).to_vec();
        let p = |name: &str| model.params.get(model.param(name).unwrap()).data.clone();
        let leaky = |v: f64| if v > 0.0 { v } else { 0.01 * v };
        let mlp = |w: &[f64], b: &[f64], a: usize, c: usize| -> Vec<f64> {
            let x: Vec<f64> = h[a * 6..a * 6 + 6].iter().chain(&h[c * 6..c * 6 + 6]).copied().collect();
            (0..2).map(|o| leaky(b[o] + (0..12).map(|q| w[o * 12 + q] * x[q]).sum::<f64>())).collect()
        };
        let hl = mlp(&p("mlp_l.w"), &p("mlp_l.b"), i, k);
        let hr = mlp(&p("mlp_r.w"), &p("mlp_r.b"), k, j);
        let (wlr, wl, wr, b) = (p("label.w_lr"), p("label.w_l"), p("label.w_r"), p("label.b"));
        for l in 0..2 {
            let mut s = b[l];
            for a in 0..2 {
                for c in 0..2 {
                    s += hl[a] * wlr[(l * 2 + a) * 2 + c] * hr[c];
                }
                s += hl[a] * wl[l * 2 + a] + hr[a] * wr[l * 2 + a];
            }
            assert!((g.value(logits)[l] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn label_axis_permutation_is_equivariant() {
        let doc = doc44();
        let model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        let mut swapped = model.clone();
        let d = 3;
        for name in ["label.w_lr", "label.w_l", "label.w_r", "label.b"] {
            let id = model.param(name).unwrap();
            let src = model.params.get(id).clone();
            let dst = swapped.params.get_mut(id);
            let block = src.data.len() / 2;
            dst.data[..block].copy_from_slice(&src.data[block..]);
            dst.data[block..].copy_from_slice(&src.data[..block]);
            let _ = d;
        }
        let mut g = model.graph();
        let enc = model.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        let a = model.label_logits(&mut g, &enc, 0, 4, 44).unwrap();
        let a = g.value(a).to_vec();
        let mut g2 = swapped.graph();
        let enc2 = swapped.encode(&mut g2, &doc, ParseMode::EndToEnd).unwrap();
        let b = swapped.label_logits(&mut g2, &enc2, 0, 4, 44).unwrap();
        assert!((a[0] - g2.value(b)[1]).abs() < 1e-12 && (a[1] - g2.value(b)[0]).abs() < 1e-12);
    }

    #[test]
    fn pointing_distribution_cases() {
        let p = pointing_distribution(&[0.0f64; 5], 0, 4, PointingMode::Training).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let p =
            pointing_distribution(&[0.0, 0.0, 10.0, 0.0, 0.0f64], 0, 4, PointingMode::Inference(ParseMode::EndToEnd))
                .unwrap();
        let arg = (0..5).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
        assert_eq!(arg, 2);
        assert_eq!(p[0], 0.0);
        assert!(matches!(
            pointing_distribution(&[0.0f64; 5], 2, 3, PointingMode::Inference(ParseMode::GoldEdu)),
            Err(ModelError::EmptyRange { i: 2, j: 3 })
        ));
    }

    #[test]
    fn uniform_pointing_loss_is_ln5() {
        let docs = generate_synthetic_corpus(1, 10, 4, 0).unwrap();
        let mut doc = docs[0].clone();
        doc.tokens.truncate(4);
        doc.sentence_boundaries = vec![4];
        doc.edu_boundaries = Some(vec![2, 4]);
        let lab = RelationLabel::new(Relation::Joint, Nuclearity::NN);
        doc.gold_tree =
            Some(crate::tree::SplitSequence::new(vec![crate::tree::SplitDecision::new(0, 4, 2, Some(lab))]));
        let mut model = tiny_model(tiny_config(), &[doc.clone()]);
        set(&mut model, "point.w_dh", |_, _| 0.0);
        set(&mut model, "point.w_h", |_, _| 0.0);
        // e2e: (0,4)->2 then (0,2)->2 and (2,4)->4, three uniform steps
        let (ls, _) = model.loss_value(&doc, ParseMode::EndToEnd).unwrap();
        assert!((ls - 3.0 * 5f64.ln()).abs() < 1e-12);
        // gold-edu: one step over 3 EDU-level boundaries
        let (ls, _) = model.loss_value(&doc, ParseMode::GoldEdu).unwrap();
        assert!((ls - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_tree_and_edus() {
        let doc = doc44();
        let model = tiny_model(tiny_config(), std::slice::from_ref(&doc));
        assert!(matches!(model.gold_steps(&doc, ParseMode::EndToEnd), Err(ModelError::MissingTree(_))));
        let mut d = doc.clone();
        d.edu_boundaries = None;
        let mut g = model.graph();
        assert!(matches!(model.encode(&mut g, &d, ParseMode::GoldEdu), Err(ModelError::MissingEdus(_))));
    }

    #[test]
    fn chars_extend_word_only_model() {
        let doc = doc44();
        let mut cfg = tiny_config();
        cfg.use_chars = true;
        let m = tiny_model(cfg, std::slice::from_ref(&doc));
        let mut g = m.graph();
        let enc = m.encode(&mut g, &doc, ParseMode::EndToEnd).unwrap();
        assert_eq!(g.shape(enc.boundaries), (45, 6));
        let w = m.params.get(m.param("enc0.fwd.w_ih").unwrap());
        assert_eq!(w.cols, 4 + 4);
    }
}
