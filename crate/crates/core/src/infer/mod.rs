//! Tree decoding: greedy top-down parsing with sentence guidance, beam
//! search over gold EDUs, an exhaustive oracle and label assignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::Document;
use crate::metrics::{
    corpus_parseval, corpus_rst_parseval, segmentation_counts, Counts, EvalReport, MetricError, SegmentationReport,
};
use crate::nn::{log_softmax, DecoderState, Encoded, Graph, Model, ModelError, ParseMode, Real};
use crate::tree::{DiscourseTree, TreeError};

mod beam;
mod oracle;

pub use beam::{beam_parse_e2e, beam_parse_gold_edu, BeamItem};
pub use oracle::{exhaustive_oracle, score_sequence, OracleResult, E2E_ORACLE_LIMIT, EDU_ORACLE_LIMIT};

pub const DEFAULT_BEAM: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decoded tree is invalid: {0}")]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("document `{0}` has no EDU boundaries (required in gold-edu mode)")]
    MissingEdus(String),
    #[error("document `{0}` has no gold tree")]
    MissingGold(String),
    #[error("instance too large for exhaustive search: {size} {unit} (limit {limit})")]
    TooLarge { size: usize, unit: &'static str, limit: usize },
    #[error("beam width must be at least 1")]
    ZeroBeam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub mode: ParseMode,
    /// Beam width for gold-EDU decoding; 1 means greedy.
    pub beam: usize,
    pub sentence_guidance: bool,
    /// Use beam search in end-to-end mode as well.
    pub e2e_beam: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { mode: ParseMode::EndToEnd, beam: DEFAULT_BEAM, sentence_guidance: true, e2e_beam: false }
    }
}

/// A decoded document.
#[derive(Clone, Debug, PartialEq)]
pub struct Parse {
    /// Labeled tree over token boundaries.
    pub tree: DiscourseTree,
    pub edus: Vec<usize>,
    /// Sum of log pointing probabilities of the decoded decisions.
    pub log_prob: f64,
    /// Number of decoder steps taken.
    pub steps: usize,
}

/// Candidate split points of `(i, j)` in pointing-row coordinates. End to
/// end with guidance, sentence boundaries strictly inside the span take
/// precedence.
pub(crate) fn candidates(i: usize, j: usize, mode: ParseMode, sentences: Option<&[usize]>) -> Vec<usize> {
    match mode {
        ParseMode::GoldEdu => (i + 1..j).collect(),
        ParseMode::EndToEnd => {
            if let Some(s) = sentences {
                let inside: Vec<usize> = s.iter().copied().filter(|&b| i < b && b < j).collect();
                if !inside.is_empty() {
                    return inside;
                }
            }
            (i + 1..=j).collect()
        }
    }
}

/// Index of the highest value among `cands`; ties go to the first.
pub(crate) fn argmax_over<T: PartialOrd + Copy>(values: &[T], cands: &[usize]) -> usize {
    let mut best = cands[0];
    for &k in &cands[1..] {
        if values[k] > values[best] {
            best = k;
        }
    }
    best
}

/// The `b` best candidates by value, ties to the smaller index.
pub(crate) fn top_b(values: &[f64], cands: &[usize], b: usize) -> Vec<usize> {
    let mut c = cands.to_vec();
    c.sort_by(|&x, &y| values[y].total_cmp(&values[x]).then(x.cmp(&y)));
    c.truncate(b);
    c
}

/// Split point for span `(i, j)`: the best-scoring sentence boundary
/// strictly inside the span if there is one, otherwise the best `k` with
/// `i < k <= j`. Ties go to the smallest `k`.
pub fn apply_sentence_guidance<T: PartialOrd + Copy>(
    scores: &[T],
    i: usize,
    j: usize,
    sentence_boundaries: &[usize],
) -> usize {
    let cands = candidates(i, j, ParseMode::EndToEnd, Some(sentence_boundaries));
    argmax_over(scores, &cands)
}

/// One decoder step on span `(i, j)`; returns the new state and the
/// log pointing probabilities over all boundaries.
pub(crate) fn step<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    enc: &Encoded,
    state: &DecoderState,
    i: usize,
    j: usize,
) -> Result<(DecoderState, Vec<f64>), ModelError> {
    let x = model.span_rep(g, enc, i, j)?;
    let (next, scores) = model.decoder_step(g, enc, state, x);
    let lp = log_softmax(g.value(scores)).into_iter().map(|v| v.to_f64().unwrap()).collect();
    Ok((next, lp))
}

/// Children of `(i, j)` split at `k` that still need a decision, in push
/// order (right first).
pub(crate) fn children(i: usize, k: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let right = (k < j && j - k > 1).then_some((k, j));
    let left = (k < j && k - i > 1).then_some((i, k));
    right.into_iter().chain(left)
}

struct Greedy {
    triples: Vec<(usize, usize, usize)>,
    log_prob: f64,
    steps: usize,
}

fn greedy<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    enc: &Encoded,
    sentences: Option<&[usize]>,
) -> Result<Greedy, ModelError> {
    let mut out = Greedy { triples: Vec::new(), log_prob: 0.0, steps: 0 };
    if enc.size < 2 {
        return Ok(out);
    }
    let mut state = model.init_decoder(g, enc);
    let mut stack = vec![(0, enc.size)];
    while let Some((i, j)) = stack.pop() {
        let (next, lp) = step(model, g, enc, &state, i, j)?;
        state = next;
        let k = argmax_over(&lp, &candidates(i, j, enc.mode, sentences));
        out.log_prob += lp[k];
        out.steps += 1;
        if k < j {
            out.triples.push((i, k, j));
            stack.extend(children(i, k, j));
        }
    }
    Ok(out)
}

/// Builds the token-level tree from pointing-row triples.
pub(crate) fn tree_from_triples(enc: &Encoded, triples: &[(usize, usize, usize)]) -> Result<DiscourseTree, TreeError> {
    let tree = DiscourseTree::from_triples(enc.size, triples, None)?;
    Ok(match &enc.positions {
        Some(p) => tree.remap(p),
        None => tree,
    })
}

fn finish<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    enc: &Encoded,
    triples: &[(usize, usize, usize)],
    log_prob: f64,
    steps: usize,
) -> Result<Parse, InferError> {
    let tree = tree_from_triples(enc, triples)?;
    let tree = assign_labels(model, g, enc, &tree)?;
    let edus = tree.edu_boundaries();
    Ok(Parse { tree, edus, log_prob, steps })
}

/// Greedy end-to-end parse (stack-based, depth first). With guidance,
/// every sentence becomes a subtree and no EDU crosses a sentence.
pub fn greedy_parse_e2e<T: Real>(
    model: &Model<T>,
    doc: &Document,
    sentence_guidance: bool,
) -> Result<Parse, InferError> {
    let mut g = model.graph();
    let enc = model.encode(&mut g, doc, ParseMode::EndToEnd)?;
    let sentences = sentence_guidance.then_some(doc.sentence_boundaries.as_slice());
    let r = greedy(model, &mut g, &enc, sentences)?;
    finish(model, &mut g, &enc, &r.triples, r.log_prob, r.steps)
}

/// Greedy parse over the gold EDUs.
pub fn greedy_parse_gold_edu<T: Real>(model: &Model<T>, doc: &Document) -> Result<Parse, InferError> {
    if doc.edu_boundaries.is_none() {
        return Err(InferError::MissingEdus(doc.id.clone()));
    }
    let mut g = model.graph();
    let enc = model.encode(&mut g, doc, ParseMode::GoldEdu)?;
    let r = greedy(model, &mut g, &enc, None)?;
    finish(model, &mut g, &enc, &r.triples, r.log_prob, r.steps)
}

/// Labels every internal node of `tree` (token coordinates) with the
/// argmax of its label scores; structure is unchanged.
pub fn assign_labels<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    enc: &Encoded,
    tree: &DiscourseTree,
) -> Result<DiscourseTree, ModelError> {
    let mut labels = Vec::new();
    for (i, k, j) in tree.triples() {
        let (a, b, c) = (enc.index_of(i)?, enc.index_of(k)?, enc.index_of(j)?);
        let logits = model.label_logits(g, enc, a, b, c)?;
        let v = g.value(logits);
        let all: Vec<usize> = (0..v.len()).collect();
        labels.push(model.labels.get(argmax_over(v, &all)));
    }
    let mut it = labels.into_iter();
    Ok(tree.relabel(|_, _, _| it.next().flatten()))
}

/// Decodes one document according to `opts`.
pub fn parse_document<T: Real>(model: &Model<T>, doc: &Document, opts: &DecodeOptions) -> Result<Parse, InferError> {
    if opts.beam == 0 {
        return Err(InferError::ZeroBeam);
    }
    match opts.mode {
        ParseMode::GoldEdu if opts.beam > 1 => beam_parse_gold_edu(model, doc, opts.beam),
        ParseMode::GoldEdu => greedy_parse_gold_edu(model, doc),
        ParseMode::EndToEnd if opts.e2e_beam && opts.beam > 1 => {
            beam_parse_e2e(model, doc, opts.beam, opts.sentence_guidance)
        }
        ParseMode::EndToEnd => greedy_parse_e2e(model, doc, opts.sentence_guidance),
    }
}

/// Decodes every document in parallel, preserving order.
pub fn parse_corpus<T: Real>(
    model: &Model<T>,
    docs: &[Document],
    opts: &DecodeOptions,
) -> Result<Vec<Parse>, InferError> {
    docs.par_iter().map(|d| parse_document(model, d, opts)).collect()
}

/// Scores predicted parses against the gold trees of `docs`.
pub fn score_parses(docs: &[Document], parses: &[Parse], mode: ParseMode) -> Result<EvalReport, InferError> {
    let mut pairs = Vec::with_capacity(docs.len());
    let mut seg = Counts::default();
    for (doc, p) in docs.iter().zip(parses) {
        let gold = doc.gold_discourse_tree().ok_or_else(|| InferError::MissingGold(doc.id.clone()))??;
        if mode == ParseMode::EndToEnd {
            seg += segmentation_counts(&p.edus, &gold.edu_boundaries(), &doc.sentence_boundaries, doc.len())?;
        }
        pairs.push((p.tree.clone(), gold));
    }
    Ok(EvalReport {
        parseval: corpus_parseval(&pairs)?,
        rst_parseval: corpus_rst_parseval(&pairs)?,
        segmentation: (mode == ParseMode::EndToEnd).then(|| SegmentationReport::from_counts(seg)),
    })
}

pub fn evaluate<T: Real>(model: &Model<T>, docs: &[Document], opts: &DecodeOptions) -> Result<EvalReport, InferError> {
    let parses = parse_corpus(model, docs, opts)?;
    score_parses(docs, &parses, opts.mode)
}

/// Teacher-forced split accuracy: the fraction of gold decoder steps whose
/// inference-time choice (with guidance in end-to-end mode) equals the gold
/// split. Returns `(correct, total)`.
pub fn split_accuracy<T: Real>(
    model: &Model<T>,
    docs: &[Document],
    mode: ParseMode,
    sentence_guidance: bool,
) -> Result<(usize, usize), InferError> {
    let per_doc: Vec<(usize, usize)> = docs
        .par_iter()
        .map(|doc| -> Result<(usize, usize), InferError> {
            let steps = model.gold_steps(doc, mode)?;
            let mut g = model.graph();
            let enc = model.encode(&mut g, doc, mode)?;
            let sentences =
                (mode == ParseMode::EndToEnd && sentence_guidance).then_some(doc.sentence_boundaries.as_slice());
            let mut state = model.init_decoder(&mut g, &enc);
            let mut correct = 0;
            for s in &steps {
                let (next, lp) = step(model, &mut g, &enc, &state, s.i, s.j)?;
                state = next;
                if argmax_over(&lp, &candidates(s.i, s.j, mode, sentences)) == s.k {
                    correct += 1;
                }
            }
            Ok((correct, steps.len()))
        })
        .collect::<Result<_, _>>()?;
    Ok(per_doc.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1)))
}
