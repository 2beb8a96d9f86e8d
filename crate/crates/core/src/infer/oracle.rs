use super::{assign_labels, candidates, children, step, tree_from_triples, InferError};
use crate::doc::Document;
use crate::nn::{DecoderState, Encoded, Graph, Model, ModelError, ParseMode, Real};
use crate::tree::DiscourseTree;

/// Largest EDU count accepted by the gold-EDU oracle.
pub const EDU_ORACLE_LIMIT: usize = 12;
/// Largest token count accepted by the end-to-end oracle.
pub const E2E_ORACLE_LIMIT: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Best tree over token boundaries, labeled by the relation classifier.
    pub tree: DiscourseTree,
    pub log_prob: f64,
    /// Decoder steps `(i, j, k)` of the best tree, in pointing-row
    /// coordinates.
    pub decisions: Vec<(usize, usize, usize)>,
    /// Number of complete trees scored.
    pub candidates: usize,
}

/// Sum of log pointing probabilities of the decisions `(i, j, k)` when the
/// decoder is fed exactly these spans.
pub fn score_sequence<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    enc: &Encoded,
    decisions: &[(usize, usize, usize)],
) -> Result<f64, ModelError> {
    let mut state = model.init_decoder(g, enc);
    let mut total = 0.0;
    for &(i, j, k) in decisions {
        let (next, lp) = step(model, g, enc, &state, i, j)?;
        if k <= i || k > j {
            return Err(ModelError::SpanOutOfRange { i, j: k, size: j });
        }
        total += lp[k];
        state = next;
    }
    Ok(total)
}

struct Search<'m, 'g, T: Real> {
    model: &'m Model<T>,
    g: Graph<'g, T>,
    enc: Encoded,
    sentences: Option<Vec<usize>>,
    prefix: Vec<(usize, usize, usize)>,
    best: Option<(f64, Vec<(usize, usize, usize)>)>,
    count: usize,
}

impl<T: Real> Search<'_, '_, T> {
    /// Depth-first enumeration of every decision sequence. Sequences are
    /// visited in lexicographic order and the graph is truncated after each
    /// branch, so every sequence is scored by exactly the decoder steps it
    /// would take.
    fn run(&mut self, stack: Vec<(usize, usize)>, state: &DecoderState, log_prob: f64) -> Result<(), ModelError> {
        let mut stack = stack;
        let Some((i, j)) = stack.pop() else {
            self.count += 1;
            if self.best.as_ref().is_none_or(|(b, _)| log_prob > *b) {
                self.best = Some((log_prob, self.prefix.clone()));
            }
            return Ok(());
        };
        let mark = self.g.len();
        let (next, lp) = step(self.model, &mut self.g, &self.enc, state, i, j)?;
        let after = self.g.len();
        for k in candidates(i, j, self.enc.mode, self.sentences.as_deref()) {
            let mut s = stack.clone();
            s.extend(children(i, k, j));
            self.prefix.push((i, j, k));
            self.run(s, &next, log_prob + lp[k])?;
            self.prefix.pop();
            self.g.truncate(after);
        }
        self.g.truncate(mark);
        Ok(())
    }
}

/// Enumerates every tree (in end-to-end mode, every segmentation as well,
/// restricted to sentence-respecting trees when `sentence_guidance` is on),
/// scores each by teacher forcing and returns the best. Ties go to the
/// lexicographically smallest decision sequence.
pub fn exhaustive_oracle<T: Real>(
    model: &Model<T>,
    doc: &Document,
    mode: ParseMode,
    sentence_guidance: bool,
) -> Result<OracleResult, InferError> {
    match mode {
        ParseMode::GoldEdu => {
            let m = doc.edu_boundaries.as_ref().ok_or_else(|| InferError::MissingEdus(doc.id.clone()))?.len();
            if m > EDU_ORACLE_LIMIT {
                return Err(InferError::TooLarge { size: m, unit: "EDUs", limit: EDU_ORACLE_LIMIT });
            }
        }
        ParseMode::EndToEnd => {
            if doc.len() > E2E_ORACLE_LIMIT {
                return Err(InferError::TooLarge { size: doc.len(), unit: "tokens", limit: E2E_ORACLE_LIMIT });
            }
        }
    }
    let mut g = model.graph();
    let enc = model.encode(&mut g, doc, mode)?;
    let state = model.init_decoder(&mut g, &enc);
    let stack = if enc.size > 1 { vec![(0, enc.size)] } else { Vec::new() };
    let sentences = (mode == ParseMode::EndToEnd && sentence_guidance).then(|| doc.sentence_boundaries.clone());
    let mut search = Search { model, g, enc, sentences, prefix: Vec::new(), best: None, count: 0 };
    search.run(stack, &state, 0.0)?;
    let (log_prob, decisions) = search.best.expect("at least one tree");
    let triples: Vec<(usize, usize, usize)> =
        decisions.iter().filter(|&&(_, j, k)| k < j).map(|&(i, j, k)| (i, k, j)).collect();
    let tree = tree_from_triples(&search.enc, &triples)?;
    let tree = assign_labels(model, &mut search.g, &search.enc, &tree)?;
    Ok(OracleResult { tree, log_prob, decisions, candidates: search.count })
}
