use std::cmp::Ordering;

use super::{candidates, children, finish, step, top_b, InferError, Parse};
use crate::doc::Document;
use crate::nn::{DecoderState, Model, ParseMode, Real};

/// A partial hypothesis of the gold-EDU beam search.
#[derive(Clone, Debug)]
pub struct BeamItem {
    pub log_prob: f64,
    pub state: DecoderState,
    /// Span consumed at each decoding step; filled in as splits are made.
    pub schedule: Vec<Option<(usize, usize)>>,
    /// `(i, k, j)` splits in decoding order.
    pub triples: Vec<(usize, usize, usize)>,
}

fn by_score(a: &BeamItem, b: &BeamItem) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.triples.cmp(&b.triples))
}

/// Beam search over the gold EDUs with a fixed span schedule. After
/// splitting the span of step `t` at `k`, its left child is decoded at step
/// `t + 1` and its right child at step `t + (k - i)`, which reproduces the
/// depth-first pre-order.
pub fn beam_parse_gold_edu<T: Real>(model: &Model<T>, doc: &Document, beam: usize) -> Result<Parse, InferError> {
    if beam == 0 {
        return Err(InferError::ZeroBeam);
    }
    let m = doc.edu_boundaries.as_ref().ok_or_else(|| InferError::MissingEdus(doc.id.clone()))?.len();
    let mut g = model.graph();
    let enc = model.encode(&mut g, doc, ParseMode::GoldEdu)?;
    if m < 2 {
        return finish(model, &mut g, &enc, &[], 0.0, 0);
    }
    let mut schedule = vec![None; m - 1];
    schedule[0] = Some((0, m));
    let mut items =
        vec![BeamItem { log_prob: 0.0, state: model.init_decoder(&mut g, &enc), schedule, triples: Vec::new() }];
    for t in 0..m - 1 {
        let mut next = Vec::new();
        for item in &items {
            let (i, j) = item.schedule[t].expect("schedule slot filled by an earlier split");
            let (state, lp) = step(model, &mut g, &enc, &item.state, i, j)?;
            for k in top_b(&lp, &candidates(i, j, ParseMode::GoldEdu, None), beam) {
                let mut child = BeamItem {
                    log_prob: item.log_prob + lp[k],
                    state: state.clone(),
                    schedule: item.schedule.clone(),
                    triples: item.triples.clone(),
                };
                child.triples.push((i, k, j));
                if k - i > 1 {
                    child.schedule[t + 1] = Some((i, k));
                }
                if j - k > 1 {
                    child.schedule[t + (k - i)] = Some((k, j));
                }
                next.push(child);
            }
        }
        next.sort_by(by_score);
        next.truncate(beam);
        items = next;
    }
    let best = &items[0];
    finish(model, &mut g, &enc, &best.triples, best.log_prob, m - 1)
}

struct StackItem {
    log_prob: f64,
    state: Option<DecoderState>,
    stack: Vec<(usize, usize)>,
    triples: Vec<(usize, usize, usize)>,
    steps: usize,
}

/// End-to-end beam search; each hypothesis keeps its own span stack.
/// Finished hypotheses stay in the beam until every hypothesis is done.
pub fn beam_parse_e2e<T: Real>(
    model: &Model<T>,
    doc: &Document,
    beam: usize,
    sentence_guidance: bool,
) -> Result<Parse, InferError> {
    if beam == 0 {
        return Err(InferError::ZeroBeam);
    }
    let mut g = model.graph();
    let enc = model.encode(&mut g, doc, ParseMode::EndToEnd)?;
    let sentences = sentence_guidance.then_some(doc.sentence_boundaries.as_slice());
    let stack = if enc.size > 1 { vec![(0, enc.size)] } else { Vec::new() };
    let mut items = vec![StackItem {
        log_prob: 0.0,
        state: Some(model.init_decoder(&mut g, &enc)),
        stack,
        triples: Vec::new(),
        steps: 0,
    }];
    while items.iter().any(|it| !it.stack.is_empty()) {
        let mut next = Vec::new();
        for mut item in items {
            let Some((i, j)) = item.stack.pop() else {
                next.push(item);
                continue;
            };
            let (state, lp) = step(model, &mut g, &enc, item.state.as_ref().unwrap(), i, j)?;
            for k in top_b(&lp, &candidates(i, j, ParseMode::EndToEnd, sentences), beam) {
                let mut child = StackItem {
                    log_prob: item.log_prob + lp[k],
                    state: Some(state.clone()),
                    stack: item.stack.clone(),
                    triples: item.triples.clone(),
                    steps: item.steps + 1,
                };
                if k < j {
                    child.triples.push((i, k, j));
                    child.stack.extend(children(i, k, j));
                }
                next.push(child);
            }
            item.state = None;
        }
        next.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.triples.cmp(&b.triples)));
        next.truncate(beam);
        items = next;
    }
    let best = &items[0];
    finish(model, &mut g, &enc, &best.triples, best.log_prob, best.steps)
}
