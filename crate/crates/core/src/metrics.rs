//! Parseval, RST-Parseval and EDU segmentation scores.
//!
//! All spans are compared in token-boundary coordinates, so trees built
//! over different segmentations of the same text remain comparable.
//! Scores are micro-averaged: counts are summed over the corpus before
//! computing F1.
//!
//! * Parseval items are the labeled internal nodes `((i, k, j), label)`
//!   except the root. Span matches on `(i, k, j)`, Nuclearity additionally
//!   on the node's NN/NS/SN pattern, Relation on the relation name, Full on
//!   both.
//! * RST-Parseval items are all nodes, leaves and root included, keyed by
//!   `(i, j)`. A node's nuclearity is its role (N or S) under its parent and
//!   its relation is the parent's relation; the root carries a fixed dummy
//!   value on both facets.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::tree::{DiscourseTree, TreeNode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("predicted tree covers {pred} tokens, gold covers {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("boundary set {0:?} is not strictly increasing or does not end at n")]
    InvalidBoundaries(Vec<usize>),
}

/// Matched, predicted and gold item counts for one facet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            return if self.gold == 0 { 100.0 } else { 0.0 };
        }
        100.0 * self.matched as f64 / self.predicted as f64
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            return if self.predicted == 0 { 100.0 } else { 0.0 };
        }
        100.0 * self.matched as f64 / self.gold as f64
    }

    /// F1 as a percentage; two empty item sets score 100.
    pub fn f1(&self) -> f64 {
        let denom = self.predicted + self.gold;
        if denom == 0 {
            100.0
        } else {
            200.0 * self.matched as f64 / denom as f64
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.matched += rhs.matched;
        self.predicted += rhs.predicted;
        self.gold += rhs.gold;
    }
}

fn count<K: Eq + Hash>(pred: impl Iterator<Item = K>, gold: impl Iterator<Item = K>) -> Counts {
    let pred: HashSet<K> = pred.collect();
    let gold: HashSet<K> = gold.collect();
    Counts { matched: pred.intersection(&gold).count(), predicted: pred.len(), gold: gold.len() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FacetCounts {
    pub span: Counts,
    pub nuc: Counts,
    pub rel: Counts,
    pub full: Counts,
}

impl std::ops::AddAssign for FacetCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.span += rhs.span;
        self.nuc += rhs.nuc;
        self.rel += rhs.rel;
        self.full += rhs.full;
    }
}

/// Corpus-level F1 percentages and the counts behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ScoreReport {
    pub span_f1: f64,
    pub nuc_f1: f64,
    pub rel_f1: f64,
    pub full_f1: f64,
    pub counts: FacetCounts,
}

impl ScoreReport {
    pub fn from_counts(counts: FacetCounts) -> Self {
        ScoreReport {
            span_f1: counts.span.f1(),
            nuc_f1: counts.nuc.f1(),
            rel_f1: counts.rel.f1(),
            full_f1: counts.full.f1(),
            counts,
        }
    }

    pub fn sum<'a>(docs: impl IntoIterator<Item = &'a FacetCounts>) -> Self {
        let mut total = FacetCounts::default();
        for c in docs {
            total += *c;
        }
        ScoreReport::from_counts(total)
    }
}

/// Parseval item: `(i, k, j, nuclearity, relation)`, labels as inventory
/// indices (`usize::MAX` when unlabeled).
pub type ParsevalItem = (usize, usize, usize, usize, usize);

pub fn parseval_items(tree: &DiscourseTree) -> Vec<ParsevalItem> {
    const NONE: usize = usize::MAX;
    tree.constituents()
        .into_iter()
        .filter(|c| !(c.start == 0 && c.end == tree.n()))
        .map(|c| {
            let (nuc, rel) = match c.label {
                Some(l) => (l.nuclearity as usize, l.relation as usize),
                None => (NONE, NONE),
            };
            (c.start, c.split, c.end, nuc, rel)
        })
        .collect()
}

fn facet_counts<K>(pred: &[K], gold: &[K]) -> FacetCounts
where
    K: ItemKey,
{
    FacetCounts {
        span: count(pred.iter().map(K::span), gold.iter().map(K::span)),
        nuc: count(pred.iter().map(K::nuc), gold.iter().map(K::nuc)),
        rel: count(pred.iter().map(K::rel), gold.iter().map(K::rel)),
        full: count(pred.iter().map(K::full), gold.iter().map(K::full)),
    }
}

trait ItemKey {
    type Span: Eq + Hash;
    type Tagged: Eq + Hash;
    fn span(&self) -> Self::Span;
    fn nuc(&self) -> Self::Tagged;
    fn rel(&self) -> Self::Tagged;
    fn full(&self) -> (Self::Span, usize, usize);
}

const UNLABELED: usize = usize::MAX;

impl ItemKey for ParsevalItem {
    type Span = (usize, usize, usize);
    type Tagged = (usize, usize, usize, usize);
    fn span(&self) -> Self::Span {
        (self.0, self.1, self.2)
    }
    fn nuc(&self) -> Self::Tagged {
        (self.0, self.1, self.2, tag(self.3, 0))
    }
    fn rel(&self) -> Self::Tagged {
        (self.0, self.1, self.2, tag(self.4, 1))
    }
    fn full(&self) -> (Self::Span, usize, usize) {
        (self.span(), tag(self.3, 2), tag(self.4, 3))
    }
}

/// Unlabeled items never match a labeled item.
fn tag(value: usize, salt: usize) -> usize {
    if value == UNLABELED {
        UNLABELED - 1 - salt
    } else {
        value
    }
}

/// Parseval counts for one document pair.
pub fn parseval(pred: &DiscourseTree, gold: &DiscourseTree) -> Result<FacetCounts, MetricError> {
    same_length(pred, gold)?;
    Ok(facet_counts(&parseval_items(pred), &parseval_items(gold)))
}

pub fn corpus_parseval(pairs: &[(DiscourseTree, DiscourseTree)]) -> Result<ScoreReport, MetricError> {
    let counts = pairs.iter().map(|(p, g)| parseval(p, g)).collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreReport::sum(&counts))
}

/// RST-Parseval item: `(i, j, role, relation)`.
pub type RstItem = (usize, usize, usize, usize);

const ROOT_TAG: usize = usize::MAX - 8;
const NUCLEUS: usize = 0;
const SATELLITE: usize = 1;

pub fn rst_parseval_items(tree: &DiscourseTree) -> Vec<RstItem> {
    fn go(node: &TreeNode, role: usize, rel: usize, out: &mut Vec<RstItem>) {
        let span = node.span();
        out.push((span.start, span.end, role, rel));
        if let TreeNode::Internal { label, left, right, .. } = node {
            let (lr, rr, r) = match label {
                Some(l) => {
                    let (ln, rn) = l.nuclearity.roles();
                    let role = |n: bool| if n { NUCLEUS } else { SATELLITE };
                    (role(ln), role(rn), l.relation as usize)
                }
                None => (UNLABELED, UNLABELED, UNLABELED),
            };
            go(left, lr, r, out);
            go(right, rr, r, out);
        }
    }
    let mut out = Vec::new();
    go(tree.root(), ROOT_TAG, ROOT_TAG, &mut out);
    out
}

impl ItemKey for RstItem {
    type Span = (usize, usize);
    type Tagged = (usize, usize, usize);
    fn span(&self) -> Self::Span {
        (self.0, self.1)
    }
    fn nuc(&self) -> Self::Tagged {
        (self.0, self.1, tag(self.2, 0))
    }
    fn rel(&self) -> Self::Tagged {
        (self.0, self.1, tag(self.3, 1))
    }
    fn full(&self) -> (Self::Span, usize, usize) {
        (self.span(), tag(self.2, 2), tag(self.3, 3))
    }
}

/// RST-Parseval counts for one document pair.
pub fn rst_parseval(pred: &DiscourseTree, gold: &DiscourseTree) -> Result<FacetCounts, MetricError> {
    same_length(pred, gold)?;
    Ok(facet_counts(&rst_parseval_items(pred), &rst_parseval_items(gold)))
}

pub fn corpus_rst_parseval(pairs: &[(DiscourseTree, DiscourseTree)]) -> Result<ScoreReport, MetricError> {
    let counts = pairs.iter().map(|(p, g)| rst_parseval(p, g)).collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreReport::sum(&counts))
}

fn same_length(pred: &DiscourseTree, gold: &DiscourseTree) -> Result<(), MetricError> {
    if pred.n() != gold.n() {
        return Err(MetricError::LengthMismatch { pred: pred.n(), gold: gold.n() });
    }
    Ok(())
}

fn check_boundaries(b: &[usize], n: usize) -> Result<(), MetricError> {
    let ok = !b.is_empty() && b.windows(2).all(|w| w[0] < w[1]) && b[0] > 0 && *b.last().unwrap() == n;
    if ok {
        Ok(())
    } else {
        Err(MetricError::InvalidBoundaries(b.to_vec()))
    }
}

/// Counts of intra-sentence EDU boundaries: boundaries that coincide with a
/// sentence boundary (including `n`) are dropped from both sets.
pub fn segmentation_counts(
    pred: &[usize],
    gold: &[usize],
    sentences: &[usize],
    n: usize,
) -> Result<Counts, MetricError> {
    check_boundaries(pred, n)?;
    check_boundaries(gold, n)?;
    let sentences: HashSet<usize> = sentences.iter().copied().chain([n]).collect();
    let keep = |b: &&usize| !sentences.contains(*b);
    Ok(count(pred.iter().filter(keep), gold.iter().filter(keep)))
}

/// Intra-sentence EDU boundary F1 as a percentage.
pub fn segmentation_f1(pred: &[usize], gold: &[usize], sentences: &[usize], n: usize) -> Result<f64, MetricError> {
    Ok(segmentation_counts(pred, gold, sentences, n)?.f1())
}

/// Full evaluation summary for a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub parseval: ScoreReport,
    pub rst_parseval: ScoreReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationReport>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SegmentationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl SegmentationReport {
    pub fn from_counts(counts: Counts) -> Self {
        SegmentationReport { precision: counts.precision(), recall: counts.recall(), f1: counts.f1(), counts }
    }
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>8}{:>8}{:>8}{:>8}", "metric", "Span", "Nuc", "Rel", "Full");
        let p = &self.parseval;
        let _ = writeln!(s, "{:<14}{:>8.2}{:>8.2}{:>8.2}{:>8.2}", "Parseval", p.span_f1, p.nuc_f1, p.rel_f1, p.full_f1);
        let r = &self.rst_parseval;
        let _ = writeln!(s, "{:<14}{:>8.2}{:>8.2}{:>8.2}{:>8}", "RST-Parseval", r.span_f1, r.nuc_f1, r.rel_f1, "-");
        if let Some(seg) = &self.segmentation {
            let _ = writeln!(s, "{:<14}P {:.2}  R {:.2}  F1 {:.2}", "Segmentation", seg.precision, seg.recall, seg.f1);
        }
        s
    }
}
