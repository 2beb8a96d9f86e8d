//! Documents, boundary indexing and the relation label inventory.
//!
//! Token boundaries are numbered `0..=n`; boundary `k` sits between tokens
//! `k` and `k + 1` (1-based tokens), so a span `(i, j)` covers tokens
//! `i + 1 ..= j` and has width `j - i`. Sentinel markers are never stored
//! in [`Document::tokens`]; the encoder adds them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{splits_to_tree, DiscourseTree, SplitSequence, TreeError};

/// The 18 coarse-grained RST-DT relation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Elaboration,
    Attribution,
    Joint,
    SameUnit,
    Contrast,
    Background,
    Explanation,
    Cause,
    Temporal,
    Condition,
    Comparison,
    MannerMeans,
    Enablement,
    Evaluation,
    Summary,
    TopicComment,
    TopicChange,
    TextualOrganization,
}

impl Relation {
    pub const ALL: [Relation; 18] = [
        Relation::Elaboration,
        Relation::Attribution,
        Relation::Joint,
        Relation::SameUnit,
        Relation::Contrast,
        Relation::Background,
        Relation::Explanation,
        Relation::Cause,
        Relation::Temporal,
        Relation::Condition,
        Relation::Comparison,
        Relation::MannerMeans,
        Relation::Enablement,
        Relation::Evaluation,
        Relation::Summary,
        Relation::TopicComment,
        Relation::TopicChange,
        Relation::TextualOrganization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Elaboration => "Elaboration",
            Relation::Attribution => "Attribution",
            Relation::Joint => "Joint",
            Relation::SameUnit => "Same-Unit",
            Relation::Contrast => "Contrast",
            Relation::Background => "Background",
            Relation::Explanation => "Explanation",
            Relation::Cause => "Cause",
            Relation::Temporal => "Temporal",
            Relation::Condition => "Condition",
            Relation::Comparison => "Comparison",
            Relation::MannerMeans => "Manner-Means",
            Relation::Enablement => "Enablement",
            Relation::Evaluation => "Evaluation",
            Relation::Summary => "Summary",
            Relation::TopicComment => "Topic-Comment",
            Relation::TopicChange => "Topic-Change",
            Relation::TextualOrganization => "TextualOrganization",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabelError::UnknownRelation(s.to_string()))
    }
}

/// Nuclearity pattern of the two children of a binary node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Nuclearity {
    NN,
    NS,
    SN,
}

impl Nuclearity {
    pub const ALL: [Nuclearity; 3] = [Nuclearity::NN, Nuclearity::NS, Nuclearity::SN];

    pub fn name(self) -> &'static str {
        match self {
            Nuclearity::NN => "NN",
            Nuclearity::NS => "NS",
            Nuclearity::SN => "SN",
        }
    }

    /// Role of the left and right child: `true` for nucleus.
    pub fn roles(self) -> (bool, bool) {
        match self {
            Nuclearity::NN => (true, true),
            Nuclearity::NS => (true, false),
            Nuclearity::SN => (false, true),
        }
    }
}

impl FromStr for Nuclearity {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NN" => Ok(Nuclearity::NN),
            "NS" => Ok(Nuclearity::NS),
            "SN" => Ok(Nuclearity::SN),
            other => Err(LabelError::UnknownNuclearity(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown nuclearity `{0}` (expected NN, NS or SN)")]
    UnknownNuclearity(String),
    #[error("malformed label `{0}` (expected Relation-NUC)")]
    Malformed(String),
}

/// A relation with nuclearity attached, written `Relation-NUC`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelationLabel {
    pub relation: Relation,
    pub nuclearity: Nuclearity,
}

impl RelationLabel {
    pub fn new(relation: Relation, nuclearity: Nuclearity) -> Self {
        RelationLabel { relation, nuclearity }
    }

    /// Position in the full 18 x 3 inventory.
    pub fn inventory_index(self) -> usize {
        let r = Relation::ALL.iter().position(|&r| r == self.relation).unwrap();
        let n = Nuclearity::ALL.iter().position(|&n| n == self.nuclearity).unwrap();
        r * Nuclearity::ALL.len() + n
    }

    /// All 54 composite labels in inventory order.
    pub fn inventory() -> Vec<RelationLabel> {
        Relation::ALL.iter().flat_map(|&r| Nuclearity::ALL.iter().map(move |&n| RelationLabel::new(r, n))).collect()
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.relation.name(), self.nuclearity.name())
    }
}

impl FromStr for RelationLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (rel, nuc) = s.rsplit_once('-').ok_or_else(|| LabelError::Malformed(s.to_string()))?;
        Ok(RelationLabel::new(rel.parse()?, nuc.parse()?))
    }
}

impl TryFrom<String> for RelationLabel {
    type Error = LabelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<RelationLabel> for String {
    fn from(value: RelationLabel) -> Self {
        value.to_string()
    }
}

/// The labels actually observed in training data, indexed `0..L`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<RelationLabel>,
    #[serde(skip)]
    index: BTreeMap<RelationLabel, usize>,
}

impl LabelSet {
    pub fn new(mut labels: Vec<RelationLabel>) -> Self {
        labels.sort();
        labels.dedup();
        let index = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        LabelSet { labels, index }
    }

    pub fn full() -> Self {
        LabelSet::new(RelationLabel::inventory())
    }

    /// Collects the labels used by the gold trees of `docs`.
    pub fn from_documents(docs: &[Document]) -> Self {
        let labels =
            docs.iter().filter_map(|d| d.gold_tree.as_ref()).flat_map(|s| s.iter().filter_map(|d| d.label)).collect();
        LabelSet::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: RelationLabel) -> Option<usize> {
        if self.index.len() != self.labels.len() {
            return self.labels.iter().position(|&l| l == label);
        }
        self.index.get(&label).copied()
    }

    pub fn get(&self, idx: usize) -> Option<RelationLabel> {
        self.labels.get(idx).copied()
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DocError {
    #[error("document has no tokens")]
    Empty,
    #[error("{field} is empty")]
    NoBoundaries { field: &'static str },
    #[error("{field} is not strictly increasing at position {position} ({prev} then {next})")]
    NonMonotone { field: &'static str, position: usize, prev: usize, next: usize },
    #[error("{field} contains boundary {value} outside (0, {n}]")]
    OutOfRange { field: &'static str, value: usize, n: usize },
    #[error("{field} does not end at the terminal boundary {n}")]
    MissingTerminal { field: &'static str, n: usize },
    #[error("EDU ({start}, {end}) crosses sentence boundary {sentence_boundary}")]
    EduCrossesSentence { start: usize, end: usize, sentence_boundary: usize },
    #[error("gold tree is invalid: {0}")]
    Tree(#[from] TreeError),
    #[error("gold tree leaves {tree:?} disagree with edu boundaries {edus:?}")]
    TreeEduMismatch { tree: Vec<usize>, edus: Vec<usize> },
    #[error("internal split of span ({start}, {end}) has no relation label")]
    UnlabeledSplit { start: usize, end: usize },
}

/// A pre-tokenized document with sentence boundaries and optional gold
/// segmentation and tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub sentence_boundaries: Vec<usize>,
    pub edu_boundaries: Option<Vec<usize>>,
    pub gold_tree: Option<SplitSequence>,
}

impl Document {
    /// Number of tokens `n`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn edu_count(&self) -> Option<usize> {
        self.edu_boundaries.as_ref().map(Vec::len)
    }

    /// Builds the gold tree, using the EDU boundaries for leaves that carry
    /// no terminal decision.
    pub fn gold_discourse_tree(&self) -> Option<Result<DiscourseTree, TreeError>> {
        let seq = self.gold_tree.as_ref()?;
        Some(splits_to_tree(seq, self.len(), self.edu_boundaries.as_deref()))
    }

    pub fn validate(&self) -> Result<(), DocError> {
        validate_document(self)
    }
}

fn check_boundaries(field: &'static str, b: &[usize], n: usize) -> Result<(), DocError> {
    if b.is_empty() {
        return Err(DocError::NoBoundaries { field });
    }
    for (position, w) in b.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(DocError::NonMonotone { field, position: position + 1, prev: w[0], next: w[1] });
        }
    }
    if let Some(&value) = b.iter().find(|&&v| v == 0 || v > n) {
        return Err(DocError::OutOfRange { field, value, n });
    }
    if *b.last().unwrap() != n {
        return Err(DocError::MissingTerminal { field, n });
    }
    Ok(())
}

/// Checks every document invariant and reports the first violation.
pub fn validate_document(doc: &Document) -> Result<(), DocError> {
    let n = doc.len();
    if n == 0 {
        return Err(DocError::Empty);
    }
    check_boundaries("sentence_boundaries", &doc.sentence_boundaries, n)?;
    if let Some(edus) = &doc.edu_boundaries {
        check_boundaries("edu_boundaries", edus, n)?;
        check_edus_within_sentences(edus, &doc.sentence_boundaries)?;
    }
    if let Some(seq) = &doc.gold_tree {
        let tree = splits_to_tree(seq, n, doc.edu_boundaries.as_deref())?;
        for d in seq.iter() {
            if d.split < d.span.end && d.label.is_none() {
                return Err(DocError::UnlabeledSplit { start: d.span.start, end: d.span.end });
            }
        }
        let leaves = tree.edu_boundaries();
        match &doc.edu_boundaries {
            Some(edus) if *edus != leaves => {
                return Err(DocError::TreeEduMismatch { tree: leaves, edus: edus.clone() })
            }
            Some(_) => {}
            None => check_edus_within_sentences(&leaves, &doc.sentence_boundaries)?,
        }
    }
    Ok(())
}

/// Every sentence boundary must also be an EDU boundary.
pub(crate) fn check_edus_within_sentences(edus: &[usize], sentences: &[usize]) -> Result<(), DocError> {
    for &s in sentences {
        if let Err(pos) = edus.binary_search(&s) {
            let start = if pos == 0 { 0 } else { edus[pos - 1] };
            let end = edus.get(pos).copied().unwrap_or(s);
            return Err(DocError::EduCrossesSentence { start, end, sentence_boundary: s });
        }
    }
    Ok(())
}
