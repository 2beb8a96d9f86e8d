//! Binarized discourse trees over token boundaries and their one-to-one
//! encoding as depth-first sequences of splitting decisions.
//!
//! A decision `(i, j) -> k` with `i < k < j` splits `(i, j)` into `(i, k)`
//! and `(k, j)`; `k == j` marks `(i, j)` as an EDU. Sequences are in
//! pre-order: node, then left subtree, then right subtree.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{LabelError, RelationLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Width in tokens (or EDUs, for EDU-indexed spans).
    pub fn width(self) -> usize {
        self.end - self.start
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("empty split sequence")]
    Empty,
    #[error("first decision is for span {found}, expected the root {expected}")]
    WrongRoot { expected: Span, found: Span },
    #[error("split {split} of span {span} is outside ({}, {}]", span.start, span.end)]
    SplitOutOfRange { span: Span, split: usize },
    #[error("span {0} is never split or marked as an EDU")]
    MissingDecision(Span),
    #[error("decision for span {0} is not reachable from its parent (duplicate or out of order)")]
    UnconsumedDecision(Span),
    #[error("terminal decision for span {0} carries a relation label")]
    LabelOnTerminal(Span),
    #[error("span {0} is marked as an EDU but is not one of the given EDUs")]
    NotAnEdu(Span),
    #[error("node has {0} children, at least 2 required")]
    TooFewChildren(usize),
    #[error("children are not contiguous: {left} is followed by {right}")]
    NonContiguous { left: Span, right: Span },
    #[error("tree covers {found}, expected (0,{n})")]
    WrongCoverage { n: usize, found: Span },
    #[error("bracket syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("bad label: {0}")]
    Label(#[from] LabelError),
}

/// One splitting decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplitDecision {
    pub span: Span,
    pub split: usize,
    /// Present only for internal splits (`split < span.end`).
    pub label: Option<RelationLabel>,
}

impl SplitDecision {
    pub fn new(start: usize, end: usize, split: usize, label: Option<RelationLabel>) -> Self {
        SplitDecision { span: Span::new(start, end), split, label }
    }

    pub fn is_terminal(&self) -> bool {
        self.split == self.span.end
    }
}

impl fmt::Display for SplitDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.span, self.split)?;
        if let Some(l) = self.label {
            write!(f, ":{l}")?;
        }
        Ok(())
    }
}

/// Ordered splitting decisions in depth-first pre-order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplitSequence(pub Vec<SplitDecision>);

impl SplitSequence {
    pub fn new(decisions: Vec<SplitDecision>) -> Self {
        SplitSequence(decisions)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SplitDecision> {
        self.0.iter()
    }

    /// `(i, j, k)` keys, used for order comparisons that ignore labels.
    pub fn keys(&self) -> Vec<(usize, usize, usize)> {
        self.0.iter().map(|d| (d.span.start, d.span.end, d.split)).collect()
    }
}

impl<'a> IntoIterator for &'a SplitSequence {
    type Item = &'a SplitDecision;
    type IntoIter = std::slice::Iter<'a, SplitDecision>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreeNode {
    Leaf(Span),
    Internal { span: Span, split: usize, label: Option<RelationLabel>, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl TreeNode {
    pub fn span(&self) -> Span {
        match self {
            TreeNode::Leaf(s) => *s,
            TreeNode::Internal { span, .. } => *span,
        }
    }

    fn internal(left: TreeNode, right: TreeNode, label: Option<RelationLabel>) -> TreeNode {
        let (l, r) = (left.span(), right.span());
        TreeNode::Internal {
            span: Span::new(l.start, r.end),
            split: l.end,
            label,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// A labeled internal node `((i, k, j), r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constituent {
    pub start: usize,
    pub split: usize,
    pub end: usize,
    pub label: Option<RelationLabel>,
}

/// A strictly binary discourse tree whose leaves tile `[0, n]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscourseTree {
    n: usize,
    root: TreeNode,
}

impl DiscourseTree {
    /// The single-EDU tree over `n` tokens.
    pub fn leaf(n: usize) -> Self {
        DiscourseTree { n, root: TreeNode::Leaf(Span::new(0, n)) }
    }

    pub fn from_root(root: TreeNode) -> Result<Self, TreeError> {
        let span = root.span();
        if span.start != 0 {
            return Err(TreeError::WrongCoverage { n: span.end, found: span });
        }
        check_node(&root)?;
        Ok(DiscourseTree { n: span.end, root })
    }

    /// Rebuilds a tree from its internal `(i, k, j)` triples; every span
    /// without a triple becomes a leaf. Triples that are not reachable from
    /// the root are reported.
    pub fn from_triples(
        n: usize,
        triples: &[(usize, usize, usize)],
        labels: Option<&[Option<RelationLabel>]>,
    ) -> Result<Self, TreeError> {
        use std::collections::HashMap;
        let mut by_span: HashMap<Span, (usize, Option<RelationLabel>)> = HashMap::new();
        for (idx, &(i, k, j)) in triples.iter().enumerate() {
            let span = Span::new(i, j);
            if !(i < k && k < j) {
                return Err(TreeError::SplitOutOfRange { span, split: k });
            }
            let label = labels.and_then(|l| l[idx]);
            if by_span.insert(span, (k, label)).is_some() {
                return Err(TreeError::UnconsumedDecision(span));
            }
        }
        let mut used = 0;
        fn build(
            span: Span,
            by_span: &std::collections::HashMap<Span, (usize, Option<RelationLabel>)>,
            used: &mut usize,
        ) -> TreeNode {
            match by_span.get(&span) {
                Some(&(k, label)) => {
                    *used += 1;
                    let left = build(Span::new(span.start, k), by_span, used);
                    let right = build(Span::new(k, span.end), by_span, used);
                    TreeNode::Internal { span, split: k, label, left: Box::new(left), right: Box::new(right) }
                }
                None => TreeNode::Leaf(span),
            }
        }
        let root = build(Span::new(0, n), &by_span, &mut used);
        if used != triples.len() {
            let reachable: Vec<Span> = collect_internal_spans(&root);
            let stray = triples.iter().map(|&(i, _, j)| Span::new(i, j)).find(|s| !reachable.contains(s)).unwrap();
            return Err(TreeError::UnconsumedDecision(stray));
        }
        Ok(DiscourseTree { n, root })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn leaves(&self) -> Vec<Span> {
        let mut out = Vec::new();
        visit(&self.root, &mut |node| {
            if let TreeNode::Leaf(s) = node {
                out.push(*s);
            }
        });
        out
    }

    /// Right edges of the leaves, i.e. the EDU boundary set.
    pub fn edu_boundaries(&self) -> Vec<usize> {
        self.leaves().into_iter().map(|s| s.end).collect()
    }

    pub fn edu_count(&self) -> usize {
        self.leaves().len()
    }

    /// Spans of all nodes (internal and leaves) in pre-order.
    pub fn node_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        visit(&self.root, &mut |node| out.push(node.span()));
        out
    }

    /// The labeled internal nodes, in pre-order.
    pub fn constituents(&self) -> Vec<Constituent> {
        let mut out = Vec::new();
        visit(&self.root, &mut |node| {
            if let TreeNode::Internal { span, split, label, .. } = node {
                out.push(Constituent { start: span.start, split: *split, end: span.end, label: *label });
            }
        });
        out
    }

    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        self.constituents().into_iter().map(|c| (c.start, c.split, c.end)).collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.constituents().iter().all(|c| c.label.is_some())
    }

    /// Same structure with labels replaced by `f(i, k, j)`.
    pub fn relabel<F>(&self, mut f: F) -> DiscourseTree
    where
        F: FnMut(usize, usize, usize) -> Option<RelationLabel>,
    {
        fn go<F: FnMut(usize, usize, usize) -> Option<RelationLabel>>(node: &TreeNode, f: &mut F) -> TreeNode {
            match node {
                TreeNode::Leaf(s) => TreeNode::Leaf(*s),
                TreeNode::Internal { span, split, left, right, .. } => {
                    let label = f(span.start, *split, span.end);
                    TreeNode::Internal {
                        span: *span,
                        split: *split,
                        label,
                        left: Box::new(go(left, f)),
                        right: Box::new(go(right, f)),
                    }
                }
            }
        }
        DiscourseTree { n: self.n, root: go(&self.root, &mut f) }
    }

    /// Maps every boundary through `map` (e.g. EDU index -> token boundary).
    pub fn remap(&self, map: &[usize]) -> DiscourseTree {
        fn go(node: &TreeNode, map: &[usize]) -> TreeNode {
            match node {
                TreeNode::Leaf(s) => TreeNode::Leaf(Span::new(map[s.start], map[s.end])),
                TreeNode::Internal { span, split, label, left, right } => TreeNode::Internal {
                    span: Span::new(map[span.start], map[span.end]),
                    split: map[*split],
                    label: *label,
                    left: Box::new(go(left, map)),
                    right: Box::new(go(right, map)),
                },
            }
        }
        DiscourseTree { n: map[self.n], root: go(&self.root, map) }
    }
}

fn visit<'a, F: FnMut(&'a TreeNode)>(node: &'a TreeNode, f: &mut F) {
    f(node);
    if let TreeNode::Internal { left, right, .. } = node {
        visit(left, f);
        visit(right, f);
    }
}

fn collect_internal_spans(node: &TreeNode) -> Vec<Span> {
    let mut out = Vec::new();
    visit(node, &mut |n| {
        if let TreeNode::Internal { span, .. } = n {
            out.push(*span);
        }
    });
    out
}

fn check_node(node: &TreeNode) -> Result<(), TreeError> {
    match node {
        TreeNode::Leaf(s) => {
            if s.start >= s.end {
                return Err(TreeError::SplitOutOfRange { span: *s, split: s.end });
            }
            Ok(())
        }
        TreeNode::Internal { span, split, left, right, .. } => {
            if !(span.start < *split && *split < span.end) {
                return Err(TreeError::SplitOutOfRange { span: *span, split: *split });
            }
            let (l, r) = (left.span(), right.span());
            if l != Span::new(span.start, *split) || r != Span::new(*split, span.end) {
                return Err(TreeError::NonContiguous { left: l, right: r });
            }
            check_node(left)?;
            check_node(right)
        }
    }
}

/// A possibly n-ary labeled constituent tree, as found in RST treebanks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NaryTree {
    Leaf(Span),
    Node { label: Option<RelationLabel>, children: Vec<NaryTree> },
}

impl NaryTree {
    pub fn span(&self) -> Span {
        match self {
            NaryTree::Leaf(s) => *s,
            NaryTree::Node { children, .. } => {
                Span::new(children.first().map_or(0, |c| c.span().start), children.last().map_or(0, |c| c.span().end))
            }
        }
    }
}

impl From<&TreeNode> for NaryTree {
    fn from(node: &TreeNode) -> Self {
        match node {
            TreeNode::Leaf(s) => NaryTree::Leaf(*s),
            TreeNode::Internal { label, left, right, .. } => {
                NaryTree::Node { label: *label, children: vec![left.as_ref().into(), right.as_ref().into()] }
            }
        }
    }
}

/// Converts an n-ary tree into a right-branching binary tree. Nodes with
/// more than two children become a chain whose introduced nodes carry the
/// original relation with NN nuclearity.
pub fn binarize(tree: &NaryTree) -> Result<DiscourseTree, TreeError> {
    fn go(tree: &NaryTree) -> Result<TreeNode, TreeError> {
        match tree {
            NaryTree::Leaf(s) => {
                if s.start >= s.end {
                    return Err(TreeError::SplitOutOfRange { span: *s, split: s.end });
                }
                Ok(TreeNode::Leaf(*s))
            }
            NaryTree::Node { label, children } => {
                if children.len() < 2 {
                    return Err(TreeError::TooFewChildren(children.len()));
                }
                for w in children.windows(2) {
                    let (l, r) = (w[0].span(), w[1].span());
                    if l.end != r.start {
                        return Err(TreeError::NonContiguous { left: l, right: r });
                    }
                }
                let inner_label = label.map(|l| RelationLabel::new(l.relation, crate::doc::Nuclearity::NN));
                let mut built = children.iter().map(go).collect::<Result<Vec<_>, _>>()?;
                let mut acc = built.pop().unwrap();
                while built.len() > 1 {
                    let left = built.pop().unwrap();
                    acc = TreeNode::internal(left, acc, inner_label);
                }
                Ok(TreeNode::internal(built.pop().unwrap(), acc, *label))
            }
        }
    }
    DiscourseTree::from_root(go(tree)?)
}

/// Internal-node decisions only (gold-EDU form); length `m - 1`.
pub fn tree_to_splits_edu(tree: &DiscourseTree) -> SplitSequence {
    SplitSequence(
        tree.constituents().into_iter().map(|c| SplitDecision::new(c.start, c.end, c.split, c.label)).collect(),
    )
}

/// Canonical end-to-end form: every leaf additionally contributes a
/// terminal decision at its pre-order position; length `2m - 1`.
pub fn tree_to_splits_e2e(tree: &DiscourseTree) -> SplitSequence {
    let mut out = Vec::new();
    visit(&tree.root, &mut |node| match node {
        TreeNode::Leaf(s) => out.push(SplitDecision::new(s.start, s.end, s.end, None)),
        TreeNode::Internal { span, split, label, .. } => {
            out.push(SplitDecision::new(span.start, span.end, *split, *label))
        }
    });
    SplitSequence(out)
}

/// Inverse of the two conversions above. Spans without a decision are
/// leaves only if `edus` is given and lists them; terminal decisions are
/// accepted in either form.
pub fn splits_to_tree(seq: &SplitSequence, n: usize, edus: Option<&[usize]>) -> Result<DiscourseTree, TreeError> {
    let root = Span::new(0, n);
    if let Some(first) = seq.0.first() {
        if first.span != root {
            return Err(TreeError::WrongRoot { expected: root, found: first.span });
        }
    } else if edus.is_none() {
        return Err(TreeError::Empty);
    }

    let is_edu = |s: Span| -> bool {
        match edus {
            Some(e) => {
                let start_ok = s.start == 0 || e.binary_search(&s.start).is_ok();
                let end_idx = e.binary_search(&s.end);
                start_ok
                    && match end_idx {
                        Ok(idx) => {
                            let prev = if idx == 0 { 0 } else { e[idx - 1] };
                            prev == s.start
                        }
                        Err(_) => false,
                    }
            }
            None => true,
        }
    };

    let mut pos = 0usize;
    fn build(
        span: Span,
        seq: &[SplitDecision],
        pos: &mut usize,
        has_edus: bool,
        is_edu: &dyn Fn(Span) -> bool,
    ) -> Result<TreeNode, TreeError> {
        match seq.get(*pos) {
            Some(d) if d.span == span => {
                *pos += 1;
                if d.split <= span.start || d.split > span.end {
                    return Err(TreeError::SplitOutOfRange { span, split: d.split });
                }
                if d.split == span.end {
                    if d.label.is_some() {
                        return Err(TreeError::LabelOnTerminal(span));
                    }
                    if !is_edu(span) {
                        return Err(TreeError::NotAnEdu(span));
                    }
                    return Ok(TreeNode::Leaf(span));
                }
                let left = build(Span::new(span.start, d.split), seq, pos, has_edus, is_edu)?;
                let right = build(Span::new(d.split, span.end), seq, pos, has_edus, is_edu)?;
                Ok(TreeNode::Internal {
                    span,
                    split: d.split,
                    label: d.label,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            _ => {
                if has_edus && is_edu(span) {
                    Ok(TreeNode::Leaf(span))
                } else {
                    Err(TreeError::MissingDecision(span))
                }
            }
        }
    }
    let node = build(root, &seq.0, &mut pos, edus.is_some(), &is_edu)?;
    if pos != seq.len() {
        return Err(TreeError::UnconsumedDecision(seq.0[pos].span));
    }
    Ok(DiscourseTree { n, root: node })
}

/// The labeled internal nodes of `tree`.
pub fn constituents(tree: &DiscourseTree) -> Vec<Constituent> {
    tree.constituents()
}

/// Writes the tree in nested-bracket form, e.g.
/// `(Attribution-SN [0,4] (Joint-NN [4,9] [9,12]))`. Unlabeled internal
/// nodes are written with `_`.
pub fn to_brackets(tree: &DiscourseTree) -> String {
    fn go(node: &TreeNode, out: &mut String) {
        match node {
            TreeNode::Leaf(s) => out.push_str(&format!("[{},{}]", s.start, s.end)),
            TreeNode::Internal { label, left, right, .. } => {
                out.push('(');
                match label {
                    Some(l) => out.push_str(&l.to_string()),
                    None => out.push('_'),
                }
                out.push(' ');
                go(left, out);
                out.push(' ');
                go(right, out);
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    go(&tree.root, &mut out);
    out
}

/// Parses the nested-bracket form. Nodes may have more than two children;
/// they are binarized right-branching.
pub fn parse_brackets(text: &str) -> Result<DiscourseTree, TreeError> {
    let mut p = BracketParser { text: text.as_bytes(), pos: 0 };
    let tree = p.node()?;
    p.skip_ws();
    if p.pos != p.text.len() {
        return Err(p.err("trailing input"));
    }
    binarize(&tree)
}

struct BracketParser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl BracketParser<'_> {
    fn err(&self, msg: &str) -> TreeError {
        TreeError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self) -> Result<usize, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.text[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("expected a boundary index"))
    }

    fn expect(&mut self, c: u8) -> Result<(), TreeError> {
        self.skip_ws();
        if self.text.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn node(&mut self) -> Result<NaryTree, TreeError> {
        self.skip_ws();
        match self.text.get(self.pos) {
            Some(b'[') => {
                self.pos += 1;
                let i = self.number()?;
                self.expect(b',')?;
                let j = self.number()?;
                self.expect(b']')?;
                Ok(NaryTree::Leaf(Span::new(i, j)))
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let start = self.pos;
                while self.pos < self.text.len()
                    && !self.text[self.pos].is_ascii_whitespace()
                    && !matches!(self.text[self.pos], b'(' | b'[' | b')')
                {
                    self.pos += 1;
                }
                let word =
                    std::str::from_utf8(&self.text[start..self.pos]).map_err(|_| self.err("label is not UTF-8"))?;
                let label = match word {
                    "" => return Err(self.err("expected a label")),
                    "_" => None,
                    w => Some(w.parse::<RelationLabel>()?),
                };
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.text.get(self.pos) {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => children.push(self.node()?),
                        None => return Err(self.err("unclosed `(`")),
                    }
                }
                Ok(NaryTree::Node { label, children })
            }
            _ => Err(self.err("expected `(` or `[`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{Nuclearity, Relation};

    fn lab(s: &str) -> Option<RelationLabel> {
        Some(s.parse().unwrap())
    }

    fn leaf(i: usize, j: usize) -> NaryTree {
        NaryTree::Leaf(Span::new(i, j))
    }

    #[test]
    fn three_child_joint_binarizes_right_branching() {
        let t = NaryTree::Node { label: lab("Joint-NN"), children: vec![leaf(0, 2), leaf(2, 5), leaf(5, 6)] };
        let b = binarize(&t).unwrap();
        assert_eq!(to_brackets(&b), "(Joint-NN [0,2] (Joint-NN [2,5] [5,6]))");
    }

    #[test]
    fn introduced_nodes_take_nn() {
        let t = NaryTree::Node { label: lab("Elaboration-NS"), children: vec![leaf(0, 1), leaf(1, 2), leaf(2, 3)] };
        let b = binarize(&t).unwrap();
        let c = b.constituents();
        assert_eq!(c[0].label, lab("Elaboration-NS"));
        assert_eq!(c[1].label, Some(RelationLabel::new(Relation::Elaboration, Nuclearity::NN)));
    }

    #[test]
    fn four_child_list_is_a_depth_three_chain() {
        let t = NaryTree::Node { label: lab("Joint-NN"), children: (0..4).map(|i| leaf(i, i + 1)).collect() };
        let b = binarize(&t).unwrap();
        // each introduced node's left child is a single original child
        let mut node = b.root();
        let mut depth = 0;
        while let TreeNode::Internal { left, right, .. } = node {
            assert!(matches!(**left, TreeNode::Leaf(_)));
            depth += 1;
            node = right;
        }
        assert_eq!(depth, 3);
    }

    #[test]
    fn binarize_is_idempotent() {
        let t = parse_brackets("(Joint-NN [0,1] [1,2] [2,4] [4,5])").unwrap();
        let again = binarize(&NaryTree::from(t.root())).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn binarize_rejects_malformed() {
        let gap = NaryTree::Node { label: None, children: vec![leaf(0, 2), leaf(3, 4)] };
        assert!(matches!(binarize(&gap), Err(TreeError::NonContiguous { .. })));
        let one = NaryTree::Node { label: None, children: vec![leaf(0, 2)] };
        assert_eq!(binarize(&one), Err(TreeError::TooFewChildren(1)));
    }

    #[test]
    fn balanced_four_edu_tree() {
        let t = parse_brackets("(Joint-NN (Joint-NN [0,1] [1,2]) (Joint-NN [2,3] [3,4]))").unwrap();
        let keys = tree_to_splits_edu(&t).keys();
        assert_eq!(keys, vec![(0, 4, 2), (0, 2, 1), (2, 4, 3)]);
    }

    #[test]
    fn two_edu_e2e_sequence() {
        let t = parse_brackets("(Contrast-NN [0,1] [1,3])").unwrap();
        let keys = tree_to_splits_e2e(&t).keys();
        assert_eq!(keys, vec![(0, 3, 1), (0, 1, 1), (1, 3, 3)]);
    }

    #[test]
    fn single_edu_sequences() {
        let t = DiscourseTree::leaf(3);
        assert!(tree_to_splits_edu(&t).is_empty());
        assert_eq!(tree_to_splits_e2e(&t).keys(), vec![(0, 3, 3)]);
        assert!(t.constituents().is_empty());
        let back = splits_to_tree(&tree_to_splits_e2e(&t), 3, None).unwrap();
        assert_eq!(back, t);
        let back = splits_to_tree(&SplitSequence::default(), 3, Some(&[3])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn inconsistent_sequences_rejected() {
        let d = |i, j, k| SplitDecision::new(i, j, k, if k < j { lab("Joint-NN") } else { None });
        // child span never produced
        let s = SplitSequence(vec![d(0, 4, 2), d(0, 2, 2)]);
        assert_eq!(splits_to_tree(&s, 4, None), Err(TreeError::MissingDecision(Span::new(2, 4))));
        // split outside parent
        let s = SplitSequence(vec![d(0, 4, 5)]);
        assert!(matches!(splits_to_tree(&s, 4, None), Err(TreeError::SplitOutOfRange { .. })));
        // duplicate span
        let s = SplitSequence(vec![d(0, 2, 2), d(0, 2, 2)]);
        assert_eq!(splits_to_tree(&s, 2, None), Err(TreeError::UnconsumedDecision(Span::new(0, 2))));
        // wrong root
        let s = SplitSequence(vec![d(0, 3, 3)]);
        assert!(matches!(splits_to_tree(&s, 4, None), Err(TreeError::WrongRoot { .. })));
        // terminal not matching the given EDUs
        let s = SplitSequence(vec![d(0, 4, 4)]);
        assert_eq!(splits_to_tree(&s, 4, Some(&[2, 4])), Err(TreeError::NotAnEdu(Span::new(0, 4))));
    }

    #[test]
    fn from_triples_matches_constituents() {
        let t = parse_brackets("(Joint-NN [0,2] (Joint-NN [2,3] [3,5]))").unwrap();
        let labels: Vec<_> = t.constituents().iter().map(|c| c.label).collect();
        let back = DiscourseTree::from_triples(5, &t.triples(), Some(&labels)).unwrap();
        assert_eq!(back, t);
        assert!(DiscourseTree::from_triples(5, &[(0, 2, 5), (0, 1, 3)], None).is_err());
    }

    #[test]
    fn bracket_errors_have_positions() {
        assert!(matches!(parse_brackets("(Joint-NN [0,1]"), Err(TreeError::Syntax { .. })));
        assert!(matches!(parse_brackets("(Nope-NN [0,1] [1,2])"), Err(TreeError::Label(_))));
        assert!(matches!(parse_brackets("[0,1] x"), Err(TreeError::Syntax { pos: 6, .. })));
    }
}
