//! Synthetic corpora with random segmentations and random gold trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::doc::{Document, RelationLabel};
use crate::tree::{tree_to_splits_e2e, DiscourseTree, TreeNode};

/// Probability that an interior boundary ends a sentence.
const SENTENCE_END_PROB: f64 = 1.0 / 12.0;
/// Probability that an interior, non-sentence boundary ends an EDU.
const EDU_END_PROB: f64 = 1.0 / 6.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("num_docs must be at least 1")]
    NoDocuments,
    #[error("vocab_size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("mean_tokens must be at least 2, got {0}")]
    TooShort(usize),
}

/// Generates `num_docs` documents whose lengths are uniform in
/// `[mean/2, 3*mean/2]`. Each gold tree is drawn uniformly among the binary
/// trees in which every sentence forms a subtree; labels are uniform over
/// the 54-label inventory. Deterministic in `seed`.
pub fn generate_synthetic_corpus(
    num_docs: usize,
    vocab_size: usize,
    mean_tokens: usize,
    seed: u64,
) -> Result<Vec<Document>, SynthError> {
    if num_docs == 0 {
        return Err(SynthError::NoDocuments);
    }
    if vocab_size < 2 {
        return Err(SynthError::VocabTooSmall(vocab_size));
    }
    if mean_tokens < 2 {
        return Err(SynthError::TooShort(mean_tokens));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inventory = RelationLabel::inventory();
    let width = format!("{}", vocab_size - 1).len();
    let docs = (0..num_docs)
        .map(|d| {
            let lo = (mean_tokens / 2).max(1);
            let hi = mean_tokens + mean_tokens / 2;
            let n = rng.gen_range(lo..=hi);
            let tokens = (0..n).map(|_| format!("w{:0width$}", rng.gen_range(0..vocab_size))).collect();

            let mut sentences = Vec::new();
            let mut edus = Vec::new();
            for b in 1..n {
                if rng.gen_bool(SENTENCE_END_PROB) {
                    sentences.push(b);
                    edus.push(b);
                } else if rng.gen_bool(EDU_END_PROB) {
                    edus.push(b);
                }
            }
            sentences.push(n);
            edus.push(n);

            let mut sentence_trees = Vec::new();
            let mut start = 0;
            for &s in &sentences {
                let bounds: Vec<usize> =
                    std::iter::once(start).chain(edus.iter().copied().filter(|&e| e > start && e <= s)).collect();
                sentence_trees.push(random_tree(&bounds, &mut rng, &inventory));
                start = s;
            }
            let root = join_random(sentence_trees, &mut rng, &inventory);
            let tree = DiscourseTree::from_root(root).expect("generated tree is well formed");
            Document {
                id: format!("synth-{d:04}"),
                tokens,
                sentence_boundaries: sentences,
                edu_boundaries: Some(edus),
                gold_tree: Some(tree_to_splits_e2e(&tree)),
            }
        })
        .collect();
    Ok(docs)
}

/// Catalan numbers as floats, `c[k]` = number of binary trees with k+1 leaves.
fn catalan(upto: usize) -> Vec<f64> {
    let mut c = vec![1.0f64; upto + 1];
    for k in 1..=upto {
        c[k] = c[k - 1] * 2.0 * (2 * k - 1) as f64 / (k + 1) as f64;
    }
    c
}

/// Picks the number of leaves in the left subtree so that the resulting
/// tree is uniform over all binary trees with `m` leaves.
fn uniform_left_size<R: Rng>(m: usize, rng: &mut R) -> usize {
    let c = catalan(m);
    let total = c[m - 1];
    let mut u = rng.gen::<f64>() * total;
    for a in 1..m {
        let w = c[a - 1] * c[m - a - 1];
        if u < w {
            return a;
        }
        u -= w;
    }
    m - 1
}

fn random_tree<R: Rng>(bounds: &[usize], rng: &mut R, labels: &[RelationLabel]) -> TreeNode {
    let leaves: Vec<TreeNode> = bounds.windows(2).map(|w| TreeNode::Leaf(crate::tree::Span::new(w[0], w[1]))).collect();
    join_random(leaves, rng, labels)
}

fn join_random<R: Rng>(mut parts: Vec<TreeNode>, rng: &mut R, labels: &[RelationLabel]) -> TreeNode {
    if parts.len() == 1 {
        return parts.pop().unwrap();
    }
    let a = uniform_left_size(parts.len(), rng);
    let right_parts = parts.split_off(a);
    let left = join_random(parts, rng, labels);
    let right = join_random(right_parts, rng, labels);
    let label = *labels.choose(rng).unwrap();
    TreeNode::Internal {
        span: crate::tree::Span::new(left.span().start, right.span().end),
        split: left.span().end,
        label: Some(label),
        left: Box::new(left),
        right: Box::new(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;
    use crate::doc::validate_document;

    #[test]
    fn single_document_is_valid() {
        let docs = generate_synthetic_corpus(1, 10, 5, 0).unwrap();
        assert_eq!(docs.len(), 1);
        validate_document(&docs[0]).unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_corpus(20, 50, 12, 3).unwrap();
        let b = generate_synthetic_corpus(20, 50, 12, 3).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_corpus(&mut ba, &a).unwrap();
        write_corpus(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
        let c = generate_synthetic_corpus(20, 50, 12, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn preconditions() {
        assert_eq!(generate_synthetic_corpus(0, 10, 5, 0), Err(SynthError::NoDocuments));
        assert_eq!(generate_synthetic_corpus(1, 1, 5, 0), Err(SynthError::VocabTooSmall(1)));
        assert_eq!(generate_synthetic_corpus(1, 10, 1, 0), Err(SynthError::TooShort(1)));
    }

    #[test]
    fn left_sizes_follow_catalan_weights() {
        // m = 4: weights C0*C2, C1*C1, C2*C0 = 2, 1, 2 out of 5
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..50_000 {
            counts[uniform_left_size(4, &mut rng)] += 1;
        }
        let p1 = counts[1] as f64 / 50_000.0;
        let p2 = counts[2] as f64 / 50_000.0;
        assert!((p1 - 0.4).abs() < 0.01, "{p1}");
        assert!((p2 - 0.2).abs() < 0.01, "{p2}");
    }
}
