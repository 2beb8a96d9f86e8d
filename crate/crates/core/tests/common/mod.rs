#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rstsplit_core::doc::LabelSet;
use rstsplit_core::nn::{Model, ModelConfig, Vocab};
use rstsplit_core::tree::{DiscourseTree, Span, TreeNode};
use rstsplit_core::{Document, RelationLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sorted EDU boundaries: `m` EDUs over `n` tokens.
pub fn random_edus(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<usize> {
    let mut interior: Vec<usize> = (1..n).collect();
    interior.shuffle(rng);
    let mut edus: Vec<usize> = interior[..m - 1].to_vec();
    edus.push(n);
    edus.sort();
    edus
}

/// A random labeled binary tree over the given EDU boundaries.
pub fn random_tree_over(rng: &mut ChaCha8Rng, edus: &[usize]) -> DiscourseTree {
    let labels = RelationLabel::inventory();
    let bounds: Vec<usize> = std::iter::once(0).chain(edus.iter().copied()).collect();
    fn build(rng: &mut ChaCha8Rng, b: &[usize], labels: &[RelationLabel]) -> TreeNode {
        if b.len() == 2 {
            return TreeNode::Leaf(Span::new(b[0], b[1]));
        }
        let cut = rng.gen_range(1..b.len() - 1);
        let left = build(rng, &b[..=cut], labels);
        let right = build(rng, &b[cut..], labels);
        TreeNode::Internal {
            span: Span::new(b[0], *b.last().unwrap()),
            split: b[cut],
            label: Some(*labels.choose(rng).unwrap()),
            left: Box::new(left),
            right: Box::new(right),
        }
    }
    DiscourseTree::from_root(build(rng, &bounds, &labels)).unwrap()
}

/// A random tree with `m` EDUs over `m..=3m` tokens.
pub fn random_tree(rng: &mut ChaCha8Rng, m: usize) -> DiscourseTree {
    let n = rng.gen_range(m..=3 * m);
    let edus = random_edus(rng, m, n);
    random_tree_over(rng, &edus)
}

/// Unlabeled document with `m` EDUs over `n` tokens; sentences end at a
/// random subset of the EDU boundaries.
pub fn random_doc(rng: &mut ChaCha8Rng, id: &str, m: usize, n: usize) -> Document {
    let edus = random_edus(rng, m, n);
    let mut sentences: Vec<usize> = edus[..m - 1].iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
    sentences.push(n);
    Document {
        id: id.to_string(),
        tokens: (0..n).map(|_| format!("w{}", rng.gen_range(0..25))).collect(),
        sentence_boundaries: sentences,
        edu_boundaries: Some(edus),
        gold_tree: None,
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        use_chars: false,
        hidden: 5,
        enc_layers: 1,
        dec_layers: 2,
        mlp_dim: 5,
        ..ModelConfig::default()
    }
}

/// Random-parameter model whose vocabulary covers `docs`.
pub fn random_model<T: rstsplit_core::nn::Real>(cfg: ModelConfig, docs: &[Document], seed: u64) -> Model<T> {
    let chars = cfg.use_chars.then(|| Vocab::chars_of(docs));
    Model::new(cfg, Vocab::from_documents(docs), chars, LabelSet::full(), seed).unwrap()
}
