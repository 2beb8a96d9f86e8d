mod common;

use common::{random_edus, random_tree, rng};
use proptest::prelude::*;
use rstsplit_core::corpus::{convert_record, read_corpus, write_corpus, CorpusRecord, TreeFormat};
use rstsplit_core::doc::LabelSet;
use rstsplit_core::infer::apply_sentence_guidance;
use rstsplit_core::metrics::{corpus_parseval, parseval, rst_parseval, segmentation_counts, Counts};
use rstsplit_core::nn::{pointing_distribution, valid_range, ParseMode, PointingMode};
use rstsplit_core::train::{lr_at, make_batches, TrainConfig};
use rstsplit_core::tree::{parse_brackets, splits_to_tree, to_brackets, tree_to_splits_e2e, tree_to_splits_edu};
use rstsplit_core::{DiscourseTree, Document, RelationLabel};

fn tree_strategy(max_edus: usize) -> impl Strategy<Value = DiscourseTree> {
    (1..=max_edus, any::<u64>()).prop_map(|(m, seed)| random_tree(&mut rng(seed), m))
}

fn doc_of(tree: &DiscourseTree, seed: u64) -> Document {
    let mut r = rng(seed);
    let edus = tree.edu_boundaries();
    let mut sentences: Vec<usize> =
        edus[..edus.len() - 1].iter().copied().filter(|_| rand::Rng::gen_bool(&mut r, 0.3)).collect();
    sentences.push(tree.n());
    // sentences must be subtrees for the document to be valid
    let spans = tree.node_spans();
    let mut keep = Vec::new();
    let mut prev = 0;
    for s in sentences {
        if spans.iter().any(|x| x.start == prev && x.end == s) {
            keep.push(s);
            prev = s;
        }
    }
    if keep.last() != Some(&tree.n()) {
        keep = vec![tree.n()];
    }
    Document {
        id: format!("doc{seed}"),
        tokens: (0..tree.n()).map(|i| format!("t{i}")).collect(),
        sentence_boundaries: keep,
        edu_boundaries: Some(edus),
        gold_tree: Some(tree_to_splits_e2e(tree)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn split_sequences_are_bijective(tree in tree_strategy(15)) {
        let m = tree.edu_count();
        let edus = tree.edu_boundaries();
        let s_edu = tree_to_splits_edu(&tree);
        let s = tree_to_splits_e2e(&tree);
        prop_assert_eq!(s_edu.len(), m - 1);
        prop_assert_eq!(s.len(), 2 * m - 1);
        prop_assert_eq!(s.iter().filter(|d| d.is_terminal()).count(), m);
        prop_assert_eq!(&splits_to_tree(&s_edu, tree.n(), Some(&edus)).unwrap(), &tree);
        prop_assert_eq!(&splits_to_tree(&s, tree.n(), None).unwrap(), &tree);
    }

    #[test]
    fn triples_rebuild_the_tree(tree in tree_strategy(15)) {
        let labels: Vec<_> = tree.constituents().iter().map(|c| c.label).collect();
        let back = DiscourseTree::from_triples(tree.n(), &tree.triples(), Some(&labels)).unwrap();
        prop_assert_eq!(back, tree);
    }

    #[test]
    fn brackets_round_trip(tree in tree_strategy(15)) {
        prop_assert_eq!(parse_brackets(&to_brackets(&tree)).unwrap(), tree);
    }

    #[test]
    fn corpus_records_round_trip(tree in tree_strategy(10), seed in any::<u64>()) {
        let doc = doc_of(&tree, seed);
        let rec = CorpusRecord::from_document(&doc);
        prop_assert_eq!(&rec.to_document(1).unwrap(), &doc);
        let bracketed = convert_record(&rec, 1, TreeFormat::Brackets).unwrap();
        prop_assert_eq!(&convert_record(&bracketed, 1, TreeFormat::Splits).unwrap(), &rec);
        let mut buf = Vec::new();
        write_corpus(&mut buf, std::slice::from_ref(&doc)).unwrap();
        prop_assert_eq!(read_corpus(buf.as_slice()).unwrap(), vec![doc]);
    }

    #[test]
    fn self_comparison_scores_100(tree in tree_strategy(12)) {
        let p = parseval(&tree, &tree).unwrap();
        let r = rst_parseval(&tree, &tree).unwrap();
        for c in [p.span, p.nuc, p.rel, p.full, r.span, r.nuc, r.rel, r.full] {
            prop_assert_eq!(c.f1(), 100.0);
        }
    }

    #[test]
    fn metric_counts_are_consistent(m in 1usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let gold = random_tree(&mut r, m);
        let pm = rand::Rng::gen_range(&mut r, 1..=gold.n().min(10));
        let edus = random_edus(&mut r, pm, gold.n());
        let pred = common::random_tree_over(&mut r, &edus);
        for (a, b) in [(parseval(&pred, &gold).unwrap(), parseval(&gold, &pred).unwrap()),
                       (rst_parseval(&pred, &gold).unwrap(), rst_parseval(&gold, &pred).unwrap())] {
            for (x, y) in [(a.span, b.span), (a.nuc, b.nuc), (a.rel, b.rel), (a.full, b.full)] {
                prop_assert!(x.matched <= x.predicted.min(x.gold));
                prop_assert_eq!(x.precision(), y.recall());
                prop_assert_eq!(x.f1(), y.f1());
                prop_assert!((0.0..=100.0).contains(&x.f1()));
            }
            prop_assert!(a.full.matched <= a.nuc.matched.min(a.rel.matched));
            prop_assert!(a.nuc.matched <= a.span.matched && a.rel.matched <= a.span.matched);
        }
        let both = corpus_parseval(&[(pred.clone(), gold.clone()), (gold.clone(), gold.clone())]).unwrap();
        let one = parseval(&pred, &gold).unwrap().span;
        let own = parseval(&gold, &gold).unwrap().span;
        let mut sum = Counts::default();
        sum += one;
        sum += own;
        prop_assert_eq!(both.counts.span, sum);
    }

    #[test]
    fn segmentation_self_and_symmetry(n in 2usize..40, a in 1usize..8, b in 1usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_edus(&mut r, a.min(n), n);
        let gold = random_edus(&mut r, b.min(n), n);
        let sentences = vec![n];
        prop_assert_eq!(segmentation_counts(&gold, &gold, &sentences, n).unwrap().f1(), 100.0);
        let x = segmentation_counts(&pred, &gold, &sentences, n).unwrap();
        let y = segmentation_counts(&gold, &pred, &sentences, n).unwrap();
        prop_assert_eq!(x.f1(), y.f1());
        prop_assert_eq!(x.predicted, pred.len() - 1);
    }

    #[test]
    fn pointing_distributions_normalize(
        scores in prop::collection::vec(-30.0f64..30.0, 2..60),
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
        gold_edu in any::<bool>(),
    ) {
        let size = scores.len() - 1;
        let i = a.index(size);
        let j = i + 1 + b.index(size - i);
        let mode = if gold_edu { ParseMode::GoldEdu } else { ParseMode::EndToEnd };
        let p = pointing_distribution(&scores, i, j, PointingMode::Training).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let range = valid_range(i, j, mode);
        match pointing_distribution(&scores, i, j, PointingMode::Inference(mode)) {
            Ok(q) => {
                prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (k, &v) in q.iter().enumerate() {
                    prop_assert!(v >= 0.0);
                    if !range.contains(&k) {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
            Err(_) => prop_assert!(range.is_empty()),
        }
    }

    #[test]
    fn guidance_picks_inner_sentence_boundaries(
        scores in prop::collection::vec(-5.0f64..5.0, 3..40),
        cuts in prop::collection::btree_set(1usize..39, 0..6),
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
    ) {
        let n = scores.len() - 1;
        let mut sentences: Vec<usize> = cuts.into_iter().filter(|&c| c < n).collect();
        sentences.push(n);
        let i = a.index(n);
        let j = i + 1 + b.index(n - i);
        let k = apply_sentence_guidance(&scores, i, j, &sentences);
        prop_assert!(i < k && k <= j);
        let inside: Vec<usize> = sentences.iter().copied().filter(|&s| i < s && s < j).collect();
        if inside.is_empty() {
            prop_assert!((i + 1..=j).all(|x| scores[x] <= scores[k]));
        } else {
            prop_assert!(inside.contains(&k));
            prop_assert!(inside.iter().all(|&x| scores[x] <= scores[k]));
        }
    }

    #[test]
    fn batches_partition_the_corpus(
        lens in prop::collection::vec(1usize..500, 1..40),
        budget in 1usize..2000,
        seed in any::<u64>(),
        epoch in 0usize..5,
    ) {
        let docs: Vec<Document> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| Document {
                id: format!("d{i}"),
                tokens: vec!["x".into(); n],
                sentence_boundaries: vec![n],
                edu_boundaries: None,
                gold_tree: None,
            })
            .collect();
        let cfg = TrainConfig { batch_size_tokens: budget, ..TrainConfig::default() };
        let batches = make_batches(&docs, &cfg, seed, epoch);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..docs.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty());
            let tokens: usize = b.iter().map(|&i| lens[i]).sum();
            prop_assert!(b.len() == 1 || tokens <= budget);
        }
        prop_assert_eq!(make_batches(&docs, &cfg, seed, epoch), batches);
    }

    #[test]
    fn learning_rate_never_increases(a in 0usize..100_000, b in 0usize..100_000) {
        let cfg = TrainConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_at(hi, &cfg) <= lr_at(lo, &cfg));
        prop_assert!(lr_at(lo, &cfg) <= cfg.learning_rate);
    }

    #[test]
    fn label_set_indexing(picks in prop::collection::vec(0usize..54, 1..20)) {
        let inv = RelationLabel::inventory();
        let set = LabelSet::new(picks.iter().map(|&i| inv[i]).collect());
        for idx in 0..set.len() {
            let l = set.get(idx).unwrap();
            prop_assert_eq!(set.index_of(l), Some(idx));
            prop_assert_eq!(l.to_string().parse::<RelationLabel>().unwrap(), l);
        }
        prop_assert!(set.get(set.len()).is_none());
    }
}
