//! Top-down discourse parsing as a sequence of token-boundary splitting
//! decisions.

pub mod corpus;
pub mod doc;
pub mod infer;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod train;
pub mod tree;

pub use doc::{Document, LabelSet, Nuclearity, Relation, RelationLabel};
pub use tree::{DiscourseTree, Span, SplitDecision, SplitSequence};
