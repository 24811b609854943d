//! Policy-domain aware party distances from embedded manifesto sentences.
//!
//! The workflow has four stages, each a module here:
//!
//! 1. [`grouping`]: cluster fine-grained category codes into policy domains
//!    by the mean cosine distance between their sentences.
//! 2. [`labeling`]: label unannotated sentences with domains from bigram
//!    embeddings.
//! 3. [`similarity`]: per-domain party distance matrices and their unweighted
//!    average.
//! 4. [`scaling`]: first-axis classical MDS, RILE, salience ground truth, and
//!    Pearson/Mantel agreement.
//!
//! [`corpus`] and [`embedding`] hold the input types; [`report`] assembles
//! the evaluation output. The guide under `book/` walks through each stage.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod grouping;
pub mod labeling;
mod linalg;
pub mod report;
pub mod scaling;
pub mod similarity;
mod table;

pub use corpus::{Corpus, CorpusFormat, DomainScheme, ManifestoKey, Sentence};
pub use embedding::{cosine_distance, EmbeddingStore, WhiteningTransform};
pub use error::{Error, Result};
pub use similarity::PartyDistanceMatrix;

/// Guide chapters, compiled as doctests so their snippets keep building.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/whitening.md")]
    mod whitening {}
    #[doc = include_str!("../../../book/src/grouping.md")]
    mod grouping {}
    #[doc = include_str!("../../../book/src/labelling.md")]
    mod labelling {}
    #[doc = include_str!("../../../book/src/distances.md")]
    mod distances {}
    #[doc = include_str!("../../../book/src/scaling.md")]
    mod scaling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
