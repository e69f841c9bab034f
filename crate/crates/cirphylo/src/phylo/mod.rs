//! Trees, alignments, and likelihood evaluation: the exact three-taxa star
//! formula and Monte Carlo likelihoods on general trees under per-site rates.

pub mod alignment;
pub mod likelihood;
pub mod tree;

pub use alignment::{read_alignment, Alignment, AlignmentFormat, Alphabet};
pub use likelihood::{
    mc_tree_likelihood, star_constant_rate_likelihood, three_taxa_likelihood,
    three_taxa_likelihood_given_root, SiteEstimate,
};
pub use tree::{parse_newick, Tree};
