//! Cross-model and cross-modality statistics: Matthews and Pearson
//! correlations, plug-in mutual information (plain and conditional), and
//! layer-wise activation divergence with its dump container.

mod activation;
mod correlation;
mod dump;
mod mi;

use thiserror::Error;

pub use activation::{
    activation_divergence, divergence_curves, l2_distance, select_triplets, ActivationTrace,
    DivergenceCurve, LayerPoint, Triplet, TripletSpec,
};
pub use correlation::{matthews_matrix, mcc, pearson, pearson_matrix, LabeledMatrix};
pub use dump::{read_dump, write_dump, ActivationDump, DumpEntry, DumpError, DUMP_VERSION};
pub use mi::{
    bin_column, conditional_mutual_information, discrete_entropy, discrete_mutual_information,
    mutual_information, mutual_information_with, Binned, Binning, MIReport,
};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("columns differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("bins must be >= 2, got {0}")]
    BadBins(usize),
    #[error("sample sets differ between {0:?} and {1:?}")]
    MismatchedSamples(String, String),
    #[error("trace {0}: layer count or dimensions do not match")]
    DimensionMismatch(String),
    #[error("no triplets to aggregate")]
    NoTriplets,
    #[error("non-finite value in input")]
    NonFinite,
}
