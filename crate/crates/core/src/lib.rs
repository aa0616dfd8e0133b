//! Economic-complexity analytics over language x article edit histories.
//!
//! Languages play the role of countries and articles the role of products:
//! edit counts give revealed comparative advantage, the binarized advantage
//! matrix gives ECI/PCI, and the same matrix feeds similarity, proximity and
//! relatedness-based prediction. Country-level scores come from weighting
//! language ECIs by pageview shares.

pub mod behavior;
pub mod complexity;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod matrix;
pub mod output;
pub mod pipeline;
pub mod proximity;
pub mod rca;
pub mod regress;
pub mod similarity;
pub mod sparse;
pub mod stats;
pub mod synth;

pub use complexity::{ComplexityScores, Method};
pub use error::{Error, ErrorClass, Result};
pub use matrix::{ActivityMatrix, CorpusSlice, EditEvent, Index};
pub use rca::{AdvantageMatrix, RcaMatrix};
