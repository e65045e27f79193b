//! Entity alignment between two knowledge graphs with relation- and
//! attribute-aware graph attention, plus the surrounding product-matching
//! toolkit: rule-based candidate blocking, training, channel ensembling and
//! ranking metrics.

pub mod align;
pub mod autodiff;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod kg;
pub mod net;
pub mod rough;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
