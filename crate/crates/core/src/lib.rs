//! Genomic prediction of a focal trait with time series of high-dimensional
//! secondary phenotypes.
//!
//! Per timepoint, the genetic correlation of the secondary traits is
//! reduced to a few latent factors ([`factor`]), factor labels are aligned
//! over time ([`procrustes`]), and regression factor scores ([`scores`])
//! chosen by BIC ([`selection`]) enter a multivariate genomic BLUP
//! ([`gblup`]) together with the focal trait. [`pipeline`] runs the
//! cross-validation harness and writes report tables; [`simulate`] produces
//! trials with known structure.
//!
//! The guide under `book/` walks through each step with runnable examples.

pub mod config;
pub mod covest;
pub mod design;
pub mod error;
pub mod factor;
pub mod gblup;
pub mod io;
pub mod kinship;
pub mod linalg;
pub mod pipeline;
pub mod procrustes;
pub mod scores;
pub mod selection;
pub mod simulate;
pub mod splines;
pub mod symmat;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(data_model, "data-model.md");
    chapter!(factor_models, "factor-models.md");
    chapter!(alignment, "alignment.md");
    chapter!(scores_and_selection, "scores-and-selection.md");
    chapter!(blup, "blup.md");
    chapter!(trajectories, "trajectories.md");
    chapter!(cross_validation, "cross-validation.md");
    chapter!(cli, "cli.md");
}
