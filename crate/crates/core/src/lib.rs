pub mod bench;
pub mod causal;
pub mod data;
pub mod datagen;
pub mod error;
pub mod io;
pub mod mixture;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/latent-classes.md")]
    mod latent_classes {}
    #[doc = include_str!("../../../book/src/proxy-effects.md")]
    mod proxy_effects {}
    #[doc = include_str!("../../../book/src/categorical-treatments.md")]
    mod categorical_treatments {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
