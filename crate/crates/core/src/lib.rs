pub mod agent;
pub mod dataset;
pub mod encoder;
pub mod eval;
mod io;
pub mod ipdetector;
pub mod model;
pub mod numerics;

/// Guide chapters, compiled as doc-tests so the snippets stay current.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/ip-detection.md")]
    mod ip_detection {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/proctoring.md")]
    mod proctoring {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
