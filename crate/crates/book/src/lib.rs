//! Compiles and runs the code blocks in `book/src` as doc-tests, one module
//! per chapter so a failure points at its chapter.

#[cfg(doctest)]
mod chapters {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/generation.md")]
    mod generation {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    mod protocols {}
}
