pub mod decoder;
pub mod eikonal;
pub mod frechet;
pub mod geodesic;
pub mod logmap;
pub mod manifold;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/decoder.md")]
    mod decoder {}
    #[doc = include_str!("../../../book/src/geodesics.md")]
    mod geodesics {}
    #[doc = include_str!("../../../book/src/distance-fields.md")]
    mod distance_fields {}
    #[doc = include_str!("../../../book/src/log-map.md")]
    mod log_map {}
    #[doc = include_str!("../../../book/src/frechet.md")]
    mod frechet {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
