//! Differentiable rendering of a Gaussian cloud to intensity and
//! log-difference images.

pub mod post;
pub mod raster;

pub use post::{
    log_diff_backward, log_view_backward, log_image, log_image_backward, remosaic, remosaic_backward,
    render_log_diff, render_log_view, LogDiff, LogView, LOG_EPS,
};
pub use raster::{
    accumulate_gradient, rasterize, rasterize_backward, CloudGradient, RenderGraphState, RenderOptions, RenderedImage,
    ALPHA_MAX, TILE_SIZE, TRANSMITTANCE_MIN,
};
