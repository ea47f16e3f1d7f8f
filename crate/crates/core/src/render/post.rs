//! From rendered color images to predicted log-intensity differences:
//! remosaicing to the sensor's color filter layout, log conversion, and the
//! difference of two views, each with its backward pass.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{BayerPattern, Camera, GaussianCloud};
use crate::trajectory::Pose;

use super::raster::{
    accumulate_gradient, rasterize, rasterize_backward, CloudGradient, RenderGraphState,
    RenderOptions, RenderedImage,
};

/// Floor added before taking logs.
pub const LOG_EPS: f64 = 1e-5;

/// Keeps, at each pixel, the channel its color filter passes. Mono sensors
/// take channel 0.
pub fn remosaic(image: &Image, pattern: BayerPattern) -> Result<Image> {
    if !pattern.is_mono() && image.channels != 3 {
        return Err(Error::Shape(format!(
            "{pattern:?} remosaic needs 3 channels, got {}",
            image.channels
        )));
    }
    let mut out = Image::new(image.width, image.height, 1);
    for y in 0..image.height {
        for x in 0..image.width {
            out.data[y * image.width + x] = image.get(x, y, pattern.channel_at(x, y));
        }
    }
    Ok(out)
}

/// Routes a single-channel gradient back to the channel each pixel sampled.
pub fn remosaic_backward(grad: &Image, pattern: BayerPattern, channels: usize) -> Image {
    let mut out = Image::new(grad.width, grad.height, channels);
    for y in 0..grad.height {
        for x in 0..grad.width {
            out.set(x, y, pattern.channel_at(x, y), grad.data[y * grad.width + x]);
        }
    }
    out
}

/// Elementwise `ln(max(v, 0) + eps)`.
pub fn log_image(image: &Image, eps: f64) -> Image {
    image.map(|v| (v.max(0.0) + eps).ln())
}

pub fn log_image_backward(image: &Image, grad: &Image, eps: f64) -> Image {
    let data = image
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&v, &g)| if v >= 0.0 { g / (v + eps) } else { 0.0 })
        .collect();
    Image { data, ..grad.clone() }
}

/// One rendered view on its way to a log image.
#[derive(Clone, Debug)]
pub struct LogView {
    pub rendered: RenderedImage,
    pub state: RenderGraphState,
    pub mosaic: Image,
    pub log: Image,
}

pub fn render_log_view(
    cloud: &GaussianCloud,
    cam: &Camera,
    pose: &Pose,
    opts: &RenderOptions,
) -> Result<LogView> {
    let (rendered, state) = rasterize(cloud, cam, pose, opts);
    let mosaic = remosaic(&rendered.image, cam.bayer)?;
    let log = log_image(&mosaic, LOG_EPS);
    Ok(LogView {
        rendered,
        state,
        mosaic,
        log,
    })
}

/// Gradient of a loss through one log view, given `dL/dlog`.
pub fn log_view_backward(view: &LogView, cam: &Camera, grad_log: &Image) -> Result<CloudGradient> {
    let g_mosaic = log_image_backward(&view.mosaic, grad_log, LOG_EPS);
    let g_image = remosaic_backward(&g_mosaic, cam.bayer, view.rendered.image.channels);
    rasterize_backward(&view.state, &g_image)
}

/// Predicted log difference between two views with both render states.
#[derive(Clone, Debug)]
pub struct LogDiff {
    pub prediction: Image,
    pub start: LogView,
    pub end: LogView,
}

/// `log(remosaic(render(end))) − log(remosaic(render(start)))`.
pub fn render_log_diff(
    cloud: &GaussianCloud,
    cam: &Camera,
    pose_start: &Pose,
    pose_end: &Pose,
    opts: &RenderOptions,
) -> Result<LogDiff> {
    let start = render_log_view(cloud, cam, pose_start, opts)?;
    let end = render_log_view(cloud, cam, pose_end, opts)?;
    let data = end.log.data.iter().zip(&start.log.data).map(|(b, a)| b - a).collect();
    Ok(LogDiff {
        prediction: Image::from_data(cam.width, cam.height, 1, data)?,
        start,
        end,
    })
}

/// Parameter gradient from `dL/dprediction`. The two views contribute with
/// opposite signs.
pub fn log_diff_backward(diff: &LogDiff, cam: &Camera, grad: &Image) -> Result<CloudGradient> {
    diff.prediction.check_shape(grad, "log-difference gradient")?;
    let mut total = log_view_backward(&diff.end, cam, grad)?;
    let negated = grad.map(|g| -g);
    let from_start = log_view_backward(&diff.start, cam, &negated)?;
    accumulate_gradient(&mut total, &from_start);
    Ok(total)
}
