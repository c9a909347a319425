//! Attribution heatmaps as binary PPM: red for positive evidence, blue for
//! negative, white for zero.

use gradattr::{Error, Result, Tensor};

pub const DEFAULT_PERCENTILE: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> Image {
        let factor = factor.max(1);
        let (width, height) = (self.width * factor, self.height * factor);
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(self.pixel(r / factor, c / factor));
            }
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// Nearest-rank percentile of `|values|`.
pub fn abs_percentile(values: &[f64], percentile: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * mags.len() as f64).ceil() as usize;
    mags[rank.clamp(1, mags.len()) - 1]
}

/// Maps `t` in [-1, 1] onto the diverging colormap.
pub fn colour(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let fade = |s: f64| (255.0 * (1.0 - s)).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(-t), fade(-t), 255]
    }
}

/// Renders a `[H, W]` map, or a `[C, H, W]` map summed over channels.
///
/// Values are divided by the given percentile of their magnitudes and clipped,
/// so a few outliers saturate instead of washing out the rest.
pub fn heatmap(values: &Tensor, percentile: f64) -> Result<Image> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    let (height, width, plane) = match *values.shape() {
        [h, w] => (h, w, values.data().to_vec()),
        [c, h, w] => {
            let d = values.data();
            let plane = (0..h * w)
                .map(|p| (0..c).map(|ch| d[ch * h * w + p]).sum())
                .collect();
            (h, w, plane)
        }
        _ => {
            return Err(Error::Dimension(format!(
                "cannot render a map of shape {:?}; expected [H, W] or [C, H, W]",
                values.shape()
            )))
        }
    };
    let mut scale = abs_percentile(&plane, percentile);
    if scale == 0.0 {
        scale = plane.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    let pixels = plane
        .iter()
        .map(|&v| if scale == 0.0 { colour(0.0) } else { colour(v / scale) })
        .collect();
    Ok(Image {
        width,
        height,
        pixels,
    })
}
