//! Filter images as binary PGM (P5) and PPM (P6).
//!
//! Each filter is min-max normalized over all its weights to `[0, 255]`;
//! a constant filter becomes uniform 128. A 3-channel filter can be drawn
//! as one color image. Otherwise channels are tiled into a grayscale grid,
//! row-major with `ceil(sqrt(C))` columns, and unused tiles are 128.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub color: bool,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn extension(&self) -> &'static str {
        if self.color {
            "ppm"
        } else {
            "pgm"
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.color { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn normalize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // also catches an empty or NaN-containing filter
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Renders one filter stored channel-major as `[C, kh, kw]`.
pub fn filter_image(weights: &[f64], channels: usize, kh: usize, kw: usize, color: bool) -> Image {
    let px = normalize(weights);
    let plane = kh * kw;
    if color && channels == 3 {
        let mut pixels = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            (0..3).for_each(|c| pixels.push(px[c * plane + i]));
        }
        return Image {
            width: kw,
            height: kh,
            color: true,
            pixels,
        };
    }
    let cols = (1..=channels).find(|c| c * c >= channels).unwrap_or(1);
    let rows = channels.div_ceil(cols);
    let (width, height) = (cols * kw, rows * kh);
    let mut pixels = vec![128u8; width * height];
    for c in 0..channels {
        let (ty, tx) = (c / cols, c % cols);
        for y in 0..kh {
            for x in 0..kw {
                pixels[(ty * kh + y) * width + tx * kw + x] = px[c * plane + y * kw + x];
            }
        }
    }
    Image {
        width,
        height,
        color: false,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_filter_is_mid_gray() {
        assert_eq!(normalize(&[0.0; 4]), vec![128; 4]);
        let img = filter_image(&[0.3; 9], 1, 3, 3, false);
        assert_eq!(img.pixels, vec![128; 9]);
        assert_eq!(img.encode()[..11], *b"P5\n3 3\n255\n");
    }

    #[test]
    fn hand_computed_pixels() {
        // (v + 1) / 3 * 255 for v in -1..=2
        let img = filter_image(&[-1.0, 0.0, 0.5, 2.0], 1, 2, 2, false);
        assert_eq!(img.pixels, vec![0, 85, 128, 255]);
    }

    #[test]
    fn color_interleaves_channels() {
        let w = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let img = filter_image(&w, 3, 1, 2, true);
        assert_eq!(img.pixels, vec![0, 102, 204, 51, 153, 255]);
        assert_eq!(img.extension(), "ppm");
    }

    #[test]
    fn channels_tile_into_a_grid() {
        let w: Vec<f64> = (0..5).map(f64::from).collect();
        let img = filter_image(&w, 5, 1, 1, false);
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, vec![0, 64, 128, 191, 255, 128]);
    }
}
