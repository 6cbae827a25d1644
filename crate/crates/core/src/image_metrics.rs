//! Per-frame image quality: mean intensity, intensity standard deviation, and
//! Tenengrad sharpness normalized by image area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageBuffer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),
    #[error("image {width}x{height} is smaller than 3x3")]
    TooSmall { width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub brightness: f64,
    pub contrast: f64,
    pub tenengrad: f64,
}

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`, exact in integers.
pub fn to_grey(img: &ImageBuffer) -> Result<ImageBuffer, MetricsError> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let pixels = img
                .pixels()
                .chunks_exact(3)
                .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
                .collect();
            Ok(ImageBuffer::new(img.width(), img.height(), 1, pixels).expect("same geometry"))
        }
        c => Err(MetricsError::UnsupportedChannels(c)),
    }
}

/// Mean intensity over all samples.
pub fn brightness(img: &ImageBuffer) -> f64 {
    let sum: u64 = img.pixels().iter().map(|&p| p as u64).sum();
    sum as f64 / img.pixels().len() as f64
}

/// Population standard deviation of intensity.
pub fn contrast(img: &ImageBuffer) -> f64 {
    let n = img.pixels().len() as u128;
    let (s, s2) = img
        .pixels()
        .iter()
        .fold((0u128, 0u128), |(s, s2), &p| (s + p as u128, s2 + (p as u128) * (p as u128)));
    // N² var = N Σp² - (Σp)², exact in integers
    let scaled = n * s2 - s * s;
    (scaled as f64).sqrt() / n as f64
}

/// `Σ sqrt(Gx² + Gy²) / (width × height)` with 3×3 Sobel responses over interior
/// pixels; the one-pixel border contributes nothing to the sum but counts in the area.
pub fn tenengrad(img: &ImageBuffer) -> Result<f64, MetricsError> {
    let grey;
    let img = if img.channels() == 1 {
        img
    } else {
        grey = to_grey(img)?;
        &grey
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return Err(MetricsError::TooSmall { width: img.width(), height: img.height() });
    }
    let p = img.pixels();
    let at = |x: usize, y: usize| p[y * w + x] as i32;
    let mut sum = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            sum += ((gx * gx + gy * gy) as f64).sqrt();
        }
    }
    Ok(sum / (w * h) as f64)
}

/// All three metrics on the grey version of `img`.
pub fn compute_metrics(img: &ImageBuffer) -> Result<ImageMetrics, MetricsError> {
    let grey = to_grey(img)?;
    Ok(ImageMetrics { brightness: brightness(&grey), contrast: contrast(&grey), tenengrad: tenengrad(&grey)? })
}

/// Symmetric percent difference `|a - b| / ((a + b) / 2) × 100`; zero when both are zero.
pub fn percent_difference(a: f64, b: f64) -> f64 {
    let mean = (a + b) / 2.0;
    if mean == 0.0 {
        return 0.0;
    }
    (a - b).abs() / mean.abs() * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey(w: u32, h: u32, px: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn grey_passthrough_and_white() {
        let g = grey(2, 1, vec![3, 200]);
        assert_eq!(to_grey(&g).unwrap(), g);
        let white = ImageBuffer::filled(2, 2, 3, 255).unwrap();
        assert!(to_grey(&white).unwrap().pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn luma_weights() {
        let rgb = ImageBuffer::new(1, 1, 3, vec![100, 50, 200]).unwrap();
        assert_eq!(to_grey(&rgb).unwrap().pixels(), &[82]);
    }

    #[test]
    fn mean_and_std_two_point() {
        let g = grey(2, 1, vec![0, 255]);
        assert_eq!(brightness(&g), 127.5);
        assert_eq!(contrast(&g), 127.5);
        let c = grey(3, 3, vec![77; 9]);
        assert_eq!(brightness(&c), 77.0);
        assert_eq!(contrast(&c), 0.0);
    }

    #[test]
    fn tenengrad_hand_example() {
        let g = grey(3, 3, vec![0, 0, 0, 0, 0, 0, 255, 255, 255]);
        assert!((tenengrad(&g).unwrap() - 1020.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn tenengrad_constant_and_small() {
        assert_eq!(tenengrad(&grey(5, 4, vec![9; 20])).unwrap(), 0.0);
        assert_eq!(tenengrad(&grey(2, 5, vec![0; 10])), Err(MetricsError::TooSmall { width: 2, height: 5 }));
    }

    #[test]
    fn percent_difference_cases() {
        assert_eq!(percent_difference(5.0, 5.0), 0.0);
        assert_eq!(percent_difference(0.0, 0.0), 0.0);
        assert!((percent_difference(100.0, 50.0) - 66.666_666_666_666_67).abs() < 1e-9);
        assert_eq!(percent_difference(3.0, 7.0), percent_difference(7.0, 3.0));
    }
}
