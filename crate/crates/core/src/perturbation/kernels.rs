//! Pixel kernels. All arithmetic is integer so output is bit-identical everywhere.

use crate::dataset::ImageBuffer;

/// `p -> clamp(p + delta, 0, 255)`.
pub fn apply_brightness(img: &ImageBuffer, delta: i32) -> ImageBuffer {
    let pixels = img.pixels().iter().map(|&p| (p as i32 + delta).clamp(0, 255) as u8).collect();
    img.with_pixels(pixels)
}

/// Linear scaling about mid-grey: `p -> clamp(round(128 + (1 + level/255)(p - 128)), 0, 255)`
/// with round-half-up.
pub fn apply_contrast(img: &ImageBuffer, level: i32) -> ImageBuffer {
    let lut: Vec<u8> = (0..=255).map(|p| contrast_value(p, level)).collect();
    let pixels = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    img.with_pixels(pixels)
}

fn contrast_value(p: i64, level: i32) -> u8 {
    // 255 * result = 128*255 + (255 + level)(p - 128); round half up => floor((2n + 255) / 510)
    let num = 128 * 255 + (255 + level as i64) * (p - 128);
    (2 * num + 255).div_euclid(510).clamp(0, 255) as u8
}

/// k×k box mean per channel. The window for output (x, y) covers offsets
/// `-(k-1)/2 ..= k/2` on each axis; sample coordinates are clamped into the image.
/// Sums are exact integers divided by k² with round-half-up.
pub fn apply_blur(img: &ImageBuffer, kernel: u32) -> ImageBuffer {
    let k = kernel.max(1) as i64;
    if k == 1 {
        return img.clone();
    }
    let w = img.width() as i64;
    let h = img.height() as i64;
    let c = img.channels() as usize;
    let lo = -((k - 1) / 2);
    let hi = k / 2;
    let src = img.pixels();

    // clamped-coordinate box sums are separable: rows first, then columns
    let mut rows = vec![0u32; src.len()];
    for y in 0..h {
        let row = (y * w) as usize * c;
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0u32;
                for dx in lo..=hi {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    sum += src[row + sx * c + ch] as u32;
                }
                rows[row + x as usize * c + ch] = sum;
            }
        }
    }
    let area = (k * k) as u32;
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0u32;
                for dy in lo..=hi {
                    let sy = (y + dy).clamp(0, h - 1);
                    sum += rows[(sy * w + x) as usize * c + ch];
                }
                out[(y * w + x) as usize * c + ch] = ((2 * sum + area) / (2 * area)) as u8;
            }
        }
    }
    img.with_pixels(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey(w: u32, h: u32, px: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn brightness_clamps() {
        let img = grey(2, 1, vec![10, 250]);
        assert_eq!(apply_brightness(&img, 25).pixels(), &[35, 255]);
        let dark = grey(2, 2, vec![0; 4]);
        assert_eq!(apply_brightness(&dark, -255), dark);
    }

    #[test]
    fn contrast_endpoints() {
        let img = grey(3, 1, vec![0, 200, 255]);
        assert_eq!(apply_contrast(&img, 0), img);
        assert_eq!(apply_contrast(&img, -255).pixels(), &[128, 128, 128]);
        assert_eq!(apply_contrast(&img, 255).pixels(), &[0, 255, 255]);
    }

    #[test]
    fn contrast_matches_float_formula() {
        // the denominator 255 is odd, so exact halves never occur and f64 rounding agrees
        for level in -255..=255 {
            for p in 0..=255i64 {
                let f = 128.0 + (1.0 + level as f64 / 255.0) * (p as f64 - 128.0);
                let want = f.round().clamp(0.0, 255.0) as u8;
                assert_eq!(contrast_value(p, level), want, "p={p} level={level}");
            }
        }
    }

    #[test]
    fn blur_center_spike() {
        let mut px = vec![0u8; 9];
        px[4] = 255;
        let out = apply_blur(&grey(3, 3, px), 3);
        assert!(out.pixels().iter().all(|&p| p == 28), "{:?}", out.pixels());
    }

    #[test]
    fn blur_even_kernel_window_is_asymmetric() {
        // k = 2 covers offsets 0..=1: out(x) = mean(p(x), p(x+1)), replicated at the right edge
        let img = grey(4, 1, vec![0, 10, 20, 31]);
        let out = apply_blur(&img, 2);
        assert_eq!(out.pixels(), &[5, 15, 26, 31]);
    }

    #[test]
    fn blur_rgb_keeps_channels_separate() {
        let img = ImageBuffer::new(2, 1, 3, vec![255, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(apply_blur(&img, 5), img);
    }
}
