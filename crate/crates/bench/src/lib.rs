//! Deterministic inputs shared by the criterion benches.

use posefuzz_core::dataset::ImageBuffer;

/// A `width × height` grey image with a diagonal ramp and fine checker texture.
pub fn textured_image(width: u32, height: u32) -> ImageBuffer {
    let mut px = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let ramp = (x + y) * 255 / (width + height);
            let checker = if (x / 4 + y / 4) % 2 == 0 { 20 } else { 0 };
            px.push((ramp + checker).min(255) as u8);
        }
    }
    ImageBuffer::new(width, height, 1, px).expect("valid geometry")
}
