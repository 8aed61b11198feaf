//! In-memory image representation and PNG I/O.
//!
//! Images are `(H, W, 3)` arrays of `f64` in `[0, 1]`. All processing
//! happens in floating point; 8-bit quantization occurs only when a file
//! is written or read.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// `(H, W, 3)` image, values in `[0, 1]`.
pub type Image = Array3<f64>;

/// Validates that every value lies in `[0, 1]`.
pub fn check_unit_range(img: &Image, what: &str) -> Result<()> {
    for &v in img.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "{what}: value {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Validates that two images share dimensions.
pub fn check_same_shape(a: &Image, b: &Image, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Loads an 8-bit RGB PNG into a float image (values / 255).
pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Writes a float image as an 8-bit RGB PNG (round-to-nearest).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(img[[y, x, 0]]),
                quantize(img[[y, x, 1]]),
                quantize(img[[y, x, 2]]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mean squared error between two images.
pub fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// PSNR in dB for `[0, 1]` data, capped at `cap` when the MSE underflows.
pub fn psnr(a: &Image, b: &Image, cap: f64) -> f64 {
    mse_to_psnr(mse(a, b), cap)
}

/// Converts an MSE over `[0, 1]` data to PSNR, applying the cap.
pub fn mse_to_psnr(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        return cap;
    }
    (-10.0 * mse.log10()).min(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn png_round_trip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c * 3) % 256) as f64 / 255.0
        });
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(img.dim(), back.dim());
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_known_value() {
        let a = Array3::from_elem((4, 4, 3), 0.5);
        let b = Array3::from_elem((4, 4, 3), 0.6);
        // MSE = 0.01 exactly -> 20 dB.
        assert!((psnr(&a, &b, 100.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_caps_on_identical() {
        let a = Array3::from_elem((4, 4, 3), 0.25);
        assert_eq!(psnr(&a, &a, 100.0), 100.0);
    }
}
