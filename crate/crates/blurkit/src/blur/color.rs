//! sRGB transfer functions.
//!
//! Frame averaging must happen in linear light; these convert between the
//! 8-bit-style encoded domain and linear scene light. Both directions are
//! the exact piecewise IEC 61966-2-1 curves and round-trip within 1e-6
//! over [0, 1].

use crate::error::{Error, Result};
use crate::img::Image;

const SRGB_DECODE_CUT: f64 = 0.04045;
const SRGB_ENCODE_CUT: f64 = 0.003_130_8;

/// Encoded sRGB value -> linear light, scalar.
pub fn srgb_decode(v: f64) -> f64 {
    if v <= SRGB_DECODE_CUT {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear light -> encoded sRGB value, scalar.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= SRGB_ENCODE_CUT {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn map_checked(img: &Image, what: &str, f: fn(f64) -> f64) -> Result<Image> {
    for &v in img.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{what}: value {v} outside [0, 1]")));
        }
    }
    Ok(img.mapv(f))
}

/// Converts an encoded sRGB image to linear light, elementwise.
pub fn srgb_to_linear(img: &Image) -> Result<Image> {
    map_checked(img, "srgb_to_linear", srgb_decode)
}

/// Converts a linear-light image to encoded sRGB, elementwise.
pub fn linear_to_srgb(img: &Image) -> Result<Image> {
    map_checked(img, "linear_to_srgb", srgb_encode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_points() {
        assert_eq!(srgb_decode(0.0), 0.0);
        assert!((srgb_decode(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(srgb_encode(0.0), 0.0);
        assert!((srgb_encode(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_linear_encodes_near_0_735357() {
        // Direct evaluation of the forward transfer as the oracle.
        let oracle = 1.055 * 0.5f64.powf(1.0 / 2.4) - 0.055;
        assert!((oracle - 0.735357).abs() < 1e-5);
        assert!((srgb_encode(0.5) - 0.735357).abs() < 1e-5);
        assert!((srgb_decode(0.735357) - 0.5).abs() < 1e-5);
    }

    #[test]
    fn round_trip_within_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let x: f64 = rng.gen();
            let err = (srgb_encode(srgb_decode(x)) - x).abs();
            max_err = max_err.max(err);
            let err = (srgb_decode(srgb_encode(x)) - x).abs();
            max_err = max_err.max(err);
        }
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn out_of_range_rejected() {
        let img = Array3::from_elem((2, 2, 3), 1.5);
        assert!(srgb_to_linear(&img).is_err());
        let img = Array3::from_elem((2, 2, 3), -0.1);
        assert!(linear_to_srgb(&img).is_err());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_identity(x in 0.0f64..=1.0) {
            let there = srgb_decode(x);
            prop_assert!((0.0..=1.0).contains(&there));
            prop_assert!((srgb_encode(there) - x).abs() < 1e-6);
        }

        #[test]
        fn decode_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(srgb_decode(lo) <= srgb_decode(hi));
        }
    }
}
