//! Deterministic class colours.

/// Saturation of palette colours.
pub const PALETTE_SATURATION: f64 = 0.65;
/// Value (brightness) of palette colours.
pub const PALETTE_VALUE: f64 = 0.95;

const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_895;

/// HSV (all in `[0, 1]`) to RGB in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue of class `index`: successive classes step the hue by the golden-ratio
/// conjugate, starting from 0.
pub fn golden_hue(index: usize) -> f64 {
    (index as f64 * GOLDEN_RATIO_CONJUGATE).fract()
}

/// Palette colour of class `index` as 8-bit RGB.
pub fn palette_color(index: usize) -> [u8; 3] {
    hsv_to_rgb(golden_hue(index), PALETTE_SATURATION, PALETTE_VALUE).map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn palette(classes: usize) -> Vec<[u8; 3]> {
    (0..classes).map(palette_color).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primary_hues() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(2.0 / 3.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
        assert_eq!(hsv_to_rgb(0.3, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn palette_is_fixed_and_distinct() {
        let p = palette(19);
        assert_eq!(p[0], [242, 85, 85]);
        for i in 0..19 {
            for j in 0..i {
                assert_ne!(p[i], p[j]);
            }
        }
        assert_eq!(palette(19), p);
    }
}
