use crate::error::{Error, Result};

/// Per-channel dilation rates for a CFP module with `channels` FP channels
/// and peak rate `peak`.
///
/// For four channels the rates are `[1, peak/4, peak/2, peak]`, with
/// integer division and any quotient below 1 raised to 1. Other channel
/// counts interpolate geometrically between 1 and `peak`, rounding down.
/// A single channel runs at the peak rate.
pub fn dilation_schedule(peak: usize, channels: usize) -> Result<Vec<usize>> {
    if peak < 1 {
        return Err(Error::Config("peak dilation rate must be at least 1".into()));
    }
    if channels < 1 {
        return Err(Error::Config("a CFP module needs at least one FP channel".into()));
    }
    Ok(match channels {
        1 => vec![peak],
        4 => vec![1, (peak / 4).max(1), (peak / 2).max(1), peak],
        k => (0..k)
            .map(|i| geometric_step(peak, i as u32, (k - 1) as u32))
            .collect(),
    })
}

/// Largest integer `x >= 1` with `x^den <= peak^num`.
fn geometric_step(peak: usize, num: u32, den: u32) -> usize {
    let target = (peak as u128).pow(num);
    let mut x: usize = 1;
    while ((x + 1) as u128).checked_pow(den).is_some_and(|p| p <= target) {
        x += 1;
    }
    x
}
