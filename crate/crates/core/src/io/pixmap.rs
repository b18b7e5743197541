//! Binary portable pixmaps: P6 (RGB) and P5 (grayscale), 8-bit only.

use std::path::Path;

use super::read_file;
use crate::color::palette_color;
use crate::error::{PixmapError, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

struct Header {
    width: usize,
    height: usize,
    payload_offset: usize,
}

fn malformed(offset: usize, detail: impl Into<String>) -> PixmapError {
    PixmapError::Malformed {
        offset,
        detail: detail.into(),
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, PixmapError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(malformed(0, format!("expected magic {:?}", std::str::from_utf8(magic).unwrap_or("?"))));
    }
    if !bytes.get(2).is_some_and(|&b| b.is_ascii_whitespace() || b == b'#') {
        return Err(malformed(2, "expected whitespace after magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| malformed(start, "number too large"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed(2, format!("zero extent {width}×{height}")));
    }
    if maxval != 255 {
        return Err(malformed(pos, format!("max value {maxval} is not 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(pos, "expected one whitespace byte before the payload")),
    }
    Ok(Header {
        width,
        height,
        payload_offset: pos,
    })
}

fn payload(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u8>, PixmapError> {
    let expected = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| malformed(2, "dimensions overflow"))?;
    let found = bytes.len() - h.payload_offset;
    if found < expected {
        return Err(PixmapError::Truncated {
            offset: h.payload_offset,
            expected,
            found,
        });
    }
    if found > expected {
        return Err(malformed(
            h.payload_offset + expected,
            format!("{} bytes after the payload", found - expected),
        ));
    }
    Ok(bytes[h.payload_offset..].to_vec())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, PixmapError> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PixmapError> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    Ok(decode_ppm(&read_file(path)?)?)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// `1×3×h×w` tensor with values scaled to `[0, 1]`.
pub fn image_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| T::of(img.data[(y * w + x) * 3 + c] as f64 / 255.0))
}

/// First batch item of an image tensor, clamped to `[0, 1]` and rounded to
/// 8 bits.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> RgbImage {
    let [_, _, h, w] = t.shape();
    let data = (0..h * w)
        .flat_map(|p| (0..3).map(move |c| (p, c)))
        .map(|(p, c)| (t.at(0, c, p / w, p % w).as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage { width: w, height: h, data }
}

/// First batch item of a label map as a graymap. Class indices must be at
/// most 254; 255 is reserved for ignored pixels.
pub fn labels_to_gray(labels: &LabelMap) -> Result<GrayImage, PixmapError> {
    let [_, h, w] = labels.shape();
    let data = labels.data()[..h * w].to_vec();
    if let Some(&v) = data.iter().find(|&&v| v == IGNORE_INDEX) {
        return Err(PixmapError::Range { value: v as usize });
    }
    Ok(GrayImage { width: w, height: h, data })
}

/// Palette rendering of the first batch item of a label map.
pub fn colorize(labels: &LabelMap) -> RgbImage {
    let [_, h, w] = labels.shape();
    let data = labels.data()[..h * w].iter().flat_map(|&v| palette_color(v as usize)).collect();
    RgbImage { width: w, height: h, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comments() {
        let img = RgbImage {
            width: 2,
            height: 1,
            data: vec![1, 2, 3, 250, 251, 252],
        };
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        let mut commented = b"P6 # made by hand\n# another\n2 1\n255\n".to_vec();
        commented.extend_from_slice(&img.data);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(PixmapError::Malformed { offset: 0, .. })));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\nabc"),
            Err(PixmapError::Truncated { offset: 11, expected: 12, found: 3 })
        ));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n"), Err(PixmapError::Malformed { .. })));
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(PixmapError::Malformed { offset: 3, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\nabcd"), Err(PixmapError::Malformed { offset: 14, .. })));
        assert!(matches!(decode_ppm(b"P61 1 255\n"), Err(PixmapError::Malformed { offset: 2, .. })));
        assert!(decode_ppm(b"").is_err());
    }

    #[test]
    fn graymap_round_trip() {
        let g = GrayImage {
            width: 3,
            height: 2,
            data: vec![0, 1, 2, 3, 4, 254],
        };
        assert_eq!(decode_pgm(&encode_pgm(&g)).unwrap(), g);
        assert!(decode_ppm(&encode_pgm(&g)).is_err());
    }

    #[test]
    fn ignore_label_cannot_be_written() {
        let l = LabelMap::new([1, 1, 2], vec![0, IGNORE_INDEX]).unwrap();
        assert!(matches!(labels_to_gray(&l), Err(PixmapError::Range { value: 255 })));
    }

    #[test]
    fn tensor_scaling() {
        let img = RgbImage {
            width: 1,
            height: 1,
            data: vec![0, 51, 255],
        };
        let t = image_to_tensor::<f64>(&img);
        assert_eq!(t.data(), &[0.0, 0.2, 1.0]);
        assert_eq!(tensor_to_image(&t), img);
    }
}
