//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, ImageError, Result};
use crate::metrics::{binarize, Mask};
use crate::tensor::{Scalar, Tensor4};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, ImageError> {
    let magic = bytes
        .get(..2)
        .ok_or_else(|| ImageError::Header("file shorter than magic".into()))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(ImageError::BadMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
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
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| ImageError::Header(format!("header field {} is not a number", i + 1)))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Header("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Header(format!("empty image {width}x{height}")));
    }
    Ok(Header {
        channels,
        width: width as usize,
        height: height as usize,
        offset: pos,
    })
}

/// Decode to a `(1, c, h, w)` tensor with values `byte / 255`.
pub fn decode_netpbm<T: Scalar>(bytes: &[u8]) -> Result<Tensor4<T>> {
    let h = parse_header(bytes)?;
    let expected = h.channels * h.width * h.height;
    let payload = &bytes[h.offset..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        }
        .into());
    }
    let scale = T::lit(255.0);
    let plane = h.width * h.height;
    let mut t = Tensor4::zeros([1, h.channels, h.height, h.width]);
    let data = t.data_mut();
    for (i, &b) in payload[..expected].iter().enumerate() {
        let (px, c) = (i / h.channels, i % h.channels);
        data[c * plane + px] = T::lit(b as f64) / scale;
    }
    Ok(t)
}

/// Encode a `(1, c, h, w)` tensor, quantizing by `round(255 * clamp(x, 0, 1))`.
pub fn encode_netpbm<T: Scalar>(t: &Tensor4<T>) -> Result<Vec<u8>> {
    let [b, c, h, w] = t.shape();
    if b != 1 {
        return Err(Error::shape(
            "encode image",
            format!("batch must be 1, got {b}"),
        ));
    }
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(ImageError::Channels(c).into()),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(c * plane);
    for px in 0..plane {
        for ch in 0..c {
            let v = t.data()[ch * plane + px].as_f64().clamp(0.0, 1.0);
            out.push((255.0 * v).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor4<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes)
}

pub fn save_image<T: Scalar>(t: &Tensor4<T>, path: &Path) -> Result<()> {
    let bytes = encode_netpbm(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Single-channel mask image thresholded at 0.5.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let t = load_image::<f32>(path)?;
    if t.channels() != 1 {
        return Err(ImageError::Channels(t.channels()).into());
    }
    binarize(&t, 0.5)
}

/// Writes 0 and 255 bytes.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    save_image(&mask.to_tensor::<f32>(), path)
}
