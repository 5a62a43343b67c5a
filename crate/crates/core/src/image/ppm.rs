use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, ImageError, Result};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let malformed = |detail: &str| ImageError::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'6' || bytes[1] == b'5') {
        return Err(malformed("expected P6 or P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("number out of range"))?;
    }
    // exactly one whitespace byte before the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval == 0 {
        return Err(malformed("zero maxval"));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos,
    })
}

/// Reads a binary PPM (P6) or PGM (P5) file with 8-bit samples.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ImageError::Missing(path.to_path_buf())
        } else {
            ImageError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let h = parse_header(&bytes, path)?;
    if h.maxval != 255 {
        return Err(ImageError::UnsupportedDepth {
            path: path.to_path_buf(),
            maxval: h.maxval,
        });
    }
    let channels = if h.magic[1] == b'6' { 3 } else { 1 };
    let count = h.width * h.height * channels;
    let raster = bytes
        .get(h.data_start..h.data_start + count)
        .ok_or_else(|| ImageError::Truncated(path.to_path_buf()))?;
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; count];
    for (i, px) in raster.chunks(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = v as f32 / 255.0;
        }
    }
    Image::new(h.width, h.height, channels, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary PPM (P6). Single-channel images are replicated to gray
/// RGB; values outside `[0, 1]` are clamped.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb = image.to_rgb();
    let plane = rgb.width() * rgb.height();
    let mut out = Vec::with_capacity(plane * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", rgb.width(), rgb.height()).expect("vec write");
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(rgb.data()[c * plane + i]));
        }
    }
    fs::write(path, out).map_err(|e| ImageError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
