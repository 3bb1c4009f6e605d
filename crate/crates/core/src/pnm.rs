//! Binary PPM (P6) and PGM (P5) images, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::grid_dag::GridShape;

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.height, self.width)
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn from_labels(labels: &LabelGrid) -> Self {
        GrayImage {
            width: labels.shape().width,
            height: labels.shape().height,
            data: labels.labels().to_vec(),
        }
    }

    pub fn into_labels(self) -> Result<LabelGrid> {
        LabelGrid::new(GridShape::new(self.height, self.width), self.data)
    }
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

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], what: &'static str) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(what, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between tokens
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
        if start == pos {
            return Err(Error::format(what, "truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(what, "header value out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(what, "missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(what, format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        data_start: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6", "PPM")?;
    let len = h.width * h.height * 3;
    let data = bytes
        .get(h.data_start..h.data_start + len)
        .ok_or_else(|| Error::format("PPM", "truncated pixel data"))?;
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data: data.to_vec(),
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5", "PGM")?;
    let len = h.width * h.height;
    let data = bytes
        .get(h.data_start..h.data_start + len)
        .ok_or_else(|| Error::format("PGM", "truncated pixel data"))?;
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data: data.to_vec(),
    })
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_ppm(img))?)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_pgm(img))?)
}

/// Writes class ids as gray values.
pub fn save_pgm(labels: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    save_gray(&GrayImage::from_labels(labels), path)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelGrid> {
    load_pgm(path)?.into_labels()
}
