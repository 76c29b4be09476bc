//! Binary PGM (`P5`) segmentation maps and 16-bit map dumps.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background category of a pixel or box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BgLabel {
    Sky = 0,
    Tree = 1,
    Ground = 2,
}

impl BgLabel {
    pub const ALL: [BgLabel; 3] = [BgLabel::Sky, BgLabel::Tree, BgLabel::Ground];

    pub fn from_byte(v: u8) -> Option<Self> {
        match v {
            0 => Some(BgLabel::Sky),
            1 => Some(BgLabel::Tree),
            2 => Some(BgLabel::Ground),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BgLabel::Sky => "sky",
            BgLabel::Tree => "tree",
            BgLabel::Ground => "ground",
        }
    }
}

impl fmt::Display for BgLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-pixel background labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMapImage {
    width: usize,
    height: usize,
    labels: Vec<BgLabel>,
}

impl SegMapImage {
    pub fn new(width: usize, height: usize, labels: Vec<BgLabel>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("segmentation map has zero size".into()));
        }
        if labels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[BgLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> BgLabel {
        self.labels[y * self.width + x]
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format {
            offset: 0,
            message: "not a binary PGM (expected magic \"P5\")".into(),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each header field
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
            return Err(Error::Format {
                offset: pos,
                message: format!("expected {} in PGM header", ["width", "height", "maxval"][i]),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start,
                message: "header number out of range".into(),
            })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Format {
                offset: pos,
                message: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format {
            offset: 2,
            message: format!("invalid PGM geometry {width}x{height} maxval {maxval}"),
        });
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, bytes_per_px: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * bytes_per_px;
    let have = bytes.len() - h.data_offset;
    if have < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated payload: expected {need} bytes, found {have}"),
        });
    }
    if have > need {
        return Err(Error::Format {
            offset: h.data_offset + need,
            message: format!("{} trailing bytes after payload", have - need),
        });
    }
    Ok(&bytes[h.data_offset..])
}

pub fn decode_segmap(bytes: &[u8]) -> Result<SegMapImage> {
    let h = parse_header(bytes)?;
    if h.maxval > 255 {
        return Err(Error::Format {
            offset: 2,
            message: format!("segmentation maps must be 8-bit, maxval is {}", h.maxval),
        });
    }
    let data = payload(bytes, &h, 1)?;
    let labels = data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            BgLabel::from_byte(v).ok_or_else(|| Error::Format {
                offset: h.data_offset + i,
                message: format!("unknown background label {v}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SegMapImage::new(h.width, h.height, labels)
}

pub fn encode_segmap(seg: &SegMapImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", seg.width, seg.height).into_bytes();
    out.extend(seg.labels.iter().map(|&l| l as u8));
    out
}

pub fn read_segmap(path: impl AsRef<Path>) -> Result<SegMapImage> {
    decode_segmap(&fs::read(path)?)
}

pub fn write_segmap(seg: &SegMapImage, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_segmap(seg))?)
}

/// Encodes a 16-bit grayscale PGM (maxval 65535, big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, values: &[u16]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for a {width}x{height} image",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Decodes a 16-bit PGM into `(width, height, samples)`.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let h = parse_header(bytes)?;
    if h.maxval < 256 {
        return Err(Error::Format {
            offset: 2,
            message: format!("expected a 16-bit PGM, maxval is {}", h.maxval),
        });
    }
    let data = payload(bytes, &h, 2)?;
    let values = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((h.width, h.height, values))
}
