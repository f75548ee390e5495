//! Binary portable graymap / pixmap (PGM `P5`, PPM `P6`).
//!
//! Samples are one byte when `maxval < 256`, otherwise two bytes big-endian.
//! [`RawPnm`] keeps the integer samples so that read → write reproduces the
//! file byte-for-byte (modulo header comments and whitespace).

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gabor::PhaseImage;
use crate::image::{GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmKind {
    Gray,
    Rgb,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Gray => b"P5",
            PnmKind::Rgb => b"P6",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn header_uint(&mut self, field: &str) -> Result<u32> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("PNM header", format!("expected {field}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PNM header", format!("{field} out of range")))
    }
}

impl RawPnm {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let kind = match bytes.get(..2) {
            Some(b"P5") => PnmKind::Gray,
            Some(b"P6") => PnmKind::Rgb,
            _ => return Err(Error::format("PNM header", "expected magic P5 or P6")),
        };
        let mut cur = Cursor { buf: bytes, pos: 2 };
        let width = cur.header_uint("width")? as usize;
        let height = cur.header_uint("height")? as usize;
        let maxval = cur.header_uint("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::format("PNM header", "zero dimension"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::format("PNM header", format!("maxval {maxval} not in 1..=65535")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::format("PNM header", "missing separator before raster")),
        }
        let count = width * height * kind.channels();
        let wide = maxval > 255;
        let need = if wide { 2 * count } else { count };
        let raster = &bytes[cur.pos..];
        if raster.len() < need {
            return Err(Error::format(
                "PNM raster",
                format!("expected {need} bytes, found {}", raster.len()),
            ));
        }
        let samples: Vec<u16> = if wide {
            raster[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
        } else {
            raster[..need].iter().map(|&b| b as u16).collect()
        };
        let maxval = maxval as u16;
        if let Some(bad) = samples.iter().find(|&&s| s > maxval) {
            return Err(Error::format("PNM raster", format!("sample {bad} exceeds maxval {maxval}")));
        }
        Ok(Self { kind, width, height, maxval, samples })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * 2 + 32);
        out.extend_from_slice(self.kind.magic());
        out.extend_from_slice(format!("\n{} {}\n{}\n", self.width, self.height, self.maxval).as_bytes());
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    fn normalized(&self) -> Vec<f64> {
        let m = self.maxval as f64;
        self.samples.iter().map(|&s| s as f64 / m).collect()
    }

    fn quantize(values: &[f64], maxval: u16) -> Vec<u16> {
        let m = maxval as f64;
        values
            .iter()
            .map(|&v| {
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                (v * m).round() as u16
            })
            .collect()
    }

    pub fn to_gray(&self) -> GrayImage {
        match self.kind {
            PnmKind::Gray => GrayImage { width: self.width, height: self.height, data: self.normalized() },
            PnmKind::Rgb => self.to_rgb().to_gray_mean(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        match self.kind {
            PnmKind::Rgb => RgbImage { width: self.width, height: self.height, data: self.normalized() },
            PnmKind::Gray => RgbImage::from_gray(&self.to_gray()),
        }
    }

    pub fn from_gray(img: &GrayImage, maxval: u16) -> Self {
        Self {
            kind: PnmKind::Gray,
            width: img.width,
            height: img.height,
            maxval,
            samples: Self::quantize(&img.data, maxval),
        }
    }

    pub fn from_rgb(img: &RgbImage, maxval: u16) -> Self {
        Self {
            kind: PnmKind::Rgb,
            width: img.width,
            height: img.height,
            maxval,
            samples: Self::quantize(&img.data, maxval),
        }
    }
}

/// Loads P5 or P6 as grayscale in `[0, 1]` (RGB is averaged).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(RawPnm::read(path)?.to_gray())
}

/// Loads P5 or P6 as RGB in `[0, 1]` (gray is replicated).
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(RawPnm::read(path)?.to_rgb())
}

pub fn write_gray(path: &Path, img: &GrayImage, maxval: u16) -> Result<()> {
    RawPnm::from_gray(img, maxval).write(path)
}

pub fn write_rgb(path: &Path, img: &RgbImage, maxval: u16) -> Result<()> {
    RawPnm::from_rgb(img, maxval).write(path)
}

/// Phase as a 16-bit PGM: 0 marks invalid pixels, 1..=65535 map linearly
/// onto [-pi, pi].
pub fn phase_to_pgm(phase: &PhaseImage) -> RawPnm {
    let samples = phase
        .phase
        .iter()
        .zip(&phase.valid)
        .map(|(&p, &v)| if v { 1 + ((p + PI) / TAU * 65534.0).round().clamp(0.0, 65534.0) as u16 } else { 0 })
        .collect();
    RawPnm { kind: PnmKind::Gray, width: phase.width, height: phase.height, maxval: 65535, samples }
}

pub fn phase_from_pgm(pnm: &RawPnm) -> Result<PhaseImage> {
    if pnm.maxval != 65535 || pnm.kind != PnmKind::Gray {
        return Err(Error::format("phase dump", "expected a 16-bit PGM"));
    }
    let phase = pnm.samples.iter().map(|&s| if s == 0 { 0.0 } else { (s - 1) as f64 / 65534.0 * TAU - PI }).collect();
    let valid = pnm.samples.iter().map(|&s| s != 0).collect();
    Ok(PhaseImage { width: pnm.width, height: pnm.height, phase, valid })
}
