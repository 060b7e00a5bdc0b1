//! Raw polarization-filter-array frames and their on-disk format.
//!
//! A frame is stored as two files: `<name>.pfaraw` holds the samples as
//! little-endian `u16` in row-major order, `<name>.pfaraw.json` holds the
//! header (`magic = "PFA1"`, dimensions, bit depth, 2x2 layout).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FRAME_MAGIC: &str = "PFA1";

/// Polarizer orientation of one micro-polarizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolarizerAngle {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl PolarizerAngle {
    pub const ALL: [PolarizerAngle; 4] = [
        PolarizerAngle::Deg0,
        PolarizerAngle::Deg45,
        PolarizerAngle::Deg90,
        PolarizerAngle::Deg135,
    ];

    pub fn degrees(self) -> u16 {
        match self {
            PolarizerAngle::Deg0 => 0,
            PolarizerAngle::Deg45 => 45,
            PolarizerAngle::Deg90 => 90,
            PolarizerAngle::Deg135 => 135,
        }
    }

    pub fn radians(self) -> f64 {
        (self.degrees() as f64).to_radians()
    }

    /// Position in the canonical `[0, 45, 90, 135]` channel order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_degrees(deg: u16) -> Option<Self> {
        match deg {
            0 => Some(PolarizerAngle::Deg0),
            45 => Some(PolarizerAngle::Deg45),
            90 => Some(PolarizerAngle::Deg90),
            135 => Some(PolarizerAngle::Deg135),
            _ => None,
        }
    }
}

/// Orientation of each position in the repeating 2x2 cell, `angle_at[row][col]` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[[u16; 2]; 2]", into = "[[u16; 2]; 2]")]
pub struct SuperpixelLayout {
    angle_at: [[PolarizerAngle; 2]; 2],
}

impl Default for SuperpixelLayout {
    /// `[[90, 45], [135, 0]]`, the usual wire-grid sensor cell.
    fn default() -> Self {
        Self::from_degrees([[90, 45], [135, 0]]).expect("default layout is a permutation")
    }
}

impl SuperpixelLayout {
    pub fn from_degrees(angles: [[u16; 2]; 2]) -> Result<Self> {
        let mut seen = [false; 4];
        let mut angle_at = [[PolarizerAngle::Deg0; 2]; 2];
        for (r, row) in angles.iter().enumerate() {
            for (c, &deg) in row.iter().enumerate() {
                let a = PolarizerAngle::from_degrees(deg).ok_or_else(|| {
                    Error::InvalidLayout(format!("{deg} is not one of 0/45/90/135"))
                })?;
                if seen[a.index()] {
                    return Err(Error::InvalidLayout(format!("angle {deg} appears twice")));
                }
                seen[a.index()] = true;
                angle_at[r][c] = a;
            }
        }
        Ok(Self { angle_at })
    }

    pub fn degrees(&self) -> [[u16; 2]; 2] {
        self.angle_at.map(|row| row.map(PolarizerAngle::degrees))
    }

    /// Orientation of the micro-polarizer over pixel `(x, y)`.
    #[inline]
    pub fn angle_at(&self, x: usize, y: usize) -> PolarizerAngle {
        self.angle_at[y & 1][x & 1]
    }

    /// `(col, row)` offset of `angle` inside the 2x2 cell.
    pub fn offset_of(&self, angle: PolarizerAngle) -> (usize, usize) {
        for r in 0..2 {
            for c in 0..2 {
                if self.angle_at[r][c] == angle {
                    return (c, r);
                }
            }
        }
        unreachable!("layout is a permutation of all four angles")
    }
}

impl TryFrom<[[u16; 2]; 2]> for SuperpixelLayout {
    type Error = Error;

    fn try_from(value: [[u16; 2]; 2]) -> Result<Self> {
        Self::from_degrees(value)
    }
}

impl From<SuperpixelLayout> for [[u16; 2]; 2] {
    fn from(value: SuperpixelLayout) -> Self {
        value.degrees()
    }
}

/// Read access shared by quantized and real-valued mosaics.
pub trait Mosaic {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn layout(&self) -> &SuperpixelLayout;
    /// Sample at row-major index `idx`, in digital numbers.
    fn sample(&self, idx: usize) -> f64;
}

/// One 16-bit PFA capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMosaicFrame {
    width: usize,
    height: usize,
    bit_depth: u8,
    layout: SuperpixelLayout,
    data: Vec<u16>,
}

impl RawMosaicFrame {
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: u8,
        layout: SuperpixelLayout,
        data: Vec<u16>,
    ) -> Result<Self> {
        if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
            return Err(Error::OddDimensions { width, height });
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidParameter(format!(
                "bit depth must be in 1..=16, got {bit_depth}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} frame needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        let frame = Self {
            width,
            height,
            bit_depth,
            layout,
            data,
        };
        frame.check_range()?;
        Ok(frame)
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn max_value(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    pub fn with_layout(mut self, layout: SuperpixelLayout) -> Self {
        self.layout = layout;
        self
    }

    fn check_range(&self) -> Result<()> {
        let max = self.max_value();
        match self.data.iter().position(|&v| v > max) {
            Some(index) => Err(Error::RangeError {
                index,
                value: self.data[index],
                bit_depth: self.bit_depth,
            }),
            None => Ok(()),
        }
    }
}

impl Mosaic for RawMosaicFrame {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn layout(&self) -> &SuperpixelLayout {
        &self.layout
    }
    #[inline]
    fn sample(&self, idx: usize) -> f64 {
        self.data[idx] as f64
    }
}

/// Unquantized mosaic, as produced by the noiseless forward model before
/// the analog-to-digital step.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMosaic {
    pub width: usize,
    pub height: usize,
    pub layout: SuperpixelLayout,
    pub data: Vec<f64>,
}

impl Mosaic for FloatMosaic {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn layout(&self) -> &SuperpixelLayout {
        &self.layout
    }
    #[inline]
    fn sample(&self, idx: usize) -> f64 {
        self.data[idx]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameHeader {
    magic: String,
    width: usize,
    height: usize,
    bit_depth: u8,
    layout: SuperpixelLayout,
}

/// Path of the JSON header that accompanies a payload file.
pub fn header_path(payload: &Path) -> PathBuf {
    let mut name = payload.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Reads a frame. `layout` overrides the layout recorded in the header.
pub fn read_raw_frame(path: &Path, layout: Option<SuperpixelLayout>) -> Result<RawMosaicFrame> {
    let hpath = header_path(path);
    for p in [path, hpath.as_path()] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: FrameHeader = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: hpath.clone(),
        message: e.to_string(),
    })?;
    if header.magic != FRAME_MAGIC {
        return Err(Error::BadMagic {
            path: hpath,
            expected: FRAME_MAGIC,
            found: header.magic,
        });
    }
    if header.width % 2 != 0 || header.height % 2 != 0 {
        return Err(Error::OddDimensions {
            width: header.width,
            height: header.height,
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.width * header.height * 2;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "header says {}x{} ({} bytes), payload has {} bytes",
            header.width,
            header.height,
            expected,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    RawMosaicFrame::new(
        header.width,
        header.height,
        header.bit_depth,
        layout.unwrap_or(header.layout),
        data,
    )
}

pub fn write_raw_frame(frame: &RawMosaicFrame, path: &Path) -> Result<()> {
    frame.check_range()?;
    let header = FrameHeader {
        magic: FRAME_MAGIC.to_string(),
        width: frame.width,
        height: frame.height,
        bit_depth: frame.bit_depth,
        layout: frame.layout,
    };
    let mut payload = Vec::with_capacity(frame.data.len() * 2);
    for v in &frame.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let hpath = header_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_read_is_identity(
            hw in 1usize..6, hh in 1usize..6, bit_depth in 1u8..=16, seed in any::<u64>()
        ) {
            let (w, h) = (hw * 2, hh * 2);
            let max = (1u32 << bit_depth) - 1;
            let mut s = seed;
            let data = (0..w * h)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) as u32 % (max + 1)) as u16
                })
                .collect();
            let frame = RawMosaicFrame::new(w, h, bit_depth, SuperpixelLayout::default(), data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.pfaraw");
            write_raw_frame(&frame, &path).unwrap();
            let bytes = fs::read(&path).unwrap();
            let back = read_raw_frame(&path, None).unwrap();
            prop_assert_eq!(&back, &frame);
            write_raw_frame(&back, &path).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), bytes);
        }
    }
}
