//! Multi-band rasters and the `MBR` container.
//!
//! `MBR` layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `MBR1`                            |
//! | 4      | 4    | width (u32)                             |
//! | 8      | 4    | height (u32)                            |
//! | 12     | 4    | bands (u32)                             |
//! | 16     | 4    | dtype (u32): 0 = u16, 1 = f32           |
//! | 20     | 4    | radiometric max (f32)                   |
//! | 24     | ..   | samples, band-sequential, row-major     |
//!
//! Integer samples are divided by the radiometric max on load; float
//! samples are taken as already normalized.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MBR_MAGIC: &[u8; 4] = b"MBR1";
pub const MBR_HEADER_LEN: usize = 24;

/// Default radiometric max for 11-bit sensors.
pub const DEFAULT_RADIOMETRIC_MAX: f32 = 2047.0;

/// Sample encoding of an `MBR` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U16,
    F32,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::U16 => 0,
            Dtype::F32 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::U16),
            1 => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    fn sample_bytes(self) -> usize {
        match self {
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::U16 => "u16",
            Dtype::F32 => "f32",
        })
    }
}

/// A band-sequential multi-band image of normalized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
    radiometric_max: f32,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        data: Vec<f32>,
        radiometric_max: f32,
    ) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Shape("raster needs at least one band".into()));
        }
        if !(radiometric_max.is_finite() && radiometric_max > 0.0) {
            return Err(Error::Range(format!(
                "radiometric max must be positive, got {radiometric_max}"
            )));
        }
        let expected = width * height * bands;
        if data.len() != expected {
            return Err(Error::Length(format!(
                "{width}x{height}x{bands} raster needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            bands,
            data,
            radiometric_max,
        })
    }

    /// Image filled with a single value.
    pub fn filled(width: usize, height: usize, bands: usize, value: f32) -> Self {
        RasterImage {
            width,
            height,
            bands,
            data: vec![value; width * height * bands],
            radiometric_max: DEFAULT_RADIOMETRIC_MAX,
        }
    }

    /// Stacks equally sized single-band planes.
    pub fn from_planes(
        width: usize,
        height: usize,
        planes: &[Vec<f32>],
        radiometric_max: f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * planes.len());
        for (b, plane) in planes.iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::Length(format!(
                    "plane {b} has {} samples, expected {}",
                    plane.len(),
                    width * height
                )));
            }
            data.extend_from_slice(plane);
        }
        RasterImage::new(width, height, planes.len(), data, radiometric_max)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn radiometric_max(&self) -> f32 {
        self.radiometric_max
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Single-band image holding band `b`.
    pub fn band_image(&self, b: usize) -> Result<RasterImage> {
        if b >= self.bands {
            return Err(Error::Index(format!(
                "band {b} out of range for {}-band image",
                self.bands
            )));
        }
        RasterImage::new(
            self.width,
            self.height,
            1,
            self.band(b).to_vec(),
            self.radiometric_max,
        )
    }

    pub fn with_radiometric_max(mut self, radiometric_max: f32) -> Result<Self> {
        if !(radiometric_max.is_finite() && radiometric_max > 0.0) {
            return Err(Error::Range(format!(
                "radiometric max must be positive, got {radiometric_max}"
            )));
        }
        self.radiometric_max = radiometric_max;
        Ok(self)
    }

    pub fn same_dims(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rectangular window of every band.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<RasterImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Size(format!(
                "crop {width}x{height}@({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.bands);
        for b in 0..self.bands {
            let plane = self.band(b);
            for y in y0..y0 + height {
                let row = y * self.width;
                data.extend_from_slice(&plane[row + x0..row + x0 + width]);
            }
        }
        RasterImage::new(width, height, self.bands, data, self.radiometric_max)
    }

    /// Bitwise equality of samples and header fields.
    pub fn bitwise_eq(&self, other: &RasterImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bands == other.bands
            && self.radiometric_max.to_bits() == other.radiometric_max.to_bits()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Header fields of an `MBR` file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbrHeader {
    pub width: u32,
    pub height: u32,
    pub bands: u32,
    pub dtype: Dtype,
    pub radiometric_max: f32,
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

impl MbrHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MBR_MAGIC {
            let got = &bytes[..bytes.len().min(4)];
            return Err(Error::Format(format!(
                "bad MBR magic {:?}",
                String::from_utf8_lossy(got)
            )));
        }
        if bytes.len() < MBR_HEADER_LEN {
            return Err(Error::Length(format!(
                "MBR header needs {MBR_HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        let dtype = Dtype::from_code(read_u32(bytes, 16))?;
        Ok(MbrHeader {
            width: read_u32(bytes, 4),
            height: read_u32(bytes, 8),
            bands: read_u32(bytes, 12),
            dtype,
            radiometric_max: f32::from_le_bytes(bytes[20..24].try_into().unwrap()),
        })
    }

    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * self.bands as usize * self.dtype.sample_bytes()
    }
}

/// Decodes an in-memory `MBR` buffer.
pub fn decode_mbr(bytes: &[u8]) -> Result<RasterImage> {
    let header = MbrHeader::parse(bytes)?;
    let payload = &bytes[MBR_HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::Length(format!(
            "MBR payload is {} bytes, header implies {}",
            payload.len(),
            header.payload_len()
        )));
    }
    let data: Vec<f32> = match header.dtype {
        Dtype::U16 => payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / header.radiometric_max)
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    RasterImage::new(
        header.width as usize,
        header.height as usize,
        header.bands as usize,
        data,
        header.radiometric_max,
    )
}

/// Encodes an image as an `MBR` buffer.
pub fn encode_mbr(img: &RasterImage, dtype: Dtype) -> Result<Vec<u8>> {
    let sample_bytes = dtype.sample_bytes();
    let mut out = Vec::with_capacity(MBR_HEADER_LEN + img.data.len() * sample_bytes);
    out.extend_from_slice(MBR_MAGIC);
    for dim in [img.width, img.height, img.bands] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Range(format!("dimension {dim} does not fit in u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&img.radiometric_max.to_le_bytes());
    match dtype {
        Dtype::U16 => {
            let scale = img.radiometric_max as f64;
            if scale > u16::MAX as f64 {
                return Err(Error::Range(format!(
                    "radiometric max {scale} exceeds the u16 sample range"
                )));
            }
            for (i, &v) in img.data.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Range(format!(
                        "sample {i} = {v} outside [0, 1] cannot be stored as u16"
                    )));
                }
                let q = (v as f64 * scale).round() as u16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in &img.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn load_mbr(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mbr(&bytes)
}

pub fn save_mbr(img: &RasterImage, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let bytes = encode_mbr(img, dtype)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders three bands as a binary 8-bit PPM (P6).
pub fn export_ppm(img: &RasterImage, band_triple: (usize, usize, usize)) -> Result<Vec<u8>> {
    let (r, g, b) = band_triple;
    for idx in [r, g, b] {
        if idx >= img.bands {
            return Err(Error::Index(format!(
                "preview band {idx} out of range for {}-band image",
                img.bands
            )));
        }
    }
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let n = img.width * img.height;
    let mut out = Vec::with_capacity(header.len() + 3 * n);
    out.extend_from_slice(header.as_bytes());
    let (pr, pg, pb) = (img.band(r), img.band(g), img.band(b));
    for i in 0..n {
        for v in [pr[i], pg[i], pb[i]] {
            out.push(to_byte(v));
        }
    }
    Ok(out)
}

fn to_byte(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
