//! Grayscale frames and the preprocessing applied before correlation.

mod pgm;
mod source;

use thiserror::Error;

pub use pgm::{load_pgm, read_pgm, save_pgm, write_pgm};
pub use source::{
    read_wire_frame, write_wire_frame, DirectoryReplaySource, DriveHandle, FrameSource, Pacing, SourceError,
    SyntheticSource, TcpFrameSource, WIRE_HEADER_LEN,
};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("pixel buffer has {got} values, expected {width}x{height}")]
    BadLength { width: usize, height: usize, got: usize },
    #[error("frame dimensions must be positive, got {0}x{1}")]
    ZeroDims(usize, usize),
    #[error("pixel {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("channel planes disagree in size")]
    ChannelMismatch,
    #[error("roi {roi:?} does not fit a {width}x{height} frame")]
    RoiOutOfBounds { roi: Roi, width: usize, height: usize },
    #[error("malformed pgm: {0}")]
    MalformedPgm(String),
    #[error("pgm payload truncated: expected {expected} bytes, got {got}")]
    TruncatedPgm { expected: usize, got: usize },
    #[error("pgm maxval must be 255, got {0}")]
    UnsupportedMaxval(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One grayscale image with normalized pixels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    timestamp_us: u64,
    seq: u64,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::ZeroDims(width, height));
        }
        if pixels.len() != width * height {
            return Err(FrameError::BadLength {
                width,
                height,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(FrameError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestamp_us: 0,
            seq: 0,
        })
    }

    /// Builds a frame from values that may stray outside `[0, 1]`; they are clamped.
    /// NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self, FrameError> {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, FrameError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// 8-bit samples scaled by 1/255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, FrameError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn with_meta(mut self, timestamp_us: u64, seq: u64) -> Self {
        self.timestamp_us = timestamp_us;
        self.seq = seq;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// `round(v * 255)` per pixel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }
}

/// Rectangular region of interest, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// `0.299 r + 0.587 g + 0.114 b`. Equal channels return their common value exactly.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    (g + 0.299 * (r - g) + 0.114 * (b - g)).clamp(0.0, 1.0)
}

/// BT.601 luma of three planar channels in `[0, 1]`.
pub fn to_grayscale(r: &[f64], g: &[f64], b: &[f64], width: usize, height: usize) -> Result<Frame, FrameError> {
    let n = width * height;
    if r.len() != n || g.len() != n || b.len() != n {
        return Err(FrameError::ChannelMismatch);
    }
    let luma = r.iter().zip(g).zip(b).map(|((&r, &g), &b)| luma(r, g, b)).collect();
    Frame::new(width, height, luma)
}

pub fn crop(frame: &Frame, roi: Roi) -> Result<Frame, FrameError> {
    if !roi.fits(frame.width, frame.height) {
        return Err(FrameError::RoiOutOfBounds {
            roi,
            width: frame.width,
            height: frame.height,
        });
    }
    let mut pixels = Vec::with_capacity(roi.w * roi.h);
    for row in roi.y..roi.y + roi.h {
        let start = row * frame.width + roi.x;
        pixels.extend_from_slice(&frame.pixels[start..start + roi.w]);
    }
    Ok(Frame {
        width: roi.w,
        height: roi.h,
        pixels,
        timestamp_us: frame.timestamp_us,
        seq: frame.seq,
    })
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners.
pub fn resize(frame: &Frame, out_w: usize, out_h: usize) -> Result<Frame, FrameError> {
    if out_w == 0 || out_h == 0 {
        return Err(FrameError::ZeroDims(out_w, out_h));
    }
    if (out_w, out_h) == frame.dims() {
        return Ok(frame.clone());
    }
    let xs = axis_samples(frame.width, out_w);
    let ys = axis_samples(frame.height, out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let row0 = &frame.pixels[y0 * frame.width..(y0 + 1) * frame.width];
        let row1 = &frame.pixels[y1 * frame.width..(y1 + 1) * frame.width];
        for &(x0, x1, fx) in &xs {
            let top = row0[x0] + (row0[x1] - row0[x0]) * fx;
            let bottom = row1[x0] + (row1[x1] - row1[x0]) * fx;
            pixels.push((top + (bottom - top) * fy).clamp(0.0, 1.0));
        }
    }
    Ok(Frame {
        width: out_w,
        height: out_h,
        pixels,
        timestamp_us: frame.timestamp_us,
        seq: frame.seq,
    })
}

/// Source index pair and fractional weight for each output coordinate.
fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    if src == 1 || dst == 1 {
        return vec![(0, 0, 0.0); dst];
    }
    let scale = (src - 1) as f64 / (dst - 1) as f64;
    (0..dst)
        .map(|i| {
            if i == dst - 1 {
                return (src - 1, src - 1, 0.0);
            }
            let pos = i as f64 * scale;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Crop (when given) then resize to the target dimensions.
pub fn preprocess(frame: &Frame, roi: Option<Roi>, out_w: usize, out_h: usize) -> Result<Frame, FrameError> {
    match roi {
        Some(roi) => resize(&crop(frame, roi)?, out_w, out_h),
        None => resize(frame, out_w, out_h),
    }
}
