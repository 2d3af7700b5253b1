//! Frame and clip data model, color/depth conversions and the binary clip container.
//!
//! A clip on disk is a little-endian container:
//!
//! ```text
//! "IGSC" | version u16 = 1 | modality u8 | sensor u8 | width u16 | height u16
//!        | frame_count u32 | fps f32 | frame_count * width * height bytes
//! ```
//!
//! Labels are not part of the container; they travel in the JSON-lines
//! annotation sidecar (see [`Annotation`]).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLIP_MAGIC: &[u8; 4] = b"IGSC";
pub const CLIP_VERSION: u16 = 1;

/// Upper bound on a single clip payload; anything larger is treated as a corrupt header.
const MAX_PAYLOAD_BYTES: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("dimension mismatch: expected {expected} samples, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyFrame { width: usize, height: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("depth sample {value} exceeds sensor cap {d_max}")]
    DepthOutOfRange { value: u16, d_max: u16 },
    #[error("clip has no frames")]
    EmptyClip,
    #[error("frame {index} is {width}x{height}, clip is {clip_width}x{clip_height}")]
    InconsistentFrame {
        index: usize,
        width: usize,
        height: usize,
        clip_width: usize,
        clip_height: usize,
    },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown {field} code {code}")]
    UnknownCode { field: &'static str, code: u8 },
    #[error("truncated payload")]
    Truncated,
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("annotation line {line}: {source}")]
    Annotation {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// Row-major 8-bit intensity image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(StreamError::EmptyFrame { width, height });
        }
        if data.len() != width * height {
            return Err(StreamError::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &GrayFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Row-major 16-bit depth map in millimeters, capped at `d_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    data: Vec<u16>,
    d_max: u16,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, data: Vec<u16>, d_max: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(StreamError::EmptyFrame { width, height });
        }
        if data.len() != width * height {
            return Err(StreamError::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if d_max == 0 {
            return Err(StreamError::InvalidParameter("d_max must be positive".into()));
        }
        if let Some(&value) = data.iter().find(|&&d| d > d_max) {
            return Err(StreamError::DepthOutOfRange { value, d_max });
        }
        Ok(Self {
            width,
            height,
            data,
            d_max,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn d_max(&self) -> u16 {
        self.d_max
    }
}

/// Converts interleaved 8-bit RGB to intensity with BT.601 luma weights.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayFrame> {
    let expected = 3 * width * height;
    if rgb.len() != expected {
        return Err(StreamError::DimensionMismatch {
            expected,
            actual: rgb.len(),
        });
    }
    let data = rgb
        .chunks_exact(3)
        .map(|px| {
            let y = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayFrame::new(width, height, data)
}

/// Maps one depth sample to 8 bits: `round(255 * ln(1 + d) / ln(1 + d_max))`.
pub fn log_depth_value(d: u16, d_max: u16) -> Result<u8> {
    if d_max == 0 {
        return Err(StreamError::InvalidParameter("d_max must be positive".into()));
    }
    let d = d.min(d_max);
    let v = 255.0 * f64::from(d).ln_1p() / f64::from(d_max).ln_1p();
    Ok(v.round().clamp(0.0, 255.0) as u8)
}

/// Logarithmic depth compression to an 8-bit image. Holes (d = 0) map to 0.
pub fn log_depth(depth: &DepthFrame) -> Result<GrayFrame> {
    let d_max = depth.d_max;
    if d_max == 0 {
        return Err(StreamError::InvalidParameter("d_max must be positive".into()));
    }
    let scale = 255.0 / f64::from(d_max).ln_1p();
    let data = depth
        .data
        .iter()
        .map(|&d| (f64::from(d.min(d_max)).ln_1p() * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayFrame::new(depth.width, depth.height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Rgb,
    Depth,
    LogDepth,
}

impl Modality {
    /// Container code: 0 = RGB converted to gray, 1 = log-depth applied, 2 = raw.
    pub fn code(self) -> u8 {
        match self {
            Modality::Rgb => 0,
            Modality::LogDepth => 1,
            Modality::Depth => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Modality::Rgb),
            1 => Ok(Modality::LogDepth),
            2 => Ok(Modality::Depth),
            _ => Err(StreamError::UnknownCode {
                field: "modality",
                code,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorId {
    S1,
    S2,
    S3,
}

impl SensorId {
    pub fn code(self) -> u8 {
        match self {
            SensorId::S1 => 1,
            SensorId::S2 => 2,
            SensorId::S3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(SensorId::S1),
            2 => Ok(SensorId::S2),
            3 => Ok(SensorId::S3),
            _ => Err(StreamError::UnknownCode {
                field: "sensor",
                code,
            }),
        }
    }
}

/// A timed sequence of equally sized gray frames from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    frames: Vec<GrayFrame>,
    fps: f32,
    modality: Modality,
    sensor: SensorId,
    label: Option<u32>,
}

impl Clip {
    pub fn new(
        frames: Vec<GrayFrame>,
        fps: f32,
        modality: Modality,
        sensor: SensorId,
        label: Option<u32>,
    ) -> Result<Self> {
        let first = frames.first().ok_or(StreamError::EmptyClip)?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(StreamError::InvalidParameter(format!("fps must be positive, got {fps}")));
        }
        let (w, h) = (first.width, first.height);
        for (index, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(StreamError::InconsistentFrame {
                    index,
                    width: f.width,
                    height: f.height,
                    clip_width: w,
                    clip_height: h,
                });
            }
        }
        Ok(Self {
            frames,
            fps,
            modality,
            sensor,
            label,
        })
    }

    pub fn frames(&self) -> &[GrayFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn sensor(&self) -> SensorId {
        self.sensor
    }

    pub fn label(&self) -> Option<u32> {
        self.label
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    /// Frames `[start, end)` as a new clip with the same metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.frames.len());
        if start >= end {
            return Err(StreamError::EmptyClip);
        }
        Clip::new(
            self.frames[start..end].to_vec(),
            self.fps,
            self.modality,
            self.sensor,
            self.label,
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let width = u16::try_from(self.width())
            .map_err(|_| StreamError::DimensionOverflow(format!("width {}", self.width())))?;
        let height = u16::try_from(self.height())
            .map_err(|_| StreamError::DimensionOverflow(format!("height {}", self.height())))?;
        let count = u32::try_from(self.frames.len())
            .map_err(|_| StreamError::DimensionOverflow(format!("{} frames", self.frames.len())))?;
        w.write_all(CLIP_MAGIC)?;
        w.write_u16::<LittleEndian>(CLIP_VERSION)?;
        w.write_u8(self.modality.code())?;
        w.write_u8(self.sensor.code())?;
        w.write_u16::<LittleEndian>(width)?;
        w.write_u16::<LittleEndian>(height)?;
        w.write_u32::<LittleEndian>(count)?;
        w.write_f32::<LittleEndian>(self.fps)?;
        for f in &self.frames {
            w.write_all(&f.data)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CLIP_MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != CLIP_VERSION {
            return Err(StreamError::UnsupportedVersion(version));
        }
        let modality = Modality::from_code(r.read_u8().map_err(truncated)?)?;
        let sensor = SensorId::from_code(r.read_u8().map_err(truncated)?)?;
        let width = usize::from(r.read_u16::<LittleEndian>().map_err(truncated)?);
        let height = usize::from(r.read_u16::<LittleEndian>().map_err(truncated)?);
        let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let fps = r.read_f32::<LittleEndian>().map_err(truncated)?;
        if width == 0 || height == 0 {
            return Err(StreamError::EmptyFrame { width, height });
        }
        if count == 0 {
            return Err(StreamError::EmptyClip);
        }
        let total = (width as u64) * (height as u64) * (count as u64);
        if total > MAX_PAYLOAD_BYTES {
            return Err(StreamError::DimensionOverflow(format!(
                "{count} frames of {width}x{height} exceed the payload limit"
            )));
        }
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            let mut data = vec![0u8; width * height];
            read_exact(&mut r, &mut data)?;
            frames.push(GrayFrame {
                width,
                height,
                data,
            });
        }
        Clip::new(frames, fps, modality, sensor, None)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn truncated(e: io::Error) -> StreamError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        StreamError::Truncated
    } else {
        StreamError::Io(e)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(truncated)
}

/// One line of the annotation sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub clip: String,
    pub label: Option<u32>,
    pub subject: String,
    pub task: String,
    pub start_frame: u32,
    pub end_frame: u32,
}

pub fn write_annotations<W: Write>(mut w: W, annotations: &[Annotation]) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut w, a).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_annotations<R: BufRead>(r: R) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a = serde_json::from_str(&line).map_err(|source| StreamError::Annotation {
            line: i + 1,
            source,
        })?;
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_extremes() {
        let black = to_grayscale(2, 2, &[0; 12]).unwrap();
        assert!(black.data().iter().all(|&v| v == 0));
        let white = to_grayscale(2, 2, &[255; 12]).unwrap();
        assert!(white.data().iter().all(|&v| v == 255));
    }

    #[test]
    fn grayscale_single_pixel() {
        // 0.299*100 + 0.587*50 + 0.114*200 = 82.05
        let g = to_grayscale(1, 1, &[100, 50, 200]).unwrap();
        assert_eq!(g.data(), &[82]);
    }

    #[test]
    fn grayscale_rejects_bad_length() {
        assert!(matches!(
            to_grayscale(2, 2, &[0; 11]),
            Err(StreamError::DimensionMismatch { expected: 12, actual: 11 })
        ));
    }

    #[test]
    fn log_depth_anchor_points() {
        assert_eq!(log_depth_value(0, 4095).unwrap(), 0);
        assert_eq!(log_depth_value(4095, 4095).unwrap(), 255);
        assert_eq!(log_depth_value(1000, 4095).unwrap(), 212);
        assert!(matches!(log_depth_value(3, 0), Err(StreamError::InvalidParameter(_))));
    }

    #[test]
    fn log_depth_exhaustively_monotone() {
        let d_max = u16::MAX;
        let mut prev = 0u8;
        for d in 0..=u16::MAX {
            let v = log_depth_value(d, d_max).unwrap();
            assert!(v >= prev, "not monotone at {d}");
            prev = v;
        }
    }

    #[test]
    fn log_depth_frame_matches_scalar_table() {
        let d_max = 4095;
        let data: Vec<u16> = (0..=4095).collect();
        let frame = DepthFrame::new(64, 64, data.clone(), d_max).unwrap();
        let out = log_depth(&frame).unwrap();
        for (&d, &v) in data.iter().zip(out.data()) {
            let table = (255.0 * (1.0 + d as f64).ln() / (4096f64).ln()).round() as u8;
            assert_eq!(v, table);
        }
    }

    #[test]
    fn depth_frame_rejects_zero_cap_and_overrange() {
        assert!(DepthFrame::new(1, 1, vec![0], 0).is_err());
        assert!(matches!(
            DepthFrame::new(1, 1, vec![10], 5),
            Err(StreamError::DepthOutOfRange { value: 10, d_max: 5 })
        ));
    }

    fn tiny_clip() -> Clip {
        let f = GrayFrame::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        Clip::new(vec![f], 15.0, Modality::Rgb, SensorId::S1, None).unwrap()
    }

    #[test]
    fn clip_round_trip_bit_exact() {
        let clip = tiny_clip();
        let mut buf = Vec::new();
        clip.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IGSC");
        assert_eq!(buf.len(), 20 + 4);
        let back = Clip::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, clip);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn empty_clip_rejected() {
        assert!(matches!(
            Clip::new(vec![], 15.0, Modality::Rgb, SensorId::S1, None),
            Err(StreamError::EmptyClip)
        ));
    }

    #[test]
    fn distinct_container_errors() {
        let mut buf = Vec::new();
        tiny_clip().write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Clip::read_from(bad.as_slice()), Err(StreamError::BadMagic(_))));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            Clip::read_from(bad.as_slice()),
            Err(StreamError::UnsupportedVersion(9))
        ));

        let cut = &buf[..buf.len() - 1];
        assert!(matches!(Clip::read_from(cut), Err(StreamError::Truncated)));

        let mut bad = buf.clone();
        bad[8..10].copy_from_slice(&u16::MAX.to_le_bytes());
        bad[10..12].copy_from_slice(&u16::MAX.to_le_bytes());
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            Clip::read_from(bad.as_slice()),
            Err(StreamError::DimensionOverflow(_))
        ));
    }

    #[test]
    fn annotations_round_trip() {
        let anns = vec![Annotation {
            clip: "c0.igsc".into(),
            label: Some(3),
            subject: "s1".into(),
            task: "legs".into(),
            start_frame: 0,
            end_frame: 19,
        }];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &anns).unwrap();
        assert_eq!(read_annotations(buf.as_slice()).unwrap(), anns);
    }
}
