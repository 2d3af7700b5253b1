//! Dense trajectories: grid sampling, flow-driven tracking, pruning and the
//! Trajectory / HOG / HOF / MBH descriptors computed in a tube around each track.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use thiserror::Error;

use crate::flow::{dense_flow_with, FlowError, FlowField, FlowParams};
use crate::image::Image;
use crate::stream::{Clip, GrayFrame};

pub const TRAJ_DIM: usize = 30;
pub const HOG_DIM: usize = 96;
pub const HOF_DIM: usize = 108;
pub const MBH_DIM: usize = 192;

const ORIENT_BINS: usize = 8;

pub const FEATURE_MAGIC: &[u8; 4] = b"IGTF";
pub const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("trajectory has zero total displacement")]
    ZeroDisplacement,
    #[error("expected {expected} points, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("tube around ({x:.1}, {y:.1}) leaves the {width}x{height} frame")]
    TubeOutOfBounds {
        x: f32,
        y: f32,
        width: usize,
        height: usize,
    },
    #[error("bad feature dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackParams {
    /// Number of tracking steps L; a trajectory holds L+1 points.
    pub traj_len: usize,
    /// Grid spacing for dense sampling, pixels.
    pub step: usize,
    /// Relative structure-score threshold for sampling.
    pub quality: f32,
    /// Trajectories whose point positions have a standard deviation below this are static.
    pub min_std: f32,
    /// Single steps longer than this fraction of the path length are erratic.
    pub max_step_ratio: f32,
    /// Side of the square descriptor neighborhood, pixels.
    pub patch: usize,
    pub cells_xy: usize,
    pub cells_t: usize,
    /// Flow magnitudes below this fall into the HOF zero-motion bin.
    pub zero_flow: f32,
    pub flow: FlowParams,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            traj_len: 15,
            step: 5,
            quality: 0.001,
            min_std: 3f32.sqrt(),
            max_step_ratio: 0.7,
            patch: 32,
            cells_xy: 2,
            cells_t: 3,
            zero_flow: 0.4,
            flow: FlowParams::default(),
        }
    }
}

impl TrackParams {
    pub fn hog_dim(&self) -> usize {
        self.cells() * ORIENT_BINS
    }

    pub fn hof_dim(&self) -> usize {
        self.cells() * (ORIENT_BINS + 1)
    }

    pub fn mbh_dim(&self) -> usize {
        2 * self.cells() * ORIENT_BINS
    }

    pub fn traj_dim(&self) -> usize {
        2 * self.traj_len
    }

    fn cells(&self) -> usize {
        self.cells_xy * self.cells_xy * self.cells_t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_frame: u32,
    pub points: Vec<(f32, f32)>,
    pub traj: Vec<f32>,
    pub hog: Vec<f32>,
    pub hof: Vec<f32>,
    pub mbh: Vec<f32>,
}

impl Trajectory {
    pub fn total_displacement(&self) -> (f32, f32) {
        let first = self.points[0];
        let last = *self.points.last().unwrap();
        (last.0 - first.0, last.1 - first.1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackOutput {
    pub trajectories: Vec<Trajectory>,
    /// Set when the clip was too short to hold a single trajectory.
    pub too_short: bool,
}

/// Structure score per pixel: minimum eigenvalue of the gradient covariance
/// summed over the 3x3 neighborhood.
pub fn structure_scores(frame: &GrayFrame) -> Vec<f32> {
    let img = Image::from_gray(frame);
    let (gx, gy) = img.gradients();
    let a = gx.mul(&gx).box_sum(1);
    let b = gx.mul(&gy).box_sum(1);
    let c = gy.mul(&gy).box_sum(1);
    (0..a.data.len())
        .map(|i| min_eigen(a.data[i], b.data[i], c.data[i]))
        .collect()
}

pub(crate) fn min_eigen(a: f32, b: f32, c: f32) -> f32 {
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (half_trace - disc).max(0.0)
}

/// Grid nodes at `i * step + step / 2` that are textured enough and lie in a
/// grid cell not already holding a point from `occupied`.
pub fn sample_points(
    frame: &GrayFrame,
    step: usize,
    occupied: &[(f32, f32)],
    quality: f32,
) -> Vec<(f32, f32)> {
    let step = step.max(1);
    let (w, h) = (frame.width(), frame.height());
    let (cols, rows) = (w / step, h / step);
    if cols == 0 || rows == 0 {
        return Vec::new();
    }
    let mut taken = vec![false; cols * rows];
    for &(x, y) in occupied {
        if x < 0.0 || y < 0.0 {
            continue;
        }
        let (cx, cy) = ((x as usize) / step, (y as usize) / step);
        if cx < cols && cy < rows {
            taken[cy * cols + cx] = true;
        }
    }
    let scores = structure_scores(frame);
    let max_score = scores.iter().copied().fold(0.0f32, f32::max);
    if max_score <= 0.0 {
        return Vec::new();
    }
    let threshold = quality * max_score;
    let mut out = Vec::new();
    for cy in 0..rows {
        for cx in 0..cols {
            if taken[cy * cols + cx] {
                continue;
            }
            let (x, y) = (cx * step + step / 2, cy * step + step / 2);
            let s = scores[y * w + x];
            if s > 0.0 && s >= threshold {
                out.push((x as f32, y as f32));
            }
        }
    }
    out
}

/// Standard deviation of the point positions (both axes pooled) is below `min_std`.
pub fn is_static(points: &[(f32, f32)], min_std: f32) -> bool {
    let n = points.len() as f32;
    let mx = points.iter().map(|p| p.0).sum::<f32>() / n;
    let my = points.iter().map(|p| p.1).sum::<f32>() / n;
    let var = points
        .iter()
        .map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2))
        .sum::<f32>()
        / n;
    var.sqrt() < min_std
}

/// Some single step is longer than `ratio` times the path length.
pub fn is_erratic(points: &[(f32, f32)], ratio: f32) -> bool {
    let steps: Vec<f32> = points
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .collect();
    let total: f32 = steps.iter().sum();
    steps.iter().any(|&s| s > ratio * total)
}

/// Displacements normalized by the summed displacement magnitude.
pub fn descriptor_traj(points: &[(f32, f32)]) -> Result<Vec<f32>> {
    if points.len() < 2 {
        return Err(TrajectoryError::WrongLength {
            expected: 2,
            actual: points.len(),
        });
    }
    let deltas: Vec<(f32, f32)> = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
        .collect();
    let norm: f32 = deltas.iter().map(|d| (d.0 * d.0 + d.1 * d.1).sqrt()).sum();
    if norm <= 0.0 {
        return Err(TrajectoryError::ZeroDisplacement);
    }
    Ok(deltas.iter().flat_map(|d| [d.0 / norm, d.1 / norm]).collect())
}

/// Geometry of the space-time tube used by the histogram descriptors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeGeometry {
    pub patch: usize,
    pub cells_xy: usize,
    pub cells_t: usize,
}

impl From<&TrackParams> for TubeGeometry {
    fn from(p: &TrackParams) -> Self {
        Self {
            patch: p.patch,
            cells_xy: p.cells_xy,
            cells_t: p.cells_t,
        }
    }
}

impl TubeGeometry {
    fn origin(&self, center: (f32, f32), w: usize, h: usize) -> Result<(usize, usize)> {
        let half = (self.patch / 2) as isize;
        let x0 = center.0.round() as isize - half;
        let y0 = center.1.round() as isize - half;
        if x0 < 0 || y0 < 0 || x0 as usize + self.patch > w || y0 as usize + self.patch > h {
            return Err(TrajectoryError::TubeOutOfBounds {
                x: center.0,
                y: center.1,
                width: w,
                height: h,
            });
        }
        Ok((x0 as usize, y0 as usize))
    }

    fn fits(&self, center: (f32, f32), w: usize, h: usize) -> bool {
        self.origin(center, w, h).is_ok()
    }
}

/// One (dx, dy) vector field per frame of the tube.
struct Field<'a> {
    dx: &'a Image,
    dy: &'a Image,
}

/// Per-pixel orientation votes of a vector field: lower bin, its weight and the
/// upper-bin weight. `ZERO_BIN` marks a zero-motion vote when a threshold applies.
struct Binned {
    w: usize,
    h: usize,
    bin: Vec<u8>,
    lo: Vec<f32>,
    hi: Vec<f32>,
}

const ZERO_BIN: u8 = u8::MAX;
const NO_VOTE: u8 = u8::MAX - 1;

impl Binned {
    fn new(field: &Field<'_>, zero_bin: Option<f32>) -> Self {
        let (w, h) = (field.dx.w, field.dx.h);
        let n = w * h;
        let (mut bin, mut lo, mut hi) = (vec![NO_VOTE; n], vec![0f32; n], vec![0f32; n]);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let dx = field.dx.at(x, y);
                let dy = field.dy.at(x, y);
                let mag = (dx * dx + dy * dy).sqrt();
                if let Some(thr) = zero_bin {
                    if mag < thr {
                        bin[i] = ZERO_BIN;
                        continue;
                    }
                }
                if mag == 0.0 {
                    continue;
                }
                let angle = dy.atan2(dx).rem_euclid(std::f32::consts::TAU);
                let pos = angle / std::f32::consts::TAU * ORIENT_BINS as f32;
                let frac = pos - pos.floor();
                bin[i] = ((pos.floor() as usize) % ORIENT_BINS) as u8;
                lo[i] = mag * (1.0 - frac);
                hi[i] = mag * frac;
            }
        }
        Self { w, h, bin, lo, hi }
    }
}

/// Raw orientation histogram over a tube, cells laid out `[t][y][x][bin]`.
/// With a zero bin, short vectors vote 1 into an extra bin.
fn accumulate(fields: &[&Binned], centers: &[(f32, f32)], geom: &TubeGeometry, zero_bin: bool) -> Result<Vec<f32>> {
    let bins = ORIENT_BINS + usize::from(zero_bin);
    let n_cells = geom.cells_xy * geom.cells_xy * geom.cells_t;
    let mut hist = vec![0f32; n_cells * bins];
    let cell_px = geom.patch / geom.cells_xy;
    let len = fields.len();
    for (t, (field, &center)) in fields.iter().zip(centers).enumerate() {
        let (x0, y0) = geom.origin(center, field.w, field.h)?;
        let ct = (t * geom.cells_t / len).min(geom.cells_t - 1);
        for py in 0..geom.patch {
            let cy = (py / cell_px).min(geom.cells_xy - 1);
            let row = (y0 + py) * field.w + x0;
            for px in 0..geom.patch {
                let cx = (px / cell_px).min(geom.cells_xy - 1);
                let base = ((ct * geom.cells_xy + cy) * geom.cells_xy + cx) * bins;
                let i = row + px;
                match field.bin[i] {
                    NO_VOTE => {}
                    ZERO_BIN => hist[base + ORIENT_BINS] += 1.0,
                    b => {
                        let b = b as usize;
                        hist[base + b] += field.lo[i];
                        hist[base + (b + 1) % ORIENT_BINS] += field.hi[i];
                    }
                }
            }
        }
    }
    Ok(hist)
}

fn binned(fields: &[(Image, Image)], zero_bin: Option<f32>) -> Vec<Binned> {
    fields.iter().map(|(dx, dy)| Binned::new(&Field { dx, dy }, zero_bin)).collect()
}

fn normalized(mut v: Vec<f32>) -> Result<Vec<f32>> {
    l2_normalize(&mut v);
    Ok(v)
}

fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn check_tube(len_a: usize, len_b: usize) -> Result<()> {
    if len_a != len_b || len_a == 0 {
        return Err(TrajectoryError::WrongLength {
            expected: len_a,
            actual: len_b,
        });
    }
    Ok(())
}

/// HOG over the tube: image-gradient orientations, 8 bins per cell.
pub fn descriptor_hog(
    frames: &[GrayFrame],
    centers: &[(f32, f32)],
    geom: &TubeGeometry,
) -> Result<Vec<f32>> {
    check_tube(frames.len(), centers.len())?;
    let grads: Vec<(Image, Image)> = frames.iter().map(|f| Image::from_gray(f).gradients()).collect();
    let b = binned(&grads, None);
    normalized(accumulate(&b.iter().collect::<Vec<_>>(), centers, geom, false)?)
}

/// HOF over the tube: flow orientations, 8 bins plus a zero-motion bin per cell.
pub fn descriptor_hof(
    flows: &[FlowField],
    centers: &[(f32, f32)],
    geom: &TubeGeometry,
    zero_flow: f32,
) -> Result<Vec<f32>> {
    check_tube(flows.len(), centers.len())?;
    let comps: Vec<(Image, Image)> = flows.iter().map(FlowField::images).collect();
    let b = binned(&comps, Some(zero_flow));
    normalized(accumulate(&b.iter().collect::<Vec<_>>(), centers, geom, true)?)
}

/// MBH over the tube: orientations of the gradients of u, then of v.
pub fn descriptor_mbh(
    flows: &[FlowField],
    centers: &[(f32, f32)],
    geom: &TubeGeometry,
) -> Result<Vec<f32>> {
    check_tube(flows.len(), centers.len())?;
    let grads: Vec<FlowGradients> = flows.iter().map(FlowGradients::new).collect();
    mbh_from_gradients(&grads.iter().collect::<Vec<_>>(), centers, geom)
}

/// Binned gradients of the flow components u and v.
struct FlowGradients {
    u: Binned,
    v: Binned,
}

impl FlowGradients {
    fn new(flow: &FlowField) -> Self {
        let (u, v) = flow.images();
        let (ux, uy) = u.gradients();
        let (vx, vy) = v.gradients();
        Self {
            u: Binned::new(&Field { dx: &ux, dy: &uy }, None),
            v: Binned::new(&Field { dx: &vx, dy: &vy }, None),
        }
    }
}

fn mbh_from_gradients(grads: &[&FlowGradients], centers: &[(f32, f32)], geom: &TubeGeometry) -> Result<Vec<f32>> {
    let fu: Vec<&Binned> = grads.iter().map(|g| &g.u).collect();
    let fv: Vec<&Binned> = grads.iter().map(|g| &g.v).collect();
    let mut out = accumulate(&fu, centers, geom, false)?;
    out.extend(accumulate(&fv, centers, geom, false)?);
    l2_normalize(&mut out);
    Ok(out)
}

struct Live {
    start: usize,
    points: Vec<(f32, f32)>,
}

/// Tracks densely sampled points through the clip for exactly `traj_len` steps
/// and emits the surviving trajectories, sorted by start frame, then x, then y.
pub fn track(clip: &Clip, params: &TrackParams) -> Result<TrackOutput> {
    let frames = clip.frames();
    let l = params.traj_len;
    if frames.len() < l + 1 {
        warn!("clip has {} frames, need at least {}", frames.len(), l + 1);
        return Ok(TrackOutput {
            trajectories: Vec::new(),
            too_short: true,
        });
    }
    let (w, h) = (clip.width(), clip.height());
    let geom = TubeGeometry::from(params);
    let n = frames.len();

    let mut flows = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        flows.push(dense_flow_with(&frames[t], &frames[t + 1], &params.flow)?.median_filtered());
    }
    let image_grads: Vec<(Image, Image)> = frames[..n - 1]
        .iter()
        .map(|f| Image::from_gray(f).gradients())
        .collect();
    let hog_bins = binned(&image_grads, None);
    let flow_images: Vec<(Image, Image)> = flows.iter().map(FlowField::images).collect();
    let hof_bins = binned(&flow_images, Some(params.zero_flow));
    let flow_grads: Vec<FlowGradients> = flows.iter().map(FlowGradients::new).collect();

    let mut live: Vec<Live> = Vec::new();
    let mut done = Vec::new();
    for t in 0..n - 1 {
        if t + l <= n - 1 {
            let occupied: Vec<(f32, f32)> = live.iter().map(|tr| *tr.points.last().unwrap()).collect();
            for p in sample_points(&frames[t], params.step, &occupied, params.quality) {
                if geom.fits(p, w, h) {
                    live.push(Live {
                        start: t,
                        points: vec![p],
                    });
                }
            }
        }
        let flow = &flows[t];
        let mut next_live = Vec::with_capacity(live.len());
        for mut tr in live {
            let (x, y) = *tr.points.last().unwrap();
            let xi = (x.round() as usize).min(w - 1);
            let yi = (y.round() as usize).min(h - 1);
            let (u, v) = flow.at(xi, yi);
            let p = (x + u, y + v);
            if p.0 < 0.0 || p.1 < 0.0 || p.0 > (w - 1) as f32 || p.1 > (h - 1) as f32 {
                continue;
            }
            tr.points.push(p);
            if tr.points.len() == l + 1 {
                done.push(tr);
            } else {
                next_live.push(tr);
            }
        }
        live = next_live;
    }

    let mut trajectories = Vec::new();
    for tr in done {
        if is_static(&tr.points, params.min_std) || is_erratic(&tr.points, params.max_step_ratio) {
            continue;
        }
        let centers = &tr.points[..l];
        if !centers.iter().all(|&c| geom.fits(c, w, h)) {
            continue;
        }
        let span = tr.start..tr.start + l;
        let hog_fields: Vec<&Binned> = hog_bins[span.clone()].iter().collect();
        let hof_fields: Vec<&Binned> = hof_bins[span.clone()].iter().collect();
        let grads: Vec<&FlowGradients> = flow_grads[span].iter().collect();
        trajectories.push(Trajectory {
            start_frame: tr.start as u32,
            traj: descriptor_traj(&tr.points)?,
            hog: normalized(accumulate(&hog_fields, centers, &geom, false)?)?,
            hof: normalized(accumulate(&hof_fields, centers, &geom, true)?)?,
            mbh: mbh_from_gradients(&grads, centers, &geom)?,
            points: tr.points,
        });
    }
    trajectories.sort_by(|a, b| {
        a.start_frame
            .cmp(&b.start_frame)
            .then(a.points[0].0.total_cmp(&b.points[0].0))
            .then(a.points[0].1.total_cmp(&b.points[0].1))
    });
    Ok(TrackOutput {
        trajectories,
        too_short: false,
    })
}

/// Writes the binary feature dump: header, then per trajectory the start
/// frame, `L+1` point pairs and the 426-float descriptor payload.
pub fn write_features<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u16::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(trajectories.len() as u32)?;
    for t in trajectories {
        w.write_u32::<LittleEndian>(t.start_frame)?;
        for &(x, y) in &t.points {
            w.write_f32::<LittleEndian>(x)?;
            w.write_f32::<LittleEndian>(y)?;
        }
        for &v in t.traj.iter().chain(&t.hog).chain(&t.hof).chain(&t.mbh) {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

/// Reads a feature dump written with trajectory length `traj_len` and the default cell layout.
pub fn read_features<R: Read>(mut r: R, traj_len: usize) -> Result<Vec<Trajectory>> {
    let eof = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            TrajectoryError::Format("truncated".into())
        } else {
            TrajectoryError::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != FEATURE_MAGIC {
        return Err(TrajectoryError::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof)?;
    if version != FEATURE_VERSION {
        return Err(TrajectoryError::Format(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let traj_dim = 2 * traj_len;
    let read_vec = |r: &mut R, n: usize| -> Result<Vec<f32>> {
        let mut v = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut v).map_err(eof)?;
        Ok(v)
    };
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let start_frame = r.read_u32::<LittleEndian>().map_err(eof)?;
        let flat = read_vec(&mut r, 2 * (traj_len + 1))?;
        let points = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        out.push(Trajectory {
            start_frame,
            points,
            traj: read_vec(&mut r, traj_dim)?,
            hog: read_vec(&mut r, HOG_DIM)?,
            hof: read_vec(&mut r, HOF_DIM)?,
            mbh: read_vec(&mut r, MBH_DIM)?,
        });
    }
    Ok(out)
}
