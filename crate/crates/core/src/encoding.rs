//! Visual-word encodings of trajectory descriptors.
//!
//! Codebooks are learned per descriptor channel with k-means (k-means++
//! seeding, Lloyd iterations). A clip is then encoded either as one raw
//! bag-of-visual-words histogram per channel, compared with the exponential
//! multichannel chi-square kernel, or as power-normalized VLAD vectors that are
//! concatenated across channels.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trajectory::{Trajectory, HOF_DIM, HOG_DIM, MBH_DIM, TRAJ_DIM};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"IGCB";
pub const CODEBOOK_VERSION: u16 = 1;
pub const ENCODED_MAGIC: &[u8; 4] = b"IGEV";
pub const ENCODED_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("need at least K={k} descriptors, got {n}")]
    TooFewDescriptors { n: usize, k: usize },
    #[error("K must be at least 1")]
    ZeroClusters,
    #[error("descriptor dimension must be at least 1")]
    ZeroDimension,
    #[error("descriptor {0} holds a non-finite value")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("histograms differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("channel normalizer for {0:?} must be positive, got {1}")]
    DegenerateNormalizer(Channel, f64),
    #[error("channel {0:?} missing")]
    MissingChannel(Channel),
    #[error("need at least two training samples to estimate channel normalizers")]
    TooFewSamples,
    #[error("bad file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EncodingError>;

/// Descriptor channel, in the canonical concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Traj,
    Hog,
    Hof,
    Mbh,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Traj, Channel::Hog, Channel::Hof, Channel::Mbh];

    pub fn dim(self) -> usize {
        match self {
            Channel::Traj => TRAJ_DIM,
            Channel::Hog => HOG_DIM,
            Channel::Hof => HOF_DIM,
            Channel::Mbh => MBH_DIM,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Channel::ALL
            .get(usize::from(tag))
            .copied()
            .ok_or_else(|| EncodingError::Format(format!("unknown channel tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Traj => "traj",
            Channel::Hog => "hog",
            Channel::Hof => "hof",
            Channel::Mbh => "mbh",
        }
    }

    /// The channel's descriptor of one trajectory.
    pub fn of(self, t: &Trajectory) -> &[f32] {
        match self {
            Channel::Traj => &t.traj,
            Channel::Hog => &t.hog,
            Channel::Hof => &t.hof,
            Channel::Mbh => &t.mbh,
        }
    }
}

/// Row-major matrix of descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f32>,
}

impl Descriptors {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(EncodingError::ZeroDimension);
        }
        if data.len() % dim != 0 {
            return Err(EncodingError::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(EncodingError::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    /// Collects one channel from a set of trajectories.
    pub fn from_trajectories(channel: Channel, trajectories: &[Trajectory]) -> Result<Self> {
        let rows: Vec<&[f32]> = trajectories.iter().map(|t| channel.of(t)).collect();
        Self::from_rows(channel.dim(), &rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn extend(&mut self, other: &Descriptors) -> Result<()> {
        if other.dim != self.dim {
            return Err(EncodingError::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Uniform random subset of at most `max` rows, original order preserved.
    pub fn subsample(&self, max: usize, seed: u64) -> Descriptors {
        let n = self.len();
        if n <= max {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, max).into_vec();
        idx.sort_unstable();
        let mut data = Vec::with_capacity(max * self.dim);
        for i in idx {
            data.extend_from_slice(self.row(i));
        }
        Descriptors { dim: self.dim, data }
    }
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    channel: Channel,
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<f64>,
    pub converged: bool,
}

impl Codebook {
    pub fn from_centroids(channel: Channel, dim: usize, centroids: Vec<f32>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(EncodingError::ZeroDimension);
        }
        if centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(EncodingError::ZeroClusters);
        }
        if let Some(i) = centroids.iter().position(|c| !c.is_finite()) {
            return Err(EncodingError::NonFinite(i / dim));
        }
        Ok(Self {
            channel,
            k: centroids.len() / dim,
            dim,
            centroids,
            seed,
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn check_dim(&self, descriptors: &Descriptors) -> Result<()> {
        if descriptors.dim() != self.dim {
            return Err(EncodingError::DimensionMismatch {
                expected: self.dim,
                actual: descriptors.dim(),
            });
        }
        Ok(())
    }

    /// SHA-256 over the serialized codebook; models reference codebooks by it.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Sha256::digest(&buf).into()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_u16::<LittleEndian>(CODEBOOK_VERSION)?;
        w.write_u8(self.channel.tag())?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        for &c in &self.centroids {
            w.write_f32::<LittleEndian>(c)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(format_eof)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(EncodingError::Format(format!("bad codebook magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>().map_err(format_eof)?;
        if version != CODEBOOK_VERSION {
            return Err(EncodingError::Format(format!("unsupported codebook version {version}")));
        }
        let channel = Channel::from_tag(r.read_u8().map_err(format_eof)?)?;
        let k = r.read_u32::<LittleEndian>().map_err(format_eof)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(format_eof)? as usize;
        let seed = r.read_u64::<LittleEndian>().map_err(format_eof)?;
        let n = k
            .checked_mul(dim)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| EncodingError::Format(format!("codebook {k}x{dim} too large")))?;
        let mut centroids = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut centroids).map_err(format_eof)?;
        Codebook::from_centroids(channel, dim, centroids, seed)
    }
}

fn format_eof(e: io::Error) -> EncodingError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        EncodingError::Format("truncated".into())
    } else {
        EncodingError::Io(e)
    }
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn train_codebook(
    channel: Channel,
    descriptors: &Descriptors,
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<(Codebook, KMeansReport)> {
    let n = descriptors.len();
    let dim = descriptors.dim();
    if k == 0 {
        return Err(EncodingError::ZeroClusters);
    }
    if n < k {
        return Err(EncodingError::TooFewDescriptors { n, k });
    }
    if let Some(i) = descriptors.rows().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(EncodingError::NonFinite(i));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f32> = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(descriptors.row(first));
    let mut closest: Vec<f64> = descriptors.rows().map(|x| sq_dist(x, descriptors.row(first))).collect();
    for _ in 1..k {
        let next = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(&mut rng),
            // All remaining mass is zero: every point coincides with a centroid.
            Err(_) => rng.gen_range(0..n),
        };
        let c = descriptors.row(next).to_vec();
        for (d, x) in closest.iter_mut().zip(descriptors.rows()) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut book = Codebook {
        channel,
        k,
        dim,
        centroids,
        seed,
    };
    let mut assign = vec![0usize; n];
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iter {
        let mut inertia = 0.0;
        for (a, x) in assign.iter_mut().zip(descriptors.rows()) {
            let (i, d) = book.nearest(x);
            *a = i;
            inertia += d;
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (&a, x) in assign.iter().zip(descriptors.rows()) {
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                for j in 0..dim {
                    book.centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        let prev = history.last().copied();
        history.push(inertia);
        if let Some(prev) = prev {
            let rel = if prev > 0.0 { (prev - inertia) / prev } else { 0.0 };
            if rel < params.tol {
                converged = true;
                break;
            }
        } else if inertia == 0.0 {
            converged = true;
            break;
        }
    }
    Ok((
        book,
        KMeansReport {
            inertia: history,
            converged,
        },
    ))
}

/// Sum of squared distances from each descriptor to its nearest centroid.
pub fn inertia(descriptors: &Descriptors, codebook: &Codebook) -> f64 {
    descriptors.rows().map(|x| codebook.nearest(x).1).sum()
}

/// Raw visual-word counts for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BovwHist {
    pub channel: Channel,
    pub counts: Vec<f64>,
}

impl BovwHist {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// L1-normalized view; an empty histogram stays all-zero.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total();
        if total > 0.0 {
            self.counts.iter().map(|c| c / total).collect()
        } else {
            self.counts.clone()
        }
    }
}

/// Hard assignment of each descriptor to its nearest visual word.
pub fn bovw_encode(descriptors: &Descriptors, codebook: &Codebook) -> Result<BovwHist> {
    if !descriptors.is_empty() {
        codebook.check_dim(descriptors)?;
    }
    let mut counts = vec![0f64; codebook.k];
    for x in descriptors.rows() {
        counts[codebook.nearest(x).0] += 1.0;
    }
    Ok(BovwHist {
        channel: codebook.channel,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladVec {
    pub channel: Channel,
    pub values: Vec<f64>,
    /// Set when no descriptors were encoded.
    pub empty: bool,
}

/// Residual sums per visual word, signed square root, then global L2 normalization.
pub fn vlad_encode(descriptors: &Descriptors, codebook: &Codebook) -> Result<VladVec> {
    if !descriptors.is_empty() {
        codebook.check_dim(descriptors)?;
    }
    let dim = codebook.dim;
    let mut values = vec![0f64; codebook.k * dim];
    for x in descriptors.rows() {
        let (c, _) = codebook.nearest(x);
        let centroid = codebook.centroid(c);
        for j in 0..dim {
            values[c * dim + j] += f64::from(x[j]) - f64::from(centroid[j]);
        }
    }
    for v in values.iter_mut() {
        *v = v.signum() * v.abs().sqrt();
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(VladVec {
        channel: codebook.channel,
        values,
        empty: descriptors.is_empty(),
    })
}

/// Concatenates per-channel VLAD vectors in the fixed order Traj, HOG, HOF, MBH.
pub fn combine_vlad(parts: &[VladVec]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for ch in Channel::ALL {
        let part = parts
            .iter()
            .find(|p| p.channel == ch)
            .ok_or(EncodingError::MissingChannel(ch))?;
        out.extend_from_slice(&part.values);
    }
    Ok(out)
}

/// `D = 1/2 * sum (a - b)^2 / (a + b)`, skipping bins where `a + b = 0`.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EncodingError::LengthMismatch(a.len(), b.len()));
    }
    let mut d = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let s = x + y;
        if s != 0.0 {
            d += (x - y) * (x - y) / s;
        }
    }
    Ok(0.5 * d)
}

/// Per-channel L1-normalized histograms of one clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelHists(pub BTreeMap<Channel, Vec<f64>>);

impl ChannelHists {
    pub fn from_bovw(hists: &[BovwHist]) -> Self {
        Self(hists.iter().map(|h| (h.channel, h.normalized())).collect())
    }

    pub fn get(&self, ch: Channel) -> Result<&[f64]> {
        self.0.get(&ch).map(Vec::as_slice).ok_or(EncodingError::MissingChannel(ch))
    }

    /// Keeps only the given channels.
    pub fn restrict(&self, channels: &[Channel]) -> Result<Self> {
        let mut out = BTreeMap::new();
        for &ch in channels {
            out.insert(ch, self.get(ch)?.to_vec());
        }
        Ok(Self(out))
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.0.keys().copied().collect()
    }
}

/// Mean pairwise chi-square distance per channel over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalizers(pub BTreeMap<Channel, f64>);

impl ChannelNormalizers {
    pub fn estimate(samples: &[&ChannelHists], channels: &[Channel]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(EncodingError::TooFewSamples);
        }
        let mut out = BTreeMap::new();
        for &ch in channels {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..samples.len() {
                for j in i + 1..samples.len() {
                    sum += chi2_distance(samples[i].get(ch)?, samples[j].get(ch)?)?;
                    pairs += 1;
                }
            }
            out.insert(ch, sum / pairs as f64);
        }
        Ok(Self(out))
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.0.keys().copied().collect()
    }
}

/// `exp(-sum_c D(a_c, b_c) / A_c)` over the channels of `norms`.
pub fn multichannel_kernel(a: &ChannelHists, b: &ChannelHists, norms: &ChannelNormalizers) -> Result<f64> {
    let mut exponent = 0.0;
    for (&ch, &norm) in &norms.0 {
        if !(norm > 0.0) {
            return Err(EncodingError::DegenerateNormalizer(ch, norm));
        }
        exponent += chi2_distance(a.get(ch)?, b.get(ch)?)? / norm;
    }
    Ok((-exponent).exp())
}

/// Kernel matrix between `rows` and `cols`.
pub fn kernel_matrix(
    rows: &[&ChannelHists],
    cols: &[&ChannelHists],
    norms: &ChannelNormalizers,
) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|a| cols.iter().map(|b| multichannel_kernel(a, b, norms)).collect())
        .collect()
}

/// Symmetric Gram matrix over one sample set; the diagonal is exactly 1.
pub fn gram_matrix(samples: &[&ChannelHists], norms: &ChannelNormalizers) -> Result<Vec<Vec<f64>>> {
    let n = samples.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        g[i][i] = multichannel_kernel(samples[i], samples[i], norms)?;
        for j in i + 1..n {
            let k = multichannel_kernel(samples[i], samples[j], norms)?;
            g[i][j] = k;
            g[j][i] = k;
        }
    }
    Ok(g)
}

/// Raw per-channel counts for a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub clip: String,
    pub label: Option<u32>,
    pub hists: Vec<BovwHist>,
}

/// Writes encoded clips: header with the channel layout, then per clip its
/// name, label and the raw counts of every channel as f32.
pub fn write_encoded<W: Write>(mut w: W, videos: &[EncodedVideo]) -> Result<()> {
    w.write_all(ENCODED_MAGIC)?;
    w.write_u16::<LittleEndian>(ENCODED_VERSION)?;
    w.write_u32::<LittleEndian>(videos.len() as u32)?;
    let layout: Vec<(Channel, usize)> = videos
        .first()
        .map(|v| v.hists.iter().map(|h| (h.channel, h.counts.len())).collect())
        .unwrap_or_default();
    w.write_u8(layout.len() as u8)?;
    for &(ch, k) in &layout {
        w.write_u8(ch.tag())?;
        w.write_u32::<LittleEndian>(k as u32)?;
    }
    for v in videos {
        let name = v.clip.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        w.write_i64::<LittleEndian>(v.label.map_or(-1, i64::from))?;
        if v.hists.len() != layout.len() {
            return Err(EncodingError::Format(format!("clip {} has a different channel layout", v.clip)));
        }
        for (h, &(ch, k)) in v.hists.iter().zip(&layout) {
            if h.channel != ch || h.counts.len() != k {
                return Err(EncodingError::Format(format!("clip {} has a different channel layout", v.clip)));
            }
            for &c in &h.counts {
                w.write_f32::<LittleEndian>(c as f32)?;
            }
        }
    }
    Ok(())
}

pub fn read_encoded<R: Read>(mut r: R) -> Result<Vec<EncodedVideo>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(format_eof)?;
    if &magic != ENCODED_MAGIC {
        return Err(EncodingError::Format(format!("bad encoded-video magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(format_eof)?;
    if version != ENCODED_VERSION {
        return Err(EncodingError::Format(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(format_eof)? as usize;
    let n_channels = r.read_u8().map_err(format_eof)?;
    let mut layout = Vec::new();
    for _ in 0..n_channels {
        let ch = Channel::from_tag(r.read_u8().map_err(format_eof)?)?;
        let k = r.read_u32::<LittleEndian>().map_err(format_eof)? as usize;
        if k > 1 << 24 {
            return Err(EncodingError::Format(format!("K={k} too large")));
        }
        layout.push((ch, k));
    }
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = usize::from(r.read_u16::<LittleEndian>().map_err(format_eof)?);
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(format_eof)?;
        let clip = String::from_utf8(name).map_err(|e| EncodingError::Format(e.to_string()))?;
        let label = r.read_i64::<LittleEndian>().map_err(format_eof)?;
        let label = u32::try_from(label).ok();
        let mut hists = Vec::new();
        for &(channel, k) in &layout {
            let mut raw = vec![0f32; k];
            r.read_f32_into::<LittleEndian>(&mut raw).map_err(format_eof)?;
            hists.push(BovwHist {
                channel,
                counts: raw.into_iter().map(f64::from).collect(),
            });
        }
        out.push(EncodedVideo { clip, label, hists });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(dim: usize, rows: &[&[f32]]) -> Codebook {
        Codebook::from_centroids(Channel::Traj, dim, rows.concat(), 0).unwrap()
    }

    #[test]
    fn k_equals_n_recovers_points() {
        let pts: Vec<[f32; 2]> = vec![[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0], [9.0, 9.0]];
        let d = Descriptors::from_rows(2, &pts).unwrap();
        let (cb, report) = train_codebook(Channel::Traj, &d, 4, 7, &KMeansParams::default()).unwrap();
        let mut got: Vec<Vec<f32>> = (0..4).map(|i| cb.centroid(i).to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = pts.iter().map(|p| p.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(*report.inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0f32, 0.3).unwrap();
        let mut rows = Vec::new();
        for i in 0..200 {
            let (cx, cy) = if i % 2 == 0 { (-4.0, 0.0) } else { (4.0, 2.0) };
            rows.push([cx + normal.sample(&mut rng), cy + normal.sample(&mut rng)]);
        }
        // Closed-form oracle: blob means of the generated points.
        let mean = |parity: usize| {
            let sel: Vec<&[f32; 2]> = rows.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, r)| r).collect();
            let n = sel.len() as f32;
            [sel.iter().map(|r| r[0]).sum::<f32>() / n, sel.iter().map(|r| r[1]).sum::<f32>() / n]
        };
        let (m0, m1) = (mean(0), mean(1));
        let d = Descriptors::from_rows(2, &rows).unwrap();
        let (cb, report) = train_codebook(Channel::Traj, &d, 2, 11, &KMeansParams::default()).unwrap();
        for m in [m0, m1] {
            let (i, _) = cb.nearest(&m);
            let c = cb.centroid(i);
            assert!((c[0] - m[0]).abs() < 0.1 && (c[1] - m[1]).abs() < 0.1);
        }
        for w in report.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn codebook_errors() {
        let d = Descriptors::from_rows(1, &[[1.0f32]]).unwrap();
        assert!(matches!(
            train_codebook(Channel::Traj, &d, 2, 0, &KMeansParams::default()),
            Err(EncodingError::TooFewDescriptors { n: 1, k: 2 })
        ));
        let d = Descriptors::from_rows(1, &[[1.0f32], [f32::NAN]]).unwrap();
        assert!(matches!(
            train_codebook(Channel::Traj, &d, 1, 0, &KMeansParams::default()),
            Err(EncodingError::NonFinite(1))
        ));
    }

    #[test]
    fn bovw_basics() {
        let cb = book(2, &[&[0.0, 0.0], &[10.0, 0.0], &[0.0, 10.0]]);
        let empty = bovw_encode(&Descriptors::empty(2), &cb).unwrap();
        assert_eq!(empty.counts, vec![0.0; 3]);
        let same = Descriptors::from_rows(2, &[[10.0f32, 0.0]; 5]).unwrap();
        assert_eq!(bovw_encode(&same, &cb).unwrap().counts, vec![0.0, 5.0, 0.0]);
        // Equidistant from centroids 1 and 2: the lower index wins.
        let tie = Descriptors::from_rows(2, &[[10.0f32, 10.0]]).unwrap();
        assert_eq!(bovw_encode(&tie, &cb).unwrap().counts, vec![0.0, 1.0, 0.0]);
        let wrong = Descriptors::from_rows(3, &[[1.0f32, 2.0, 3.0]]).unwrap();
        assert!(matches!(bovw_encode(&wrong, &cb), Err(EncodingError::DimensionMismatch { .. })));
    }

    #[test]
    fn bovw_matches_exhaustive_scan() {
        let cb = book(3, &[&[0.0, 1.0, 2.0], &[4.0, -1.0, 0.5], &[-2.0, 3.0, 3.0]]);
        let rows: Vec<[f32; 3]> = (0..10)
            .map(|i| {
                let t = i as f32;
                [(t * 1.7).sin() * 4.0, (t * 0.9).cos() * 3.0, t * 0.4 - 1.0]
            })
            .collect();
        let mut expected = [0.0f64; 3];
        for r in &rows {
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for c in 0..3 {
                let d: f32 = (0..3).map(|j| (r[j] - cb.centroid(c)[j]).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            expected[best] += 1.0;
        }
        let h = bovw_encode(&Descriptors::from_rows(3, &rows).unwrap(), &cb).unwrap();
        assert_eq!(h.counts, expected.to_vec());
        assert_eq!(h.total(), 10.0);
    }

    #[test]
    fn vlad_basics() {
        let cb = book(2, &[&[1.0, 2.0], &[5.0, 5.0]]);
        let on_centroid = Descriptors::from_rows(2, &[[1.0f32, 2.0]]).unwrap();
        let v = vlad_encode(&on_centroid, &cb).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0) && !v.empty);

        let empty = vlad_encode(&Descriptors::empty(2), &cb).unwrap();
        assert!(empty.empty && empty.values.iter().all(|&x| x == 0.0));

        // K = 1: normalized signed sqrt of (x - c).
        let cb1 = book(2, &[&[1.0, 1.0]]);
        let x = Descriptors::from_rows(2, &[[5.0f32, 0.0]]).unwrap();
        let v = vlad_encode(&x, &cb1).unwrap();
        let (a, b) = (2.0f64, -1.0f64);
        let n = (a * a + b * b).sqrt();
        assert!((v.values[0] - a / n).abs() < 1e-12 && (v.values[1] - b / n).abs() < 1e-12);
    }

    #[test]
    fn combine_vlad_fixed_order_and_length() {
        let parts: Vec<VladVec> = [Channel::Mbh, Channel::Traj, Channel::Hof, Channel::Hog]
            .iter()
            .map(|&ch| VladVec {
                channel: ch,
                values: vec![ch.tag() as f64; 16 * ch.dim()],
                empty: false,
            })
            .collect();
        let combined = combine_vlad(&parts).unwrap();
        assert_eq!(combined.len(), 6816);
        assert_eq!(combined[0], 0.0);
        assert_eq!(combined[16 * 30], 1.0);
        assert_eq!(*combined.last().unwrap(), 3.0);
        let mut reversed = parts.clone();
        reversed.reverse();
        assert_eq!(combine_vlad(&reversed).unwrap(), combined);
        assert!(matches!(combine_vlad(&parts[..3]), Err(EncodingError::MissingChannel(_))));
    }

    #[test]
    fn chi2_values() {
        let h = [0.2, 0.3, 0.5];
        assert_eq!(chi2_distance(&h, &h).unwrap(), 0.0);
        assert_eq!(chi2_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(chi2_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(matches!(chi2_distance(&[1.0], &[0.5, 0.5]), Err(EncodingError::LengthMismatch(1, 2))));
    }

    fn hists(pairs: &[(Channel, Vec<f64>)]) -> ChannelHists {
        ChannelHists(pairs.iter().cloned().collect())
    }

    #[test]
    fn kernel_scalar_cases() {
        let a = hists(&[(Channel::Hog, vec![1.0, 0.0]), (Channel::Hof, vec![1.0, 0.0])]);
        let b = hists(&[(Channel::Hog, vec![0.0, 1.0]), (Channel::Hof, vec![0.0, 1.0])]);
        // D = 1 on both channels.
        let one = ChannelNormalizers([(Channel::Hog, 1.0)].into_iter().collect());
        assert_eq!(multichannel_kernel(&a, &a, &one).unwrap(), 1.0);
        assert!((multichannel_kernel(&a, &b, &one).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let halves = ChannelNormalizers([(Channel::Hog, 2.0), (Channel::Hof, 2.0)].into_iter().collect());
        assert!((multichannel_kernel(&a, &b, &halves).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let bad = ChannelNormalizers([(Channel::Hog, 0.0)].into_iter().collect());
        assert!(matches!(
            multichannel_kernel(&a, &b, &bad),
            Err(EncodingError::DegenerateNormalizer(Channel::Hog, _))
        ));
    }

    #[test]
    fn normalizers_are_mean_pairwise_distances() {
        let s = [
            hists(&[(Channel::Traj, vec![1.0, 0.0])]),
            hists(&[(Channel::Traj, vec![0.0, 1.0])]),
            hists(&[(Channel::Traj, vec![1.0, 0.0])]),
        ];
        let refs: Vec<&ChannelHists> = s.iter().collect();
        let n = ChannelNormalizers::estimate(&refs, &[Channel::Traj]).unwrap();
        // Pairs: (0,1)=1, (0,2)=0, (1,2)=1.
        assert!((n.0[&Channel::Traj] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            ChannelNormalizers::estimate(&refs[..1], &[Channel::Traj]),
            Err(EncodingError::TooFewSamples)
        ));
    }

    #[test]
    fn codebook_file_round_trip_and_hash() {
        let cb = Codebook::from_centroids(Channel::Hof, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 9.0], 42).unwrap();
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IGCB");
        let back = Codebook::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.content_hash(), cb.content_hash());
        let other = Codebook::from_centroids(Channel::Hof, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 9.5], 42).unwrap();
        assert_ne!(other.content_hash(), cb.content_hash());
        assert!(Codebook::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn encoded_file_round_trip() {
        let v = EncodedVideo {
            clip: "clip_003".into(),
            label: Some(2),
            hists: vec![
                BovwHist { channel: Channel::Traj, counts: vec![1.0, 0.0, 4.0] },
                BovwHist { channel: Channel::Mbh, counts: vec![0.0, 5.0, 0.0] },
            ],
        };
        let mut u = v.clone();
        u.label = None;
        let mut buf = Vec::new();
        write_encoded(&mut buf, &[v.clone(), u.clone()]).unwrap();
        assert_eq!(read_encoded(buf.as_slice()).unwrap(), vec![v, u]);
    }
}
