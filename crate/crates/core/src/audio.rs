//! Spoken-command recognition over a fixed grammar: an MFCC front-end, DTW
//! template matching, a keyword gate and a global affine speaker transform
//! estimated in feature space.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type CommandId = u32;

pub const N_CEPS: usize = 13;
pub const N_FILTERS: usize = 26;
pub const FEATURE_DIM: usize = 3 * N_CEPS;
pub const FRAME_LEN_MS: f64 = 25.0;
pub const FRAME_SHIFT_MS: f64 = 10.0;
pub const PRE_EMPHASIS: f64 = 0.97;
pub const SUPPORTED_RATES: [u32; 3] = [16_000, 44_100, 48_000];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported sample rate {0} Hz")]
    SampleRate(u32),
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("empty feature sequence")]
    EmptySequence,
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("command {0} has no templates")]
    NoTemplates(CommandId),
    #[error("unknown command {0}")]
    UnknownCommand(CommandId),
    #[error("enrollment covers {0} distinct commands; at least 3 are needed")]
    InsufficientEnrollment(usize),
    #[error("bad WAV file: {0}")]
    Wav(String),
    #[error("bad template manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Per-frame feature vectors of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSeq {
    pub frames: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl MfccSeq {
    pub fn new(frames: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let dim = frames.first().ok_or(AudioError::EmptySequence)?.len();
        if let Some(f) = frames.iter().find(|f| f.len() != dim) {
            return Err(AudioError::DimensionMismatch(dim, f.len()));
        }
        Ok(Self { frames, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn map_frames(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> MfccSeq {
        MfccSeq {
            frames: self.frames.iter().map(|x| f(x)).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn frame_geometry(sample_rate: u32) -> Result<(usize, usize, usize)> {
    if !SUPPORTED_RATES.contains(&sample_rate) {
        return Err(AudioError::SampleRate(sample_rate));
    }
    let len = (sample_rate as f64 * FRAME_LEN_MS / 1000.0).round() as usize;
    let shift = (sample_rate as f64 * FRAME_SHIFT_MS / 1000.0).round() as usize;
    Ok((len, shift, len.next_power_of_two()))
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank between 0 Hz and Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Edge frequencies in Hz; filter `m` spans `edges[m]..edges[m + 2]` and peaks at `edges[m + 1]`.
    pub edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_filters: usize) -> Self {
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        Self { edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, m: usize) -> f64 {
        self.edges[m + 1]
    }

    pub fn weight(&self, m: usize, f: f64) -> f64 {
        let (lo, mid, hi) = (self.edges[m], self.edges[m + 1], self.edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    }
}

/// Log mel filterbank energies, one row per frame, before any cepstral processing.
pub fn filterbank_energies(wave: &[f64], sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let (len, shift, nfft) = frame_geometry(sample_rate)?;
    if wave.len() < len {
        return Err(AudioError::TooShort {
            len: wave.len(),
            frame: len,
        });
    }
    // Frames are centered on multiples of the shift, zero-padded at both ends.
    let n_frames = 1 + wave.len() / shift;
    let half = len / 2;
    let mut emph = vec![0.0; half + wave.len() + len];
    for i in 0..wave.len() {
        emph[half + i] = if i == 0 { wave[0] } else { wave[i] - PRE_EMPHASIS * wave[i - 1] };
    }
    let window: Vec<f64> = (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect();
    let bank = MelFilterbank::new(sample_rate, N_FILTERS);
    let n_bins = nfft / 2 + 1;
    let weights: Vec<Vec<f64>> = (0..N_FILTERS)
        .map(|m| {
            (0..n_bins)
                .map(|k| bank.weight(m, k as f64 * sample_rate as f64 / nfft as f64))
                .collect()
        })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * shift;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < len {
                Complex::new(emph[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        out.push(
            weights
                .iter()
                .map(|w| w.iter().zip(&power).map(|(a, p)| a * p).sum::<f64>().max(1e-10).ln())
                .collect(),
        );
    }
    Ok(out)
}

/// 13 cepstra with first and second regression deltas, cepstral-mean normalized.
pub fn mfcc(wave: &[f64], sample_rate: u32) -> Result<MfccSeq> {
    let logmel = filterbank_energies(wave, sample_rate)?;
    let m = N_FILTERS as f64;
    let mut ceps: Vec<Vec<f64>> = logmel
        .iter()
        .map(|e| {
            (0..N_CEPS)
                .map(|k| {
                    let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    scale
                        * e.iter()
                            .enumerate()
                            .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m).cos())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let n = ceps.len() as f64;
    for k in 0..N_CEPS {
        let mean = ceps.iter().map(|c| c[k]).sum::<f64>() / n;
        for c in &mut ceps {
            c[k] -= mean;
        }
    }
    let d1 = deltas(&ceps);
    let d2 = deltas(&d1);
    let frames = ceps
        .into_iter()
        .zip(d1)
        .zip(d2)
        .map(|((mut c, a), b)| {
            c.extend(a);
            c.extend(b);
            c
        })
        .collect();
    Ok(MfccSeq { frames, sample_rate })
}

/// Regression over +-2 frames with clamped edges.
fn deltas(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as isize;
    let at = |t: isize| &x[t.clamp(0, n - 1) as usize];
    (0..n)
        .map(|t| {
            (0..x[0].len())
                .map(|k| (at(t + 1)[k] - at(t - 1)[k] + 2.0 * (at(t + 2)[k] - at(t - 2)[k])) / 10.0)
                .collect()
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dtw_table(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = euclid(&a[i], &b[j]);
            d[i * m + j] = if i == 0 && j == 0 {
                2.0 * c
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(d[(i - 1) * m + j - 1] + 2.0 * c);
                }
                if i > 0 {
                    best = best.min(d[(i - 1) * m + j] + c);
                }
                if j > 0 {
                    best = best.min(d[i * m + j - 1] + c);
                }
                best
            };
        }
    }
    d
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(AudioError::EmptySequence);
    }
    if a[0].len() != b[0].len() {
        return Err(AudioError::DimensionMismatch(a[0].len(), b[0].len()));
    }
    Ok(())
}

/// Symmetric DTW: horizontal and vertical steps weigh 1, diagonal steps 2, and the
/// total is divided by `n + m`, the weight of every admissible path.
pub fn dtw_distance(a: &MfccSeq, b: &MfccSeq) -> Result<f64> {
    dtw_frames(&a.frames, &b.frames)
}

pub fn dtw_frames(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_pair(a, b)?;
    let d = dtw_table(a, b);
    Ok(d[a.len() * b.len() - 1] / (a.len() + b.len()) as f64)
}

/// Optimal warping path as `(i, j)` frame pairs from `(0, 0)` to the last frames.
pub fn dtw_path(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    check_pair(a, b)?;
    let d = dtw_table(a, b);
    let m = b.len();
    let (mut i, mut j) = (a.len() - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let c = euclid(&a[i], &b[j]);
        let here = d[i * m + j];
        let close = |prev: f64, w: f64| (prev + w * c - here).abs() <= 1e-9 * here.abs().max(1.0);
        if i > 0 && j > 0 && close(d[(i - 1) * m + j - 1], 2.0) {
            i -= 1;
            j -= 1;
        } else if i > 0 && close(d[(i - 1) * m + j], 1.0) {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(path)
}

/// Commands ranked by ascending distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct NBest {
    pub entries: Vec<(CommandId, f64)>,
    /// The two best entries have equal scores.
    pub tie: bool,
}

impl NBest {
    pub fn from_scores(mut scores: Vec<(CommandId, f64)>) -> Self {
        scores.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let tie = scores.len() > 1 && scores[0].1 == scores[1].1;
        Self { entries: scores, tie }
    }

    pub fn top(&self) -> Option<CommandId> {
        self.entries.first().map(|e| e.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub type TemplateSet = BTreeMap<CommandId, Vec<MfccSeq>>;

/// `x -> A x + b` applied to every feature frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTransform {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Least squares was rank deficient and only the bias was fitted.
    pub bias_only: bool,
}

impl SpeakerTransform {
    pub fn identity(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self {
            dim,
            a,
            b: vec![0.0; dim],
            bias_only: false,
        }
    }

    pub fn apply_frame(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| self.b[r] + self.a[r * self.dim..(r + 1) * self.dim].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn apply(&self, seq: &MfccSeq) -> Result<MfccSeq> {
        if seq.dim() != self.dim {
            return Err(AudioError::DimensionMismatch(self.dim, seq.dim()));
        }
        Ok(seq.map_frames(|x| self.apply_frame(x)))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.a)
    }
}

/// Ranks every grammar command by its closest template.
pub fn classify_command(
    utterance: &MfccSeq,
    templates: &TemplateSet,
    grammar: &CommandGrammar,
    transform: Option<&SpeakerTransform>,
) -> Result<NBest> {
    let adapted;
    let utt = match transform {
        Some(t) => {
            adapted = t.apply(utterance)?;
            &adapted
        }
        None => utterance,
    };
    let mut scores = Vec::with_capacity(grammar.commands.len());
    for cmd in &grammar.commands {
        let set = templates
            .get(&cmd.id)
            .filter(|s| !s.is_empty())
            .ok_or(AudioError::NoTemplates(cmd.id))?;
        let mut best = f64::INFINITY;
        for t in set {
            best = best.min(dtw_distance(utt, t)?);
        }
        scores.push((cmd.id, best));
    }
    Ok(NBest::from_scores(scores))
}

/// Empty n-best unless the keyword detector fired (inclusive threshold).
pub fn keyword_gate(nbest: NBest, keyword_score: f64, threshold: f64) -> NBest {
    if keyword_score >= threshold {
        nbest
    } else {
        NBest::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptParams {
    pub max_iter: usize,
    /// Relative singular-value floor below which the system counts as rank deficient.
    pub rank_tol: f64,
    pub max_condition: f64,
}

impl Default for AdaptParams {
    fn default() -> Self {
        Self {
            max_iter: 8,
            rank_tol: 1e-9,
            max_condition: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adaptation {
    pub transform: SpeakerTransform,
    /// Sum of squared residuals on the final alignment.
    pub objective: f64,
    /// The same sum under the identity transform.
    pub identity_objective: f64,
    pub iterations: usize,
}

/// Fits one global affine transform taking enrollment frames onto their
/// DTW-aligned template frames, re-aligning with the current estimate until the
/// alignment stops changing.
pub fn adapt_speaker(
    templates: &TemplateSet,
    enrollment: &[(CommandId, MfccSeq)],
    params: &AdaptParams,
) -> Result<Adaptation> {
    let distinct: std::collections::BTreeSet<_> = enrollment.iter().map(|e| e.0).collect();
    if distinct.len() < 3 {
        return Err(AudioError::InsufficientEnrollment(distinct.len()));
    }
    let dim = enrollment[0].1.dim();
    let mut transform = SpeakerTransform::identity(dim);
    let mut last_pairs: Option<Vec<(usize, usize, usize, usize)>> = None;
    let mut iterations = 0;
    loop {
        // (enrollment utterance, enrollment frame, template index, template frame)
        let mut pairs = Vec::new();
        for (u, (cmd, seq)) in enrollment.iter().enumerate() {
            let set = templates.get(cmd).filter(|s| !s.is_empty()).ok_or(AudioError::NoTemplates(*cmd))?;
            let moved = transform.apply(seq)?;
            let mut best = (f64::INFINITY, 0);
            for (k, t) in set.iter().enumerate() {
                let d = dtw_distance(&moved, t)?;
                if d < best.0 {
                    best = (d, k);
                }
            }
            for (i, j) in dtw_path(&moved.frames, &set[best.1].frames)? {
                pairs.push((u, i, best.1, j));
            }
        }
        let same = last_pairs.as_ref() == Some(&pairs);
        if !same {
            let xs: Vec<&[f64]> = pairs.iter().map(|p| enrollment[p.0].1.frames[p.1].as_slice()).collect();
            let ys: Vec<&[f64]> = pairs
                .iter()
                .map(|p| templates[&enrollment[p.0].0][p.2].frames[p.3].as_slice())
                .collect();
            transform = fit_affine(&xs, &ys, params);
            iterations += 1;
        }
        if same || iterations >= params.max_iter {
            let xs: Vec<&[f64]> = pairs.iter().map(|p| enrollment[p.0].1.frames[p.1].as_slice()).collect();
            let ys: Vec<&[f64]> = pairs
                .iter()
                .map(|p| templates[&enrollment[p.0].0][p.2].frames[p.3].as_slice())
                .collect();
            let identity = SpeakerTransform::identity(dim);
            return Ok(Adaptation {
                objective: ls_objective(&transform, &xs, &ys),
                identity_objective: ls_objective(&identity, &xs, &ys),
                transform,
                iterations,
            });
        }
        last_pairs = Some(pairs);
    }
}

pub fn ls_objective(t: &SpeakerTransform, xs: &[&[f64]], ys: &[&[f64]]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| t.apply_frame(x).iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum()
}

fn fit_affine(xs: &[&[f64]], ys: &[&[f64]], params: &AdaptParams) -> SpeakerTransform {
    let dim = xs[0].len();
    let n = xs.len();
    let x = DMatrix::from_fn(n, dim + 1, |r, c| if c < dim { xs[r][c] } else { 1.0 });
    let y = DMatrix::from_fn(n, dim, |r, c| ys[r][c]);
    let bias_only = || {
        let mut t = SpeakerTransform::identity(dim);
        for k in 0..dim {
            t.b[k] = xs.iter().zip(ys).map(|(x, y)| y[k] - x[k]).sum::<f64>() / n as f64;
        }
        t.bias_only = true;
        t
    };
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if n <= dim || !(smax > 0.0) || smin / smax < params.rank_tol {
        return bias_only();
    }
    let w = match svd.solve(&y, smax * 1e-15) {
        Ok(w) => w,
        Err(_) => return bias_only(),
    };
    // w is (dim + 1) x dim: y = [x 1] w, so A = w[..dim]^T and b = last row.
    let mut t = SpeakerTransform::identity(dim);
    for r in 0..dim {
        for c in 0..dim {
            t.a[r * dim + c] = w[(c, r)];
        }
        t.b[r] = w[(dim, r)];
    }
    let sv = t.matrix().singular_values();
    let (amax, amin) = (sv.max(), sv.min());
    if !(amin > 0.0) || amax / amin > params.max_condition || t.a.iter().chain(&t.b).any(|v| !v.is_finite()) {
        return bias_only();
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    It,
    De,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarEntry {
    pub id: CommandId,
    pub name: String,
    pub forms: BTreeMap<Language, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandGrammar {
    pub commands: Vec<GrammarEntry>,
    pub keyword: String,
}

pub const WASH_LEGS: CommandId = 1;
pub const WASH_BACK: CommandId = 2;
pub const SCRUB_BACK: CommandId = 3;
pub const STOP: CommandId = 4;
pub const REPEAT: CommandId = 5;
pub const HALT: CommandId = 6;

impl CommandGrammar {
    pub fn new(commands: Vec<GrammarEntry>, keyword: &str) -> Result<Self> {
        if commands.is_empty() {
            return Err(AudioError::Manifest("empty vocabulary".into()));
        }
        let mut ids: Vec<_> = commands.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(AudioError::Manifest("duplicate command id".into()));
        }
        Ok(Self {
            commands,
            keyword: keyword.to_string(),
        })
    }

    /// The six commands of the two bathing scenarios.
    pub fn online() -> Self {
        let rows: [(CommandId, &str, &str, &str); 6] = [
            (WASH_LEGS, "Wash legs", "Lava le gambe", "Wasch meine Beine"),
            (WASH_BACK, "Wash back", "Lava la schiena", "Wasch meinen Rücken"),
            (SCRUB_BACK, "Scrub back", "Strofina la schiena", "Trockne meinen Rücken"),
            (STOP, "Stop", "Basta", "Stop"),
            (REPEAT, "Repeat", "Ripeti", "Noch einmal"),
            (HALT, "Halt", "Fermati subito", "Wir sind fertig"),
        ];
        let commands = rows
            .iter()
            .map(|&(id, en, it, de)| GrammarEntry {
                id,
                name: en.to_string(),
                forms: [(Language::En, en), (Language::It, it), (Language::De, de)]
                    .into_iter()
                    .map(|(l, s)| (l, s.to_string()))
                    .collect(),
            })
            .collect();
        Self {
            commands,
            keyword: "Roberta".into(),
        }
    }

    /// 23-command development grammar: core bathing actions, settings, and
    /// spontaneous commands.
    pub fn development() -> Self {
        let rows: [(&str, &str); 23] = [
            ("Wash legs", "Wasch meine Beine"),
            ("Wash back", "Wasch meinen Rücken"),
            ("Scrub back", "Trockne meinen Rücken"),
            ("Stop", "Stop"),
            ("Repeat", "Noch einmal"),
            ("Halt", "Wir sind fertig"),
            ("Scrub legs", "Schrubb meine Beine"),
            ("Wipe back", "Wisch meinen Rücken"),
            ("Wipe legs", "Wisch meine Beine"),
            ("Rinse back", "Spül meinen Rücken"),
            ("Rinse legs", "Spül meine Beine"),
            ("Warmer", "Wärmer"),
            ("Colder", "Kälter"),
            ("More water", "Mehr Wasser"),
            ("Less water", "Weniger Wasser"),
            ("Faster", "Schneller"),
            ("Slower", "Langsamer"),
            ("Higher", "Höher"),
            ("Lower", "Tiefer"),
            ("Help", "Hilfe"),
            ("Start", "Anfangen"),
            ("Yes", "Ja"),
            ("No", "Nein"),
        ];
        let commands = rows
            .iter()
            .enumerate()
            .map(|(i, &(en, de))| GrammarEntry {
                id: i as CommandId + 1,
                name: en.to_string(),
                forms: [(Language::En, en.to_string()), (Language::De, de.to_string())].into_iter().collect(),
            })
            .collect();
        Self {
            commands,
            keyword: "Roberta".into(),
        }
    }

    pub fn ids(&self) -> Vec<CommandId> {
        self.commands.iter().map(|c| c.id).collect()
    }

    pub fn get(&self, id: CommandId) -> Option<&GrammarEntry> {
        self.commands.iter().find(|c| c.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&GrammarEntry> {
        let key = name.replace(['_', '-', ' '], "").to_lowercase();
        self.commands
            .iter()
            .find(|c| c.name.replace(' ', "").to_lowercase() == key)
    }
}

/// Mono 16-bit PCM, samples scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::new(BufReader::new(File::open(path)?)).map_err(|e| AudioError::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::Wav(format!(
            "{}: need mono 16-bit PCM, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| AudioError::Wav(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| AudioError::Wav(e.to_string()))?;
    for &s in samples {
        w.write_sample(quantize(s)).map_err(|e| AudioError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| AudioError::Wav(e.to_string()))
}

/// The 16-bit value a sample is stored as.
pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub command_id: CommandId,
    pub language: Language,
    pub speaker: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

pub fn write_manifest(path: &Path, entries: &[TemplateEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries).map_err(|e| AudioError::Manifest(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<TemplateEntry>> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| AudioError::Manifest(e.to_string()))
}

/// Loads every template listed in a manifest and computes its features.
pub fn load_templates(manifest: &Path) -> Result<TemplateSet> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut set = TemplateSet::new();
    for e in read_manifest(manifest)? {
        let (wave, sr) = read_wav(&base.join(&e.path))?;
        set.entry(e.command_id).or_default().push(mfcc(&wave, sr)?);
    }
    Ok(set)
}
