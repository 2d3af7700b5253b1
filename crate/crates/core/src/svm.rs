//! One-against-all support vector machines.
//!
//! Kernel machines are trained on a precomputed Gram matrix with an SMO solver
//! (maximal-violating-pair selection with second-order gain); linear machines
//! use dual coordinate descent on the hinge loss. Multiclass prediction takes the
//! class with the highest raw decision value.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encoding::{
    kernel_matrix, Channel, ChannelHists, ChannelNormalizers, EncodingError,
};

pub const MODEL_MAGIC: &[u8; 4] = b"IGSV";
pub const MODEL_VERSION: u16 = 1;

pub type ClassId = u32;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("need at least two classes, got {0}")]
    SingleClass(usize),
    #[error("gram matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("gram matrix must be square with one row per label")]
    BadShape,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("regularization C must be positive")]
    BadC,
    #[error("codebook hash mismatch for channel {0:?}")]
    CodebookMismatch(Channel),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SvmError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    /// Iteration cap, in passes over the training set.
    pub max_passes: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            c: 100.0,
            tol: 1e-3,
            max_passes: 10_000,
        }
    }
}

/// One binary machine of the one-against-all ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryKernelModel {
    pub class: ClassId,
    /// Training indices with nonzero dual coefficient.
    pub support: Vec<usize>,
    /// `alpha_i * y_i` for each support index.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinaryKernelModel {
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&i, &c)| c * kernel_row[i])
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvmModel {
    pub n_train: usize,
    pub c: f64,
    pub machines: Vec<BinaryKernelModel>,
}

impl KernelSvmModel {
    pub fn classes(&self) -> Vec<ClassId> {
        self.machines.iter().map(|m| m.class).collect()
    }

    /// Decision values given the kernel between the probe and every training sample.
    pub fn decision_values(&self, kernel_row: &[f64]) -> Result<Vec<(ClassId, f64)>> {
        if kernel_row.len() != self.n_train {
            return Err(SvmError::DimensionMismatch {
                expected: self.n_train,
                actual: kernel_row.len(),
            });
        }
        Ok(self.machines.iter().map(|m| (m.class, m.decision(kernel_row))).collect())
    }

    pub fn predict(&self, kernel_row: &[f64]) -> Result<Prediction> {
        Ok(predict_ova(&self.decision_values(kernel_row)?))
    }
}

fn check_problem(labels: &[ClassId], c: f64) -> Result<Vec<ClassId>> {
    if !(c > 0.0) {
        return Err(SvmError::BadC);
    }
    let mut classes: Vec<ClassId> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClass(classes.len()));
    }
    Ok(classes)
}

/// Trains one binary soft-margin machine per class on a precomputed Gram matrix.
pub fn train_kernel_svm(gram: &[Vec<f64>], labels: &[ClassId], params: &SmoParams) -> Result<KernelSvmModel> {
    let n = labels.len();
    if gram.len() != n || gram.iter().any(|r| r.len() != n) {
        return Err(SvmError::BadShape);
    }
    for i in 0..n {
        for j in i + 1..n {
            if (gram[i][j] - gram[j][i]).abs() > 1e-6 {
                return Err(SvmError::NotSymmetric(i, j));
            }
        }
    }
    let classes = check_problem(labels, params.c)?;
    let machines = classes
        .par_iter()
        .map(|&class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let (alpha, bias) = smo(gram, &y, params);
            let (support, coef) = alpha
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(i, &a)| (i, a * y[i]))
                .unzip();
            BinaryKernelModel {
                class,
                support,
                coef,
                bias,
            }
        })
        .collect();
    Ok(KernelSvmModel {
        n_train: n,
        c: params.c,
        machines,
    })
}

/// Solves `min 1/2 a'Qa - e'a` s.t. `y'a = 0`, `0 <= a <= C`. Returns `(alpha, bias)`.
fn smo(gram: &[Vec<f64>], y: &[f64], params: &SmoParams) -> (Vec<f64>, f64) {
    let n = y.len();
    let c = params.c;
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = params.max_passes.saturating_mul(n.max(1));
    const TAU: f64 = 1e-12;

    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    for _ in 0..max_iter {
        // Maximal violating pair with second-order selection of j.
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                if -y[t] * grad[t] > gmax || i == usize::MAX {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_gain = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let a = (q(i, i) + q(t, t) - 2.0 * y[i] * y[t] * q(i, t)).max(TAU);
                let gain = -(b * b) / a;
                if gain < best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        if gmax - gmin < params.tol || j == usize::MAX {
            break;
        }

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = (gram[i][i] + gram[j][j] - 2.0 * gram[i][j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // rho from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    (alpha, -rho)
}

/// Largest KKT violation of one machine on its training data.
pub fn kkt_violation(gram: &[Vec<f64>], labels: &[ClassId], machine: &BinaryKernelModel, c: f64) -> f64 {
    let mut alpha = vec![0.0; labels.len()];
    for (&i, &coef) in machine.support.iter().zip(&machine.coef) {
        alpha[i] = coef.abs();
    }
    let mut worst: f64 = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let y = if l == machine.class { 1.0 } else { -1.0 };
        let margin = y * machine.decision(&gram[i]);
        let v = if alpha[i] <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if alpha[i] >= c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcdParams {
    pub c: f64,
    /// Stop once `(primal - dual) / |primal|` falls below this.
    pub gap_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for DcdParams {
    fn default() -> Self {
        Self {
            c: 100.0,
            gap_tol: 1e-3,
            max_epochs: 2_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMachine {
    pub class: ClassId,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    pub dim: usize,
    pub machines: Vec<LinearMachine>,
    /// Set when every training feature was zero; prediction then returns `majority`.
    pub degenerate: bool,
    pub majority: ClassId,
}

impl LinearSvmModel {
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<(ClassId, f64)>> {
        if x.len() != self.dim {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(self
            .machines
            .iter()
            .map(|m| (m.class, dot(&m.weights, x) + m.bias))
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let scores = self.decision_values(x)?;
        if self.degenerate {
            return Ok(Prediction {
                class: self.majority,
                scores,
                tie: false,
                degenerate: true,
            });
        }
        Ok(predict_ova(&scores))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hinge-loss linear machines, one per class, by dual coordinate descent.
/// The bias is learned as the weight of a constant unit feature.
pub fn train_linear_svm(x: &[Vec<f64>], labels: &[ClassId], params: &DcdParams) -> Result<LinearSvmModel> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(SvmError::BadShape);
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(SvmError::DimensionMismatch {
            expected: dim,
            actual: r.len(),
        });
    }
    let classes = check_problem(labels, params.c)?;
    let majority = classes
        .iter()
        .copied()
        .max_by_key(|&c| (labels.iter().filter(|&&l| l == c).count(), std::cmp::Reverse(c)))
        .expect("at least two classes");
    let degenerate = x.iter().all(|r| r.iter().all(|&v| v == 0.0));
    let machines = classes
        .par_iter()
        .map(|&class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let (weights, bias) = dcd(x, &y, params);
            LinearMachine { class, weights, bias }
        })
        .collect();
    Ok(LinearSvmModel {
        dim,
        machines,
        degenerate,
        majority,
    })
}

fn dcd(x: &[Vec<f64>], y: &[f64], params: &DcdParams) -> (Vec<f64>, f64) {
    let n = x.len();
    let dim = x[0].len();
    let c = params.c;
    let qii: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = y[i] * (dot(&w, &x[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let d = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += d * xj;
                }
                b += d;
            }
        }
        let norm2 = dot(&w, &w) + b * b;
        let hinge: f64 = x
            .iter()
            .zip(y)
            .map(|(r, &yi)| (1.0 - yi * (dot(&w, r) + b)).max(0.0))
            .sum();
        let primal = 0.5 * norm2 + c * hinge;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        if primal <= 0.0 || (primal - dual) / primal.abs() < params.gap_tol {
            break;
        }
    }
    (w, b)
}

/// Multiclass decision: highest score wins, ties go to the lowest class id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: ClassId,
    /// Raw decision value per class, in class-id order.
    pub scores: Vec<(ClassId, f64)>,
    pub tie: bool,
    pub degenerate: bool,
}

impl Prediction {
    /// Classes by descending score, ties by ascending class id.
    pub fn ranked(&self) -> Vec<(ClassId, f64)> {
        let mut r = self.scores.clone();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }

    pub fn top(&self, n: usize) -> Vec<(ClassId, f64)> {
        self.ranked().into_iter().take(n).collect()
    }
}

pub fn predict_ova(scores: &[(ClassId, f64)]) -> Prediction {
    let mut sorted = scores.to_vec();
    sorted.sort_by_key(|s| s.0);
    let best = sorted
        .iter()
        .copied()
        .reduce(|best, s| if s.1 > best.1 { s } else { best })
        .unwrap_or((0, f64::NAN));
    let tie = sorted.iter().filter(|s| s.1 == best.1).count() > 1;
    Prediction {
        class: best.0,
        scores: sorted,
        tie,
        degenerate: false,
    }
}

/// Kernel machine over multichannel chi-square BoVW histograms, carrying its
/// training histograms, channel normalizers and the codebooks it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareSvm {
    pub svm: KernelSvmModel,
    pub training: Vec<ChannelHists>,
    pub norms: ChannelNormalizers,
    pub codebooks: Vec<(Channel, [u8; 32])>,
}

impl ChiSquareSvm {
    pub fn train(
        training: Vec<ChannelHists>,
        labels: &[ClassId],
        channels: &[Channel],
        codebooks: Vec<(Channel, [u8; 32])>,
        params: &SmoParams,
    ) -> Result<Self> {
        let training: Vec<ChannelHists> = training
            .iter()
            .map(|h| h.restrict(channels))
            .collect::<std::result::Result<_, _>>()?;
        let refs: Vec<&ChannelHists> = training.iter().collect();
        let norms = ChannelNormalizers::estimate(&refs, channels)?;
        let gram = crate::encoding::gram_matrix(&refs, &norms)?;
        let svm = train_kernel_svm(&gram, labels, params)?;
        Ok(Self {
            svm,
            training,
            norms,
            codebooks,
        })
    }

    pub fn predict(&self, sample: &ChannelHists) -> Result<Prediction> {
        let refs: Vec<&ChannelHists> = self.training.iter().collect();
        let row = kernel_matrix(&[sample], &refs, &self.norms)?.remove(0);
        self.svm.predict(&row)
    }

    /// Fails unless every codebook this model was trained with matches `hashes`.
    pub fn check_codebooks(&self, hashes: &[(Channel, [u8; 32])]) -> Result<()> {
        check_hashes(&self.codebooks, hashes)
    }
}

fn check_hashes(expected: &[(Channel, [u8; 32])], hashes: &[(Channel, [u8; 32])]) -> Result<()> {
    for (ch, h) in expected {
        match hashes.iter().find(|(c, _)| c == ch) {
            Some((_, other)) if other == h => {}
            _ => return Err(SvmError::CodebookMismatch(*ch)),
        }
    }
    Ok(())
}

/// Contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum SvmModelFile {
    Kernel(ChiSquareSvm),
    Linear {
        model: LinearSvmModel,
        codebooks: Vec<(Channel, [u8; 32])>,
    },
}

impl SvmModelFile {
    pub fn codebooks(&self) -> &[(Channel, [u8; 32])] {
        match self {
            SvmModelFile::Kernel(m) => &m.codebooks,
            SvmModelFile::Linear { codebooks, .. } => codebooks,
        }
    }

    pub fn check_codebooks(&self, hashes: &[(Channel, [u8; 32])]) -> Result<()> {
        check_hashes(self.codebooks(), hashes)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u16::<LittleEndian>(MODEL_VERSION)?;
        let (kind, classes) = match self {
            SvmModelFile::Kernel(m) => (0u8, m.svm.machines.len()),
            SvmModelFile::Linear { model, .. } => (1u8, model.machines.len()),
        };
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(classes as u32)?;
        w.write_u8(self.codebooks().len() as u8)?;
        for (ch, h) in self.codebooks() {
            w.write_u8(ch.tag())?;
            w.write_all(h)?;
        }
        match self {
            SvmModelFile::Kernel(m) => {
                w.write_f64::<LittleEndian>(m.svm.c)?;
                w.write_u8(m.norms.0.len() as u8)?;
                let layout: Vec<(Channel, usize)> = m
                    .norms
                    .0
                    .keys()
                    .map(|&ch| (ch, m.training.first().map_or(0, |t| t.0.get(&ch).map_or(0, Vec::len))))
                    .collect();
                for (&ch, &a) in &m.norms.0 {
                    w.write_u8(ch.tag())?;
                    w.write_f64::<LittleEndian>(a)?;
                }
                for &(_, k) in &layout {
                    w.write_u32::<LittleEndian>(k as u32)?;
                }
                w.write_u32::<LittleEndian>(m.training.len() as u32)?;
                for t in &m.training {
                    for &(ch, _) in &layout {
                        for &v in t.get(ch)? {
                            w.write_f64::<LittleEndian>(v)?;
                        }
                    }
                }
                for machine in &m.svm.machines {
                    w.write_u32::<LittleEndian>(machine.class)?;
                    w.write_f64::<LittleEndian>(machine.bias)?;
                    w.write_u32::<LittleEndian>(machine.support.len() as u32)?;
                    for (&i, &c) in machine.support.iter().zip(&machine.coef) {
                        w.write_u32::<LittleEndian>(i as u32)?;
                        w.write_f64::<LittleEndian>(c)?;
                    }
                }
            }
            SvmModelFile::Linear { model, .. } => {
                w.write_u32::<LittleEndian>(model.dim as u32)?;
                w.write_u8(u8::from(model.degenerate))?;
                w.write_u32::<LittleEndian>(model.majority)?;
                for machine in &model.machines {
                    w.write_u32::<LittleEndian>(machine.class)?;
                    w.write_f64::<LittleEndian>(machine.bias)?;
                    for &v in &machine.weights {
                        w.write_f64::<LittleEndian>(v)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let e = |e: io::Error| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                SvmError::Format("truncated".into())
            } else {
                SvmError::Io(e)
            }
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(e)?;
        if &magic != MODEL_MAGIC {
            return Err(SvmError::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>().map_err(e)?;
        if version != MODEL_VERSION {
            return Err(SvmError::Format(format!("unsupported version {version}")));
        }
        let kind = r.read_u8().map_err(e)?;
        let n_classes = r.read_u32::<LittleEndian>().map_err(e)? as usize;
        if n_classes > 1 << 16 {
            return Err(SvmError::Format(format!("{n_classes} classes")));
        }
        let n_books = r.read_u8().map_err(e)?;
        let mut codebooks = Vec::new();
        for _ in 0..n_books {
            let ch = Channel::from_tag(r.read_u8().map_err(e)?)?;
            let mut h = [0u8; 32];
            r.read_exact(&mut h).map_err(e)?;
            codebooks.push((ch, h));
        }
        let limit = |n: usize| {
            if n > 1 << 26 {
                Err(SvmError::Format(format!("length {n} too large")))
            } else {
                Ok(n)
            }
        };
        match kind {
            0 => {
                let c = r.read_f64::<LittleEndian>().map_err(e)?;
                let n_ch = r.read_u8().map_err(e)?;
                let mut norms = std::collections::BTreeMap::new();
                let mut order = Vec::new();
                for _ in 0..n_ch {
                    let ch = Channel::from_tag(r.read_u8().map_err(e)?)?;
                    norms.insert(ch, r.read_f64::<LittleEndian>().map_err(e)?);
                    order.push(ch);
                }
                let mut layout = Vec::new();
                for &ch in &order {
                    layout.push((ch, limit(r.read_u32::<LittleEndian>().map_err(e)? as usize)?));
                }
                let n_train = limit(r.read_u32::<LittleEndian>().map_err(e)? as usize)?;
                let mut training = Vec::with_capacity(n_train);
                for _ in 0..n_train {
                    let mut map = std::collections::BTreeMap::new();
                    for &(ch, k) in &layout {
                        let mut v = vec![0f64; k];
                        r.read_f64_into::<LittleEndian>(&mut v).map_err(e)?;
                        map.insert(ch, v);
                    }
                    training.push(ChannelHists(map));
                }
                let mut machines = Vec::with_capacity(n_classes);
                for _ in 0..n_classes {
                    let class = r.read_u32::<LittleEndian>().map_err(e)?;
                    let bias = r.read_f64::<LittleEndian>().map_err(e)?;
                    let nsv = limit(r.read_u32::<LittleEndian>().map_err(e)? as usize)?;
                    let mut support = Vec::with_capacity(nsv);
                    let mut coef = Vec::with_capacity(nsv);
                    for _ in 0..nsv {
                        let i = r.read_u32::<LittleEndian>().map_err(e)? as usize;
                        if i >= n_train {
                            return Err(SvmError::Format(format!("support index {i} out of range")));
                        }
                        support.push(i);
                        coef.push(r.read_f64::<LittleEndian>().map_err(e)?);
                    }
                    machines.push(BinaryKernelModel {
                        class,
                        support,
                        coef,
                        bias,
                    });
                }
                Ok(SvmModelFile::Kernel(ChiSquareSvm {
                    svm: KernelSvmModel {
                        n_train,
                        c,
                        machines,
                    },
                    training,
                    norms: ChannelNormalizers(norms),
                    codebooks,
                }))
            }
            1 => {
                let dim = limit(r.read_u32::<LittleEndian>().map_err(e)? as usize)?;
                let degenerate = r.read_u8().map_err(e)? != 0;
                let majority = r.read_u32::<LittleEndian>().map_err(e)?;
                let mut machines = Vec::with_capacity(n_classes);
                for _ in 0..n_classes {
                    let class = r.read_u32::<LittleEndian>().map_err(e)?;
                    let bias = r.read_f64::<LittleEndian>().map_err(e)?;
                    let mut weights = vec![0f64; dim];
                    r.read_f64_into::<LittleEndian>(&mut weights).map_err(e)?;
                    machines.push(LinearMachine { class, weights, bias });
                }
                Ok(SvmModelFile::Linear {
                    model: LinearSvmModel {
                        dim,
                        machines,
                        degenerate,
                        majority,
                    },
                    codebooks,
                })
            }
            k => Err(SvmError::Format(format!("unknown model kind {k}"))),
        }
    }
}
