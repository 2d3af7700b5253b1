//! Gesture recognition pipeline: dense trajectories, per-channel codebooks,
//! BoVW histograms and the multichannel chi-square SVM.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{
    self, bovw_encode, combine_vlad, train_codebook, vlad_encode, BovwHist, Channel, ChannelHists, Codebook, Descriptors,
    KMeansParams,
};
use crate::session::GestureRecognizer;
use crate::stream::Clip;
use crate::svm::{ChiSquareSvm, ClassId, Prediction, SmoParams, SvmError};
use crate::trajectory::{self, track, TrackParams, Trajectory};

#[derive(Debug, Error)]
pub enum GestureError {
    #[error(transparent)]
    Trajectory(#[from] trajectory::TrajectoryError),
    #[error(transparent)]
    Encoding(#[from] encoding::EncodingError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("missing codebook for channel {0:?}")]
    MissingCodebook(Channel),
}

pub type Result<T> = std::result::Result<T, GestureError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookParams {
    pub k: usize,
    /// Descriptors sampled per channel before clustering.
    pub max_descriptors: usize,
    pub seed: u64,
    pub kmeans: KMeansParams,
}

impl Default for CodebookParams {
    fn default() -> Self {
        Self {
            k: 32,
            max_descriptors: 2000,
            seed: 11,
            kmeans: KMeansParams::default(),
        }
    }
}

/// Trajectory features for each clip, computed in parallel; output order follows input.
pub fn extract_all(clips: &[&Clip], params: &TrackParams) -> Result<Vec<Vec<Trajectory>>> {
    clips
        .par_iter()
        .map(|c| Ok(track(c, params)?.trajectories))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet(pub BTreeMap<Channel, Codebook>);

impl CodebookSet {
    pub fn train(features: &[&[Trajectory]], channels: &[Channel], params: &CodebookParams) -> Result<Self> {
        let books = channels
            .par_iter()
            .map(|&ch| {
                let mut all = Descriptors::empty(ch.dim());
                for f in features {
                    all.extend(&Descriptors::from_trajectories(ch, f)?)?;
                }
                let sample = all.subsample(params.max_descriptors, params.seed ^ u64::from(ch.tag()));
                let (book, _) = train_codebook(ch, &sample, params.k, params.seed, &params.kmeans)?;
                Ok((ch, book))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self(books))
    }

    /// One `<channel>.igcb` file per codebook.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(encoding::EncodingError::Io)?;
        for (ch, book) in &self.0 {
            let f = File::create(dir.join(format!("{}.igcb", ch.name()))).map_err(encoding::EncodingError::Io)?;
            book.write_to(BufWriter::new(f))?;
        }
        Ok(())
    }

    /// Loads whichever channel codebooks exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut books = BTreeMap::new();
        for ch in Channel::ALL {
            let path = dir.join(format!("{}.igcb", ch.name()));
            if path.exists() {
                let f = File::open(&path).map_err(encoding::EncodingError::Io)?;
                books.insert(ch, Codebook::read_from(BufReader::new(f))?);
            }
        }
        if books.is_empty() {
            return Err(GestureError::MissingCodebook(Channel::Traj));
        }
        Ok(Self(books))
    }

    pub fn hashes(&self) -> Vec<(Channel, [u8; 32])> {
        self.0.iter().map(|(c, b)| (*c, b.content_hash())).collect()
    }

    /// L1-normalized BoVW histogram per channel.
    pub fn encode(&self, trajectories: &[Trajectory]) -> Result<ChannelHists> {
        let mut hists = BTreeMap::new();
        for (ch, book) in &self.0 {
            let d = Descriptors::from_trajectories(*ch, trajectories)?;
            hists.insert(*ch, bovw_encode(&d, book)?.normalized());
        }
        Ok(ChannelHists(hists))
    }

    /// Raw BoVW counts per channel.
    pub fn encode_counts(&self, trajectories: &[Trajectory]) -> Result<Vec<BovwHist>> {
        self.0
            .iter()
            .map(|(ch, book)| Ok(bovw_encode(&Descriptors::from_trajectories(*ch, trajectories)?, book)?))
            .collect()
    }

    /// Concatenated VLAD vector; needs all four channels.
    pub fn encode_vlad(&self, trajectories: &[Trajectory]) -> Result<Vec<f64>> {
        let parts = self
            .0
            .iter()
            .map(|(ch, book)| vlad_encode(&Descriptors::from_trajectories(*ch, trajectories)?, book))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(combine_vlad(&parts)?)
    }
}

/// End-to-end clip classifier.
#[derive(Debug, Clone)]
pub struct GestureClassifier {
    pub track: TrackParams,
    pub codebooks: CodebookSet,
    pub svm: ChiSquareSvm,
}

impl GestureClassifier {
    pub fn train(
        track_params: TrackParams,
        codebooks: CodebookSet,
        features: &[&[Trajectory]],
        labels: &[ClassId],
        channels: &[Channel],
        smo: &SmoParams,
    ) -> Result<Self> {
        for ch in channels {
            if !codebooks.0.contains_key(ch) {
                return Err(GestureError::MissingCodebook(*ch));
            }
        }
        let hists = features.iter().map(|f| codebooks.encode(f)).collect::<Result<Vec<_>>>()?;
        let hashes = codebooks.hashes().into_iter().filter(|(c, _)| channels.contains(c)).collect();
        let svm = ChiSquareSvm::train(hists, labels, channels, hashes, smo)?;
        Ok(Self {
            track: track_params,
            codebooks,
            svm,
        })
    }

    pub fn classify_features(&self, trajectories: &[Trajectory]) -> Result<Prediction> {
        Ok(self.svm.predict(&self.codebooks.encode(trajectories)?)?)
    }

    pub fn classify(&self, clip: &Clip) -> Result<Prediction> {
        self.classify_features(&track(clip, &self.track)?.trajectories)
    }
}

impl GestureRecognizer for GestureClassifier {
    fn rank(&self, clip: &Clip) -> std::result::Result<Vec<(u32, f64)>, String> {
        self.classify(clip).map(|p| p.ranked()).map_err(|e| e.to_string())
    }
}
