//! Pipeline configuration: a plain-text `key = value` file.
//!
//! Lines starting with `#` are comments. Unknown keys, duplicate keys and
//! out-of-range values are rejected. Every key has a default; see
//! [`PipelineConfig::default_file`] for the annotated listing.

use std::path::Path;

use thiserror::Error;

use crate::encoding::KMeansParams;
use crate::gesture::CodebookParams;
use crate::session::{DetectorParams, SessionConfig};
use crate::svm::{DcdParams, SmoParams};
use crate::trajectory::TrackParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error("`{key}` = {value} out of range: {range}")]
    Range { key: String, value: String, range: &'static str },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub traj_len: usize,
    pub step: usize,
    pub flow_levels: usize,
    pub codebook_k: usize,
    pub codebook_samples: usize,
    pub kmeans_max_iter: usize,
    pub svm_c: f64,
    pub smo_tol: f64,
    pub theta_on: f64,
    pub theta_off: f64,
    pub tau_noise: f32,
    pub min_dur_s: f64,
    pub max_gap_s: f64,
    pub fusion_window_s: f64,
    pub keyword_threshold: f64,
    pub fusion_fallback: bool,
    pub seed: u64,
    pub fps: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            traj_len: 15,
            step: 5,
            flow_levels: 3,
            codebook_k: 32,
            codebook_samples: 2000,
            kmeans_max_iter: 100,
            svm_c: 100.0,
            smo_tol: 1e-3,
            theta_on: 0.02,
            theta_off: 0.01,
            tau_noise: 12.0,
            min_dur_s: 0.4,
            max_gap_s: 0.5,
            fusion_window_s: 1.0,
            keyword_threshold: 0.5,
            fusion_fallback: true,
            seed: 2016,
            fps: 15.0,
        }
    }
}

// key, range description, annotation
const KEYS: &[(&str, &str, &str)] = &[
    ("traj_len", "2..=64", "trajectory length L in frames"),
    ("step", "1..=64", "dense sampling step, pixels"),
    ("flow_levels", "1..=6", "optical flow pyramid levels (assumed default)"),
    ("codebook_k", "1..=100000", "visual words per channel (assumed default)"),
    ("codebook_samples", ">= codebook_k", "descriptors sampled per channel for k-means (assumed default)"),
    ("kmeans_max_iter", "1..=10000", "Lloyd iterations cap (assumed default)"),
    ("svm_c", "> 0", "SVM cost (assumed default)"),
    ("smo_tol", "> 0", "SMO KKT tolerance (assumed default)"),
    ("theta_on", "[0, 1], >= theta_off", "activity onset threshold (assumed default)"),
    ("theta_off", "[0, 1]", "activity release threshold (assumed default)"),
    ("tau_noise", "0..=255", "per-pixel change threshold, intensity levels (assumed default)"),
    ("min_dur_s", ">= 0", "shortest gesture segment, seconds (assumed default)"),
    ("max_gap_s", "> 0", "quiet time closing a segment, seconds (assumed default)"),
    ("fusion_window_s", ">= 0", "gesture-to-speech pairing window, seconds (assumed default)"),
    ("keyword_threshold", "[0, 1]", "keyword detector confidence needed to accept an utterance (assumed default)"),
    ("fusion_fallback", "true|false", "speech-priority fallback on disagreement (assumed default)"),
    ("seed", "u64", "master seed (assumed default)"),
    ("fps", "> 0", "video frame rate"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| ConfigError::Parse {
        key: key.into(),
        value: value.into(),
    })
}

fn check(ok: bool, key: &str, value: &str) -> Result<()> {
    if ok {
        return Ok(());
    }
    let range = KEYS.iter().find(|k| k.0 == key).map_or("", |k| k.1);
    Err(ConfigError::Range {
        key: key.into(),
        value: value.into(),
        range,
    })
}

impl PipelineConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|k| k.0 == key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "traj_len" => self.traj_len = parse(key, v)?,
            "step" => self.step = parse(key, v)?,
            "flow_levels" => self.flow_levels = parse(key, v)?,
            "codebook_k" => self.codebook_k = parse(key, v)?,
            "codebook_samples" => self.codebook_samples = parse(key, v)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse(key, v)?,
            "svm_c" => self.svm_c = parse(key, v)?,
            "smo_tol" => self.smo_tol = parse(key, v)?,
            "theta_on" => self.theta_on = parse(key, v)?,
            "theta_off" => self.theta_off = parse(key, v)?,
            "tau_noise" => self.tau_noise = parse(key, v)?,
            "min_dur_s" => self.min_dur_s = parse(key, v)?,
            "max_gap_s" => self.max_gap_s = parse(key, v)?,
            "fusion_window_s" => self.fusion_window_s = parse(key, v)?,
            "keyword_threshold" => self.keyword_threshold = parse(key, v)?,
            "fusion_fallback" => self.fusion_fallback = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "fps" => self.fps = parse(key, v)?,
            _ => unreachable!("key list checked"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = |x: &dyn std::fmt::Display| x.to_string();
        check((2..=64).contains(&self.traj_len), "traj_len", &s(&self.traj_len))?;
        check((1..=64).contains(&self.step), "step", &s(&self.step))?;
        check((1..=6).contains(&self.flow_levels), "flow_levels", &s(&self.flow_levels))?;
        check((1..=100_000).contains(&self.codebook_k), "codebook_k", &s(&self.codebook_k))?;
        check(self.codebook_samples >= self.codebook_k, "codebook_samples", &s(&self.codebook_samples))?;
        check((1..=10_000).contains(&self.kmeans_max_iter), "kmeans_max_iter", &s(&self.kmeans_max_iter))?;
        check(self.svm_c > 0.0 && self.svm_c.is_finite(), "svm_c", &s(&self.svm_c))?;
        check(self.smo_tol > 0.0 && self.smo_tol.is_finite(), "smo_tol", &s(&self.smo_tol))?;
        check((0.0..=1.0).contains(&self.theta_on), "theta_on", &s(&self.theta_on))?;
        check((0.0..=1.0).contains(&self.theta_off), "theta_off", &s(&self.theta_off))?;
        check((0.0..=255.0).contains(&self.tau_noise), "tau_noise", &s(&self.tau_noise))?;
        check(self.min_dur_s >= 0.0 && self.min_dur_s.is_finite(), "min_dur_s", &s(&self.min_dur_s))?;
        check(self.max_gap_s > 0.0 && self.max_gap_s.is_finite(), "max_gap_s", &s(&self.max_gap_s))?;
        check(
            self.fusion_window_s >= 0.0 && self.fusion_window_s.is_finite(),
            "fusion_window_s",
            &s(&self.fusion_window_s),
        )?;
        check((0.0..=1.0).contains(&self.keyword_threshold), "keyword_threshold", &s(&self.keyword_threshold))?;
        check(self.fps > 0.0 && self.fps.is_finite(), "fps", &s(&self.fps))?;
        if self.theta_on < self.theta_off {
            return Err(ConfigError::Invalid(format!(
                "theta_on ({}) must be >= theta_off ({})",
                self.theta_on, self.theta_off
            )));
        }
        Ok(())
    }

    /// Every key with its current value and annotation, parseable by [`Self::parse_str`].
    pub fn to_file(&self) -> String {
        let mut out = String::new();
        for (key, range, note) in KEYS {
            let value = match *key {
                "traj_len" => self.traj_len.to_string(),
                "step" => self.step.to_string(),
                "flow_levels" => self.flow_levels.to_string(),
                "codebook_k" => self.codebook_k.to_string(),
                "codebook_samples" => self.codebook_samples.to_string(),
                "kmeans_max_iter" => self.kmeans_max_iter.to_string(),
                "svm_c" => self.svm_c.to_string(),
                "smo_tol" => self.smo_tol.to_string(),
                "theta_on" => self.theta_on.to_string(),
                "theta_off" => self.theta_off.to_string(),
                "tau_noise" => self.tau_noise.to_string(),
                "min_dur_s" => self.min_dur_s.to_string(),
                "max_gap_s" => self.max_gap_s.to_string(),
                "fusion_window_s" => self.fusion_window_s.to_string(),
                "keyword_threshold" => self.keyword_threshold.to_string(),
                "fusion_fallback" => self.fusion_fallback.to_string(),
                "seed" => self.seed.to_string(),
                "fps" => self.fps.to_string(),
                _ => unreachable!(),
            };
            out.push_str(&format!("# {note}; range {range}\n{key} = {value}\n"));
        }
        out
    }

    pub fn default_file() -> String {
        Self::default().to_file()
    }

    pub fn track_params(&self) -> TrackParams {
        let mut p = TrackParams {
            traj_len: self.traj_len,
            step: self.step,
            ..TrackParams::default()
        };
        p.flow.levels = self.flow_levels;
        p
    }

    pub fn codebook_params(&self) -> CodebookParams {
        CodebookParams {
            k: self.codebook_k,
            max_descriptors: self.codebook_samples,
            seed: self.seed,
            kmeans: KMeansParams {
                max_iter: self.kmeans_max_iter,
                ..KMeansParams::default()
            },
        }
    }

    pub fn smo_params(&self) -> SmoParams {
        SmoParams {
            c: self.svm_c,
            tol: self.smo_tol,
            ..SmoParams::default()
        }
    }

    pub fn dcd_params(&self) -> DcdParams {
        DcdParams {
            c: self.svm_c,
            seed: self.seed,
            ..DcdParams::default()
        }
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let detector = DetectorParams::from_seconds(self.theta_on, self.theta_off, self.min_dur_s, self.max_gap_s, self.fps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(SessionConfig {
            detector,
            tau_noise: self.tau_noise,
            fusion_window: (self.fusion_window_s * self.fps).round() as usize,
            keyword_threshold: self.keyword_threshold,
            fallback: self.fusion_fallback,
            min_gesture_frames: self.traj_len + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_file_round_trips() {
        let text = PipelineConfig::default_file();
        assert_eq!(PipelineConfig::parse_str(&text).unwrap(), PipelineConfig::default());
        assert!(text.contains("assumed default"));
    }

    #[test]
    fn overrides_and_comments() {
        let c = PipelineConfig::parse_str("# hi\ncodebook_k = 8 # small\nfusion_fallback=false\n\n").unwrap();
        assert_eq!(c.codebook_k, 8);
        assert!(!c.fusion_fallback);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(PipelineConfig::parse_str("bogus = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse_str("step = 2\nstep = 3"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(PipelineConfig::parse_str("step"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(PipelineConfig::parse_str("svm_c = abc"), Err(ConfigError::Parse { .. })));
        assert!(matches!(PipelineConfig::parse_str("svm_c = -1"), Err(ConfigError::Range { .. })));
        assert!(matches!(
            PipelineConfig::parse_str("theta_on = 0.01\ntheta_off = 0.02"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
