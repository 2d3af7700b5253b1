//! Synthetic corpora with known ground truth: gesture clips (a textured limb
//! moving over a textured background, rendered as RGB and depth) and spoken
//! commands built from formant trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::audio::{self, CommandGrammar, CommandId};
use crate::session::{AudioEvent, ScriptStep, StepModality};
use crate::stream::{self, Clip, DepthFrame, GrayFrame, Modality, SensorId, StreamError};
use crate::testutil::{splitmix, texture_value};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("clip needs at least {min} frames, got {got}")]
    TooFewFrames { min: usize, got: usize },
    #[error("invalid gesture spec: {0}")]
    BadSpec(String),
    #[error("command {0} is not in the vocabulary")]
    UnknownCommand(CommandId),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum MotionPattern {
    SwipeUp,
    SwipeDown,
    SwipeLeft,
    SwipeRight,
    CircleCW,
    ScrubOscillate,
    Background,
}

impl MotionPattern {
    pub const ALL: [MotionPattern; 7] = [
        MotionPattern::SwipeUp,
        MotionPattern::SwipeDown,
        MotionPattern::SwipeLeft,
        MotionPattern::SwipeRight,
        MotionPattern::CircleCW,
        MotionPattern::ScrubOscillate,
        MotionPattern::Background,
    ];

    /// Gesture class ids coincide with the online command ids; Background is 0.
    pub fn class_id(self) -> u32 {
        match self {
            MotionPattern::SwipeDown => audio::WASH_LEGS,
            MotionPattern::SwipeUp => audio::WASH_BACK,
            MotionPattern::ScrubOscillate => audio::SCRUB_BACK,
            MotionPattern::SwipeLeft => audio::STOP,
            MotionPattern::CircleCW => audio::REPEAT,
            MotionPattern::SwipeRight => audio::HALT,
            MotionPattern::Background => BACKGROUND_CLASS,
        }
    }

    pub fn from_class_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.class_id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionPattern::SwipeUp => "swipe-up",
            MotionPattern::SwipeDown => "swipe-down",
            MotionPattern::SwipeLeft => "swipe-left",
            MotionPattern::SwipeRight => "swipe-right",
            MotionPattern::CircleCW => "circle-cw",
            MotionPattern::ScrubOscillate => "scrub",
            MotionPattern::Background => "background",
        }
    }

    fn direction(self) -> Option<(f32, f32)> {
        match self {
            MotionPattern::SwipeUp => Some((0.0, -1.0)),
            MotionPattern::SwipeDown => Some((0.0, 1.0)),
            MotionPattern::SwipeLeft => Some((-1.0, 0.0)),
            MotionPattern::SwipeRight => Some((1.0, 0.0)),
            _ => None,
        }
    }
}

pub const BACKGROUND_CLASS: u32 = 0;
pub const DEPTH_MAX_MM: u16 = 4000;
const LIMB_DEPTH_MM: f32 = 700.0;
const BACKGROUND_DEPTH_MM: f32 = 1600.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GestureSpec {
    pub class_id: u32,
    pub pattern: MotionPattern,
    /// Swipe length, circle radius or oscillation half-amplitude, pixels.
    pub amplitude: f32,
    /// Frames per swipe, revolution or oscillation.
    pub period: f32,
    pub limb_width: f32,
    pub limb_length: f32,
    /// Gaussian intensity noise, 8-bit levels.
    pub noise_sigma: f32,
    pub width: usize,
    pub height: usize,
    pub fps: f32,
}

impl GestureSpec {
    pub fn canonical(pattern: MotionPattern) -> Self {
        let (amplitude, period) = match pattern {
            MotionPattern::CircleCW => (9.0, 16.0),
            MotionPattern::ScrubOscillate => (6.0, 8.0),
            MotionPattern::Background => (0.0, 12.0),
            _ => (24.0, 20.0),
        };
        Self {
            class_id: pattern.class_id(),
            pattern,
            amplitude,
            period,
            limb_width: 18.0,
            limb_length: 40.0,
            noise_sigma: 2.0,
            width: 88,
            height: 88,
            fps: 15.0,
        }
    }

    /// Canonical spec with per-sample variation in amplitude, period and limb size.
    pub fn jittered(pattern: MotionPattern, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x5eed));
        let mut s = Self::canonical(pattern);
        if pattern != MotionPattern::Background {
            s.amplitude *= rng.gen_range(0.85..1.15);
        }
        s.period *= rng.gen_range(0.9..1.1);
        s.limb_width *= rng.gen_range(0.85..1.15);
        s.limb_length *= rng.gen_range(0.9..1.1);
        s
    }

    fn validate(&self) -> Result<()> {
        if self.pattern != MotionPattern::Background && !(self.amplitude > 0.0) {
            return Err(SynthError::BadSpec("amplitude must be positive".into()));
        }
        if !(self.period >= 2.0) {
            return Err(SynthError::BadSpec("period must be at least 2 frames".into()));
        }
        if self.width < 16 || self.height < 16 || !(self.limb_width > 0.0 && self.limb_length > 0.0) {
            return Err(SynthError::BadSpec("degenerate geometry".into()));
        }
        if !(self.fps > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(SynthError::BadSpec("fps and noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Limb center displacement from its rest position at frame `t`.
    pub fn offset(&self, t: f32, drift: &[(f32, f32)]) -> (f32, f32) {
        let a = self.amplitude;
        let p = self.period;
        let phase = (t / p).fract();
        match self.pattern {
            MotionPattern::CircleCW => {
                let th = 2.0 * std::f32::consts::PI * t / p;
                (a * th.cos(), a * th.sin())
            }
            MotionPattern::ScrubOscillate => (a * (2.0 * std::f32::consts::PI * t / p).sin(), 0.0),
            MotionPattern::Background => drift.get(t as usize).copied().unwrap_or((0.0, 0.0)),
            pat => {
                let (dx, dy) = pat.direction().expect("swipe");
                // Centered sawtooth: one swipe of length a per period.
                let s = a * (phase - 0.5);
                (dx * s, dy * s)
            }
        }
    }

    /// Per-frame limb velocity, pixels per frame, where the motion is smooth.
    pub fn swipe_velocity(&self) -> Option<(f32, f32)> {
        self.pattern
            .direction()
            .map(|(dx, dy)| (dx * self.amplitude / self.period, dy * self.amplitude / self.period))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub rgb: Clip,
    /// Depth in millimeters, one map per frame.
    pub depth: Vec<DepthFrame>,
    pub log_depth: Clip,
    pub label: u32,
    /// Limb center per frame.
    pub centers: Vec<(f32, f32)>,
}

/// Static textured background plus one textured limb rectangle.
struct Scene {
    width: usize,
    height: usize,
    limb_width: f32,
    limb_length: f32,
    noise_sigma: f32,
    bg_seed: u64,
    limb_seed: u64,
}

impl Scene {
    /// Grayscale of the tinted RGB frame, depth map and its log view, limb centered at `c`.
    fn render(&self, c: (f32, f32), rng: &mut ChaCha8Rng) -> Result<(GrayFrame, DepthFrame, GrayFrame)> {
        let (w, h) = (self.width, self.height);
        let noise = Normal::new(0.0f32, self.noise_sigma.max(f32::MIN_POSITIVE)).expect("finite sigma");
        let depth_noise = Normal::new(0.0f32, 2.0).expect("finite sigma");
        let (hw, hl) = (self.limb_width / 2.0, self.limb_length / 2.0);
        let mut rgb = Vec::with_capacity(3 * w * h);
        let mut depth = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32, y as f32);
                let (lx, ly) = (px - c.0, py - c.1);
                let on_limb = lx.abs() <= hw && ly.abs() <= hl;
                let (gray, d) = if on_limb {
                    let tv = f32::from(texture_value(lx, ly, self.limb_seed));
                    // Rounded cross-section: edges recede.
                    let bulge = 60.0 * (lx / hw).powi(2);
                    (1.6 * (tv - 128.0) + 140.0, LIMB_DEPTH_MM + bulge + 2.5 * (tv - 128.0))
                } else {
                    let tv = f32::from(texture_value(px, py, self.bg_seed));
                    (0.7 * tv + 20.0, BACKGROUND_DEPTH_MM + 3.0 * (tv - 128.0) + 2.0 * py)
                };
                let n = if self.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                let g = (gray + n).round().clamp(0.0, 255.0);
                // Warm skin tint on the limb, cool tint on the background.
                let (r, gg, b) = if on_limb {
                    (g * 1.1, g * 0.95, g * 0.85)
                } else {
                    (g * 0.9, g, g * 1.15)
                };
                rgb.extend([r, gg, b].map(|c| c.round().clamp(0.0, 255.0) as u8));
                let dn = if self.noise_sigma > 0.0 { depth_noise.sample(rng) } else { 0.0 };
                depth.push((d + dn).round().clamp(1.0, f32::from(DEPTH_MAX_MM)) as u16);
            }
        }
        let dframe = DepthFrame::new(w, h, depth, DEPTH_MAX_MM)?;
        let log = stream::log_depth(&dframe)?;
        Ok((stream::to_grayscale(w, h, &rgb)?, dframe, log))
    }
}

/// Renders a gesture clip. Deterministic in `(spec, seed, frames)`.
pub fn generate_gesture_clip(spec: &GestureSpec, seed: u64, frames: usize, min_frames: usize) -> Result<GestureSample> {
    spec.validate()?;
    if frames < min_frames {
        return Err(SynthError::TooFewFrames {
            min: min_frames,
            got: frames,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_seed: u64 = rng.gen();
    let limb_seed: u64 = rng.gen();
    let (w, h) = (spec.width, spec.height);
    let rest = (
        w as f32 / 2.0 + rng.gen_range(-4.0..4.0),
        h as f32 / 2.0 + rng.gen_range(-4.0..4.0),
    );
    let phase0: f32 = rng.gen_range(0.0..spec.period * 0.15);

    // Slow random walk for the Background pattern.
    // Long enough to cover the phase offset.
    let steps = frames + spec.period.ceil() as usize + 1;
    let mut drift = Vec::with_capacity(steps);
    let (mut dx, mut dy, mut vx, mut vy) = (0f32, 0f32, 0f32, 0f32);
    for _ in 0..steps {
        drift.push((dx, dy));
        vx = 0.8 * vx + rng.gen_range(-0.08..0.08);
        vy = 0.8 * vy + rng.gen_range(-0.08..0.08);
        dx += vx;
        dy += vy;
    }

    let scene = Scene {
        width: w,
        height: h,
        limb_width: spec.limb_width,
        limb_length: spec.limb_length,
        noise_sigma: spec.noise_sigma,
        bg_seed,
        limb_seed,
    };
    let mut rgb_frames = Vec::with_capacity(frames);
    let mut depth_frames = Vec::with_capacity(frames);
    let mut log_frames = Vec::with_capacity(frames);
    let mut centers = Vec::with_capacity(frames);
    for t in 0..frames {
        let (ox, oy) = spec.offset(t as f32 + phase0, &drift);
        let c = (rest.0 + ox, rest.1 + oy);
        centers.push(c);
        let (g, d, l) = scene.render(c, &mut rng)?;
        rgb_frames.push(g);
        depth_frames.push(d);
        log_frames.push(l);
    }
    let label = Some(spec.class_id);
    Ok(GestureSample {
        rgb: Clip::new(rgb_frames, spec.fps, Modality::Rgb, SensorId::S2, label)?,
        depth: depth_frames,
        log_depth: Clip::new(log_frames, spec.fps, Modality::LogDepth, SensorId::S2, label)?,
        label: spec.class_id,
        centers,
    })
}

/// Linear 8-bit view of a depth clip.
pub fn depth_clip(depth: &[DepthFrame], fps: f32, label: Option<u32>) -> Result<Clip> {
    let frames = depth
        .iter()
        .map(|d| {
            let data = d
                .data()
                .iter()
                .map(|&v| (f32::from(v) * 255.0 / f32::from(d.d_max())).round() as u8)
                .collect();
            GrayFrame::new(d.width(), d.height(), data)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Clip::new(frames, fps, Modality::Depth, SensorId::S2, label)?)
}

pub const AUDIO_RATE: u32 = 16_000;

/// First three formants, Hz.
const VOWELS: [(f64, f64, f64); 8] = [
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (300.0, 870.0, 2240.0),
    (530.0, 1840.0, 2480.0),
    (570.0, 840.0, 2410.0),
    (660.0, 1720.0, 2410.0),
    (390.0, 1990.0, 2550.0),
    (440.0, 1020.0, 2240.0),
];

/// Fixed vowel sequence of a command: three vowels, no immediate repeats. The
/// first eight commands differ from each other at every position.
pub fn command_recipe(command: CommandId) -> [usize; 3] {
    let c = command.saturating_sub(1) as usize;
    let (v0, q) = (c % 8, c / 8);
    [v0, (v0 + 3 + q) % 8, (v0 + 5 + 2 * q) % 8]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Speaker {
    pub f0: f64,
    /// Formant scale (vocal-tract length).
    pub formant_scale: f64,
    /// Duration scale.
    pub rate: f64,
}

impl Speaker {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xa0d10));
        Self {
            f0: rng.gen_range(120.0..160.0),
            formant_scale: 1.0,
            rate: rng.gen_range(0.94..1.06),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandAudio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: CommandId,
}

/// Synthesizes one utterance of `command`. `snr_db = None` renders it clean (with a
/// fixed dither floor). The noise realization is drawn from `noise_seed`.
pub fn generate_command_audio(
    grammar: &CommandGrammar,
    command: CommandId,
    speaker_seed: u64,
    snr_db: Option<f64>,
    noise_seed: u64,
) -> Result<CommandAudio> {
    if grammar.get(command).is_none() {
        return Err(SynthError::UnknownCommand(command));
    }
    let spk = Speaker::from_seed(speaker_seed);
    let timing_seed = splitmix(speaker_seed.wrapping_mul(1_000_003) ^ u64::from(command));
    Ok(synthesize_command(command, &spk, timing_seed, snr_db, noise_seed))
}

/// Renders `command` for an explicit speaker; `timing_seed` drives per-segment duration jitter.
pub fn synthesize_command(
    command: CommandId,
    spk: &Speaker,
    timing_seed: u64,
    snr_db: Option<f64>,
    noise_seed: u64,
) -> CommandAudio {
    let mut rng = ChaCha8Rng::seed_from_u64(timing_seed);
    let recipe = command_recipe(command);
    let sr = AUDIO_RATE as f64;
    let seg: Vec<f64> = (0..3).map(|_| 0.16 * spk.rate * rng.gen_range(0.92..1.08)).collect();
    let glide = 0.06 * spk.rate;
    let pad = 0.0;
    let voiced = seg.iter().sum::<f64>() + 2.0 * glide;
    let n = ((voiced + 2.0 * pad) * sr) as usize;

    // Formant targets over voiced time: hold, glide, hold, glide, hold.
    let formants_at = |tv: f64| -> (f64, f64, f64) {
        let v = |i: usize| {
            let (a, b, c) = VOWELS[recipe[i]];
            (a * spk.formant_scale, b * spk.formant_scale, c * spk.formant_scale)
        };
        let lerp = |p: (f64, f64, f64), q: (f64, f64, f64), s: f64| {
            (p.0 + (q.0 - p.0) * s, p.1 + (q.1 - p.1) * s, p.2 + (q.2 - p.2) * s)
        };
        let b1 = seg[0];
        let b2 = b1 + glide;
        let b3 = b2 + seg[1];
        let b4 = b3 + glide;
        if tv < b1 {
            v(0)
        } else if tv < b2 {
            lerp(v(0), v(1), (tv - b1) / glide)
        } else if tv < b3 {
            v(1)
        } else if tv < b4 {
            lerp(v(1), v(2), (tv - b3) / glide)
        } else {
            v(2)
        }
    };

    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let n_harm = (7800.0 / spk.f0) as usize;
    for (i, s) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let tv = t - pad;
        if !(0.0..voiced).contains(&tv) {
            continue;
        }
        // Slight pitch declination over the utterance.
        let f0 = spk.f0 * (1.0 - 0.1 * tv / voiced);
        phase = (phase + two_pi * f0 / sr) % two_pi;
        let (f1, f2, f3) = formants_at(tv);
        let env = (tv / 0.02).min(1.0) * ((voiced - tv) / 0.02).min(1.0);
        let mut acc = 0.0;
        for k in 1..=n_harm {
            let f = k as f64 * f0;
            let gain = 1.0 / (1.0 + ((f - f1) / 90.0).powi(2))
                + 0.7 / (1.0 + ((f - f2) / 110.0).powi(2))
                + 0.3 / (1.0 + ((f - f3) / 140.0).powi(2))
                + 0.01;
            acc += gain * (k as f64 * phase).sin();
        }
        *s = env * acc;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for s in &mut out {
        *s *= 0.5 / peak;
    }
    let power = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut nrng = ChaCha8Rng::seed_from_u64(splitmix(noise_seed ^ 0x00e1_5e00));
    // Dither keeps silent stretches off the log floor.
    let sigma = match snr_db {
        Some(snr) => (power / 10f64.powf(snr / 10.0)).sqrt(),
        None => (power / 1e5).sqrt(),
    };
    let gauss = Normal::new(0.0, sigma).expect("finite sigma");
    for s in &mut out {
        *s += gauss.sample(&mut nrng);
    }
    CommandAudio {
        samples: out,
        sample_rate: AUDIO_RATE,
        label: command,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{dtw_distance, mfcc};

    #[test]
    fn gesture_clip_is_deterministic() {
        let spec = GestureSpec::jittered(MotionPattern::CircleCW, 3);
        let a = generate_gesture_clip(&spec, 42, 16, 16).unwrap();
        let b = generate_gesture_clip(&spec, 42, 16, 16).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.rgb.write_to(&mut buf_a).unwrap();
        b.rgb.write_to(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert_ne!(generate_gesture_clip(&spec, 43, 16, 16).unwrap().rgb, a.rgb);
    }

    #[test]
    fn gesture_spec_validation() {
        let spec = GestureSpec::canonical(MotionPattern::SwipeUp);
        assert!(matches!(
            generate_gesture_clip(&spec, 0, 10, 16),
            Err(SynthError::TooFewFrames { min: 16, got: 10 })
        ));
        let mut bad = spec.clone();
        bad.amplitude = 0.0;
        assert!(matches!(generate_gesture_clip(&bad, 0, 16, 16), Err(SynthError::BadSpec(_))));
        let mut bad = spec;
        bad.period = 1.0;
        assert!(generate_gesture_clip(&bad, 0, 16, 16).is_err());
    }

    #[test]
    fn limb_is_nearer_than_background() {
        let spec = GestureSpec::canonical(MotionPattern::SwipeRight);
        let s = generate_gesture_clip(&spec, 5, 16, 16).unwrap();
        let (cx, cy) = s.centers[0];
        let d = &s.depth[0];
        let at = |x: f32, y: f32| d.data()[y as usize * d.width() + x as usize];
        assert!(at(cx, cy) < at(3.0, 3.0));
        let ld = &s.log_depth.frames()[0];
        assert!(ld.get(cx as usize, cy as usize) < ld.get(3, 3));
    }

    #[test]
    fn class_ids_are_distinct() {
        let mut ids: Vec<u32> = MotionPattern::ALL.iter().map(|p| p.class_id()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 7);
        for p in MotionPattern::ALL {
            assert_eq!(MotionPattern::from_class_id(p.class_id()), Some(p));
        }
    }

    #[test]
    fn recipes_are_distinct() {
        let g = CommandGrammar::development();
        let mut r: Vec<_> = g.ids().into_iter().map(command_recipe).collect();
        r.sort_unstable();
        r.dedup();
        assert_eq!(r.len(), 23);
    }

    #[test]
    fn clean_audio_is_deterministic() {
        let g = CommandGrammar::online();
        let a = generate_command_audio(&g, 3, 7, None, 1).unwrap();
        let b = generate_command_audio(&g, 3, 7, None, 1).unwrap();
        assert_eq!(a, b);
        let fa = mfcc(&a.samples, a.sample_rate).unwrap();
        assert_eq!(dtw_distance(&fa, &mfcc(&b.samples, b.sample_rate).unwrap()).unwrap(), 0.0);
        assert!(matches!(generate_command_audio(&g, 99, 7, None, 1), Err(SynthError::UnknownCommand(99))));
    }
}

/// What the limb does during audio-gestural steps of a synthetic session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GestureStream {
    /// The gesture matching the spoken command.
    Clean,
    /// Low-amplitude random drift in place of every gesture.
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f32,
    /// Still frames before the first step and after every step.
    pub rest_frames: usize,
    pub noise_sigma: f32,
    pub speaker_seed: u64,
    pub snr_db: Option<f64>,
    pub gestures: GestureStream,
    /// Swipe length, pixels, covered in one canonical period.
    pub swipe_amplitude: f32,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 112,
            fps: 15.0,
            rest_frames: 15,
            noise_sigma: 2.0,
            speaker_seed: 77,
            snr_db: Some(20.0),
            gestures: GestureStream::Clean,
            swipe_amplitude: 28.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub video: Clip,
    pub log_depth: Clip,
    pub audio: Vec<AudioEvent>,
    /// (step id, first moving frame, last moving frame) per audio-gestural step.
    pub gesture_spans: Vec<(u32, usize, usize)>,
}

/// Limb displacement `t` frames into a session gesture, and the gesture length.
/// Every gesture starts at zero displacement; swipes end one swipe away, the
/// periodic patterns run whole periods and return to zero.
fn session_motion(pattern: MotionPattern, swipe: f32, t: usize) -> ((f32, f32), usize) {
    let spec = GestureSpec::canonical(pattern);
    let p = spec.period.round() as usize;
    let d = match pattern {
        MotionPattern::CircleCW => 2 * p,
        MotionPattern::ScrubOscillate => 3 * p,
        _ => p,
    };
    let o = match pattern.direction() {
        Some((dx, dy)) => {
            let s = swipe * t as f32 / p as f32;
            (dx * s, dy * s)
        }
        None => {
            let o0 = spec.offset(0.0, &[]);
            let o = spec.offset(t as f32, &[]);
            (o.0 - o0.0, o.1 - o0.1)
        }
    };
    (o, d)
}

/// Renders a continuous session following `script`: one utterance per step,
/// preceded for audio-gestural steps by the matching gesture (or by drift).
pub fn synthesize_session(script: &[ScriptStep], spec: &SessionSpec, seed: u64) -> Result<SyntheticSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grammar = CommandGrammar::online();
    // Limb path relative to its start, and events.
    let mut path: Vec<(f32, f32)> = vec![(0.0, 0.0); spec.rest_frames];
    let mut pos = (0f32, 0f32);
    let mut audio_at = Vec::new();
    let mut spans = Vec::new();
    for st in script {
        let cid = st.command.id();
        if st.modality == StepModality::AudioGestural {
            let pattern = MotionPattern::from_class_id(cid).ok_or(SynthError::UnknownCommand(cid))?;
            let (_, d) = session_motion(pattern, spec.swipe_amplitude, 0);
            let start = path.len();
            let (mut vx, mut vy, mut drift) = (0f32, 0f32, (0f32, 0f32));
            for t in 1..=d {
                let o = match spec.gestures {
                    GestureStream::Clean => session_motion(pattern, spec.swipe_amplitude, t).0,
                    GestureStream::Background => {
                        vx = 0.8 * vx + rng.gen_range(-0.08..0.08);
                        vy = 0.8 * vy + rng.gen_range(-0.08..0.08);
                        drift = (drift.0 + vx, drift.1 + vy);
                        drift
                    }
                };
                path.push((pos.0 + o.0, pos.1 + o.1));
            }
            pos = *path.last().unwrap();
            spans.push((st.step_id, start, path.len() - 1));
            audio_at.push((st.step_id, cid, path.len() - 1));
            path.extend(std::iter::repeat(pos).take(spec.rest_frames));
        } else {
            path.extend(std::iter::repeat(pos).take(spec.rest_frames));
            audio_at.push((st.step_id, cid, path.len() - spec.rest_frames / 2 - 1));
            path.extend(std::iter::repeat(pos).take(spec.rest_frames));
        }
    }

    let scene = Scene {
        width: spec.width,
        height: spec.height,
        limb_width: GestureSpec::canonical(MotionPattern::Background).limb_width,
        limb_length: GestureSpec::canonical(MotionPattern::Background).limb_length,
        noise_sigma: spec.noise_sigma,
        bg_seed: rng.gen(),
        limb_seed: rng.gen(),
    };
    // Center the path's bounding box in the frame.
    let (mut lo, mut hi) = ((f32::MAX, f32::MAX), (f32::MIN, f32::MIN));
    for p in &path {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }
    let shift = (
        spec.width as f32 / 2.0 - (lo.0 + hi.0) / 2.0,
        spec.height as f32 / 2.0 - (lo.1 + hi.1) / 2.0,
    );
    let margin = 16.0;
    if hi.0 - lo.0 + scene.limb_width + 2.0 * margin > spec.width as f32
        || hi.1 - lo.1 + scene.limb_length + 2.0 * margin > spec.height as f32
    {
        return Err(SynthError::BadSpec("session path does not fit the frame".into()));
    }
    let mut frames = Vec::with_capacity(path.len());
    let mut logs = Vec::with_capacity(path.len());
    for p in &path {
        let (g, _, l) = scene.render((p.0 + shift.0, p.1 + shift.1), &mut rng)?;
        frames.push(g);
        logs.push(l);
    }
    let audio = audio_at
        .into_iter()
        .map(|(step, cid, frame)| {
            let wave = generate_command_audio(&grammar, cid, spec.speaker_seed, spec.snr_db, seed ^ u64::from(step))?;
            let features = audio::mfcc(&wave.samples, wave.sample_rate).map_err(|e| SynthError::BadSpec(e.to_string()))?;
            Ok(AudioEvent {
                frame,
                features,
                keyword_score: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSession {
        video: Clip::new(frames, spec.fps, Modality::Rgb, SensorId::S2, None)?,
        log_depth: Clip::new(logs, spec.fps, Modality::LogDepth, SensorId::S2, None)?,
        audio,
        gesture_spans: spans,
    })
}
