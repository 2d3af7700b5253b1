//! Online layer: visual activity detection, segment-triggered gesture
//! recognition, late fusion with spoken commands, and the dialogue state machine
//! for the two bathing tasks.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, classify_command, keyword_gate, AudioError, CommandGrammar, CommandId, MfccSeq, NBest, SpeakerTransform, TemplateSet};
use crate::stream::{Clip, GrayFrame, StreamError};
use crate::synth::BACKGROUND_CLASS;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("frames differ in size")]
    DimensionMismatch,
    #[error("no speech or gesture hypothesis to fuse")]
    NoInput,
    #[error("speech ({speech}) and gesture disagree and fallback is disabled")]
    Disagreement { speech: CommandId },
    #[error("protocol error: unknown command id {0}")]
    UnknownCommand(CommandId),
    #[error("stream desync: {0}")]
    Desync(String),
    #[error("gesture recognizer failed: {0}")]
    Gesture(String),
    #[error("bad session file: {0}")]
    Format(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// Fraction of pixels whose intensity changed by more than `tau_noise`.
pub fn activity_score(prev: &GrayFrame, curr: &GrayFrame, tau_noise: f32) -> Result<f64> {
    if !prev.same_dims(curr) {
        return Err(SessionError::DimensionMismatch);
    }
    let changed = prev
        .data()
        .iter()
        .zip(curr.data())
        .filter(|(&a, &b)| (f32::from(a) - f32::from(b)).abs() > tau_noise)
        .count();
    Ok(changed as f64 / prev.data().len() as f64)
}

/// Per-frame activity; frame 0 scores 0.
pub fn activity_scores(clip: &Clip, tau_noise: f32) -> Result<Vec<f64>> {
    let f = clip.frames();
    let mut out = vec![0.0; f.len()];
    for t in 1..f.len() {
        out[t] = activity_score(&f[t - 1], &f[t], tau_noise)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorParams {
    pub theta_on: f64,
    pub theta_off: f64,
    /// Shortest segment reported, frames.
    pub min_dur: usize,
    /// Quiet frames needed to close a segment.
    pub max_gap: usize,
}

impl DetectorParams {
    pub fn from_seconds(theta_on: f64, theta_off: f64, min_dur_s: f64, max_gap_s: f64, fps: f64) -> Result<Self> {
        let p = Self {
            theta_on,
            theta_off,
            min_dur: (min_dur_s * fps).round() as usize,
            max_gap: ((max_gap_s * fps).round() as usize).max(1),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_on >= self.theta_off) {
            return Err(SessionError::Config(format!(
                "theta_on ({}) must be >= theta_off ({})",
                self.theta_on, self.theta_off
            )));
        }
        if self.max_gap == 0 {
            return Err(SessionError::Config("max_gap must be at least one frame".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEvent {
    pub kind: SegmentKind,
    /// Start: first active frame. End: first frame of the closing quiet run.
    pub frame: usize,
    /// Frame at which the event could be emitted.
    pub emitted_at: usize,
    pub score: f64,
}

/// Causal hysteresis detector. A segment opens when the score reaches
/// `theta_on` and closes after `max_gap` consecutive frames below `theta_off`.
/// Segments shorter than `min_dur` are dropped; the Start of a kept segment is
/// emitted once it has lasted `min_dur` frames.
#[derive(Debug, Clone)]
pub struct SegmentDetector {
    params: DetectorParams,
    frame: usize,
    onset: Option<usize>,
    onset_score: f64,
    started: bool,
    quiet: usize,
}

impl SegmentDetector {
    pub fn new(params: DetectorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            frame: 0,
            onset: None,
            onset_score: 0.0,
            started: false,
            quiet: 0,
        })
    }

    pub fn push(&mut self, score: f64) -> Vec<SegmentEvent> {
        let t = self.frame;
        self.frame += 1;
        let mut out = Vec::new();
        match self.onset {
            None => {
                if score >= self.params.theta_on {
                    self.onset = Some(t);
                    self.onset_score = score;
                    self.started = false;
                    self.quiet = 0;
                }
            }
            Some(_) => {
                if score < self.params.theta_off {
                    self.quiet += 1;
                    if self.quiet >= self.params.max_gap {
                        let end = t + 1 - self.quiet;
                        if self.started {
                            out.push(SegmentEvent {
                                kind: SegmentKind::End,
                                frame: end,
                                emitted_at: t,
                                score,
                            });
                        }
                        self.onset = None;
                        return out;
                    }
                } else {
                    self.quiet = 0;
                }
            }
        }
        if let Some(onset) = self.onset {
            let active_end = self.frame - self.quiet;
            if !self.started && active_end - onset >= self.params.min_dur.max(1) {
                self.started = true;
                out.push(SegmentEvent {
                    kind: SegmentKind::Start,
                    frame: onset,
                    emitted_at: t,
                    score: self.onset_score,
                });
            }
        }
        out
    }

    /// Closes an open segment at the end of the stream.
    pub fn finish(&mut self) -> Vec<SegmentEvent> {
        let mut out = Vec::new();
        if let Some(onset) = self.onset.take() {
            let end = self.frame - self.quiet;
            if !self.started && end - onset >= self.params.min_dur.max(1) {
                out.push(SegmentEvent {
                    kind: SegmentKind::Start,
                    frame: onset,
                    emitted_at: self.frame,
                    score: self.onset_score,
                });
                self.started = true;
            }
            if self.started {
                out.push(SegmentEvent {
                    kind: SegmentKind::End,
                    frame: end,
                    emitted_at: self.frame,
                    score: 0.0,
                });
            }
        }
        out
    }
}

pub fn detect_segments(scores: &[f64], params: &DetectorParams) -> Result<Vec<SegmentEvent>> {
    let mut d = SegmentDetector::new(params.clone())?;
    let mut out: Vec<SegmentEvent> = scores.iter().flat_map(|&s| d.push(s)).collect();
    out.extend(d.finish());
    Ok(out)
}

/// `(start, end)` frame ranges from an alternating event stream.
pub fn segment_ranges(events: &[SegmentEvent]) -> Vec<(usize, usize)> {
    events
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| (c[0].frame, c[1].frame))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionSource {
    SpeechOnly,
    GestureOnly,
    Agreed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionDecision {
    pub command: CommandId,
    pub source: FusionSource,
    pub speech: Vec<(CommandId, f64)>,
    pub gesture: Vec<(CommandId, f64)>,
    /// Both modalities answered, disagreed, and speech won by fallback.
    pub fallback: bool,
}

/// Late fusion over the speech n-best and the gesture 2-best.
pub fn fuse(speech: &NBest, gesture_2best: &[(CommandId, f64)], fallback: bool) -> Result<FusionDecision> {
    let gesture: Vec<_> = gesture_2best.iter().take(2).copied().collect();
    let decision = |command, source, fallback| FusionDecision {
        command,
        source,
        speech: speech.entries.clone(),
        gesture: gesture.clone(),
        fallback,
    };
    match (speech.top(), gesture.first()) {
        (None, None) => Err(SessionError::NoInput),
        (Some(s), None) => Ok(decision(s, FusionSource::SpeechOnly, false)),
        (None, Some(&(g, _))) => Ok(decision(g, FusionSource::GestureOnly, false)),
        (Some(s), Some(_)) => {
            if gesture.iter().any(|&(g, _)| g == s) {
                Ok(decision(s, FusionSource::Agreed, false))
            } else if fallback {
                Ok(decision(s, FusionSource::SpeechOnly, true))
            } else {
                Err(SessionError::Disagreement { speech: s })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    WashLegs,
    WashBack,
    ScrubBack,
    Stop,
    Repeat,
    Halt,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::WashLegs,
        Command::WashBack,
        Command::ScrubBack,
        Command::Stop,
        Command::Repeat,
        Command::Halt,
    ];

    pub fn id(self) -> CommandId {
        match self {
            Command::WashLegs => audio::WASH_LEGS,
            Command::WashBack => audio::WASH_BACK,
            Command::ScrubBack => audio::SCRUB_BACK,
            Command::Stop => audio::STOP,
            Command::Repeat => audio::REPEAT,
            Command::Halt => audio::HALT,
        }
    }

    pub fn from_id(id: CommandId) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.id() == id)
            .ok_or(SessionError::UnknownCommand(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activity {
    WashingLegs,
    WashingBack,
    ScrubbingBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmState {
    Idle,
    WashingLegs,
    WashingBack,
    ScrubbingBack,
    Paused(Activity),
    Halted,
}

impl FsmState {
    fn active(self) -> Option<Activity> {
        match self {
            FsmState::WashingLegs => Some(Activity::WashingLegs),
            FsmState::WashingBack => Some(Activity::WashingBack),
            FsmState::ScrubbingBack => Some(Activity::ScrubbingBack),
            _ => None,
        }
    }

    fn of(a: Activity) -> Self {
        match a {
            Activity::WashingLegs => FsmState::WashingLegs,
            Activity::WashingBack => FsmState::WashingBack,
            Activity::ScrubbingBack => FsmState::ScrubbingBack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Start(Activity),
    Pause,
    Resume(Activity),
    EmergencyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    StartWashLegs,
    StartWashBack,
    StartScrubBack,
    Paused,
    Resumed,
    Halted,
    CannotComply,
}

impl Feedback {
    pub fn text(self, lang: audio::Language) -> &'static str {
        use audio::Language::*;
        match (self, lang) {
            (Feedback::StartWashLegs, En) => "Washing your legs.",
            (Feedback::StartWashLegs, It) => "Lavo le gambe.",
            (Feedback::StartWashLegs, De) => "Ich wasche Ihre Beine.",
            (Feedback::StartWashBack, En) => "Washing your back.",
            (Feedback::StartWashBack, It) => "Lavo la schiena.",
            (Feedback::StartWashBack, De) => "Ich wasche Ihren Rücken.",
            (Feedback::StartScrubBack, En) => "Scrubbing your back.",
            (Feedback::StartScrubBack, It) => "Strofino la schiena.",
            (Feedback::StartScrubBack, De) => "Ich trockne Ihren Rücken.",
            (Feedback::Paused, En) => "Pausing.",
            (Feedback::Paused, It) => "Mi fermo.",
            (Feedback::Paused, De) => "Ich halte an.",
            (Feedback::Resumed, En) => "Continuing.",
            (Feedback::Resumed, It) => "Continuo.",
            (Feedback::Resumed, De) => "Ich mache weiter.",
            (Feedback::Halted, En) => "Stopping now.",
            (Feedback::Halted, It) => "Mi fermo subito.",
            (Feedback::Halted, De) => "Wir sind fertig.",
            (Feedback::CannotComply, En) => "I cannot do that now.",
            (Feedback::CannotComply, It) => "Non posso farlo adesso.",
            (Feedback::CannotComply, De) => "Das kann ich jetzt nicht tun.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub from: FsmState,
    pub command: Command,
    pub to: FsmState,
    pub actions: Vec<Action>,
    pub feedback: Feedback,
    /// The command was refused; `to == from`.
    pub refused: bool,
}

/// One step of the dialogue controller. Halted is absorbing: only Halt is
/// accepted there, and leaving it requires a session reset.
pub fn fsm_step(state: FsmState, command: CommandId) -> Result<Transition> {
    let command = Command::from_id(command)?;
    let ok = |to, actions: Vec<Action>, feedback| Transition {
        from: state,
        command,
        to,
        actions,
        feedback,
        refused: false,
    };
    Ok(match (state, command) {
        (_, Command::Halt) => ok(FsmState::Halted, vec![Action::EmergencyStop], Feedback::Halted),
        (FsmState::Idle, Command::WashLegs) => ok(
            FsmState::WashingLegs,
            vec![Action::Start(Activity::WashingLegs)],
            Feedback::StartWashLegs,
        ),
        (FsmState::Idle, Command::WashBack) => ok(
            FsmState::WashingBack,
            vec![Action::Start(Activity::WashingBack)],
            Feedback::StartWashBack,
        ),
        (FsmState::WashingBack, Command::ScrubBack) => ok(
            FsmState::ScrubbingBack,
            vec![Action::Start(Activity::ScrubbingBack)],
            Feedback::StartScrubBack,
        ),
        (s, Command::Stop) if s.active().is_some() => {
            ok(FsmState::Paused(s.active().expect("active")), vec![Action::Pause], Feedback::Paused)
        }
        (FsmState::Paused(target), Command::Repeat) => {
            ok(FsmState::of(target), vec![Action::Resume(target)], Feedback::Resumed)
        }
        _ => Transition {
            from: state,
            command,
            to: state,
            actions: vec![],
            feedback: Feedback::CannotComply,
            refused: true,
        },
    })
}

/// Dialogue controller with its last executed command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fsm {
    pub state: FsmState,
    pub history: Option<Command>,
}

impl Default for Fsm {
    fn default() -> Self {
        Self {
            state: FsmState::Idle,
            history: None,
        }
    }
}

impl Fsm {
    pub fn step(&mut self, command: CommandId) -> Result<Transition> {
        let t = fsm_step(self.state, command)?;
        self.state = t.to;
        if !t.refused {
            self.history = Some(t.command);
        }
        Ok(t)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepModality {
    #[serde(rename = "A")]
    Audio,
    #[serde(rename = "A-G")]
    AudioGestural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub step_id: u32,
    pub command: Command,
    pub modality: StepModality,
    /// Annotation of whether the user performed the command correctly.
    #[serde(default = "yes")]
    pub performed_ok: bool,
}

fn yes() -> bool {
    true
}

fn step(step_id: u32, command: Command, modality: StepModality) -> ScriptStep {
    ScriptStep {
        step_id,
        command,
        modality,
        performed_ok: true,
    }
}

/// Distal-region (legs) protocol.
pub fn legs_script() -> Vec<ScriptStep> {
    use Command::*;
    use StepModality::*;
    [
        (WashLegs, Audio),
        (Stop, Audio),
        (Repeat, Audio),
        (Halt, Audio),
        (WashLegs, AudioGestural),
        (Halt, AudioGestural),
        (Halt, AudioGestural),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(c, m))| step(i as u32 + 1, c, m))
    .collect()
}

/// Back-region protocol.
pub fn back_script() -> Vec<ScriptStep> {
    use Command::*;
    [WashBack, Halt, ScrubBack, Stop, Repeat, Halt, Halt]
        .iter()
        .enumerate()
        .map(|(i, &c)| step(i as u32 + 1, c, StepModality::AudioGestural))
        .collect()
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| SessionError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_script<R: BufRead>(r: R) -> Result<Vec<ScriptStep>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SessionError::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step_id: u32,
    pub command: Command,
    pub modality: StepModality,
    pub performed_ok: bool,
    pub recognized: Option<Command>,
    pub source: Option<FusionSource>,
    /// Speech overrode a disagreeing gesture.
    pub fallback: bool,
    pub latency_frames: usize,
    pub state_after: FsmState,
}

impl LogEntry {
    pub fn recognized_ok(&self) -> bool {
        self.recognized == Some(self.command)
    }
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogEntry>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SessionError::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// A pre-segmented utterance ending at `frame` on the video clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEvent {
    pub frame: usize,
    pub features: MfccSeq,
    pub keyword_score: f64,
}

/// Ranks gesture classes for a segment; higher scores are better.
pub trait GestureRecognizer {
    fn rank(&self, clip: &Clip) -> std::result::Result<Vec<(u32, f64)>, String>;
}

pub struct SpeechModel {
    pub templates: TemplateSet,
    pub grammar: CommandGrammar,
    pub transform: Option<SpeakerTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionConfig {
    pub detector: DetectorParams,
    pub tau_noise: f32,
    /// Gesture segments ending up to this many frames before an utterance are fused with it.
    pub fusion_window: usize,
    pub keyword_threshold: f64,
    pub fallback: bool,
    /// Shortest segment handed to the gesture recognizer.
    pub min_gesture_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionOutcome {
    pub log: Vec<LogEntry>,
    pub final_state: FsmState,
    pub segments: Vec<SegmentEvent>,
    pub transitions: Vec<Transition>,
}

/// Gesture 2-best restricted to commands; a Background winner means no gesture.
pub fn gesture_two_best(mut ranked: Vec<(u32, f64)>) -> Vec<(CommandId, f64)> {
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.first().map_or(true, |r| r.0 == BACKGROUND_CLASS) {
        return vec![];
    }
    ranked.into_iter().filter(|r| r.0 != BACKGROUND_CLASS).take(2).collect()
}

/// Drives detector, recognizers, fusion and the FSM over time-aligned streams.
/// Decisions are matched to script steps in order.
pub fn run_session(
    video: &Clip,
    audio_events: &[AudioEvent],
    gesture: &dyn GestureRecognizer,
    speech: &SpeechModel,
    script: &[ScriptStep],
    cfg: &SessionConfig,
) -> Result<SessionOutcome> {
    let fps = video.fps() as f64;
    let one_second = fps.round() as usize;
    let n = video.len();
    for w in audio_events.windows(2) {
        if w[1].frame + one_second < w[0].frame {
            return Err(SessionError::Desync(format!(
                "audio event at frame {} arrives after one at frame {}",
                w[1].frame, w[0].frame
            )));
        }
    }
    if let Some(e) = audio_events.iter().find(|e| e.frame > n + one_second) {
        return Err(SessionError::Desync(format!(
            "audio event at frame {} is more than 1 s past the end of the {n}-frame video",
            e.frame
        )));
    }

    let scores = activity_scores(video, cfg.tau_noise)?;
    let segments = detect_segments(&scores, &cfg.detector)?;
    // (start, end, emitted_at, consumed)
    let mut gestures: Vec<(usize, usize, usize, bool)> = segments
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| (c[0].frame, c[1].frame, c[1].emitted_at, false))
        .collect();

    let rank = |s: usize, e: usize| -> Result<Vec<(CommandId, f64)>> {
        let from = s.saturating_sub(1);
        if e - from < cfg.min_gesture_frames {
            return Ok(vec![]);
        }
        let clip = video.slice(from, e)?;
        Ok(gesture_two_best(gesture.rank(&clip).map_err(SessionError::Gesture)?))
    };

    // Inputs to fuse, in decision order: (decision frame, trigger frame, speech, gesture).
    let mut pending: Vec<(usize, usize, NBest, Vec<(CommandId, f64)>)> = Vec::new();
    for ev in audio_events {
        let nbest = classify_command(&ev.features, &speech.templates, &speech.grammar, speech.transform.as_ref())?;
        let nbest = keyword_gate(nbest, ev.keyword_score, cfg.keyword_threshold);
        // Gesture segments that overlap the utterance's window or are still open at it.
        let lo = ev.frame.saturating_sub(cfg.fusion_window);
        let mut decision_frame = ev.frame;
        let mut g = Vec::new();
        if let Some(seg) = gestures
            .iter_mut()
            .find(|s| !s.3 && s.1 >= lo && s.0 <= ev.frame + 1)
        {
            seg.3 = true;
            decision_frame = decision_frame.max(seg.2);
            g = rank(seg.0, seg.1)?;
        }
        pending.push((decision_frame, ev.frame, nbest, g));
    }
    for seg in gestures.iter().filter(|s| !s.3) {
        pending.push((seg.2, seg.1, NBest::default(), rank(seg.0, seg.1)?));
    }
    pending.sort_by_key(|p| (p.0, p.1));

    let mut fsm = Fsm::default();
    let mut log = Vec::new();
    let mut transitions = Vec::new();
    for ((decision_frame, trigger, nbest, g), st) in pending.into_iter().zip(script) {
        let (recognized, source, fallback, state_after) = match fuse(&nbest, &g, cfg.fallback) {
            Ok(d) => {
                let t = fsm.step(d.command)?;
                let state = t.to;
                transitions.push(t);
                (Some(Command::from_id(d.command)?), Some(d.source), d.fallback, state)
            }
            Err(SessionError::NoInput) | Err(SessionError::Disagreement { .. }) => (None, None, false, fsm.state),
            Err(e) => return Err(e),
        };
        log.push(LogEntry {
            step_id: st.step_id,
            command: st.command,
            modality: st.modality,
            performed_ok: st.performed_ok,
            recognized,
            source,
            fallback,
            latency_frames: decision_frame.saturating_sub(trigger),
            state_after,
        });
    }
    Ok(SessionOutcome {
        log,
        final_state: fsm.state,
        segments,
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DetectorParams {
        DetectorParams {
            theta_on: 0.02,
            theta_off: 0.01,
            min_dur: 3,
            max_gap: 4,
        }
    }

    #[test]
    fn activity_fixtures() {
        let a = GrayFrame::new(4, 4, (0..16).map(|i| if i % 2 == 0 { 128 } else { 255 }).collect()).unwrap();
        // Inverting the two-level pattern swaps mid-gray and white.
        let inv = GrayFrame::new(4, 4, a.data().iter().map(|&v| if v == 128 { 255 } else { 128 }).collect()).unwrap();
        assert_eq!(activity_score(&a, &a, 12.0).unwrap(), 0.0);
        assert_eq!(activity_score(&a, &inv, 12.0).unwrap(), 1.0);
        let base = GrayFrame::filled(10, 10, 100).unwrap();
        let mut d = base.data().to_vec();
        for v in d.iter_mut().take(10) {
            *v += 24;
        }
        let changed = GrayFrame::new(10, 10, d).unwrap();
        assert!((activity_score(&base, &changed, 12.0).unwrap() - 0.10).abs() <= 0.01);
        let other = GrayFrame::filled(5, 10, 0).unwrap();
        assert!(matches!(activity_score(&base, &other, 12.0), Err(SessionError::DimensionMismatch)));
    }

    #[test]
    fn detector_pulse() {
        assert!(detect_segments(&[0.0; 20], &params()).unwrap().is_empty());
        let mut s = vec![0.0; 30];
        for v in &mut s[5..12] {
            *v = 0.5;
        }
        let ev = detect_segments(&s, &params()).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].kind, ev[0].frame), (SegmentKind::Start, 5));
        assert_eq!((ev[1].kind, ev[1].frame), (SegmentKind::End, 12));
        assert_eq!(ev[1].emitted_at, 12 + 4 - 1);
    }

    #[test]
    fn detector_merges_and_suppresses() {
        let mut s = vec![0.0; 40];
        s[5..10].fill(0.5);
        s[12..18].fill(0.5);
        // A two-frame blip is shorter than min_dur.
        s[30] = 0.5;
        s[31] = 0.5;
        let ev = detect_segments(&s, &params()).unwrap();
        assert_eq!(segment_ranges(&ev), vec![(5, 18)]);
        // Hysteresis: values between the thresholds keep a segment open but never open one.
        let mut h = vec![0.015; 20];
        assert!(detect_segments(&h, &params()).unwrap().is_empty());
        h[2] = 0.5;
        assert_eq!(segment_ranges(&detect_segments(&h, &params()).unwrap()), vec![(2, 20)]);
        let bad = DetectorParams {
            theta_on: 0.01,
            theta_off: 0.02,
            ..params()
        };
        assert!(matches!(detect_segments(&s, &bad), Err(SessionError::Config(_))));
    }

    fn nb(ids: &[CommandId]) -> NBest {
        NBest::from_scores(ids.iter().enumerate().map(|(i, &c)| (c, i as f64)).collect())
    }

    #[test]
    fn fusion_examples() {
        use audio::{HALT, REPEAT, STOP};
        let d = fuse(&nb(&[STOP]), &[(STOP, 1.0), (HALT, 0.5)], true).unwrap();
        assert_eq!((d.command, d.source), (STOP, FusionSource::Agreed));
        let d = fuse(&nb(&[STOP]), &[(REPEAT, 1.0), (HALT, 0.5)], true).unwrap();
        assert_eq!((d.command, d.source, d.fallback), (STOP, FusionSource::SpeechOnly, true));
        let d = fuse(&NBest::default(), &[(HALT, 1.0), (STOP, 0.5)], true).unwrap();
        assert_eq!((d.command, d.source), (HALT, FusionSource::GestureOnly));
        assert!(matches!(fuse(&NBest::default(), &[], true), Err(SessionError::NoInput)));
        assert!(matches!(
            fuse(&nb(&[STOP]), &[(REPEAT, 1.0)], false),
            Err(SessionError::Disagreement { .. })
        ));
    }

    #[test]
    fn fsm_table() {
        use audio::*;
        let t = fsm_step(FsmState::Paused(Activity::WashingLegs), REPEAT).unwrap();
        assert_eq!(t.to, FsmState::WashingLegs);
        let t = fsm_step(FsmState::Idle, REPEAT).unwrap();
        assert!(t.refused);
        assert_eq!(t.to, FsmState::Idle);
        assert_eq!(t.feedback, Feedback::CannotComply);
        for s in [
            FsmState::Idle,
            FsmState::WashingBack,
            FsmState::Paused(Activity::ScrubbingBack),
            FsmState::Halted,
        ] {
            assert_eq!(fsm_step(s, HALT).unwrap().to, FsmState::Halted);
        }
        for c in [WASH_LEGS, WASH_BACK, SCRUB_BACK, STOP, REPEAT] {
            let t = fsm_step(FsmState::Halted, c).unwrap();
            assert!(t.refused);
            assert_eq!(t.to, FsmState::Halted);
        }
        assert!(matches!(fsm_step(FsmState::Idle, 42), Err(SessionError::UnknownCommand(42))));
    }

    #[test]
    fn script_round_trip() {
        let s = legs_script();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"modality\":\"A\""));
        assert_eq!(read_script(buf.as_slice()).unwrap(), s);
        assert_eq!(read_script(&b"{\"step_id\":1,\"command\":\"Halt\",\"modality\":\"A-G\"}\n"[..]).unwrap()[0].performed_ok, true);
        assert!(read_script(&b"{\"step_id\":1}\n"[..]).is_err());
    }

    #[test]
    fn gesture_two_best_rejects_background() {
        assert!(gesture_two_best(vec![(0, 2.0), (3, 1.0)]).is_empty());
        assert_eq!(gesture_two_best(vec![(0, 0.5), (3, 1.0), (6, 0.7)]), vec![(3, 1.0), (6, 0.7)]);
    }
}
