use agcr::audio::{CommandGrammar, NBest};
use agcr::config::PipelineConfig;
use agcr::eval::{accuracy, first_attempt_curve, mcrr, user_performance, EvalError};
use agcr::selftest::{enrollment_templates, metrics_fixture, synthetic_classifier, SelftestParams};
use agcr::session::{
    back_script, fsm_step, fuse, legs_script, run_session, Activity, Command, Feedback, FsmState, FusionSource,
    GestureRecognizer, SessionError, SpeechModel, StepModality,
};
use agcr::stream::Clip;
use agcr::synth::{synthesize_session, GestureStream, SessionSpec, BACKGROUND_CLASS};

#[test]
fn fusion_truth_table() {
    let speech = NBest::from_scores(vec![(2, 0.4), (5, 0.7), (3, 1.1)]);
    let none = NBest::default();
    let d = fuse(&speech, &[], true).unwrap();
    assert_eq!((d.command, d.source, d.fallback), (2, FusionSource::SpeechOnly, false));
    let d = fuse(&none, &[(5, 1.0), (2, 0.2)], true).unwrap();
    assert_eq!((d.command, d.source), (5, FusionSource::GestureOnly));
    let d = fuse(&speech, &[(2, 1.0), (5, 0.2)], true).unwrap();
    assert_eq!((d.command, d.source), (2, FusionSource::Agreed));
    // Found at gesture rank two still counts as agreement.
    let d = fuse(&speech, &[(5, 1.0), (2, 0.2)], true).unwrap();
    assert_eq!((d.command, d.source), (2, FusionSource::Agreed));
    let d = fuse(&speech, &[(5, 1.0), (3, 0.2), (2, 0.1)], true).unwrap();
    assert_eq!((d.command, d.source, d.fallback), (2, FusionSource::SpeechOnly, true));
    assert!(matches!(fuse(&speech, &[(5, 1.0), (3, 0.2)], false), Err(SessionError::Disagreement { speech: 2 })));
    assert!(matches!(fuse(&none, &[], true), Err(SessionError::NoInput)));
}

#[test]
fn fsm_replays_both_protocols() {
    use FsmState::*;
    let legs = [
        (WashingLegs, Feedback::StartWashLegs),
        (Paused(Activity::WashingLegs), Feedback::Paused),
        (WashingLegs, Feedback::Resumed),
        (Halted, Feedback::Halted),
        (Halted, Feedback::CannotComply),
        (Halted, Feedback::Halted),
        (Halted, Feedback::Halted),
    ];
    let back = [
        (WashingBack, Feedback::StartWashBack),
        (Halted, Feedback::Halted),
        (Halted, Feedback::CannotComply),
        (Halted, Feedback::CannotComply),
        (Halted, Feedback::CannotComply),
        (Halted, Feedback::Halted),
        (Halted, Feedback::Halted),
    ];
    for (script, table) in [(legs_script(), legs), (back_script(), back)] {
        let mut s = Idle;
        for (st, want) in script.iter().zip(table) {
            let t = fsm_step(s, st.command.id()).unwrap();
            assert_eq!((t.to, t.feedback), want, "step {}", st.step_id);
            assert_eq!(t.refused, want.1 == Feedback::CannotComply);
            s = t.to;
        }
    }
}

#[test]
fn halted_only_accepts_halt() {
    for c in [Command::WashLegs, Command::WashBack, Command::ScrubBack, Command::Stop, Command::Repeat] {
        let t = fsm_step(FsmState::Halted, c.id()).unwrap();
        assert!(t.refused);
        assert_eq!(t.to, FsmState::Halted);
    }
    assert!(!fsm_step(FsmState::Halted, Command::Halt.id()).unwrap().refused);
}

#[test]
fn fixture_metrics_match_hand_tally() {
    let logs = metrics_fixture();
    let all: Vec<_> = logs.iter().flatten().cloned().collect();
    let m = mcrr(&all).unwrap();
    assert_eq!((m.num, m.den), (15, 18));
    let a = accuracy(&all).unwrap();
    assert_eq!((a.num, a.den), (16, 21));
    let ua = user_performance(&all, Some(StepModality::Audio)).unwrap();
    assert_eq!((ua.num, ua.den), (11, 12));
    let ug = user_performance(&all, Some(StepModality::AudioGestural)).unwrap();
    assert_eq!((ug.num, ug.den), (7, 9));

    let curve = first_attempt_curve(&logs, &legs_script()).unwrap();
    assert_eq!(curve.len(), 7);
    // The curve counts user performance: a misrecognition on step 2 does not
    // lower it, user 2 getting step 3 wrong does.
    assert_eq!((curve[1].successes, curve[1].n), (3, 3));
    assert_eq!((curve[2].successes, curve[2].n), (2, 3));

    let nobody: Vec<_> = all.iter().cloned().map(|mut e| {
        e.performed_ok = false;
        e
    }).collect();
    assert!(matches!(mcrr(&nobody), Err(EvalError::Undefined(_))));
    assert!(matches!(accuracy(&[]), Err(EvalError::EmptyLog)));
}

/// Never sees a gesture: every decision must come from speech.
struct Blind;

impl GestureRecognizer for Blind {
    fn rank(&self, _: &Clip) -> Result<Vec<(u32, f64)>, String> {
        Ok(vec![(BACKGROUND_CLASS, 1.0), (1, 0.0)])
    }
}

fn speech(seed: u64) -> SpeechModel {
    let grammar = CommandGrammar::online();
    SpeechModel {
        templates: enrollment_templates(&grammar, seed).unwrap(),
        grammar,
        transform: None,
    }
}

#[test]
fn speech_alone_completes_the_legs_protocol() {
    let cfg = PipelineConfig::default();
    let script = legs_script();
    let ss = synthesize_session(&script, &SessionSpec::default(), 3).unwrap();
    let out = run_session(&ss.video, &ss.audio, &Blind, &speech(cfg.seed), &script, &cfg.session_config().unwrap()).unwrap();
    assert_eq!(out.log.len(), 7);
    assert!(out.log.iter().all(|e| e.source == Some(FusionSource::SpeechOnly)));
    assert_eq!(mcrr(&out.log).unwrap().percent, 100.0);
    assert_eq!(out.final_state, FsmState::Halted);
}

#[test]
fn keyword_gate_silences_speech() {
    let mut cfg = PipelineConfig::default();
    cfg.keyword_threshold = 1.0;
    let script = legs_script();
    let mut ss = synthesize_session(&script, &SessionSpec::default(), 3).unwrap();
    for e in &mut ss.audio {
        e.keyword_score = 0.5;
    }
    let out = run_session(&ss.video, &ss.audio, &Blind, &speech(cfg.seed), &script, &cfg.session_config().unwrap()).unwrap();
    assert!(out.log.iter().all(|e| e.recognized.is_none()));
    assert_eq!(out.final_state, FsmState::Idle);
}

#[test]
fn trained_classifier_agrees_on_gestural_steps() {
    let cfg = PipelineConfig::default();
    let clf = synthetic_classifier(&SelftestParams {
        clips_per_class: 6,
        codebook_clips_per_class: 3,
        ..SelftestParams::default()
    })
    .unwrap();
    let script = legs_script();
    let scfg = cfg.session_config().unwrap();
    let sp = speech(cfg.seed);
    let clean = synthesize_session(&script, &SessionSpec::default(), 5).unwrap();
    let out = run_session(&clean.video, &clean.audio, &clf, &sp, &script, &scfg).unwrap();
    assert_eq!(mcrr(&out.log).unwrap().percent, 100.0);
    let agreed = out
        .log
        .iter()
        .filter(|e| e.modality == StepModality::AudioGestural && e.source == Some(FusionSource::Agreed))
        .count();
    assert!(agreed >= 2, "{:?}", out.log.iter().map(|e| e.source).collect::<Vec<_>>());

    let spec = SessionSpec {
        gestures: GestureStream::Background,
        ..SessionSpec::default()
    };
    let noisy = synthesize_session(&script, &spec, 5).unwrap();
    let out = run_session(&noisy.video, &noisy.audio, &clf, &sp, &script, &scfg).unwrap();
    assert_eq!(mcrr(&out.log).unwrap().percent, 100.0);
    assert_eq!(out.final_state, FsmState::Halted);
}
