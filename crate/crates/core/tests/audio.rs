use agcr::audio::{
    adapt_speaker, classify_command, dtw_frames, dtw_path, mfcc, AdaptParams, CommandGrammar, MfccSeq, SpeakerTransform,
};
use agcr::selftest::{dtw_brute_force, enrollment_templates, short_sequences};
use agcr::synth::generate_command_audio;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dtw_matches_exhaustive_path_enumeration() {
    let seqs = short_sequences();
    assert!(seqs.len() >= 20);
    for a in &seqs {
        for b in &seqs {
            let fast = dtw_frames(a, b).unwrap();
            let slow = dtw_brute_force(a, b);
            assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
        }
    }
}

#[test]
fn dtw_is_symmetric_and_zero_on_self() {
    let seqs = short_sequences();
    for a in &seqs {
        assert_eq!(dtw_frames(a, a).unwrap(), 0.0);
        for b in &seqs {
            assert!((dtw_frames(a, b).unwrap() - dtw_frames(b, a).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn dtw_path_is_monotone_and_anchored() {
    let seqs = short_sequences();
    let (a, b) = (&seqs[1], &seqs[seqs.len() - 1]);
    let path = dtw_path(a, b).unwrap();
    assert_eq!(path[0], (0, 0));
    assert_eq!(*path.last().unwrap(), (a.len() - 1, b.len() - 1));
    for w in path.windows(2) {
        let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        assert!(di <= 1 && dj <= 1 && di + dj >= 1);
    }
}

#[test]
fn commands_are_recognized_across_speakers_at_20db() {
    let grammar = CommandGrammar::online();
    let templates = enrollment_templates(&grammar, 3).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for spk in 40..44u64 {
        for id in grammar.ids() {
            let a = generate_command_audio(&grammar, id, spk, Some(20.0), spk * 7 + u64::from(id)).unwrap();
            let feats = mfcc(&a.samples, a.sample_rate).unwrap();
            hits += usize::from(classify_command(&feats, &templates, &grammar, None).unwrap().top() == Some(id));
            total += 1;
        }
    }
    assert!(hits * 100 >= total * 95, "{hits}/{total}");
}

#[test]
fn adaptation_recovers_a_known_affine_distortion() {
    let grammar = CommandGrammar::online();
    let templates = enrollment_templates(&grammar, 5).unwrap();
    let d = templates.values().next().unwrap()[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut dist = SpeakerTransform::identity(d);
    for v in dist.a.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    for v in dist.b.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let inv = dist.matrix().try_inverse().unwrap();
    let enroll: Vec<(u32, MfccSeq)> = templates
        .iter()
        .map(|(&id, s)| {
            let seq = s[0].map_frames(|y| {
                let centered = DVector::from_iterator(d, y.iter().zip(&dist.b).map(|(a, b)| a - b));
                (&inv * centered).iter().copied().collect()
            });
            (id, seq)
        })
        .collect();
    let ad = adapt_speaker(&templates, &enroll, &AdaptParams::default()).unwrap();
    assert!(!ad.transform.bias_only);
    let num: f64 = ad
        .transform
        .a
        .iter()
        .zip(&dist.a)
        .chain(ad.transform.b.iter().zip(&dist.b))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = dist.a.iter().chain(&dist.b).map(|x| x * x).sum::<f64>().sqrt();
    assert!(num / den <= 1e-3, "relative error {}", num / den);
    assert!(ad.objective <= ad.identity_objective);
}

#[test]
fn adaptation_needs_three_distinct_commands() {
    let grammar = CommandGrammar::online();
    let templates = enrollment_templates(&grammar, 5).unwrap();
    let two: Vec<(u32, MfccSeq)> = templates.iter().take(2).map(|(&id, s)| (id, s[0].clone())).collect();
    assert!(adapt_speaker(&templates, &two, &AdaptParams::default()).is_err());
}
