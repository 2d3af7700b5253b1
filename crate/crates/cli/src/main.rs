use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agcr::audio::{
    self, adapt_speaker, classify_command, load_templates, mfcc, read_wav, write_manifest, write_wav, AdaptParams,
    CommandGrammar, Language, SpeakerTransform, TemplateEntry, TemplateSet,
};
use agcr::config::PipelineConfig;
use agcr::encoding::{read_encoded, write_encoded, Channel, ChannelHists, EncodedVideo};
use agcr::eval::{loo_cv, write_curve_csv, EvalReport, Sample, TaskReport};
use agcr::gesture::{extract_all, CodebookSet, GestureClassifier};
use agcr::selftest::{self, SelftestParams};
use agcr::session::{
    activity_scores, back_script, detect_segments, legs_script, read_log, read_script, run_session, write_jsonl,
    AudioEvent, ScriptStep, SpeechModel,
};
use agcr::stream::{read_annotations, write_annotations, Annotation, Clip};
use agcr::svm::{train_linear_svm, ChiSquareSvm, SvmModelFile};
use agcr::synth::{
    generate_command_audio, generate_gesture_clip, synthesize_session, GestureSpec, GestureStream, MotionPattern,
    SessionSpec,
};
use agcr::trajectory::{read_features, track, write_features, Trajectory};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Multimodal gesture and spoken-command recognition toolkit.
#[derive(Parser)]
#[command(name = "agcr", version)]
struct Cli {
    /// Pipeline configuration file (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 gives the canonical sequential order.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit synthetic corpora.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Clips to trajectory feature files (.igtf).
    Extract {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        clips: Vec<PathBuf>,
    },
    /// Learn one codebook per descriptor channel.
    Codebook {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(required = true)]
        features: Vec<PathBuf>,
    },
    /// Encode feature files with BoVW (.igev) or VLAD (JSON lines).
    Encode {
        #[arg(long, value_enum, default_value_t = EncodeMode::Bovw)]
        mode: EncodeMode,
        #[arg(long)]
        codebooks: PathBuf,
        /// Annotation sidecar supplying labels and subjects by clip name.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        features: Vec<PathBuf>,
    },
    /// Train classifiers.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Classify a gesture clip or a spoken command.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Activity segments of a clip as JSON lines.
    Detect {
        clip: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scripted session through detection, recognition, fusion and the FSM.
    Simulate(SimulateArgs),
    /// Metrics, curves and leave-one-subject-out evaluation.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// Run the full acceptance suite on synthetic data.
    Selftest {
        #[arg(long, default_value_t = 2016)]
        seed: u64,
        /// Write the text report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Gesture clips (RGB and log-depth) with an annotation sidecar.
    Gestures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        clips_per_class: usize,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Spoken commands as WAV files with a template manifest.
    Audio {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: u64,
        /// Additive white noise; clean when omitted.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// A continuous session: video clip, WAV utterances and an event list.
    Session {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
    },
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// `legs`, `back` or a script file (JSON lines).
    #[arg(long, default_value = "legs")]
    script: String,
    #[arg(long, value_enum, default_value_t = Gestures::Clean)]
    gestures: Gestures,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gestures {
    Clean,
    Background,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EncodeMode {
    Bovw,
    Vlad,
}

#[derive(Clone, Copy, ValueEnum)]
enum SvmKind {
    Kernel,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channels {
    Comb,
    Traj,
    Hog,
    Hof,
    Mbh,
}

impl Channels {
    fn list(self) -> Vec<Channel> {
        match self {
            Channels::Comb => Channel::ALL.to_vec(),
            Channels::Traj => vec![Channel::Traj],
            Channels::Hog => vec![Channel::Hog],
            Channels::Hof => vec![Channel::Hof],
            Channels::Mbh => vec![Channel::Mbh],
        }
    }
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Chi-square kernel SVM on BoVW (.igev) or linear SVM on VLAD (JSON lines).
    Svm {
        #[arg(long, value_enum, default_value_t = SvmKind::Kernel)]
        kind: SvmKind,
        #[arg(long)]
        encoded: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long, value_enum, default_value_t = Channels::Comb)]
        channels: Channels,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a speaker transform from enrollment utterances against a template manifest.
    Audio {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// A clip (.igsc) or feature file (.igtf).
    Gesture {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        input: PathBuf,
    },
    /// A WAV utterance against the online command grammar.
    Audio {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        transform: Option<PathBuf>,
        wav: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Directory written by `synth session`; synthesized in memory when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Template manifest; synthetic speakers when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Clips per class for the synthetic gesture training corpus.
    #[arg(long, default_value_t = 8)]
    train_clips: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCmd {
    /// MCRR, accuracy, user performance and first-attempt curves over session logs.
    Session {
        /// `legs`, `back` or a script file.
        #[arg(long, default_value = "legs")]
        script: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Leave-one-subject-out chi-square SVM on encoded clips. The codebooks
    /// behind the encoding must come from clips outside the evaluated set.
    Loo {
        #[arg(long)]
        encoded: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum, default_value_t = Channels::Comb)]
        channels: Channels,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct VladRow {
    clip: String,
    label: Option<u32>,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    frame: usize,
    wav: String,
    keyword_score: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Cmd::Synth(s) => synth(s, &cfg)?,
        Cmd::Extract { out, clips } => {
            std::fs::create_dir_all(&out)?;
            let loaded = clips
                .iter()
                .map(|p| Clip::load(p).with_context(|| format!("clip {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let feats = extract_all(&loaded.iter().collect::<Vec<_>>(), &cfg.track_params())?;
            for (path, f) in clips.iter().zip(&feats) {
                let dest = out.join(format!("{}.igtf", stem(path)));
                write_features(BufWriter::new(File::create(&dest)?), f)?;
                println!("{}\t{}", dest.display(), f.len());
            }
        }
        Cmd::Codebook { out, k, features } => {
            let feats = load_features(&features, cfg.traj_len)?;
            let refs: Vec<&[Trajectory]> = feats.iter().map(|f| f.as_slice()).collect();
            let mut params = cfg.codebook_params();
            if let Some(k) = k {
                params.k = k;
            }
            let books = CodebookSet::train(&refs, &Channel::ALL, &params)?;
            books.save_dir(&out)?;
            for (ch, h) in books.hashes() {
                println!("{}\t{}", ch.name(), hex(&h));
            }
        }
        Cmd::Encode {
            mode,
            codebooks,
            annotations,
            out,
            features,
        } => {
            let books = CodebookSet::load_dir(&codebooks)?;
            let labels = annotation_map(annotations.as_deref())?;
            let feats = load_features(&features, cfg.traj_len)?;
            let names: Vec<String> = features.iter().map(|p| stem(p)).collect();
            match mode {
                EncodeMode::Bovw => {
                    let videos = names
                        .iter()
                        .zip(&feats)
                        .map(|(n, f)| {
                            Ok(EncodedVideo {
                                clip: n.clone(),
                                label: labels.get(n).and_then(|a| a.label),
                                hists: books.encode_counts(f)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    write_encoded(BufWriter::new(File::create(&out)?), &videos)?;
                }
                EncodeMode::Vlad => {
                    let rows = names
                        .iter()
                        .zip(&feats)
                        .map(|(n, f)| {
                            Ok(VladRow {
                                clip: n.clone(),
                                label: labels.get(n).and_then(|a| a.label),
                                vector: books.encode_vlad(f)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    write_jsonl(BufWriter::new(File::create(&out)?), &rows)?;
                }
            }
            println!("{} clips encoded", feats.len());
        }
        Cmd::Train(t) => train(t, &cfg)?,
        Cmd::Classify(c) => classify(c, &cfg)?,
        Cmd::Detect { clip, out } => {
            let clip = Clip::load(&clip)?;
            let scfg = cfg.session_config()?;
            let events = detect_segments(&activity_scores(&clip, scfg.tau_noise)?, &scfg.detector)?;
            match out {
                Some(p) => write_jsonl(BufWriter::new(File::create(p)?), &events)?,
                None => write_jsonl(std::io::stdout().lock(), &events)?,
            }
        }
        Cmd::Simulate(a) => simulate(a, &cfg)?,
        Cmd::Evaluate(e) => return evaluate(e, &cfg),
        Cmd::Selftest { seed, out, json } => {
            let report = selftest::run(&SelftestParams {
                seed,
                config: cfg,
                ..SelftestParams::default()
            });
            let text = report.render();
            match out {
                Some(p) => std::fs::write(p, &text)?,
                None => print!("{text}"),
            }
            if let Some(p) = json {
                std::fs::write(p, report.to_json())?;
            }
            if !report.passed() {
                eprintln!("selftest failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_features(paths: &[PathBuf], traj_len: usize) -> Result<Vec<Vec<Trajectory>>> {
    paths
        .iter()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("features {}", p.display()))?;
            read_features(BufReader::new(f), traj_len).with_context(|| format!("features {}", p.display()))
        })
        .collect()
}

fn annotation_map(path: Option<&Path>) -> Result<std::collections::BTreeMap<String, Annotation>> {
    let Some(p) = path else {
        return Ok(Default::default());
    };
    let rows = read_annotations(BufReader::new(File::open(p)?))?;
    Ok(rows.into_iter().map(|a| (a.clip.clone(), a)).collect())
}

fn script_arg(s: &str) -> Result<Vec<ScriptStep>> {
    Ok(match s {
        "legs" => legs_script(),
        "back" => back_script(),
        path => read_script(BufReader::new(File::open(path).with_context(|| format!("script {path}"))?))?,
    })
}

fn synth(cmd: SynthCmd, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        SynthCmd::Gestures {
            out,
            clips_per_class,
            frames,
            seed,
        } => {
            std::fs::create_dir_all(out.join("rgb"))?;
            std::fs::create_dir_all(out.join("logdepth"))?;
            let mut ann = Vec::new();
            for pat in MotionPattern::ALL {
                for i in 0..clips_per_class {
                    let s = seed.wrapping_mul(1_000_003) ^ (u64::from(pat.class_id()) << 20 | i as u64);
                    let g = generate_gesture_clip(&GestureSpec::jittered(pat, s), s, frames, cfg.traj_len + 1)?;
                    let name = format!("{}_{i:03}", pat.name());
                    g.rgb.save(out.join("rgb").join(format!("{name}.igsc")))?;
                    g.log_depth.save(out.join("logdepth").join(format!("{name}.igsc")))?;
                    ann.push(Annotation {
                        clip: name,
                        label: Some(g.label),
                        subject: format!("subj{i:03}"),
                        task: pat.name().into(),
                        start_frame: 0,
                        end_frame: frames as u32,
                    });
                }
            }
            write_annotations(BufWriter::new(File::create(out.join("annotations.jsonl"))?), &ann)?;
            println!("{} clips", ann.len());
        }
        SynthCmd::Audio {
            out,
            speakers,
            snr,
            seed,
        } => {
            std::fs::create_dir_all(&out)?;
            let grammar = CommandGrammar::online();
            let mut entries = Vec::new();
            for spk in seed..seed + speakers {
                for id in grammar.ids() {
                    let a = generate_command_audio(&grammar, id, spk, snr, spk * 97 + u64::from(id))?;
                    let file = format!("spk{spk}_cmd{id}.wav");
                    write_wav(&out.join(&file), &a.samples, a.sample_rate)?;
                    entries.push(TemplateEntry {
                        command_id: id,
                        language: Language::En,
                        speaker: format!("spk{spk}"),
                        path: file.into(),
                    });
                }
            }
            write_manifest(&out.join("manifest.json"), &entries)?;
            println!("{} utterances", entries.len());
        }
        SynthCmd::Session { out, session } => {
            std::fs::create_dir_all(&out)?;
            let script = script_arg(&session.script)?;
            let ss = synthesize_session(&script, &session_spec(&session), session.seed)?;
            ss.video.save(out.join("video.igsc"))?;
            let grammar = CommandGrammar::online();
            let spec = session_spec(&session);
            let mut rows = Vec::new();
            for (st, ev) in script.iter().zip(&ss.audio) {
                let a = generate_command_audio(
                    &grammar,
                    st.command.id(),
                    spec.speaker_seed,
                    spec.snr_db,
                    session.seed ^ u64::from(st.step_id),
                )?;
                let file = format!("step{}.wav", st.step_id);
                write_wav(&out.join(&file), &a.samples, a.sample_rate)?;
                rows.push(EventRow {
                    frame: ev.frame,
                    wav: file,
                    keyword_score: ev.keyword_score,
                });
            }
            write_jsonl(BufWriter::new(File::create(out.join("events.jsonl"))?), &rows)?;
            println!("{} frames, {} utterances", ss.video.len(), rows.len());
        }
    }
    Ok(())
}

fn session_spec(a: &SessionArgs) -> SessionSpec {
    SessionSpec {
        gestures: match a.gestures {
            Gestures::Clean => GestureStream::Clean,
            Gestures::Background => GestureStream::Background,
        },
        ..SessionSpec::default()
    }
}

fn train(cmd: TrainCmd, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        TrainCmd::Svm {
            kind,
            encoded,
            codebooks,
            channels,
            out,
        } => {
            let books = CodebookSet::load_dir(&codebooks)?;
            let hashes = books.hashes();
            let model = match kind {
                SvmKind::Kernel => {
                    let videos = read_encoded(BufReader::new(File::open(&encoded)?))?;
                    let (hists, labels) = labeled_hists(&videos)?;
                    SvmModelFile::Kernel(ChiSquareSvm::train(hists, &labels, &channels.list(), hashes, &cfg.smo_params())?)
                }
                SvmKind::Linear => {
                    let rows: Vec<VladRow> = read_jsonl(&encoded)?;
                    let mut x = Vec::new();
                    let mut y = Vec::new();
                    for r in rows {
                        let Some(l) = r.label else { bail!("clip {} has no label", r.clip) };
                        x.push(r.vector);
                        y.push(l);
                    }
                    SvmModelFile::Linear {
                        model: train_linear_svm(&x, &y, &cfg.dcd_params())?,
                        codebooks: hashes,
                    }
                }
            };
            model.write_to(BufWriter::new(File::create(&out)?))?;
            println!("model written to {}", out.display());
        }
        TrainCmd::Audio { manifest, enroll, out } => {
            let templates = load_templates(&manifest)?;
            let base = enroll.parent().unwrap_or(Path::new("."));
            let enrollment = audio::read_manifest(&enroll)?
                .into_iter()
                .map(|e| {
                    let (w, sr) = read_wav(&base.join(&e.path))?;
                    Ok((e.command_id, mfcc(&w, sr)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let ad = adapt_speaker(&templates, &enrollment, &AdaptParams::default())?;
            std::fs::write(&out, serde_json::to_string_pretty(&ad.transform)?)?;
            println!(
                "objective {:.4} (identity {:.4}), {} iterations{}",
                ad.objective,
                ad.identity_objective,
                ad.iterations,
                if ad.transform.bias_only { ", bias only" } else { "" }
            );
        }
    }
    Ok(())
}

/// Normalized histograms and labels; every clip must be labeled.
fn labeled_hists(videos: &[EncodedVideo]) -> Result<(Vec<ChannelHists>, Vec<u32>)> {
    let mut hists = Vec::new();
    let mut labels = Vec::new();
    for v in videos {
        let Some(l) = v.label else { bail!("clip {} has no label", v.clip) };
        hists.push(ChannelHists::from_bovw(&v.hists));
        labels.push(l);
    }
    Ok((hists, labels))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn classify(cmd: ClassifyCmd, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        ClassifyCmd::Gesture { model, codebooks, input } => {
            let model = SvmModelFile::read_from(BufReader::new(File::open(&model)?))?;
            let books = CodebookSet::load_dir(&codebooks)?;
            model.check_codebooks(&books.hashes()).context("codebooks do not match the model")?;
            let trajs = if input.extension().is_some_and(|e| e == "igtf") {
                read_features(BufReader::new(File::open(&input)?), cfg.traj_len)?
            } else {
                track(&Clip::load(&input)?, &cfg.track_params())?.trajectories
            };
            let pred = match &model {
                SvmModelFile::Kernel(m) => m.predict(&books.encode(&trajs)?)?,
                SvmModelFile::Linear { model, .. } => model.predict(&books.encode_vlad(&trajs)?)?,
            };
            println!("class\t{}", pred.class);
            for (c, s) in pred.ranked() {
                println!("{c}\t{s:.6}");
            }
        }
        ClassifyCmd::Audio {
            manifest,
            transform,
            wav,
        } => {
            let templates = load_templates(&manifest)?;
            let t: Option<SpeakerTransform> = match transform {
                Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
                None => None,
            };
            let (w, sr) = read_wav(&wav)?;
            let grammar = CommandGrammar::online();
            let nb = classify_command(&mfcc(&w, sr)?, &templates, &grammar, t.as_ref())?;
            for (id, d) in &nb.entries {
                let name = grammar.get(*id).map_or("?", |g| g.name.as_str());
                println!("{id}\t{name}\t{d:.6}");
            }
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs, cfg: &PipelineConfig) -> Result<()> {
    let script = script_arg(&a.session.script)?;
    let grammar = CommandGrammar::online();
    let templates: TemplateSet = match &a.manifest {
        Some(m) => load_templates(m)?,
        None => selftest::enrollment_templates(&grammar, cfg.seed).map_err(anyhow::Error::msg)?,
    };
    let (video, events) = match &a.input {
        Some(dir) => {
            let video = Clip::load(dir.join("video.igsc"))?;
            let rows: Vec<EventRow> = read_jsonl(&dir.join("events.jsonl"))?;
            let events = rows
                .into_iter()
                .map(|r| {
                    let (w, sr) = read_wav(&dir.join(&r.wav))?;
                    Ok(AudioEvent {
                        frame: r.frame,
                        features: mfcc(&w, sr)?,
                        keyword_score: r.keyword_score,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (video, events)
        }
        None => {
            let ss = synthesize_session(&script, &session_spec(&a.session), a.session.seed)?;
            (ss.video, ss.audio)
        }
    };
    let clf: GestureClassifier = selftest::synthetic_classifier(&SelftestParams {
        clips_per_class: a.train_clips,
        seed: cfg.seed,
        config: cfg.clone(),
        ..SelftestParams::default()
    })
    .map_err(anyhow::Error::msg)?;
    let speech = SpeechModel {
        templates,
        grammar,
        transform: None,
    };
    let outcome = run_session(&video, &events, &clf, &speech, &script, &cfg.session_config()?)?;
    write_jsonl(BufWriter::new(File::create(&a.out)?), &outcome.log)?;
    for e in &outcome.log {
        println!(
            "{}\t{:?}\t{}\t{}",
            e.step_id,
            e.command,
            e.recognized.map_or("-".into(), |c| format!("{c:?}")),
            e.source.map_or("-".into(), |s| format!("{s:?}"))
        );
    }
    println!("final state {:?}", outcome.final_state);
    Ok(())
}

fn evaluate(cmd: EvaluateCmd, cfg: &PipelineConfig) -> Result<ExitCode> {
    match cmd {
        EvaluateCmd::Session { script, out, logs } => {
            let script_steps = script_arg(&script)?;
            let logs = logs
                .iter()
                .map(|p| Ok(read_log(BufReader::new(File::open(p)?))?))
                .collect::<Result<Vec<_>>>()?;
            let task = TaskReport::from_logs(&script, &logs, &script_steps)?;
            std::fs::create_dir_all(&out)?;
            let mut csv = BufWriter::new(File::create(out.join("curve.csv"))?);
            write_curve_csv(&mut csv, &task.curve)?;
            csv.flush()?;
            let report = EvalReport {
                tasks: vec![task],
                experiments: vec![],
            };
            std::fs::write(out.join("report.json"), report.to_json())?;
            let text = report.render_text();
            std::fs::write(out.join("report.txt"), &text)?;
            print!("{text}");
        }
        EvaluateCmd::Loo {
            encoded,
            annotations,
            channels,
            out,
        } => {
            let videos = read_encoded(BufReader::new(File::open(&encoded)?))?;
            let ann = annotation_map(Some(&annotations))?;
            let mut samples = Vec::new();
            for v in &videos {
                let a = ann.get(&v.clip).with_context(|| format!("clip {} not annotated", v.clip))?;
                let Some(label) = v.label.or(a.label) else { bail!("clip {} has no label", v.clip) };
                samples.push(Sample {
                    id: v.clip.clone(),
                    subject: a.subject.clone(),
                    label,
                    data: ChannelHists::from_bovw(&v.hists),
                });
            }
            let mut subjects: Vec<String> = samples.iter().map(|s| s.subject.clone()).collect();
            subjects.sort();
            subjects.dedup();
            let chans = channels.list();
            let smo = cfg.smo_params();
            let r = loo_cv(
                &samples,
                &subjects,
                |train| {
                    let h = train.iter().map(|s| s.data.clone()).collect();
                    let l: Vec<u32> = train.iter().map(|s| s.label).collect();
                    ChiSquareSvm::train(h, &l, &chans, vec![], &smo).map_err(|e| e.to_string())
                },
                |m, s| m.predict(&s.data).map(|p| p.class).map_err(|e| e.to_string()),
            )?;
            let report = EvalReport {
                tasks: vec![],
                experiments: vec![("loo".into(), r)],
            };
            if let Some(p) = out {
                std::fs::write(p, report.to_json())?;
            }
            print!("{}", report.render_text());
        }
    }
    Ok(ExitCode::SUCCESS)
}
