//! Session metrics, first-attempt curves, leave-one-subject-out evaluation and
//! report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::session::{Command, LogEntry, ScriptStep, StepModality};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
    #[error("empty log")]
    EmptyLog,
    #[error("log does not follow the script: {0}")]
    ScriptMismatch(String),
    #[error("need at least two subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("leakage: sample {id} of test subject {subject} reaches training")]
    Leakage { id: String, subject: String },
    #[error("fold for subject {subject} failed: {message}")]
    Fold { subject: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A percentage with the counts it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub percent: f64,
    pub num: usize,
    pub den: usize,
}

impl Rate {
    pub fn new(num: usize, den: usize, what: &'static str) -> Result<Self> {
        if den == 0 {
            return Err(EvalError::Undefined(what));
        }
        Ok(Self {
            percent: 100.0 * num as f64 / den as f64,
            num,
            den,
        })
    }
}

/// Commands recognized correctly among those the user performed correctly.
pub fn mcrr(entries: &[LogEntry]) -> Result<Rate> {
    let performed: Vec<_> = entries.iter().filter(|e| e.performed_ok).collect();
    let hit = performed.iter().filter(|e| e.recognized_ok()).count();
    Rate::new(hit, performed.len(), "MCRR")
}

/// Commands recognized correctly among all attempts.
pub fn accuracy(entries: &[LogEntry]) -> Result<Rate> {
    if entries.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    let hit = entries.iter().filter(|e| e.recognized_ok()).count();
    Rate::new(hit, entries.len(), "accuracy")
}

/// Share of attempts the user performed correctly, optionally for one modality.
pub fn user_performance(entries: &[LogEntry], modality: Option<StepModality>) -> Result<Rate> {
    if entries.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    let sel: Vec<_> = entries.iter().filter(|e| modality.map_or(true, |m| e.modality == m)).collect();
    let ok = sel.iter().filter(|e| e.performed_ok).count();
    Rate::new(ok, sel.len(), "user performance")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step_id: u32,
    pub command: Command,
    pub modality: StepModality,
    /// Fraction of users who performed the step correctly at their first attempt.
    pub rate: Option<f64>,
    pub successes: usize,
    pub n: usize,
    /// No log contains this step.
    pub missing: bool,
}

/// First-attempt success per script step, in script order, across users.
pub fn first_attempt_curve(logs: &[Vec<LogEntry>], script: &[ScriptStep]) -> Result<Vec<CurvePoint>> {
    let by_id: BTreeMap<u32, &ScriptStep> = script.iter().map(|s| (s.step_id, s)).collect();
    for (u, log) in logs.iter().enumerate() {
        for e in log {
            match by_id.get(&e.step_id) {
                None => return Err(EvalError::ScriptMismatch(format!("user {u}: step {} not in script", e.step_id))),
                Some(s) if s.command != e.command => {
                    return Err(EvalError::ScriptMismatch(format!(
                        "user {u}: step {} is {:?} in the log but {:?} in the script",
                        e.step_id, e.command, s.command
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(script
        .iter()
        .map(|s| {
            let firsts: Vec<&LogEntry> = logs
                .iter()
                .filter_map(|log| log.iter().find(|e| e.step_id == s.step_id))
                .collect();
            let successes = firsts.iter().filter(|e| e.performed_ok).count();
            let n = firsts.len();
            CurvePoint {
                step_id: s.step_id,
                command: s.command,
                modality: s.modality,
                rate: (n > 0).then(|| successes as f64 / n as f64),
                successes,
                n,
                missing: n == 0,
            }
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(w, "step_id,command,modality,rate,n")?;
    for p in curve {
        let m = match p.modality {
            StepModality::Audio => "A",
            StepModality::AudioGestural => "A-G",
        };
        let rate = p.rate.map_or(String::new(), |r| format!("{r:.6}"));
        writeln!(w, "{},{:?},{},{},{}", p.step_id, p.command, m, rate, p.n)?;
    }
    Ok(())
}

/// A labeled item owned by one subject, with a dataset-unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub subject: String,
    pub label: u32,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub subject: String,
    pub accuracy: Rate,
    pub predictions: Vec<(String, u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooResult {
    pub folds: Vec<FoldResult>,
    /// Mean of per-fold accuracies.
    pub mean_accuracy: f64,
    /// Pooled over all test samples.
    pub pooled: Rate,
}

/// Fails if any test sample id, or any sample of the test subject, is in `train`.
pub fn audit_partition<T>(train: &[&Sample<T>], test: &[&Sample<T>], subject: &str) -> Result<()> {
    let test_ids: BTreeSet<&str> = test.iter().map(|s| s.id.as_str()).collect();
    for s in train {
        if s.subject == subject || test_ids.contains(s.id.as_str()) {
            return Err(EvalError::Leakage {
                id: s.id.clone(),
                subject: subject.to_string(),
            });
        }
    }
    Ok(())
}

/// Leave-one-subject-out: every training stage of a fold sees only the other
/// subjects. Subjects in `subjects` without samples are skipped with a warning.
pub fn loo_cv<T, M, Tr, Pr>(samples: &[Sample<T>], subjects: &[String], train: Tr, predict: Pr) -> Result<LooResult>
where
    T: Sync,
    M: Send,
    Tr: Fn(&[&Sample<T>]) -> std::result::Result<M, String> + Sync,
    Pr: Fn(&M, &Sample<T>) -> std::result::Result<u32, String> + Sync,
{
    if subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(subjects.len()));
    }
    let active: Vec<&String> = subjects
        .iter()
        .filter(|s| {
            let has = samples.iter().any(|x| &x.subject == *s);
            if !has {
                log::warn!("subject {s} has no samples; fold skipped");
            }
            has
        })
        .collect();
    // Test sets are disjoint by construction; each sample is tested exactly once
    // provided it belongs to a listed subject.
    let folds = active
        .par_iter()
        .map(|&subject| {
            let test: Vec<&Sample<T>> = samples.iter().filter(|s| &s.subject == subject).collect();
            let train_set: Vec<&Sample<T>> = samples.iter().filter(|s| &s.subject != subject).collect();
            audit_partition(&train_set, &test, subject)?;
            let fold_err = |message| EvalError::Fold {
                subject: subject.clone(),
                message,
            };
            let model = train(&train_set).map_err(fold_err)?;
            let mut predictions = Vec::with_capacity(test.len());
            for s in &test {
                let p = predict(&model, s).map_err(fold_err)?;
                predictions.push((s.id.clone(), s.label, p));
            }
            let correct = predictions.iter().filter(|p| p.1 == p.2).count();
            Ok(FoldResult {
                subject: subject.clone(),
                accuracy: Rate::new(correct, test.len(), "fold accuracy")?,
                predictions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = folds.iter().map(|f| f.accuracy.den).sum();
    let correct: usize = folds.iter().map(|f| f.accuracy.num).sum();
    let mean_accuracy = folds.iter().map(|f| f.accuracy.percent).sum::<f64>() / folds.len().max(1) as f64;
    Ok(LooResult {
        pooled: Rate::new(correct, total, "accuracy")?,
        mean_accuracy,
        folds,
    })
}

/// A rate pooled over all entries (micro) and averaged over users (macro).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averaged {
    pub micro: Rate,
    pub macro_percent: f64,
    pub users: usize,
}

fn averaged(logs: &[Vec<LogEntry>], f: impl Fn(&[LogEntry]) -> Result<Rate>) -> Result<Averaged> {
    let all: Vec<LogEntry> = logs.iter().flatten().cloned().collect();
    let micro = f(&all)?;
    let per_user: Vec<f64> = logs.iter().filter_map(|l| f(l).ok()).map(|r| r.percent).collect();
    Ok(Averaged {
        micro,
        macro_percent: per_user.iter().sum::<f64>() / per_user.len().max(1) as f64,
        users: per_user.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub task: String,
    pub mcrr: Averaged,
    pub accuracy: Averaged,
    pub speech_user_performance: Option<Rate>,
    pub gesture_user_performance: Option<Rate>,
    pub curve: Vec<CurvePoint>,
}

impl TaskReport {
    pub fn from_logs(task: &str, logs: &[Vec<LogEntry>], script: &[ScriptStep]) -> Result<Self> {
        let all: Vec<LogEntry> = logs.iter().flatten().cloned().collect();
        Ok(Self {
            task: task.to_string(),
            mcrr: averaged(logs, mcrr)?,
            accuracy: averaged(logs, accuracy)?,
            speech_user_performance: user_performance(&all, Some(StepModality::Audio)).ok(),
            gesture_user_performance: user_performance(&all, Some(StepModality::AudioGestural)).ok(),
            curve: first_attempt_curve(logs, script)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskReport>,
    /// Named classification experiments, e.g. per descriptor channel.
    pub experiments: Vec<(String, LooResult)>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        if !self.experiments.is_empty() {
            let _ = writeln!(s, "{:<28} {:>10} {:>10} {:>8}", "experiment", "mean %", "pooled %", "n");
            for (name, r) in &self.experiments {
                let _ = writeln!(
                    s,
                    "{:<28} {:>10.2} {:>10.2} {:>8}",
                    name, r.mean_accuracy, r.pooled.percent, r.pooled.den
                );
            }
            s.push('\n');
        }
        if !self.tasks.is_empty() {
            let _ = writeln!(
                s,
                "{:<8} {:>14} {:>14} {:>14} {:>14} {:>9} {:>9}",
                "task", "MCRR micro", "MCRR macro", "Acc micro", "Acc macro", "UP A", "UP A-G"
            );
            let up = |r: &Option<Rate>| r.map_or("-".to_string(), |r| format!("{:.1}", r.percent));
            for t in &self.tasks {
                let _ = writeln!(
                    s,
                    "{:<8} {:>14} {:>14.1} {:>14} {:>14.1} {:>9} {:>9}",
                    t.task,
                    format!("{:.1} ({}/{})", t.mcrr.micro.percent, t.mcrr.micro.num, t.mcrr.micro.den),
                    t.mcrr.macro_percent,
                    format!("{:.1} ({}/{})", t.accuracy.micro.percent, t.accuracy.micro.num, t.accuracy.micro.den),
                    t.accuracy.macro_percent,
                    up(&t.speech_user_performance),
                    up(&t.gesture_user_performance),
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{legs_script, FsmState};

    fn entry(step_id: u32, command: Command, performed_ok: bool, recognized: Option<Command>) -> LogEntry {
        LogEntry {
            step_id,
            command,
            modality: if step_id <= 4 { StepModality::Audio } else { StepModality::AudioGestural },
            performed_ok,
            recognized,
            source: None,
            fallback: false,
            latency_frames: 0,
            state_after: FsmState::Idle,
        }
    }

    #[test]
    fn mcrr_and_accuracy_arithmetic() {
        let mut log = Vec::new();
        for i in 0..10 {
            let hit = i < 8;
            log.push(entry(1, Command::Stop, true, if hit { Some(Command::Stop) } else { Some(Command::Halt) }));
        }
        assert_eq!(mcrr(&log).unwrap().percent, 80.0);
        assert_eq!(accuracy(&log).unwrap().percent, 80.0);
        let all: Vec<_> = (0..3).map(|_| entry(1, Command::Halt, true, Some(Command::Halt))).collect();
        assert_eq!(mcrr(&all).unwrap().percent, 100.0);
        let none = vec![entry(1, Command::Halt, false, None)];
        assert!(matches!(mcrr(&none), Err(EvalError::Undefined("MCRR"))));
        assert!(matches!(accuracy(&[]), Err(EvalError::EmptyLog)));
    }

    #[test]
    fn mcrr_exceeds_accuracy_with_user_errors() {
        // Perfect system; the user botched two of six commands.
        let log: Vec<_> = (0..6)
            .map(|i| {
                let ok = i >= 2;
                entry(1, Command::Stop, ok, if ok { Some(Command::Stop) } else { None })
            })
            .collect();
        let m = mcrr(&log).unwrap();
        let a = accuracy(&log).unwrap();
        assert_eq!(m.percent, 100.0);
        assert!(a.percent <= 100.0 && m.percent >= a.percent);
    }

    #[test]
    fn user_performance_split() {
        let log = vec![
            entry(1, Command::WashLegs, true, None),
            entry(2, Command::Stop, false, None),
            entry(5, Command::WashLegs, true, None),
            entry(6, Command::Halt, true, None),
        ];
        assert_eq!(user_performance(&log, None).unwrap(), Rate::new(3, 4, "").unwrap());
        assert_eq!(user_performance(&log, Some(StepModality::Audio)).unwrap().percent, 50.0);
        assert_eq!(user_performance(&log, Some(StepModality::AudioGestural)).unwrap().percent, 100.0);
    }

    #[test]
    fn curve_fixture() {
        let script = legs_script();
        let u1 = vec![entry(1, Command::WashLegs, true, None), entry(5, Command::WashLegs, false, None)];
        let u2 = vec![entry(1, Command::WashLegs, false, None), entry(1, Command::WashLegs, true, None)];
        let curve = first_attempt_curve(&[u1, u2], &script).unwrap();
        assert_eq!(curve[0].rate, Some(0.5));
        assert_eq!(curve[0].n, 2);
        assert_eq!(curve[4].rate, Some(0.0));
        assert!(curve[1].missing && curve[1].rate.is_none());
        let mut csv = Vec::new();
        write_curve_csv(&mut csv, &curve).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step_id,command,modality,rate,n\n1,WashLegs,A,0.500000,2\n"));
        let bad = vec![entry(9, Command::Halt, true, None)];
        assert!(matches!(first_attempt_curve(&[bad], &script), Err(EvalError::ScriptMismatch(_))));
    }

    fn sample(id: &str, subject: &str, label: u32) -> Sample<()> {
        Sample {
            id: id.into(),
            subject: subject.into(),
            label,
            data: (),
        }
    }

    #[test]
    fn loo_majority_oracle() {
        // Subject a: labels 1,1,2; subject b: labels 2,2.
        let data = vec![sample("a1", "a", 1), sample("a2", "a", 1), sample("a3", "a", 2), sample("b1", "b", 2), sample("b2", "b", 2)];
        let subjects = vec!["a".to_string(), "b".to_string()];
        let majority = |train: &[&Sample<()>]| -> std::result::Result<u32, String> {
            let mut counts = BTreeMap::new();
            for s in train {
                *counts.entry(s.label).or_insert(0) += 1;
            }
            Ok(counts.into_iter().max_by_key(|&(l, c)| (c, std::cmp::Reverse(l))).unwrap().0)
        };
        let r = loo_cv(&data, &subjects, majority, |m, _| Ok(*m)).unwrap();
        // Fold a trains on b (majority 2): 1/3. Fold b trains on a (majority 1): 0/2.
        assert_eq!(r.folds[0].accuracy.num, 1);
        assert_eq!(r.folds[0].accuracy.den, 3);
        assert_eq!(r.folds[1].accuracy.num, 0);
        assert_eq!(r.pooled, Rate::new(1, 5, "").unwrap());
        let covered: BTreeSet<_> = r.folds.iter().flat_map(|f| f.predictions.iter().map(|p| p.0.clone())).collect();
        assert_eq!(covered.len(), data.len());
    }

    #[test]
    fn loo_detects_leakage_and_skips_empty() {
        let mut data = vec![sample("a1", "a", 1), sample("b1", "b", 2)];
        data.push(sample("a1", "b", 1));
        let subjects = vec!["a".to_string(), "b".to_string()];
        let r = loo_cv(&data, &subjects, |_| Ok(()), |_, s| Ok(s.label));
        assert!(matches!(r, Err(EvalError::Leakage { .. })));
        let ok = vec![sample("a1", "a", 1), sample("b1", "b", 2)];
        let subjects = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let r = loo_cv(&ok, &subjects, |_| Ok(()), |_, s| Ok(s.label)).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert_eq!(r.mean_accuracy, 100.0);
        assert!(matches!(loo_cv(&ok, &subjects[..1], |_| Ok(()), |_, s| Ok(s.label)), Err(EvalError::TooFewSubjects(1))));
    }
}
