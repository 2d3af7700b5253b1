use std::sync::Mutex;

use agcr::eval::{audit_partition, first_attempt_curve, loo_cv, write_curve_csv, EvalError, EvalReport, Sample, TaskReport};
use agcr::selftest::metrics_fixture;
use agcr::session::legs_script;

fn samples() -> Vec<Sample<f64>> {
    let mut out = Vec::new();
    for s in 0..4 {
        for i in 0..6 {
            let label = (i % 2) as u32;
            out.push(Sample {
                id: format!("s{s}_{i}"),
                subject: format!("s{s}"),
                label,
                data: label as f64 * 10.0 + i as f64 * 0.1 + s as f64,
            });
        }
    }
    out
}

#[test]
fn folds_never_train_on_the_held_out_subject() {
    let data = samples();
    let subjects: Vec<String> = (0..4).map(|s| format!("s{s}")).collect();
    let seen = Mutex::new(Vec::new());
    let r = loo_cv(
        &data,
        &subjects,
        |train| {
            let mut subs: Vec<String> = train.iter().map(|s| s.subject.clone()).collect();
            subs.sort();
            subs.dedup();
            seen.lock().unwrap().push(subs);
            // Threshold halfway between the class means.
            let mean = |l| {
                let v: Vec<f64> = train.iter().filter(|s| s.label == l).map(|s| s.data).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            Ok((mean(0) + mean(1)) / 2.0)
        },
        |t, s| Ok(u32::from(s.data > *t)),
    )
    .unwrap();
    assert_eq!(r.folds.len(), 4);
    for f in &r.folds {
        assert!(f.predictions.iter().all(|p| p.0.starts_with(&format!("{}_", f.subject))));
    }
    for subs in seen.into_inner().unwrap() {
        assert_eq!(subs.len(), 3);
    }
    assert_eq!((r.pooled.num, r.pooled.den), (24, 24));
    assert_eq!(r.mean_accuracy, 100.0);
}

#[test]
fn leakage_and_degenerate_inputs_are_rejected() {
    let data = samples();
    let train: Vec<&Sample<f64>> = data.iter().filter(|s| s.subject != "s1").collect();
    let test: Vec<&Sample<f64>> = data.iter().filter(|s| s.subject == "s1").collect();
    audit_partition(&train, &test, "s1").unwrap();
    let mut leaky = train.clone();
    leaky.push(test[0]);
    assert!(matches!(audit_partition(&leaky, &test, "s1"), Err(EvalError::Leakage { .. })));

    let one = vec!["s0".to_string()];
    let r = loo_cv(&data, &one, |_| Ok(()), |_, _| Ok(0));
    assert!(matches!(r, Err(EvalError::TooFewSubjects(1))));

    let r = loo_cv(&data, &["s0".into(), "s1".into()], |_| Err::<(), _>("boom".into()), |_, _| Ok(0));
    assert!(matches!(r, Err(EvalError::Fold { .. })));
}

#[test]
fn curve_csv_layout() {
    let curve = first_attempt_curve(&metrics_fixture(), &legs_script()).unwrap();
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &curve).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step_id,command,modality,rate,n");
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[3], "3,Repeat,A,0.666667,3");
    assert!(lines[5].starts_with("5,WashLegs,A-G,"));
}

#[test]
fn report_serializes_and_renders() {
    let task = TaskReport::from_logs("legs", &metrics_fixture(), &legs_script()).unwrap();
    let report = EvalReport {
        tasks: vec![task],
        experiments: vec![],
    };
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(json["tasks"].is_array());
    assert!(report.render_text().contains("legs"));
}
