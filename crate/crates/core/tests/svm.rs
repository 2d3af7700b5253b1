use std::collections::BTreeMap;

use agcr::encoding::{gram_matrix, BovwHist, Channel, ChannelHists, ChannelNormalizers};
use agcr::svm::{kkt_violation, train_kernel_svm, train_linear_svm, ChiSquareSvm, DcdParams, SmoParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn primal(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let norm2 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(r, yi)| (1.0 - yi * (r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b)).max(0.0))
        .sum();
    0.5 * norm2 + c * hinge
}

fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [(0.0, 0.0, 1.0), (2.0, 0.5, -1.0), (0.5, 2.0, 0.0)];
    let mut x = Vec::new();
    let mut l = Vec::new();
    for i in 0..n {
        let k = i % 3;
        let (a, b, c) = centers[k];
        x.push(vec![a + rng.gen_range(-0.9..0.9), b + rng.gen_range(-0.9..0.9), c + rng.gen_range(-0.9..0.9)]);
        l.push(k as u32 + 1);
    }
    (x, l)
}

// A converged DCD solution minimizes the regularized hinge primal: no small
// step in any direction lowers it.
#[test]
fn linear_machine_is_a_primal_minimum() {
    let (x, labels) = blobs(60, 3);
    let c = 1.0;
    let model = train_linear_svm(
        &x,
        &labels,
        &DcdParams {
            c,
            gap_tol: 1e-10,
            max_epochs: 100_000,
            seed: 0,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for m in &model.machines {
        let y: Vec<f64> = labels.iter().map(|&l| if l == m.class { 1.0 } else { -1.0 }).collect();
        let p0 = primal(&x, &y, &m.weights, m.bias, c);
        for _ in 0..200 {
            let dir: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for eps in [1e-2, 1e-3] {
                let w: Vec<f64> = m.weights.iter().zip(&dir).map(|(w, d)| w + eps * d).collect();
                let p = primal(&x, &y, &w, m.bias + eps * dir[3], c);
                assert!(p >= p0 - 1e-6 * p0, "class {}: step {eps} lowers primal {p0} to {p}", m.class);
            }
        }
    }
}

fn random_hists(n: usize, k: usize, seed: u64) -> (Vec<ChannelHists>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hists = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = (i % 3) as u32 + 1;
        let mut map = BTreeMap::new();
        for ch in [Channel::Traj, Channel::Hof] {
            let counts: Vec<f64> = (0..k)
                .map(|j| {
                    let bump = if j % 3 == (class as usize) % 3 { 6.0 } else { 0.0 };
                    rng.gen_range(0.0..4.0) + bump
                })
                .collect();
            map.insert(ch, BovwHist { channel: ch, counts }.normalized());
        }
        hists.push(ChannelHists(map));
        labels.push(class);
    }
    (hists, labels)
}

#[test]
fn smo_meets_kkt_tolerance_on_chi_square_gram() {
    let (hists, labels) = random_hists(45, 12, 5);
    let refs: Vec<&ChannelHists> = hists.iter().collect();
    let norms = ChannelNormalizers::estimate(&refs, &[Channel::Traj, Channel::Hof]).unwrap();
    let gram = gram_matrix(&refs, &norms).unwrap();
    for c in [0.5, 10.0, 100.0] {
        let params = SmoParams { c, ..SmoParams::default() };
        let model = train_kernel_svm(&gram, &labels, &params).unwrap();
        assert_eq!(model.machines.len(), 3);
        for m in &model.machines {
            for &a in &m.coef {
                assert!(a.abs() <= c + 1e-9);
            }
            // Equality constraint sum alpha_i y_i = 0.
            assert!(m.coef.iter().sum::<f64>().abs() < 1e-6);
            let v = kkt_violation(&gram, &labels, m, c);
            assert!(v <= 2.0 * params.tol, "C={c} class {}: KKT violation {v}", m.class);
        }
    }
}

// BoVW counts enter the kernel only after L1 normalization, so clips with
// more trajectories but the same word distribution classify identically.
#[test]
fn predictions_ignore_count_scale() {
    let (hists, labels) = random_hists(30, 10, 8);
    let svm = ChiSquareSvm::train(hists, &labels, &[Channel::Traj, Channel::Hof], vec![], &SmoParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let raw: Vec<BovwHist> = [Channel::Traj, Channel::Hof]
            .iter()
            .map(|&ch| BovwHist {
                channel: ch,
                counts: (0..10).map(|_| rng.gen_range(0..20) as f64).collect(),
            })
            .collect();
        let base = svm.predict(&ChannelHists::from_bovw(&raw)).unwrap();
        for scale in [3.0, 17.0] {
            let scaled: Vec<BovwHist> = raw
                .iter()
                .map(|h| BovwHist {
                    channel: h.channel,
                    counts: h.counts.iter().map(|c| c * scale).collect(),
                })
                .collect();
            let p = svm.predict(&ChannelHists::from_bovw(&scaled)).unwrap();
            assert_eq!(p.class, base.class);
            for (a, b) in p.scores.iter().zip(&base.scores) {
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn training_labels_are_recovered() {
    let (hists, labels) = random_hists(30, 10, 4);
    let svm = ChiSquareSvm::train(hists.clone(), &labels, &[Channel::Traj, Channel::Hof], vec![], &SmoParams::default())
        .unwrap();
    let hits = hists
        .iter()
        .zip(&labels)
        .filter(|(h, &l)| svm.predict(h).unwrap().class == l)
        .count();
    assert_eq!(hits, labels.len());
}
