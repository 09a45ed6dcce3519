//! End-to-end acceptance checks, one line per criterion.
//!
//! Run a subset with `ACCEPTANCE_CRITERIA=1,2,11`. Criterion 13 needs
//! `POSECAST_H36M_DIR` pointing at a directory of 22-joint, 25 fps poseseq
//! files and is skipped otherwise.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{arr1, Array2, Array3};
use posecast::archive::Archive;
use posecast::epistemic::{
    ensemble_uncertainty, entropy, epu_score, estimate_k, fit_clusters, mc_dropout_uncertainty,
    pretrain_autoencoder, purity, scoring_k, soft_assignments, AutoencoderConfig, ClusterConfig,
    EpUReport, EstimateKConfig, Tsne,
};
use posecast::error::{ArchiveError, Error, FormatError};
use posecast::forecast::{
    network_gradient_check, train, Checkpoint, ForecasterKind, PriorSpec, StTransConfig,
    TrainConfig, ZeroVel,
};
use posecast::loss::{loss_gradient_check, pual_loss};
use posecast::metrics::{
    a_mpjpe, ap_mpjpe, auroc, horizon_table, mean_mpjpe_curve, mpjpe, population_std,
};
use posecast::pose::{
    decode_sequence, encode_sequence, generate_corpus, read_sequence, shuffle_frames,
    shuffle_joints, window, CorpusSpec, ForecastSample, PoseSequence,
};
use posecast::priors::{PriorFamily, PriorParams, PriorScope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const OBS: usize = 10;
const HORIZON: usize = 25;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass: Some(pass),
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Self {
            pass: None,
            detail: detail.into(),
        }
    }
}

fn windows(families: &[u32], seed: u64, per_family: usize, stride: usize) -> Vec<ForecastSample> {
    let corpus = generate_corpus(&CorpusSpec {
        families: families.to_vec(),
        sequences_per_family: per_family,
        num_frames: 300,
        seed,
    })
    .unwrap();
    corpus
        .iter()
        .flat_map(|e| window(&e.sequence, &e.id, OBS, HORIZON, stride).unwrap())
        .collect()
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-11 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

fn c1_loss_analytics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_u, mut worst_min) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        // log-uniform over (0.01, 100)
        let e = 10f64.powf(rng.random_range(-2.0..2.0));
        let y = Array3::from_shape_vec((1, 1, 3), vec![e, 0.0, 0.0]).unwrap();
        let y_hat = Array3::<f64>::zeros((1, 1, 3));
        let loss = |u: f64| {
            pual_loss(y.view(), y_hat.view(), Array2::from_elem((1, 1), u).view())
                .unwrap()
                .total
        };
        let u_star = golden_min(loss, -20.0, 20.0);
        worst_u = worst_u.max((u_star - e.ln()).abs());
        worst_min = worst_min.max((loss(u_star) - (1.0 + e.ln())).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        worst_u < 1e-6 && worst_min < 1e-6 && secs < 5.0,
        format!(
            "max |u* - ln E| = {worst_u:.2e}, max |min - (1 + ln E)| = {worst_min:.2e}, {secs:.2}s"
        ),
    )
}

fn c2_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let (mut loss_dev, mut net_dev) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let r = loss_gradient_check(seed, HORIZON, 8).unwrap();
        loss_dev = loss_dev.max(r.max_rel_dev());
    }
    for seed in 0..3 {
        net_dev = net_dev.max(network_gradient_check(seed).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        loss_dev < 1e-4 && net_dev < 1e-3 && secs < 60.0,
        format!("loss rel dev {loss_dev:.2e} (< 1e-4), network rel dev {net_dev:.2e} (< 1e-3), {secs:.1}s"),
    )
}

fn c3_prior_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut collapse_dev = 0.0f64;
    for _ in 0..20 {
        let g = rng.random_range(0.05..2.0);
        let mid = rng.random_range(0.0..25.0);
        let amp = rng.random_range(0.1..5.0);
        let sig5 = PriorParams::new(
            PriorFamily::Sig5,
            PriorScope::Time,
            HORIZON,
            1,
            Array2::from_shape_vec((1, 5), vec![0.0, amp, g, mid, g]).unwrap(),
        )
        .unwrap();
        let sig3 = PriorParams::new(
            PriorFamily::Sig3,
            PriorScope::Time,
            HORIZON,
            1,
            Array2::from_shape_vec((1, 3), vec![g, mid, amp]).unwrap(),
        )
        .unwrap();
        for t in 1..=HORIZON {
            collapse_dev =
                collapse_dev.max((sig5.eval(0, t).unwrap() - sig3.eval(0, t).unwrap()).abs());
        }
    }
    let mut monotone = true;
    for _ in 0..100 {
        let theta = vec![
            rng.random_range(0.01..3.0),
            rng.random_range(-10.0..35.0),
            rng.random_range(0.01..10.0),
        ];
        let p = PriorParams::new(
            PriorFamily::Sig3,
            PriorScope::Time,
            HORIZON,
            1,
            Array2::from_shape_vec((1, 3), theta).unwrap(),
        )
        .unwrap();
        let u: Vec<f64> = (1..=HORIZON).map(|t| p.eval(0, t).unwrap()).collect();
        monotone &= u.windows(2).all(|w| w[1] >= w[0]);
    }
    let counts: Vec<usize> = [
        PriorFamily::Id,
        PriorFamily::Poly(9),
        PriorFamily::Sig5,
        PriorFamily::Sig3,
    ]
    .iter()
    .map(|&f| {
        PriorParams::init(f, PriorScope::JointTime, 25, 22)
            .unwrap()
            .num_params()
    })
    .collect();
    let expected = [25 * 22, 10 * 22, 5 * 22, 3 * 22];
    Outcome::check(
        collapse_dev < 1e-9 && monotone && counts == expected,
        format!("Sig5/Sig3 collapse dev {collapse_dev:.1e}, Sig3 monotone over 100 draws: {monotone}, counts {counts:?}"),
    )
}

/// Toy forecaster and data shared by criteria 4 and 5.
struct PriorComparison {
    first5: [Vec<f64>; 2],
    frame25: [Vec<f64>; 2],
    a_mpjpe: [Vec<f64>; 2],
}

const TOY_SEEDS: u64 = 5;
const TOY_EPOCHS: usize = 15;

fn toy_forecaster() -> ForecasterKind {
    ForecasterKind::StTrans(StTransConfig {
        num_blocks: 2,
        model_width: 16,
        num_heads: 2,
        mlp_hidden: 32,
        dropout_rate: 0.0,
        ..StTransConfig::default()
    })
}

fn prior_comparison() -> PriorComparison {
    let data = windows(&[0, 1, 2], 1, 25, 10);
    let test = windows(&[0, 1, 2], 2, 10, 25);
    assert!(data.len() >= 2000, "only {} training windows", data.len());
    let mut out = PriorComparison {
        first5: [Vec::new(), Vec::new()],
        frame25: [Vec::new(), Vec::new()],
        a_mpjpe: [Vec::new(), Vec::new()],
    };
    for seed in 0..TOY_SEEDS {
        for (i, prior) in [None, Some(PriorFamily::Sig5)].into_iter().enumerate() {
            let cfg = TrainConfig {
                epochs: TOY_EPOCHS,
                seed,
                // one uncertainty per frame shared by all joints
                prior: prior.map(|family| PriorSpec {
                    family,
                    scope: PriorScope::Time,
                }),
                ..TrainConfig::default()
            };
            let ck = train(&toy_forecaster(), &data, &cfg).unwrap().checkpoint;
            let curve = mean_mpjpe_curve(&test, ck.forecaster().unwrap().as_ref()).unwrap();
            out.first5[i].push(curve.iter().take(5).sum::<f64>() / 5.0);
            out.frame25[i].push(curve[HORIZON - 1]);
            out.a_mpjpe[i].push(curve.mean().unwrap());
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c4_short_horizon_gain(r: &PriorComparison, secs: f64) -> Outcome {
    let (b5, p5) = (mean(&r.first5[0]), mean(&r.first5[1]));
    let (b25, p25) = (mean(&r.frame25[0]), mean(&r.frame25[1]));
    let gain = (b5 - p5) / b5;
    let degrade = (p25 - b25) / b25;
    Outcome::check(
        gain >= 0.05 && degrade <= 0.02,
        format!(
            "first-5 MPJPE {b5:.2} -> {p5:.2} mm (gain {:.1}%, need >= 5%), frame 25 {b25:.2} -> {p25:.2} mm ({:+.1}%, need <= +2%), {secs:.0}s",
            100.0 * gain,
            100.0 * degrade
        ),
    )
}

fn c5_stability(r: &PriorComparison) -> Outcome {
    let (s0, s1) = (population_std(&r.a_mpjpe[0]), population_std(&r.a_mpjpe[1]));
    Outcome::check(
        s1 < s0,
        format!("std of final A-MPJPE: no prior {s0:.3} mm, Sig5 {s1:.3} mm"),
    )
}

fn c6_k_recovery() -> Outcome {
    let start = Instant::now();
    let (n, dim, sigma, sep) = (600, 32, 0.1, 10.0);
    let mut hits = Vec::new();
    for &k in &[3usize, 5, 8] {
        let mut ok = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let noise = Normal::new(0.0, sigma).unwrap();
            // centers on scaled coordinate axes are pairwise `sep` apart
            let z = Array2::from_shape_fn((n, dim), |(i, d)| {
                let c = if d == i % k { sep / 2f64.sqrt() } else { 0.0 };
                c + noise.sample(&mut rng)
            });
            let cfg = EstimateKConfig {
                seed,
                ..EstimateKConfig::default()
            };
            let tsne = Tsne {
                seed,
                ..Tsne::default()
            };
            if estimate_k(z.view(), &cfg, &tsne).unwrap().0 == k {
                ok += 1;
            }
        }
        hits.push((k, ok));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        hits.iter().all(|&(_, ok)| ok >= 8) && secs < 120.0,
        format!("planted K hit rate {hits:?} of 10 seeds (need >= 8), {secs:.1}s"),
    )
}

fn cluster_ae_config() -> AutoencoderConfig {
    AutoencoderConfig {
        epochs: 30,
        learning_rate: 3e-3,
        ..AutoencoderConfig::default()
    }
}

fn c7_clustering_quality() -> Outcome {
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in 0..5u64 {
        let data = windows(&[0, 1, 2], 10 + seed, 10, 10);
        let seqs: Vec<_> = data.iter().map(|s| s.future.view()).collect();
        let labels: Vec<u32> = data.iter().map(|s| s.family_label.unwrap()).collect();
        let (ae, _) = pretrain_autoencoder(&seqs, &cluster_ae_config(), seed).unwrap();
        let cfg = ClusterConfig {
            seed,
            ..ClusterConfig::default()
        };
        let (_, report) = fit_clusters(&ae, &seqs, 3, &cfg).unwrap();
        let (init, fin) = (
            purity(&report.init_labels, &labels),
            purity(&report.final_labels, &labels),
        );
        pass &= fin >= init;
        rows.push(format!("{init:.3}->{fin:.3}"));
    }
    Outcome::check(
        pass,
        format!(
            "purity k-means init -> fitted per seed: {}",
            rows.join(", ")
        ),
    )
}

/// Forecaster and cluster model trained on family `a`, scored on held-out
/// windows of `a` and of unseen family `b`.
struct PairRun {
    families: (u32, u32),
    k: usize,
    in_family: EpUReport,
    unseen: EpUReport,
    ood: [f64; 3],
    encoder_passes_per_sample: f64,
}

fn pair_run(a: u32, b: u32) -> PairRun {
    let train_w = windows(&[a], 20, 50, 10);
    let test_a = windows(&[a], 21, 8, 25);
    let test_b = windows(&[b], 21, 8, 25);
    let forecaster_kind = ForecasterKind::StTrans(StTransConfig {
        num_blocks: 2,
        model_width: 16,
        num_heads: 2,
        mlp_hidden: 32,
        dropout_rate: 0.1,
        ..StTransConfig::default()
    });
    let tc = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let f = train(&forecaster_kind, &train_w, &tc)
        .unwrap()
        .checkpoint
        .forecaster()
        .unwrap();
    let seqs: Vec<_> = train_w.iter().map(|s| s.future.view()).collect();
    let (ae, _) = pretrain_autoencoder(&seqs, &cluster_ae_config(), 0).unwrap();
    let z = ae.encode(&seqs).unwrap();
    let (estimated, stats) =
        estimate_k(z.view(), &EstimateKConfig::default(), &Tsne::default()).unwrap();
    let k = scoring_k(estimated, &stats.ratios);
    let (model, _) = fit_clusters(&ae, &seqs, k, &ClusterConfig::default()).unwrap();

    let predict = |samples: &[ForecastSample]| -> Vec<Array3<f32>> {
        let obs: Vec<_> = samples.iter().map(|s| s.observed.view()).collect();
        f.forecast_batch(&obs)
            .unwrap()
            .into_iter()
            .map(|o| o.y_hat)
            .collect()
    };
    let score = |preds: &[Array3<f32>]| {
        epu_score(&model, &preds.iter().map(|p| p.view()).collect::<Vec<_>>()).unwrap()
    };
    let pred_a = predict(&test_a);
    let before = model.autoencoder().encoded_samples();
    let in_family = score(&pred_a);
    let encoder_passes_per_sample =
        (model.autoencoder().encoded_samples() - before) as f64 / pred_a.len() as f64;
    let unseen = score(&predict(&test_b));

    let as_samples: Vec<ForecastSample> = test_a
        .iter()
        .zip(&pred_a)
        .map(|(s, y)| ForecastSample {
            future: y.clone(),
            ..s.clone()
        })
        .collect();
    let frames: Vec<_> = as_samples
        .iter()
        .enumerate()
        .map(|(i, s)| shuffle_frames(s, i as u64).future)
        .collect();
    let joints: Vec<_> = as_samples
        .iter()
        .enumerate()
        .map(|(i, s)| shuffle_joints(s, i as u64).future)
        .collect();
    let ood = [in_family.epu, score(&frames).epu, score(&joints).epu];
    PairRun {
        families: (a, b),
        k,
        in_family,
        unseen,
        ood,
        encoder_passes_per_sample,
    }
}

fn c8_separability(runs: &[PairRun], secs: f64) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for r in runs {
        let area = auroc(
            &r.in_family.per_sample_entropy,
            &r.unseen.per_sample_entropy,
        )
        .unwrap();
        pass &= area >= 0.9;
        parts.push(format!(
            "{}/{}: K {} AUROC {area:.3}",
            r.families.0, r.families.1, r.k
        ));
    }

    // forward-pass accounting on a small dropout forecaster
    let data = windows(&[0], 5, 2, 20);
    let kind = toy_forecaster_with_dropout();
    let members: Vec<Checkpoint> = (0..5)
        .map(|seed| {
            let cfg = TrainConfig {
                epochs: 1,
                seed,
                ..TrainConfig::default()
            };
            train(&kind, &data, &cfg).unwrap().checkpoint
        })
        .collect();
    let obs = data[0].observed.view();
    let net = members[0].st_trans().unwrap();
    let mc: Vec<usize> = [5, 10]
        .iter()
        .map(|&k| {
            mc_dropout_uncertainty(&net, obs, k, 0)
                .unwrap()
                .forward_passes
        })
        .collect();
    let ens: Vec<usize> = [3, 5]
        .iter()
        .map(|&m| {
            ensemble_uncertainty(&members[..m], obs)
                .unwrap()
                .forward_passes
        })
        .collect();
    let ours = runs
        .iter()
        .map(|r| r.encoder_passes_per_sample)
        .fold(0.0, f64::max);
    let counts_ok =
        mc == [5, 10] && ens == [3, 5] && runs.iter().all(|r| r.encoder_passes_per_sample == 1.0);
    pass &= counts_ok;
    parts.push(format!(
        "passes per sample: ours {ours}, MC-Dropout-5/10 {mc:?}, Ensemble-3/5 {ens:?}"
    ));
    Outcome::check(pass, format!("{}; {secs:.0}s", parts.join("; ")))
}

fn toy_forecaster_with_dropout() -> ForecasterKind {
    ForecasterKind::StTrans(StTransConfig {
        num_blocks: 1,
        model_width: 8,
        num_heads: 2,
        mlp_hidden: 16,
        dropout_rate: 0.2,
        ..StTransConfig::default()
    })
}

fn c9_ood_ordering(runs: &[PairRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let [n, f, j] = r.ood;
        pass &= n < f && f < j;
        parts.push(format!("family {}: {n:.3} < {f:.3} < {j:.3}", r.families.0));
    }
    Outcome::check(
        pass,
        format!(
            "EpU normal < frames shuffled < joints shuffled: {}",
            parts.join("; ")
        ),
    )
}

fn c10_entropy_invariants(runs: &[PairRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut row_dev = 0.0f64;
    let mut bounds = true;
    let mut check = |p: &Array2<f64>| {
        let k = p.ncols() as f64;
        for row in p.outer_iter() {
            row_dev = row_dev.max((row.sum() - 1.0).abs());
            let h = entropy(row);
            bounds &= (0.0..=k.ln() + 1e-12).contains(&h);
        }
    };
    for k in 1..=8 {
        let z = Array2::from_shape_fn((200, 6), |_| rng.random_range(-5.0..5.0));
        let mu = Array2::from_shape_fn((k, 6), |_| rng.random_range(-5.0..5.0));
        check(&soft_assignments(z.view(), mu.view()));
    }
    for r in runs {
        check(&r.in_family.assignment_probs);
        check(&r.unseen.assignment_probs);
    }
    let uniform_dev = (1..=10)
        .map(|k| {
            (entropy(Array2::from_elem((1, k), 1.0 / k as f64).row(0)) - (k as f64).ln()).abs()
        })
        .fold(0.0, f64::max);
    Outcome::check(
        row_dev < 1e-9 && bounds && uniform_dev < 1e-9,
        format!("max |row sum - 1| = {row_dev:.1e}, entropies within [0, ln K]: {bounds}, uniform-row dev {uniform_dev:.1e}"),
    )
}

fn c11_exact_metrics() -> Outcome {
    let y = Array3::<f32>::zeros((1, 1, 3));
    let y_hat = Array3::from_shape_vec((1, 1, 3), vec![3.0f32, 4.0, 0.0]).unwrap();
    let pythagoras = mpjpe(y.view(), y_hat.view()).unwrap()[0];

    let (neg, pos) = ([0.1, 0.4], [0.35, 0.8]);
    let brute = pos
        .iter()
        .flat_map(|p| {
            neg.iter().map(move |n| {
                if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .sum::<f64>()
        / (neg.len() * pos.len()) as f64;
    let area = auroc(&neg, &pos).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let run_a: Vec<Array3<f32>> = (0..4)
        .map(|_| Array3::from_shape_fn((HORIZON, 8, 3), |_| rng.random_range(-100i32..100) as f32))
        .collect();
    let run_b: Vec<Array3<f32>> = run_a
        .iter()
        .map(|p| p + &arr1(&[0.0f32, 0.0, 5.0]))
        .collect();
    let ap = ap_mpjpe(&[run_a.clone(), run_b]).unwrap();
    let self_err = a_mpjpe(run_a[0].view(), run_a[0].view()).unwrap();
    Outcome::check(
        pythagoras == 5.0 && area == 0.75 && brute == 0.75 && ap == 5.0 && self_err == 0.0,
        format!("MPJPE {pythagoras}, AUROC {area} (brute force {brute}), AP-MPJPE {ap}"),
    )
}

fn c12_round_trips() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let seq = generate_corpus(&CorpusSpec {
        families: vec![3],
        sequences_per_family: 1,
        num_frames: 60,
        seed: 12,
    })
    .unwrap()
    .remove(0)
    .sequence;
    let bytes = encode_sequence(&seq);
    let back = decode_sequence(&bytes).unwrap();
    let exact = back
        .frames()
        .iter()
        .zip(seq.frames().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && encode_sequence(&back) == bytes;
    pass &= exact;
    notes.push(format!("poseseq bit-exact {exact}"));
    let truncated = decode_sequence(&bytes[..bytes.len() - 4]);
    let ok = matches!(
        truncated,
        Err(Error::Format(FormatError::PayloadLength { .. }))
    );
    pass &= ok;
    notes.push(format!("truncated poseseq -> payload-length error {ok}"));
    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    let ok = matches!(
        decode_sequence(&bad),
        Err(Error::Format(FormatError::NonFinite { .. }))
    );
    pass &= ok;
    notes.push(format!("NaN coordinate -> non-finite error {ok}"));

    let data = windows(&[0], 4, 2, 20);
    let cfg = TrainConfig {
        epochs: 1,
        prior: Some(PriorSpec {
            family: PriorFamily::Sig5,
            scope: PriorScope::JointTime,
        }),
        ..TrainConfig::default()
    };
    let ck = train(&toy_forecaster_with_dropout(), &data, &cfg)
        .unwrap()
        .checkpoint;
    let encoded = ck.to_archive().encode();
    let loaded = Checkpoint::from_archive(Archive::decode(&encoded).unwrap()).unwrap();
    let same_bytes = loaded.to_archive().encode() == encoded;
    let (fa, fb) = (ck.forecaster().unwrap(), loaded.forecaster().unwrap());
    let obs = data[0].observed.view();
    let (oa, ob) = (fa.forecast(obs).unwrap(), fb.forecast(obs).unwrap());
    let same_out = oa
        .y_hat
        .iter()
        .zip(ob.y_hat.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && oa.u == ob.u;
    pass &= same_bytes && same_out;
    notes.push(format!(
        "checkpoint bytes {same_bytes}, forecasts bit-exact {same_out}"
    ));
    let mut flipped = encoded.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x01;
    let ok = matches!(
        Archive::decode(&flipped),
        Err(Error::Archive(ArchiveError::Corrupted(_)))
    ) && matches!(
        Archive::decode(&encoded[..encoded.len() - 3]),
        Err(Error::Archive(ArchiveError::Corrupted(_)))
    );
    pass &= ok;
    notes.push(format!(
        "flipped/truncated checkpoint -> corrupted error {ok}"
    ));

    let no_prior = train(
        &ForecasterKind::ZeroVel,
        &data,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .checkpoint;
    let ok = no_prior
        .to_archive()
        .meta_field::<serde_json::Value>("prior")
        .is_err();
    pass &= ok;
    notes.push(format!("prior-free checkpoint has no prior block {ok}"));
    Outcome::check(pass, notes.join(", "))
}

const H36M_ENV: &str = "POSECAST_H36M_DIR";
const REFERENCE_ZERO_VEL_MM: [f64; 8] = [23.8, 44.4, 76.1, 88.2, 107.4, 121.6, 131.6, 136.6];
const REFERENCE_HORIZONS_MS: [f64; 8] = [80.0, 160.0, 320.0, 400.0, 560.0, 720.0, 880.0, 1000.0];

fn c13_dataset_zero_vel() -> Outcome {
    let Some(dir) = std::env::var_os(H36M_ENV).map(PathBuf::from) else {
        return Outcome::skip(format!(
            "{H36M_ENV} not set; no converted motion-capture data"
        ));
    };
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "poseseq"))
            .collect(),
        Err(e) => return Outcome::check(false, format!("cannot read {}: {e}", dir.display())),
    };
    if paths.is_empty() {
        return Outcome::skip(format!("no poseseq files in {}", dir.display()));
    }
    paths.sort();
    let mut samples = Vec::new();
    let mut fps = 0.0;
    for p in &paths {
        let seq: PoseSequence = match read_sequence(p) {
            Ok(s) => s,
            Err(e) => return Outcome::check(false, format!("{}: {e}", p.display())),
        };
        if seq.num_joints() != 22 {
            return Outcome::check(
                false,
                format!(
                    "{} has {} joints, expected 22",
                    p.display(),
                    seq.num_joints()
                ),
            );
        }
        fps = seq.fps();
        samples.extend(window(&seq, &p.display().to_string(), OBS, HORIZON, 1).unwrap());
    }
    let table = horizon_table(
        &samples,
        &ZeroVel::new(HORIZON).unwrap(),
        &REFERENCE_HORIZONS_MS,
        fps,
    )
    .unwrap();
    let worst = table
        .mpjpe_mm
        .iter()
        .zip(REFERENCE_ZERO_VEL_MM)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Outcome::check(
        worst <= 0.5,
        format!(
            "Zero-Vel row {:?} mm, max deviation {worst:.2} mm over {} windows",
            table.mpjpe_mm,
            samples.len()
        ),
    )
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| selected.as_ref().is_none_or(|s| s.contains(&n));
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, title: &'static str, o: Outcome| {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("criterion {n:>2} [{tag}] {title}: {}", o.detail);
        results.push((n, title, o));
    };

    if wanted(1) {
        record(1, "loss analytics", c1_loss_analytics());
    }
    if wanted(2) {
        record(2, "gradient oracle", c2_gradient_oracle());
    }
    if wanted(3) {
        record(3, "prior identities", c3_prior_identities());
    }
    if wanted(4) || wanted(5) {
        let start = Instant::now();
        let r = prior_comparison();
        let secs = start.elapsed().as_secs_f64();
        if wanted(4) {
            record(4, "short-horizon gain", c4_short_horizon_gain(&r, secs));
        }
        if wanted(5) {
            record(5, "training stability", c5_stability(&r));
        }
    }
    if wanted(6) {
        record(6, "K recovery", c6_k_recovery());
    }
    if wanted(7) {
        record(7, "clustering quality", c7_clustering_quality());
    }
    if wanted(8) || wanted(9) || wanted(10) {
        let start = Instant::now();
        let runs: Vec<PairRun> = [(0, 1), (2, 3), (4, 5)]
            .iter()
            .map(|&(a, b)| pair_run(a, b))
            .collect();
        let secs = start.elapsed().as_secs_f64();
        if wanted(8) {
            record(8, "EpU separability", c8_separability(&runs, secs));
        }
        if wanted(9) {
            record(9, "OOD ordering", c9_ood_ordering(&runs));
        }
        if wanted(10) {
            record(10, "entropy invariants", c10_entropy_invariants(&runs));
        }
    }
    if wanted(11) {
        record(11, "exact metrics", c11_exact_metrics());
    }
    if wanted(12) {
        record(12, "format round trips", c12_round_trips());
    }
    if wanted(13) {
        record(13, "dataset Zero-Vel row", c13_dataset_zero_vel());
    }

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.pass == Some(false))
        .map(|r| r.0)
        .collect();
    let passed = results.iter().filter(|r| r.2.pass == Some(true)).count();
    let skipped = results.iter().filter(|r| r.2.pass.is_none()).count();
    println!(
        "acceptance: {passed} passed, {} failed, {skipped} skipped",
        failed.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
