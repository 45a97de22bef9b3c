//! End-to-end acceptance suite. Runs every criterion, prints one line each
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tadloc::gradcheck::{self, GradcheckOptions};
use tadloc::losses::{alignment, bce, smoothness, sparsity, total_loss};
use tadloc::metrics::{ap, auc, evaluate};
use tadloc::model::{attention_scores, forward, init_params};
use tadloc::proposals::{connected_components, score_proposal};
use tadloc::{
    generate_synthetic, FeatureSequence, LossWeights, ModelConfig, ModelParams, ScoreSource,
    ScoreTrace, ScoredSet, SynthConfig, TrainConfig, VideoRecord,
};

type Outcome = Result<String, String>;

/// Training-set size of the reference benchmark.
const REFERENCE_TRAIN_VIDEOS: f64 = 3954.0;
const TRAIN_VIDEOS: usize = 200;

/// The reference learning rates are scaled by the dataset-size ratio so the
/// 50-epoch schedule moves the parameters about as far as it does at full
/// scale (25 Adam steps per epoch here instead of about 494).
fn lr_scale() -> f64 {
    REFERENCE_TRAIN_VIDEOS / TRAIN_VIDEOS as f64
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
    let data = (0..t * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    FeatureSequence::new("acc", t, d, data).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, d: usize) -> ModelParams {
    let cfg = ModelConfig {
        attn_hidden: 12,
        clf_hidden: 6,
        seed: rng.random(),
        ..ModelConfig::new(d)
    };
    let mut p = init_params(&cfg).unwrap();
    for t in p.tensors_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    p
}

fn gradient_certification() -> Outcome {
    let started = Instant::now();
    let opts = GradcheckOptions::default();
    let r = gradcheck::run(&opts).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        r.passed && r.instances >= 20 && secs < 60.0,
        format!(
            "max rel err {:.3e} over {} coordinates / {} instances ({} one-sided, {} skipped), {:.1}s",
            r.max_rel_err, r.coordinates, r.instances, r.one_sided, r.skipped, secs
        ),
    )
}

fn loss_closed_forms() -> Outcome {
    let b = bce(0.5, 1).unwrap();
    let sm = smoothness(&[0.1, 0.4, 0.2]);
    let lam = [0.25, 0.5, 0.125, 1.0];
    let sp = sparsity(&lam);
    let al = alignment(&lam, &lam).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(2..6);
        let t = rng.random_range(1..12);
        let params = random_params(&mut rng, d);
        let fa = forward(&params, &random_seq(&mut rng, t, d)).unwrap();
        let fb = forward(&params, &random_seq(&mut rng, t, d)).unwrap();
        let w = LossWeights {
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            gamma: rng.random_range(0.0..1.0),
        };
        let y = rng.random_range(0..2u8);
        let l = total_loss(&fa, &fb, y, &w).unwrap();
        let manual = l.cl + w.alpha * l.sp + w.beta * l.sm + w.gamma * l.a;
        worst = worst.max((manual - l.total).abs());
    }
    let ok = (b - std::f64::consts::LN_2).abs() <= 1e-9
        && (sm - 0.13).abs() <= 1e-9
        && sp == 1.875
        && al == 0.0
        && worst <= 1e-12;
    check(
        ok,
        format!("bce {b:.12}, smoothness {sm:.12}, sparsity {sp}, alignment {al}, recomposition {worst:.1e}"),
    )
}

fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Steps through every distinct threshold, highest first, and sums
/// recall increments times precision.
fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let (mut prev_recall, mut total) = (0.0, 0.0);
    for th in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= th).collect();
        let tp = predicted.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let recall = tp / positives;
        let precision = tp / predicted.len() as f64;
        total += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    total
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_auc, mut worst_ap) = (0.0f64, 0.0f64);
    for case in 0..500 {
        let n = rng.random_range(2..=64);
        let coarse = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(0..5u8)) / 4.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        worst_auc = worst_auc.max((auc(&set).unwrap() - auc_oracle(&scores, &labels)).abs());
        worst_ap = worst_ap.max((ap(&set).unwrap() - ap_oracle(&scores, &labels)).abs());
    }
    check(
        worst_auc <= 1e-9 && worst_ap <= 1e-9,
        format!("500 sets, max |auc - oracle| {worst_auc:.1e}, max |ap - oracle| {worst_ap:.1e}"),
    )
}

fn components_oracle(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..mask.len() {
        for e in s..mask.len() {
            let all_on = mask[s..=e].iter().all(|&m| m);
            let left_closed = s == 0 || !mask[s - 1];
            let right_closed = e + 1 == mask.len() || !mask[e + 1];
            if all_on && left_closed && right_closed {
                out.push((s, e));
            }
        }
    }
    out
}

fn proposal_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=256);
        let density = rng.random_range(0.0..1.0);
        let mask: Vec<bool> = (0..t).map(|_| rng.random_bool(density)).collect();
        if connected_components(&mask) != components_oracle(&mask) {
            mismatches += 1;
        }
        let lambda: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
        let tcam: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
        let trace = ScoreTrace::from_parts(lambda.clone(), tcam.clone()).unwrap();
        let s = rng.random_range(0..t);
        let e = rng.random_range(s..t);
        let expected = (s..=e).map(|i| lambda[i] * tcam[i]).sum::<f64>() / (e - s + 1) as f64;
        worst = worst.max((score_proposal(&trace, (s, e)).unwrap() - expected).abs());
    }
    check(
        mismatches == 0 && worst <= 1e-12,
        format!("1000 masks, {mismatches} component mismatches, max score error {worst:.1e}"),
    )
}

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut violations = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..8);
        let len = rng.random_range(2..30);
        let params = random_params(&mut rng, d);
        let seq = random_seq(&mut rng, len, d);
        let t = rng.random_range(0..len - 1);
        let mut data = seq.data().to_vec();
        data[(t + 1) * d..]
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-5.0..5.0));
        let perturbed = FeatureSequence::new("acc", len, d, data).unwrap();
        let a = attention_scores(&params, &seq).unwrap();
        let b = attention_scores(&params, &perturbed).unwrap();
        if a[..=t]
            .iter()
            .zip(&b[..=t])
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("100 cases, {violations} prefix changes"),
    )
}

struct Split {
    train_seqs: Vec<FeatureSequence>,
    train_labels: Vec<u8>,
    test_seqs: Vec<FeatureSequence>,
    test_records: Vec<VideoRecord>,
}

fn synthetic_split(seed: u64) -> Split {
    let cfg = SynthConfig {
        num_videos: 250,
        t_range: (20, 40),
        dim: 16,
        anomaly_window_range: (4, 8),
        seed,
        ..SynthConfig::default()
    };
    let (mut seqs, mut records) = generate_synthetic(&cfg).unwrap();
    let test_seqs = seqs.split_off(TRAIN_VIDEOS);
    let test_records = records.split_off(TRAIN_VIDEOS);
    Split {
        train_labels: records.iter().map(|r| r.label).collect(),
        train_seqs: seqs,
        test_seqs,
        test_records,
    }
}

fn train_on(split: &Split, seed: u64, gamma: f64, lr_scale: f64) -> ModelParams {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    cfg.lr_phase1 *= lr_scale;
    cfg.lr_phase2 *= lr_scale;
    cfg.weights.gamma = gamma;
    cfg.augment.seed = seed.wrapping_add(1);
    let model = ModelConfig {
        seed,
        ..ModelConfig::new(16)
    };
    tadloc::trainer::train(&model, &split.train_seqs, &split.train_labels, &cfg, |_| {
        Ok(())
    })
    .unwrap()
    .0
}

fn synthetic_end_to_end() -> Outcome {
    let started = Instant::now();
    let split = synthetic_split(1);
    let params = train_on(&split, 1, 0.5, lr_scale());
    let report = evaluate(
        &params,
        &split.test_records,
        &split.test_seqs,
        0.35,
        ScoreSource::Wtcam,
    )
    .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        report.video.auc >= 0.95 && report.frame.auc >= 0.85 && secs < 600.0,
        format!(
            "video AUC {:.4}, frame AUC {:.4} (segment {:.4}, frame-proposal {:.4}), {:.1}s",
            report.video.auc, report.frame.auc, report.segment.auc, report.frame_proposal.auc, secs
        ),
    )
}

fn ablation_means(lr_scale: f64) -> Result<(Vec<f64>, Vec<f64>), String> {
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let split = synthetic_split(100 + seed);
        for (gamma, out) in [(0.5, &mut with), (0.0, &mut without)] {
            let params = train_on(&split, seed, gamma, lr_scale);
            let report = evaluate(
                &params,
                &split.test_records,
                &split.test_seqs,
                0.35,
                ScoreSource::Wtcam,
            )
            .map_err(|e| e.to_string())?;
            out.push(report.frame_proposal.auc);
        }
    }
    Ok((with, without))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation_direction() -> Outcome {
    let (with, without) = ablation_means(lr_scale())?;
    let (a, b) = (mean(&with), mean(&without));
    check(
        a >= b,
        format!("mean frame-proposal AUC with alignment {a:.4}, without {b:.4} (per seed {with:.4?} vs {without:.4?})"),
    )
}

/// Same comparison at the unscaled learning rates, reported but not gated.
fn ablation_unscaled() -> String {
    match ablation_means(1.0) {
        Ok((with, without)) => format!(
            "unscaled learning rates: mean frame-proposal AUC with alignment {:.4}, without {:.4}",
            mean(&with),
            mean(&without)
        ),
        Err(e) => format!("unscaled learning rates: {e}"),
    }
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tadloc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "tadloc {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline(dir: &Path) -> Result<(Vec<u8>, String), String> {
    let p = |rel: &str| dir.join(rel).display().to_string();
    run_cli(&[
        "synth",
        "--videos",
        "60",
        "--test-videos",
        "20",
        "--seed",
        "5",
        "--out",
        &p("data"),
    ])?;
    run_cli(&[
        "train",
        "--manifest",
        &p("data/manifest.jsonl"),
        "--out",
        &p("model.tanm"),
        "--epochs1",
        "3",
        "--epochs2",
        "5",
        "--seed",
        "9",
    ])?;
    run_cli(&[
        "eval",
        "--checkpoint",
        &p("model.tanm"),
        "--manifest",
        &p("data/test/manifest.jsonl"),
        "--out",
        &p("report.txt"),
    ])?;
    let ckpt = std::fs::read(dir.join("model.tanm")).map_err(|e| e.to_string())?;
    let report = std::fs::read_to_string(dir.join("report.txt")).map_err(|e| e.to_string())?;
    Ok((ckpt, report))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ca, ra) = pipeline(a.path())?;
    let (cb, rb) = pipeline(b.path())?;
    check(
        ca == cb && ra == rb,
        format!(
            "checkpoints {} ({} bytes), reports {}",
            if ca == cb { "identical" } else { "differ" },
            ca.len(),
            if ra == rb { "identical" } else { "differ" }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient certification", gradient_certification),
        ("loss closed forms", loss_closed_forms),
        ("metric oracle equivalence", metric_oracles),
        ("proposal oracle equivalence", proposal_oracles),
        ("causality", causality),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("ablation direction", ablation_direction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("INFO  ablation direction, {}", ablation_unscaled());
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
