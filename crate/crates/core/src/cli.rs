//! `tadloc` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::AugmentConfig;
use crate::datastore::{
    generate_synthetic, load_dataset, load_manifest, write_dataset, SynthConfig, VideoRecord,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckOptions};
use crate::losses::LossWeights;
use crate::metrics::{evaluate, ScoreSource};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::proposals::{compute_tcam, proposals_from_trace, ProposalLine, DEFAULT_THRESHOLD};
use crate::trainer::{train, TrainConfig, TrainEvent};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tadloc",
    version,
    about = "Weakly-supervised temporal anomaly localization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-anomaly dataset.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Write temporal proposals for every video in a manifest.
    Propose(ProposeArgs),
    /// Evaluate a checkpoint at video, segment, proposal and frame level.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(',') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub videos: usize,
    /// Extra videos written to a separate test manifest.
    #[arg(long, default_value_t = 0)]
    pub test_videos: usize,
    #[arg(long, default_value = "20,40", value_parser = parse_range)]
    pub t_range: (usize, usize),
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub anomaly_frac: f64,
    /// Window length, `N` or `MIN,MAX`.
    #[arg(long, default_value = "4,8", value_parser = parse_range)]
    pub anomaly_window: (usize, usize),
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 3.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Final checkpoint path; the phase-1 checkpoint gets a `.phase1` suffix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub lr1: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs1: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr2: f64,
    #[arg(long, default_value_t = 40)]
    pub epochs2: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-8)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.002)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Drop the alignment term (gamma = 0).
    #[arg(long)]
    pub no_align: bool,
    #[arg(long, default_value_t = 3)]
    pub block_len: usize,
    #[arg(long, default_value_t = 3)]
    pub conv_kernel: usize,
    /// Defaults to the feature dimension.
    #[arg(long)]
    pub conv_channels: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub attn_hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub clf_hidden: usize,
    /// Seeds initialization, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training log path; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub thr: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-segment score table (time, lambda, tcam, wtcam, proposal, label).
    #[arg(long)]
    pub dump_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub thr: f64,
    #[arg(long, default_value_t = ScoreSource::Wtcam)]
    pub score_source: ScoreSource,
    /// Also write the report (table plus a JSON line) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 16)]
    pub max_t: usize,
    #[arg(long, default_value_t = 8)]
    pub max_d: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, hide = true)]
    pub perturb_grad: bool,
}

/// Everything needed to replay a command, written beside its main artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a C,
    pub inputs: Vec<String>,
    pub artifacts: Vec<String>,
}

fn run_manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    artifact.with_file_name(name)
}

fn write_run_manifest<C: Serialize>(
    command: &'static str,
    config: &C,
    inputs: &[&Path],
    artifacts: &[&Path],
    beside: &Path,
) -> Result<()> {
    let manifest = RunManifest {
        tool: "tadloc",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = run_manifest_path(beside);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::MissingGroundTruth(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Propose(a) => cmd_propose(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        num_videos: args.videos + args.test_videos,
        t_range: args.t_range,
        dim: args.dim,
        anomaly_fraction: args.anomaly_frac,
        anomaly_window_range: args.anomaly_window,
        noise_scale: args.noise,
        anomaly_shift: args.shift,
        seed: args.seed,
    };
    let (seqs, records) = generate_synthetic(&cfg)?;
    let n = args.videos;
    write_dataset(&args.out, &seqs[..n], &records[..n])?;
    let manifest = args.out.join("manifest.jsonl");
    let mut artifacts = vec![manifest.clone()];
    if args.test_videos > 0 {
        let test_dir = args.out.join("test");
        write_dataset(&test_dir, &seqs[n..], &records[n..])?;
        artifacts.push(test_dir.join("manifest.jsonl"));
    }
    let artifact_refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_run_manifest("synth", &cfg, &[], &artifact_refs, &manifest)?;

    let summarize = |recs: &[VideoRecord], seqs: &[crate::datastore::FeatureSequence]| {
        let anomalous = recs.iter().filter(|r| r.label == 1).count();
        let segments: usize = seqs.iter().map(|s| s.len()).sum();
        format!(
            "{} videos ({} anomalous, {} normal), {} segments, D={}",
            recs.len(),
            anomalous,
            recs.len() - anomalous,
            segments,
            cfg.dim
        )
    };
    println!("train: {}", summarize(&records[..n], &seqs[..n]));
    if args.test_videos > 0 {
        println!("test:  {}", summarize(&records[n..], &seqs[n..]));
    }
    println!("wrote {}", manifest.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let records = load_manifest(&args.manifest)?;
    if records.is_empty() {
        return Err(Error::Config("manifest has no records".into()));
    }
    let seqs = load_dataset(&records)?;
    let dim = seqs[0].dim();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let model_cfg = ModelConfig {
        input_dim: dim,
        conv_kernel: args.conv_kernel,
        conv_channels: args.conv_channels.unwrap_or(dim),
        attn_hidden: args.attn_hidden,
        clf_hidden: args.clf_hidden,
        seed: args.seed,
    };
    model_cfg.validate()?;
    let cfg = TrainConfig {
        lr_phase1: args.lr1,
        epochs_phase1: args.epochs1,
        lr_phase2: args.lr2,
        epochs_phase2: args.epochs2,
        batch_size: args.batch,
        weights: LossWeights {
            alpha: args.alpha,
            beta: args.beta,
            gamma: if args.no_align { 0.0 } else { args.gamma },
        },
        augment: AugmentConfig {
            block_len: args.block_len,
            seed: args.seed.wrapping_add(1),
        },
        seed: args.seed.wrapping_add(2),
        ..Default::default()
    };
    let phase1_path = with_suffix(&args.out, ".phase1");
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".log.jsonl"));
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }

    let (params, log) = train(&model_cfg, &seqs, &labels, &cfg, |ev| {
        match ev {
            TrainEvent::Epoch(e) => eprintln!(
                "epoch {:3}  lr {:.0e}  total {:.5}  cl {:.5}  sp {:.3}  sm {:.4}  a {:.4}  ({:.2}s)",
                e.epoch, e.lr, e.total, e.cl, e.sp, e.sm, e.a, e.seconds
            ),
            TrainEvent::PhaseEnd { phase: 1, params } => save_checkpoint(params, &phase1_path)?,
            TrainEvent::PhaseEnd { .. } => {}
        }
        Ok(())
    })
    .map_err(|e| match e {
        Error::Diverged { .. } => {
            eprintln!("training diverged; no checkpoint written");
            e
        }
        other => other,
    })?;
    save_checkpoint(&params, &args.out)?;
    write_text(&log_path, &log.to_jsonl()?)?;
    let mut artifacts = vec![args.out.as_path(), log_path.as_path()];
    if phase1_path.exists() {
        artifacts.push(&phase1_path);
    }
    write_run_manifest(
        "train",
        &TrainSnapshot {
            model: &model_cfg,
            train: &cfg,
        },
        &[&args.manifest],
        &artifacts,
        &args.out,
    )?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ProposeSnapshot {
    thr: f64,
}

pub fn cmd_propose(args: &ProposeArgs) -> Result<i32> {
    let params = load_checkpoint(&args.checkpoint)?;
    let records = load_manifest(&args.manifest)?;
    let seqs = load_dataset(&records)?;
    let mut out = String::new();
    let mut dump = String::from("id\tt\tlambda\ttcam\twtcam\tproposal\tlabel\n");
    let mut total = 0;
    for (rec, seq) in records.iter().zip(&seqs) {
        let fps = rec.frames_per_segment as usize;
        let trace = compute_tcam(&params, seq)?;
        let props = proposals_from_trace(&trace, args.thr, fps)?;
        let mut seg_prop = vec![0.0; seq.len()];
        for p in &props {
            seg_prop[p.t_start..=p.t_end]
                .iter_mut()
                .for_each(|v| *v = p.score);
            out.push_str(&serde_json::to_string(&ProposalLine {
                id: rec.id.clone(),
                proposal: p.clone(),
            })?);
            out.push('\n');
        }
        total += props.len();
        if args.dump_scores.is_some() {
            for t in 0..seq.len() {
                let label = rec
                    .segment_labels
                    .as_ref()
                    .map(|l| l[t].to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    dump,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    rec.id, t, trace.lambda[t], trace.tcam[t], trace.wtcam[t], seg_prop[t], label
                );
            }
        }
    }
    write_text(&args.out, &out)?;
    let mut artifacts = vec![args.out.as_path()];
    if let Some(path) = &args.dump_scores {
        write_text(path, &dump)?;
        artifacts.push(path);
    }
    write_run_manifest(
        "propose",
        &ProposeSnapshot { thr: args.thr },
        &[&args.checkpoint, &args.manifest],
        &artifacts,
        &args.out,
    )?;
    println!(
        "{total} proposals over {} videos -> {}",
        records.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalSnapshot {
    thr: f64,
    score_source: ScoreSource,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let params = load_checkpoint(&args.checkpoint)?;
    let records = load_manifest(&args.manifest)?;
    if let Some(r) = records.iter().find(|r| r.segment_labels.is_none()) {
        return Err(Error::MissingGroundTruth(format!(
            "record {} has no segment_labels",
            r.id
        )));
    }
    let seqs = load_dataset(&records)?;
    let report = evaluate(&params, &records, &seqs, args.thr, args.score_source)?;
    let text = format!("{}{}\n", report.table(), serde_json::to_string(&report)?);
    print!("{text}");
    if let Some(path) = &args.out {
        write_text(path, &text)?;
        write_run_manifest(
            "eval",
            &EvalSnapshot {
                thr: args.thr,
                score_source: args.score_source,
            },
            &[&args.checkpoint, &args.manifest],
            &[path],
            path,
        )?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let opts = GradcheckOptions {
        seed: args.seed,
        instances: args.instances,
        max_t: args.max_t,
        max_d: args.max_d,
        eps: args.eps,
        perturb_grad: args.perturb_grad,
        ..Default::default()
    };
    let report = gradcheck::run(&opts)?;
    println!(
        "checked {} coordinates over {} instances; max relative error {:.3e} (tolerance {:.0e})",
        report.coordinates, report.instances, report.max_rel_err, opts.tolerance
    );
    println!(
        "{} coordinates straddled a ReLU gate on one side (one-sided difference), {} on both (skipped)",
        report.one_sided, report.skipped
    );
    if let Some(w) = &report.worst {
        println!(
            "worst: instance {} {}[{}] analytic {:.9e} numeric {:.9e}",
            w.instance, w.tensor, w.index, w.analytic, w.numeric
        );
    }
    if report.passed {
        println!("PASS");
        Ok(EXIT_OK)
    } else {
        println!("FAIL");
        Ok(EXIT_RUNTIME)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("4,8").unwrap(), (4, 8));
        assert_eq!(parse_range("10").unwrap(), (10, 10));
        assert!(parse_range("a,3").is_err());
    }

    #[test]
    fn paper_defaults_are_flag_defaults() {
        let cli =
            Cli::try_parse_from(["tadloc", "train", "--manifest", "m", "--out", "c"]).unwrap();
        let Command::Train(a) = cli.command else {
            panic!("expected train");
        };
        assert_eq!((a.alpha, a.beta, a.gamma), (2e-8, 0.002, 0.5));
        assert_eq!(
            (a.lr1, a.epochs1, a.lr2, a.epochs2, a.batch),
            (1e-4, 10, 1e-5, 40, 8)
        );
        assert_eq!(a.block_len, 3);

        let cli = Cli::try_parse_from([
            "tadloc",
            "propose",
            "--checkpoint",
            "c",
            "--manifest",
            "m",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Propose(p) = cli.command else {
            panic!("expected propose");
        };
        assert_eq!(p.thr, 0.35);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["tadloc", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["tadloc", "synth"]), EXIT_USAGE);
    }

    #[test]
    fn run_manifest_name() {
        assert_eq!(
            run_manifest_path(Path::new("out/model.tanm")),
            PathBuf::from("out/model.tanm.run.json")
        );
    }
}
