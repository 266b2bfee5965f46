//! Command-line interface. Every command with an output directory also
//! writes a `manifest.json` into it; `replay` reruns a manifest into a new
//! directory after checking that its inputs are unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::{build_index, read_jsonl, write_jsonl, IndexEntry, RawBoxRecord, RawKeypointRecord};
use crate::anonymizers::Method;
use crate::error::{Error, Result};
use crate::evaluation::{
    ap_degradation_report, embedded_stats, face_resolution_stats, frechet_distance, DetectionRecord, Difficulty,
    EvalReport, FidEntry, GroundTruthRecord, RandomConvEmbedder, DEFAULT_EMBEDDER_SEED,
};
use crate::image_io::{list_pngs, load_rgb, save_rgb};
use crate::preprocess::normalize_u8;
use crate::training::{load_checkpoint, DataSource, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Parser, Debug)]
#[command(name = "faceanon", version, about = "Face anonymization and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Match raw keypoint and box detections into a dataset index.
    BuildIndex(BuildIndexArgs),
    /// Train from a TOML config.
    Train(TrainArgs),
    /// Anonymize every PNG in a directory.
    Anonymize(AnonymizeArgs),
    /// FID between two image directories.
    EvalFid(EvalFidArgs),
    /// Detection AP before and after anonymization.
    EvalAp(EvalApArgs),
    /// Rerun a manifest into a new output directory.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub boxes: PathBuf,
    #[arg(long, default_value_t = crate::annotations::MIN_INDEX_RESOLUTION)]
    pub min_resolution: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML training config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after this many steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also checkpoint every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AnonymizeArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Dataset index (JSON lines) naming the faces of each image.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Training checkpoint; required by the generative method.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalFidArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub fake: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EMBEDDER_SEED)]
    pub embedder_seed: u64,
    /// Directory for report.json and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalApArgs {
    /// Ground-truth faces (JSON lines: image, box, difficulty).
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Detections on the original images (JSON lines: image, box, confidence).
    #[arg(long)]
    pub original: PathBuf,
    /// Detections on the anonymized images.
    #[arg(long)]
    pub anonymized: PathBuf,
    #[arg(long, default_value_t = crate::evaluation::DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Directory for report.json, report.csv and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// What a run consumed and produced, enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the program name, with the output directory last.
    pub args: Vec<String>,
    pub code_version: String,
    /// Resolved training config (train runs only).
    pub config: Option<String>,
    pub seed: Option<u64>,
    /// SHA-256 of every input file, by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Run {
    command: &'static str,
    args: Vec<String>,
    config: Option<String>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, args: Vec<String>) -> Self {
        Run {
            command,
            args,
            config: None,
            seed: None,
            inputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn finish(self, out: &Path) -> Result<Manifest> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), file_digest(p)?);
        }
        let mut outputs = BTreeMap::new();
        digest_tree(out, out, &mut outputs)?;
        let manifest = Manifest {
            command: self.command.into(),
            args: self.args,
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seed: self.seed,
            inputs,
            outputs,
        };
        write_file(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}

fn digest_tree(root: &Path, dir: &Path, into: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            digest_tree(root, &p, into)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = p.strip_prefix(root).unwrap_or(&p).display().to_string();
            into.insert(rel, file_digest(&p)?);
        }
    }
    Ok(())
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_build_index(a: &BuildIndexArgs) -> Result<Vec<IndexEntry>> {
    let keypoints: Vec<RawKeypointRecord> = read_jsonl(&a.keypoints)?;
    let boxes: Vec<RawBoxRecord> = read_jsonl(&a.boxes)?;
    let index = build_index(&keypoints, &boxes, a.min_resolution);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_jsonl(&a.out, &index)?;
    log::info!(
        "{} faces in {} images written to {}",
        index.iter().map(|e| e.faces.len()).sum::<usize>(),
        index.len(),
        a.out.display()
    );
    Ok(index)
}

pub fn cmd_train(a: &TrainArgs) -> Result<Manifest> {
    let mut run = Run::new("train", Vec::new());
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            run.input(ckpt);
            load_checkpoint(ckpt)?
        }
        None => {
            let cfg = match &a.config {
                Some(p) => {
                    run.input(p);
                    TrainConfig::from_toml_file(p)?
                }
                None => TrainConfig::default(),
            };
            Trainer::new(cfg)?
        }
    };
    let cfg = trainer.config().clone();
    if cfg.data.source == DataSource::Index {
        if let Some(index) = &cfg.data.index {
            run.input(index);
        }
    }
    let data = cfg.data.load(cfg.generator.max_resolution)?;
    create_dir(&a.out)?;
    let metrics_path = a.out.join(METRICS_FILE);
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let steps = trainer.run(&data, a.max_steps, |t, m| {
        writeln!(metrics, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&metrics_path, e))?;
        if let Some(every) = a.checkpoint_every.filter(|&e| e > 0) {
            if (m.step + 1) % every == 0 {
                t.save(&a.out.join(format!("checkpoint-{:08}.ckpt", m.step + 1)))?;
            }
        }
        log::info!(
            "step {} res {} alpha {:.3} loss_d {:.4} loss_g {:.4}",
            m.step,
            m.resolution,
            m.alpha,
            m.loss_d,
            m.loss_g
        );
        Ok(())
    })?;
    drop(metrics);
    trainer.save(&a.out.join(CHECKPOINT_FILE))?;
    log::info!("{steps} steps, {} images seen", trainer.progress().images_seen);

    run.args = vec!["train".into()];
    if let Some(p) = &a.config {
        run.args.extend(["--config".into(), path_arg(p)]);
    }
    if let Some(p) = &a.resume {
        run.args.extend(["--resume".into(), path_arg(p)]);
    }
    if let Some(n) = a.max_steps {
        run.args.extend(["--max-steps".into(), n.to_string()]);
    }
    if let Some(n) = a.checkpoint_every {
        run.args.extend(["--checkpoint-every".into(), n.to_string()]);
    }
    run.args.extend(["--out".into(), path_arg(&a.out)]);
    run.config = Some(cfg.to_toml_string()?);
    run.seed = Some(cfg.seed);
    run.finish(&a.out)
}

pub fn cmd_anonymize(a: &AnonymizeArgs) -> Result<Manifest> {
    let mut run = Run::new("anonymize", Vec::new());
    run.input(&a.annotations);
    let index: Vec<IndexEntry> = read_jsonl(&a.annotations)?;
    let faces: BTreeMap<&str, &IndexEntry> = index.iter().map(|e| (e.image.as_str(), e)).collect();
    let trainer = match (a.method.needs_generator(), &a.checkpoint) {
        (true, Some(ckpt)) => {
            run.input(ckpt);
            Some(load_checkpoint(ckpt)?)
        }
        (true, None) => return Err(Error::invalid("--checkpoint is required for the generative method")),
        (false, _) => None,
    };
    let generator = trainer.as_ref().map(|t| t.ema_generator());
    create_dir(&a.out)?;
    let mut skipped = 0;
    for path in list_pngs(&a.input)? {
        run.input(&path);
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let image = load_rgb(&path)?;
        let annotations = faces.get(name.as_str()).map_or(&[][..], |e| &e.faces[..]);
        let done = a.method.apply(&image, annotations, generator)?;
        for (i, why) in &done.skipped {
            log::warn!("{name}: face {i} left as is: {why}");
        }
        skipped += done.skipped.len();
        save_rgb(&done.image, &a.out.join(&name))?;
    }
    if skipped > 0 {
        log::warn!("{skipped} face(s) could not be anonymized");
    }
    run.args = vec!["anonymize".into(), "--method".into(), a.method.name().into()];
    run.args.extend(["--annotations".into(), path_arg(&a.annotations)]);
    if let Some(p) = &a.checkpoint {
        run.args.extend(["--checkpoint".into(), path_arg(p)]);
    }
    run.args.extend(["--in".into(), path_arg(&a.input), "--out".into(), path_arg(&a.out)]);
    run.finish(&a.out)
}

fn directory_stats(dir: &Path, embedder: &RandomConvEmbedder, run: &mut Run) -> Result<crate::evaluation::FeatureStats> {
    let paths = list_pngs(dir)?;
    for p in &paths {
        run.input(p);
    }
    embedded_stats(embedder, paths.len(), 1, |r| {
        let t = normalize_u8(&load_rgb(&paths[r.start])?)?;
        let shape = [1, t.shape()[0], t.shape()[1], t.shape()[2]];
        t.reshape(&shape)
    })
}

pub fn cmd_eval_fid(a: &EvalFidArgs) -> Result<f64> {
    let mut run = Run::new("eval-fid", Vec::new());
    let embedder = RandomConvEmbedder::new(a.embedder_seed);
    let real = directory_stats(&a.real, &embedder, &mut run)?;
    let fake = directory_stats(&a.fake, &embedder, &mut run)?;
    let fid = frechet_distance(&real, &fake)?;
    let report = EvalReport {
        fid: vec![FidEntry {
            name: format!("{} vs {}", a.real.display(), a.fake.display()),
            value: fid,
        }],
        ..Default::default()
    };
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("report.json"), report.to_json()?.as_bytes())?;
        run.args = vec![
            "eval-fid".into(),
            "--real".into(),
            path_arg(&a.real),
            "--fake".into(),
            path_arg(&a.fake),
            "--embedder-seed".into(),
            a.embedder_seed.to_string(),
            "--out".into(),
            path_arg(out),
        ];
        run.finish(out)?;
    }
    Ok(fid)
}

fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let dets: Vec<DetectionRecord> = read_jsonl(path)?;
    for d in &dets {
        d.validate()?;
    }
    Ok(dets)
}

pub fn cmd_eval_ap(a: &EvalApArgs) -> Result<EvalReport> {
    let mut run = Run::new("eval-ap", Vec::new());
    for p in [&a.ground_truth, &a.original, &a.anonymized] {
        run.input(p);
    }
    let gts: Vec<GroundTruthRecord> = read_jsonl(&a.ground_truth)?;
    let original = read_detections(&a.original)?;
    let anonymized = read_detections(&a.anonymized)?;
    let report = EvalReport {
        fid: Vec::new(),
        ap: ap_degradation_report(&original, &anonymized, &gts, &Difficulty::ALL, a.iou_threshold)?,
        resolution: face_resolution_stats(&gts, &crate::evaluation::report::DEFAULT_RESOLUTION_THRESHOLDS),
    };
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("report.json"), report.to_json()?.as_bytes())?;
        write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
        run.args = vec![
            "eval-ap".into(),
            "--ground-truth".into(),
            path_arg(&a.ground_truth),
            "--original".into(),
            path_arg(&a.original),
            "--anonymized".into(),
            path_arg(&a.anonymized),
            "--iou-threshold".into(),
            a.iou_threshold.to_string(),
            "--out".into(),
            path_arg(out),
        ];
        run.finish(out)?;
    }
    Ok(report)
}

/// Rerun `manifest` with its output directory replaced by `out`. Inputs
/// whose digest changed are an error.
pub fn cmd_replay(a: &ReplayArgs) -> Result<Manifest> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    for (path, digest) in &manifest.inputs {
        let now = file_digest(Path::new(path))?;
        if &now != digest {
            return Err(Error::Data(format!("input {path} changed since the run was recorded")));
        }
    }
    let mut args = manifest.args.clone();
    match args.iter().position(|s| s == "--out") {
        Some(i) if i + 1 < args.len() => args[i + 1] = path_arg(&a.out),
        _ => return Err(Error::Data("manifest has no output directory".into())),
    }
    if args.first().map(String::as_str) == Some("replay") {
        return Err(Error::Data("a replay manifest cannot be replayed".into()));
    }
    let cli = Cli::try_parse_from(std::iter::once("faceanon".to_string()).chain(args))
        .map_err(|e| Error::Data(format!("manifest arguments do not parse: {e}")))?;
    dispatch(&cli)?;
    let path = a.out.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildIndex(a) => cmd_build_index(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Anonymize(a) => cmd_anonymize(a).map(drop),
        Command::EvalFid(a) => cmd_eval_fid(a).map(drop),
        Command::EvalAp(a) => cmd_eval_ap(a).map(drop),
        Command::Replay(a) => cmd_replay(a).map(drop),
    }
}

/// Parse `argv`, run the command, and return the process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
