//! Command-line surface: file I/O and orchestration of the pipeline stages.
//!
//! Exit codes: 0 success, 1 input error, 2 empty ensemble, 3 no reference
//! vertebra.

pub mod contour_file;
pub mod render;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{run_ensemble, AreaStats, EnsembleConfig, Provenance, RejectReason};
use crate::error::{Error, Result};
use crate::labeling::{find_reference, assign_labels, LabelFlag, LabelWarning, VertebraLabel};
use crate::metrics::{evaluate, EvaluationReport, PqTally, DEFAULT_THRESHOLDS};
use crate::synthgen::{corrupt, generate, CorruptionSpec, Region, SpineSpec};

pub use contour_file::{emit, read_contours, write_contours, ContourFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    InputError = 1,
    EmptyEnsemble = 2,
    NoReference = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn of_error(e: &Error) -> Self {
        match e {
            Error::NoReferenceFound => Exit::NoReference,
            _ => Exit::InputError,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vertx", version, about = "Ensemble, label and evaluate vertebra segmentations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge semantic and instance contour files into one ensembled file.
    Ensemble(EnsembleArgs),
    /// Label an ensembled file from the instance provider's reference vertebra.
    Label(LabelArgs),
    /// Score a labeled prediction against a labeled ground truth.
    Evaluate(EvaluateArgs),
    /// Write a synthetic spine and corrupted provider outputs.
    Synth(SynthArgs),
    /// Draw a contour file as a PNG overlay.
    Render(RenderArgs),
    /// Ensemble and label every `<id>.semantic.json`/`<id>.instance.json` pair in a directory.
    Batch(BatchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Thresholds {
    /// Agreement threshold.
    #[arg(long, default_value_t = 0.6)]
    pub eta: f64,
    /// Pickup interval half-width in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
}

impl Thresholds {
    fn config(&self) -> Result<EnsembleConfig> {
        EnsembleConfig::new(self.eta, self.lambda)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    pub semantic: PathBuf,
    pub instance: PathBuf,
    #[command(flatten)]
    pub thresholds: Thresholds,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    pub ensembled: PathBuf,
    pub instance: PathBuf,
    /// Agreement threshold used to bind the reference detection.
    #[arg(long, default_value_t = 0.6)]
    pub eta: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// IoU matching thresholds for panoptic quality.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegionArg {
    Cervical,
    Lumbar,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "cervical")]
    pub region: RegionArg,
    /// Number of vertebrae, 3 to 10.
    #[arg(long = "n", default_value_t = 7)]
    pub n_vertebrae: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 192)]
    pub width: u32,
    #[arg(long, default_value_t = 384)]
    pub height: u32,
    #[arg(long, default_value_t = 24.0)]
    pub vertebra_height: f64,
    #[arg(long, default_value_t = 8.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tilt: f64,
    /// Vertebra index (0 = top) missing from the instance output. Repeatable.
    #[arg(long = "drop")]
    pub drop: Vec<usize>,
    /// Adjacent pair `a,b` fused in the semantic output. Repeatable.
    #[arg(long = "merge", value_parser = parse_pair)]
    pub merge: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Do not tag the reference vertebra in the instance output.
    #[arg(long)]
    pub hide_reference: bool,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    pub contours: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    pub input_dir: PathBuf,
    #[command(flatten)]
    pub thresholds: Thresholds,
    #[arg(short, long)]
    pub out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(cli: &Cli, err: &mut dyn Write) -> Exit {
    match &cli.command {
        Command::Ensemble(a) => cmd_ensemble(a, err),
        Command::Label(a) => cmd_label(a, err),
        Command::Evaluate(a) => cmd_evaluate(a, err),
        Command::Synth(a) => cmd_synth(a, err),
        Command::Render(a) => cmd_render(a, err),
        Command::Batch(a) => cmd_batch(a, err),
    }
}

fn fail(err: &mut dyn Write, e: &Error) -> Exit {
    let _ = writeln!(err, "error: {e}");
    Exit::of_error(e)
}

#[derive(Serialize)]
struct RejectedRecord<'a> {
    provider: crate::ensemble::Provider,
    index: usize,
    #[serde(flatten)]
    reason: &'a RejectReason,
}

#[derive(Serialize)]
struct ProvenanceFile<'a> {
    schema_version: u32,
    provenance: &'a [Provenance],
    rejected: Vec<RejectedRecord<'a>>,
    stats: AreaStats,
    pickup_stats: AreaStats,
    warnings: &'a [String],
}

/// Sidecar path next to an output file: `x.json` -> `x.<suffix>.json`.
pub fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.json"))
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types always serialize");
    s.push('\n');
    s
}

fn ensemble_files(
    semantic: &Path,
    instance: &Path,
    cfg: &EnsembleConfig,
    out: &Path,
    err: &mut dyn Write,
) -> Result<Exit> {
    let sem = read_contours(semantic)?;
    let ins = read_contours(instance)?;
    let outcome = run_ensemble(&sem, &ins, cfg)?;
    write_contours(out, &outcome.ensembled)?;
    let sidecar = ProvenanceFile {
        schema_version: 1,
        provenance: &outcome.provenance,
        rejected: outcome
            .rejected
            .iter()
            .map(|r| RejectedRecord {
                provider: r.provider,
                index: r.index,
                reason: &r.reason,
            })
            .collect(),
        stats: outcome.stats,
        pickup_stats: outcome.pickup_stats,
        warnings: &outcome.warnings,
    };
    fs::write(sidecar_path(out, "provenance"), to_pretty(&sidecar))?;
    for w in &outcome.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    if outcome.is_empty() {
        let _ = writeln!(err, "error: empty ensemble");
        return Ok(Exit::EmptyEnsemble);
    }
    Ok(Exit::Ok)
}

pub fn cmd_ensemble(a: &EnsembleArgs, err: &mut dyn Write) -> Exit {
    let r = a
        .thresholds
        .config()
        .and_then(|cfg| ensemble_files(&a.semantic, &a.instance, &cfg, &a.out, err));
    r.unwrap_or_else(|e| fail(err, &e))
}

#[derive(Serialize)]
struct LabelRecord {
    index: usize,
    label: Option<VertebraLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flag: Option<LabelFlag>,
    extrapolated: bool,
}

#[derive(Serialize)]
struct LabelSidecar<'a> {
    schema_version: u32,
    reference: crate::labeling::ReferenceKind,
    reference_index: usize,
    vertebrae: Vec<LabelRecord>,
    warnings: &'a [LabelWarning],
}

fn label_files(ensembled: &Path, instance: &Path, eta: f64, out: &Path, err: &mut dyn Write) -> Result<Exit> {
    let cfg = EnsembleConfig {
        eta,
        ..EnsembleConfig::default()
    };
    cfg.validate()?;
    let ens = read_contours(ensembled)?;
    let ins = read_contours(instance)?;
    let m = find_reference(&ins, &ens, &cfg)?;
    let spine = assign_labels(&m.ensembled, m.detection.kind, m.index)?;
    write_contours(out, &spine.to_contour_set())?;
    let sidecar = LabelSidecar {
        schema_version: 1,
        reference: spine.reference,
        reference_index: spine.reference_index,
        vertebrae: spine
            .vertebrae
            .iter()
            .enumerate()
            .map(|(i, v)| LabelRecord {
                index: i,
                label: v.label,
                flag: v.flag,
                extrapolated: v.label.is_some_and(VertebraLabel::is_extrapolated),
            })
            .collect(),
        warnings: &m.warnings,
    };
    fs::write(sidecar_path(out, "labels"), to_pretty(&sidecar))?;
    for w in &m.warnings {
        let line = match w {
            LabelWarning::BothReferencesPresent { chosen, c2_score, s1_score } => format!(
                "both C2 (score {c2_score}) and S1 (score {s1_score}) detected; using {chosen:?}"
            ),
            LabelWarning::ReferenceInjected { best_agreement } => format!(
                "reference matched no ensembled mask (best agreement {best_agreement:.3}); added it"
            ),
        };
        let _ = writeln!(err, "warning: {line}");
    }
    for (i, v) in spine.vertebrae.iter().enumerate() {
        if let Some(flag) = v.flag {
            let _ = writeln!(err, "warning: mask {i} left unlabeled ({flag:?})");
        }
    }
    Ok(Exit::Ok)
}

pub fn cmd_label(a: &LabelArgs, err: &mut dyn Write) -> Exit {
    label_files(&a.ensembled, &a.instance, a.eta, &a.out, err).unwrap_or_else(|e| fail(err, &e))
}

#[derive(Serialize)]
struct ClassPq {
    pq: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    iou_sum: f64,
}

impl From<&PqTally> for ClassPq {
    fn from(t: &PqTally) -> Self {
        Self {
            pq: t.pq(),
            tp: t.tp,
            fp: t.fp,
            fn_: t.fn_,
            iou_sum: t.iou_sum,
        }
    }
}

#[derive(Serialize)]
struct ThresholdSection {
    threshold: f64,
    overall: ClassPq,
    per_class: BTreeMap<VertebraLabel, ClassPq>,
}

#[derive(Serialize)]
struct ReportFile {
    schema_version: u32,
    images: usize,
    mean_dice: f64,
    per_class_dice: BTreeMap<VertebraLabel, f64>,
    panoptic_quality: Vec<ThresholdSection>,
}

/// Report text with a fixed key order.
pub fn report_to_string(r: &EvaluationReport) -> String {
    to_pretty(&ReportFile {
        schema_version: 1,
        images: r.images,
        mean_dice: r.mean_dice(),
        per_class_dice: r.per_class_dice(),
        panoptic_quality: r
            .thresholds
            .iter()
            .map(|t| ThresholdSection {
                threshold: t.threshold,
                overall: ClassPq::from(&t.overall()),
                per_class: t.per_class.iter().map(|(l, v)| (*l, v.into())).collect(),
            })
            .collect(),
    })
}

pub fn cmd_evaluate(a: &EvaluateArgs, err: &mut dyn Write) -> Exit {
    let r = (|| -> Result<Exit> {
        let pred = read_contours(&a.pred)?;
        let gt = read_contours(&a.gt)?;
        let report = evaluate(&pred, &gt, &a.thresholds)?;
        fs::write(&a.out, report_to_string(&report))?;
        Ok(Exit::Ok)
    })();
    r.unwrap_or_else(|e| fail(err, &e))
}

pub fn synth_specs(a: &SynthArgs) -> (SpineSpec, CorruptionSpec) {
    let region = match a.region {
        RegionArg::Cervical => Region::Cervical,
        RegionArg::Lumbar => Region::Lumbar,
    };
    let mut spec = SpineSpec::new(region, a.n_vertebrae, a.seed).with_tilt(a.tilt);
    spec.frame.width = a.width;
    spec.frame.height = a.height;
    spec.vertebra_height = a.vertebra_height;
    spec.gap = a.gap;
    let corruption = CorruptionSpec {
        drop_indices: a.drop.iter().copied().collect(),
        merge_pairs: a.merge.iter().copied().collect(),
        jitter_amplitude: a.jitter,
        reference_visible: !a.hide_reference,
    };
    (spec, corruption)
}

pub const SYNTH_FILES: [&str; 4] = [
    "ground_truth.json",
    "semantic.json",
    "instance.json",
    "canonical_order.json",
];

pub fn cmd_synth(a: &SynthArgs, err: &mut dyn Write) -> Exit {
    let r = (|| -> Result<Exit> {
        let (spec, corruption) = synth_specs(a);
        let synth = generate(&spec)?;
        let (sem, ins) = corrupt(&synth.ground_truth, &corruption, a.seed)?;
        fs::create_dir_all(&a.out_dir)?;
        write_contours(&a.out_dir.join(SYNTH_FILES[0]), &synth.ground_truth_set())?;
        write_contours(&a.out_dir.join(SYNTH_FILES[1]), &sem)?;
        write_contours(&a.out_dir.join(SYNTH_FILES[2]), &ins)?;
        fs::write(a.out_dir.join(SYNTH_FILES[3]), to_pretty(&synth.canonical_order))?;
        Ok(Exit::Ok)
    })();
    r.unwrap_or_else(|e| fail(err, &e))
}

pub fn cmd_render(a: &RenderArgs, err: &mut dyn Write) -> Exit {
    let r = read_contours(&a.contours).and_then(|set| render::render_to_file(&set, &a.out));
    match r {
        Ok(()) => Exit::Ok,
        Err(e) => fail(err, &e),
    }
}

/// Image ids with both provider files present, sorted.
pub fn batch_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".semantic.json") {
            if dir.join(format!("{id}.instance.json")).is_file() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn batch_one(id: &str, a: &BatchArgs, cfg: &EnsembleConfig) -> (Exit, Vec<u8>) {
    let mut log = Vec::new();
    let sem = a.input_dir.join(format!("{id}.semantic.json"));
    let ins = a.input_dir.join(format!("{id}.instance.json"));
    let ens = a.out_dir.join(format!("{id}.ensembled.json"));
    let lab = a.out_dir.join(format!("{id}.labeled.json"));
    let code = match ensemble_files(&sem, &ins, cfg, &ens, &mut log) {
        Ok(Exit::Ok) => label_files(&ens, &ins, cfg.eta, &lab, &mut log)
            .unwrap_or_else(|e| fail(&mut log, &e)),
        Ok(code) => code,
        Err(e) => fail(&mut log, &e),
    };
    (code, log)
}

/// Exit code is the worst per-image code.
pub fn cmd_batch(a: &BatchArgs, err: &mut dyn Write) -> Exit {
    let r = (|| -> Result<Vec<(String, Exit, Vec<u8>)>> {
        let cfg = a.thresholds.config()?;
        let ids = batch_ids(&a.input_dir)?;
        fs::create_dir_all(&a.out_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(a.jobs.max(1))
            .build()
            .map_err(|e| Error::Format(format!("thread pool: {e}")))?;
        Ok(pool.install(|| {
            ids.par_iter()
                .map(|id| {
                    let (code, log) = batch_one(id, a, &cfg);
                    (id.clone(), code, log)
                })
                .collect()
        }))
    })();
    match r {
        Err(e) => fail(err, &e),
        Ok(results) => {
            let mut worst = Exit::Ok;
            for (id, code, log) in results {
                for line in String::from_utf8_lossy(&log).lines() {
                    let _ = writeln!(err, "{id}: {line}");
                }
                let _ = writeln!(err, "{id}: exit {}", code.code());
                if code.code() > worst.code() {
                    worst = code;
                }
            }
            worst
        }
    }
}
