//! The work behind each subcommand, callable without the argument parser.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use uda_core::analysis::{
    adaptability_report, embeddings, fourier_sensitivity, pick_anchors, sensitivity_report, trajectory_sensitivity,
    AdaptabilityReport, Domain, FourierHeatmap, ProbeConfig, SensitivityReport, TrajectoryCurve,
};
use uda_core::datasets::{DataModality, DomainPair};
use uda_core::gradcheck::{check_loss, GradReport, LossKind};
use uda_core::nn::ModelBundle;
use uda_core::rng_from_seed;
use uda_core::trainer::{train, Method, MetricsRecord, RunConfig, TargetEval};

use crate::checkpoint::Checkpoint;
use crate::config::{config_hash, to_json};
use crate::error::{LabError, Result};
use crate::formats::{pair_hash, save_embeddings, save_pair, write_table};
use crate::metrics::MetricsWriter;

pub const OUT_ENV: &str = "UDA_LAB_OUT";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Output root: `$UDA_LAB_OUT` if set, else `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<config hash>-<unix seconds>` under `root`.
pub fn fresh_run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    root.join(format!("{}-{secs}", config_hash(cfg)))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

/// Writes the configured dataset to `<out>` as CSV and returns it.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<DomainPair> {
    let pair = cfg.dataset.generate(cfg.seed.data)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_pair(&pair, out)?;
    Ok(pair)
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub pair: DomainPair,
    pub bundle: ModelBundle,
    pub history: Vec<MetricsRecord>,
}

/// Generates the data, trains, and writes `config.json`, `metrics.csv` and
/// `checkpoint.json` into `dir`. `progress` sees each epoch record.
pub fn train_run(cfg: &RunConfig, dir: &Path, mut progress: impl FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    cfg.validate().map_err(|e| LabError::Config(e.to_string()))?;
    create_dir(dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, to_json(cfg)).map_err(|e| LabError::io(&cfg_path, e))?;
    let pair = cfg.dataset.generate(cfg.seed.data)?;

    let writer = MetricsWriter::spawn(&dir.join(METRICS_FILE))?;
    let result = train(cfg, pair.training_view(), Some(TargetEval::new(&pair)), |rec| {
        writer.send(rec);
        progress(rec);
    });
    let rows = writer.finish();
    let out = result?;
    rows?;

    let ckpt = Checkpoint::capture(&out.bundle, &cfg.architecture(), Some(pair.meta().clone()));
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome { dir: dir.to_path_buf(), pair, bundle: out.bundle, history: out.history })
}

/// Diagnostics selectable by `analyze --which`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    Jacobian,
    Trajectory,
    Fourier,
    Adaptability,
    Embeddings,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 5] = [
        Diagnostic::Jacobian,
        Diagnostic::Trajectory,
        Diagnostic::Fourier,
        Diagnostic::Adaptability,
        Diagnostic::Embeddings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Jacobian => "jacobian",
            Diagnostic::Trajectory => "trajectory",
            Diagnostic::Fourier => "fourier",
            Diagnostic::Adaptability => "adaptability",
            Diagnostic::Embeddings => "embeddings",
        }
    }

    pub fn file(self) -> &'static str {
        match self {
            Diagnostic::Jacobian => "sensitivity.csv",
            Diagnostic::Trajectory => "trajectory.csv",
            Diagnostic::Fourier => "fourier.csv",
            Diagnostic::Adaptability => "adaptability.json",
            Diagnostic::Embeddings => "embeddings.csv",
        }
    }

    /// Parses a comma-separated list; `all` selects every diagnostic that
    /// applies to `modality` (Fourier needs images).
    pub fn parse_list(s: &str, modality: DataModality) -> Result<Vec<Diagnostic>> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if item == "all" {
                for d in Diagnostic::ALL {
                    if (d != Diagnostic::Fourier || modality.is_image()) && !out.contains(&d) {
                        out.push(d);
                    }
                }
                continue;
            }
            let d = Diagnostic::ALL
                .into_iter()
                .find(|d| d.name() == item)
                .ok_or_else(|| LabError::Config(format!("unknown diagnostic '{item}'")))?;
            if !out.contains(&d) {
                out.push(d);
            }
        }
        if out.is_empty() {
            return Err(LabError::Config("no diagnostics selected".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub probe: ProbeConfig,
    pub trajectory_points: usize,
    pub fourier_norm: f64,
    pub seed: u64,
    pub baseline_target_error: Option<f64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            probe: ProbeConfig::default(),
            trajectory_points: 64,
            fourier_norm: 1.0,
            seed: 0,
            baseline_target_error: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct AdaptabilityFile<'a> {
    #[serde(flatten)]
    report: &'a AdaptabilityReport,
    target_accuracy: f64,
}

fn sensitivity_rows(r: &SensitivityReport) -> Vec<Vec<String>> {
    let mut rows = vec![
        vec!["source".into(), "mean".into(), r.source.mean.to_string()],
        vec!["target".into(), "mean".into(), r.target.mean.to_string()],
    ];
    for (name, d) in [("source", &r.source), ("target", &r.target)] {
        for (i, v) in d.per_sample.iter().enumerate() {
            rows.push(vec![name.into(), i.to_string(), v.to_string()]);
        }
    }
    rows
}

fn trajectory_rows(name: &str, c: &TrajectoryCurve, bundle: &ModelBundle, pair: &DomainPair) -> Result<Vec<Vec<String>>> {
    let mut rows: Vec<Vec<String>> = c
        .grid
        .iter()
        .zip(&c.norms)
        .enumerate()
        .map(|(i, (t, n))| vec![name.into(), "grid".into(), i.to_string(), t.to_string(), n.to_string()])
        .collect();
    let anchors = pair.x_t().gather_rows(&c.anchor_indices);
    let norms = uda_core::analysis::jacobian_norms(bundle, &anchors)?;
    for k in 0..3 {
        rows.push(vec![
            name.into(),
            "anchor".into(),
            c.anchor_indices[k].to_string(),
            c.anchor_angles[k].to_string(),
            norms[k].to_string(),
        ]);
    }
    Ok(rows)
}

fn fourier_rows(domain: &str, h: &FourierHeatmap) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(h.height * h.width);
    for a in 0..h.height {
        for b in 0..h.width {
            let (u, v) = h.frequency(a, b);
            rows.push(vec![domain.into(), u.to_string(), v.to_string(), h.at(a, b).to_string(), h.perturbation_norm.to_string()]);
        }
    }
    rows
}

/// Runs the selected diagnostics on a frozen model and writes one file per
/// diagnostic into `dir`. Returns the written paths.
pub fn analyze(
    bundle: &ModelBundle,
    pair: &DomainPair,
    which: &[Diagnostic],
    opts: &AnalyzeOptions,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if which.contains(&Diagnostic::Fourier) && !pair.modality().is_image() {
        return Err(LabError::Incompatible(format!("fourier needs image data, got {}", pair.modality().name())));
    }
    if bundle.input_dim() != pair.input_dim() || bundle.num_classes() != pair.num_classes() {
        return Err(LabError::Incompatible("checkpoint and dataset shapes differ".into()));
    }
    create_dir(dir)?;
    let mut written = Vec::new();
    for &d in which {
        let path = dir.join(d.file());
        match d {
            Diagnostic::Jacobian => {
                let r = sensitivity_report(bundle, pair)?;
                write_table(&path, &["domain", "sample", "jacobian_norm"], sensitivity_rows(&r))?;
            }
            Diagnostic::Trajectory => {
                let mut rng = rng_from_seed(opts.seed);
                let mut rows = Vec::new();
                for (name, same) in [("same_class", true), ("different_class", false)] {
                    let idx = pick_anchors(bundle, pair.x_t(), pair.target_labels(), same, &mut rng)?;
                    let anchors = pair.x_t().gather_rows(&idx);
                    let c = trajectory_sensitivity(bundle, &anchors, idx, opts.trajectory_points)?;
                    rows.extend(trajectory_rows(name, &c, bundle, pair)?);
                }
                write_table(&path, &["curve", "kind", "index", "t", "jacobian_norm"], rows)?;
            }
            Diagnostic::Fourier => {
                let mut rows = Vec::new();
                for (name, dom) in [("source", Domain::Source), ("target", Domain::Target)] {
                    let h = fourier_sensitivity(bundle, pair, dom, opts.fourier_norm, opts.seed)?;
                    rows.extend(fourier_rows(name, &h));
                }
                write_table(&path, &["domain", "freq_u", "freq_v", "error", "perturbation_norm"], rows)?;
            }
            Diagnostic::Adaptability => {
                let report = adaptability_report(bundle, pair, &opts.probe, opts.baseline_target_error)?;
                let target_accuracy = uda_core::trainer::evaluate(bundle, pair.x_t(), pair.target_labels())?;
                let s = serde_json::to_string_pretty(&AdaptabilityFile { report: &report, target_accuracy })
                    .map_err(|e| LabError::format("adaptability report", e))?;
                std::fs::write(&path, s + "\n").map_err(|e| LabError::io(&path, e))?;
            }
            Diagnostic::Embeddings => save_embeddings(&embeddings(bundle, pair)?, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub preset: Method,
    pub dataset_hash: String,
    pub outcome: std::result::Result<SweepMetrics, String>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetrics {
    pub source_acc: f64,
    pub target_acc: f64,
    pub d_a: f64,
    pub lambda: f64,
    pub jacobian_source: f64,
    pub jacobian_target: f64,
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "preset",
    "status",
    "dataset_hash",
    "source_acc",
    "target_acc",
    "d_a",
    "lambda",
    "jacobian_source",
    "jacobian_target",
    "run_dir",
];

fn sweep_one(base: &RunConfig, preset: Method, root: &Path, probe: &ProbeConfig) -> SweepRow {
    let mut cfg = base.clone();
    cfg.method = preset;
    let dir = root.join(preset.to_string().replace('+', "_"));
    let dataset_hash = cfg.dataset.generate(cfg.seed.data).map(|p| pair_hash(&p)).unwrap_or_default();
    let outcome = (|| -> Result<SweepMetrics> {
        let run = train_run(&cfg, &dir, |_| {})?;
        let last = run.history.last().ok_or_else(|| LabError::Config("epochs must be positive".into()))?;
        let sens = sensitivity_report(&run.bundle, &run.pair)?;
        let adapt = adaptability_report(&run.bundle, &run.pair, probe, None)?;
        Ok(SweepMetrics {
            source_acc: last.source_acc,
            target_acc: last.target_acc.unwrap_or(f64::NAN),
            d_a: adapt.d_a,
            lambda: adapt.lambda_estimate,
            jacobian_source: sens.source.mean,
            jacobian_target: sens.target.mean,
        })
    })()
    .map_err(|e| e.to_string());
    SweepRow { preset, dataset_hash, outcome, dir }
}

/// Runs every preset with the base config's seeds, `parallel` at a time,
/// and writes `summary.csv` under `root`. Rows keep the preset order.
pub fn sweep(
    base: &RunConfig,
    presets: &[Method],
    root: &Path,
    parallel: usize,
    probe: &ProbeConfig,
) -> Result<Vec<SweepRow>> {
    create_dir(root)?;
    let parallel = parallel.max(1);
    let mut rows: Vec<SweepRow> = Vec::with_capacity(presets.len());
    for chunk in presets.chunks(parallel) {
        let done: Vec<SweepRow> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&p| s.spawn(move || sweep_one(base, p, root, probe))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        rows.extend(done);
    }
    let table = rows.iter().map(|r| {
        let mut line = vec![r.preset.to_string()];
        match &r.outcome {
            Ok(m) => {
                line.push("ok".into());
                line.push(r.dataset_hash.clone());
                for v in [m.source_acc, m.target_acc, m.d_a, m.lambda, m.jacobian_source, m.jacobian_target] {
                    line.push(v.to_string());
                }
            }
            Err(e) => {
                line.push(format!("failed: {e}"));
                line.push(r.dataset_hash.clone());
                line.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        line.push(r.dir.display().to_string());
        line
    });
    write_table(&root.join(SUMMARY_FILE), &SUMMARY_HEADER, table)?;
    Ok(rows)
}

pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckLine {
    pub loss: LossKind,
    pub report: std::result::Result<GradReport, String>,
}

impl GradCheckLine {
    pub fn passed(&self) -> bool {
        matches!(&self.report, Ok(r) if r.passes(GRAD_TOLERANCE))
    }
}

/// Runs `check` on every loss. The default checker is
/// [`uda_core::gradcheck::check_loss`]; tests substitute a broken one.
pub fn grad_check_battery(mut check: impl FnMut(LossKind) -> uda_core::Result<GradReport>) -> Vec<GradCheckLine> {
    LossKind::ALL
        .into_iter()
        .map(|loss| GradCheckLine { loss, report: check(loss).map_err(|e| e.to_string()) })
        .collect()
}

pub fn default_grad_check() -> Vec<GradCheckLine> {
    grad_check_battery(|k| check_loss(k, 1))
}

/// Human-readable table for stdout.
pub fn grad_check_table(lines: &[GradCheckLine]) -> String {
    let mut s = format!("{:<8} {:>14} {:>14}  {}\n", "loss", "max_abs_err", "max_rel_err", "status");
    for l in lines {
        match &l.report {
            Ok(r) => s += &format!(
                "{:<8} {:>14.3e} {:>14.3e}  {}\n",
                l.loss.name(),
                r.max_abs_error,
                r.max_rel_error,
                if l.passed() { "ok" } else { "FAIL" }
            ),
            Err(e) => s += &format!("{:<8} {:>14} {:>14}  FAIL ({e})\n", l.loss.name(), "-", "-"),
        }
    }
    s
}

/// Error naming every failing loss, if any.
pub fn grad_check_verdict(lines: &[GradCheckLine]) -> Result<()> {
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.loss.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(LabError::GradCheck(failed.join(", ")))
    }
}
