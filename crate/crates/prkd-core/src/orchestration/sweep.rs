//! Run management: hash-keyed run directories with resume, the teacher
//! sweep, and the distillation-term ablation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{LoadedDataset, Splits};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::objectives::LossWeights;
use crate::optics::{export_mask_bank, PhaseMaskBank};

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, TrainingMode};
use super::evaluate::evaluate_params;
use super::trainer::{train, ModelParams};

/// One completed (or resumed) training run.
#[derive(Debug)]
pub struct RunRecord {
    pub label: String,
    pub dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub config: ExperimentConfig,
    pub test_report: MetricReport,
    /// Per-step training losses (read back from disk on resume).
    pub trace: Vec<f64>,
}

impl RunRecord {
    pub fn load_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::load(&self.checkpoint_path)
    }
}

fn note_label(dir: &Path, label: &str) -> Result<()> {
    let path = dir.join("labels.txt");
    let existing = std::fs::read_to_string(&path).unwrap_or_default();
    if !existing.lines().any(|l| l == label) {
        std::fs::write(&path, format!("{existing}{label}\n"))?;
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .ok_or_else(|| Error::Format("trace row too short".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("trace: {e}")))
        })
        .collect()
}

/// Train one run into `out_dir/<label>-<hash8>/`, or load it if a checkpoint
/// with the same config hash is already there. Writes the checkpoint, loss
/// trace, validation history, test metrics (CSV + JSON), and the exported
/// mask bank.
pub fn ensure_run(
    cfg: &ExperimentConfig,
    teacher: Option<&Checkpoint>,
    data: &LoadedDataset<f32>,
    splits: &Splits,
    out_dir: &Path,
    label: &str,
) -> Result<RunRecord> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    // directories are keyed by config hash so one run is shared between every
    // caller that asks for the same config under any label
    let dir = out_dir.join(&hash[..16]);
    std::fs::create_dir_all(&dir)?;
    note_label(&dir, label)?;
    let ckpt_path = dir.join("checkpoint.prkd");
    let trace_path = dir.join("trace.csv");
    let report_path = dir.join("test_report.csv");
    let metrics_path = dir.join("test_metrics.json");

    if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if ckpt.config_hash == hash {
            log::info!("[{label}] resuming from {}", ckpt_path.display());
            let trace = read_trace(&trace_path).unwrap_or_default();
            let test_report = match MetricReport::read_csv(&report_path) {
                Ok(rows) => MetricReport::from_images(rows, hash.clone(), cfg.seed, 0)?,
                Err(_) => {
                    let params = ModelParams::from_checkpoint(&ckpt)?;
                    let (report, _) =
                        evaluate_params(&params, cfg, data, &splits.test, cfg.seed, false)?;
                    report.write_csv(&report_path)?;
                    report
                }
            };
            return Ok(RunRecord {
                label: label.to_string(),
                dir,
                checkpoint_path: ckpt_path,
                config: cfg.clone(),
                test_report,
                trace,
            });
        }
        log::warn!("[{label}] checkpoint hash mismatch; retraining");
    }

    let started = std::time::Instant::now();
    let outcome = train(cfg, teacher, data, splits)?;
    log::info!(
        "[{label}] trained {} epochs in {:.1}s (best epoch {})",
        cfg.optimizer.epochs,
        started.elapsed().as_secs_f64(),
        outcome.best_epoch
    );
    outcome.checkpoint.save(&ckpt_path)?;
    write_trace(&trace_path, &outcome.trace)?;
    {
        let mut out = String::from("epoch,val_psnr_mean\n");
        for (e, v) in outcome.val_psnr.iter().enumerate() {
            out.push_str(&format!("{e},{v}\n"));
        }
        std::fs::write(dir.join("val_history.csv"), out)?;
    }

    let params = ModelParams::from_checkpoint(&outcome.checkpoint)?;
    let (test_report, _) = evaluate_params(&params, cfg, data, &splits.test, cfg.seed, false)?;
    test_report.write_csv(&report_path)?;
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&test_report.to_json()).unwrap(),
    )?;
    let bank = PhaseMaskBank::new(
        params
            .phases
            .clone()
            .into_dimensionality()
            .expect("rank 3"),
    )?;
    export_mask_bank(&bank, &dir.join("masks.bin"), &dir.join("masks.json"))?;

    Ok(RunRecord {
        label: label.to_string(),
        dir,
        checkpoint_path: ckpt_path,
        config: cfg.clone(),
        test_report,
        trace: outcome.trace,
    })
}

/// Independent runs executed at a time. The kernels scale poorly past one
/// thread on small tensors, so concurrency across whole runs is where the
/// second core pays off.
pub const PARALLEL_RUNS: usize = 2;

/// Execute independent work items on a fixed-width worker set, preserving
/// item order in the results.
fn execute_items<I: Sync, R: Send>(
    items: &[I],
    width: usize,
    f: impl Fn(&I) -> R + Sync,
) -> Vec<R> {
    let n = items.len();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..width.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled the slot"))
        .collect()
}

/// A queued training request for [`ensure_runs`].
pub struct RunRequest {
    pub config: ExperimentConfig,
    pub teacher: Option<PathBuf>,
    pub label: String,
}

/// Train (or resume) a batch of independent runs, [`PARALLEL_RUNS`] at a
/// time, preserving request order.
pub fn ensure_runs(
    requests: &[RunRequest],
    data: &LoadedDataset<f32>,
    splits: &Splits,
    out_dir: &Path,
) -> Vec<Result<RunRecord>> {
    execute_items(requests, PARALLEL_RUNS, |req| {
        let teacher = match &req.teacher {
            Some(p) => Some(Checkpoint::load(p)?),
            None => None,
        };
        ensure_run(
            &req.config,
            teacher.as_ref(),
            data,
            splits,
            out_dir,
            &req.label,
        )
    })
}

/// Outcome of the teacher sweep: per snapshot count, per seed.
#[derive(Debug, Default)]
pub struct SweepResults {
    pub teachers: Vec<(usize, Vec<RunRecord>)>,
    pub students: Vec<(usize, Vec<RunRecord>)>,
    /// (label, error message) for failed items; the sweep continues past
    /// individual failures.
    pub failures: Vec<(String, String)>,
}

/// Build the teacher config for a snapshot count and seed from a template.
pub fn teacher_config(base: &ExperimentConfig, snapshots: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.mode = TrainingMode::Teacher;
    cfg.snapshots = snapshots;
    cfg.seed = seed;
    cfg.loss = LossWeights::new(1.0, 0.0, base.loss.rho(), base.loss.reg_levels()).unwrap();
    cfg.teacher_checkpoint = None;
    cfg
}

/// Build the student config distilling from a given teacher checkpoint.
pub fn student_config(
    base: &ExperimentConfig,
    weights: LossWeights,
    seed: u64,
    teacher_ckpt: &Path,
) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.mode = TrainingMode::KdStudent;
    cfg.snapshots = 1;
    cfg.seed = seed;
    cfg.loss = weights;
    cfg.teacher_checkpoint = Some(teacher_ckpt.to_path_buf());
    cfg
}

/// Train teachers for each snapshot count (and optionally a distilled
/// student per teacher), several seeds each. Individual failures are
/// recorded and skipped.
pub fn sweep_teachers(
    base: &ExperimentConfig,
    snapshot_list: &[usize],
    seeds: &[u64],
    with_students: bool,
    data: &LoadedDataset<f32>,
    splits: &Splits,
    out_dir: &Path,
) -> Result<SweepResults> {
    if snapshot_list.is_empty() {
        return Err(Error::Config("sweep needs a nonempty snapshot list".into()));
    }
    let mut results = SweepResults::default();

    // phase 1: all teachers, independent, run in parallel
    let titems: Vec<(usize, u64)> = snapshot_list
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let trained = execute_items(&titems, PARALLEL_RUNS, |&(l, seed)| {
        let tcfg = teacher_config(base, l, seed);
        let label = format!("teacher-L{l}-s{seed}");
        (label.clone(), ensure_run(&tcfg, None, data, splits, out_dir, &label))
    });
    let mut teacher_map: std::collections::BTreeMap<usize, Vec<RunRecord>> = Default::default();
    for ((l, _), (label, run)) in titems.iter().zip(trained) {
        match run {
            Ok(r) => teacher_map.entry(*l).or_default().push(r),
            Err(e) => {
                log::warn!("[{label}] failed: {e}");
                results.failures.push((label, e.to_string()));
            }
        }
    }

    // phase 2: one student per completed teacher
    if with_students {
        let sitems: Vec<(usize, u64, PathBuf)> = snapshot_list
            .iter()
            .filter_map(|l| teacher_map.get(l).map(|runs| (l, runs)))
            .flat_map(|(&l, runs)| {
                runs.iter()
                    .map(move |t| (l, t.config.seed, t.checkpoint_path.clone()))
            })
            .collect();
        let trained = execute_items(&sitems, PARALLEL_RUNS, |(l, seed, tpath)| {
            let label = format!("student-L{l}-s{seed}");
            let run = Checkpoint::load(tpath).and_then(|tckpt| {
                let scfg = student_config(base, LossWeights::kd_default(), *seed, tpath);
                ensure_run(&scfg, Some(&tckpt), data, splits, out_dir, &label)
            });
            (label, run)
        });
        let mut student_map: std::collections::BTreeMap<usize, Vec<RunRecord>> = Default::default();
        for ((l, _, _), (label, run)) in sitems.iter().zip(trained) {
            match run {
                Ok(r) => student_map.entry(*l).or_default().push(r),
                Err(e) => {
                    log::warn!("[{label}] failed: {e}");
                    results.failures.push((label, e.to_string()));
                }
            }
        }
        for &l in snapshot_list {
            results
                .students
                .push((l, student_map.remove(&l).unwrap_or_default()));
        }
    }
    for &l in snapshot_list {
        results
            .teachers
            .push((l, teacher_map.remove(&l).unwrap_or_default()));
    }
    Ok(results)
}

/// One ablation column: which transfer terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub cdp_on: bool,
    pub feat_on: bool,
}

pub const ABLATION_VARIANTS: [AblationVariant; 4] = [
    AblationVariant { name: "cdp-only", cdp_on: true, feat_on: false },
    AblationVariant { name: "cdp-and-feat", cdp_on: true, feat_on: true },
    AblationVariant { name: "feat-only", cdp_on: false, feat_on: true },
    AblationVariant { name: "neither", cdp_on: false, feat_on: false },
];

/// Loss weights realizing an ablation variant under the affine constraint.
/// With alpha fixed at the distillation default 0.6: cdp-only gives beta =
/// 0.4 (sigma 0), feat-only beta = 0 (sigma 0.4), both the 0.6/0.3/0.1
/// default. "Neither" forces alpha = 1 and is the end-to-end baseline.
pub fn ablation_weights(variant: &AblationVariant, rho: f64, levels: usize) -> LossWeights {
    match (variant.cdp_on, variant.feat_on) {
        (true, true) => LossWeights::new(0.6, 0.3, rho, levels).unwrap(),
        (true, false) => LossWeights::new(0.6, 0.4, rho, levels).unwrap(),
        (false, true) => LossWeights::new(0.6, 0.0, rho, levels).unwrap(),
        (false, false) => LossWeights::new(1.0, 0.0, rho, levels).unwrap(),
    }
}

/// Ablation results: per variant, per seed.
#[derive(Debug)]
pub struct AblationResults {
    pub variants: Vec<(AblationVariant, Vec<RunRecord>)>,
    pub failures: Vec<(String, String)>,
}

/// Train the four on/off combinations of the two transfer losses against one
/// teacher. "Neither" runs as the end-to-end baseline (the equivalence of
/// beta = sigma = 0 distillation and the baseline trainer is asserted by the
/// mode-reduction tests).
pub fn ablation(
    base: &ExperimentConfig,
    teacher_run: &RunRecord,
    seeds: &[u64],
    data: &LoadedDataset<f32>,
    splits: &Splits,
    out_dir: &Path,
) -> Result<AblationResults> {
    let teacher = teacher_run.load_checkpoint()?;
    let items: Vec<(AblationVariant, u64)> = ABLATION_VARIANTS
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let trained = execute_items(&items, PARALLEL_RUNS, |&(variant, seed)| {
        let (cfg, label, tref) = if variant.cdp_on || variant.feat_on {
            let weights = ablation_weights(&variant, base.loss.rho(), base.loss.reg_levels());
            (
                student_config(base, weights, seed, &teacher_run.checkpoint_path),
                format!("ablation-{}-s{seed}", variant.name),
                Some(&teacher),
            )
        } else {
            let mut cfg = teacher_config(base, 1, seed);
            cfg.mode = TrainingMode::E2eBaseline;
            (cfg, format!("baseline-s{seed}"), None)
        };
        let run = ensure_run(&cfg, tref, data, splits, out_dir, &label);
        (label, run)
    });
    let mut out = AblationResults {
        variants: ABLATION_VARIANTS.map(|v| (v, Vec::new())).into_iter().collect(),
        failures: Vec::new(),
    };
    for ((variant, _), (label, run)) in items.iter().zip(trained) {
        match run {
            Ok(r) => {
                out.variants
                    .iter_mut()
                    .find(|(v, _)| v.name == variant.name)
                    .expect("variant present")
                    .1
                    .push(r);
            }
            Err(e) => {
                log::warn!("[{label}] failed: {e}");
                out.failures.push((label, e.to_string()));
            }
        }
    }
    Ok(out)
}
