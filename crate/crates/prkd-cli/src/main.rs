//! `prkd` command line: train, evaluate, sweep, ablate, and reproduce
//! coded-diffraction phase-retrieval experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prkd_core::data::{self, DataSource};
use prkd_core::error::Error;
use prkd_core::objectives::LossWeights;
use prkd_core::optics::export_mask_bank;
use prkd_core::orchestration::{
    self, ablation, ensure_run, evaluate_checkpoint, sweep_teachers, Checkpoint,
    ExperimentConfig, Scale, SplitName, TrainingMode,
};
use prkd_core::report::{render_reports, GridInputs, ReportInputs};

#[derive(Parser)]
#[command(
    name = "prkd",
    about = "Coded-diffraction phase retrieval with learned masks and teacher-student distillation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override config values: KEY=VALUE, dotted keys, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for runs and reports.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root for relative paths (also PRKD_DATA_ROOT).
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a multi-snapshot teacher end to end.
    TrainTeacher(CommonArgs),
    /// Train the single-snapshot end-to-end baseline.
    TrainBaseline(CommonArgs),
    /// Train the frozen-random-mask baseline.
    TrainRandom(CommonArgs),
    /// Distill a single-snapshot student from a trained teacher.
    TrainStudent {
        #[command(flatten)]
        common: CommonArgs,
        /// Teacher checkpoint to distill from.
        #[arg(long)]
        teacher_ckpt: PathBuf,
    },
    /// Evaluate a checkpoint and write its metric report.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset split: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train teachers over a list of snapshot counts (plus students) and
    /// render the sweep reports.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated snapshot counts.
        #[arg(long, default_value = "1,2,4,8")]
        snapshots: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Skip the per-teacher student runs.
        #[arg(long)]
        no_students: bool,
    },
    /// Run the four-way distillation-term ablation against one teacher.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        teacher_ckpt: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Run spectral initialization alone and write the estimate.
    InitDemo {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional checkpoint whose masks/filter to use.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Dataset index of the scene.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Full desk-scale pipeline: teacher sweep, students, ablation, reports.
    Reproduce {
        #[command(flatten)]
        common: CommonArgs,
        /// desk (32x32, synthetic fallback) or paper (96x96, needs data).
        #[arg(long, default_value = "desk")]
        scale: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn data_root(common: &CommonArgs) -> Option<PathBuf> {
    common
        .data_root
        .clone()
        .or_else(|| std::env::var_os("PRKD_DATA_ROOT").map(PathBuf::from))
}

fn parse_overrides(sets: &[String]) -> Result<Vec<(String, String)>, Error> {
    sets.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(format!("--set needs KEY=VALUE, got '{kv}'")))
        })
        .collect()
}

/// Load the config file (or build a preset) and apply overrides.
fn load_config(
    common: &CommonArgs,
    default_mode: TrainingMode,
    scale: Scale,
) -> Result<ExperimentConfig, Error> {
    let overrides = parse_overrides(&common.set)?;
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            orchestration::load_config(&text, &overrides)?
        }
        None => {
            // no config file: preset over a synthetic dataset under <out>/data
            let source = synthetic_source(&common.out, scale)?;
            let mut base = orchestration::preset(default_mode, scale, source, 0);
            if default_mode == TrainingMode::RandomBaseline {
                base.initializer.trainable = false;
            }
            if default_mode == TrainingMode::KdStudent {
                base.loss = LossWeights::kd_default();
            }
            if let Some(seed) = common.seed {
                base.seed = seed;
            }
            let text = serde_json::to_string(&base).expect("preset serializes");
            orchestration::load_config(&text, &overrides)?
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(root) = data_root(common) {
        cfg.dataset.resolve_root(&root);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Synthetic IDX pair sized for the scale, generated under <out>/data.
fn synthetic_source(out: &Path, scale: Scale) -> Result<DataSource, Error> {
    let count = match scale {
        Scale::Desk => 3000,
        Scale::Paper => 70000,
    };
    let (images, labels) = data::synthesize_idx(&out.join("data"), count, 28, 28, 0)?;
    Ok(DataSource::IdxFiles { images, labels })
}

fn load_data(
    cfg: &ExperimentConfig,
) -> Result<(data::LoadedDataset<f32>, data::Splits), Error> {
    let data = data::load_dataset::<f32>(&cfg.dataset)?;
    let splits = data::make_splits(
        data.images.len(),
        cfg.dataset.split_counts,
        cfg.dataset.subset_seed,
    )?;
    Ok((data, splits))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    let items: Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse::<T>()).collect();
    items.map_err(|_| Error::Config(format!("bad {what} list '{s}'")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainTeacher(common) => {
            let cfg = load_config(&common, TrainingMode::Teacher, Scale::Desk)?;
            train_one(&cfg, None, &common)
        }
        Command::TrainBaseline(common) => {
            let cfg = load_config(&common, TrainingMode::E2eBaseline, Scale::Desk)?;
            train_one(&cfg, None, &common)
        }
        Command::TrainRandom(common) => {
            let cfg = load_config(&common, TrainingMode::RandomBaseline, Scale::Desk)?;
            train_one(&cfg, None, &common)
        }
        Command::TrainStudent {
            common,
            teacher_ckpt,
        } => {
            let mut cfg = load_config(&common, TrainingMode::KdStudent, Scale::Desk)?;
            cfg.teacher_checkpoint = Some(teacher_ckpt.clone());
            let teacher = Checkpoint::load(&teacher_ckpt)?;
            train_one(&cfg, Some(&teacher), &common)
        }
        Command::Eval {
            common,
            ckpt,
            split,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let split: SplitName = split.parse()?;
            let report = evaluate_checkpoint(&ckpt, split)?;
            std::fs::create_dir_all(&common.out)?;
            let csv = common.out.join("metric_report.csv");
            report.write_csv(&csv)?;
            let json = common.out.join("metric_report.json");
            std::fs::write(&json, serde_json::to_string_pretty(&report.to_json()).unwrap())?;
            println!(
                "psnr mean {:.3} dB median {:.3} dB | ssim mean {:.4} | {} images -> {}",
                report.psnr.mean,
                report.psnr.median,
                report.ssim.mean,
                report.per_image.len(),
                csv.display()
            );
            Ok(())
        }
        Command::Sweep {
            common,
            snapshots,
            seeds,
            no_students,
        } => {
            let cfg = load_config(&common, TrainingMode::Teacher, Scale::Desk)?;
            let snapshot_list: Vec<usize> = parse_list(&snapshots, "snapshot")?;
            let seed_list: Vec<u64> = parse_list(&seeds, "seed")?;
            let (data, splits) = load_data(&cfg)?;
            let results = sweep_teachers(
                &cfg,
                &snapshot_list,
                &seed_list,
                !no_students,
                &data,
                &splits,
                &common.out,
            )?;
            summarize_failures(&results.failures);
            let inputs = ReportInputs {
                teacher_sweep: Some(&results.teachers),
                student_sweep: (!no_students).then_some(&results.students[..]),
                ablation: None,
                grid: None,
            };
            let files = render_reports(&inputs, &data, &common.out.join("reports"))?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Ablate {
            common,
            teacher_ckpt,
            seeds,
        } => {
            let cfg = load_config(&common, TrainingMode::Teacher, Scale::Desk)?;
            let seed_list: Vec<u64> = parse_list(&seeds, "seed")?;
            let (data, splits) = load_data(&cfg)?;
            let teacher = Checkpoint::load(&teacher_ckpt)?;
            let teacher_run = ensure_run(
                &teacher.config,
                None,
                &data,
                &splits,
                &common.out,
                &format!("teacher-L{}-s{}", teacher.config.snapshots, teacher.seed),
            )?;
            let results = ablation(&cfg, &teacher_run, &seed_list, &data, &splits, &common.out)?;
            summarize_failures(&results.failures);
            let inputs = ReportInputs {
                teacher_sweep: None,
                student_sweep: None,
                ablation: Some(&results),
                grid: None,
            };
            let files = render_reports(&inputs, &data, &common.out.join("reports"))?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::InitDemo {
            common,
            ckpt,
            index,
        } => init_demo(&common, ckpt.as_deref(), index),
        Command::Reproduce { common, scale } => {
            let scale = match scale.as_str() {
                "desk" => Scale::Desk,
                "paper" => Scale::Paper,
                other => {
                    return Err(Error::Config(format!(
                        "unknown scale '{other}' (expected desk or paper)"
                    )))
                }
            };
            reproduce(&common, scale)
        }
    }
}

fn summarize_failures(failures: &[(String, String)]) {
    for (label, err) in failures {
        eprintln!("run {label} failed: {err}");
    }
}

fn train_one(
    cfg: &ExperimentConfig,
    teacher: Option<&Checkpoint>,
    common: &CommonArgs,
) -> Result<(), Error> {
    let (data, splits) = load_data(cfg)?;
    let label = format!("{}-L{}-s{}", cfg.mode.as_str(), cfg.snapshots, cfg.seed);
    let run = ensure_run(cfg, teacher, &data, &splits, &common.out, &label)?;
    println!(
        "{label}: test PSNR mean {:.3} dB median {:.3} dB, SSIM mean {:.4} -> {}",
        run.test_report.psnr.mean,
        run.test_report.psnr.median,
        run.test_report.ssim.mean,
        run.dir.display()
    );
    Ok(())
}

/// Run initialization alone on one scene; write z as a 2-channel (re, im)
/// f32 binary plus a |z| preview image.
fn init_demo(common: &CommonArgs, ckpt: Option<&Path>, index: usize) -> Result<(), Error> {
    let cfg = match ckpt {
        Some(p) => Checkpoint::load(p)?.config,
        None => load_config(common, TrainingMode::E2eBaseline, Scale::Desk)?,
    };
    let (data, _) = load_data(&cfg)?;
    if index >= data.images.len() {
        return Err(Error::Config(format!(
            "scene index {index} out of range ({} images)",
            data.images.len()
        )));
    }
    let scene = prkd_core::optics::Scene::from_image(data.images[index].clone(), cfg.encoding)?;
    let (masks, filter) = match ckpt {
        Some(p) => {
            let params = orchestration::ModelParams::from_checkpoint(&Checkpoint::load(p)?)?;
            let bank = prkd_core::optics::PhaseMaskBank::new(
                params.phases.into_dimensionality().expect("rank 3"),
            )?;
            let kernel = prkd_core::initializer::FilterKernel::new(
                params.filter.into_dimensionality().expect("rank 2"),
            )?;
            (bank, kernel)
        }
        None => {
            let (h, w) = cfg.dataset.target_size;
            (
                prkd_core::optics::init_masks::<f32>(
                    cfg.snapshots,
                    h,
                    w,
                    prkd_core::optics::MaskInitScheme::UniformRandom,
                    cfg.seed,
                )?,
                prkd_core::initializer::FilterKernel::box_filter(cfg.initializer.kernel_size)?,
            )
        }
    };
    let y = prkd_core::optics::sense(&scene, &masks, &cfg.noise, cfg.seed)?;
    let est = prkd_core::initializer::spectral_initialize(
        &y,
        &masks,
        &filter,
        cfg.initializer.iterations,
        cfg.seed,
    )?;

    std::fs::create_dir_all(&common.out)?;
    let (h, w) = est.z.dim();
    let mut bytes = Vec::with_capacity(2 * h * w * 4);
    for c in est.z.iter() {
        bytes.extend_from_slice(&c.re.to_le_bytes());
    }
    for c in est.z.iter() {
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    let bin = common.out.join("init_estimate.bin");
    std::fs::write(&bin, bytes)?;
    std::fs::write(
        common.out.join("init_estimate.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "H": h, "W": w, "channels": ["re", "im"], "dtype": "f32le",
            "iterations": est.iterations_run,
        }))
        .unwrap(),
    )?;
    let mag = est.z.mapv(|c| c.norm());
    let peak = mag.iter().cloned().fold(f32::MIN, f32::max).max(1e-12);
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, yy| {
        image::Luma([(mag[[yy as usize, x as usize]] / peak * 255.0).round() as u8])
    });
    let png = common.out.join("init_estimate.png");
    img.save(&png)
        .map_err(|e| Error::Format(format!("png write: {e}")))?;
    export_mask_bank(
        &masks,
        &common.out.join("masks.bin"),
        &common.out.join("masks.json"),
    )?;
    println!("wrote {} and {}", bin.display(), png.display());
    Ok(())
}

/// End-to-end reproduction: teacher sweep {1,2,4,8} with students, ablation
/// against the L=4 teacher, random baseline, and all reports.
fn reproduce(common: &CommonArgs, scale: Scale) -> Result<(), Error> {
    let base = load_config(common, TrainingMode::Teacher, scale)?;
    let (data, splits) = load_data(&base)?;
    let out = &common.out;
    let snapshot_list = [1usize, 2, 4, 8];
    let ablation_seeds = [0u64, 1, 2];

    log::info!("reproduce: teacher sweep over {snapshot_list:?}");
    let sweep = sweep_teachers(&base, &snapshot_list, &[base.seed], true, &data, &splits, out)?;
    summarize_failures(&sweep.failures);

    let teacher4 = sweep
        .teachers
        .iter()
        .find(|(l, _)| *l == 4)
        .and_then(|(_, runs)| runs.first())
        .ok_or_else(|| Error::IncompleteReport {
            missing: vec!["teacher L=4".into()],
        })?;

    log::info!("reproduce: ablation against the L=4 teacher");
    let ab = ablation(&base, teacher4, &ablation_seeds, &data, &splits, out)?;
    summarize_failures(&ab.failures);

    let mut rcfg = orchestration::teacher_config(&base, 1, base.seed);
    rcfg.mode = TrainingMode::RandomBaseline;
    rcfg.initializer.trainable = false;
    let random = ensure_run(&rcfg, None, &data, &splits, out, &format!("random-s{}", base.seed))?;

    let baseline = ab
        .variants
        .iter()
        .find(|(v, _)| v.name == "neither")
        .and_then(|(_, runs)| runs.first())
        .ok_or_else(|| Error::IncompleteReport {
            missing: vec!["baseline".into()],
        })?;
    let student = sweep
        .students
        .iter()
        .find(|(l, _)| *l == 4)
        .and_then(|(_, runs)| runs.first())
        .ok_or_else(|| Error::IncompleteReport {
            missing: vec!["student L=4".into()],
        })?;

    let inputs = ReportInputs {
        teacher_sweep: Some(&sweep.teachers),
        student_sweep: Some(&sweep.students),
        ablation: Some(&ab),
        grid: Some(GridInputs {
            teacher: teacher4,
            random: &random,
            baseline,
            student,
            samples: 3,
        }),
    };
    let files = render_reports(&inputs, &data, &out.join("reports"))?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
