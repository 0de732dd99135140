//! End-to-end evaluation: sense -> initialize -> canonicalize -> reconstruct
//! per image, aggregated into a metric report.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::data::LoadedDataset;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, ImageMetrics, MetricReport};
use crate::num::Cplx;
use crate::optics::SceneEncoding;
use crate::rng;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::trainer::{batch_tensors, build_pipeline, ModelParams, RegisteredModel};

const EVAL_BATCH: usize = 16;

/// Which split of the dataset to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train, val, or test)"
            ))),
        }
    }
}

/// The grayscale map metrics are computed on: the amplitude image for
/// amplitude scenes, the normalized phase map for phase scenes.
fn recon_map(xhat: &ArrayD<f32>, b: usize, encoding: SceneEncoding, h: usize, w: usize) -> Array2<f32> {
    match encoding {
        SceneEncoding::AmplitudeObject => {
            Array2::from_shape_fn((h, w), |(i, j)| xhat[[b, 0, i, j]])
        }
        SceneEncoding::PhaseObject => Array2::from_shape_fn((h, w), |(i, j)| {
            let re = xhat[[b, 0, i, j]];
            let im = xhat[[b, 1, i, j]];
            (im.atan2(re) / std::f32::consts::PI).clamp(0.0, 1.0)
        }),
    }
}

fn truth_map(data: &LoadedDataset<f32>, index: usize) -> &Array2<f32> {
    // for phase scenes the normalized phase of e^{j pi s} is s itself
    &data.images[index]
}

/// Evaluate a model on the given dataset indices. Returns the report and,
/// when requested, the reconstructed maps (for figure grids). Degenerate
/// initializations are counted per image rather than failing the run.
pub fn evaluate_params(
    params: &ModelParams,
    cfg: &ExperimentConfig,
    data: &LoadedDataset<f32>,
    indices: &[usize],
    eval_seed: u64,
    collect_images: bool,
) -> Result<(MetricReport, Vec<Array2<f32>>)> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let (h, w) = cfg.dataset.target_size;
    let mut per_image = Vec::with_capacity(indices.len());
    let mut images = Vec::new();
    let mut degenerate = 0usize;

    for chunk in indices.chunks(EVAL_BATCH) {
        match eval_chunk(params, cfg, data, chunk, eval_seed) {
            Ok(xhat) => {
                for (b, &ix) in chunk.iter().enumerate() {
                    let rec = recon_map(&xhat, b, cfg.encoding, h, w);
                    let truth = truth_map(data, ix);
                    per_image.push(ImageMetrics {
                        index: ix,
                        psnr_db: psnr(&rec, truth, 1.0)?,
                        ssim: ssim(&rec, truth)?,
                    });
                    if collect_images {
                        images.push(rec);
                    }
                }
            }
            Err(Error::DegenerateInit { .. }) => {
                // isolate per image so one bad estimate cannot sink the batch
                for &ix in chunk {
                    match eval_chunk(params, cfg, data, &[ix], eval_seed) {
                        Ok(xhat) => {
                            let rec = recon_map(&xhat, 0, cfg.encoding, h, w);
                            let truth = truth_map(data, ix);
                            per_image.push(ImageMetrics {
                                index: ix,
                                psnr_db: psnr(&rec, truth, 1.0)?,
                                ssim: ssim(&rec, truth)?,
                            });
                            if collect_images {
                                images.push(rec);
                            }
                        }
                        Err(Error::DegenerateInit { .. }) => degenerate += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    let report = MetricReport::from_images(per_image, cfg.config_hash(), eval_seed, degenerate)?;
    Ok((report, images))
}

fn eval_chunk(
    params: &ModelParams,
    cfg: &ExperimentConfig,
    data: &LoadedDataset<f32>,
    chunk: &[usize],
    eval_seed: u64,
) -> Result<ArrayD<f32>> {
    let (h, w) = cfg.dataset.target_size;
    let batch = batch_tensors(data, chunk, cfg.encoding)?;
    let mut tape = crate::autodiff::Tape::<f32>::new();
    let model = RegisteredModel::constants(&mut tape, params);
    let fields = tape.constant_cplx(batch.fields);
    // one fixed start vector per dataset image, independent of batching
    let mut z0 = ArrayD::<Cplx<f32>>::zeros(IxDyn(&[chunk.len(), h, w]));
    for (b, &ix) in chunk.iter().enumerate() {
        let zi = rng::complex_normal_array::<f32>(
            &mut rng::stream(eval_seed, "eval-z0", &[ix as u64]),
            &[h, w],
        );
        for i in 0..h {
            for j in 0..w {
                z0[[b, i, j]] = zi[[i, j]];
            }
        }
    }
    let noise_tag: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
    let out = build_pipeline(
        &mut tape,
        cfg,
        &model,
        fields,
        z0,
        &cfg.noise,
        eval_seed,
        &noise_tag,
    )?;
    Ok(tape.real(out.xhat).clone())
}

/// Mean validation PSNR only (model selection); skips SSIM and reporting.
pub(crate) fn val_psnr_mean(
    params: &ModelParams,
    cfg: &ExperimentConfig,
    data: &LoadedDataset<f32>,
    indices: &[usize],
    eval_seed: u64,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let (h, w) = cfg.dataset.target_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        match eval_chunk(params, cfg, data, chunk, eval_seed) {
            Ok(xhat) => {
                for (b, &ix) in chunk.iter().enumerate() {
                    let rec = recon_map(&xhat, b, cfg.encoding, h, w);
                    total += psnr(&rec, truth_map(data, ix), 1.0)?;
                    count += 1;
                }
            }
            Err(Error::DegenerateInit { .. }) => {
                for &ix in chunk {
                    match eval_chunk(params, cfg, data, &[ix], eval_seed) {
                        Ok(xhat) => {
                            let rec = recon_map(&xhat, 0, cfg.encoding, h, w);
                            total += psnr(&rec, truth_map(data, ix), 1.0)?;
                            count += 1;
                        }
                        Err(Error::DegenerateInit { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "every validation image degenerated".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Evaluate a checkpoint on one split of its own dataset.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, split: SplitName) -> Result<MetricReport> {
    let data = crate::data::load_dataset::<f32>(&ckpt.config.dataset)?;
    let splits = crate::data::make_splits(
        data.images.len(),
        ckpt.config.dataset.split_counts,
        ckpt.config.dataset.subset_seed,
    )?;
    let indices = match split {
        SplitName::Train => &splits.train,
        SplitName::Val => &splits.val,
        SplitName::Test => &splits.test,
    };
    let params = ModelParams::from_checkpoint(ckpt)?;
    let (report, _) = evaluate_params(&params, &ckpt.config, &data, indices, ckpt.seed, false)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_idx, DataSource, DatasetSpec};
    use crate::orchestration::config::{preset, Scale, TrainingMode};

    fn small_setup() -> (ExperimentConfig, LoadedDataset<f32>, crate::data::Splits) {
        let dir = std::env::temp_dir().join("prkd-eval-test");
        let (images, labels) = synthesize_idx(&dir, 16, 16, 16, 3).unwrap();
        let mut cfg = preset(
            TrainingMode::E2eBaseline,
            Scale::Desk,
            DataSource::IdxFiles { images, labels },
            0,
        );
        cfg.dataset = DatasetSpec {
            source: cfg.dataset.source,
            target_size: (16, 16),
            split_counts: (8, 4, 4),
            subset_seed: 0,
        };
        cfg.network.depth = 2;
        cfg.network.base_channels = 4;
        cfg.snapshots = 1;
        cfg.initializer.iterations = 4;
        let data = crate::data::load_dataset::<f32>(&cfg.dataset).unwrap();
        let splits = crate::data::make_splits(16, cfg.dataset.split_counts, 0).unwrap();
        (cfg, data, splits)
    }

    #[test]
    fn evaluation_is_deterministic_and_counts_match() {
        let (cfg, data, splits) = small_setup();
        let params = ModelParams::init(&cfg).unwrap();
        let (a, imgs) = evaluate_params(&params, &cfg, &data, &splits.val, 7, true).unwrap();
        let (b, _) = evaluate_params(&params, &cfg, &data, &splits.val, 7, false).unwrap();
        assert_eq!(a.per_image.len(), 4);
        assert_eq!(imgs.len(), 4);
        for (x, y) in a.per_image.iter().zip(b.per_image.iter()) {
            assert_eq!(x, y);
        }
        let (c, _) = evaluate_params(&params, &cfg, &data, &splits.test, 7, false).unwrap();
        assert_eq!(c.per_image.len(), 4);
        // different split, different images
        assert_ne!(
            a.per_image.iter().map(|m| m.index).collect::<Vec<_>>(),
            c.per_image.iter().map(|m| m.index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn phase_encoding_evaluates_on_phase_maps() {
        let (mut cfg, data, splits) = small_setup();
        cfg.encoding = SceneEncoding::PhaseObject;
        let params = ModelParams::init(&cfg).unwrap();
        let (report, _) = evaluate_params(&params, &cfg, &data, &splits.val, 1, false).unwrap();
        assert_eq!(report.per_image.len(), 4);
        assert!(report.ssim.mean.is_finite());
    }
}
