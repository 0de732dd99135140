// scratch benchmark: desk-scale step timing
use prkd_core::data::{synthesize_idx, DataSource, DatasetSpec};
use prkd_core::orchestration::{preset, Scale, TrainingMode, train};

fn main() {
    let dir = std::path::PathBuf::from("/tmp/prkd-bench");
    let (images, labels) = synthesize_idx(&dir, 80, 28, 28, 0).unwrap();
    let mut cfg = preset(TrainingMode::Teacher, Scale::Desk, DataSource::IdxFiles{images, labels}, 0);
    cfg.dataset.split_counts = (64, 8, 8);
    cfg.snapshots = 4;
    cfg.optimizer.epochs = 1;
    let data = prkd_core::data::load_dataset::<f32>(&cfg.dataset).unwrap();
    let splits = prkd_core::data::make_splits(80, cfg.dataset.split_counts, 0).unwrap();
    let t0 = std::time::Instant::now();
    let out = train(&cfg, None, &data, &splits).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("teacher L=4: {} steps in {:.2}s -> {:.3}s/step (incl 1 val eval of 8 imgs)", out.trace.len(), dt, dt / out.trace.len() as f64);
}
