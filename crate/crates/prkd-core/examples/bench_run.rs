// scratch benchmark: one desk-scale epoch, paired and alone
use prkd_core::data::{synthesize_idx, DataSource, DatasetSpec};
use prkd_core::orchestration::{preset, train, Scale, TrainingMode};

fn desk_cfg(mode: TrainingMode, seed: u64) -> prkd_core::orchestration::ExperimentConfig {
    let dir = std::path::PathBuf::from("/tmp/prkd-bench-desk");
    let (images, labels) = synthesize_idx(&dir, 3000, 28, 28, 0).unwrap();
    let mut cfg = preset(mode, Scale::Desk, DataSource::IdxFiles { images, labels }, seed);
    cfg.dataset = DatasetSpec {
        source: cfg.dataset.source,
        target_size: (32, 32),
        split_counts: (2000, 500, 500),
        subset_seed: 0,
    };
    cfg.optimizer.epochs = 1;
    cfg
}

fn main() {
    let cfg = desk_cfg(TrainingMode::E2eBaseline, 0);
    let data = prkd_core::data::load_dataset::<f32>(&cfg.dataset).unwrap();
    let splits =
        prkd_core::data::make_splits(3000, cfg.dataset.split_counts, 0).unwrap();

    // single run, one epoch
    let t0 = std::time::Instant::now();
    let out = train(&cfg, None, &data, &splits).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "single baseline epoch: {} steps, {:.1}s total, {:.3}s/step, val {:.2} dB",
        out.trace.len(),
        dt,
        dt / out.trace.len() as f64,
        out.val_psnr[0]
    );

    // two concurrent runs (different seeds)
    let cfg1 = desk_cfg(TrainingMode::E2eBaseline, 1);
    let cfg2 = desk_cfg(TrainingMode::E2eBaseline, 2);
    let t0 = std::time::Instant::now();
    std::thread::scope(|s| {
        let d1 = &data;
        let sp = &splits;
        let h1 = s.spawn(move || train(&cfg1, None, d1, sp).unwrap().trace.len());
        let h2 = s.spawn(move || train(&cfg2, None, d1, sp).unwrap().trace.len());
        let (n1, n2) = (h1.join().unwrap(), h2.join().unwrap());
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "paired baseline epochs: {:.1}s wall for {} steps -> {:.3}s/step effective",
            dt,
            n1 + n2,
            dt / (n1 + n2) as f64
        );
    });
}
