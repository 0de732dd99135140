// scratch probe: does the distilled student beat the baseline at half scale?
use prkd_core::data::{synthesize_idx, DataSource, DatasetSpec};
use prkd_core::objectives::LossWeights;
use prkd_core::orchestration::{
    ensure_run, preset, student_config, teacher_config, Scale, TrainingMode,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let train_n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let out = std::path::PathBuf::from(format!("/tmp/prkd-probe-e{epochs}-n{train_n}"));

    let (images, labels) = synthesize_idx(&out.join("data"), train_n + 500, 28, 28, 0).unwrap();
    let mut base = preset(
        TrainingMode::Teacher,
        Scale::Desk,
        DataSource::IdxFiles { images, labels },
        0,
    );
    base.dataset = DatasetSpec {
        source: base.dataset.source,
        target_size: (32, 32),
        split_counts: (train_n, 250, 250),
        subset_seed: 0,
    };
    base.optimizer.epochs = epochs;
    let data = prkd_core::data::load_dataset::<f32>(&base.dataset).unwrap();
    let splits =
        prkd_core::data::make_splits(train_n + 500, base.dataset.split_counts, 0).unwrap();

    let t0 = std::time::Instant::now();
    let tcfg = teacher_config(&base, 4, 0);
    let teacher = ensure_run(&tcfg, None, &data, &splits, &out, "teacher-L4-s0").unwrap();
    println!(
        "teacher L4: test PSNR mean {:.3} median {:.3} ({:.0}s)",
        teacher.test_report.psnr.mean,
        teacher.test_report.psnr.median,
        t0.elapsed().as_secs_f64()
    );
    let tckpt = teacher.load_checkpoint().unwrap();

    for seed in [0u64, 1] {
        let mut bcfg = teacher_config(&base, 1, seed);
        bcfg.mode = TrainingMode::E2eBaseline;
        let b = ensure_run(&bcfg, None, &data, &splits, &out, &format!("baseline-s{seed}")).unwrap();

        let scfg = student_config(&base, LossWeights::kd_default(), seed, &teacher.checkpoint_path);
        let s = ensure_run(&scfg, Some(&tckpt), &data, &splits, &out, &format!("student-s{seed}")).unwrap();

        println!(
            "seed {seed}: baseline {:.3} dB | student {:.3} dB | gain {:+.3} dB",
            b.test_report.psnr.mean,
            s.test_report.psnr.mean,
            s.test_report.psnr.mean - b.test_report.psnr.mean
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
