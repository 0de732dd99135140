// scratch probe: KD weight variants at half scale, reusing cached runs
use prkd_core::data::{synthesize_idx, DataSource, DatasetSpec};
use prkd_core::objectives::LossWeights;
use prkd_core::orchestration::{
    ensure_runs, preset, student_config, teacher_config, RunRequest, Scale, TrainingMode,
};

fn main() {
    let out = std::path::PathBuf::from("/tmp/prkd-probe-e8-n1000");
    let (images, labels) = synthesize_idx(&out.join("data"), 1500, 28, 28, 0).unwrap();
    let mut base = preset(
        TrainingMode::Teacher,
        Scale::Desk,
        DataSource::IdxFiles { images, labels },
        0,
    );
    base.dataset = DatasetSpec {
        source: base.dataset.source,
        target_size: (32, 32),
        split_counts: (1000, 250, 250),
        subset_seed: 0,
    };
    base.optimizer.epochs = 8;
    let data = prkd_core::data::load_dataset::<f32>(&base.dataset).unwrap();
    let splits = prkd_core::data::make_splits(1500, base.dataset.split_counts, 0).unwrap();

    // cached from the earlier probe
    let tcfg = teacher_config(&base, 4, 0);
    let teacher = prkd_core::orchestration::ensure_run(
        &tcfg, None, &data, &splits, &out, "teacher-L4-s0",
    )
    .unwrap();
    println!("teacher L4 median {:.3}", teacher.test_report.psnr.median);

    let seeds = [0u64, 1];
    let mut requests = Vec::new();
    for &s in &seeds {
        let mut bcfg = teacher_config(&base, 1, s);
        bcfg.mode = TrainingMode::E2eBaseline;
        requests.push(RunRequest {
            config: bcfg,
            teacher: None,
            label: format!("baseline-s{s}"),
        });
    }
    let variants: Vec<(&str, LossWeights)> = vec![
        ("a60b30", LossWeights::new(0.6, 0.3, 0.01, 4).unwrap()),
        ("a69b30", LossWeights::new(0.69, 0.30, 0.01, 4).unwrap()),
        ("a698b30", LossWeights::new(0.6999, 0.3, 0.01, 4).unwrap()),
        ("a70b30s0", LossWeights::new(0.7, 0.3, 0.01, 4).unwrap()),
        ("a90b10s0", LossWeights::new(0.9, 0.1, 0.01, 4).unwrap()),
    ];
    for &s in &seeds {
        for (name, w) in &variants {
            requests.push(RunRequest {
                config: student_config(&base, *w, s, &teacher.checkpoint_path),
                teacher: Some(teacher.checkpoint_path.clone()),
                label: format!("student-{name}-s{s}"),
            });
        }
    }
    let results = ensure_runs(&requests, &data, &splits, &out);
    for (req, res) in requests.iter().zip(results) {
        match res {
            Ok(r) => println!(
                "{}: median {:.3} dB mean {:.3} dB",
                req.label, r.test_report.psnr.median, r.test_report.psnr.mean
            ),
            Err(e) => println!("{}: FAILED {e}", req.label),
        }
    }
}
