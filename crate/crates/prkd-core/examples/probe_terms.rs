// scratch probe: magnitudes of the four objective terms for a fresh student
use ndarray::IxDyn;
use prkd_core::autodiff::Tape;
use prkd_core::data::{synthesize_idx, DataSource, DatasetSpec};
use prkd_core::initializer::{canonicalize_graph, spectral_init_graph};
use prkd_core::num::Cplx;
use prkd_core::objectives::*;
use prkd_core::optics::sense_graph;
use prkd_core::orchestration::{preset, Checkpoint, ModelParams, Scale, TrainingMode};
use prkd_core::recovery::{field_input_graph, forward_graph};
use prkd_core::rng;

fn main() {
    let ckpt_path = std::env::args().nth(1).expect("teacher checkpoint path");
    let teacher = Checkpoint::load(std::path::Path::new(&ckpt_path)).unwrap();
    let tparams = ModelParams::from_checkpoint(&teacher).unwrap();

    let dir = std::path::PathBuf::from("/tmp/prkd-probe-e8-n1000/data");
    let (images, labels) = synthesize_idx(&dir.parent().unwrap().join("data"), 1500, 28, 28, 0).unwrap();
    let mut cfg = preset(TrainingMode::KdStudent, Scale::Desk, DataSource::IdxFiles { images, labels }, 0);
    cfg.dataset = DatasetSpec {
        source: cfg.dataset.source,
        target_size: (32, 32),
        split_counts: (1000, 250, 250),
        subset_seed: 0,
    };
    let data = prkd_core::data::load_dataset::<f32>(&cfg.dataset).unwrap();

    // fresh student params; one batch of 32 images
    let sparams = ModelParams::init(&cfg).unwrap();
    let indices: Vec<usize> = (0..32).collect();
    let (h, w) = (32usize, 32usize);

    let eval_terms = |params: &ModelParams, label: &str| {
        let mut tape = Tape::<f32>::new();
        // student branch
        let mut fields = ndarray::ArrayD::<Cplx<f32>>::zeros(IxDyn(&[32, h, w]));
        let mut target = ndarray::ArrayD::<f32>::zeros(IxDyn(&[32, 1, h, w]));
        for (b, &ix) in indices.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    fields[[b, i, j]] = Cplx::new(data.images[ix][[i, j]], 0.0);
                    target[[b, 0, i, j]] = data.images[ix][[i, j]];
                }
            }
        }
        let f = tape.constant_cplx(fields);
        let phases = tape.leaf_real(params.phases.clone(), true);
        let filter = tape.leaf_real(params.filter.clone(), true);
        let sv = sense_graph(&mut tape, f, phases);
        let z0 = tape.constant_cplx(rng::complex_normal_array::<f32>(
            &mut rng::stream(0, "train-z0", &[0, 0]),
            &[32, h, w],
        ));
        let z = spectral_init_graph(&mut tape, z0, &sv.y_snapshots, phases, filter, 25).unwrap();
        let zc = canonicalize_graph(&mut tape, z).unwrap();
        let input = field_input_graph(&mut tape, zc);
        let netcfg = cfg.network_config().unwrap();
        let vars = params.net.register(&mut tape, true);
        let (xhat, feat_s) = forward_graph(&mut tape, &netcfg, &vars, input).unwrap();

        // teacher branch (frozen)
        let tphases = tape.constant_real(tparams.phases.clone());
        let tfilter = tape.constant_real(tparams.filter.clone());
        let tsv = sense_graph(&mut tape, f, tphases);
        let tz0 = tape.constant_cplx(rng::complex_normal_array::<f32>(
            &mut rng::stream(teacher.seed, "eval-z0", &[0]),
            &[32, h, w],
        ));
        let tz = spectral_init_graph(&mut tape, tz0, &tsv.y_snapshots, tphases, tfilter, 25).unwrap();
        let tzc = canonicalize_graph(&mut tape, tz).unwrap();
        let tin = field_input_graph(&mut tape, tzc);
        let tvars = tparams.net.register(&mut tape, false);
        let (_, feat_t) = forward_graph(&mut tape, &netcfg, &tvars, tin).unwrap();

        let tg = tape.constant_real(target);
        let task = task_loss_graph(&mut tape, xhat, tg);
        let reg = mask_regularizer_graph(&mut tape, phases, 4);
        let cdp = cdp_loss_graph(&mut tape, tsv.y, sv.y);
        let feat = feat_loss_graph(&mut tape, feat_t, feat_s);
        println!(
            "{label}: task {:.4} | reg {:.4} | cdp {:.4} | feat {:.4}",
            tape.scalar(task),
            tape.scalar(reg),
            tape.scalar(cdp),
            tape.scalar(feat)
        );
        let w = LossWeights::kd_default();
        println!(
            "  weighted: a*task {:.4} | rho*reg {:.6} | b*cdp {:.4} | s*feat {:.4}",
            w.alpha() * tape.scalar(task) as f64,
            w.rho() * tape.scalar(reg) as f64,
            w.beta() * tape.scalar(cdp) as f64,
            w.sigma() * tape.scalar(feat) as f64
        );
    };

    eval_terms(&sparams, "fresh student");
    eval_terms(&tparams, "teacher-as-student (sanity)");
}
