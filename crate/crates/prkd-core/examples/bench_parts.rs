// scratch benchmark: where does a desk-scale step spend its time
use ndarray::IxDyn;
use prkd_core::autodiff::Tape;
use prkd_core::fft::fft2_unitary;
use prkd_core::initializer::{canonicalize_graph, spectral_init_graph};
use prkd_core::num::Cplx;
use prkd_core::optics::sense_graph;
use prkd_core::recovery::{field_input_graph, forward_graph, NetworkConfig, RecoveryNetwork};
use prkd_core::rng;

fn main() {
    let (b, h, w, l, t_iters) = (32usize, 32usize, 32usize, 4usize, 25usize);
    let fields = rng::complex_normal_array::<f32>(&mut rng::stream(0, "f", &[]), &[b, h, w]);
    let phases = rng::uniform_array::<f32>(&mut rng::stream(1, "p", &[]), &[l, h, w], 0.0, 6.28);
    let filter = ndarray::ArrayD::from_elem(IxDyn(&[3, 3]), 1.0f32 / 9.0);
    let z0 = rng::complex_normal_array::<f32>(&mut rng::stream(2, "z", &[]), &[b, h, w]);

    // raw fft throughput
    let x = rng::complex_normal_array::<f32>(&mut rng::stream(3, "x", &[]), &[b, h, w]);
    let t0 = std::time::Instant::now();
    let reps = 200;
    for _ in 0..reps {
        let _ = fft2_unitary(&x, false);
    }
    println!("fft2 [{b},{h},{w}] x{reps}: {:.1} ms/call", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // sensing + init + canonicalize, forward & backward wrt phases
    let t0 = std::time::Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let f = tape.constant_cplx(fields.clone());
        let p = tape.leaf_real(phases.clone(), true);
        let psi = tape.leaf_real(filter.clone(), true);
        let sv = sense_graph(&mut tape, f, p);
        let z0v = tape.constant_cplx(z0.clone());
        let z = spectral_init_graph(&mut tape, z0v, &sv.y_snapshots, p, psi, t_iters).unwrap();
        let zc = canonicalize_graph(&mut tape, z).unwrap();
        let n2 = tape.sumabs2_rows(zc);
        let root = tape.sumsq(n2);
        let grads = tape.backward(root);
        std::hint::black_box(grads.get(p));
    }
    println!("sense+init(T={t_iters},L={l}) fwd+bwd: {:.0} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // u-net forward + backward
    let cfg = NetworkConfig::new(3, 32, 1).unwrap();
    let net = RecoveryNetwork::<f32>::init(cfg, 0);
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::new();
        let zc = tape.constant_cplx(z0.clone());
        let vars = net.register(&mut tape, true);
        let input = field_input_graph(&mut tape, zc);
        let (out, _) = forward_graph(&mut tape, &cfg, &vars, input).unwrap();
        let root = tape.sumsq(out);
        let grads = tape.backward(root);
        std::hint::black_box(grads.get(vars.convs[0].0));
    }
    println!("unet(d3,c32) b{b} fwd+bwd: {:.0} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
