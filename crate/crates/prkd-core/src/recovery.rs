//! Encoder-decoder recovery network.
//!
//! A plain U-Net: two 3x3 convolution + relu blocks per level, 2x2 max
//! pooling on the way down, bilinear x2 upsampling with skip concatenation on
//! the way up, linear 1x1 head. The deepest encoder output (before the first
//! upsampling) is the bottleneck tap used for feature distillation. The
//! complex input field enters as two real channels after phase
//! canonicalization, scaled by sqrt(H*W) so unit-norm estimates have
//! order-one pixel values.

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::num::{Cplx, Real};
use crate::rng;

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of down/up levels.
    pub depth: usize,
    /// Channels after the first encoder block; doubled per level.
    pub base_channels: usize,
    /// 2 for (re, im) field input.
    pub in_channels: usize,
    /// 1 for amplitude scenes, 2 for phase scenes.
    pub out_channels: usize,
}

impl NetworkConfig {
    pub fn new(depth: usize, base_channels: usize, out_channels: usize) -> Result<Self> {
        if depth < 1 || base_channels < 1 {
            return Err(Error::Config(
                "network depth and base_channels must be >= 1".into(),
            ));
        }
        if !(out_channels == 1 || out_channels == 2) {
            return Err(Error::Config("out_channels must be 1 or 2".into()));
        }
        Ok(NetworkConfig {
            depth,
            base_channels,
            in_channels: 2,
            out_channels,
        })
    }

    /// Channel count of the bottleneck feature map: base * 2^depth.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.depth
    }

    pub fn validate_input(&self, h: usize, w: usize) -> Result<()> {
        let d = 1usize << self.depth;
        if h % d != 0 || w % d != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be divisible by 2^depth = {d}"
            )));
        }
        Ok(())
    }
}

/// Serializable architecture summary; equality of descriptors is the
/// teacher/student compatibility check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub level_channels: Vec<usize>,
    pub bottleneck_channels: usize,
}

impl ArchDescriptor {
    pub fn of(cfg: &NetworkConfig) -> Self {
        ArchDescriptor {
            depth: cfg.depth,
            base_channels: cfg.base_channels,
            in_channels: cfg.in_channels,
            out_channels: cfg.out_channels,
            level_channels: (0..cfg.depth).map(|i| cfg.base_channels << i).collect(),
            bottleneck_channels: cfg.bottleneck_channels(),
        }
    }
}

/// Bottleneck activations of one field: [C, H', W'] with H' = H / 2^depth.
#[derive(Debug, Clone)]
pub struct FeatureMap<T: Real> {
    pub values: Array3<T>,
    /// Index of the tapped layer (the deepest encoder block).
    pub layer_tag: usize,
}

struct LayerSpec {
    name: &'static str,
    index: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
}

impl LayerSpec {
    fn param_name(&self) -> String {
        format!("net.{}{}", self.name, self.index)
    }
}

/// Single ordered description of every convolution; weight initialization and
/// the forward pass both follow this plan.
fn layer_plan(cfg: &NetworkConfig) -> Vec<LayerSpec> {
    let c = cfg.base_channels;
    let mut plan = Vec::new();
    let mut idx = 0;
    let mut push = |name, cin, cout, kernel| {
        plan.push(LayerSpec {
            name,
            index: idx,
            cin,
            cout,
            kernel,
        });
        idx += 1;
    };
    // encoder
    let mut prev = cfg.in_channels;
    for i in 0..cfg.depth {
        let ch = c << i;
        push("enc", prev, ch, 3);
        push("enc", ch, ch, 3);
        prev = ch;
    }
    // bottom block = bottleneck producer
    let bc = c << cfg.depth;
    push("bottom", prev, bc, 3);
    push("bottom", bc, bc, 3);
    // decoder
    let mut below = bc;
    for i in (0..cfg.depth).rev() {
        let skip = c << i;
        push("dec", below + skip, skip, 3);
        push("dec", skip, skip, 3);
        below = skip;
    }
    push("head", below, cfg.out_channels, 1);
    plan
}

/// Recovery network: configuration plus named parameter tensors, ordered.
#[derive(Debug, Clone)]
pub struct RecoveryNetwork<T: Real> {
    pub config: NetworkConfig,
    pub params: Vec<(String, ArrayD<T>)>,
}

/// Tape handles for the network parameters, in plan order.
pub struct NetworkVars {
    pub convs: Vec<(Var, Var)>,
}

impl<T: Real> RecoveryNetwork<T> {
    /// He-normal weight initialization, zero biases; fully determined by the
    /// seed and the layer names.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let mut params = Vec::new();
        for spec in layer_plan(&config) {
            let name = spec.param_name();
            let fan_in = (spec.cin * spec.kernel * spec.kernel) as f64;
            let std = (2.0 / fan_in).sqrt();
            let mut r = rng::stream(seed, &format!("net-init:{name}"), &[]);
            let w = rng::normal_array::<T>(&mut r, &[spec.cout, spec.cin, spec.kernel, spec.kernel])
                .mapv(|v| v * T::of(std));
            params.push((format!("{name}.weight"), w));
            params.push((
                format!("{name}.bias"),
                ArrayD::zeros(IxDyn(&[spec.cout])),
            ));
        }
        RecoveryNetwork { config, params }
    }

    /// Rebuild from stored parameters (checkpoint load), verifying shapes.
    pub fn from_params(config: NetworkConfig, params: Vec<(String, ArrayD<T>)>) -> Result<Self> {
        let fresh = Self::init(config, 0);
        if fresh.params.len() != params.len() {
            return Err(Error::ArchMismatch(format!(
                "expected {} parameter tensors, got {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((en, ev), (gn, gv)) in fresh.params.iter().zip(params.iter()) {
            if en != gn || ev.shape() != gv.shape() {
                return Err(Error::ArchMismatch(format!(
                    "parameter {gn} {:?} does not match architecture ({en} {:?})",
                    gv.shape(),
                    ev.shape()
                )));
            }
        }
        Ok(RecoveryNetwork { config, params })
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor::of(&self.config)
    }

    /// Put every parameter on the tape, in plan order.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> NetworkVars {
        let mut convs = Vec::with_capacity(self.params.len() / 2);
        for pair in self.params.chunks_exact(2) {
            let w = tape.leaf_real(pair[0].1.clone(), trainable);
            let b = tape.leaf_real(pair[1].1.clone(), trainable);
            convs.push((w, b));
        }
        NetworkVars { convs }
    }
}

/// Stack the canonicalized field [B, H, W] into network input [B, 2, H, W],
/// scaled by sqrt(H*W).
pub fn field_input_graph<T: Real>(tape: &mut Tape<T>, z: Var) -> Var {
    let (h, w) = {
        let s = tape.cplx(z).shape();
        (s[1], s[2])
    };
    let re = tape.re(z);
    let im = tape.im(z);
    let stacked = tape.stack_ri(re, im);
    tape.scale(stacked, T::of(((h * w) as f64).sqrt()))
}

/// Forward pass on the tape. Returns (output [B, out_ch, H, W], bottleneck
/// [B, C_b, H/2^d, W/2^d]).
pub fn forward_graph<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetworkConfig,
    vars: &NetworkVars,
    input: Var,
) -> Result<(Var, Var)> {
    let shape = tape.real(input).shape().to_vec();
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(Error::Dim(format!(
            "network input must be [B, {}, H, W], got {:?}",
            cfg.in_channels, shape
        )));
    }
    cfg.validate_input(shape[2], shape[3])?;
    assert_eq!(vars.convs.len(), 4 * cfg.depth + 3, "parameter count mismatch");

    let mut li = 0;
    let mut block = |tape: &mut Tape<T>, x: Var| -> Var {
        let mut x = x;
        for _ in 0..2 {
            let (w, b) = vars.convs[li];
            li += 1;
            x = tape.conv2d(x, w, 1);
            x = tape.bias_add(x, b);
            x = tape.relu(x);
        }
        x
    };

    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = input;
    for _ in 0..cfg.depth {
        x = block(tape, x);
        skips.push(x);
        x = tape.maxpool2(x);
    }
    x = block(tape, x);
    let bottleneck = x;
    for i in (0..cfg.depth).rev() {
        x = tape.upsample2(x);
        x = tape.concat_ch(x, skips[i]);
        x = block(tape, x);
    }
    let (w, b) = vars.convs[li];
    let out = tape.conv2d(x, w, 0);
    let out = tape.bias_add(out, b);
    Ok((out, bottleneck))
}

fn run_forward<T: Real>(
    net: &RecoveryNetwork<T>,
    z: &Array2<Cplx<T>>,
) -> Result<(ArrayD<T>, ArrayD<T>)> {
    let (h, w) = z.dim();
    let mut tape = Tape::<T>::new();
    let zv = tape.constant_cplx(
        z.to_owned()
            .into_shape_with_order(IxDyn(&[1, h, w]))
            .expect("batch of one"),
    );
    let vars = net.register(&mut tape, false);
    let input = field_input_graph(&mut tape, zv);
    let (out, bottleneck) = forward_graph(&mut tape, &net.config, &vars, input)?;
    Ok((tape.real(out).clone(), tape.real(bottleneck).clone()))
}

/// Reconstruct one scene from its canonicalized initialization estimate.
/// Deterministic; output shape [out_channels, H, W].
pub fn reconstruct<T: Real>(net: &RecoveryNetwork<T>, z: &Array2<Cplx<T>>) -> Result<Array3<T>> {
    let (out, _) = run_forward(net, z)?;
    let s = out.shape().to_vec();
    Ok(out
        .into_shape_with_order(IxDyn(&[s[1], s[2], s[3]]))
        .expect("drop batch axis")
        .into_dimensionality()
        .expect("rank 3"))
}

/// Deepest encoder activation for the same input contract as [`reconstruct`].
pub fn bottleneck_features<T: Real>(
    net: &RecoveryNetwork<T>,
    z: &Array2<Cplx<T>>,
) -> Result<FeatureMap<T>> {
    let (_, feats) = run_forward(net, z)?;
    let s = feats.shape().to_vec();
    Ok(FeatureMap {
        values: feats
            .into_shape_with_order(IxDyn(&[s[1], s[2], s[3]]))
            .expect("drop batch axis")
            .into_dimensionality()
            .expect("rank 3"),
        layer_tag: net.config.depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::task_loss_graph;

    fn random_unit_field(h: usize, w: usize, seed: u64) -> Array2<Cplx<f64>> {
        let mut z = rng::complex_normal_array::<f64>(&mut rng::stream(seed, "recovery-test", &[]), &[h, w]);
        let n: f64 = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        z.mapv_inplace(|c| c / n);
        z.into_dimensionality().unwrap()
    }

    #[test]
    fn shape_contract_and_bottleneck_dims() {
        let cfg = NetworkConfig::new(2, 8, 1).unwrap();
        let net = RecoveryNetwork::<f64>::init(cfg, 0);
        let z = random_unit_field(32, 32, 1);
        let out = reconstruct(&net, &z).unwrap();
        assert_eq!(out.dim(), (1, 32, 32));
        let f = bottleneck_features(&net, &z).unwrap();
        assert_eq!(f.values.dim(), (32, 8, 8));
        assert_eq!(f.layer_tag, 2);

        let cfg2 = NetworkConfig::new(1, 2, 2).unwrap();
        let net2 = RecoveryNetwork::<f64>::init(cfg2, 0);
        let out = reconstruct(&net2, &random_unit_field(8, 8, 2)).unwrap();
        assert_eq!(out.dim(), (2, 8, 8));
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = NetworkConfig::new(3, 4, 1).unwrap();
        let net = RecoveryNetwork::<f64>::init(cfg, 0);
        let z = random_unit_field(12, 12, 3);
        assert!(matches!(reconstruct(&net, &z), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_forward() {
        let cfg = NetworkConfig::new(2, 4, 1).unwrap();
        let net = RecoveryNetwork::<f64>::init(cfg, 7);
        let z = random_unit_field(16, 16, 4);
        let a = reconstruct(&net, &z).unwrap();
        let b = reconstruct(&net, &z).unwrap();
        assert_eq!(a, b);
        let fa = bottleneck_features(&net, &z).unwrap();
        let fb = bottleneck_features(&net, &z).unwrap();
        assert_eq!(fa.values, fb.values);
    }

    #[test]
    fn descriptors_of_same_config_are_identical() {
        let cfg = NetworkConfig::new(3, 32, 1).unwrap();
        let teacher = RecoveryNetwork::<f32>::init(cfg, 0);
        let student = RecoveryNetwork::<f32>::init(cfg, 99);
        assert_eq!(teacher.descriptor(), student.descriptor());
        let a = serde_json::to_string(&teacher.descriptor()).unwrap();
        let b = serde_json::to_string(&student.descriptor()).unwrap();
        assert_eq!(a, b);

        let other = RecoveryNetwork::<f32>::init(NetworkConfig::new(2, 32, 1).unwrap(), 0);
        assert_ne!(teacher.descriptor(), other.descriptor());
    }

    #[test]
    fn bottleneck_ignores_decoder_parameters() {
        let cfg = NetworkConfig::new(2, 3, 1).unwrap();
        let mut net = RecoveryNetwork::<f64>::init(cfg, 11);
        let z = random_unit_field(16, 16, 12);
        let before = bottleneck_features(&net, &z).unwrap();
        let out_before = reconstruct(&net, &z).unwrap();
        for (name, p) in net.params.iter_mut() {
            if name.starts_with("net.dec") || name.starts_with("net.head") {
                p.mapv_inplace(|v| v + 0.37);
            }
        }
        let after = bottleneck_features(&net, &z).unwrap();
        assert_eq!(before.values, after.values);
        assert_ne!(out_before, reconstruct(&net, &z).unwrap());
    }

    #[test]
    fn tiny_net_gradients_match_finite_differences() {
        let cfg = NetworkConfig::new(1, 2, 1).unwrap();
        let net = RecoveryNetwork::<f64>::init(cfg, 21);
        let z = random_unit_field(8, 8, 22);

        let loss_of = |net: &RecoveryNetwork<f64>| -> f64 {
            let mut tape = Tape::<f64>::new();
            let zv = tape.constant_cplx(
                z.to_owned()
                    .into_shape_with_order(IxDyn(&[1, 8, 8]))
                    .unwrap(),
            );
            let vars = net.register(&mut tape, true);
            let input = field_input_graph(&mut tape, zv);
            let (out, _) = forward_graph(&mut tape, &net.config, &vars, input).unwrap();
            let root = tape.sumsq(out);
            tape.scalar(root)
        };

        let mut tape = Tape::<f64>::new();
        let zv = tape.constant_cplx(
            z.to_owned()
                .into_shape_with_order(IxDyn(&[1, 8, 8]))
                .unwrap(),
        );
        let vars = net.register(&mut tape, true);
        let input = field_input_graph(&mut tape, zv);
        let (out, _) = forward_graph(&mut tape, &net.config, &vars, input).unwrap();
        let root = tape.sumsq(out);
        let grads = tape.backward(root);

        let h = 1e-5;
        for (pi, (w, b)) in vars.convs.iter().enumerate() {
            for (slot, var) in [(0usize, w), (1usize, b)] {
                let g = grads.get(*var).unwrap().real().clone();
                let flat_count = g.len();
                // spot-check a few entries per tensor
                for flat in (0..flat_count).step_by(7.max(flat_count / 5)) {
                    let idx = pi * 2 + slot;
                    let mut plus = net.clone();
                    plus.params[idx].1.as_slice_mut().unwrap()[flat] += h;
                    let mut minus = net.clone();
                    minus.params[idx].1.as_slice_mut().unwrap()[flat] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let ad = g.as_slice().unwrap()[flat];
                    assert!(
                        (ad - fd).abs() <= 1e-3 * fd.abs().max(1e-3),
                        "param {idx} entry {flat}: ad={ad} fd={fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn every_parameter_receives_gradient_from_task_loss() {
        let cfg = NetworkConfig::new(2, 4, 1).unwrap();
        let net = RecoveryNetwork::<f64>::init(cfg, 31);
        let mut tape = Tape::<f64>::new();
        let z = rng::complex_normal_array::<f64>(&mut rng::stream(32, "batch", &[]), &[3, 16, 16]);
        let zv = tape.constant_cplx(z);
        let vars = net.register(&mut tape, true);
        let input = field_input_graph(&mut tape, zv);
        let (out, _) = forward_graph(&mut tape, &net.config, &vars, input).unwrap();
        let target = tape.constant_real(rng::uniform_array::<f64>(
            &mut rng::stream(33, "target", &[]),
            &[3, 1, 16, 16],
            0.0,
            1.0,
        ));
        let root = task_loss_graph(&mut tape, out, target);
        let grads = tape.backward(root);
        for (pi, (w, b)) in vars.convs.iter().enumerate() {
            for var in [w, b] {
                let g = grads
                    .get(*var)
                    .unwrap_or_else(|| panic!("no grad for conv {pi}"));
                let norm: f64 = g.real().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm > 0.0, "zero gradient norm for conv {pi}");
            }
        }
    }
}
