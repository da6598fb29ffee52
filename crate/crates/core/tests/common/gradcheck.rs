//! Finite-difference gradient oracle.
//!
//! Analytic gradients come from the production `f32` backward kernels. The
//! numeric side evaluates the forward pass in `f64` at `x +- h e_i` and takes
//! central differences. Scalar losses are `sum(r * op(x))` for a fixed random
//! projection `r`.

use wsci_fusion::metrics::masked_loss;
use wsci_fusion::tensor::activation::Activation;
use wsci_fusion::tensor::batchnorm::{batchnorm2d, batchnorm2d_backward, BnMode, RunningStats};
use wsci_fusion::tensor::conv::{conv2d, conv2d_backward};
use wsci_fusion::tensor::crop::{crop_border, crop_border_backward};
use wsci_fusion::tensor::depthwise::{depthwise_conv2d, depthwise_conv2d_backward};
use wsci_fusion::tensor::dropout::{mc_dropout, mc_dropout_backward};
use wsci_fusion::tensor::se::{se_gate, se_gate_backward, SeGrads, SeWeights, Squeeze};
use wsci_fusion::{ArchitectureSpec, Mode, ModelState, RngStream, Scalar, Tensor};

pub const FD_STEP: f64 = 1e-3;

pub fn random_tensor(shape: [usize; 4], rng: &mut RngStream, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| (rng.next_uniform() * 2.0 - 1.0) * scale)
}

pub fn random_shape(rng: &mut RngStream) -> [usize; 4] {
    let mut d = |lo: u64, hi: u64| (lo + rng.next_u64() % (hi - lo + 1)) as usize;
    [d(1, 4), d(1, 8), d(3, 8), d(3, 8)]
}

/// `||a - n|| / max(||a||, ||n||, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// A differentiable kernel with several tensor operands.
pub trait Op {
    fn name(&self) -> String;
    fn forward<T: Scalar>(&self, operands: &[Tensor<T>]) -> Tensor<T>;
    /// Gradients with respect to every operand, given the output gradient.
    fn backward(&self, operands: &[Tensor<f32>], grad_out: &Tensor<f32>) -> Vec<Tensor<f32>>;
}

/// Worst relative error over all operands.
pub fn check_op(op: &impl Op, operands: &[Tensor<f64>], rng: &mut RngStream) -> f64 {
    let out = op.forward(operands);
    let proj = random_tensor(out.shape(), rng, 1.0);
    let ops32: Vec<Tensor<f32>> = operands.iter().map(|t| t.cast()).collect();
    let analytic = op.backward(&ops32, &proj.cast());
    let mut worst = 0.0f64;
    for (k, operand) in operands.iter().enumerate() {
        let mut numeric = Vec::with_capacity(operand.len());
        for i in 0..operand.len() {
            let mut plus = operands.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = operands.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let fp = dot(&op.forward(&plus), &proj);
            let fm = dot(&op.forward(&minus), &proj);
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
        let a: Vec<f64> = analytic[k].data().iter().map(|&v| v as f64).collect();
        worst = worst.max(relative_error(&a, &numeric));
    }
    worst
}

pub struct Conv;
impl Op for Conv {
    fn name(&self) -> String {
        "conv2d".into()
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        conv2d(&o[0], &o[1], Some(&o[2])).unwrap()
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        let mut gw = Tensor::zeros(o[1].shape());
        let mut gb = Tensor::zeros(o[2].shape());
        let gi = conv2d_backward(&o[0], &o[1], g, &mut gw, Some(&mut gb), true)
            .unwrap()
            .unwrap();
        vec![gi, gw, gb]
    }
}

pub struct Depthwise;
impl Op for Depthwise {
    fn name(&self) -> String {
        "depthwise_conv2d".into()
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        depthwise_conv2d(&o[0], &o[1]).unwrap()
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        let mut gw = Tensor::zeros(o[1].shape());
        let gi = depthwise_conv2d_backward(&o[0], &o[1], g, &mut gw, true)
            .unwrap()
            .unwrap();
        vec![gi, gw]
    }
}

pub struct BatchNorm {
    pub batch_stats: bool,
}
impl BatchNorm {
    fn mode(&self) -> BnMode {
        if self.batch_stats {
            BnMode::Batch
        } else {
            BnMode::Running
        }
    }
    fn running<T: Scalar>(c: usize) -> RunningStats<T> {
        RunningStats {
            mean: (0..c).map(|i| T::of(0.1 * i as f64 - 0.2)).collect(),
            var: (0..c).map(|i| T::of(0.5 + 0.25 * i as f64)).collect(),
        }
    }
}
impl Op for BatchNorm {
    fn name(&self) -> String {
        format!("batchnorm2d({:?})", self.mode())
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        let c = o[0].channels();
        batchnorm2d(
            &o[0],
            &o[1],
            &o[2],
            &Self::running(c),
            self.mode(),
            T::of(1e-5),
        )
        .unwrap()
        .0
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        let c = o[0].channels();
        let (_, cache, _) =
            batchnorm2d(&o[0], &o[1], &o[2], &Self::running(c), self.mode(), 1e-5).unwrap();
        let mut gs = Tensor::zeros(o[1].shape());
        let mut gb = Tensor::zeros(o[2].shape());
        let gi = batchnorm2d_backward(&cache, &o[1], g, &mut gs, &mut gb, true)
            .unwrap()
            .unwrap();
        vec![gi, gs, gb]
    }
}

pub struct Act(pub Activation);
impl Op for Act {
    fn name(&self) -> String {
        format!("{:?}", self.0)
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        self.0.forward(&o[0])
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        vec![self.0.backward(&o[0], g).unwrap()]
    }
}

pub struct Se(pub Squeeze);
impl Op for Se {
    fn name(&self) -> String {
        format!("se_gate({:?})", self.0)
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        let w = SeWeights {
            reduce_weight: &o[1],
            reduce_bias: &o[2],
            expand_weight: &o[3],
            expand_bias: &o[4],
        };
        se_gate(&o[0], &w, self.0).unwrap().0
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        let w = SeWeights {
            reduce_weight: &o[1],
            reduce_bias: &o[2],
            expand_weight: &o[3],
            expand_bias: &o[4],
        };
        let (_, cache) = se_gate(&o[0], &w, self.0).unwrap();
        let mut gr: Vec<Tensor<f32>> = o[1..].iter().map(|t| Tensor::zeros(t.shape())).collect();
        let [g1, g2, g3, g4] = gr.get_disjoint_mut([0, 1, 2, 3]).unwrap();
        let grads = SeGrads {
            reduce_weight: g1,
            reduce_bias: g2,
            expand_weight: g3,
            expand_bias: g4,
        };
        let gi = se_gate_backward(&o[0], &cache, &w, grads, g, self.0, true)
            .unwrap()
            .unwrap();
        let mut out = vec![gi];
        out.extend(gr);
        out
    }
}

pub struct Dropout {
    pub seed: u64,
}
impl Op for Dropout {
    fn name(&self) -> String {
        "mc_dropout".into()
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        mc_dropout(&o[0], 0.2, &mut RngStream::new(self.seed, 1), true)
            .unwrap()
            .0
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        let (_, mask) = mc_dropout(&o[0], 0.2, &mut RngStream::new(self.seed, 1), true).unwrap();
        vec![mc_dropout_backward(&mask, g)]
    }
}

pub struct Crop(pub usize);
impl Op for Crop {
    fn name(&self) -> String {
        "crop_border".into()
    }
    fn forward<T: Scalar>(&self, o: &[Tensor<T>]) -> Tensor<T> {
        crop_border(&o[0], self.0).unwrap()
    }
    fn backward(&self, o: &[Tensor<f32>], g: &Tensor<f32>) -> Vec<Tensor<f32>> {
        vec![crop_border_backward(g, o[0].shape(), self.0).unwrap()]
    }
}

/// Runs every per-op check for one seed; returns `(op name, relative error)`.
pub fn per_op_errors(seed: u64) -> Vec<(String, f64)> {
    let mut rng = RngStream::new(seed, 77);
    let mut out = Vec::new();
    let shape = random_shape(&mut rng);
    let [n, c, h, w] = shape;
    let x = random_tensor(shape, &mut rng, 1.0);

    let cout = 1 + (rng.next_u64() % 4) as usize;
    let k = if rng.next_u64().is_multiple_of(2) {
        3
    } else {
        1
    };
    let ops = vec![
        x.clone(),
        random_tensor([cout, c, k, k], &mut rng, 0.5),
        random_tensor([cout, 1, 1, 1], &mut rng, 0.5),
    ];
    out.push((Conv.name(), check_op(&Conv, &ops, &mut rng)));

    let ops = vec![x.clone(), random_tensor([c, 1, 3, 3], &mut rng, 0.5)];
    out.push((Depthwise.name(), check_op(&Depthwise, &ops, &mut rng)));

    for batch_stats in [true, false] {
        let bn = BatchNorm { batch_stats };
        let mut ops = vec![
            x.clone(),
            random_tensor([c, 1, 1, 1], &mut rng, 0.5),
            random_tensor([c, 1, 1, 1], &mut rng, 0.5),
        ];
        ops[1].data_mut().iter_mut().for_each(|v| *v += 1.0);
        // A single-element channel has zero variance and no useful gradient.
        if batch_stats && n * h * w < 2 {
            continue;
        }
        out.push((bn.name(), check_op(&bn, &ops, &mut rng)));
    }

    for a in [Activation::Silu, Activation::Sigmoid, Activation::Softplus] {
        let ops = vec![random_tensor(shape, &mut rng, 3.0)];
        out.push((Act(a).name(), check_op(&Act(a), &ops, &mut rng)));
    }

    for sq in [Squeeze::Global, Squeeze::Local { radius: 1 }] {
        let cr = 1 + c / 2;
        let ops = vec![
            x.clone(),
            random_tensor([cr, c, 1, 1], &mut rng, 0.8),
            random_tensor([cr, 1, 1, 1], &mut rng, 0.3),
            random_tensor([c, cr, 1, 1], &mut rng, 0.8),
            random_tensor([c, 1, 1, 1], &mut rng, 0.3),
        ];
        out.push((Se(sq).name(), check_op(&Se(sq), &ops, &mut rng)));
    }

    let d = Dropout { seed };
    out.push((d.name(), check_op(&d, std::slice::from_ref(&x), &mut rng)));

    let margin = (h.min(w) - 1) / 2;
    out.push((Crop(margin).name(), check_op(&Crop(margin), &[x], &mut rng)));
    out
}

/// Masked-loss gradient against central differences on the prediction tensor.
pub fn masked_loss_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 91);
    let shape = [2, 2, 5, 5];
    let mut pred = random_tensor(shape, &mut rng, 1.0);
    for b in 0..2 {
        pred.plane_slice_mut(b, 0)
            .iter_mut()
            .for_each(|v| *v += 9.0);
        pred.plane_slice_mut(b, 1)
            .iter_mut()
            .for_each(|v| *v = 0.5 + v.abs());
    }
    let target = Tensor::from_fn([2, 1, 5, 5], |_| {
        let u = rng.next_uniform();
        if u < 0.4 {
            f64::NAN
        } else {
            7.0 + 4.0 * u
        }
    });
    let analytic = masked_loss(&pred.cast::<f32>(), &target.cast::<f32>())
        .unwrap()
        .grad;
    let mut numeric = Vec::new();
    for i in 0..pred.len() {
        let mut p = pred.clone();
        p.data_mut()[i] += FD_STEP;
        let fp = masked_loss(&p, &target).unwrap().value;
        p.data_mut()[i] -= 2.0 * FD_STEP;
        let fm = masked_loss(&p, &target).unwrap().value;
        numeric.push((fp - fm) / (2.0 * FD_STEP));
    }
    let a: Vec<f64> = analytic.data().iter().map(|&v| v as f64).collect();
    relative_error(&a, &numeric)
}

/// Gradient of the masked loss of a training-mode forward pass with respect
/// to all parameters of a tiny model, compared against central differences
/// of an `f64` shadow model along random directions and along a sample of
/// single coordinates. Returns the worst relative error.
/// Parameter tensors are checked coordinate-wise on every `COORD_STRIDE`-th seed.
pub const COORD_STRIDE: u64 = 3;

pub fn end_to_end_error(seed: u64) -> f64 {
    let spec = ArchitectureSpec::tiny();
    let mut init = RngStream::new(seed, 5);
    let mut model32 = ModelState::<f32>::build(&spec, &mut init).unwrap();
    let mut rng = RngStream::new(seed, 6);
    let batch = 2;
    let x = random_tensor(
        [batch, spec.input_channels, spec.input_size, spec.input_size],
        &mut rng,
        1.0,
    );
    let s = spec.output_size();
    let target = Tensor::from_fn([batch, 1, s, s], |_| {
        let u = rng.next_uniform();
        if u < 0.9 {
            f64::NAN
        } else {
            6.0 + 60.0 * (u - 0.9)
        }
    });
    let drop = RngStream::new(seed, 8);

    let (pred, tape) = model32
        .forward_recorded(&x.cast(), Mode::Train, &mut drop.clone())
        .unwrap();
    let loss = masked_loss(&pred, &target.cast()).unwrap();
    model32.zero_grads();
    model32.backward(&tape, &loss.grad, false).unwrap();
    let grads: Vec<Vec<f64>> = model32
        .params()
        .iter()
        .map(|p| p.grad.data().iter().map(|&g| g as f64).collect())
        .collect();

    let base = model32.cast::<f64>();
    let loss_at = |m: &ModelState<f64>| {
        let p = m.forward(&x, Mode::Train, &mut drop.clone()).unwrap();
        masked_loss(&p, &target).unwrap().value
    };
    let perturb = |dir: &[Vec<f64>], h: f64| {
        let mut m = base.clone();
        for (p, d) in m.params_mut().iter_mut().zip(dir) {
            for (v, dv) in p.value.data_mut().iter_mut().zip(d) {
                *v += h * dv;
            }
        }
        m
    };

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    // Random unit directions.
    let mut dir_rng = RngStream::new(seed, 9);
    for _ in 0..3 {
        let mut dir: Vec<Vec<f64>> = grads
            .iter()
            .map(|g| {
                g.iter()
                    .map(|_| dir_rng.next_uniform() * 2.0 - 1.0)
                    .collect()
            })
            .collect();
        let norm: f64 = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|v| *v /= norm);
        analytic.push(
            grads
                .iter()
                .flatten()
                .zip(dir.iter().flatten())
                .map(|(g, d)| g * d)
                .sum::<f64>(),
        );
        numeric.push(
            (loss_at(&perturb(&dir, FD_STEP)) - loss_at(&perturb(&dir, -FD_STEP)))
                / (2.0 * FD_STEP),
        );
    }
    let mut worst = relative_error(&analytic, &numeric);

    // Largest-gradient coordinate of every third parameter tensor, rotating
    // with the seed so that consecutive seeds cover all tensors.
    let mut a_coord = Vec::new();
    let mut n_coord = Vec::new();
    let stride = COORD_STRIDE as usize;
    for (pi, g) in grads.iter().enumerate().skip((seed % COORD_STRIDE) as usize).step_by(stride) {
        let (j, &gj) = g
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty parameter");
        let mut dir: Vec<Vec<f64>> = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        dir[pi][j] = 1.0;
        a_coord.push(gj);
        n_coord.push(
            (loss_at(&perturb(&dir, FD_STEP)) - loss_at(&perturb(&dir, -FD_STEP)))
                / (2.0 * FD_STEP),
        );
    }
    worst = worst.max(relative_error(&a_coord, &n_coord));
    worst
}
