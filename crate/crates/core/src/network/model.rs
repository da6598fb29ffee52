use rand_distr::{Distribution, Normal};

use crate::error::{Axis, Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::activation::{softplus_inverse, Activation};
use crate::tensor::batchnorm::{
    batchnorm2d, batchnorm2d_backward, BatchNormCache, BatchStats, BnMode, RunningStats,
};
use crate::tensor::conv::{conv2d, conv2d_backward};
use crate::tensor::crop::{crop_border, crop_border_backward};
use crate::tensor::depthwise::{depthwise_conv2d, depthwise_conv2d_backward};
use crate::tensor::dropout::{mc_dropout, mc_dropout_backward, DropoutMask};
use crate::tensor::se::{se_gate, se_gate_backward, SeCache, SeGrads, SeWeights};
use crate::tensor::{Mode, Parameter, Tensor};

use super::spec::{ArchitectureSpec, BlockKind};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvKind {
    Dense,
    Depthwise,
}

/// Convolution followed by batch norm and an optional activation.
#[derive(Debug, Clone)]
struct ConvBn {
    kind: ConvKind,
    weight: usize,
    scale: usize,
    shift: usize,
    stats: usize,
    act: bool,
}

#[derive(Debug, Clone)]
struct SeRef {
    reduce_weight: usize,
    reduce_bias: usize,
    expand_weight: usize,
    expand_bias: usize,
}

#[derive(Debug, Clone)]
enum Block {
    Fused {
        expand: ConvBn,
        project: ConvBn,
        residual: bool,
    },
    Mbconv {
        expand: ConvBn,
        depthwise: ConvBn,
        se: SeRef,
        project: ConvBn,
        residual: bool,
    },
}

impl Block {
    fn param_indices(&self) -> Vec<usize> {
        let cb = |c: &ConvBn| [c.weight, c.scale, c.shift];
        match self {
            Block::Fused {
                expand, project, ..
            } => cb(expand).into_iter().chain(cb(project)).collect(),
            Block::Mbconv {
                expand,
                depthwise,
                se,
                project,
                ..
            } => cb(expand)
                .into_iter()
                .chain(cb(depthwise))
                .chain([
                    se.reduce_weight,
                    se.reduce_bias,
                    se.expand_weight,
                    se.expand_bias,
                ])
                .chain(cb(project))
                .collect(),
        }
    }
}

/// Index layout of parameters and running buffers for a spec.
#[derive(Debug, Clone)]
struct Plan {
    stem: ConvBn,
    blocks: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
    /// Dropout sits after this block (the last fused block) and before the head.
    dropout_after: usize,
}

/// Parameters, running statistics and the spec they were built from.
#[derive(Debug, Clone)]
pub struct ModelState<T> {
    spec: ArchitectureSpec,
    params: Vec<Parameter<T>>,
    stats: Vec<RunningStats<T>>,
    stat_names: Vec<String>,
    plan: Plan,
}

struct Builder<'a, T> {
    params: Vec<Parameter<T>>,
    stats: Vec<RunningStats<T>>,
    stat_names: Vec<String>,
    rng: &'a mut RngStream,
}

impl<T: Scalar> Builder<'_, T> {
    fn he(&mut self, name: String, shape: [usize; 4], fan_in: usize, gain: f64) -> usize {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let mut g = self.rng.generator(n as u64);
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| T::of(normal.sample(&mut g))).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("shape matches"))
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    fn conv_bn(
        &mut self,
        prefix: &str,
        kind: ConvKind,
        cin: usize,
        cout: usize,
        k: usize,
        act: bool,
    ) -> ConvBn {
        let (shape, fan_in) = match kind {
            ConvKind::Dense => ([cout, cin, k, k], cin * k * k),
            ConvKind::Depthwise => ([cout, 1, k, k], k * k),
        };
        let weight = self.he(format!("{prefix}.conv.weight"), shape, fan_in, 1.0);
        let scale = self.push(
            format!("{prefix}.bn.scale"),
            Tensor::full([cout, 1, 1, 1], T::one()),
        );
        let shift = self.push(format!("{prefix}.bn.shift"), Tensor::zeros([cout, 1, 1, 1]));
        self.stats.push(RunningStats::new(cout));
        self.stat_names.push(format!("{prefix}.bn"));
        ConvBn {
            kind,
            weight,
            scale,
            shift,
            stats: self.stats.len() - 1,
            act,
        }
    }
}

/// Per-layer forward state kept for backward.
#[derive(Debug, Clone)]
struct ConvBnCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    pre_act: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
enum BlockCache<T> {
    Fused {
        expand: ConvBnCache<T>,
        project: ConvBnCache<T>,
    },
    Mbconv {
        expand: ConvBnCache<T>,
        depthwise: ConvBnCache<T>,
        se_input: Tensor<T>,
        se: SeCache<T>,
        project: ConvBnCache<T>,
    },
}

/// Everything a training-mode forward pass remembers for backward.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    stem: ConvBnCache<T>,
    blocks: Vec<BlockCache<T>>,
    mid_dropout: DropoutMask<T>,
    head_dropout: DropoutMask<T>,
    head_input: Tensor<T>,
    head_pre: Tensor<T>,
    batch_stats: Vec<(usize, BatchStats<T>)>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

struct Recorder<T> {
    on: bool,
    batch_stats: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> ModelState<T> {
    /// Builds a freshly initialised model. Conv weights use He fan-in
    /// normal initialisation; the head bias places the initial softplus
    /// outputs at the spec's target mean and variance.
    pub fn build(spec: &ArchitectureSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let act = true;
        let mut b = Builder {
            params: Vec::new(),
            stats: Vec::new(),
            stat_names: Vec::new(),
            rng,
        };
        let stem = b.conv_bn(
            "stem",
            ConvKind::Dense,
            spec.input_channels,
            spec.stem_width,
            spec.stem_kernel,
            act,
        );
        let mut width = spec.stem_width;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (i, bs) in spec.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            let hidden = width * bs.expansion;
            let residual = width == bs.width;
            let block = match bs.kind {
                BlockKind::Fused => Block::Fused {
                    expand: b.conv_bn(
                        &format!("{p}.expand"),
                        ConvKind::Dense,
                        width,
                        hidden,
                        bs.kernel,
                        act,
                    ),
                    project: b.conv_bn(
                        &format!("{p}.project"),
                        ConvKind::Dense,
                        hidden,
                        bs.width,
                        1,
                        false,
                    ),
                    residual,
                },
                BlockKind::Mbconv => {
                    let expand = b.conv_bn(
                        &format!("{p}.expand"),
                        ConvKind::Dense,
                        width,
                        hidden,
                        1,
                        act,
                    );
                    let depthwise = b.conv_bn(
                        &format!("{p}.depthwise"),
                        ConvKind::Depthwise,
                        hidden,
                        hidden,
                        bs.kernel,
                        act,
                    );
                    let sq = bs.squeeze_width(width);
                    let se = SeRef {
                        reduce_weight: b.he(
                            format!("{p}.se.reduce.weight"),
                            [sq, hidden, 1, 1],
                            hidden,
                            1.0,
                        ),
                        reduce_bias: b
                            .push(format!("{p}.se.reduce.bias"), Tensor::zeros([sq, 1, 1, 1])),
                        expand_weight: b.he(
                            format!("{p}.se.expand.weight"),
                            [hidden, sq, 1, 1],
                            sq,
                            1.0,
                        ),
                        expand_bias: b.push(
                            format!("{p}.se.expand.bias"),
                            Tensor::zeros([hidden, 1, 1, 1]),
                        ),
                    };
                    let project = b.conv_bn(
                        &format!("{p}.project"),
                        ConvKind::Dense,
                        hidden,
                        bs.width,
                        1,
                        false,
                    );
                    Block::Mbconv {
                        expand,
                        depthwise,
                        se,
                        project,
                        residual,
                    }
                }
            };
            blocks.push(block);
            width = bs.width;
        }
        // Small head weights so the initial output sits near the bias targets.
        let head_weight = b.he(
            HEAD_WEIGHT.into(),
            [spec.head_channels, width, 1, 1],
            width,
            0.05,
        );
        let bias = vec![
            T::of(softplus_inverse(spec.head_mean_init)),
            T::of(softplus_inverse(spec.head_var_init)),
        ];
        let head_bias = b.push(HEAD_BIAS.into(), Tensor::from_vec([2, 1, 1, 1], bias)?);
        let dropout_after = spec
            .blocks
            .iter()
            .rposition(|bs| bs.kind == BlockKind::Fused)
            .expect("validated layout has fused blocks");
        let plan = Plan {
            stem,
            blocks,
            head_weight,
            head_bias,
            dropout_after,
        };
        Ok(Self {
            spec: spec.clone(),
            params: b.params,
            stats: b.stats,
            stat_names: b.stat_names,
            plan,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn running_stat_names(&self) -> &[String] {
        &self.stat_names
    }

    /// Replaces the normalisation constants baked into the spec.
    pub fn set_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.norm_mean = mean;
        spec.norm_std = std;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    pub fn count_parameters(&self, trainable_only: bool) -> usize {
        count_parameters(&self.params, trainable_only)
    }

    /// Leaves only the head convolution trainable.
    pub fn freeze_feature_extractor(&mut self) {
        let head = [self.plan.head_weight, self.plan.head_bias];
        for (i, p) in self.params.iter_mut().enumerate() {
            p.trainable = head.contains(&i);
        }
    }

    pub fn unfreeze(&mut self) {
        self.params.iter_mut().for_each(|p| p.trainable = true);
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Converts to another scalar type (e.g. an `f64` shadow for gradient checks).
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            params: self.params.iter().map(Parameter::cast).collect(),
            stats: self.stats.iter().map(RunningStats::cast).collect(),
            stat_names: self.stat_names.clone(),
            plan: self.plan.clone(),
        }
    }

    /// Rebuilds a model from stored tensors, checking every name and shape
    /// against the layout `spec` implies.
    pub fn from_parts(
        spec: &ArchitectureSpec,
        params: Vec<(String, Tensor<T>, bool)>,
        stats: Vec<(String, RunningStats<T>)>,
    ) -> Result<Self> {
        let mut model = Self::build(spec, &mut RngStream::new(0, 0))?;
        if params.len() != model.params.len() {
            return Err(Error::SpecMismatch {
                field: format!(
                    "parameter count ({} vs {})",
                    params.len(),
                    model.params.len()
                ),
            });
        }
        for (slot, (name, value, trainable)) in model.params.iter_mut().zip(params) {
            if slot.name != name || slot.value.shape() != value.shape() {
                return Err(Error::SpecMismatch {
                    field: format!("parameter `{name}`"),
                });
            }
            slot.value = value;
            slot.trainable = trainable;
        }
        if stats.len() != model.stats.len() {
            return Err(Error::SpecMismatch {
                field: "running statistics count".into(),
            });
        }
        for (i, (name, st)) in stats.into_iter().enumerate() {
            if model.stat_names[i] != name || model.stats[i].channels() != st.channels() {
                return Err(Error::SpecMismatch {
                    field: format!("running statistics `{name}`"),
                });
            }
            model.stats[i] = st;
        }
        Ok(model)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = &self.spec;
        let [n, c, h, w] = input.shape();
        if n == 0 {
            return Err(Error::shape("forward", Axis::Batch, 1, 0));
        }
        if c != s.input_channels {
            return Err(Error::shape("forward", Axis::Channel, s.input_channels, c));
        }
        if h != s.input_size {
            return Err(Error::shape("forward", Axis::Height, s.input_size, h));
        }
        if w != s.input_size {
            return Err(Error::shape("forward", Axis::Width, s.input_size, w));
        }
        Ok(())
    }

    fn normalize(&self, input: &Tensor<T>) -> Tensor<T> {
        let mut x = input.clone();
        for b in 0..x.batch() {
            for c in 0..x.channels() {
                let m = T::of(self.spec.norm_mean[c]);
                let inv = T::of(1.0 / self.spec.norm_std[c]);
                x.plane_slice_mut(b, c)
                    .iter_mut()
                    .for_each(|v| *v = (*v - m) * inv);
            }
        }
        x
    }

    /// `B x C x S x S` raw input to `B x 2 x (S-2m) x (S-2m)` predictions.
    ///
    /// Channel 0 is the mean, channel 1 the aleatoric variance. Dropout
    /// draws come from `rng` starting at its cursor.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
        Ok(self.run(input, mode, rng, false)?.0)
    }

    /// Training-style forward that keeps the tape for [`ModelState::backward`].
    pub fn forward_recorded(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let (out, tape) = self.run(input, mode, rng, true)?;
        Ok((out, tape.expect("recording requested")))
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut RngStream,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        self.check_input(input)?;
        let bn_mode = if mode.uses_batch_stats() {
            BnMode::Batch
        } else {
            BnMode::Running
        };
        let mut rec = Recorder {
            on: record,
            batch_stats: Vec::new(),
        };
        let x = self.normalize(input);
        let (mut x, stem) = self.conv_bn_fwd(&self.plan.stem, x, bn_mode, &mut rec)?;
        let mut block_caches = Vec::new();
        let mut mid_dropout = None;
        for (i, block) in self.plan.blocks.iter().enumerate() {
            let (y, cache) = self.block_fwd(block, x, bn_mode, &mut rec)?;
            x = y;
            if rec.on {
                block_caches.push(cache.expect("recording"));
            }
            if i == self.plan.dropout_after {
                let (y, mask) = mc_dropout(&x, self.spec.dropout_rate, rng, mode.dropout_active())?;
                x = y;
                mid_dropout = Some(mask);
            }
        }
        let (head_input, head_dropout) =
            mc_dropout(&x, self.spec.dropout_rate, rng, mode.dropout_active())?;
        let hw = &self.params[self.plan.head_weight].value;
        let hb = &self.params[self.plan.head_bias].value;
        let head_pre = conv2d(&head_input, hw, Some(hb))?;
        let out = crop_border(
            &Activation::Softplus.forward(&head_pre),
            self.spec.border_margin,
        )?;
        let tape = if rec.on {
            Some(Tape {
                batch: input.batch(),
                stem: stem.expect("recording"),
                blocks: block_caches,
                mid_dropout: mid_dropout.expect("dropout site reached"),
                head_dropout,
                head_input,
                head_pre,
                batch_stats: rec.batch_stats,
            })
        } else {
            None
        };
        Ok((out, tape))
    }

    fn conv_bn_fwd(
        &self,
        l: &ConvBn,
        x: Tensor<T>,
        bn_mode: BnMode,
        rec: &mut Recorder<T>,
    ) -> Result<(Tensor<T>, Option<ConvBnCache<T>>)> {
        let w = &self.params[l.weight].value;
        let y = match l.kind {
            ConvKind::Dense => conv2d(&x, w, None)?,
            ConvKind::Depthwise => depthwise_conv2d(&x, w)?,
        };
        let (y, bn, batch) = batchnorm2d(
            &y,
            &self.params[l.scale].value,
            &self.params[l.shift].value,
            &self.stats[l.stats],
            bn_mode,
            T::of(self.spec.bn_eps),
        )?;
        if let Some(s) = batch {
            rec.batch_stats.push((l.stats, s));
        }
        let (out, pre_act) = if l.act {
            let a = self.spec.activation.forward(&y);
            (a, Some(y))
        } else {
            (y, None)
        };
        let cache = rec.on.then_some(ConvBnCache {
            input: x,
            bn,
            pre_act,
        });
        Ok((out, cache))
    }

    fn block_fwd(
        &self,
        block: &Block,
        x: Tensor<T>,
        bn_mode: BnMode,
        rec: &mut Recorder<T>,
    ) -> Result<(Tensor<T>, Option<BlockCache<T>>)> {
        match block {
            Block::Fused {
                expand,
                project,
                residual,
            } => {
                let skip = residual.then(|| x.clone());
                let (h, c1) = self.conv_bn_fwd(expand, x, bn_mode, rec)?;
                let (mut y, c2) = self.conv_bn_fwd(project, h, bn_mode, rec)?;
                if let Some(s) = skip {
                    y.add_assign(&s)?;
                }
                let cache = rec.on.then(|| BlockCache::Fused {
                    expand: c1.expect("recording"),
                    project: c2.expect("recording"),
                });
                Ok((y, cache))
            }
            Block::Mbconv {
                expand,
                depthwise,
                se,
                project,
                residual,
            } => {
                let skip = residual.then(|| x.clone());
                let (h, c1) = self.conv_bn_fwd(expand, x, bn_mode, rec)?;
                let (h, c2) = self.conv_bn_fwd(depthwise, h, bn_mode, rec)?;
                let (g, se_cache) = se_gate(&h, &self.se_weights(se), self.spec.squeeze)?;
                let (mut y, c3) = self.conv_bn_fwd(project, g, bn_mode, rec)?;
                if let Some(s) = skip {
                    y.add_assign(&s)?;
                }
                let cache = rec.on.then(|| BlockCache::Mbconv {
                    expand: c1.expect("recording"),
                    depthwise: c2.expect("recording"),
                    se_input: h,
                    se: se_cache,
                    project: c3.expect("recording"),
                });
                Ok((y, cache))
            }
        }
    }

    fn se_weights(&self, se: &SeRef) -> SeWeights<'_, T> {
        SeWeights {
            reduce_weight: &self.params[se.reduce_weight].value,
            reduce_bias: &self.params[se.reduce_bias].value,
            expand_weight: &self.params[se.expand_weight].value,
            expand_bias: &self.params[se.expand_bias].value,
        }
    }

    /// Folds the batch statistics of a training pass into the running buffers.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) {
        let m = T::of(self.spec.bn_momentum);
        for (i, s) in &tape.batch_stats {
            self.stats[*i].update(s, m);
        }
    }

    /// Accumulates parameter gradients for `grad_output` (same shape as the
    /// forward output). Propagation stops at the earliest trainable layer
    /// unless `want_input_grad` is set, in which case the gradient with
    /// respect to the raw input is returned.
    pub fn backward(
        &mut self,
        tape: &Tape<T>,
        grad_output: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let b = tape.batch;
        let s = self.spec.output_size();
        let expected = [b, 2, s, s];
        if grad_output.shape() != expected {
            return Err(Error::InvalidArgument(format!(
                "output gradient shape {:?} does not match {expected:?}",
                grad_output.shape()
            )));
        }
        // needs[i]: some layer at or before block i (stem = index 0) trains.
        let trains = |idx: &[usize]| idx.iter().any(|&i| self.params[i].trainable);
        let stem = &self.plan.stem;
        let mut needs = vec![trains(&[stem.weight, stem.scale, stem.shift])];
        for block in &self.plan.blocks {
            let prev = *needs.last().expect("non-empty");
            needs.push(prev || trains(&block.param_indices()));
        }
        let features_need = *needs.last().expect("non-empty") || want_input_grad;

        let pre_shape = tape.head_pre.shape();
        let g = crop_border_backward(grad_output, pre_shape, self.spec.border_margin)?;
        let g = Activation::Softplus.backward(&tape.head_pre, &g)?;
        let (hw, hb) = (self.plan.head_weight, self.plan.head_bias);
        let [head_w, head_b] = self
            .params
            .get_disjoint_mut([hw, hb])
            .expect("distinct head params");
        let g = if head_w.trainable || head_b.trainable || features_need {
            conv2d_backward(
                &tape.head_input,
                &head_w.value,
                &g,
                &mut head_w.grad,
                Some(&mut head_b.grad),
                features_need,
            )?
        } else {
            None
        };
        let Some(g) = g else { return Ok(None) };
        let mut g = mc_dropout_backward(&tape.head_dropout, &g);

        let plan = self.plan.clone();
        for i in (0..plan.blocks.len()).rev() {
            if i == plan.dropout_after {
                g = mc_dropout_backward(&tape.mid_dropout, &g);
            }
            // Input gradient of block i is needed if anything before it trains.
            let need_in = needs[i] || want_input_grad;
            match self.block_bwd(&plan.blocks[i], &tape.blocks[i], g, need_in)? {
                Some(gi) => g = gi,
                None => return Ok(None),
            }
        }
        let g = self.conv_bn_bwd(&plan.stem, &tape.stem, g, want_input_grad)?;
        Ok(g.map(|mut g| {
            for bi in 0..g.batch() {
                for c in 0..g.channels() {
                    let inv = T::of(1.0 / self.spec.norm_std[c]);
                    g.plane_slice_mut(bi, c).iter_mut().for_each(|v| *v *= inv);
                }
            }
            g
        }))
    }

    fn conv_bn_bwd(
        &mut self,
        l: &ConvBn,
        cache: &ConvBnCache<T>,
        g: Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = match &cache.pre_act {
            Some(pre) => self.spec.activation.backward(pre, &g)?,
            None => g,
        };
        let [scale, shift] = self
            .params
            .get_disjoint_mut([l.scale, l.shift])
            .expect("distinct bn params");
        let g = batchnorm2d_backward(
            &cache.bn,
            &scale.value,
            &g,
            &mut scale.grad,
            &mut shift.grad,
            true,
        )?
        .expect("input grad requested");
        let w = &mut self.params[l.weight];
        match l.kind {
            ConvKind::Dense => {
                conv2d_backward(&cache.input, &w.value, &g, &mut w.grad, None, need_input)
            }
            ConvKind::Depthwise => {
                depthwise_conv2d_backward(&cache.input, &w.value, &g, &mut w.grad, need_input)
            }
        }
    }

    fn block_bwd(
        &mut self,
        block: &Block,
        cache: &BlockCache<T>,
        g: Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        match (block, cache) {
            (
                Block::Fused {
                    expand,
                    project,
                    residual,
                },
                BlockCache::Fused {
                    expand: c1,
                    project: c2,
                },
            ) => {
                let skip = (*residual && need_input).then(|| g.clone());
                let gh = self.conv_bn_bwd(project, c2, g, true)?.expect("requested");
                let gx = self.conv_bn_bwd(expand, c1, gh, need_input)?;
                add_skip(gx, skip)
            }
            (
                Block::Mbconv {
                    expand,
                    depthwise,
                    se,
                    project,
                    residual,
                },
                BlockCache::Mbconv {
                    expand: c1,
                    depthwise: c2,
                    se_input,
                    se: se_cache,
                    project: c3,
                },
            ) => {
                let skip = (*residual && need_input).then(|| g.clone());
                let gs = self.conv_bn_bwd(project, c3, g, true)?.expect("requested");
                let squeeze = self.spec.squeeze;
                let [rw, rb, ew, eb] = self
                    .params
                    .get_disjoint_mut([
                        se.reduce_weight,
                        se.reduce_bias,
                        se.expand_weight,
                        se.expand_bias,
                    ])
                    .expect("distinct se params");
                let wts = SeWeights {
                    reduce_weight: &rw.value,
                    reduce_bias: &rb.value,
                    expand_weight: &ew.value,
                    expand_bias: &eb.value,
                };
                let grads = SeGrads {
                    reduce_weight: &mut rw.grad,
                    reduce_bias: &mut rb.grad,
                    expand_weight: &mut ew.grad,
                    expand_bias: &mut eb.grad,
                };
                let gh = se_gate_backward(se_input, se_cache, &wts, grads, &gs, squeeze, true)?
                    .expect("requested");
                let gh = self
                    .conv_bn_bwd(depthwise, c2, gh, true)?
                    .expect("requested");
                let gx = self.conv_bn_bwd(expand, c1, gh, need_input)?;
                add_skip(gx, skip)
            }
            _ => Err(Error::InvalidArgument(
                "tape does not match model layout".into(),
            )),
        }
    }
}

fn add_skip<T: Scalar>(
    gx: Option<Tensor<T>>,
    skip: Option<Tensor<T>>,
) -> Result<Option<Tensor<T>>> {
    match (gx, skip) {
        (Some(mut gx), Some(s)) => {
            gx.add_assign(&s)?;
            Ok(Some(gx))
        }
        (gx, _) => Ok(gx),
    }
}

/// Sum of parameter extents.
pub fn count_parameters<T: Scalar>(params: &[Parameter<T>], trainable_only: bool) -> usize {
    params
        .iter()
        .filter(|p| p.trainable || !trainable_only)
        .map(Parameter::numel)
        .sum()
}
