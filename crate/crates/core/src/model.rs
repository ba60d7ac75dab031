//! Network assembly: building a layer stack from an architecture string,
//! parameter initialization, the Siamese forward/backward contract, and the
//! model container.
//!
//! Both Siamese branches are one and the same parameter set — the two
//! branch batches are stacked into a single forward pass, so divergence is
//! not representable and gradients from both branches accumulate into the
//! shared parameters by construction.

use std::path::Path;

use crate::arch::{ArchSpec, LayerSpec};
use crate::container::{self, Container};
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward_owned, conv_backward, conv_forward_owned, fc_backward,
    fc_forward_owned, global_avgpool_backward, global_avgpool_forward, l2norm_backward,
    l2norm_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward_owned,
    BatchNormCache, BatchNormParams, ConvCache, ConvParams, FcCache, GapCache, L2NormCache,
    MaxPoolCache, ReluCache,
};
use crate::loss::{contrastive_loss, contrastive_loss_backward, pair_distance};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::stn::{StnCache, StnLayer};
use crate::tensor::{conv_out_extent, Tensor};
use crate::Mode;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// One stage of conv → ReLU → batch normalization.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock<S = f32> {
    pub(crate) conv: ConvParams<S>,
    pub(crate) bn: BatchNormParams<S>,
}

#[derive(Debug, Clone)]
pub(crate) struct FcLayer<S = f32> {
    pub(crate) weights: Tensor<S>,
    pub(crate) bias: Tensor<S>,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer<S = f32> {
    ConvBlock(ConvBlock<S>),
    Pool { k: usize },
    Fc(FcLayer<S>),
    Gap,
    L2Norm,
    Stn(Box<StnLayer<S>>),
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache<S = f32> {
    ConvBlock(ConvCache<S>, ReluCache, BatchNormCache<S>),
    Pool(MaxPoolCache),
    Fc {
        cache: FcCache<S>,
        folded: Option<Vec<usize>>,
    },
    Gap(GapCache),
    L2Norm {
        cache: L2NormCache<S>,
        folded: Option<Vec<usize>>,
    },
    Stn(StnCache<S>),
}

fn flatten2<S: Scalar>(x: Tensor<S>) -> (Tensor<S>, Option<Vec<usize>>) {
    if x.shape().len() == 2 {
        (x, None)
    } else {
        let shape = x.shape().to_vec();
        let b = shape[0];
        let d: usize = shape[1..].iter().product();
        (x.reshape(&[b, d]).expect("flatten preserves size"), Some(shape))
    }
}

impl<S: Scalar> Layer<S> {
    fn forward_train(&mut self, x: Tensor<S>) -> Result<(Tensor<S>, LayerCache<S>)> {
        match self {
            Layer::ConvBlock(cb) => {
                let (y, c_cache) = conv_forward_owned(x, &cb.conv)?;
                let (y, r_cache) = relu_forward_owned(y);
                let (y, b_cache) = batchnorm_forward_owned(y, &mut cb.bn, Mode::Train)?;
                Ok((y, LayerCache::ConvBlock(c_cache, r_cache, b_cache)))
            }
            Layer::Pool { k } => {
                let (y, cache) = maxpool_forward(&x, *k, *k)?;
                Ok((y, LayerCache::Pool(cache)))
            }
            Layer::Fc(fc) => {
                let (x2, folded) = flatten2(x);
                let (y, cache) = fc_forward_owned(x2, &fc.weights, &fc.bias)?;
                Ok((y, LayerCache::Fc { cache, folded }))
            }
            Layer::Gap => {
                let (y, cache) = global_avgpool_forward(&x)?;
                Ok((y, LayerCache::Gap(cache)))
            }
            Layer::L2Norm => {
                let (x2, folded) = flatten2(x);
                let (y, cache) = l2norm_forward(&x2)?;
                Ok((y, LayerCache::L2Norm { cache, folded }))
            }
            Layer::Stn(stn) => {
                let (y, cache) = stn.forward_train(&x)?;
                Ok((y, LayerCache::Stn(cache)))
            }
        }
    }

    fn forward_eval(&self, x: Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Layer::ConvBlock(cb) => {
                let (y, _) = conv_forward_owned(x, &cb.conv)?;
                let (y, _) = relu_forward_owned(y);
                // Eval-mode statistics are read-only; the clone keeps the
                // shared forward path immutable.
                let mut bn = cb.bn.clone();
                let (y, _) = batchnorm_forward_owned(y, &mut bn, Mode::Eval)?;
                Ok(y)
            }
            Layer::Pool { k } => Ok(maxpool_forward(&x, *k, *k)?.0),
            Layer::Fc(fc) => {
                let (x2, _) = flatten2(x);
                Ok(fc_forward_owned(x2, &fc.weights, &fc.bias)?.0)
            }
            Layer::Gap => Ok(global_avgpool_forward(&x)?.0),
            Layer::L2Norm => {
                let (x2, _) = flatten2(x);
                Ok(l2norm_forward(&x2)?.0)
            }
            Layer::Stn(stn) => stn.forward_eval(&x),
        }
    }

    /// Returns `(dx, own parameter gradients in traversal order)`.
    fn backward(&self, dy: Tensor<S>, cache: &LayerCache<S>) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
        match (self, cache) {
            (Layer::ConvBlock(cb), LayerCache::ConvBlock(c_cache, r_cache, b_cache)) => {
                let (dy, dgamma, dbeta) = batchnorm_backward(&dy, b_cache, &cb.bn)?;
                let dy = relu_backward(&dy, r_cache);
                let (dx, dw, db) = conv_backward(&dy, c_cache, &cb.conv)?;
                Ok((dx, vec![dw, db, dgamma, dbeta]))
            }
            (Layer::Pool { .. }, LayerCache::Pool(cache)) => {
                Ok((maxpool_backward(&dy, cache)?, Vec::new()))
            }
            (Layer::Fc(fc), LayerCache::Fc { cache, folded }) => {
                let (dx, dw, db) = fc_backward(&dy, cache, &fc.weights)?;
                let dx = match folded {
                    Some(shape) => dx.reshape(shape)?,
                    None => dx,
                };
                Ok((dx, vec![dw, db]))
            }
            (Layer::Gap, LayerCache::Gap(cache)) => {
                Ok((global_avgpool_backward(&dy, cache)?, Vec::new()))
            }
            (Layer::L2Norm, LayerCache::L2Norm { cache, folded }) => {
                let dx = l2norm_backward(&dy, cache)?;
                let dx = match folded {
                    Some(shape) => dx.reshape(shape)?,
                    None => dx,
                };
                Ok((dx, Vec::new()))
            }
            (Layer::Stn(stn), LayerCache::Stn(cache)) => stn.backward(&dy, cache),
            _ => Err(Error::Arg(
                "invalid cache: layer/cache kind mismatch in backward".into(),
            )),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::ConvBlock(_) => 4,
            Layer::Fc(_) => 2,
            Layer::Stn(stn) => stn.param_count(),
            _ => 0,
        }
    }

    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor<S>)) {
        match self {
            Layer::ConvBlock(cb) => {
                f(&cb.conv.weights);
                f(&cb.conv.bias);
                f(&cb.bn.gamma);
                f(&cb.bn.beta);
            }
            Layer::Fc(fc) => {
                f(&fc.weights);
                f(&fc.bias);
            }
            Layer::Stn(stn) => {
                for l in &stn.loc {
                    l.visit_params(f);
                }
            }
            _ => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        match self {
            Layer::ConvBlock(cb) => {
                f(&mut cb.conv.weights);
                f(&mut cb.conv.bias);
                f(&mut cb.bn.gamma);
                f(&mut cb.bn.beta);
            }
            Layer::Fc(fc) => {
                f(&mut fc.weights);
                f(&mut fc.bias);
            }
            Layer::Stn(stn) => {
                for l in &mut stn.loc {
                    l.visit_params_mut(f);
                }
            }
            _ => {}
        }
    }

    fn param_metas(&self, prefix: &str, out: &mut Vec<ParamMeta>) {
        match self {
            Layer::ConvBlock(_) => {
                out.push(ParamMeta::new(format!("{prefix}.conv.weight"), true));
                out.push(ParamMeta::new(format!("{prefix}.conv.bias"), false));
                out.push(ParamMeta::new(format!("{prefix}.bn.gamma"), false));
                out.push(ParamMeta::new(format!("{prefix}.bn.beta"), false));
            }
            Layer::Fc(_) => {
                out.push(ParamMeta::new(format!("{prefix}.fc.weight"), true));
                out.push(ParamMeta::new(format!("{prefix}.fc.bias"), false));
            }
            Layer::Stn(stn) => {
                for (j, l) in stn.loc.iter().enumerate() {
                    l.param_metas(&format!("{prefix}.stn.loc.l{j}"), out);
                }
            }
            _ => {}
        }
    }

    /// Serializable state: learnable parameters plus running statistics.
    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        match self {
            Layer::ConvBlock(cb) => {
                f(format!("{prefix}.conv.weight"), &mut cb.conv.weights);
                f(format!("{prefix}.conv.bias"), &mut cb.conv.bias);
                f(format!("{prefix}.bn.gamma"), &mut cb.bn.gamma);
                f(format!("{prefix}.bn.beta"), &mut cb.bn.beta);
                f(format!("{prefix}.bn.running_mean"), &mut cb.bn.running_mean);
                f(format!("{prefix}.bn.running_var"), &mut cb.bn.running_var);
            }
            Layer::Fc(fc) => {
                f(format!("{prefix}.fc.weight"), &mut fc.weights);
                f(format!("{prefix}.fc.bias"), &mut fc.bias);
            }
            Layer::Stn(stn) => {
                for (j, l) in stn.loc.iter_mut().enumerate() {
                    l.visit_state_mut(&format!("{prefix}.stn.loc.l{j}"), f);
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum StackShape {
    Map { c: usize, h: usize, w: usize },
    Flat { d: usize },
}

/// Builds layers for the token list, inferring shapes from the input and
/// drawing initial weights as uniform `±sqrt(6/fan_in)`.
pub(crate) fn build_stack<S: Scalar>(
    tokens: &[LayerSpec],
    input: (usize, usize, usize),
    rng: &mut Rng,
) -> Result<(Vec<Layer<S>>, StackShape)> {
    let (c, h, w) = input;
    let mut shape = StackShape::Map { c, h, w };
    let mut layers = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let need_map = |shape: &StackShape| match shape {
            StackShape::Map { c, h, w } => Ok((*c, *h, *w)),
            StackShape::Flat { .. } => Err(Error::Dim(format!(
                "token {i} ({tok:?}) needs a spatial input but the stack is already flat"
            ))),
        };
        match *tok {
            LayerSpec::ConvBlock {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = need_map(&shape)?;
                let oh = conv_out_extent(h, kernel, stride, padding)?;
                let ow = conv_out_extent(w, kernel, stride, padding)?;
                let fan_in = c * kernel * kernel;
                let a = (6.0 / fan_in as f64).sqrt();
                let weights = Tensor::from_fn(&[filters, c, kernel, kernel], |_| {
                    S::from_f64(rng.uniform(-a, a))
                });
                layers.push(Layer::ConvBlock(ConvBlock {
                    conv: ConvParams {
                        weights,
                        bias: Tensor::zeros(&[filters]),
                        stride,
                        padding,
                    },
                    bn: BatchNormParams::new(
                        filters,
                        S::from_f64(BN_MOMENTUM),
                        S::from_f64(BN_EPSILON),
                    ),
                }));
                shape = StackShape::Map {
                    c: filters,
                    h: oh,
                    w: ow,
                };
            }
            LayerSpec::Pool { k } => {
                let (c, h, w) = need_map(&shape)?;
                if k > h || k > w {
                    return Err(Error::Dim(format!(
                        "pool[{k}] exceeds feature map {h}×{w} at token {i}"
                    )));
                }
                layers.push(Layer::Pool { k });
                shape = StackShape::Map {
                    c,
                    h: (h - k) / k + 1,
                    w: (w - k) / k + 1,
                };
            }
            LayerSpec::Fc { out } => {
                let d = match shape {
                    StackShape::Map { c, h, w } => c * h * w,
                    StackShape::Flat { d } => d,
                };
                let a = (6.0 / d as f64).sqrt();
                let weights = Tensor::from_fn(&[d, out], |_| S::from_f64(rng.uniform(-a, a)));
                layers.push(Layer::Fc(FcLayer {
                    weights,
                    bias: Tensor::zeros(&[out]),
                }));
                shape = StackShape::Flat { d: out };
            }
            LayerSpec::Gap => {
                let (c, _, _) = need_map(&shape)?;
                layers.push(Layer::Gap);
                shape = StackShape::Flat { d: c };
            }
            LayerSpec::L2Norm => {
                let d = match shape {
                    StackShape::Map { c, h, w } => c * h * w,
                    StackShape::Flat { d } => d,
                };
                layers.push(Layer::L2Norm);
                shape = StackShape::Flat { d };
            }
            LayerSpec::Stn => {
                let (c, h, w) = need_map(&shape)?;
                layers.push(Layer::Stn(Box::new(StnLayer::build((c, h, w), rng)?)));
            }
        }
    }
    Ok((layers, shape))
}

pub(crate) fn stack_forward_train<S: Scalar>(
    layers: &mut [Layer<S>],
    x: Tensor<S>,
) -> Result<(Tensor<S>, Vec<LayerCache<S>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x;
    for layer in layers.iter_mut() {
        let (y, cache) = layer.forward_train(cur)?;
        caches.push(cache);
        cur = y;
    }
    Ok((cur, caches))
}

pub(crate) fn stack_forward_eval<S: Scalar>(layers: &[Layer<S>], x: Tensor<S>) -> Result<Tensor<S>> {
    let mut cur = x;
    for layer in layers {
        cur = layer.forward_eval(cur)?;
    }
    Ok(cur)
}

/// Walks the stack in reverse; returns `dx` and all parameter gradients in
/// forward traversal order.
pub(crate) fn stack_backward<S: Scalar>(
    layers: &[Layer<S>],
    caches: &[LayerCache<S>],
    dy: Tensor<S>,
) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    if layers.len() != caches.len() {
        return Err(Error::Arg(
            "invalid cache: backward without a matching forward".into(),
        ));
    }
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut grad = dy;
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (dx, grads) = layer.backward(grad, cache)?;
        per_layer.push(grads);
        grad = dx;
    }
    per_layer.reverse();
    Ok((grad, per_layer.into_iter().flatten().collect()))
}

pub(crate) fn stack_param_count<S: Scalar>(layers: &[Layer<S>]) -> usize {
    layers.iter().map(|l| l.param_count()).sum()
}

/// Name and weight-decay eligibility of one parameter slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    /// Weight decay applies to conv/fc weights only, not biases or
    /// batchnorm scale/shift.
    pub decay: bool,
}

impl ParamMeta {
    fn new(name: String, decay: bool) -> Self {
        ParamMeta { name, decay }
    }
}

/// Parameter gradients aligned with the model's traversal order.
#[derive(Debug, Clone)]
pub struct Gradients<S = f32> {
    pub(crate) slots: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, i: usize) -> &Tensor<S> {
        &self.slots[i]
    }

    pub fn slots(&self) -> &[Tensor<S>] {
        &self.slots
    }
}

/// Opaque forward caches for one train-mode pass.
pub struct ModelCaches<S = f32>(Vec<LayerCache<S>>);

/// A descriptor network: shared-weight Siamese trunk with a fixed input
/// size. `describe` always evaluates with running batch statistics, so
/// descriptors are deterministic and independent across batch items.
#[derive(Debug, Clone)]
pub struct Model<S = f32> {
    arch: ArchSpec,
    input_hw: (usize, usize),
    layers: Vec<Layer<S>>,
    mode: Mode,
    descriptor_len: usize,
}

pub const DEFAULT_INPUT: (usize, usize) = (64, 64);

impl<S: Scalar> Model<S> {
    /// Fresh model with 64×64 input; deterministic per seed.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        Self::init_with_input(arch, DEFAULT_INPUT, seed)
    }

    /// Fresh model for an `h×w` single-channel input (reduced geometries
    /// keep gradient checks affordable).
    pub fn init_with_input(arch: &ArchSpec, (h, w): (usize, usize), seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let (layers, shape) = build_stack(arch.tokens(), (1, h, w), &mut rng)?;
        let descriptor_len = match shape {
            StackShape::Flat { d } => d,
            StackShape::Map { c, h, w } => {
                return Err(Error::Dim(format!(
                    "architecture must end in a vector output, got a {c}×{h}×{w} map"
                )))
            }
        };
        Ok(Model {
            arch: arch.clone(),
            input_hw: (h, w),
            layers,
            mode: Mode::Train,
            descriptor_len,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptor_len
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_patches(&self, patches: &Tensor<S>) -> Result<usize> {
        let (h, w) = self.input_hw;
        match patches.shape() {
            [b, 1, ph, pw] if *ph == h && *pw == w => Ok(*b),
            s => Err(Error::Dim(format!(
                "expected patches of shape B×1×{h}×{w}, got {s:?}"
            ))),
        }
    }

    /// Descriptors for a batch of patches, `B×1×H×W → B×D`. Runs the eval
    /// path (running statistics), so the result does not depend on batch
    /// composition.
    pub fn describe(&self, patches: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_patches(patches)?;
        stack_forward_eval(&self.layers, patches.clone())
    }

    /// Populates batch-normalization running statistics by train-mode
    /// forward passes, without touching any learnable parameter. A fresh
    /// model's running statistics are the identity (mean 0, variance 1),
    /// which makes untrained descriptors meaningless; margin estimation
    /// and before-training baselines need statistics that reflect data.
    ///
    /// The first batch replaces the running statistics outright; later
    /// batches blend in with the configured momentum.
    pub fn calibrate_batch_stats(&mut self, batches: &[Tensor<S>]) -> Result<()> {
        if self.mode != Mode::Train {
            return Err(Error::Arg(
                "model is in eval mode; statistics are frozen".into(),
            ));
        }
        for (i, batch) in batches.iter().enumerate() {
            self.check_patches(batch)?;
            if i == 0 {
                self.set_bn_momentum(S::ZERO);
            }
            let result = stack_forward_train(&mut self.layers, batch.clone());
            if i == 0 {
                self.set_bn_momentum(S::from_f64(BN_MOMENTUM));
            }
            result?;
        }
        Ok(())
    }

    fn set_bn_momentum(&mut self, momentum: S) {
        fn walk<S: Scalar>(layers: &mut [Layer<S>], momentum: S) {
            for layer in layers {
                match layer {
                    Layer::ConvBlock(cb) => cb.bn.momentum = momentum,
                    Layer::Stn(stn) => walk(&mut stn.loc, momentum),
                    _ => {}
                }
            }
        }
        walk(&mut self.layers, momentum);
    }

    /// Train-mode forward returning caches for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, ModelCaches<S>)> {
        if self.mode != Mode::Train {
            return Err(Error::Arg("model is in eval mode; training forbidden".into()));
        }
        self.check_patches(x)?;
        let (y, caches) = stack_forward_train(&mut self.layers, x.clone())?;
        Ok((y, ModelCaches(caches)))
    }

    /// Backpropagates descriptor gradients through the stack.
    pub fn backward(&self, ddesc: &Tensor<S>, caches: &ModelCaches<S>) -> Result<Gradients<S>> {
        let (_, slots) = stack_backward(&self.layers, &caches.0, ddesc.clone())?;
        Ok(Gradients { slots })
    }

    /// One Siamese step: both pair members run through the shared
    /// parameters (stacked into a single batch, so batch statistics span
    /// both branches), the batch-mean contrastive loss is formed, and its
    /// gradient flows back into the single parameter set.
    pub fn siamese_forward_backward(
        &mut self,
        p1: &Tensor<S>,
        p2: &Tensor<S>,
        labels: &[u8],
        margin: S,
    ) -> Result<(S, Gradients<S>)> {
        let b = self.check_patches(p1)?;
        if p2.shape() != p1.shape() || labels.len() != b {
            return Err(Error::Dim(format!(
                "pair batch mismatch: p1 {:?}, p2 {:?}, {} labels",
                p1.shape(),
                p2.shape(),
                labels.len()
            )));
        }
        let (h, w) = self.input_hw;
        let mut stacked = Tensor::zeros(&[2 * b, 1, h, w]);
        stacked.data_mut()[..b * h * w].copy_from_slice(p1.data());
        stacked.data_mut()[b * h * w..].copy_from_slice(p2.data());
        let (desc, caches) = self.forward_train(&stacked)?;
        let d = self.descriptor_len;
        let inv_b = S::ONE / S::from_f64(b as f64);
        let mut loss = S::ZERO;
        let mut ddesc = Tensor::zeros(desc.shape());
        for i in 0..b {
            let f1 = &desc.data()[i * d..(i + 1) * d];
            let f2 = &desc.data()[(b + i) * d..(b + i + 1) * d];
            let dist = pair_distance(f1, f2)?;
            loss += contrastive_loss(dist, labels[i], margin)?;
            let (df1, df2) = contrastive_loss_backward(f1, f2, labels[i], margin)?;
            for (dst, src) in ddesc.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&df1) {
                *dst = *src * inv_b;
            }
            for (dst, src) in ddesc.data_mut()[(b + i) * d..(b + i + 1) * d]
                .iter_mut()
                .zip(&df2)
            {
                *dst = *src * inv_b;
            }
        }
        loss *= inv_b;
        let grads = self.backward(&ddesc, &caches)?;
        Ok((loss, grads))
    }

    pub fn param_count(&self) -> usize {
        stack_param_count(&self.layers)
    }

    pub fn visit_params(&self, mut f: impl FnMut(usize, &Tensor<S>)) {
        let mut i = 0;
        for layer in &self.layers {
            layer.visit_params(&mut |t| {
                f(i, t);
                i += 1;
            });
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut Tensor<S>)) {
        let mut i = 0;
        for layer in &mut self.layers {
            layer.visit_params_mut(&mut |t| {
                f(i, t);
                i += 1;
            });
        }
    }

    /// Slot names and weight-decay eligibility, aligned with
    /// `visit_params` and [`Gradients`] order.
    pub fn param_metas(&self) -> Vec<ParamMeta> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.param_metas(&format!("l{i}"), &mut out);
        }
        out
    }

    fn visit_state_mut(&mut self, mut f: impl FnMut(String, &mut Tensor<S>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_state_mut(&format!("l{i}"), &mut f);
        }
    }
}

impl Model<f32> {
    /// Serializes architecture, every parameter tensor, running statistics
    /// and mode; the round-trip is bit-exact.
    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        self.to_container(metadata).write(path)
    }

    pub fn to_container(&self, metadata: &str) -> Container {
        let mut tensors = Vec::new();
        let mut me = self.clone();
        me.visit_state_mut(|name, t| tensors.push((name, t.clone())));
        Container {
            arch: self.arch.render(),
            metadata: metadata.to_string(),
            mode: match self.mode {
                Mode::Train => 0,
                Mode::Eval => 1,
            },
            input_hw: (self.input_hw.0 as u32, self.input_hw.1 as u32),
            tensors,
            optim: None,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let container = Container::read(path)?;
        let model = Self::from_container(&container)?;
        Ok((model, container.metadata))
    }

    pub fn from_container(container: &Container) -> Result<Self> {
        let arch = ArchSpec::parse(&container.arch)
            .map_err(|e| Error::Format(format!("container architecture string: {e}")))?;
        let (h, w) = (container.input_hw.0 as usize, container.input_hw.1 as usize);
        let mut model = Model::<f32>::init_with_input(&arch, (h, w), 0)?;
        model.mode = match container.mode {
            0 => Mode::Train,
            1 => Mode::Eval,
            m => return Err(Error::Format(format!("unknown mode byte {m}"))),
        };
        let mut by_name: std::collections::HashMap<&str, &Tensor<f32>> = container
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let mut missing = Vec::new();
        model.visit_state_mut(|name, slot| match by_name.remove(name.as_str()) {
            Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
            Some(t) => missing.push(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )),
            None => missing.push(format!("tensor `{name}` missing")),
        });
        if !missing.is_empty() {
            return Err(Error::Format(missing.join("; ")));
        }
        if !by_name.is_empty() {
            let extra: Vec<&str> = by_name.keys().copied().collect();
            return Err(Error::Format(format!(
                "container holds unknown tensors: {extra:?}"
            )));
        }
        Ok(model)
    }
}

/// Writes a plain tensor (e.g. exported descriptors) into the same
/// container format, with an empty architecture string.
pub fn save_tensor(path: &Path, name: &str, tensor: &Tensor<f32>, metadata: &str) -> Result<()> {
    Container {
        arch: String::new(),
        metadata: metadata.to_string(),
        mode: 1,
        input_hw: (0, 0),
        tensors: vec![(name.to_string(), tensor.clone())],
        optim: None,
    }
    .write(path)
}

pub fn load_tensor(path: &Path) -> Result<(String, Tensor<f32>, String)> {
    let c = container::Container::read(path)?;
    let (name, tensor) = c
        .tensors
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format("container holds no tensors".into()))?;
    Ok((name, tensor, c.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchSpec {
        ArchSpec::parse("convBlock[4,3,1,1]-pool[2]-convBlock[8,3,1,1]-gap-L2norm").unwrap()
    }

    #[test]
    fn same_seed_bit_identical() {
        let m1 = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 7).unwrap();
        let m2 = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 7).unwrap();
        let mut all_eq = true;
        m1.visit_params(|i, t| {
            m2.visit_params(|j, u| {
                if i == j && t != u {
                    all_eq = false;
                }
            });
        });
        assert!(all_eq);
    }

    #[test]
    fn init_gamma_one_beta_zero() {
        let m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 1).unwrap();
        let metas = m.param_metas();
        m.visit_params(|i, t| {
            if metas[i].name.ends_with("bn.gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            }
            if metas[i].name.ends_with("bn.beta") || metas[i].name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        });
    }

    #[test]
    fn cnn7_shape_trace_and_unit_norm() {
        let m = Model::<f32>::init(&ArchSpec::cnn7(), 3).unwrap();
        assert_eq!(m.descriptor_len(), 128);
        let mut rng = Rng::new(4);
        let x = Tensor::<f32>::from_fn(&[2, 1, 64, 64], |_| rng.uniform(-1.0, 1.0) as f32);
        let d = m.describe(&x).unwrap();
        assert_eq!(d.shape(), &[2, 128]);
        for row in 0..2 {
            let n: f64 = d.data()[row * 128..(row + 1) * 128]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn describe_deterministic_and_batch_invariant() {
        let m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 9).unwrap();
        let mut rng = Rng::new(10);
        let batch = Tensor::<f32>::from_fn(&[3, 1, 8, 8], |_| rng.uniform(0.0, 1.0) as f32);
        let d1 = m.describe(&batch).unwrap();
        let d2 = m.describe(&batch).unwrap();
        assert_eq!(d1, d2);
        let single =
            Tensor::from_vec(&[1, 1, 8, 8], batch.data()[..64].to_vec()).unwrap();
        let ds = m.describe(&single).unwrap();
        for j in 0..d1.shape()[1] {
            assert!((ds.data()[j] - d1.data()[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn describe_rejects_wrong_patch_size() {
        let m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 9).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16]);
        assert!(matches!(m.describe(&x), Err(Error::Dim(_))));
    }

    #[test]
    fn identical_positive_pairs_zero_loss_zero_grad() {
        let mut m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 11).unwrap();
        let mut rng = Rng::new(12);
        let p = Tensor::<f32>::from_fn(&[3, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        let (loss, grads) = m
            .siamese_forward_backward(&p.clone(), &p, &[1, 1, 1], 2.0)
            .unwrap();
        assert_eq!(loss, 0.0);
        for g in grads.slots() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn swapping_pair_order_preserves_loss() {
        let mut m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 13).unwrap();
        let mut rng = Rng::new(14);
        let p1 = Tensor::<f32>::from_fn(&[4, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        let p2 = Tensor::<f32>::from_fn(&[4, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        let labels = [1, 0, 1, 0];
        let (l12, _) = m.siamese_forward_backward(&p1, &p2, &labels, 1.5).unwrap();
        let (l21, _) = m.siamese_forward_backward(&p2, &p1, &labels, 1.5).unwrap();
        assert!((l12 - l21).abs() < 1e-6);
    }

    #[test]
    fn distance_symmetry_through_describe() {
        let m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 15).unwrap();
        let mut rng = Rng::new(16);
        let p = Tensor::<f32>::from_fn(&[2, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        let d = m.describe(&p).unwrap();
        let dim = d.shape()[1];
        let d12 = pair_distance(&d.data()[..dim], &d.data()[dim..]).unwrap();
        let d21 = pair_distance(&d.data()[dim..], &d.data()[..dim]).unwrap();
        assert_eq!(d12, d21);
    }

    #[test]
    fn eval_mode_refuses_training() {
        let mut m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 2).unwrap();
        m.set_mode(Mode::Eval);
        let x = Tensor::<f32>::zeros(&[2, 1, 8, 8]);
        assert!(matches!(m.forward_train(&x), Err(Error::Arg(_))));
        assert!(m
            .siamese_forward_backward(&x.clone(), &x, &[1, 1], 1.0)
            .is_err());
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("patchdesc-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.pdm");
        let mut m = Model::<f32>::init_with_input(&tiny_arch(), (8, 8), 21).unwrap();
        // Touch running stats so they are non-trivial.
        let mut rng = Rng::new(22);
        let x = Tensor::<f32>::from_fn(&[2, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        let _ = m.forward_train(&x).unwrap();
        m.set_mode(Mode::Eval);
        m.save(&path, "meta line").unwrap();
        let (loaded, meta) = Model::load(&path).unwrap();
        assert_eq!(meta, "meta line");
        assert_eq!(loaded.mode(), Mode::Eval);
        let probe = Tensor::<f32>::from_fn(&[1, 1, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32);
        assert_eq!(m.describe(&probe).unwrap(), loaded.describe(&probe).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
