//! The Interflow model: a plain conv stack with a prediction branch at the
//! end of every stage and an attention module fusing the branch logits.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::interflow::attention::{AttentionMode, AttentionModule};
use crate::interflow::backbone::{BackboneSpec, KERNEL, PADDING};
use crate::interflow::method::{resolve_method_config, Method};
use crate::interflow::partition::{deep_partition, even_partition, stage_partition, StagePartition};
use crate::layers::{global_avg_pool, relu, BatchNormLayer, Conv2dLayer, LinearLayer, Mode};
use crate::params::{Binder, ParamId, ParamStore};
use crate::rng::{stream, TAG_INIT, TAG_NOISE};
use crate::tensor::Tensor;
use crate::training::init::{conv_fans, xavier_init};

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionInit {
    /// Per-branch values; broadcast across classes in per-class mode.
    Fixed(Vec<f64>),
    /// Uniform on `[−1/√n, 1/√n]`.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub mode: AttentionMode,
    pub init: AttentionInit,
}

/// Everything needed to rebuild a model's structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    /// One branch per boundary. A model without attention has exactly one
    /// boundary, the last layer.
    pub partition: StagePartition,
    pub attention: Option<AttentionSpec>,
    pub num_classes: usize,
    /// Heads with equal input widths use one classifier.
    pub share_heads: bool,
}

impl ModelSpec {
    /// Baseline: GAP and a classifier on the last feature map only.
    pub fn normal(backbone: BackboneSpec, num_classes: usize) -> Result<Self> {
        let depth = backbone.depth();
        Ok(ModelSpec {
            partition: StagePartition::new(vec![depth], depth)?,
            backbone,
            attention: None,
            num_classes,
            share_heads: true,
        })
    }

    /// The model for `method` on `backbone`. `boundaries` overrides the
    /// default stage split (and with it the branch count); methods with
    /// manual initialization then fall back to equal weights `1/n` unless
    /// the count matches the method's own.
    pub fn for_method(
        method: Method,
        backbone: BackboneSpec,
        boundaries: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let cfg = resolve_method_config(method)?;
        let Some(mode) = cfg.attention_mode() else {
            return Self::normal(backbone, num_classes);
        };
        let depth = backbone.depth();
        let partition = match (boundaries, method) {
            (Some(b), _) => StagePartition::new(b, depth)?,
            (None, Method::Deep { depth: d, branches }) => {
                if d != depth {
                    return Err(Error::invalid(format!(
                        "method {method} does not match a depth-{depth} backbone"
                    )));
                }
                deep_partition(d, branches)?
            }
            (None, _) if depth == 13 => stage_partition(13, cfg.branches)?,
            (None, _) => even_partition(depth, cfg.branches)?,
        };
        let n = partition.branches();
        let init = if cfg.initialization {
            if n == cfg.branches {
                AttentionInit::Fixed(cfg.manual_weights().expect("initialization set"))
            } else {
                AttentionInit::Fixed(vec![1.0 / n as f64; n])
            }
        } else {
            AttentionInit::Random
        };
        Ok(ModelSpec {
            backbone,
            partition,
            attention: Some(AttentionSpec { mode, init }),
            num_classes,
            share_heads: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.partition.depth() != self.backbone.depth() {
            return Err(Error::invalid(format!(
                "partition ends at layer {} but the backbone has {} layers",
                self.partition.depth(),
                self.backbone.depth()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        match &self.attention {
            None if self.partition.branches() != 1 => Err(Error::invalid(
                "a model without attention must have exactly one branch",
            )),
            Some(AttentionSpec {
                init: AttentionInit::Fixed(w),
                ..
            }) if w.len() != self.partition.branches() => Err(Error::invalid(format!(
                "{} initial attention weights for {} branches",
                w.len(),
                self.partition.branches()
            ))),
            _ => Ok(()),
        }
    }
}

/// Additive Gaussian noise after a frozen, zeroed convolution. A fresh
/// draw is made for every forward pass.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    pub seed: u64,
    pub draws: u64,
}

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2dLayer,
    pub bn: BatchNormLayer,
    pub noise: Option<NoiseSource>,
}

#[derive(Clone, Copy, Debug)]
pub struct BranchHead {
    /// 1-based layer the head is tapped after.
    pub layer: usize,
    /// Index into [`InterflowModel::classifiers`].
    pub classifier: usize,
}

pub struct ModelOutput {
    /// Fused `N×C` logits.
    pub logits: Var,
    pub branch_logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct InterflowModel {
    pub params: ParamStore,
    pub blocks: Vec<ConvBlock>,
    pub heads: Vec<BranchHead>,
    pub classifiers: Vec<LinearLayer>,
    pub attention: Option<AttentionModule>,
    spec: ModelSpec,
}

impl InterflowModel {
    /// Builds the model with Xavier-initialized convolutions and classifiers
    /// (zero biases) drawn from a stream keyed by `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(&[seed, TAG_INIT]);
        let mut params = ParamStore::new();
        let b = &spec.backbone;

        let mut blocks = Vec::with_capacity(b.depth());
        for layer in 1..=b.depth() {
            let (cin, cout) = (b.in_channels(layer), b.out_channels(layer));
            let conv = Conv2dLayer::new(&mut params, &format!("conv{layer}"), cin, cout, KERNEL, b.strides[layer - 1], PADDING);
            let (fan_in, fan_out) = conv_fans(cout, cin, KERNEL);
            let w = xavier_init(&[cout, cin, KERNEL, KERNEL], fan_in, fan_out, &mut rng);
            params.set_value(conv.weight, w)?;
            let bn = BatchNormLayer::new(&mut params, &format!("bn{layer}"), cout);
            blocks.push(ConvBlock { conv, bn, noise: None });
        }

        let mut heads = Vec::new();
        let mut classifiers: Vec<LinearLayer> = Vec::new();
        for (i, &layer) in spec.partition.boundaries().iter().enumerate() {
            let width = b.out_channels(layer);
            let existing = spec
                .share_heads
                .then(|| classifiers.iter().position(|c| c.in_features == width))
                .flatten();
            let classifier = match existing {
                Some(idx) => idx,
                None => {
                    let name = if spec.share_heads { format!("head.c{width}") } else { format!("head.{}", i + 1) };
                    let lin = LinearLayer::new(&mut params, &name, width, spec.num_classes);
                    let w = xavier_init(&[spec.num_classes, width], width, spec.num_classes, &mut rng);
                    params.set_value(lin.weight, w)?;
                    classifiers.push(lin);
                    classifiers.len() - 1
                }
            };
            heads.push(BranchHead { layer, classifier });
        }

        let attention = match &spec.attention {
            None => None,
            Some(a) => {
                let n = heads.len();
                let c = spec.num_classes;
                let shape = a.mode.weight_shape(n, c);
                let len: usize = shape.iter().product();
                let values = match &a.init {
                    AttentionInit::Fixed(w) => (0..len).map(|j| w[j * n / len]).collect(),
                    AttentionInit::Random => {
                        let bound = 1.0 / (n as f64).sqrt();
                        (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
                    }
                };
                Some(AttentionModule::new(&mut params, a.mode, Tensor::new(shape, values)?, n, c)?)
            }
        };

        Ok(InterflowModel {
            params,
            blocks,
            heads,
            classifiers,
            attention,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn branches(&self) -> usize {
        self.heads.len()
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn attention_weights(&self) -> Option<&Tensor> {
        self.attention.as_ref().map(|a| &self.params.get(a.weights).value)
    }

    /// Runs the conv stack once. At each stage boundary the feature map is
    /// pooled into that stage's head while the trunk carries on from the
    /// same map, so gradients reach a stage both through its own branch and
    /// through every deeper one.
    pub fn forward(&mut self, tape: &mut Tape, binder: &mut Binder, x: Var, mode: Mode) -> Result<ModelOutput> {
        let store = &self.params;
        let mut h = x;
        let mut branch_logits = Vec::with_capacity(self.heads.len());
        let mut next_head = 0;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.conv.forward(tape, binder, store, h)?;
            if let Some(noise) = &mut block.noise {
                let shape = tape.value(h).shape().to_vec();
                let mut rng = stream(&[noise.seed, TAG_NOISE, i as u64, noise.draws]);
                noise.draws += 1;
                let len = shape.iter().product();
                let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = tape.constant(Tensor::new(shape, data)?);
                h = tape.add(h, n)?;
            }
            h = block.bn.forward(tape, binder, store, h, mode)?;
            h = relu(tape, h)?;
            while next_head < self.heads.len() && self.heads[next_head].layer == i + 1 {
                let pooled = global_avg_pool(tape, h)?;
                let head = self.heads[next_head];
                branch_logits.push(self.classifiers[head.classifier].forward(tape, binder, store, pooled)?);
                next_head += 1;
            }
        }
        let logits = match &self.attention {
            Some(att) => att.fuse(tape, binder, store, &branch_logits)?,
            None => branch_logits[0],
        };
        Ok(ModelOutput { logits, branch_logits })
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict(&mut self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::inference();
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &mut binder, x, Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Parameters of conv block `layer` (1-based): conv weight and bias, BN
    /// gamma and beta.
    pub fn block_params(&self, layer: usize) -> [ParamId; 4] {
        let b = &self.blocks[layer - 1];
        [b.conv.weight, b.conv.bias, b.bn.gamma, b.bn.beta]
    }

    /// Excludes the listed 1-based blocks from training at their current values.
    pub fn freeze(&mut self, layers: impl IntoIterator<Item = usize>) -> Result<()> {
        for layer in layers {
            self.check_layer(layer)?;
            for id in self.block_params(layer) {
                self.params.get_mut(id).trainable = false;
            }
        }
        Ok(())
    }

    /// Freezes the listed blocks with zeroed convolutions and adds fresh
    /// standard normal noise to their conv output on every forward pass,
    /// so whatever those layers emit is independent of the input.
    pub fn freeze_with_noise(&mut self, layers: impl IntoIterator<Item = usize>, seed: u64) -> Result<()> {
        for layer in layers {
            self.check_layer(layer)?;
            let [w, b, _, _] = self.block_params(layer);
            for id in [w, b] {
                self.params.get_mut(id).value.data_mut().fill(0.0);
            }
            self.freeze([layer])?;
            self.blocks[layer - 1].noise = Some(NoiseSource { seed, draws: 0 });
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.blocks.len() {
            return Err(Error::invalid(format!(
                "layer {layer} outside 1..={}",
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

/// The 13-layer VGG stack with a single GAP + linear head and no attention.
pub fn build_vgg16_backbone(num_classes: usize, input_channels: usize, seed: u64) -> Result<InterflowModel> {
    InterflowModel::new(ModelSpec::normal(BackboneSpec::vgg16(input_channels), num_classes)?, seed)
}

/// A `depth`-layer plain stack with `branches` evenly spaced heads after
/// layer 7 and soft scalar attention.
pub fn build_deep_backbone(
    depth: usize,
    branches: usize,
    num_classes: usize,
    input_channels: usize,
    seed: u64,
) -> Result<InterflowModel> {
    let spec = ModelSpec::for_method(
        Method::Deep { depth, branches },
        BackboneSpec::deep(input_channels, depth),
        None,
        num_classes,
    )?;
    InterflowModel::new(spec, seed)
}
