//! Genome to network compilation with exact parameter and multiply-add
//! accounting.
//!
//! The compiled [`NetworkDescription`] is framework neutral: a stem, the
//! expanded blocks as lists of primitive layers, a global average pool and a
//! linear classifier head. Evaluator plugins translate it into whatever
//! training framework they use.
//!
//! Block internals:
//!
//! * `CrLU`: 2x2 conv (stride 1, same padding, bias) + ReLU.
//! * `Res`: 3x3 conv + norm + ReLU + 3x3 conv + norm, skip added, ReLU.
//!   A 1x1 projection + norm sits on the skip when `in != out`.
//! * `Bot`: 1x1 (in -> mid) + norm + ReLU + 3x3 (mid -> mid) + norm + ReLU +
//!   1x1 (mid -> out) + norm, skip added, ReLU, with `mid = max(1, out / 4)`
//!   and the same projection rule as `Res`.
//! * `Invr`: optional 1x1 expansion + norm + ReLU6 (only when `expand > 1`),
//!   3x3 depthwise at the gene's stride + norm + ReLU6, linear 1x1 projection
//!   + norm. Identity skip only when `stride == 1 && in == out`.
//!
//! Convolutions other than `CrLU` carry no bias. Normalization layers hold
//! `2 * channels` parameters. Linear layers carry a bias.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{BlockKind, Genome, GenomeError, LayerGene};

/// Channels of the network input image.
pub const INPUT_CHANNELS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("invalid genome: {0}")]
    InvalidGenome(#[from] GenomeError),
    #[error("num_classes must be at least 2, got {0}")]
    TooFewClasses(u32),
    #[error("spatial extent underflows at {stage}")]
    SpatialUnderflow { stage: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveOp {
    Conv,
    Dwconv,
    Norm,
    Relu,
    Relu6,
    Add,
    Avgpool,
    Linear,
}

/// One primitive layer of a compiled network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Primitive {
    pub op: PrimitiveOp,
    pub kernel: Option<u32>,
    pub stride: Option<u32>,
    #[serde(rename = "in")]
    pub in_ch: u32,
    #[serde(rename = "out")]
    pub out_ch: u32,
    pub bias: bool,
    pub params: u64,
}

impl Primitive {
    pub fn conv(kernel: u32, stride: u32, in_ch: u32, out_ch: u32, bias: bool) -> Self {
        let weights = u64::from(kernel) * u64::from(kernel) * u64::from(in_ch) * u64::from(out_ch);
        let params = weights + if bias { u64::from(out_ch) } else { 0 };
        Primitive { op: PrimitiveOp::Conv, kernel: Some(kernel), stride: Some(stride), in_ch, out_ch, bias, params }
    }

    pub fn depthwise(kernel: u32, stride: u32, channels: u32) -> Self {
        let params = u64::from(kernel) * u64::from(kernel) * u64::from(channels);
        Primitive {
            op: PrimitiveOp::Dwconv,
            kernel: Some(kernel),
            stride: Some(stride),
            in_ch: channels,
            out_ch: channels,
            bias: false,
            params,
        }
    }

    pub fn norm(channels: u32) -> Self {
        Self::pointwise(PrimitiveOp::Norm, channels, 2 * u64::from(channels))
    }

    pub fn relu(channels: u32) -> Self {
        Self::pointwise(PrimitiveOp::Relu, channels, 0)
    }

    pub fn relu6(channels: u32) -> Self {
        Self::pointwise(PrimitiveOp::Relu6, channels, 0)
    }

    pub fn add(channels: u32) -> Self {
        Self::pointwise(PrimitiveOp::Add, channels, 0)
    }

    pub fn global_avg_pool(channels: u32) -> Self {
        Self::pointwise(PrimitiveOp::Avgpool, channels, 0)
    }

    pub fn linear(in_ch: u32, out_ch: u32) -> Self {
        let params = u64::from(in_ch) * u64::from(out_ch) + u64::from(out_ch);
        Primitive { op: PrimitiveOp::Linear, kernel: None, stride: None, in_ch, out_ch, bias: true, params }
    }

    fn pointwise(op: PrimitiveOp, channels: u32, params: u64) -> Self {
        Primitive { op, kernel: None, stride: None, in_ch: channels, out_ch: channels, bias: false, params }
    }

    fn spatial_stride(&self) -> u32 {
        match self.op {
            PrimitiveOp::Conv | PrimitiveOp::Dwconv => self.stride.unwrap_or(1),
            _ => 1,
        }
    }

    /// Multiply-adds for this primitive given its input spatial extent.
    fn macs(&self, (h, w): (u32, u32)) -> u64 {
        let (oh, ow) = downsample((h, w), self.spatial_stride());
        let area = u64::from(oh) * u64::from(ow);
        let k2 = self.kernel.map_or(0, |k| u64::from(k) * u64::from(k));
        match self.op {
            PrimitiveOp::Conv => k2 * u64::from(self.in_ch) * u64::from(self.out_ch) * area,
            PrimitiveOp::Dwconv => k2 * u64::from(self.in_ch) * area,
            PrimitiveOp::Linear => u64::from(self.in_ch) * u64::from(self.out_ch),
            _ => 0,
        }
    }
}

fn downsample((h, w): (u32, u32), stride: u32) -> (u32, u32) {
    (h.div_ceil(stride), w.div_ceil(stride))
}

/// Skip branch of a block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "primitives", rename_all = "snake_case")]
pub enum Skip {
    None,
    Identity,
    Projection(Vec<Primitive>),
}

/// One genome layer expanded into primitives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    #[serde(rename = "in")]
    pub in_ch: u32,
    #[serde(rename = "out")]
    pub out_ch: u32,
    pub stride: u32,
    pub expand: u32,
    /// Main path in execution order; ends with `add` (and possibly an
    /// activation) when the block has a skip branch.
    pub primitives: Vec<Primitive>,
    pub skip: Skip,
    pub params: u64,
}

impl BlockSpec {
    fn all_primitives(&self) -> impl Iterator<Item = &Primitive> {
        let skip: &[Primitive] = match &self.skip {
            Skip::Projection(p) => p,
            _ => &[],
        };
        self.primitives.iter().chain(skip)
    }
}

fn projection(in_ch: u32, out_ch: u32) -> Skip {
    if in_ch == out_ch {
        Skip::Identity
    } else {
        Skip::Projection(vec![Primitive::conv(1, 1, in_ch, out_ch, false), Primitive::norm(out_ch)])
    }
}

/// Expands a gene into its primitive layers.
pub fn expand_block(gene: &LayerGene) -> BlockSpec {
    let (i, o) = (gene.in_ch(), gene.out_ch());
    let (primitives, skip) = match gene.kind() {
        BlockKind::CrLU => (vec![Primitive::conv(2, 1, i, o, true), Primitive::relu(o)], Skip::None),
        BlockKind::Res => {
            let skip = projection(i, o);
            let main = vec![
                Primitive::conv(3, 1, i, o, false),
                Primitive::norm(o),
                Primitive::relu(o),
                Primitive::conv(3, 1, o, o, false),
                Primitive::norm(o),
                Primitive::add(o),
                Primitive::relu(o),
            ];
            (main, skip)
        }
        BlockKind::Bot => {
            let mid = (o / 4).max(1);
            let skip = projection(i, o);
            let main = vec![
                Primitive::conv(1, 1, i, mid, false),
                Primitive::norm(mid),
                Primitive::relu(mid),
                Primitive::conv(3, 1, mid, mid, false),
                Primitive::norm(mid),
                Primitive::relu(mid),
                Primitive::conv(1, 1, mid, o, false),
                Primitive::norm(o),
                Primitive::add(o),
                Primitive::relu(o),
            ];
            (main, skip)
        }
        BlockKind::Invr => {
            let hidden = i * gene.expand();
            let mut main = Vec::with_capacity(9);
            if gene.expand() > 1 {
                main.extend([Primitive::conv(1, 1, i, hidden, false), Primitive::norm(hidden), Primitive::relu6(hidden)]);
            }
            main.extend([
                Primitive::depthwise(3, gene.stride(), hidden),
                Primitive::norm(hidden),
                Primitive::relu6(hidden),
                Primitive::conv(1, 1, hidden, o, false),
                Primitive::norm(o),
            ]);
            let skip = if gene.stride() == 1 && i == o {
                main.push(Primitive::add(o));
                Skip::Identity
            } else {
                Skip::None
            };
            (main, skip)
        }
    };
    let mut block = BlockSpec {
        kind: gene.kind(),
        in_ch: i,
        out_ch: o,
        stride: gene.stride(),
        expand: gene.expand(),
        primitives,
        skip,
        params: 0,
    };
    block.params = block.all_primitives().map(|p| p.params).sum();
    block
}

/// Exact parameter count of one gene's block.
pub fn block_params(gene: &LayerGene) -> u64 {
    expand_block(gene).params
}

/// Head and input settings used by [`compile`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileSpec {
    pub head_widths: Vec<u32>,
    pub num_classes: u32,
    pub input_size: (u32, u32),
}

impl Default for CompileSpec {
    fn default() -> Self {
        CompileSpec { head_widths: vec![640, 64], num_classes: 5, input_size: (224, 224) }
    }
}

/// A compiled network, ready for export to an evaluator plugin.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkDescription {
    pub input_size: (u32, u32),
    pub input_channels: u32,
    pub stem: Vec<Primitive>,
    pub blocks: Vec<BlockSpec>,
    pub pool: Primitive,
    pub head: Vec<Primitive>,
    pub num_classes: u32,
    pub param_count: u64,
}

impl NetworkDescription {
    /// Every primitive in execution order (skip branches follow their block's
    /// main path).
    pub fn primitives(&self) -> impl Iterator<Item = &Primitive> {
        self.stem
            .iter()
            .chain(self.blocks.iter().flat_map(|b| b.all_primitives()))
            .chain(std::iter::once(&self.pool))
            .chain(self.head.iter())
    }

    pub fn linear_layers(&self) -> impl Iterator<Item = &Primitive> {
        self.head.iter().filter(|p| p.op == PrimitiveOp::Linear)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization is infallible")
    }

    pub fn summary(&self) -> NetworkSummary {
        NetworkSummary {
            params: self.param_count,
            macs: mac_count(self),
            blocks: self.blocks.len(),
            linear_layers: self.linear_layers().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub params: u64,
    pub macs: u64,
    pub blocks: usize,
    pub linear_layers: usize,
}

/// Compiles a valid genome.
pub fn compile(genome: &Genome, spec: &CompileSpec) -> Result<NetworkDescription, CompileError> {
    genome.validate(usize::MAX)?;
    if spec.num_classes < 2 {
        return Err(CompileError::TooFewClasses(spec.num_classes));
    }
    let stem_out = genome.stem_out();
    let stem = vec![
        Primitive::conv(3, 2, INPUT_CHANNELS, stem_out, false),
        Primitive::norm(stem_out),
        Primitive::relu(stem_out),
    ];

    let mut extent = spec.input_size;
    check_extent(extent, 2, || "stem".to_string())?;
    extent = downsample(extent, 2);
    let blocks: Vec<BlockSpec> = genome.layers().iter().map(expand_block).collect();
    for (index, block) in blocks.iter().enumerate() {
        check_extent(extent, block.stride, || format!("block {index}"))?;
        extent = downsample(extent, block.stride);
    }

    let last = genome.layers().last().map_or(stem_out, |l| l.out_ch());
    let pool = Primitive::global_avg_pool(last);
    let mut head = Vec::new();
    let mut width = last;
    for &hidden in &spec.head_widths {
        head.push(Primitive::linear(width, hidden));
        head.push(Primitive::relu(hidden));
        width = hidden;
    }
    head.push(Primitive::linear(width, spec.num_classes));

    let mut net = NetworkDescription {
        input_size: spec.input_size,
        input_channels: INPUT_CHANNELS,
        stem,
        blocks,
        pool,
        head,
        num_classes: spec.num_classes,
        param_count: 0,
    };
    net.param_count = net.primitives().map(|p| p.params).sum();
    Ok(net)
}

/// A stride-`s` layer needs at least `s` pixels in each dimension.
fn check_extent((h, w): (u32, u32), stride: u32, stage: impl FnOnce() -> String) -> Result<(), CompileError> {
    if h == 0 || w == 0 || h < stride || w < stride {
        return Err(CompileError::SpatialUnderflow { stage: stage() });
    }
    Ok(())
}

/// Multiply-adds over all convolution and linear primitives.
///
/// Spatial extents are tracked through the network; stride-2 layers halve
/// them with ceiling division. Normalization, activation, addition and
/// pooling are free.
pub fn mac_count(net: &NetworkDescription) -> u64 {
    let mut extent = net.input_size;
    let mut total = 0u64;
    for p in &net.stem {
        total += p.macs(extent);
        extent = downsample(extent, p.spatial_stride());
    }
    for block in &net.blocks {
        let block_in = extent;
        for p in &block.primitives {
            total += p.macs(extent);
            extent = downsample(extent, p.spatial_stride());
        }
        if let Skip::Projection(skip) = &block.skip {
            let mut skip_extent = block_in;
            for p in skip {
                total += p.macs(skip_extent);
                skip_extent = downsample(skip_extent, p.spatial_stride());
            }
        }
    }
    total + net.head.iter().map(|p| p.macs((1, 1))).sum::<u64>()
}

/// A widening sequence of output channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelSchedule {
    anchors: Vec<u32>,
}

impl ChannelSchedule {
    /// Returns `None` when `anchors` is empty or holds a zero.
    pub fn new(anchors: Vec<u32>) -> Option<Self> {
        (!anchors.is_empty() && anchors.iter().all(|&a| a > 0)).then_some(ChannelSchedule { anchors })
    }

    pub fn anchors(&self) -> &[u32] {
        &self.anchors
    }

    /// Width of the stem output.
    pub fn stem_width(&self) -> u32 {
        self.anchors[0]
    }

    /// Output width of the layer at zero-based `index`; saturates at the last
    /// anchor.
    pub fn width_at(&self, index: usize) -> u32 {
        self.anchors[(index + 1).min(self.anchors.len() - 1)]
    }
}

impl Default for ChannelSchedule {
    fn default() -> Self {
        ChannelSchedule { anchors: vec![16, 24, 32, 64, 96, 160, 320, 1280] }
    }
}

/// Re-initializes per-layer channels from `schedule`, keeping kinds, strides
/// and expands.
pub fn schedule_channels(genome: &Genome, schedule: &ChannelSchedule) -> Genome {
    let layers = genome
        .layers()
        .iter()
        .enumerate()
        .map(|(i, g)| g.with_out_ch(schedule.width_at(i)))
        .collect();
    Genome::chained(schedule.stem_width(), layers).expect("schedule_channels needs a non-empty genome")
}
