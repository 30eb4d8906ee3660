//! Chain-structured genome encoding.
//!
//! A genome is an ordered list of layer genes. Each gene names one of four
//! feature-extracting blocks together with its input and output channels.
//! Only inverted residual genes carry a stride and an expansion ratio; every
//! other kind stores `stride = 1, expand = 1` so that equality and digests
//! are well defined.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default upper bound on the number of layers in a genome.
pub const DEFAULT_MAX_DEPTH: usize = 16;

/// Expansion ratio assumed when a serialized inverted residual gene omits it.
pub const DEFAULT_INVR_EXPAND: u32 = 6;

/// The four block kinds of the search space.
///
/// The declaration order is the tie-break order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    /// Inverted residual.
    Invr,
    /// Residual.
    Res,
    /// Bottleneck.
    Bot,
    /// Basic 2x2 convolution followed by ReLU.
    CrLU,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::Invr, BlockKind::Res, BlockKind::Bot, BlockKind::CrLU];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Invr => "Invr",
            BlockKind::Res => "Res",
            BlockKind::Bot => "Bot",
            BlockKind::CrLU => "CrLU",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = GenomeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GenomeError::UnknownKind(s.to_string()))
    }
}

/// Gene field named by a [`GenomeError::BadRange`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneField {
    StemOut,
    In,
    Out,
    Stride,
    Expand,
}

impl fmt::Display for GeneField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneField::StemOut => "stem_out",
            GeneField::In => "in",
            GeneField::Out => "out",
            GeneField::Stride => "stride",
            GeneField::Expand => "expand",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenomeError {
    #[error("genome has no layers")]
    EmptyGenome,
    #[error("layer {index}: input channels do not match the previous output")]
    ChannelMismatch { index: usize },
    #[error("layer {index}: field `{field}` out of range")]
    BadRange { index: usize, field: GeneField },
    #[error("genome depth {len} exceeds the limit of {max}")]
    DepthExceeded { len: usize, max: usize },
    #[error("unknown block kind `{0}`")]
    UnknownKind(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

impl From<serde_json::Error> for GenomeError {
    fn from(err: serde_json::Error) -> Self {
        GenomeError::Parse { line: err.line(), column: err.column(), message: err.to_string() }
    }
}

/// One layer of a genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerGene {
    kind: BlockKind,
    in_ch: u32,
    out_ch: u32,
    stride: u32,
    expand: u32,
}

impl LayerGene {
    /// Builds a gene, normalizing stride and expand away on non-Invr kinds.
    ///
    /// Values are not range-checked here; [`Genome::validate`] reports them.
    pub fn new(kind: BlockKind, in_ch: u32, out_ch: u32, stride: u32, expand: u32) -> Self {
        let (stride, expand) = if kind == BlockKind::Invr { (stride, expand) } else { (1, 1) };
        LayerGene { kind, in_ch, out_ch, stride, expand }
    }

    /// An inverted residual gene.
    pub fn invr(in_ch: u32, out_ch: u32, stride: u32, expand: u32) -> Self {
        Self::new(BlockKind::Invr, in_ch, out_ch, stride, expand)
    }

    /// A gene of any kind with stride 1 and expand 1.
    pub fn plain(kind: BlockKind, in_ch: u32, out_ch: u32) -> Self {
        Self::new(kind, in_ch, out_ch, 1, 1)
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn in_ch(&self) -> u32 {
        self.in_ch
    }

    pub fn out_ch(&self) -> u32 {
        self.out_ch
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn expand(&self) -> u32 {
        self.expand
    }

    pub fn with_in_ch(mut self, in_ch: u32) -> Self {
        self.in_ch = in_ch;
        self
    }

    pub fn with_out_ch(mut self, out_ch: u32) -> Self {
        self.out_ch = out_ch;
        self
    }

    fn check_ranges(&self, index: usize) -> Result<(), GenomeError> {
        let bad = |field| Err(GenomeError::BadRange { index, field });
        if self.in_ch == 0 {
            return bad(GeneField::In);
        }
        if self.out_ch == 0 {
            return bad(GeneField::Out);
        }
        if !matches!(self.stride, 1 | 2) {
            return bad(GeneField::Stride);
        }
        if !matches!(self.expand, 1 | 6) {
            return bad(GeneField::Expand);
        }
        Ok(())
    }
}

/// An ordered chain of layer genes behind a fixed stem convolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "GenomeDoc", try_from = "GenomeDoc")]
pub struct Genome {
    stem_out: u32,
    layers: Vec<LayerGene>,
}

impl Genome {
    /// Assembles a genome without checking it.
    pub fn new(stem_out: u32, layers: Vec<LayerGene>) -> Self {
        Genome { stem_out, layers }
    }

    /// Assembles a genome and repairs its channel chain.
    pub fn chained(stem_out: u32, layers: Vec<LayerGene>) -> Result<Self, GenomeError> {
        Genome::new(stem_out, layers).repair_channels()
    }

    pub fn stem_out(&self) -> u32 {
        self.stem_out
    }

    pub fn layers(&self) -> &[LayerGene] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn kinds(&self) -> impl Iterator<Item = BlockKind> + '_ {
        self.layers.iter().map(|g| g.kind)
    }

    /// Ordered adjacent block pairs, in genome order.
    pub fn adjacent_pairs(&self) -> impl Iterator<Item = (BlockKind, BlockKind)> + '_ {
        self.layers.windows(2).map(|w| (w[0].kind, w[1].kind))
    }

    pub fn into_layers(self) -> Vec<LayerGene> {
        self.layers
    }

    /// Checks well-formedness, reporting the first violation.
    pub fn validate(&self, max_depth: usize) -> Result<(), GenomeError> {
        if self.layers.is_empty() {
            return Err(GenomeError::EmptyGenome);
        }
        if self.layers.len() > max_depth {
            return Err(GenomeError::DepthExceeded { len: self.layers.len(), max: max_depth });
        }
        if self.stem_out == 0 {
            return Err(GenomeError::BadRange { index: 0, field: GeneField::StemOut });
        }
        let mut prev_out = self.stem_out;
        for (index, gene) in self.layers.iter().enumerate() {
            gene.check_ranges(index)?;
            if gene.in_ch != prev_out {
                return Err(GenomeError::ChannelMismatch { index });
            }
            prev_out = gene.out_ch;
        }
        Ok(())
    }

    /// Rewrites every `in_ch` so the chain starts at `stem_out` and follows
    /// the previous layer's `out_ch`.
    pub fn repair_channels(mut self) -> Result<Self, GenomeError> {
        if self.layers.is_empty() {
            return Err(GenomeError::EmptyGenome);
        }
        let mut prev_out = self.stem_out;
        for gene in &mut self.layers {
            gene.in_ch = prev_out;
            prev_out = gene.out_ch;
        }
        Ok(self)
    }

    /// Drops trailing layers beyond `max_depth`.
    pub fn clamp_depth(mut self, max_depth: usize) -> Self {
        self.layers.truncate(max_depth.max(1));
        self
    }

    /// Content digest over the normalized genome.
    pub fn digest(&self) -> GenomeDigest {
        let mut hasher = Sha256::new();
        hasher.update(b"evocell-genome-v1");
        hasher.update(self.stem_out.to_le_bytes());
        hasher.update((self.layers.len() as u64).to_le_bytes());
        for gene in &self.layers {
            hasher.update([gene.kind.tag()]);
            hasher.update(gene.in_ch.to_le_bytes());
            hasher.update(gene.out_ch.to_le_bytes());
            hasher.update(gene.stride.to_le_bytes());
            hasher.update(gene.expand.to_le_bytes());
        }
        GenomeDigest(hasher.finalize().into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genome serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("genome serialization is infallible")
    }

    /// Parses a genome document and validates it against `max_depth`.
    pub fn parse(text: &str, max_depth: usize) -> Result<(Genome, ParseReport), GenomeError> {
        let doc: GenomeDoc = serde_json::from_str(text)?;
        let (genome, report) = doc.into_genome()?;
        genome.validate(max_depth)?;
        Ok((genome, report))
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stem({})", self.stem_out)?;
        for g in &self.layers {
            match g.kind {
                BlockKind::Invr => write!(f, " {}[{}->{} s{} e{}]", g.kind, g.in_ch, g.out_ch, g.stride, g.expand)?,
                _ => write!(f, " {}[{}->{}]", g.kind, g.in_ch, g.out_ch)?,
            }
        }
        Ok(())
    }
}

/// Fields filled in or normalized while parsing a genome document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub defaulted: Vec<(usize, GeneField)>,
    pub normalized: Vec<(usize, GeneField)>,
}

impl ParseReport {
    pub fn is_clean(&self) -> bool {
        self.defaulted.is_empty() && self.normalized.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneDoc {
    kind: BlockKind,
    #[serde(rename = "in")]
    in_ch: u32,
    #[serde(rename = "out")]
    out_ch: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expand: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenomeDoc {
    stem_out: u32,
    layers: Vec<GeneDoc>,
}

impl GenomeDoc {
    fn into_genome(self) -> Result<(Genome, ParseReport), GenomeError> {
        let mut report = ParseReport::default();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (index, doc) in self.layers.into_iter().enumerate() {
            let (stride, expand) = if doc.kind == BlockKind::Invr {
                let stride = doc.stride.unwrap_or_else(|| {
                    report.defaulted.push((index, GeneField::Stride));
                    1
                });
                let expand = doc.expand.unwrap_or_else(|| {
                    report.defaulted.push((index, GeneField::Expand));
                    DEFAULT_INVR_EXPAND
                });
                (stride, expand)
            } else {
                if doc.stride.is_some_and(|s| s != 1) {
                    report.normalized.push((index, GeneField::Stride));
                }
                if doc.expand.is_some_and(|e| e != 1) {
                    report.normalized.push((index, GeneField::Expand));
                }
                (1, 1)
            };
            layers.push(LayerGene::new(doc.kind, doc.in_ch, doc.out_ch, stride, expand));
        }
        let genome = Genome { stem_out: self.stem_out, layers };
        genome.validate(usize::MAX)?;
        Ok((genome, report))
    }
}

impl From<Genome> for GenomeDoc {
    fn from(g: Genome) -> Self {
        GenomeDoc {
            stem_out: g.stem_out,
            layers: g
                .layers
                .into_iter()
                .map(|l| GeneDoc {
                    kind: l.kind,
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    stride: Some(l.stride),
                    expand: Some(l.expand),
                })
                .collect(),
        }
    }
}

impl TryFrom<GenomeDoc> for Genome {
    type Error = GenomeError;

    fn try_from(doc: GenomeDoc) -> Result<Self, Self::Error> {
        doc.into_genome().map(|(g, _)| g)
    }
}

/// SHA-256 content digest of a normalized genome.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenomeDigest([u8; 32]);

impl GenomeDigest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First `n` hex characters, for display.
    pub fn short(&self, n: usize) -> String {
        let mut s = self.to_hex();
        s.truncate(n);
        s
    }
}

impl fmt::Debug for GenomeDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GenomeDigest({})", self.short(12))
    }
}

impl fmt::Display for GenomeDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid genome digest `{0}`")]
pub struct BadDigest(pub String);

impl FromStr for GenomeDigest {
    type Err = BadDigest;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).map_err(|_| BadDigest(s.to_string()))?;
        Ok(GenomeDigest(bytes))
    }
}

impl Serialize for GenomeDigest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for GenomeDigest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The seven-block inverted residual genome of the reference architecture:
/// channels 16 through 1280, expands 1,1,1,6,6,6,6, all strides 1.
pub fn reference_genome() -> Genome {
    let outs = [24, 32, 64, 96, 160, 320, 1280];
    let expands = [1, 1, 1, 6, 6, 6, 6];
    let layers = outs
        .iter()
        .zip(expands)
        .map(|(&out, expand)| LayerGene::invr(0, out, 1, expand))
        .collect();
    Genome::chained(16, layers).expect("fixture is non-empty")
}
