use serde::{Deserialize, Serialize};

use crate::supernet::OperatorKind;

/// Bytes per tensor element (16-bit fixed point).
pub const BYTES_PER_ELEM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOp {
    /// Dense `k×k` convolution.
    Conv,
    /// Depthwise `k×k` then pointwise `1×1`.
    DwSep,
    /// Identity; moves data but does no arithmetic.
    Skip,
    /// Fully connected, modelled as a `1×1` convolution on a `1×1` map.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NestKind {
    Conv,
    Depthwise,
    Copy,
}

/// One perfectly nested convolution loop:
/// `for k, c, h, w, r, s: out[k,h,w] += in[c,h+r,w+s] · wt[k,c,r,s]`.
/// Depthwise nests have `k == c` and no reduction over `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LoopNest {
    pub kind: NestKind,
    pub c: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    /// Square kernel side.
    pub r: usize,
}

impl LoopNest {
    pub fn macs(&self) -> u64 {
        let hw = (self.h * self.w) as u64;
        let rr = (self.r * self.r) as u64;
        match self.kind {
            NestKind::Conv => hw * (self.c * self.k) as u64 * rr,
            NestKind::Depthwise => hw * self.c as u64 * rr,
            NestKind::Copy => 0,
        }
    }

    pub fn input_elems(&self) -> u64 {
        (self.c * self.h * self.w) as u64
    }

    pub fn weight_elems(&self) -> u64 {
        let rr = (self.r * self.r) as u64;
        match self.kind {
            NestKind::Conv => (self.c * self.k) as u64 * rr,
            NestKind::Depthwise => self.c as u64 * rr,
            NestKind::Copy => 0,
        }
    }

    pub fn output_elems(&self) -> u64 {
        (self.k * self.h * self.w) as u64
    }
}

/// A network layer as the cost model sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub op: LayerOp,
    /// `[C, H, W]`
    pub input: [usize; 3],
    /// `[K, H, W]`
    pub output: [usize; 3],
    pub kernel: usize,
    pub macs: u64,
    pub input_bytes: u64,
    pub weight_bytes: u64,
    pub output_bytes: u64,
}

impl LayerDesc {
    fn build(name: impl Into<String>, op: LayerOp, input: [usize; 3], output: [usize; 3], kernel: usize) -> Self {
        let mut d = LayerDesc {
            name: name.into(),
            op,
            input,
            output,
            kernel,
            macs: 0,
            input_bytes: 0,
            weight_bytes: 0,
            output_bytes: 0,
        };
        let nests = d.nests();
        d.macs = nests.iter().map(LoopNest::macs).sum();
        d.input_bytes = BYTES_PER_ELEM * nests[0].input_elems();
        d.weight_bytes = BYTES_PER_ELEM * nests.iter().map(LoopNest::weight_elems).sum::<u64>();
        d.output_bytes = BYTES_PER_ELEM * nests[nests.len() - 1].output_elems();
        d
    }

    /// Same-padded stride-1 convolution.
    pub fn conv(name: impl Into<String>, c: usize, k: usize, h: usize, w: usize, kernel: usize) -> Self {
        Self::build(name, LayerOp::Conv, [c, h, w], [k, h, w], kernel)
    }

    pub fn dense(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self::build(name, LayerOp::Dense, [inputs, 1, 1], [outputs, 1, 1], 1)
    }

    /// A searchable-cell operator at `c` channels on an `h×w` map.
    pub fn operator(name: impl Into<String>, kind: OperatorKind, c: usize, h: usize, w: usize) -> Self {
        let op = match kind {
            OperatorKind::ConvK3 | OperatorKind::ConvK5 => LayerOp::Conv,
            OperatorKind::DwsepK3 | OperatorKind::DwsepK5 => LayerOp::DwSep,
            OperatorKind::Skip => LayerOp::Skip,
        };
        Self::build(name, op, [c, h, w], [c, h, w], kind.kernel())
    }

    pub fn nests(&self) -> Vec<LoopNest> {
        let [c, h, w] = self.input;
        let k = self.output[0];
        let nest = |kind, c, k, r| LoopNest { kind, c, k, h, w, r };
        match self.op {
            LayerOp::Conv | LayerOp::Dense => vec![nest(NestKind::Conv, c, k, self.kernel)],
            LayerOp::DwSep => vec![nest(NestKind::Depthwise, c, c, self.kernel), nest(NestKind::Conv, c, k, 1)],
            LayerOp::Skip => vec![nest(NestKind::Copy, c, c, 0)],
        }
    }

    /// Checks the stored MAC and byte counts against the dimensions.
    pub fn check_consistency(&self) -> Result<(), String> {
        let fresh = Self::build(self.name.clone(), self.op, self.input, self.output, self.kernel);
        if fresh != *self {
            return Err(format!(
                "layer {}: stored counts (macs {}, bytes {}/{}/{}) disagree with its dimensions (macs {}, bytes {}/{}/{})",
                self.name,
                self.macs,
                self.input_bytes,
                self.weight_bytes,
                self.output_bytes,
                fresh.macs,
                fresh.input_bytes,
                fresh.weight_bytes,
                fresh.output_bytes
            ));
        }
        if matches!(self.op, LayerOp::DwSep | LayerOp::Skip) && self.input[0] != self.output[0] {
            return Err(format!("layer {}: {:?} must keep the channel count", self.name, self.op));
        }
        if self.input[1..] != self.output[1..] {
            return Err(format!("layer {}: spatial size changes from {:?} to {:?}", self.name, self.input, self.output));
        }
        Ok(())
    }
}
