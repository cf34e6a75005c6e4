//! Roofline latency model.
//!
//! Each loop nest costs `max(compute, memory)` cycles. Compute spreads two
//! tile dimensions over the PE array (chosen by the interconnect) and runs
//! the rest sequentially. Memory counts off-chip traffic implied by the loop
//! order's reuse pattern, divided by bandwidth.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{tile_size, AcceleratorConfig, ChunkConfig, Interconnect, LoopOrder, ResourceBudget};
use super::layer::{LayerDesc, LoopNest, NestKind, BYTES_PER_ELEM};

/// Cycles charged for a layer that cannot run on its chunk.
pub const INFEASIBLE_PENALTY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Input,
    Weight,
    Output,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Infeasible {
    #[error("{operand:?} tile needs {needed} bytes but its buffer partition holds {available:.0}")]
    TileOverflow { operand: Operand, needed: u64, available: f64 },
    #[error("chunk has an empty PE array")]
    EmptyArray,
    #[error("bandwidth must be positive")]
    NoBandwidth,
}

/// `⌈macs / (pes · utilization)⌉`
pub fn compute_cycles(macs: u64, pes: usize, utilization: f64) -> f64 {
    (macs as f64 / (pes as f64 * utilization)).ceil()
}

/// `⌈bytes / bandwidth⌉`
pub fn memory_cycles(bytes: u64, bandwidth: f64) -> f64 {
    (bytes as f64 / bandwidth).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestCost {
    pub compute: f64,
    pub memory: f64,
    /// Busy PEs over array size during a full pass.
    pub utilization: f64,
}

impl NestCost {
    pub fn cycles(&self) -> f64 {
        self.compute.max(self.memory)
    }
}

struct Tiles {
    tc: usize,
    tk: usize,
    th: usize,
    tw: usize,
}

fn tiles(nest: &LoopNest, chunk: &ChunkConfig) -> Tiles {
    let t = &chunk.tiling;
    let tc = tile_size(nest.c, t.tc);
    let tk = match nest.kind {
        NestKind::Conv => tile_size(nest.k, t.tk),
        NestKind::Depthwise | NestKind::Copy => tc,
    };
    Tiles { tc, tk, th: tile_size(nest.h, t.th), tw: tile_size(nest.w, t.tw) }
}

fn check_fit(nest: &LoopNest, chunk: &ChunkConfig, t: &Tiles) -> Result<(), Infeasible> {
    let halo = nest.r.saturating_sub(1);
    let rr = nest.r * nest.r;
    let input = t.tc * (t.th + halo) * (t.tw + halo);
    let (weight, output) = match nest.kind {
        NestKind::Conv => (t.tk * t.tc * rr, t.tk * t.th * t.tw),
        NestKind::Depthwise => (t.tc * rr, t.tc * t.th * t.tw),
        NestKind::Copy => (0, t.tc * t.th * t.tw),
    };
    let parts = chunk.partitions();
    for (operand, elems, avail) in [
        (Operand::Input, input, parts[0]),
        (Operand::Weight, weight, parts[1]),
        (Operand::Output, output, parts[2]),
    ] {
        let needed = elems as u64 * BYTES_PER_ELEM;
        if needed as f64 > avail {
            return Err(Infeasible::TileOverflow { operand, needed, available: avail });
        }
    }
    Ok(())
}

/// Cost of one loop nest on `chunk`.
pub fn nest_cost(nest: &LoopNest, chunk: &ChunkConfig, bandwidth: f64) -> Result<NestCost, Infeasible> {
    if chunk.pe_rows == 0 || chunk.pe_cols == 0 {
        return Err(Infeasible::EmptyArray);
    }
    if !(bandwidth > 0.0) {
        return Err(Infeasible::NoBandwidth);
    }
    let t = tiles(nest, chunk);
    check_fit(nest, chunk, &t)?;

    let n_c = nest.c / t.tc;
    let n_k = nest.k / t.tk;
    let n_s = (nest.h / t.th) * (nest.w / t.tw);
    let (i, w, o) = (nest.input_elems(), nest.weight_elems(), nest.output_elems());
    let (n_c, n_k, n_s) = (n_c as u64, n_k as u64, n_s as u64);
    let traffic = match (nest.kind, chunk.loop_order) {
        (NestKind::Copy, _) => i + o,
        (NestKind::Depthwise, LoopOrder::WeightReuse) => w + i + o,
        (NestKind::Depthwise, _) => i + o + w * n_s,
        (NestKind::Conv, LoopOrder::WeightReuse) => w + i * n_k + o * (2 * n_c - 1),
        (NestKind::Conv, LoopOrder::InputReuse) => i + w * n_s + o * (2 * n_c - 1),
        (NestKind::Conv, LoopOrder::OutputReuse) => o + i * n_k + w * n_s,
    };
    let memory = memory_cycles(traffic * BYTES_PER_ELEM, bandwidth);

    if nest.kind == NestKind::Copy {
        return Ok(NestCost { compute: 0.0, memory, utilization: 0.0 });
    }
    // Reduction and output-channel extents of one tile.
    let (red, outch) = match nest.kind {
        NestKind::Conv => (t.tc, t.tk),
        _ => (1, t.tc),
    };
    let (a, b) = match chunk.interconnect {
        Interconnect::WeightStationary => (red, outch),
        Interconnect::OutputStationary => (t.th, t.tw),
        Interconnect::RowStationary => (outch, t.th),
    };
    let tile_macs = (red * outch * t.th * t.tw * nest.r * nest.r) as u64;
    let passes = (a.div_ceil(chunk.pe_rows) * b.div_ceil(chunk.pe_cols)) as u64;
    let per_tile = passes * (tile_macs / (a * b) as u64);
    let n_tiles = match nest.kind {
        NestKind::Conv => n_c * n_k * n_s,
        _ => n_c * n_s,
    };
    let active = a.min(chunk.pe_rows) * b.min(chunk.pe_cols);
    Ok(NestCost {
        compute: (n_tiles * per_tile) as f64,
        memory,
        utilization: active as f64 / chunk.pe_count() as f64,
    })
}

/// Cycles for `layer` on `chunk`: the sum of its nests' roofline costs.
pub fn layer_latency(layer: &LayerDesc, chunk: &ChunkConfig, bandwidth: f64) -> Result<f64, Infeasible> {
    layer.nests().iter().try_fold(0.0, |acc, n| Ok(acc + nest_cost(n, chunk, bandwidth)?.cycles()))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AccelError {
    #[error("accelerator has no chunks")]
    NoChunks,
    #[error("assignment covers {got} layers, network has {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("layer {layer} assigned to chunk {chunk}, but there are only {n_chunks}")]
    AssignmentRange { layer: usize, chunk: usize, n_chunks: usize },
}

/// Steady-state pipeline cost of a network on an accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layer_cycles: Vec<f64>,
    pub chunk_cycles: Vec<f64>,
    pub bottleneck: usize,
    pub bottleneck_cycles: f64,
    /// Sum over all layers.
    pub total_cycles: f64,
    pub fps: f64,
    pub buffer_bytes: u64,
    pub pe_count: usize,
    /// `layer index: reason` for every layer charged the penalty.
    pub infeasible: Vec<String>,
}

impl CostReport {
    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_empty()
    }
}

fn check_assignment(n_layers: usize, cfg: &AcceleratorConfig) -> Result<(), AccelError> {
    if cfg.chunks.is_empty() {
        return Err(AccelError::NoChunks);
    }
    if cfg.assignment.len() != n_layers {
        return Err(AccelError::AssignmentLength { expected: n_layers, got: cfg.assignment.len() });
    }
    if let Some((layer, &chunk)) = cfg.assignment.iter().enumerate().find(|(_, &c)| c >= cfg.chunks.len()) {
        return Err(AccelError::AssignmentRange { layer, chunk, n_chunks: cfg.chunks.len() });
    }
    Ok(())
}

/// Per-layer cycles, per-chunk sums and `FPS = clock / max chunk cycles`.
/// Layers that cannot run cost [`INFEASIBLE_PENALTY`].
pub fn pipeline_cost(net: &[LayerDesc], cfg: &AcceleratorConfig) -> Result<CostReport, AccelError> {
    check_assignment(net.len(), cfg)?;
    let mut layer_cycles = Vec::with_capacity(net.len());
    let mut chunk_cycles = vec![0.0; cfg.chunks.len()];
    let mut infeasible = Vec::new();
    for (l, layer) in net.iter().enumerate() {
        let c = cfg.assignment[l];
        let cycles = match layer_latency(layer, &cfg.chunks[c], cfg.bandwidth) {
            Ok(v) => v,
            Err(e) => {
                infeasible.push(format!("{l}: {e}"));
                INFEASIBLE_PENALTY
            }
        };
        layer_cycles.push(cycles);
        chunk_cycles[c] += cycles;
    }
    let mut bottleneck = 0;
    for (i, &v) in chunk_cycles.iter().enumerate() {
        if v > chunk_cycles[bottleneck] {
            bottleneck = i;
        }
    }
    let bottleneck_cycles = chunk_cycles[bottleneck];
    Ok(CostReport {
        total_cycles: layer_cycles.iter().sum(),
        layer_cycles,
        bottleneck,
        bottleneck_cycles,
        fps: cfg.clock_hz / bottleneck_cycles,
        buffer_bytes: cfg.buffer_total(),
        pe_count: cfg.pe_total(),
        chunk_cycles,
        infeasible,
    })
}

/// `table[l][i]`: cycles candidate `i` of layer `l` would take on the chunk
/// that `cfg` assigns layer `l` to, or [`INFEASIBLE_PENALTY`].
pub fn layer_cost_table(candidates: &[Vec<LayerDesc>], cfg: &AcceleratorConfig) -> Result<Vec<Vec<f64>>, AccelError> {
    check_assignment(candidates.len(), cfg)?;
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(l, ops)| {
            let chunk = &cfg.chunks[cfg.assignment[l]];
            ops.iter()
                .map(|d| layer_latency(d, chunk, cfg.bandwidth).unwrap_or(INFEASIBLE_PENALTY))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Structure(AccelError),
    BufferSplit { chunk: usize, sum: f64 },
    PeBudget { used: usize, max: usize },
    SramBudget { used: u64, max: u64 },
    Tiling { layer: usize, chunk: usize, reason: Infeasible },
    Layer(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure(e) => write!(f, "structure: {e}"),
            Violation::BufferSplit { chunk, sum } => {
                write!(f, "buffer_split: chunk {chunk} fractions sum to {sum}, expected 1 with each positive")
            }
            Violation::PeBudget { used, max } => write!(f, "pe_max: {used} PEs exceed the budget of {max}"),
            Violation::SramBudget { used, max } => write!(f, "sram_max: {used} buffer bytes exceed the budget of {max}"),
            Violation::Tiling { layer, chunk, reason } => write!(f, "tiling: layer {layer} on chunk {chunk}: {reason}"),
            Violation::Layer(m) => write!(f, "layer: {m}"),
        }
    }
}

/// Structural, budget and tiling checks; returns every violation found.
pub fn validate(cfg: &AcceleratorConfig, net: &[LayerDesc], budget: &ResourceBudget) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if let Err(e) = check_assignment(net.len(), cfg) {
        v.push(Violation::Structure(e));
    }
    for (i, c) in cfg.chunks.iter().enumerate() {
        if !c.split.is_valid() {
            v.push(Violation::BufferSplit { chunk: i, sum: c.split.sum() });
        }
    }
    if cfg.pe_total() > budget.pe_max {
        v.push(Violation::PeBudget { used: cfg.pe_total(), max: budget.pe_max });
    }
    if cfg.buffer_total() > budget.sram_max {
        v.push(Violation::SramBudget { used: cfg.buffer_total(), max: budget.sram_max });
    }
    for (l, layer) in net.iter().enumerate() {
        if let Err(m) = layer.check_consistency() {
            v.push(Violation::Layer(m));
        }
        let Some(&chunk) = cfg.assignment.get(l) else { continue };
        let Some(c) = cfg.chunks.get(chunk) else { continue };
        for nest in layer.nests() {
            if let Err(reason) = nest_cost(&nest, c, cfg.bandwidth) {
                v.push(Violation::Tiling { layer: l, chunk, reason });
                break;
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::{BufferSplit, Tiling};

    fn chunk(rows: usize, cols: usize, ic: Interconnect, order: LoopOrder) -> ChunkConfig {
        ChunkConfig {
            pe_rows: rows,
            pe_cols: cols,
            interconnect: ic,
            buffer_bytes: 256 * 1024,
            split: BufferSplit::new(0.4, 0.4, 0.2),
            tiling: Tiling { tc: 16, tk: 16, th: 8, tw: 8 },
            loop_order: order,
        }
    }

    #[test]
    fn compute_cycles_example() {
        assert_eq!(compute_cycles(1000, 10, 1.0), 100.0);
    }

    #[test]
    fn memory_bound_layer_costs_bytes_over_bandwidth() {
        // Skip moves input and output once and does no arithmetic.
        let d = LayerDesc::operator("s", crate::supernet::OperatorKind::Skip, 8, 8, 8);
        let c = chunk(4, 4, Interconnect::WeightStationary, LoopOrder::WeightReuse);
        assert_eq!(layer_latency(&d, &c, 4.0).unwrap(), (2 * 2 * 512) as f64 / 4.0);
    }

    #[test]
    fn hand_computed_weight_stationary_conv() {
        // c=k=16, 8x8, 3x3; tiles cover everything: one tile, a=b=16.
        let d = LayerDesc::conv("c", 16, 16, 8, 8, 3);
        let c8 = chunk(8, 8, Interconnect::WeightStationary, LoopOrder::WeightReuse);
        let cost = nest_cost(&d.nests()[0], &c8, 1e9).unwrap();
        // 4 passes of 64·9 cycles.
        assert_eq!(cost.compute, 4.0 * 576.0);
        assert_eq!(cost.compute, compute_cycles(d.macs, 64, 1.0));
        let c16 = chunk(16, 16, Interconnect::WeightStationary, LoopOrder::WeightReuse);
        assert_eq!(nest_cost(&d.nests()[0], &c16, 1e9).unwrap().compute, 576.0);
    }

    #[test]
    fn pipeline_fps_from_chunk_latencies() {
        let net = vec![LayerDesc::conv("a", 8, 8, 8, 8, 3), LayerDesc::conv("b", 8, 8, 8, 8, 3)];
        let c = chunk(8, 8, Interconnect::OutputStationary, LoopOrder::OutputReuse);
        let one = AcceleratorConfig { chunks: vec![c], assignment: vec![0, 0], clock_hz: 1e6, bandwidth: 64.0 };
        let two = AcceleratorConfig { chunks: vec![c, c], assignment: vec![0, 1], ..one.clone() };
        let r1 = pipeline_cost(&net, &one).unwrap();
        let r2 = pipeline_cost(&net, &two).unwrap();
        assert_eq!(r1.fps, 1e6 / r1.layer_cycles.iter().sum::<f64>());
        assert!(r2.fps > r1.fps);
        assert_eq!(r2.fps, 1e6 / r2.chunk_cycles.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn validate_reports_named_violations() {
        let c = chunk(16, 16, Interconnect::RowStationary, LoopOrder::InputReuse);
        let mut cfg = AcceleratorConfig { chunks: vec![c, c, c], assignment: vec![], clock_hz: 2e8, bandwidth: 16.0 };
        assert!(validate(&cfg, &[], &ResourceBudget { pe_max: 1024, sram_max: 1 << 30 }).is_ok());
        cfg.chunks[0].split = BufferSplit::new(0.5, 0.5, 0.5);
        let errs = validate(&cfg, &[], &ResourceBudget { pe_max: 512, sram_max: 1 << 30 }).unwrap_err();
        let text: Vec<String> = errs.iter().map(ToString::to_string).collect();
        assert!(text.iter().any(|t| t.starts_with("buffer_split")));
        assert!(text.iter().any(|t| t.starts_with("pe_max")));
    }

    #[test]
    fn oversized_tiles_are_infeasible() {
        let d = LayerDesc::conv("big", 64, 64, 8, 8, 5);
        let mut c = chunk(8, 8, Interconnect::WeightStationary, LoopOrder::WeightReuse);
        c.buffer_bytes = 1024;
        c.tiling = Tiling { tc: 64, tk: 64, th: 8, tw: 8 };
        assert!(matches!(layer_latency(&d, &c, 16.0), Err(Infeasible::TileOverflow { .. })));
        let cfg = AcceleratorConfig { chunks: vec![c], assignment: vec![0], clock_hz: 2e8, bandwidth: 16.0 };
        let r = pipeline_cost(&[d], &cfg).unwrap();
        assert!(!r.is_feasible());
        assert_eq!(r.layer_cycles[0], INFEASIBLE_PENALTY);
    }
}
