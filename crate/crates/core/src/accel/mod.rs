//! Chunk-based pipelined accelerator template and its analytical cost model.

mod config;
mod layer;
mod menus;
mod model;

pub use config::{
    tile_size, AcceleratorConfig, ACCEL_FORMAT, ACCEL_VERSION, BufferSplit, ChunkConfig, Interconnect, LoopOrder, ResourceBudget, Tiling,
    DEFAULT_BANDWIDTH, DEFAULT_CLOCK_HZ,
};
pub use layer::{LayerDesc, LayerOp, LoopNest, NestKind, BYTES_PER_ELEM};
pub use menus::{default_splits, Menus, CHUNK_PARAMS};
pub use model::{
    compute_cycles, layer_cost_table, layer_latency, memory_cycles, nest_cost, pipeline_cost, validate, AccelError,
    CostReport, Infeasible, NestCost, Operand, Violation, INFEASIBLE_PENALTY,
};
