use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ACCEL_FORMAT: &str = "coaccel-accel";
pub const ACCEL_VERSION: u32 = 1;

/// Which pair of tile dimensions is spread over the PE rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interconnect {
    /// Input channels × output channels.
    WeightStationary,
    /// Output rows × output columns.
    OutputStationary,
    /// Output channels × output rows.
    RowStationary,
}

/// Which operand stays resident in the on-chip buffer across the outer
/// tile loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopOrder {
    InputReuse,
    WeightReuse,
    OutputReuse,
}

/// Fractions of a chunk's buffer given to inputs, weights and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferSplit {
    pub input: f64,
    pub weight: f64,
    pub output: f64,
}

impl BufferSplit {
    pub const fn new(input: f64, weight: f64, output: f64) -> Self {
        BufferSplit { input, weight, output }
    }

    pub fn sum(&self) -> f64 {
        self.input + self.weight + self.output
    }

    pub fn is_valid(&self) -> bool {
        [self.input, self.weight, self.output].iter().all(|f| *f > 0.0 && f.is_finite())
            && (self.sum() - 1.0).abs() < 1e-9
    }
}

impl fmt::Display for BufferSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.input, self.weight, self.output)
    }
}

/// Upper bounds on the tile size along each loop dimension. The tile used
/// for a layer is the largest divisor of the dimension within the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tiling {
    pub tc: usize,
    pub tk: usize,
    pub th: usize,
    pub tw: usize,
}

/// Largest divisor of `dim` that is at most `cap` (and at least 1).
pub fn tile_size(dim: usize, cap: usize) -> usize {
    let cap = cap.clamp(1, dim.max(1));
    (1..=cap).rev().find(|&t| dim.is_multiple_of(t)).unwrap_or(1)
}

/// One sub-accelerator of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub pe_rows: usize,
    pub pe_cols: usize,
    pub interconnect: Interconnect,
    pub buffer_bytes: u64,
    pub split: BufferSplit,
    pub tiling: Tiling,
    pub loop_order: LoopOrder,
}

impl ChunkConfig {
    pub fn pe_count(&self) -> usize {
        self.pe_rows * self.pe_cols
    }

    /// Bytes of the input, weight and output partitions.
    pub fn partitions(&self) -> [f64; 3] {
        let b = self.buffer_bytes as f64;
        [b * self.split.input, b * self.split.weight, b * self.split.output]
    }
}

/// Chunk-based pipelined accelerator: chunks run concurrently on successive
/// frames, each executing its assigned layers one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub chunks: Vec<ChunkConfig>,
    /// Chunk index per layer.
    pub assignment: Vec<usize>,
    pub clock_hz: f64,
    /// Off-chip bytes per cycle, per chunk.
    pub bandwidth: f64,
}

pub const DEFAULT_CLOCK_HZ: f64 = 200e6;
pub const DEFAULT_BANDWIDTH: f64 = 64.0;

impl AcceleratorConfig {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn pe_total(&self) -> usize {
        self.chunks.iter().map(ChunkConfig::pe_count).sum()
    }

    pub fn buffer_total(&self) -> u64 {
        self.chunks.iter().map(|c| c.buffer_bytes).sum()
    }

    /// Checks that do not depend on the network: chunk count, assignment
    /// range, splits and rates.
    pub fn check_structure(&self) -> Result<(), String> {
        if self.chunks.is_empty() {
            return Err("no chunks".into());
        }
        if let Some((l, &c)) = self.assignment.iter().enumerate().find(|(_, &c)| c >= self.chunks.len()) {
            return Err(format!("layer {l} assigned to chunk {c}, only {} chunks", self.chunks.len()));
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if c.pe_count() == 0 || c.buffer_bytes == 0 {
                return Err(format!("chunk {i} has an empty PE array or buffer"));
            }
            if !c.split.is_valid() {
                return Err(format!("chunk {i} buffer split {} must be positive and sum to 1", c.split));
            }
        }
        if !(self.clock_hz > 0.0 && self.bandwidth > 0.0) {
            return Err("clock_hz and bandwidth must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let file = AccelFile { format: ACCEL_FORMAT.into(), version: ACCEL_VERSION, accel: self.clone() };
        toml::to_string(&file).expect("accelerator config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let file: AccelFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format != ACCEL_FORMAT {
            return Err(format!("format is `{}`, expected `{ACCEL_FORMAT}`", file.format));
        }
        if file.version != ACCEL_VERSION {
            return Err(format!("unsupported version {}", file.version));
        }
        file.accel.check_structure()?;
        Ok(file.accel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|r| Error::format(path, r))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccelFile {
    format: String,
    version: u32,
    accel: AcceleratorConfig,
}

/// Hardware ceilings a configuration must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub pe_max: usize,
    pub sram_max: u64,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        ResourceBudget { pe_max: 512, sram_max: 512 * 1024 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_is_largest_divisor_under_cap() {
        assert_eq!(tile_size(12, 8), 6);
        assert_eq!(tile_size(8, 8), 8);
        assert_eq!(tile_size(7, 4), 1);
        assert_eq!(tile_size(5, 100), 5);
        assert_eq!(tile_size(1, 0), 1);
    }

    #[test]
    fn split_validity() {
        assert!(BufferSplit::new(0.5, 0.25, 0.25).is_valid());
        assert!(!BufferSplit::new(0.5, 0.5, 0.5).is_valid());
        assert!(!BufferSplit::new(1.0, 0.0, 0.0).is_valid());
    }

    #[test]
    fn accel_file_round_trips() {
        let chunk = ChunkConfig {
            pe_rows: 8,
            pe_cols: 4,
            interconnect: Interconnect::RowStationary,
            buffer_bytes: 65536,
            split: BufferSplit::new(0.5, 0.25, 0.25),
            tiling: Tiling { tc: 8, tk: 16, th: 4, tw: 4 },
            loop_order: LoopOrder::OutputReuse,
        };
        let cfg = AcceleratorConfig { chunks: vec![chunk; 2], assignment: vec![0, 1, 1], clock_hz: 2e8, bandwidth: 64.0 };
        let text = cfg.to_toml();
        assert!(text.starts_with("format = \"coaccel-accel\""));
        assert_eq!(AcceleratorConfig::from_toml(&text).unwrap(), cfg);
        let bad = text.replace("assignment = [0, 1, 1]", "assignment = [0, 2, 1]");
        assert!(AcceleratorConfig::from_toml(&bad).unwrap_err().contains("layer 1"));
    }
}
