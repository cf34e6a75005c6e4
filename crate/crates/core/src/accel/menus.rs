use serde::{Deserialize, Serialize};

use super::config::{
    AcceleratorConfig, BufferSplit, ChunkConfig, Interconnect, LoopOrder, ResourceBudget, Tiling, DEFAULT_BANDWIDTH,
    DEFAULT_CLOCK_HZ,
};

/// Per-chunk parameters, in the order they appear in a choice vector.
pub const CHUNK_PARAMS: [&str; 7] = ["pe_rows", "pe_cols", "interconnect", "buffer", "split", "tiling", "loop_order"];

/// Discrete choices for every accelerator design parameter.
///
/// A configuration is a choice vector laid out as
/// `[n_chunks, slot0 params.., slot1 params.., .., layer0 chunk, ..]` with
/// one slot per possible chunk. Layer `l` runs on chunk
/// `choice % n_chunks`, so every vector decodes to a structurally valid
/// config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Menus {
    pub n_chunks: Vec<usize>,
    pub pe_rows: Vec<usize>,
    pub pe_cols: Vec<usize>,
    pub interconnect: Vec<Interconnect>,
    pub buffer_bytes: Vec<u64>,
    pub split: Vec<BufferSplit>,
    pub tiling: Vec<Tiling>,
    pub loop_order: Vec<LoopOrder>,
    #[serde(default = "default_clock")]
    pub clock_hz: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub budget: ResourceBudget,
}

fn default_clock() -> f64 {
    DEFAULT_CLOCK_HZ
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH
}

pub fn default_splits() -> Vec<BufferSplit> {
    vec![
        BufferSplit::new(0.5, 0.25, 0.25),
        BufferSplit::new(0.25, 0.5, 0.25),
        BufferSplit::new(0.25, 0.25, 0.5),
        BufferSplit::new(0.4, 0.4, 0.2),
        BufferSplit::new(0.4, 0.2, 0.4),
        BufferSplit::new(0.2, 0.4, 0.4),
    ]
}

impl Default for Menus {
    fn default() -> Self {
        let mut tiling = Vec::new();
        for tc in [8, 16, 32] {
            for tk in [8, 16, 32] {
                for s in [4, 8] {
                    tiling.push(Tiling { tc, tk, th: s, tw: s });
                }
            }
        }
        Menus {
            n_chunks: vec![1, 2, 3],
            pe_rows: vec![4, 8, 16],
            pe_cols: vec![4, 8, 16],
            interconnect: vec![Interconnect::WeightStationary, Interconnect::OutputStationary, Interconnect::RowStationary],
            buffer_bytes: vec![64 << 10, 128 << 10, 256 << 10],
            split: default_splits(),
            tiling,
            loop_order: vec![LoopOrder::InputReuse, LoopOrder::WeightReuse, LoopOrder::OutputReuse],
            clock_hz: DEFAULT_CLOCK_HZ,
            bandwidth: DEFAULT_BANDWIDTH,
            budget: ResourceBudget::default(),
        }
    }
}

impl Menus {
    /// 2304 configurations on a 3-layer net; small enough to enumerate.
    pub fn tiny() -> Self {
        Menus {
            n_chunks: vec![1, 2],
            pe_rows: vec![4, 8, 16],
            pe_cols: vec![8],
            interconnect: vec![Interconnect::WeightStationary],
            buffer_bytes: vec![64 << 10, 128 << 10],
            split: vec![BufferSplit::new(0.4, 0.4, 0.2)],
            tiling: vec![Tiling { tc: 16, tk: 16, th: 8, tw: 8 }],
            loop_order: vec![LoopOrder::WeightReuse, LoopOrder::OutputReuse],
            ..Menus::default()
        }
    }

    pub fn max_chunks(&self) -> usize {
        self.n_chunks.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("n_chunks", self.n_chunks.len()),
            ("pe_rows", self.pe_rows.len()),
            ("pe_cols", self.pe_cols.len()),
            ("interconnect", self.interconnect.len()),
            ("buffer_bytes", self.buffer_bytes.len()),
            ("split", self.split.len()),
            ("tiling", self.tiling.len()),
            ("loop_order", self.loop_order.len()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(format!("menu `{name}` is empty"));
        }
        if self.n_chunks.contains(&0) {
            return Err("menu `n_chunks` contains 0".into());
        }
        if self.pe_rows.contains(&0) || self.pe_cols.contains(&0) {
            return Err("PE dimensions must be positive".into());
        }
        if let Some(s) = self.split.iter().find(|s| !s.is_valid()) {
            return Err(format!("buffer split {s} must be positive and sum to 1"));
        }
        if self.tiling.iter().any(|t| t.tc == 0 || t.tk == 0 || t.th == 0 || t.tw == 0) {
            return Err("tile bounds must be positive".into());
        }
        if !(self.clock_hz > 0.0 && self.bandwidth > 0.0) {
            return Err("clock_hz and bandwidth must be positive".into());
        }
        Ok(())
    }

    fn chunk_sizes(&self) -> [usize; 7] {
        [
            self.pe_rows.len(),
            self.pe_cols.len(),
            self.interconnect.len(),
            self.buffer_bytes.len(),
            self.split.len(),
            self.tiling.len(),
            self.loop_order.len(),
        ]
    }

    /// Choice count of every design parameter for an `n_layers` network.
    pub fn param_sizes(&self, n_layers: usize) -> Vec<usize> {
        let mut v = vec![self.n_chunks.len()];
        for _ in 0..self.max_chunks() {
            v.extend(self.chunk_sizes());
        }
        v.extend(std::iter::repeat_n(self.max_chunks(), n_layers));
        v
    }

    pub fn param_names(&self, n_layers: usize) -> Vec<String> {
        let mut v = vec!["n_chunks".to_string()];
        for c in 0..self.max_chunks() {
            v.extend(CHUNK_PARAMS.iter().map(|p| format!("chunk{c}.{p}")));
        }
        v.extend((0..n_layers).map(|l| format!("layer{l}.chunk")));
        v
    }

    /// Product of all choice counts.
    pub fn design_space_size(&self, n_layers: usize) -> f64 {
        self.param_sizes(n_layers).iter().map(|&n| n as f64).product()
    }

    /// Builds the configuration selected by `choices`.
    pub fn decode(&self, choices: &[usize], n_layers: usize) -> AcceleratorConfig {
        let sizes = self.param_sizes(n_layers);
        assert_eq!(choices.len(), sizes.len(), "choice vector length");
        assert!(choices.iter().zip(&sizes).all(|(c, n)| c < n), "choice out of range");
        let n = self.n_chunks[choices[0]];
        let chunks = (0..n)
            .map(|slot| {
                let c = &choices[1 + slot * CHUNK_PARAMS.len()..];
                ChunkConfig {
                    pe_rows: self.pe_rows[c[0]],
                    pe_cols: self.pe_cols[c[1]],
                    interconnect: self.interconnect[c[2]],
                    buffer_bytes: self.buffer_bytes[c[3]],
                    split: self.split[c[4]],
                    tiling: self.tiling[c[5]],
                    loop_order: self.loop_order[c[6]],
                }
            })
            .collect();
        let start = 1 + self.max_chunks() * CHUNK_PARAMS.len();
        AcceleratorConfig {
            chunks,
            assignment: choices[start..].iter().map(|&c| c % n).collect(),
            clock_hz: self.clock_hz,
            bandwidth: self.bandwidth,
        }
    }
}
