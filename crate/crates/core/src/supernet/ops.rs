use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Candidate operator for a searchable cell. Every kind maps `C` channels to
/// `C` channels at stride 1 with same-padding, so any kind may follow any
/// other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    ConvK3,
    ConvK5,
    /// Depthwise `k×k` followed by pointwise `1×1`.
    DwsepK3,
    DwsepK5,
    Skip,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::ConvK3,
        OperatorKind::ConvK5,
        OperatorKind::DwsepK3,
        OperatorKind::DwsepK5,
        OperatorKind::Skip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::ConvK3 => "conv_k3",
            OperatorKind::ConvK5 => "conv_k5",
            OperatorKind::DwsepK3 => "dwsep_k3",
            OperatorKind::DwsepK5 => "dwsep_k5",
            OperatorKind::Skip => "skip",
        }
    }

    /// Spatial kernel size; 0 for skip.
    pub fn kernel(self) -> usize {
        match self {
            OperatorKind::ConvK3 | OperatorKind::DwsepK3 => 3,
            OperatorKind::ConvK5 | OperatorKind::DwsepK5 => 5,
            OperatorKind::Skip => 0,
        }
    }

    pub fn is_depthwise_separable(self) -> bool {
        matches!(self, OperatorKind::DwsepK3 | OperatorKind::DwsepK5)
    }

    /// Multiply-accumulates for one `[c, h, w]` sample.
    pub fn macs(self, c: usize, h: usize, w: usize) -> u64 {
        let (c, hw, k) = (c as u64, (h * w) as u64, self.kernel() as u64);
        match self {
            OperatorKind::ConvK3 | OperatorKind::ConvK5 => hw * c * c * k * k,
            OperatorKind::DwsepK3 | OperatorKind::DwsepK5 => hw * c * k * k + hw * c * c,
            OperatorKind::Skip => 0,
        }
    }

    /// Learnable scalars (weights and biases) at `c` channels.
    pub fn param_count(self, c: usize) -> usize {
        let k = self.kernel();
        match self {
            OperatorKind::ConvK3 | OperatorKind::ConvK5 => c * c * k * k + c,
            OperatorKind::DwsepK3 | OperatorKind::DwsepK5 => c * k * k + c * c + c,
            OperatorKind::Skip => 0,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator {s:?}"))
    }
}
