use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OperatorKind;
use crate::accel::LayerDesc;
use crate::acrl::NetConfig;
use crate::{Error, Result};

pub const CHILD_FORMAT: &str = "coaccel-child";
pub const CHILD_VERSION: u32 = 1;

/// Cost-model layers of every candidate, in execution order: the stem, one
/// entry per cell listing its candidates, the hidden layer and the combined
/// actor-critic head. Fixed layers have a single candidate.
pub fn candidate_layers(config: &NetConfig) -> Vec<Vec<LayerDesc>> {
    let [c_in, h, w] = config.in_shape;
    let c = config.channels;
    let mut v = vec![vec![LayerDesc::conv("stem", c_in, c, h, w, 3)]];
    for (l, cell) in config.cells.iter().enumerate() {
        v.push(cell.iter().map(|&k| LayerDesc::operator(format!("cell{l}.{k}"), k, c, h, w)).collect());
    }
    v.push(vec![LayerDesc::dense("fc", c * h * w, config.hidden)]);
    v.push(vec![LayerDesc::dense("head", config.hidden, config.num_actions + 1)]);
    v
}

/// Cost-model layers of the child selected by `path`. Cell `l` is layer
/// `l + 1`.
pub fn layer_descs(config: &NetConfig, path: &[usize]) -> Vec<LayerDesc> {
    let mut all = candidate_layers(config);
    let n = all.len();
    all.iter_mut()
        .enumerate()
        .map(|(i, cands)| {
            let pick = if i == 0 || i + 2 >= n { 0 } else { path[i - 1] };
            cands.swap_remove(pick)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub stride: usize,
    pub params: u64,
    #[serde(flatten)]
    pub desc: LayerDesc,
}

/// Structured description of a concrete child network, as written to
/// `child.net`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDescription {
    pub format: String,
    pub version: u32,
    pub in_shape: [usize; 3],
    pub channels: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub ops: Vec<OperatorKind>,
    pub total_macs: u64,
    pub total_params: u64,
    pub layers: Vec<LayerEntry>,
}

impl NetDescription {
    pub fn new(in_shape: [usize; 3], num_actions: usize, ops: &[OperatorKind], channels: usize, hidden: usize) -> Self {
        let config = NetConfig::fixed(in_shape, num_actions, ops, channels, hidden);
        let descs = layer_descs(&config, &vec![0; ops.len()]);
        let [c_in, ..] = in_shape;
        let mut params = vec![(c_in * channels * 9 + channels) as u64];
        params.extend(ops.iter().map(|k| k.param_count(channels) as u64));
        let flat = channels * in_shape[1] * in_shape[2];
        params.push((flat * hidden + hidden) as u64);
        params.push((hidden * (num_actions + 1) + num_actions + 1) as u64);
        let layers: Vec<LayerEntry> =
            descs.into_iter().zip(params).map(|(desc, params)| LayerEntry { stride: 1, params, desc }).collect();
        NetDescription {
            format: CHILD_FORMAT.into(),
            version: CHILD_VERSION,
            in_shape,
            channels,
            hidden,
            num_actions,
            ops: ops.to_vec(),
            total_macs: layers.iter().map(|l| l.desc.macs).sum(),
            total_params: layers.iter().map(|l| l.params).sum(),
            layers,
        }
    }

    /// Description of `path` through `config`'s cells.
    pub fn of_path(config: &NetConfig, path: &[usize]) -> Self {
        let ops: Vec<OperatorKind> = config.cells.iter().zip(path).map(|(c, &i)| c[i]).collect();
        Self::new(config.in_shape, config.num_actions, &ops, config.channels, config.hidden)
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig::fixed(self.in_shape, self.num_actions, &self.ops, self.channels, self.hidden)
    }

    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(|l| l.desc.clone()).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("description serializes")
    }

    /// Parses and re-derives every layer from the header fields; stored
    /// counts that disagree are rejected.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let d: NetDescription = toml::from_str(text).map_err(|e| e.to_string())?;
        if d.format != CHILD_FORMAT {
            return Err(format!("format is `{}`, expected `{CHILD_FORMAT}`", d.format));
        }
        if d.version != CHILD_VERSION {
            return Err(format!("unsupported version {}", d.version));
        }
        d.net_config().validate()?;
        let fresh = NetDescription::new(d.in_shape, d.num_actions, &d.ops, d.channels, d.hidden);
        if fresh != d {
            let bad = fresh
                .layers
                .iter()
                .zip(&d.layers)
                .find(|(a, b)| a != b)
                .map_or_else(|| "layer list or totals".to_string(), |(a, _)| format!("layer `{}`", a.desc.name));
            return Err(format!("{bad} disagrees with the network shape"));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|r| Error::format(path, r))
    }
}
