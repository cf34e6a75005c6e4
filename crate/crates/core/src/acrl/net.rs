use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::supernet::OperatorKind;
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Shape of an actor-critic network: a 3×3 stem, a stack of cells, one
/// hidden fully connected layer, then actor and critic heads.
///
/// Each cell lists its candidate operators. A cell with one candidate is a
/// plain layer; a network whose cells all have one candidate is a concrete
/// child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// `[C, H, W]` of one observation.
    pub in_shape: [usize; 3],
    pub channels: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub cells: Vec<Vec<OperatorKind>>,
}

impl NetConfig {
    /// Every cell offers all five operator kinds.
    pub fn supernet(in_shape: [usize; 3], num_actions: usize, n_cells: usize, channels: usize, hidden: usize) -> Self {
        NetConfig {
            in_shape,
            channels,
            hidden,
            num_actions,
            cells: vec![OperatorKind::ALL.to_vec(); n_cells],
        }
    }

    pub fn fixed(in_shape: [usize; 3], num_actions: usize, ops: &[OperatorKind], channels: usize, hidden: usize) -> Self {
        NetConfig {
            in_shape,
            channels,
            hidden,
            num_actions,
            cells: ops.iter().map(|&k| vec![k]).collect(),
        }
    }

    pub fn is_child(&self) -> bool {
        self.cells.iter().all(|c| c.len() == 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        let [c, h, w] = self.in_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(format!("empty input shape {:?}", self.in_shape));
        }
        if self.channels == 0 || self.hidden == 0 {
            return Err("channels and hidden must be positive".into());
        }
        if self.num_actions < 2 {
            return Err(format!("need at least 2 actions, got {}", self.num_actions));
        }
        if let Some(i) = self.cells.iter().position(Vec::is_empty) {
            return Err(format!("cell {i} has no candidate operators"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum OpParams {
    Conv { w: ParamId, b: ParamId },
    Dwsep { dw: ParamId, pw: ParamId, b: ParamId },
    Skip,
}

/// How a forward pass moves through the cells.
#[derive(Debug, Clone, Copy)]
pub enum Route<'r> {
    /// Candidate index per cell; only that operator runs.
    Path(&'r [usize]),
    /// Runs every operator listed in `topk[l]` on the cell input and forwards
    /// `path[l]` through a straight-through select against the cell's gate
    /// vector `gates[l]`.
    Gated {
        path: &'r [usize],
        topk: &'r [Vec<usize>],
        gates: &'r [Var],
    },
    /// Weighted sum of every candidate, one scalar weight per candidate.
    Mixture(&'r [Vec<Var>]),
}

#[derive(Debug, Clone)]
pub struct NetOut {
    /// `[B, A]`
    pub logits: Var,
    /// `[B]`
    pub values: Var,
    /// Operators evaluated per cell, in evaluation order.
    pub executed: Vec<Vec<usize>>,
}

/// Shared trunk with actor and critic heads.
#[derive(Debug, Clone)]
pub struct ActorCriticNet {
    config: NetConfig,
    params: ParamStore,
    stem: Affine,
    cells: Vec<Vec<OpParams>>,
    fc: Affine,
    actor: Affine,
    critic: Affine,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    t
}

impl ActorCriticNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate().map_err(|r| TensorError::invalid("net", r))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let [ic, h, w] = config.in_shape;
        let c = config.channels;
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();

        let stem = Affine {
            w: params.add("stem.w", uniform(&mut rng, &[c, ic, 3, 3], he(ic * 9))),
            b: params.add("stem.b", Tensor::zeros(&[c])),
        };
        let mut cells = Vec::with_capacity(config.cells.len());
        for (l, cands) in config.cells.iter().enumerate() {
            let mut ops = Vec::with_capacity(cands.len());
            for &kind in cands {
                let pre = format!("cell{l}.{}", kind.name());
                let k = kind.kernel();
                ops.push(match kind {
                    OperatorKind::ConvK3 | OperatorKind::ConvK5 => OpParams::Conv {
                        w: params.add(format!("{pre}.w"), uniform(&mut rng, &[c, c, k, k], he(c * k * k))),
                        b: params.add(format!("{pre}.b"), Tensor::zeros(&[c])),
                    },
                    OperatorKind::DwsepK3 | OperatorKind::DwsepK5 => OpParams::Dwsep {
                        dw: params.add(format!("{pre}.dw"), uniform(&mut rng, &[c, 1, k, k], he(k * k))),
                        pw: params.add(format!("{pre}.pw"), uniform(&mut rng, &[c, c, 1, 1], he(c))),
                        b: params.add(format!("{pre}.b"), Tensor::zeros(&[c])),
                    },
                    OperatorKind::Skip => OpParams::Skip,
                });
            }
            cells.push(ops);
        }
        let flat = c * h * w;
        let fc = Affine {
            w: params.add("fc.w", uniform(&mut rng, &[flat, config.hidden], he(flat))),
            b: params.add("fc.b", Tensor::zeros(&[config.hidden])),
        };
        // Small actor weights start the policy close to uniform.
        let actor = Affine {
            w: params.add(
                "actor.w",
                uniform(&mut rng, &[config.hidden, config.num_actions], 0.01 * he(config.hidden)),
            ),
            b: params.add("actor.b", Tensor::zeros(&[config.num_actions])),
        };
        let critic = Affine {
            w: params.add(
                "critic.w",
                uniform(&mut rng, &[config.hidden, 1], (1.0 / config.hidden as f64).sqrt()),
            ),
            b: params.add("critic.b", Tensor::zeros(&[1])),
        };
        Ok(ActorCriticNet { config, params, stem, cells, fc, actor, critic })
    }

    /// Rebuilds a network around stored parameters, which must match the
    /// names and shapes `config` implies.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self, TensorError> {
        let mut net = Self::new(config, 0)?;
        net.load_matching(&params, true)?;
        Ok(net)
    }

    /// Copies every parameter of `self` from the same-named tensor in
    /// `source`. With `exact`, `source` must hold no other tensors.
    pub fn load_matching(&mut self, source: &ParamStore, exact: bool) -> Result<(), TensorError> {
        if exact && source.len() != self.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                source.len()
            )));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            let src = source
                .find(&name)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))?;
            let t = source.get(src);
            if t.shape() != self.params.get(id).shape() {
                return Err(TensorError::shape("load_matching", self.params.get(id).shape(), t.shape()));
            }
            *self.params.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// First candidate of every cell; the only path of a child network.
    pub fn default_path(&self) -> Vec<usize> {
        vec![0; self.cells.len()]
    }

    /// Parameters belonging to one candidate operator.
    pub fn operator_params(&self, cell: usize, op: usize) -> Vec<ParamId> {
        match self.cells[cell][op] {
            OpParams::Conv { w, b } => vec![w, b],
            OpParams::Dwsep { dw, pw, b } => vec![dw, pw, b],
            OpParams::Skip => Vec::new(),
        }
    }

    fn run_op(&self, tape: &mut Tape<'_>, p: &Bound, cell: usize, op: usize, x: Var) -> Result<Var, TensorError> {
        let kind = self.config.cells[cell][op];
        let pad = kind.kernel() / 2;
        match self.cells[cell][op] {
            OpParams::Conv { w, b } => {
                let y = tape.conv2d(x, p.var(w), Some(p.var(b)), 1, pad)?;
                tape.relu(y)
            }
            OpParams::Dwsep { dw, pw, b } => {
                let y = tape.depthwise_conv2d(x, p.var(dw), None, 1, pad)?;
                let y = tape.conv2d(y, p.var(pw), Some(p.var(b)), 1, 0)?;
                tape.relu(y)
            }
            OpParams::Skip => Ok(x),
        }
    }

    fn affine(tape: &mut Tape<'_>, p: &Bound, a: Affine, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, p.var(a.w))?;
        tape.bias_add(y, p.var(a.b))
    }

    fn check_route(&self, route: &Route<'_>) -> Result<(), TensorError> {
        let n = self.cells.len();
        let bad = |r: String| Err(TensorError::invalid("net.forward", r));
        let check_path = |path: &[usize]| -> Result<(), TensorError> {
            if path.len() != n {
                return bad(format!("path has {} entries for {n} cells", path.len()));
            }
            for (l, &i) in path.iter().enumerate() {
                if i >= self.cells[l].len() {
                    return bad(format!("cell {l} has no candidate {i}"));
                }
            }
            Ok(())
        };
        match route {
            Route::Path(path) => check_path(path),
            Route::Gated { path, topk, gates } => {
                check_path(path)?;
                if topk.len() != n || gates.len() != n {
                    return bad(format!("{} top-k sets and {} gates for {n} cells", topk.len(), gates.len()));
                }
                for (l, set) in topk.iter().enumerate() {
                    if !set.contains(&path[l]) || set.iter().any(|&i| i >= self.cells[l].len()) {
                        return bad(format!("cell {l}: top-k {set:?} must contain selection {}", path[l]));
                    }
                }
                Ok(())
            }
            Route::Mixture(weights) => {
                if weights.len() != n || weights.iter().zip(&self.cells).any(|(w, c)| w.len() != c.len()) {
                    return bad("mixture weights do not match candidate counts".into());
                }
                Ok(())
            }
        }
    }

    /// Records a batched forward pass; `x` is `[B, C, H, W]`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, route: Route<'_>) -> Result<NetOut, TensorError> {
        self.check_route(&route)?;
        let shape = tape.value(x).shape().to_vec();
        let [c, h, w] = self.config.in_shape;
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(TensorError::shape("net.forward", &[0, c, h, w], &shape));
        }
        let batch = shape[0];
        let y = tape.conv2d(x, p.var(self.stem.w), Some(p.var(self.stem.b)), 1, 1)?;
        let mut a = tape.relu(y)?;
        let mut executed = Vec::with_capacity(self.cells.len());
        for l in 0..self.cells.len() {
            match route {
                Route::Path(path) => {
                    a = self.run_op(tape, p, l, path[l], a)?;
                    executed.push(vec![path[l]]);
                }
                Route::Gated { path, topk, gates } => {
                    let outs = topk[l]
                        .iter()
                        .map(|&i| self.run_op(tape, p, l, i, a))
                        .collect::<Result<Vec<_>, _>>()?;
                    let sel = topk[l].iter().position(|&i| i == path[l]).expect("checked");
                    a = tape.straight_through_select(&outs, gates[l], &topk[l], sel)?;
                    executed.push(topk[l].clone());
                }
                Route::Mixture(weights) => {
                    let mut acc: Option<Var> = None;
                    for (i, &m) in weights[l].iter().enumerate() {
                        let o = self.run_op(tape, p, l, i, a)?;
                        let term = tape.mul(o, m)?;
                        acc = Some(match acc {
                            None => term,
                            Some(s) => tape.add(s, term)?,
                        });
                    }
                    a = acc.expect("cells are non-empty");
                    executed.push((0..weights[l].len()).collect());
                }
            }
        }
        let flat = tape.reshape(a, &[batch, self.config.channels * h * w])?;
        let hid = Self::affine(tape, p, self.fc, flat)?;
        let hid = tape.relu(hid)?;
        let logits = Self::affine(tape, p, self.actor, hid)?;
        let v = Self::affine(tape, p, self.critic, hid)?;
        let values = tape.reshape(v, &[batch])?;
        Ok(NetOut { logits, values, executed })
    }

    /// Gradient-free evaluation of a `[B, C, H, W]` batch along `path`:
    /// logits `[B, A]` and values `[B]`.
    pub fn predict(&self, obs: &Tensor, path: &[usize]) -> Result<(Tensor, Tensor), TensorError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.leaf_ref(obs, false);
        let out = self.forward(&mut tape, &p, x, Route::Path(path))?;
        Ok((tape.value(out.logits).clone(), tape.value(out.values).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(cells: Vec<Vec<OperatorKind>>) -> ActorCriticNet {
        let cfg = NetConfig { in_shape: [2, 4, 4], channels: 3, hidden: 5, num_actions: 4, cells };
        ActorCriticNet::new(cfg, 7).unwrap()
    }

    fn input(b: usize) -> Tensor {
        let n = b * 2 * 16;
        Tensor::new(vec![b, 2, 4, 4], (0..n).map(|i| ((i * 37) % 11) as f64 / 11.0).collect()).unwrap()
    }

    #[test]
    fn output_shapes() {
        let net = tiny(vec![OperatorKind::ALL.to_vec(); 2]);
        let (logits, values) = net.predict(&input(3), &[1, 3]).unwrap();
        assert_eq!(logits.shape(), &[3, 4]);
        assert_eq!(values.shape(), &[3]);
    }

    #[test]
    fn path_route_runs_one_operator_per_cell() {
        let net = tiny(vec![OperatorKind::ALL.to_vec(); 3]);
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, false);
        let obs = input(1);
        let x = tape.leaf_ref(&obs, false);
        let out = net.forward(&mut tape, &p, x, Route::Path(&[0, 4, 2])).unwrap();
        assert_eq!(out.executed, vec![vec![0], vec![4], vec![2]]);
    }

    #[test]
    fn rejects_bad_path_and_input() {
        let net = tiny(vec![vec![OperatorKind::ConvK3]]);
        assert!(net.predict(&input(1), &[1]).is_err());
        assert!(net.predict(&input(1), &[0, 0]).is_err());
        assert!(net.predict(&Tensor::zeros(&[1, 3, 4, 4]), &[0]).is_err());
    }

    #[test]
    fn from_params_round_trips() {
        let net = tiny(vec![vec![OperatorKind::DwsepK5], vec![OperatorKind::Skip]]);
        let back = ActorCriticNet::from_params(net.config().clone(), net.params().clone()).unwrap();
        let obs = input(2);
        assert_eq!(net.predict(&obs, &[0, 0]).unwrap(), back.predict(&obs, &[0, 0]).unwrap());
    }
}
