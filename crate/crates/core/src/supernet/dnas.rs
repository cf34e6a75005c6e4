use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gumbel::{gumbel_softmax_jacobian, ArchParams, GumbelSample};
use crate::acrl::{loss_task, ActorCriticNet, Betas, LossTerms, NetConfig, Rollout, Route, TeacherTargets};
use crate::tensorcore::{Adam, Tape, Tensor, TensorError};

/// `∂L/∂α_i = Σ_k gate_grad_k · ∂GS_k/∂α_i` for one layer. `gate_grad` is
/// zero outside the paths that were evaluated.
pub fn backward_multi_path(gate_grad: &[f64], soft: &[f64], tau: f64) -> Vec<f64> {
    let j = gumbel_softmax_jacobian(soft, tau);
    (0..soft.len()).map(|i| gate_grad.iter().zip(&j).map(|(g, row)| g * row[i]).sum()).collect()
}

/// How the hardware cost reaches `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostGradMode {
    /// Activated operator's cost on its own logit, zero elsewhere.
    Indicator,
    /// Activated operator's cost times the Gumbel-Softmax Jacobian row of
    /// the activated gate, so every logit of the layer moves.
    #[default]
    GateRelaxed,
}

/// `∂L_cost/∂α`: the activated operator of each layer receives its cost,
/// every other operator zero.
pub fn cost_gradient(sample: &GumbelSample, layer_costs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sample
        .hard
        .iter()
        .zip(layer_costs)
        .map(|(&fw, costs)| (0..costs.len()).map(|i| if i == fw { costs[i] } else { 0.0 }).collect())
        .collect()
}

/// `c_fw · ∂GS_fw/∂α_i` per layer.
pub fn cost_gradient_relaxed(sample: &GumbelSample, layer_costs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sample
        .hard
        .iter()
        .zip(&sample.soft)
        .zip(layer_costs)
        .map(|((&fw, soft), costs)| {
            let mut g = vec![0.0; soft.len()];
            g[fw] = costs[fw];
            backward_multi_path(&g, soft, sample.tau)
        })
        .collect()
}

pub fn cost_gradient_with(mode: CostGradMode, sample: &GumbelSample, layer_costs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match mode {
        CostGradMode::Indicator => cost_gradient(sample, layer_costs),
        CostGradMode::GateRelaxed => cost_gradient_relaxed(sample, layer_costs),
    }
}

/// Weight and architecture gradients from one task-loss backward.
#[derive(Debug, Clone)]
pub struct SearchGrads {
    pub weights: Vec<Tensor>,
    pub alpha: Vec<Vec<f64>>,
    /// `∂L/∂GS^l_k` for the evaluated paths.
    pub gates: Vec<Vec<f64>>,
    pub terms: LossTerms,
}

/// Weight-sharing supernet plus its architecture logits.
#[derive(Debug, Clone)]
pub struct Supernet {
    pub net: ActorCriticNet,
    pub arch: ArchParams,
}

impl Supernet {
    pub fn new(config: NetConfig, tau: f64, k: usize, seed: u64) -> Result<Self, TensorError> {
        let candidates: Vec<usize> = config.cells.iter().map(Vec::len).collect();
        let arch = ArchParams::uniform(&candidates, tau, k);
        arch.validate()?;
        Ok(Supernet { net: ActorCriticNet::new(config, seed)?, arch })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GumbelSample {
        self.arch.sample(rng)
    }

    /// Draws a path and runs only its operators on `x` (`[B, C, H, W]`).
    pub fn forward_single_path<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor, GumbelSample), TensorError> {
        let sample = self.sample(rng);
        let (logits, values) = self.net.predict(x, &sample.hard)?;
        Ok((logits, values, sample))
    }

    /// Task loss of `rollout` along `sample.hard`, with the top-K paths of
    /// every cell evaluated for the architecture gradient. Weight gradients
    /// flow only through the hard path.
    pub fn task_gradients(
        &self,
        sample: &GumbelSample,
        rollout: &Rollout,
        gamma: f64,
        betas: &Betas,
        teacher: Option<&TeacherTargets>,
    ) -> Result<SearchGrads, TensorError> {
        let batch = rollout.state_batch()?;
        let mut tape = Tape::new();
        let p = self.net.params().bind(&mut tape, true);
        let x = tape.leaf_ref(&batch, false);
        let gates: Vec<_> = sample.soft.iter().map(|s| tape.leaf(Tensor::vector(s.clone()), true)).collect();
        let route = Route::Gated { path: &sample.hard, topk: &sample.topk, gates: &gates };
        let out = self.net.forward(&mut tape, &p, x, route)?;
        let (loss, terms) = loss_task(&mut tape, &out, rollout, gamma, betas, teacher)?;
        let g = tape.backward(loss)?;
        let gate_grads: Vec<Vec<f64>> = gates
            .iter()
            .zip(&sample.soft)
            .map(|(&v, s)| g.get(v).map_or_else(|| vec![0.0; s.len()], |t| t.data().to_vec()))
            .collect();
        let alpha = gate_grads
            .iter()
            .zip(&sample.soft)
            .map(|(gg, s)| backward_multi_path(gg, s, sample.tau))
            .collect();
        Ok(SearchGrads { weights: p.grads(self.net.params(), &g), alpha, gates: gate_grads, terms })
    }

    /// Per-cell argmax of `α`.
    pub fn derive_path(&self) -> Vec<usize> {
        derive_child(&self.arch)
    }

    /// The argmax child as a standalone network inheriting the supernet's
    /// weights for its chosen operators.
    pub fn derive_child_net(&self) -> Result<(ActorCriticNet, Vec<usize>), TensorError> {
        let path = self.derive_path();
        let child = self.child_net(&path)?;
        Ok((child, path))
    }

    pub fn child_net(&self, path: &[usize]) -> Result<ActorCriticNet, TensorError> {
        let cfg = self.net.config();
        let ops: Vec<_> = cfg.cells.iter().zip(path).map(|(c, &i)| c[i]).collect();
        let child_cfg = NetConfig::fixed(cfg.in_shape, cfg.num_actions, &ops, cfg.channels, cfg.hidden);
        let mut child = ActorCriticNet::new(child_cfg, 0)?;
        child.load_matching(self.net.params(), false)?;
        Ok(child)
    }
}

/// Per-layer argmax of `α`; ties go to the lowest index.
pub fn derive_child(arch: &ArchParams) -> Vec<usize> {
    arch.argmax_path()
}

/// Adam on the architecture logits.
#[derive(Debug, Clone)]
pub struct ArchOptimizer {
    adam: Adam,
}

impl ArchOptimizer {
    /// Learning rate 1e-3, momentum 0.9.
    pub fn new(arch: &ArchParams) -> Self {
        Self::with_lr(arch, 1e-3)
    }

    pub fn with_lr(arch: &ArchParams, lr: f64) -> Self {
        ArchOptimizer { adam: Adam::new(&arch.alpha, lr, 0.9, 0.999) }
    }

    pub fn step(&mut self, arch: &mut ArchParams, grads: &[Vec<f64>]) -> Result<(), TensorError> {
        let g: Vec<Tensor> = grads.iter().map(|v| Tensor::vector(v.clone())).collect();
        self.adam.step(&mut arch.alpha, &g)
    }
}

/// `task + λ·cost`, layer by layer.
pub fn combine(task: &[Vec<f64>], cost: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    task.iter()
        .zip(cost)
        .map(|(t, c)| t.iter().zip(c).map(|(a, b)| a + lambda * b).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supernet::OperatorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_for(hard: Vec<usize>, soft: Vec<Vec<f64>>) -> GumbelSample {
        GumbelSample {
            noise: soft.iter().map(|s| vec![0.0; s.len()]).collect(),
            topk: hard.iter().map(|&h| vec![h]).collect(),
            hard,
            soft,
            tau: 1.0,
        }
    }

    #[test]
    fn indicator_gradient_has_one_nonzero_per_layer() {
        let s = sample_for(vec![1, 0], vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.4]]);
        let g = cost_gradient(&s, &[vec![3.0, 7.0, 1.0], vec![2.0, 9.0]]);
        assert_eq!(g, vec![vec![0.0, 7.0, 0.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn relaxed_gradient_raises_cheaper_logits() {
        let s = sample_for(vec![1], vec![vec![0.2, 0.5, 0.3]]);
        let g = cost_gradient_relaxed(&s, &[vec![3.0, 7.0, 1.0]]);
        assert!(g[0][1] > 0.0 && g[0][0] < 0.0 && g[0][2] < 0.0);
        assert!(g[0].iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn single_candidate_supernet_is_a_plain_network() {
        let ops = [OperatorKind::ConvK3, OperatorKind::Skip];
        let cfg = NetConfig::fixed([2, 4, 4], 3, &ops, 3, 6);
        let sn = Supernet::new(cfg.clone(), 1.0, 2, 5).unwrap();
        let plain = ActorCriticNet::new(cfg, 5).unwrap();
        let x = Tensor::full(&[1, 2, 4, 4], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _, s) = sn.forward_single_path(&x, &mut rng).unwrap();
        assert_eq!(s.hard, vec![0, 0]);
        assert_eq!(logits, plain.predict(&x, &[0, 0]).unwrap().0);
    }

    #[test]
    fn derive_child_ignores_logit_shifts() {
        let mut arch = ArchParams::uniform(&[3, 4], 1.0, 2);
        arch.alpha[0] = Tensor::vector(vec![0.1, 0.9, -0.3]);
        arch.alpha[1] = Tensor::vector(vec![2.0, 0.0, 5.0, 1.0]);
        let before = derive_child(&arch);
        arch.alpha[0] = arch.alpha[0].map(|v| v + 17.0);
        arch.alpha[1] = arch.alpha[1].map(|v| v - 3.0);
        assert_eq!(derive_child(&arch), before);
        assert_eq!(before, vec![1, 2]);
    }
}
