//! Actor-critic objectives over one rollout.
//!
//! Every loss is an empirical mean over the rollout's time steps. The
//! td-error doubles as the policy-gradient advantage and as the value-loss
//! residual; its bootstrap term is always a constant.

use serde::{Deserialize, Serialize};

use super::net::NetOut;
use super::rollout::Rollout;
use crate::tensorcore::{Tape, Tensor, TensorError, Var};

/// Weights of the entropy, actor-distillation and critic-distillation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub entropy: f64,
    pub actor_distill: f64,
    pub critic_distill: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Betas { entropy: 1e-2, actor_distill: 1e-1, critic_distill: 1e-3 }
    }
}

impl Betas {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("entropy", self.entropy),
            ("actor_distill", self.actor_distill),
            ("critic_distill", self.critic_distill),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("beta {name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

/// `δ_t = r_t + γ·V(s_{t+1})·(1 − terminal_t) − V(s_t)`, with `values`
/// holding `V(s_0) … V(s_T)`.
pub fn td_errors(rewards: &[f64], values: &[f64], terminal: &[bool], gamma: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap state");
    rewards
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let next = if terminal[t] { 0.0 } else { values[t + 1] };
            r + gamma * next - values[t]
        })
        .collect()
}

impl Rollout {
    /// td-errors from the values recorded while collecting.
    pub fn td_errors(&self, gamma: f64) -> Vec<f64> {
        let mut v = self.values.clone();
        v.push(self.bootstrap);
        td_errors(&self.rewards, &v, &self.terminal, gamma)
    }
}

fn mean_coeffs(tape: &mut Tape<'_>, c: Vec<f64>) -> Var {
    let n = c.len().max(1) as f64;
    tape.constant(Tensor::vector(c.into_iter().map(|v| v / n).collect()))
}

/// `−mean_t δ_t · log π(a_t | s_t)` with `δ` held constant; `log_probs` is
/// `[T, A]`.
pub fn loss_policy(tape: &mut Tape<'_>, log_probs: Var, actions: &[usize], deltas: &[f64]) -> Result<Var, TensorError> {
    let picked = tape.gather(log_probs, actions)?;
    let w = mean_coeffs(tape, deltas.iter().map(|d| -d).collect());
    let prod = tape.mul(picked, w)?;
    tape.sum(prod)
}

/// `mean_t ½(target_t − V(s_t))²` with constant targets.
pub fn loss_value(tape: &mut Tape<'_>, values: Var, targets: &[f64]) -> Result<Var, TensorError> {
    let t = tape.constant(Tensor::vector(targets.to_vec()));
    let m = tape.mse(values, t)?;
    tape.scale(m, 0.5)
}

/// `mean_t Σ_a π log π`, i.e. negative entropy, in `[−log |A|, 0]`.
pub fn loss_entropy(tape: &mut Tape<'_>, log_probs: Var) -> Result<Var, TensorError> {
    let rows = tape.value(log_probs).shape()[0].max(1) as f64;
    let p = tape.exp(log_probs)?;
    let plogp = tape.mul(p, log_probs)?;
    let s = tape.sum(plogp)?;
    tape.scale(s, 1.0 / rows)
}

/// `mean_t KL(π_teacher ‖ π_student)`. Computed as
/// `mean_t Σ_a p (log p − log q)` from log-probabilities so it stays finite
/// however sharp either policy is.
pub fn loss_actor_distill(tape: &mut Tape<'_>, student_log_probs: Var, teacher_log_probs: &Tensor) -> Result<Var, TensorError> {
    let s = tape.value(student_log_probs).shape().to_vec();
    if s != teacher_log_probs.shape() || s.len() != 2 {
        return Err(TensorError::shape("loss_actor_distill", &s, teacher_log_probs.shape()));
    }
    let rows = s[0].max(1) as f64;
    let p = teacher_log_probs.map(f64::exp);
    let self_term: f64 = p.data().iter().zip(teacher_log_probs.data()).map(|(a, b)| a * b).sum::<f64>() / rows;
    let pv = tape.constant(p.map(|v| -v / rows));
    let cross = tape.mul(pv, student_log_probs)?;
    let cross = tape.sum(cross)?;
    let c = tape.constant(Tensor::scalar(self_term));
    tape.add(cross, c)
}

/// `mean_t ½(V_student − V_teacher)²` with the teacher detached.
pub fn loss_critic_distill(tape: &mut Tape<'_>, student_values: Var, teacher_values: &[f64]) -> Result<Var, TensorError> {
    loss_value(tape, student_values, teacher_values)
}

/// Teacher outputs on the rollout states.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets {
    /// `[T, A]`
    pub log_probs: Tensor,
    pub values: Vec<f64>,
}

/// Scalar value of every term, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub actor_distill: f64,
    pub critic_distill: f64,
    pub total: f64,
}

/// `L_policy + L_value + β₁L_entropy + β₂L_actor + β₃L_critic` over
/// `rollout`, where `out` was computed on [`Rollout::state_batch`]. The
/// distillation terms vanish without a teacher.
pub fn loss_task(
    tape: &mut Tape<'_>,
    out: &NetOut,
    rollout: &Rollout,
    gamma: f64,
    betas: &Betas,
    teacher: Option<&TeacherTargets>,
) -> Result<(Var, LossTerms), TensorError> {
    let t = rollout.len();
    let all_v = tape.value(out.values).data().to_vec();
    if all_v.len() != t + 1 {
        return Err(TensorError::invalid("loss_task", format!("{} values for {t} steps", all_v.len())));
    }
    let deltas = td_errors(&rollout.rewards, &all_v, &rollout.terminal, gamma);
    let targets: Vec<f64> = deltas.iter().zip(&all_v).map(|(d, v)| d + v).collect();

    let logits = tape.narrow(out.logits, 0, t)?;
    let log_probs = tape.log_softmax(logits, 1)?;
    let values = tape.narrow(out.values, 0, t)?;

    let lp = loss_policy(tape, log_probs, &rollout.actions, &deltas)?;
    let lv = loss_value(tape, values, &targets)?;
    let le = loss_entropy(tape, log_probs)?;
    let mut terms = LossTerms {
        policy: tape.value(lp).item(),
        value: tape.value(lv).item(),
        entropy: tape.value(le).item(),
        ..LossTerms::default()
    };
    let s = tape.add(lp, lv)?;
    let e = tape.scale(le, betas.entropy)?;
    let mut total = tape.add(s, e)?;
    if let Some(teacher) = teacher {
        if teacher.values.len() != t {
            return Err(TensorError::invalid("loss_task", format!("teacher covers {} of {t} steps", teacher.values.len())));
        }
        let la = loss_actor_distill(tape, log_probs, &teacher.log_probs)?;
        let lc = loss_critic_distill(tape, values, &teacher.values)?;
        terms.actor_distill = tape.value(la).item();
        terms.critic_distill = tape.value(lc).item();
        let a = tape.scale(la, betas.actor_distill)?;
        let c = tape.scale(lc, betas.critic_distill)?;
        total = tape.add(total, a)?;
        total = tape.add(total, c)?;
    }
    terms.total = tape.value(total).item();
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_error_examples() {
        let d = td_errors(&[1.0], &[1.0, 2.0], &[false], 0.99);
        assert!((d[0] - 1.98).abs() < 1e-12);
        let d = td_errors(&[1.0], &[1.0, 5.0], &[true], 0.99);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn perfect_critic_has_zero_td_error() {
        let gamma = 0.9;
        let rewards = [-0.01, -0.01, 1.0];
        let v2 = 1.0;
        let v1 = -0.01 + gamma * v2;
        let v0 = -0.01 + gamma * v1;
        let d = td_errors(&rewards, &[v0, v1, v2, 123.0], &[false, false, true], gamma);
        assert!(d.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn policy_loss_single_step() {
        let mut tape = Tape::new();
        let lp = tape.leaf(Tensor::new(vec![1, 2], vec![0.5f64.ln(), 0.5f64.ln()]).unwrap(), true);
        let l = loss_policy(&mut tape, lp, &[0], &[1.0]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let l0 = loss_policy(&mut tape, lp, &[0], &[0.0]).unwrap();
        let g = tape.backward(l0).unwrap();
        assert!(g.get(lp).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_and_critic_distill_examples() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(vec![1.0]), true);
        let l = loss_value(&mut tape, v, &[3.0]).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let s = tape.leaf(Tensor::vector(vec![3.0]), true);
        let l = loss_critic_distill(&mut tape, s, &[1.0]).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
    }

    #[test]
    fn entropy_of_uniform_policy() {
        let mut tape = Tape::new();
        let lp = tape.leaf(Tensor::full(&[3, 4], 0.25f64.ln()), true);
        let l = loss_entropy(&mut tape, lp).unwrap();
        assert!((tape.value(l).item() - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sharp_teacher_against_uniform_student_approaches_log_a() {
        let mut tape = Tape::new();
        let student = tape.leaf(Tensor::full(&[1, 4], 0.25f64.ln()), true);
        let sharp = crate::acrl::log_softmax(&[60.0, 0.0, 0.0, 0.0]);
        let teacher = Tensor::new(vec![1, 4], sharp).unwrap();
        let l = loss_actor_distill(&mut tape, student, &teacher).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let same = loss_actor_distill(&mut tape, student, &Tensor::full(&[1, 4], 0.25f64.ln())).unwrap();
        assert!(tape.value(same).item().abs() < 1e-15);
    }
}
