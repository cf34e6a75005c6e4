use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_task, Betas, LossTerms, TeacherTargets};
use super::net::{ActorCriticNet, Route};
use super::rollout::{collect_rollout, evaluate, ActionMode, EnvRunner, Rollout};
use crate::env::{EnvKind, Environment};
use crate::tensorcore::{clip_global_norm, ParamStore, Rmsprop, Tape, Tensor, TensorError};
use crate::{Error, Result};

/// Constant learning rate for the first `hold_fraction` of the budget, then a
/// linear ramp down to `end` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub hold_fraction: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(total_steps: usize) -> Self {
        LrSchedule { start: 1e-3, end: 1e-4, hold_fraction: 1.0 / 3.0, total_steps }
    }

    pub fn at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let hold = self.hold_fraction * total;
        let s = step as f64;
        if s <= hold {
            return self.start;
        }
        let frac = ((s - hold) / (total - hold).max(1.0)).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Clips `grads` to `clip_norm`, then applies one RMSProp update.
/// Returns the pre-clip gradient norm.
pub fn optimizer_step(
    params: &mut ParamStore,
    mut grads: Vec<Tensor>,
    opt: &mut Rmsprop,
    lr: f64,
    clip_norm: f64,
) -> Result<f64, TensorError> {
    if let Some(param) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TensorError::NonFiniteGradient { op: "optimizer_step", param });
    }
    let norm = clip_global_norm(&mut grads, clip_norm);
    opt.step(params.tensors_mut(), &grads, lr)?;
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    #[default]
    None,
    /// Actor distillation only.
    Policy,
    /// Actor and critic distillation.
    ActorCritic,
}

impl DistillMode {
    /// Zeroes the distillation weights this mode leaves out.
    pub fn apply(self, betas: Betas) -> Betas {
        match self {
            DistillMode::None => Betas { actor_distill: 0.0, critic_distill: 0.0, ..betas },
            DistillMode::Policy => Betas { critic_distill: 0.0, ..betas },
            DistillMode::ActorCritic => betas,
        }
    }
}

/// Fixed network used as the distillation target.
#[derive(Debug, Clone, Copy)]
pub struct Teacher<'t> {
    pub net: &'t ActorCriticNet,
    pub path: &'t [usize],
}

impl Teacher<'_> {
    pub fn targets(&self, rollout: &Rollout) -> Result<TeacherTargets, TensorError> {
        let batch = Tensor::stack(&rollout.states)?;
        let (logits, values) = self.net.predict(&batch, self.path)?;
        let a = logits.shape()[1];
        let mut lp = Vec::with_capacity(logits.len());
        for row in logits.data().chunks(a) {
            lp.extend(super::rollout::log_softmax(row));
        }
        Ok(TeacherTargets { log_probs: Tensor::new(logits.shape().to_vec(), lp)?, values: values.into_data() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub seed: u64,
    /// Environment steps.
    pub total_steps: usize,
    pub rollout_len: usize,
    pub gamma: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub clip_norm: f64,
    pub betas: Betas,
    pub distill: DistillMode,
    /// Steps between evaluations; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_mode: ActionMode,
    /// Stop once an evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
    /// Steps between JSONL log lines.
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvKind::Gridworld,
            seed: 0,
            total_steps: 200_000,
            rollout_len: 5,
            gamma: 0.99,
            lr_start: 1e-3,
            lr_end: 1e-4,
            rms_decay: 0.99,
            rms_eps: 1e-5,
            clip_norm: 5.0,
            betas: Betas::default(),
            distill: DistillMode::None,
            eval_interval: 10_000,
            eval_episodes: 30,
            eval_mode: ActionMode::Sample,
            stop_at_return: None,
            log_interval: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.rollout_len == 0 || self.total_steps == 0 {
            return bad("rollout_len and total_steps must be positive".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0 && self.rms_eps > 0.0) {
            return bad("rms_decay must lie in (0, 1) and rms_eps be positive".into());
        }
        if !(self.clip_norm > 0.0) || self.eval_episodes == 0 {
            return bad("clip_norm and eval_episodes must be positive".into());
        }
        self.betas.validate().map_err(Error::Config)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { start: self.lr_start, end: self.lr_end, hold_fraction: 1.0 / 3.0, total_steps: self.total_steps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub updates: usize,
    pub final_score: f64,
    pub history: Vec<EvalPoint>,
    pub stopped_early: bool,
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: usize,
    episode_return_mean30: Option<f64>,
    eval_score: Option<f64>,
    lr: f64,
    entropy: f64,
    losses: &'a LossTerms,
}

/// Mean of the last 30 finished episode returns.
pub fn recent_mean(returns: &[f64]) -> Option<f64> {
    let tail = &returns[returns.len().saturating_sub(30)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Mean return of `net` along `path` over `episodes` fresh episodes.
pub fn evaluate_net(
    net: &ActorCriticNet,
    path: &[usize],
    env: EnvKind,
    episodes: usize,
    seed: u64,
    mode: ActionMode,
) -> Result<f64> {
    let mut env = env.make();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
    evaluate(
        &mut env,
        |obs: &Tensor| {
            let x = obs.reshape(&[1, obs.shape()[0], obs.shape()[1], obs.shape()[2]])?;
            Ok(net.predict(&x, path)?.0.into_data())
        },
        episodes,
        seed,
        mode,
        &mut rng,
    )
}

/// One rollout with `net` along `path`.
pub fn rollout_with<E: Environment, R: rand::Rng + ?Sized>(
    runner: &mut EnvRunner<E>,
    net: &ActorCriticNet,
    path: &[usize],
    len: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<Rollout> {
    collect_rollout(
        runner,
        |obs: &Tensor| {
            let x = obs.reshape(&[1, obs.shape()[0], obs.shape()[1], obs.shape()[2]])?;
            let (logits, v) = net.predict(&x, path)?;
            Ok((logits.into_data(), v.item()))
        },
        len,
        mode,
        rng,
    )
}

/// Task-loss gradients of `net` along `path` for one rollout.
pub fn task_gradients(
    net: &ActorCriticNet,
    path: &[usize],
    rollout: &Rollout,
    gamma: f64,
    betas: &Betas,
    teacher: Option<&TeacherTargets>,
) -> Result<(Vec<Tensor>, LossTerms), TensorError> {
    let batch = rollout.state_batch()?;
    let mut tape = Tape::new();
    let p = net.params().bind(&mut tape, true);
    let x = tape.leaf_ref(&batch, false);
    let out = net.forward(&mut tape, &p, x, Route::Path(path))?;
    let (loss, terms) = loss_task(&mut tape, &out, rollout, gamma, betas, teacher)?;
    let g = tape.backward(loss)?;
    Ok((p.grads(net.params(), &g), terms))
}

/// Trains `net` along `path` with n-step actor-critic, writing one JSON
/// object per log interval to `log`.
pub fn train(
    net: &mut ActorCriticNet,
    path: &[usize],
    cfg: &TrainConfig,
    teacher: Option<Teacher<'_>>,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let betas = cfg.distill.apply(cfg.betas);
    let teacher = if cfg.distill == DistillMode::None { None } else { teacher };
    if cfg.distill != DistillMode::None && teacher.is_none() {
        return Err(Error::config("distillation requested without a teacher"));
    }
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut runner = EnvRunner::new(cfg.env.make(), cfg.seed);
    let mut opt = Rmsprop::new(net.params().tensors(), cfg.rms_decay, cfg.rms_eps);
    let mut history = Vec::new();
    let mut updates = 0;
    let mut next_eval = cfg.eval_interval;
    let mut next_log = cfg.log_interval;
    let mut stopped_early = false;
    let eval_seed = cfg.seed.wrapping_add(1_000_000);

    while runner.total_steps() < cfg.total_steps {
        let step = runner.total_steps();
        let rollout = rollout_with(&mut runner, net, path, cfg.rollout_len, ActionMode::Sample, &mut rng)?;
        let targets = teacher.map(|t| t.targets(&rollout)).transpose()?;
        let (grads, terms) = task_gradients(net, path, &rollout, cfg.gamma, &betas, targets.as_ref())?;
        let lr = schedule.at(step);
        optimizer_step(net.params_mut(), grads, &mut opt, lr, cfg.clip_norm)?;
        updates += 1;

        let step = runner.total_steps();
        let mut eval_score = None;
        if cfg.eval_interval > 0 && step >= next_eval {
            next_eval += cfg.eval_interval;
            let score = evaluate_net(net, path, cfg.env, cfg.eval_episodes, eval_seed, cfg.eval_mode)?;
            history.push(EvalPoint { step, score });
            eval_score = Some(score);
        }
        if let Some(w) = log.as_deref_mut() {
            if step >= next_log || eval_score.is_some() {
                next_log = step + cfg.log_interval.max(1);
                let line = LogLine {
                    step,
                    episode_return_mean30: recent_mean(runner.finished_returns()),
                    eval_score,
                    lr,
                    entropy: -terms.entropy,
                    losses: &terms,
                };
                let text = serde_json::to_string(&line).expect("log line serializes");
                writeln!(w, "{text}").map_err(|e| Error::io("training log", e))?;
            }
        }
        if let (Some(target), Some(score)) = (cfg.stop_at_return, eval_score) {
            if score >= target {
                stopped_early = true;
                break;
            }
        }
    }
    let final_score = match history.last() {
        Some(p) if p.step == runner.total_steps() => p.score,
        _ => {
            let score = evaluate_net(net, path, cfg.env, cfg.eval_episodes, eval_seed, cfg.eval_mode)?;
            history.push(EvalPoint { step: runner.total_steps(), score });
            score
        }
    };
    Ok(TrainReport { steps: runner.total_steps(), updates, final_score, history, stopped_early })
}
