//! Joint search over the agent architecture and its accelerator.
//!
//! Each iteration: draw a path from `α`, collect a rollout along it, run a
//! few DAS steps on that path's layers to get `φ*`, then update the
//! network weights with the task loss and `α` with task loss plus `λ` times
//! the layer-wise cost under `φ*`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accel::{layer_cost_table, pipeline_cost, AcceleratorConfig, CostReport, Menus};
use crate::acrl::{
    evaluate_net, optimizer_step, rollout_with, train, ActionMode, ActorCriticNet, Betas, DistillMode, EnvRunner,
    LossTerms, NetConfig, Teacher, TrainConfig, TrainReport,
};
use crate::das::{config_cost, das_step, CostSignal, DasOptimizer, HwParams};
use crate::env::EnvKind;
use crate::supernet::{
    candidate_layers, combine, cost_gradient_with, layer_descs, ArchOptimizer, CostGradMode, NetDescription,
    Supernet, TemperatureSchedule,
};
use crate::tensorcore::{Rmsprop, TensorError};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoSearchConfig {
    pub env: EnvKind,
    pub seed: u64,
    /// Environment steps, `T_max`.
    pub total_steps: usize,
    pub rollout_len: usize,
    pub gamma: f64,
    /// Weight learning rate, held then decayed linearly.
    pub lr_start: f64,
    pub lr_end: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub clip_norm: f64,
    /// Architecture learning rate (Adam).
    pub alpha_lr: f64,
    /// Cost weight, per cycle.
    pub lambda: f64,
    pub k: usize,
    pub tau: f64,
    pub betas: Betas,
    pub distill: DistillMode,
    pub cost_grad: CostGradMode,
    pub das_steps: usize,
    /// DAS steps on the derived child after the search, continuing from the
    /// final `φ`.
    pub final_das_steps: usize,
    pub das_lr: f64,
    pub das_signal: CostSignal,
    /// Re-initialize `φ` every iteration instead of warm-starting.
    pub reset_phi: bool,
    /// Update `α` on a second, held-out rollout after the weight update.
    pub bilevel: bool,
    /// With `false`, no environment is run and `α` sees only the cost
    /// gradient.
    pub task_loss: bool,
    pub n_cells: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Iterations between trace lines; the last iteration is always traced.
    pub trace_interval: usize,
    pub eval_episodes: usize,
}

impl Default for CoSearchConfig {
    fn default() -> Self {
        CoSearchConfig {
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
            alpha_lr: 1e-3,
            lambda: 0.0,
            k: 2,
            tau: 5.0,
            betas: Betas::default(),
            distill: DistillMode::None,
            cost_grad: CostGradMode::GateRelaxed,
            das_steps: 10,
            final_das_steps: 3000,
            das_lr: 1e-2,
            das_signal: CostSignal::LogAdvantage,
            reset_phi: false,
            bilevel: false,
            task_loss: true,
            n_cells: 4,
            channels: 8,
            hidden: 64,
            trace_interval: 100,
            eval_episodes: 30,
        }
    }
}

impl CoSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.rollout_len == 0 || self.total_steps < self.rollout_len {
            return bad(format!("total_steps ({}) must be at least rollout_len ({})", self.total_steps, self.rollout_len));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.tau > 0.0 && self.alpha_lr > 0.0 && self.das_lr > 0.0) {
            return bad("tau, alpha_lr and das_lr must be positive".into());
        }
        if self.n_cells == 0 || self.channels == 0 || self.hidden == 0 {
            return bad("n_cells, channels and hidden must be positive".into());
        }
        self.train_config(self.total_steps).validate()
    }

    pub fn net_config(&self) -> NetConfig {
        let spec = self.env.spec();
        NetConfig::supernet(spec.obs_shape, spec.num_actions, self.n_cells, self.channels, self.hidden)
    }

    /// Weight-training settings shared with plain actor-critic training.
    pub fn train_config(&self, total_steps: usize) -> TrainConfig {
        TrainConfig {
            env: self.env,
            seed: self.seed,
            total_steps,
            rollout_len: self.rollout_len,
            gamma: self.gamma,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            rms_decay: self.rms_decay,
            rms_eps: self.rms_eps,
            clip_norm: self.clip_norm,
            betas: self.betas,
            distill: self.distill,
            eval_interval: 0,
            eval_episodes: self.eval_episodes,
            ..TrainConfig::default()
        }
    }
}

/// Snapshot written every `trace_interval` iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub step: usize,
    pub tau: f64,
    /// Hard-sampled path of this iteration.
    pub path: Vec<usize>,
    /// Phases in the order they ran.
    pub phases: Vec<String>,
    /// Bottleneck cycles of the sampled child on `φ*`.
    pub bottleneck_cycles: f64,
    /// Summed layer cycles of the sampled child on `φ*`; the `α` cost.
    pub summed_cycles: f64,
    pub fps: f64,
    pub das_cost: f64,
    pub losses: LossTerms,
    pub episode_return_mean30: Option<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub phi_star: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoSearchOutcome {
    pub supernet: Supernet,
    pub hw: HwParams,
    pub child_path: Vec<usize>,
    pub child: NetDescription,
    /// `φ*` searched for the derived child.
    pub accel: AcceleratorConfig,
    pub report: CostReport,
    pub iterations: usize,
    pub steps: usize,
    pub history: Vec<TracePoint>,
}

fn trace_line(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value).expect("trace serializes");
    writeln!(out, "{text}").map_err(|e| Error::io("co-search trace", e))
}

#[derive(Serialize)]
struct Abort<'a> {
    abort: &'a str,
    iteration: usize,
    step: usize,
    path: &'a [usize],
    alpha: Vec<Vec<f64>>,
}

fn alpha_rows(sn: &Supernet) -> Vec<Vec<f64>> {
    sn.arch.alpha.iter().map(|a| a.data().to_vec()).collect()
}

/// Runs the DAS inner loop on `net` and returns the argmax configuration.
fn das_phase(
    hw: &mut HwParams,
    opt: &mut DasOptimizer,
    cfg: &CoSearchConfig,
    menus: &Menus,
    net: &[crate::accel::LayerDesc],
    rng: &mut ChaCha8Rng,
) -> Result<(AcceleratorConfig, Vec<usize>, f64)> {
    if cfg.reset_phi {
        let tau = hw.tau;
        *hw = HwParams::uniform(menus, net.len(), tau);
        *opt = DasOptimizer::new(hw, cfg.das_signal).with_lr(cfg.das_lr);
    }
    let mut last = f64::NAN;
    for _ in 0..cfg.das_steps {
        last = das_step(hw, net, menus, opt, rng)?.cost;
    }
    let choices = hw.argmax_choices();
    Ok((menus.decode(&choices, net.len()), choices, last))
}

/// The co-search loop. `teacher` is used only when `cfg.distill` asks for
/// it; `trace` receives one JSON object per traced iteration.
pub fn run(
    cfg: &CoSearchConfig,
    menus: &Menus,
    teacher: Option<Teacher<'_>>,
    mut trace: Option<&mut dyn Write>,
) -> Result<CoSearchOutcome> {
    cfg.validate()?;
    menus.validate().map_err(Error::config)?;
    if cfg.distill != DistillMode::None && teacher.is_none() && cfg.task_loss {
        return Err(Error::config("distillation requested without a teacher"));
    }
    let teacher = if cfg.distill == DistillMode::None { None } else { teacher };
    let betas = cfg.distill.apply(cfg.betas);
    let net_cfg = cfg.net_config();
    let mut sn = Supernet::new(net_cfg.clone(), cfg.tau, cfg.k, cfg.seed)?;
    let candidates = candidate_layers(&net_cfg);
    let n_layers = candidates.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut arch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa1fa);
    let mut das_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd0a5);
    let mut runner = EnvRunner::new(cfg.env.make(), cfg.seed);
    let mut held_out = EnvRunner::new(cfg.env.make(), cfg.seed.wrapping_add(0x0b11_e7e1));
    let mut held_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb11e);

    let schedule = cfg.train_config(cfg.total_steps).schedule();
    let iterations = cfg.total_steps / cfg.rollout_len;
    let tau_schedule = TemperatureSchedule { initial: cfg.tau, ..TemperatureSchedule::for_budget(iterations) };
    let mut rms = Rmsprop::new(sn.net.params().tensors(), cfg.rms_decay, cfg.rms_eps);
    let mut arch_opt = ArchOptimizer::with_lr(&sn.arch, cfg.alpha_lr);
    let mut hw = HwParams::uniform(menus, n_layers, cfg.tau);
    let mut das_opt = DasOptimizer::new(&hw, cfg.das_signal).with_lr(cfg.das_lr);
    let mut history = Vec::new();
    let mut steps = 0;

    for it in 0..iterations {
        let tau = tau_schedule.at(it);
        sn.arch.tau = tau;
        hw.tau = tau;
        let sample = sn.sample(&mut arch_rng);
        let mut phases = Vec::new();

        let rollout = if cfg.task_loss {
            phases.push("rollout");
            Some(rollout_with(&mut runner, &sn.net, &sample.hard, cfg.rollout_len, ActionMode::Sample, &mut rng)?)
        } else {
            None
        };
        steps = if cfg.task_loss { runner.total_steps() } else { steps + cfg.rollout_len };

        phases.push("das");
        let child_layers = layer_descs(&net_cfg, &sample.hard);
        let (phi_cfg, phi_star, das_cost) = das_phase(&mut hw, &mut das_opt, cfg, menus, &child_layers, &mut das_rng)?;
        let report = pipeline_cost(&child_layers, &phi_cfg)?;
        let table = layer_cost_table(&candidates, &phi_cfg)?;
        let cell_costs = &table[1..=cfg.n_cells];
        let cost_grad = cost_gradient_with(cfg.cost_grad, &sample, cell_costs);

        phases.push("loss");
        let step_result = (|| -> Result<(LossTerms, Vec<Vec<f64>>)> {
            let Some(rollout) = rollout.as_ref() else {
                let zero = sample.soft.iter().map(|s| vec![0.0; s.len()]).collect();
                return Ok((LossTerms::default(), zero));
            };
            let targets = teacher.map(|t| t.targets(rollout)).transpose()?;
            let grads = sn.task_gradients(&sample, rollout, cfg.gamma, &betas, targets.as_ref())?;
            optimizer_step(sn.net.params_mut(), grads.weights, &mut rms, schedule.at(steps), cfg.clip_norm)?;
            if !cfg.bilevel {
                return Ok((grads.terms, grads.alpha));
            }
            let held =
                rollout_with(&mut held_out, &sn.net, &sample.hard, cfg.rollout_len, ActionMode::Sample, &mut held_rng)?;
            let targets = teacher.map(|t| t.targets(&held)).transpose()?;
            let h = sn.task_gradients(&sample, &held, cfg.gamma, &betas, targets.as_ref())?;
            Ok((grads.terms, h.alpha))
        })();
        let (terms, task_alpha) = match step_result {
            Ok(v) => v,
            Err(e) => {
                if let Some(w) = trace.as_deref_mut() {
                    let msg = e.to_string();
                    let abort = Abort { abort: &msg, iteration: it, step: steps, path: &sample.hard, alpha: alpha_rows(&sn) };
                    trace_line(w, &abort)?;
                }
                return Err(e);
            }
        };
        if cfg.task_loss {
            phases.push("theta");
        }
        phases.push("alpha");
        let g = combine(&task_alpha, &cost_grad, cfg.lambda);
        if g.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient { op: "alpha", param: it }.into());
        }
        arch_opt.step(&mut sn.arch, &g)?;

        let last = it + 1 == iterations;
        if last || (cfg.trace_interval > 0 && it % cfg.trace_interval == 0) {
            let point = TracePoint {
                iteration: it,
                step: steps,
                tau,
                path: sample.hard.clone(),
                phases: phases.iter().map(|s| s.to_string()).collect(),
                bottleneck_cycles: report.bottleneck_cycles,
                summed_cycles: report.total_cycles,
                fps: report.fps,
                das_cost,
                losses: terms,
                episode_return_mean30: crate::acrl::recent_mean(runner.finished_returns()),
                alpha: alpha_rows(&sn),
                phi_star,
            };
            if let Some(w) = trace.as_deref_mut() {
                trace_line(w, &point)?;
            }
            history.push(point);
        }
    }

    // Final accelerator search on the derived child, continuing from φ.
    let child_path = sn.derive_path();
    let child = NetDescription::of_path(&net_cfg, &child_path);
    let child_layers = child.layer_descs();
    for _ in 0..cfg.final_das_steps {
        das_step(&mut hw, &child_layers, menus, &mut das_opt, &mut das_rng)?;
    }
    let accel = menus.decode(&hw.argmax_choices(), child_layers.len());
    let report = pipeline_cost(&child_layers, &accel)?;
    Ok(CoSearchOutcome { supernet: sn, hw, child_path, child, accel, report, iterations, steps, history })
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    pub net: ActorCriticNet,
    pub score: f64,
    pub report: Option<TrainReport>,
}

/// Trains the derived child from its inherited weights for `budget` steps,
/// then scores it over `cfg.eval_episodes` episodes. Budget 0 scores the
/// inherited weights.
pub fn finetune_child(
    sn: &Supernet,
    path: &[usize],
    cfg: &CoSearchConfig,
    budget: usize,
    teacher: Option<Teacher<'_>>,
) -> Result<Finetuned> {
    let mut net = sn.child_net(path)?;
    let child_path = net.default_path();
    let eval_seed = cfg.seed.wrapping_add(1_000_000);
    if budget == 0 {
        let score = evaluate_net(&net, &child_path, cfg.env, cfg.eval_episodes, eval_seed, ActionMode::Sample)?;
        return Ok(Finetuned { net, score, report: None });
    }
    let tc = cfg.train_config(budget);
    let report = train(&mut net, &child_path, &tc, teacher, None)?;
    Ok(Finetuned { net, score: report.final_score, report: Some(report) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRun {
    pub lambda: f64,
    pub seed: u64,
    pub score: f64,
    pub fps: f64,
    pub macs: u64,
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub lambda: f64,
    pub runs: usize,
    pub mean_score: f64,
    pub mean_fps: f64,
    pub mean_macs: f64,
}

/// Search, fine-tune and score once per `(λ, seed)`.
pub fn pareto_runs(
    base: &CoSearchConfig,
    menus: &Menus,
    lambdas: &[f64],
    seeds: &[u64],
    finetune_budget: usize,
    teacher: Option<Teacher<'_>>,
) -> Result<Vec<ParetoRun>> {
    use rayon::prelude::*;
    let jobs: Vec<(f64, u64)> = lambdas.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    jobs.par_iter()
        .map(|&(lambda, seed)| {
            let cfg = CoSearchConfig { lambda, seed, ..base.clone() };
            let out = run(&cfg, menus, teacher, None)?;
            let tuned = finetune_child(&out.supernet, &out.child_path, &cfg, finetune_budget, teacher)?;
            Ok(ParetoRun {
                lambda,
                seed,
                score: tuned.score,
                fps: out.report.fps,
                macs: out.child.total_macs,
                ops: out.child.ops.iter().map(|o| o.to_string()).collect(),
            })
        })
        .collect()
}

/// Means over seeds, one row per `λ`, in the order given.
pub fn aggregate(runs: &[ParetoRun], lambdas: &[f64]) -> Vec<ParetoRow> {
    lambdas
        .iter()
        .map(|&lambda| {
            let rs: Vec<&ParetoRun> = runs.iter().filter(|r| r.lambda == lambda).collect();
            let n = rs.len().max(1) as f64;
            ParetoRow {
                lambda,
                runs: rs.len(),
                mean_score: rs.iter().map(|r| r.score).sum::<f64>() / n,
                mean_fps: rs.iter().map(|r| r.fps).sum::<f64>() / n,
                mean_macs: rs.iter().map(|r| r.macs as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// λ sweep: per-run results and the per-λ means.
pub fn pareto_sweep(
    base: &CoSearchConfig,
    menus: &Menus,
    lambdas: &[f64],
    seeds: &[u64],
    finetune_budget: usize,
    teacher: Option<Teacher<'_>>,
) -> Result<(Vec<ParetoRun>, Vec<ParetoRow>)> {
    let runs = pareto_runs(base, menus, lambdas, seeds, finetune_budget, teacher)?;
    let rows = aggregate(&runs, lambdas);
    Ok((runs, rows))
}

/// Layer cost table of the derived child's cells under `outcome.accel`;
/// used to check cost-driven derivations.
pub fn cell_cost_table(cfg: &CoSearchConfig, accel: &AcceleratorConfig) -> Result<Vec<Vec<f64>>> {
    let table = layer_cost_table(&candidate_layers(&cfg.net_config()), accel)?;
    Ok(table[1..=cfg.n_cells].to_vec())
}

/// Accelerator cost of an arbitrary child under `menus`' budget.
pub fn child_cost(child: &NetDescription, accel: &AcceleratorConfig, menus: &Menus) -> f64 {
    config_cost(&child.layer_descs(), accel, menus).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CoSearchConfig {
        CoSearchConfig { seed, total_steps: 200, n_cells: 2, channels: 4, hidden: 16, trace_interval: 1, ..Default::default() }
    }

    #[test]
    fn phases_run_in_order() {
        let out = run(&small(1), &Menus::tiny(), None, None).unwrap();
        assert_eq!(out.iterations, 40);
        for p in &out.history {
            assert_eq!(p.phases, ["rollout", "das", "loss", "theta", "alpha"]);
        }
    }

    #[test]
    fn zero_lambda_matches_pure_task_search() {
        let a = run(&small(2), &Menus::tiny(), None, None).unwrap();
        let b = run(&CoSearchConfig { cost_grad: CostGradMode::Indicator, ..small(2) }, &Menus::tiny(), None, None).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(run(&CoSearchConfig { lambda: -1.0, ..small(0) }, &Menus::tiny(), None, None).is_err());
    }

    #[test]
    fn zero_budget_finetune_is_plain_evaluation() {
        let cfg = small(3);
        let out = run(&cfg, &Menus::tiny(), None, None).unwrap();
        let a = finetune_child(&out.supernet, &out.child_path, &cfg, 0, None).unwrap();
        let b = finetune_child(&out.supernet, &out.child_path, &cfg, 0, None).unwrap();
        assert!(a.report.is_none());
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn pareto_rows_follow_lambda_list() {
        let cfg = CoSearchConfig { total_steps: 50, ..small(0) };
        let (runs, rows) = pareto_sweep(&cfg, &Menus::tiny(), &[0.0, 1e-4], &[0, 1], 0, None).unwrap();
        assert_eq!(runs.len(), 4);
        assert_eq!(rows.iter().map(|r| (r.lambda, r.runs)).collect::<Vec<_>>(), vec![(0.0, 2), (1e-4, 2)]);
    }
}
