//! Differentiable accelerator search.
//!
//! Every design parameter gets a logit vector `φ^m`. A step draws one hard
//! Gumbel sample per parameter, costs the assembled accelerator, and pushes
//! the soft weight of each chosen entry against that (detached) cost:
//! `∂/∂φ^m_i = L̂ · ∂GS(φ^m)_chosen/∂φ^m_i`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{pipeline_cost, AcceleratorConfig, CostReport, LayerDesc, Menus, INFEASIBLE_PENALTY};
use crate::supernet::{argmax, gumbel_softmax_jacobian, gumbel_softmax_with_noise, sample_gumbel, TemperatureSchedule};
use crate::tensorcore::{Adam, Tensor, TensorError};
use crate::{Error, Result};

/// Default cap on brute-force enumeration.
pub const BRUTE_FORCE_CAP: f64 = 1e6;

/// Cost DAS minimizes: the bottleneck chunk's cycles, or
/// [`INFEASIBLE_PENALTY`] when the accelerator exceeds the resource budget.
/// Layers that cannot run add the penalty through the cost model.
pub fn config_cost(net: &[LayerDesc], cfg: &AcceleratorConfig, menus: &Menus) -> (f64, Option<CostReport>) {
    let Ok(report) = pipeline_cost(net, cfg) else {
        return (INFEASIBLE_PENALTY, None);
    };
    let over = cfg.pe_total() > menus.budget.pe_max || cfg.buffer_total() > menus.budget.sram_max;
    let cost = if over { INFEASIBLE_PENALTY.max(report.bottleneck_cycles) } else { report.bottleneck_cycles };
    (cost, Some(report))
}

/// Accelerator logits, one vector per design parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HwParams {
    pub phi: Vec<Tensor>,
    pub tau: f64,
    pub names: Vec<String>,
}

impl HwParams {
    pub fn uniform(menus: &Menus, n_layers: usize, tau: f64) -> Self {
        HwParams {
            phi: menus.param_sizes(n_layers).iter().map(|&n| Tensor::zeros(&[n])).collect(),
            tau,
            names: menus.param_names(n_layers),
        }
    }

    /// Logits for an arbitrary list of choice counts.
    pub fn from_sizes(sizes: &[usize], tau: f64) -> Self {
        HwParams {
            phi: sizes.iter().map(|&n| Tensor::zeros(&[n])).collect(),
            tau,
            names: (0..sizes.len()).map(|m| format!("p{m}")).collect(),
        }
    }

    pub fn validate(&self, sizes: &[usize]) -> Result<(), TensorError> {
        if !(self.tau > 0.0) {
            return Err(TensorError::invalid("das", format!("temperature must be positive, got {}", self.tau)));
        }
        let have: Vec<usize> = self.phi.iter().map(Tensor::len).collect();
        if have != sizes || sizes.contains(&0) {
            return Err(TensorError::invalid("das", format!("logit sizes {have:?} do not match menus {sizes:?}")));
        }
        Ok(())
    }

    pub fn argmax_choices(&self) -> Vec<usize> {
        self.phi.iter().map(|p| argmax(p.data())).collect()
    }
}

/// One hard Gumbel draw per design parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HwSample {
    pub choices: Vec<usize>,
    pub soft: Vec<Vec<f64>>,
    pub tau: f64,
}

pub fn sample_choices<R: Rng + ?Sized>(hw: &HwParams, rng: &mut R) -> HwSample {
    let mut choices = Vec::with_capacity(hw.phi.len());
    let mut soft = Vec::with_capacity(hw.phi.len());
    for p in &hw.phi {
        let noise: Vec<f64> = p.data().iter().map(|_| sample_gumbel(rng)).collect();
        let z: Vec<f64> = p.data().iter().zip(&noise).map(|(a, g)| a + g).collect();
        choices.push(argmax(&z));
        soft.push(gumbel_softmax_with_noise(p.data(), &noise, hw.tau).expect("validated temperature"));
    }
    HwSample { choices, soft, tau: hw.tau }
}

/// Samples a full accelerator for an `n_layers` network.
pub fn sample_config<R: Rng + ?Sized>(
    hw: &HwParams,
    menus: &Menus,
    n_layers: usize,
    rng: &mut R,
) -> (AcceleratorConfig, HwSample) {
    let s = sample_choices(hw, rng);
    (menus.decode(&s.choices, n_layers), s)
}

/// `L̂ · ∂GS_chosen/∂φ_i` for every parameter.
pub fn surrogate_gradient(sample: &HwSample, signal: f64) -> Vec<Vec<f64>> {
    sample
        .choices
        .iter()
        .zip(&sample.soft)
        .map(|(&c, s)| {
            let j = gumbel_softmax_jacobian(s, sample.tau);
            j[c].iter().map(|d| signal * d).collect()
        })
        .collect()
}

/// What multiplies the chosen soft weights in the surrogate loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSignal {
    /// The cost itself.
    Raw,
    /// `ln(cost)` minus a running mean of past `ln(cost)`.
    #[default]
    LogAdvantage,
}

/// Adam state and cost baseline carried across steps.
#[derive(Debug, Clone)]
pub struct DasOptimizer {
    adam: Adam,
    pub signal: CostSignal,
    baseline: Option<f64>,
    pub baseline_decay: f64,
}

impl DasOptimizer {
    /// Adam at learning rate 1e-2.
    pub fn new(hw: &HwParams, signal: CostSignal) -> Self {
        DasOptimizer { adam: Adam::new(&hw.phi, 1e-2, 0.9, 0.999), signal, baseline: None, baseline_decay: 0.9 }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.adam.lr = lr;
        self
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// One update of `hw` from a sample and its cost. Returns `L̂`.
    pub fn update(&mut self, hw: &mut HwParams, sample: &HwSample, cost: f64) -> Result<f64, TensorError> {
        if !cost.is_finite() {
            return Err(TensorError::NonFinite { op: "das cost" });
        }
        let signal = match self.signal {
            CostSignal::Raw => cost,
            CostSignal::LogAdvantage => {
                let x = cost.max(1.0).ln();
                let b = *self.baseline.get_or_insert(x);
                self.baseline = Some(self.baseline_decay * b + (1.0 - self.baseline_decay) * x);
                x - b
            }
        };
        let g: Vec<Tensor> = surrogate_gradient(sample, signal).into_iter().map(Tensor::vector).collect();
        self.adam.step(&mut hw.phi, &g)?;
        Ok(signal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DasStep {
    pub choices: Vec<usize>,
    pub cost: f64,
    pub signal: f64,
    pub feasible: bool,
}

/// Samples, costs and updates once. Network weights and `α` are not
/// touched: only `hw` and `opt` change.
pub fn das_step<R: Rng + ?Sized>(
    hw: &mut HwParams,
    net: &[LayerDesc],
    menus: &Menus,
    opt: &mut DasOptimizer,
    rng: &mut R,
) -> Result<DasStep, TensorError> {
    let (cfg, sample) = sample_config(hw, menus, net.len(), rng);
    let (cost, report) = config_cost(net, &cfg, menus);
    let signal = opt.update(hw, &sample, cost)?;
    let feasible = cost < INFEASIBLE_PENALTY && report.is_some_and(|r| r.is_feasible());
    Ok(DasStep { choices: sample.choices, cost, signal, feasible })
}

#[derive(Debug, Clone)]
pub struct DasResult {
    pub hw: HwParams,
    pub choices: Vec<usize>,
    pub config: AcceleratorConfig,
    pub cost: f64,
    pub report: Option<CostReport>,
    pub steps: Vec<DasStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub steps: usize,
    pub seed: u64,
    pub signal: CostSignal,
    pub lr: f64,
    /// Initial temperature; decays like the architecture temperature over
    /// `steps`.
    pub tau: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { steps: 1000, seed: 0, signal: CostSignal::LogAdvantage, lr: 1e-2, tau: 5.0 }
    }
}

/// Runs `opts.steps` DAS steps from uniform logits and returns the
/// per-parameter argmax accelerator. With `trace`, writes the logits after
/// every step as CSV.
pub fn search(net: &[LayerDesc], menus: &Menus, opts: &SearchOptions, trace: Option<&mut dyn Write>) -> Result<DasResult> {
    menus.validate().map_err(Error::config)?;
    let mut hw = HwParams::uniform(menus, net.len(), opts.tau);
    let mut opt = DasOptimizer::new(&hw, opts.signal).with_lr(opts.lr);
    let schedule = TemperatureSchedule { initial: opts.tau, ..TemperatureSchedule::for_budget(opts.steps) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = trace.map(PhiTrace::new);
    if let Some(t) = trace.as_mut() {
        t.header(&hw)?;
    }
    let mut steps = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        hw.tau = schedule.at(step);
        let s = das_step(&mut hw, net, menus, &mut opt, &mut rng)?;
        if let Some(t) = trace.as_mut() {
            t.row(step, s.cost, &hw)?;
        }
        steps.push(s);
    }
    let choices = hw.argmax_choices();
    let config = menus.decode(&choices, net.len());
    let (cost, report) = config_cost(net, &config, menus);
    Ok(DasResult { hw, choices, config, cost, report, steps })
}

/// Writes `step,tau,cost,<param>[<choice>]...` rows.
pub struct PhiTrace<'w> {
    out: &'w mut dyn Write,
}

impl<'w> PhiTrace<'w> {
    pub fn new(out: &'w mut dyn Write) -> Self {
        PhiTrace { out }
    }

    fn io(e: std::io::Error) -> Error {
        Error::io("phi trace", e)
    }

    pub fn header(&mut self, hw: &HwParams) -> Result<()> {
        let mut cols = vec!["step".to_string(), "tau".into(), "cost".into()];
        for (name, p) in hw.names.iter().zip(&hw.phi) {
            cols.extend((0..p.len()).map(|i| format!("{name}[{i}]")));
        }
        writeln!(self.out, "{}", cols.join(",")).map_err(Self::io)
    }

    pub fn row(&mut self, step: usize, cost: f64, hw: &HwParams) -> Result<()> {
        let mut cols = vec![step.to_string(), hw.tau.to_string(), cost.to_string()];
        for p in &hw.phi {
            cols.extend(p.data().iter().map(f64::to_string));
        }
        writeln!(self.out, "{}", cols.join(",")).map_err(Self::io)
    }
}

#[derive(Debug, Clone)]
pub struct BruteForce {
    pub choices: Vec<usize>,
    pub config: AcceleratorConfig,
    pub cost: f64,
    pub evaluated: usize,
}

/// Mixed-radix decode of `index` over `sizes`, first parameter fastest.
fn unrank(mut index: usize, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&n| {
            let c = index % n;
            index /= n;
            c
        })
        .collect()
}

/// Exhaustive minimum of [`config_cost`] over the whole menu space. Ties go
/// to the lowest enumeration index.
pub fn brute_force(net: &[LayerDesc], menus: &Menus, cap: f64) -> Result<BruteForce> {
    menus.validate().map_err(Error::config)?;
    let sizes = menus.param_sizes(net.len());
    let total = menus.design_space_size(net.len());
    if total > cap {
        return Err(Error::config(format!("design space has {total:e} points, above the brute-force cap {cap:e}")));
    }
    let total = total as usize;
    let (cost, index) = (0..total)
        .into_par_iter()
        .map(|i| (config_cost(net, &menus.decode(&unrank(i, &sizes), net.len()), menus).0, i))
        .reduce(|| (f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let choices = unrank(index, &sizes);
    Ok(BruteForce { config: menus.decode(&choices, net.len()), choices, cost, evaluated: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::{Interconnect, LoopOrder};

    fn net() -> Vec<LayerDesc> {
        vec![LayerDesc::conv("a", 8, 16, 8, 8, 3), LayerDesc::conv("b", 16, 16, 8, 8, 3)]
    }

    #[test]
    fn single_choice_menus_are_deterministic() {
        let m = Menus { pe_rows: vec![8], ..Menus::tiny() };
        let m = Menus { n_chunks: vec![1], buffer_bytes: vec![64 << 10], loop_order: vec![LoopOrder::WeightReuse], ..m };
        let hw = HwParams::uniform(&m, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, _) = sample_config(&hw, &m, 2, &mut rng);
        let (b, _) = sample_config(&hw, &m, 2, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.chunks[0].pe_rows, 8);
    }

    #[test]
    fn fixed_seed_repeats() {
        let m = Menus::default();
        let hw = HwParams::uniform(&m, 4, 1.0);
        let draw = || sample_config(&hw, &m, 4, &mut ChaCha8Rng::seed_from_u64(1)).0;
        assert_eq!(draw(), draw());
    }

    #[test]
    fn brute_force_picks_largest_pe_array() {
        let m = Menus {
            n_chunks: vec![1],
            pe_rows: vec![4, 8, 16],
            pe_cols: vec![4, 8, 16],
            interconnect: vec![Interconnect::WeightStationary],
            buffer_bytes: vec![128 << 10],
            loop_order: vec![LoopOrder::WeightReuse],
            bandwidth: 1e6,
            ..Menus::tiny()
        };
        let best = brute_force(&net(), &m, BRUTE_FORCE_CAP).unwrap();
        assert_eq!(best.evaluated, 9);
        assert_eq!(best.config.chunks[0].pe_count(), 256);
    }

    #[test]
    fn one_feasible_point_wins_regardless_of_cost() {
        // Only the larger buffer holds a 16-channel tile of the 5×5 layer.
        let layer = vec![LayerDesc::conv("x", 64, 64, 8, 8, 5)];
        let m = Menus { n_chunks: vec![1], buffer_bytes: vec![4 << 10, 128 << 10], ..Menus::tiny() };
        let m = Menus { pe_rows: vec![4], loop_order: vec![LoopOrder::WeightReuse], ..m };
        let best = brute_force(&layer, &m, BRUTE_FORCE_CAP).unwrap();
        assert_eq!(best.config.chunks[0].buffer_bytes, 128 << 10);
        assert!(best.cost < INFEASIBLE_PENALTY);
    }

    #[test]
    fn cap_is_enforced() {
        assert!(brute_force(&net(), &Menus::default(), BRUTE_FORCE_CAP).is_err());
    }

    #[test]
    fn zero_budget_returns_initial_argmax() {
        let m = Menus::tiny();
        let r = search(&net(), &m, &SearchOptions { steps: 0, ..SearchOptions::default() }, None).unwrap();
        assert!(r.choices.iter().all(|&c| c == 0));
        assert!(r.report.unwrap().is_feasible());
    }

    #[test]
    fn two_point_toy_prefers_the_cheap_choice() {
        let mut wins = 0;
        for seed in 0..20 {
            let mut hw = HwParams::from_sizes(&[2], 1.0);
            let mut opt = DasOptimizer::new(&hw, CostSignal::LogAdvantage);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let s = sample_choices(&hw, &mut rng);
                let cost = [1.0, 100.0][s.choices[0]];
                opt.update(&mut hw, &s, cost).unwrap();
            }
            wins += usize::from(hw.argmax_choices()[0] == 0);
        }
        assert!(wins >= 19, "{wins}/20");
    }

    #[test]
    fn phi_trace_has_one_column_per_logit() {
        let m = Menus::tiny();
        let mut buf = Vec::new();
        search(&net(), &m, &SearchOptions { steps: 3, ..SearchOptions::default() }, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let width = 3 + m.param_sizes(2).iter().sum::<usize>();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
    }
}
