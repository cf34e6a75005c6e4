use rand::Rng;

use crate::env::Environment;
use crate::Error;
use crate::tensorcore::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Draw from the softmax policy.
    #[default]
    Sample,
    /// Take the most probable action.
    Greedy,
}

/// Keeps an environment running across rollouts, resetting it whenever an
/// episode ends and remembering finished episode returns.
#[derive(Debug)]
pub struct EnvRunner<E> {
    env: E,
    obs: Tensor,
    base_seed: u64,
    episodes: u64,
    ep_return: f64,
    finished: Vec<f64>,
    total_steps: usize,
}

impl<E: Environment> EnvRunner<E> {
    pub fn new(mut env: E, seed: u64) -> Self {
        let obs = env.reset(Self::episode_seed(seed, 0));
        EnvRunner { env, obs, base_seed: seed, episodes: 0, ep_return: 0.0, finished: Vec::new(), total_steps: 0 }
    }

    fn episode_seed(base: u64, episode: u64) -> u64 {
        base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode)
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn observation(&self) -> &Tensor {
        &self.obs
    }

    /// Undiscounted returns of finished episodes, oldest first.
    pub fn finished_returns(&self) -> &[f64] {
        &self.finished
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn start_episode(&mut self) {
        self.episodes += 1;
        self.ep_return = 0.0;
        self.obs = self.env.reset(Self::episode_seed(self.base_seed, self.episodes));
    }
}

/// Up to `L` consecutive transitions of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `terminal[t]`: step `t` ended the task.
    pub terminal: Vec<bool>,
    /// Observation after the final step, kept for bootstrapping.
    pub last_next_state: Tensor,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// `V(s_T)` after the final step under the collecting policy; 0 when the
    /// final step was terminal.
    pub bootstrap: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn ends_terminal(&self) -> bool {
        self.terminal.last().copied().unwrap_or(false)
    }

    /// States followed by the post-rollout state: `[T + 1, C, H, W]`.
    pub fn state_batch(&self) -> Result<Tensor, TensorError> {
        let mut all = self.states.clone();
        all.push(self.last_next_state.clone());
        Tensor::stack(&all)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Steps `runner` for `len` transitions or until the episode ends.
///
/// `policy` maps a single observation `[C, H, W]` to action logits and a
/// state value.
pub fn collect_rollout<E, P, R>(
    runner: &mut EnvRunner<E>,
    mut policy: P,
    len: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<Rollout, Error>
where
    E: Environment,
    P: FnMut(&Tensor) -> Result<(Vec<f64>, f64), TensorError>,
    R: Rng + ?Sized,
{
    if len == 0 {
        return Err(TensorError::invalid("collect_rollout", "rollout length must be positive").into());
    }
    let cap = len.min(64);
    let mut r = Rollout {
        states: Vec::with_capacity(cap),
        actions: Vec::with_capacity(cap),
        rewards: Vec::with_capacity(cap),
        terminal: Vec::with_capacity(cap),
        last_next_state: runner.obs.clone(),
        log_probs: Vec::with_capacity(cap),
        values: Vec::with_capacity(cap),
        bootstrap: 0.0,
    };
    let mut ended = false;
    while r.len() < len && !ended {
        let (logits, value) = policy(&runner.obs)?;
        let lp = log_softmax(&logits);
        let action = match mode {
            ActionMode::Sample => sample_categorical(&lp, rng),
            ActionMode::Greedy => argmax(&lp),
        };
        let tr = runner.env.step(action)?;
        runner.total_steps += 1;
        runner.ep_return += tr.reward;
        r.states.push(tr.state);
        r.actions.push(action);
        r.rewards.push(tr.reward);
        r.terminal.push(tr.terminal);
        r.log_probs.push(lp[action]);
        r.values.push(value);
        r.last_next_state = tr.next_state.clone();
        runner.obs = tr.next_state;
        ended = tr.terminal || tr.truncated;
    }
    if !r.ends_terminal() {
        r.bootstrap = policy(&r.last_next_state)?.1;
    }
    if ended {
        runner.finished.push(runner.ep_return);
        runner.start_episode();
    }
    Ok(r)
}

/// Runs `episodes` full episodes and returns their mean undiscounted return.
/// Episode `i` resets with seed `seed + i`.
pub fn evaluate<E, P, R>(
    env: &mut E,
    mut policy: P,
    episodes: usize,
    seed: u64,
    mode: ActionMode,
    rng: &mut R,
) -> Result<f64, Error>
where
    E: Environment,
    P: FnMut(&Tensor) -> Result<Vec<f64>, TensorError>,
    R: Rng + ?Sized,
{
    let mut total = 0.0;
    for i in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(i as u64));
        loop {
            let lp = log_softmax(&policy(&obs)?);
            let a = match mode {
                ActionMode::Sample => sample_categorical(&lp, rng),
                ActionMode::Greedy => argmax(&lp),
            };
            let tr = env.step(a)?;
            total += tr.reward;
            obs = tr.next_state;
            if tr.terminal || tr.truncated {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_policy(_: &Tensor) -> Result<(Vec<f64>, f64), TensorError> {
        Ok((vec![0.0; 4], 0.5))
    }

    #[test]
    fn rollout_has_requested_length_when_episode_continues() {
        let mut runner = EnvRunner::new(EnvKind::Gridworld.make(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = collect_rollout(&mut runner, uniform_policy, 5, ActionMode::Sample, &mut rng).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r.bootstrap, 0.5);
        assert!(r.log_probs.iter().all(|&lp| (lp - 0.25f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn fixed_seed_gives_identical_rollouts() {
        let run = || {
            let mut runner = EnvRunner::new(EnvKind::SeededGridworld.make(), 3);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..20)
                .map(|_| collect_rollout(&mut runner, uniform_policy, 5, ActionMode::Sample, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rollout_stops_at_truncation_and_restarts() {
        let env = EnvKind::Gridworld.make().with_horizon(3);
        let mut runner = EnvRunner::new(env, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = collect_rollout(&mut runner, |_: &Tensor| Ok((vec![9.0, 0.0, 0.0, 0.0], 0.1)), 5, ActionMode::Greedy, &mut rng)
            .unwrap();
        assert_eq!(r.len(), 3);
        assert!(!r.ends_terminal());
        assert_eq!(runner.finished_returns(), &[-0.03]);
    }

    #[test]
    fn categorical_sampling_matches_probabilities() {
        let lp: Vec<f64> = [0.1f64, 0.2, 0.7].iter().map(|p| p.ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_categorical(&lp, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.1, 0.2, 0.7]) {
            assert!((*c as f64 / 20_000.0 - p).abs() < 0.015);
        }
    }
}
