//! Seedable toy MDPs with image-like observations.
//!
//! Three grid tasks share one implementation: a fixed goal-reaching maze,
//! a maze whose layout is drawn from the reset seed, and a key-door maze
//! where the goal sits behind a door that only opens once the key has been
//! collected. Observations are one-hot planes `[wall, agent, goal, key, door]`
//! over the grid, so convolutional operators see real spatial structure.

mod grid;
mod value_iteration;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorcore::Tensor;

pub use grid::{GridState, GridWorld, Layout, Pos, ACTIONS, GOAL_REWARD, PLANES, SIZE, STEP_REWARD};
pub use value_iteration::{optimal_return, value_iteration, ValueTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("step called after the episode ended; call reset first")]
    EpisodeOver,
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("unknown environment {0:?} (expected gridworld, seeded-gridworld or keydoor)")]
    Unknown(String),
}

/// Static description of an MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    /// `[C, H, W]`
    pub obs_shape: [usize; 3],
    pub num_actions: usize,
    /// Step limit per episode.
    pub horizon: usize,
    pub gamma: f64,
    /// Inclusive bounds on any single reward.
    pub reward_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Tensor,
    pub action: usize,
    pub reward: f64,
    pub next_state: Tensor,
    /// The task ended; there is no successor value to bootstrap from.
    pub terminal: bool,
    /// The step limit cut the episode short; the successor still has value.
    pub truncated: bool,
}

impl Transition {
    pub fn episode_done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &MdpSpec;
    /// Starts a new episode. Equal seeds give equal initial states.
    fn reset(&mut self, seed: u64) -> Tensor;
    fn step(&mut self, action: usize) -> Result<Transition, EnvError>;
    fn observation(&self) -> Tensor;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    /// Fixed 8×8 maze, fixed start and goal.
    Gridworld,
    /// Walls, start and goal drawn from the reset seed.
    SeededGridworld,
    /// Fixed 8×8 maze split by a wall with a locked door.
    Keydoor,
}

impl EnvKind {
    pub fn spec(self) -> MdpSpec {
        self.make().spec().clone()
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::SeededGridworld => "seeded-gridworld",
            EnvKind::Keydoor => "keydoor",
        }
    }

    pub fn make(self) -> GridWorld {
        GridWorld::new(self)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gridworld" => Ok(EnvKind::Gridworld),
            "seeded-gridworld" => Ok(EnvKind::SeededGridworld),
            "keydoor" | "key-door" => Ok(EnvKind::Keydoor),
            other => Err(EnvError::Unknown(other.to_string())),
        }
    }
}

/// `Σ_t γ^t r_t`
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
        assert_eq!(discounted_return(&[-3.5], 0.3), -3.5);
    }

    #[test]
    fn env_names_round_trip() {
        for k in [EnvKind::Gridworld, EnvKind::SeededGridworld, EnvKind::Keydoor] {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("atari".parse::<EnvKind>().is_err());
    }
}
