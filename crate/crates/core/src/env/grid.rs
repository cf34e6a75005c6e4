use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvKind, Environment, MdpSpec, Transition};
use crate::tensorcore::Tensor;

pub const SIZE: usize = 8;
/// wall, agent, goal, key, door
pub const PLANES: usize = 5;
/// up, down, left, right
pub const ACTIONS: usize = 4;
pub const STEP_REWARD: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;

const WALL: usize = 0;
const AGENT: usize = 1;
const GOAL: usize = 2;
const KEY: usize = 3;
const DOOR: usize = 4;

pub type Pos = (usize, usize);

/// Static part of a grid: walls and object placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub walls: Vec<bool>,
    pub start: Pos,
    pub goal: Pos,
    pub key: Option<Pos>,
    pub door: Option<Pos>,
}

impl Layout {
    fn bordered() -> Vec<bool> {
        let mut walls = vec![false; SIZE * SIZE];
        for i in 0..SIZE {
            walls[i] = true;
            walls[(SIZE - 1) * SIZE + i] = true;
            walls[i * SIZE] = true;
            walls[i * SIZE + SIZE - 1] = true;
        }
        walls
    }

    pub fn is_wall(&self, (r, c): Pos) -> bool {
        self.walls[r * SIZE + c]
    }

    /// Fixed zig-zag maze; shortest path 10 moves.
    pub fn fixed() -> Self {
        let mut walls = Self::bordered();
        for c in 2..=6 {
            walls[3 * SIZE + c] = true;
        }
        for c in 1..=5 {
            walls[5 * SIZE + c] = true;
        }
        Layout { walls, start: (1, 1), goal: (6, 6), key: None, door: None }
    }

    /// Column 4 is a wall except for a door at row 5; the key sits in the
    /// start half, the goal behind the door.
    pub fn key_door() -> Self {
        let mut walls = Self::bordered();
        for r in 1..SIZE - 1 {
            walls[r * SIZE + 4] = true;
        }
        walls[5 * SIZE + 4] = false;
        Layout { walls, start: (1, 1), goal: (1, 6), key: Some((6, 1)), door: Some((5, 4)) }
    }

    /// A handful of random interior walls plus random start and goal,
    /// redrawn until the goal is reachable.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let interior: Vec<Pos> = (1..SIZE - 1).flat_map(|r| (1..SIZE - 1).map(move |c| (r, c))).collect();
        loop {
            let mut cells = interior.clone();
            cells.shuffle(&mut rng);
            let mut walls = Self::bordered();
            for &(r, c) in &cells[2..8] {
                walls[r * SIZE + c] = true;
            }
            let layout = Layout { walls, start: cells[0], goal: cells[1], key: None, door: None };
            if layout.shortest_path(false).is_some() {
                return layout;
            }
        }
    }

    /// BFS move count from start to goal, ignoring the door when `open_door`.
    pub fn shortest_path(&self, open_door: bool) -> Option<usize> {
        let mut dist = vec![usize::MAX; SIZE * SIZE];
        let mut queue = std::collections::VecDeque::new();
        dist[self.start.0 * SIZE + self.start.1] = 0;
        queue.push_back(self.start);
        while let Some(p) = queue.pop_front() {
            if p == self.goal {
                return Some(dist[p.0 * SIZE + p.1]);
            }
            for a in 0..ACTIONS {
                let q = offset(p, a);
                if self.is_wall(q) || (!open_door && Some(q) == self.door) {
                    continue;
                }
                if dist[q.0 * SIZE + q.1] == usize::MAX {
                    dist[q.0 * SIZE + q.1] = dist[p.0 * SIZE + p.1] + 1;
                    queue.push_back(q);
                }
            }
        }
        None
    }
}

pub(crate) fn offset((r, c): Pos, action: usize) -> Pos {
    match action {
        0 => (r.saturating_sub(1), c),
        1 => ((r + 1).min(SIZE - 1), c),
        2 => (r, c.saturating_sub(1)),
        _ => (r, (c + 1).min(SIZE - 1)),
    }
}

/// Dynamic state of a grid episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub pos: Pos,
    pub has_key: bool,
}

/// One step of the deterministic dynamics: `(next, reward, terminal)`.
pub(crate) fn dynamics(layout: &Layout, s: GridState, action: usize) -> (GridState, f64, bool) {
    let target = offset(s.pos, action);
    let blocked = layout.is_wall(target) || (Some(target) == layout.door && !s.has_key);
    let pos = if blocked { s.pos } else { target };
    let has_key = s.has_key || Some(pos) == layout.key;
    let next = GridState { pos, has_key };
    if pos == layout.goal {
        (next, GOAL_REWARD, true)
    } else {
        (next, STEP_REWARD, false)
    }
}

/// 8×8 grid task; [`EnvKind`] selects the layout rule.
#[derive(Debug, Clone)]
pub struct GridWorld {
    kind: EnvKind,
    spec: MdpSpec,
    layout: Layout,
    state: GridState,
    steps: usize,
    done: bool,
}

impl GridWorld {
    pub fn new(kind: EnvKind) -> Self {
        let horizon = match kind {
            EnvKind::Gridworld | EnvKind::SeededGridworld => 50,
            EnvKind::Keydoor => 100,
        };
        let spec = MdpSpec {
            obs_shape: [PLANES, SIZE, SIZE],
            num_actions: ACTIONS,
            horizon,
            gamma: 0.99,
            reward_range: (STEP_REWARD, GOAL_REWARD),
        };
        let layout = Self::layout_for(kind, 0);
        let state = GridState { pos: layout.start, has_key: false };
        GridWorld { kind, spec, layout, state, steps: 0, done: false }
    }

    fn layout_for(kind: EnvKind, seed: u64) -> Layout {
        match kind {
            EnvKind::Gridworld => Layout::fixed(),
            EnvKind::SeededGridworld => Layout::seeded(seed),
            EnvKind::Keydoor => Layout::key_door(),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.spec.horizon = horizon.max(1);
        self
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> GridState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn encode(&self) -> Tensor {
        let mut t = Tensor::zeros(&[PLANES, SIZE, SIZE]);
        let d = t.data_mut();
        let mut set = |plane: usize, (r, c): Pos| d[plane * SIZE * SIZE + r * SIZE + c] = 1.0;
        for (i, &w) in self.layout.walls.iter().enumerate() {
            if w {
                set(WALL, (i / SIZE, i % SIZE));
            }
        }
        set(AGENT, self.state.pos);
        set(GOAL, self.layout.goal);
        if let Some(k) = self.layout.key {
            if !self.state.has_key {
                set(KEY, k);
            }
        }
        if let Some(door) = self.layout.door {
            set(DOOR, door);
        }
        t
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Tensor {
        self.layout = Self::layout_for(self.kind, seed);
        self.state = GridState { pos: self.layout.start, has_key: false };
        self.steps = 0;
        self.done = false;
        self.encode()
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= ACTIONS {
            return Err(EnvError::InvalidAction { action, count: ACTIONS });
        }
        let state = self.encode();
        let (next, reward, terminal) = dynamics(&self.layout, self.state, action);
        self.state = next;
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.spec.horizon;
        self.done = terminal || truncated;
        Ok(Transition { state, action, reward, next_state: self.encode(), terminal, truncated })
    }

    fn observation(&self) -> Tensor {
        self.encode()
    }
}
