//! Exact planning over the grid's `(position, has_key)` state space.

use super::grid::{dynamics, GridState, Layout, ACTIONS, SIZE};

#[derive(Debug, Clone)]
pub struct ValueTable {
    gamma: f64,
    /// Indexed by `(r * SIZE + c) * 2 + has_key`.
    values: Vec<f64>,
    layout: Layout,
}

fn index(s: GridState) -> usize {
    (s.pos.0 * SIZE + s.pos.1) * 2 + usize::from(s.has_key)
}

impl ValueTable {
    pub fn value(&self, s: GridState) -> f64 {
        self.values[index(s)]
    }

    fn q(&self, s: GridState, a: usize) -> f64 {
        let (next, r, terminal) = dynamics(&self.layout, s, a);
        if terminal {
            r
        } else {
            r + self.gamma * self.values[index(next)]
        }
    }

    /// Lowest-index action attaining the max Q value.
    pub fn greedy_action(&self, s: GridState) -> usize {
        let mut best = 0;
        for a in 1..ACTIONS {
            if self.q(s, a) > self.q(s, best) + 1e-12 {
                best = a;
            }
        }
        best
    }
}

/// Bellman optimality iteration to a sup-norm change below 1e-12.
pub fn value_iteration(layout: &Layout, gamma: f64) -> ValueTable {
    let mut table = ValueTable { gamma, values: vec![0.0; SIZE * SIZE * 2], layout: layout.clone() };
    let states: Vec<GridState> = (0..SIZE * SIZE)
        .filter(|&i| !layout.walls[i])
        .flat_map(|i| [false, true].map(|has_key| GridState { pos: (i / SIZE, i % SIZE), has_key }))
        .collect();
    for _ in 0..100_000 {
        let mut delta: f64 = 0.0;
        for &s in &states {
            if s.pos == layout.goal {
                continue;
            }
            let v = (0..ACTIONS).map(|a| table.q(s, a)).fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((v - table.values[index(s)]).abs());
            table.values[index(s)] = v;
        }
        if delta < 1e-12 {
            break;
        }
    }
    table
}

/// Undiscounted return and step count of the greedy optimal policy from the
/// layout's start, cut at `horizon` steps.
pub fn optimal_return(layout: &Layout, gamma: f64, horizon: usize) -> (f64, usize) {
    let table = value_iteration(layout, gamma);
    let mut s = GridState { pos: layout.start, has_key: false };
    let mut total = 0.0;
    for t in 0..horizon {
        let (next, r, terminal) = dynamics(layout, s, table.greedy_action(s));
        total += r;
        s = next;
        if terminal {
            return (total, t + 1);
        }
    }
    (total, horizon)
}
