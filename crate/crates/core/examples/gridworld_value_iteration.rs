//! Exact optimum of each grid task by value iteration, with the greedy
//! policy drawn on the map.
//!
//!     cargo run --release --example gridworld_value_iteration

use coaccel::env::{optimal_return, value_iteration, EnvKind, Environment, GridState, SIZE};

fn main() {
    for kind in [EnvKind::Gridworld, EnvKind::Keydoor] {
        let env = kind.make();
        let spec = env.spec().clone();
        let layout = env.layout();
        let table = value_iteration(layout, spec.gamma);
        let (ret, moves) = optimal_return(layout, spec.gamma, spec.horizon);
        println!("{kind}: optimal return {ret:.3} in {moves} moves, 95% threshold {:.3}", 0.95 * ret);
        for has_key in [false, true] {
            if has_key && layout.key.is_none() {
                continue;
            }
            if layout.key.is_some() {
                println!("  holding key: {has_key}");
            }
            for r in 0..SIZE {
                let row: String = (0..SIZE)
                    .map(|c| {
                        let p = (r, c);
                        if layout.is_wall(p) {
                            '#'
                        } else if p == layout.goal {
                            'G'
                        } else if Some(p) == layout.key && !has_key {
                            'k'
                        } else if Some(p) == layout.door {
                            'D'
                        } else {
                            ['^', 'v', '<', '>'][table.greedy_action(GridState { pos: p, has_key })]
                        }
                    })
                    .collect();
                println!("  {row}");
            }
        }
        println!("  V(start) = {:.4}\n", table.value(GridState { pos: layout.start, has_key: false }));
    }
}
