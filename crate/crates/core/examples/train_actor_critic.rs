//! Trains a small fixed network on the deterministic gridworld and compares
//! the result with the value-iteration optimum.
//!
//! ```text
//! cargo run --release --example train_actor_critic -- [seed] [steps]
//! ```

use std::time::Instant;

use coaccel::acrl::{train, ActionMode, ActorCriticNet, NetConfig, TrainConfig};
use coaccel::env::{optimal_return, EnvKind, Environment};
use coaccel::supernet::OperatorKind;

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200_000);

    let env = EnvKind::Gridworld.make();
    let spec = env.spec().clone();
    let (optimum, path_len) = optimal_return(env.layout(), spec.gamma, spec.horizon);
    println!("optimal return {optimum:.3} ({path_len} moves)");

    let cfg = NetConfig::fixed(spec.obs_shape, spec.num_actions, &[OperatorKind::ConvK3], 8, 64);
    let mut net = ActorCriticNet::new(cfg, seed)?;
    let train_cfg = TrainConfig {
        seed,
        total_steps: steps,
        eval_interval: 5_000,
        stop_at_return: Some(0.95 * optimum),
        ..TrainConfig::default()
    };
    let path = net.default_path();
    let t0 = Instant::now();
    let report = train(&mut net, &path, &train_cfg, None, None)?;
    for p in &report.history {
        println!("step {:>7}  eval {:+.3}", p.step, p.score);
    }
    let greedy = coaccel::acrl::evaluate_net(&net, &path, EnvKind::Gridworld, 1, 0, ActionMode::Greedy)?;
    println!(
        "finished after {} steps in {:.1}s: sampled {:.3}, greedy {:.3} ({:.0}% of optimum)",
        report.steps,
        t0.elapsed().as_secs_f64(),
        report.final_score,
        greedy,
        100.0 * report.final_score / optimum
    );
    Ok(())
}
