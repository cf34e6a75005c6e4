//! One-level search (weights and architecture updated on the same rollout)
//! against the bi-level ablation (architecture updated on a held-out
//! rollout after the weight step) on the key-door grid, both distilling
//! from the same actor-critic teacher.
//!
//!     cargo run --release --example bilevel_ablation -- [steps] [seeds]

use coaccel::accel::Menus;
use coaccel::acrl::{train, ActorCriticNet, DistillMode, NetConfig, Teacher, TrainConfig};
use coaccel::cosearch::{finetune_child, run, CoSearchConfig};
use coaccel::env::EnvKind;
use coaccel::supernet::OperatorKind;

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(20_000, |s| s.parse().expect("steps"));
    let seeds: u64 = args.next().map_or(10, |s| s.parse().expect("seed count"));
    let menus = Menus::default();
    let env = EnvKind::Keydoor;
    let spec = env.spec();
    let teacher_cfg = NetConfig::fixed(spec.obs_shape, spec.num_actions, &[OperatorKind::ConvK3; 2], 8, 64);
    let mut teacher = ActorCriticNet::new(teacher_cfg, 1000)?;
    let teacher_path = teacher.default_path();
    let tc = TrainConfig { env, seed: 1000, total_steps: 60_000, eval_interval: 0, ..TrainConfig::default() };
    println!("teacher score {:.3}", train(&mut teacher, &teacher_path, &tc, None, None)?.final_score);
    let t = || Some(Teacher { net: &teacher, path: &teacher_path });
    for bilevel in [false, true] {
        let mut scores = Vec::new();
        for seed in 0..seeds {
            let cfg = CoSearchConfig { env, seed, bilevel, distill: DistillMode::ActorCritic, total_steps: steps, lambda: 1e-6, trace_interval: 0, ..CoSearchConfig::default() };
            let out = run(&cfg, &menus, t(), None)?;
            let score = finetune_child(&out.supernet, &out.child_path, &cfg, 0, t())?.score;
            let mean30 = out.history.last().and_then(|p| p.episode_return_mean30);
            println!("  bilevel {bilevel} seed {seed}: child score {score:.3}  training mean30 {mean30:?}  {:?}", out.child.ops);
            scores.push(score);
        }
        let m = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("{}: mean final score {m:.3}", if bilevel { "bi-level" } else { "one-level" });
    }
    Ok(())
}
