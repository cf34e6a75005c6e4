//! Teacher-student training on the key-door grid: no distillation, policy
//! distillation and actor-critic distillation from the same teacher.
//!
//!     cargo run --release --example distillation -- [student steps] [seeds]

use coaccel::acrl::{train, ActorCriticNet, DistillMode, NetConfig, Teacher, TrainConfig};
use coaccel::env::EnvKind;
use coaccel::supernet::OperatorKind;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
}

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let budget: usize = args.next().map_or(15_000, |s| s.parse().expect("student steps"));
    let seeds: u64 = args.next().map_or(10, |s| s.parse().expect("seed count"));
    let env = EnvKind::Keydoor;
    let spec = env.spec();

    let teacher_cfg = NetConfig::fixed(spec.obs_shape, spec.num_actions, &[OperatorKind::ConvK3; 2], 8, 64);
    let mut teacher = ActorCriticNet::new(teacher_cfg, 1000)?;
    let teacher_path = teacher.default_path();
    let tc = TrainConfig { env, seed: 1000, total_steps: 60_000, eval_interval: 0, ..TrainConfig::default() };
    let report = train(&mut teacher, &teacher_path, &tc, None, None)?;
    println!("teacher score {:.3}", report.final_score);

    for mode in [DistillMode::None, DistillMode::Policy, DistillMode::ActorCritic] {
        let mut scores = Vec::new();
        for seed in 0..seeds {
            let cfg = NetConfig::fixed(spec.obs_shape, spec.num_actions, &[OperatorKind::Skip], 8, 64);
            let mut student = ActorCriticNet::new(cfg, seed)?;
            let path = student.default_path();
            let tc = TrainConfig { env, seed, total_steps: budget, eval_interval: 0, distill: mode, ..TrainConfig::default() };
            let t = Teacher { net: &teacher, path: &teacher_path };
            scores.push(train(&mut student, &path, &tc, Some(t), None)?.final_score);
        }
        let (m, v) = mean_var(&scores);
        let ci = 1.96 * (v / scores.len() as f64).sqrt();
        println!("{mode:?}: mean {m:.3} ± {ci:.3}  variance {v:.4}  {scores:.2?}");
    }
    Ok(())
}
