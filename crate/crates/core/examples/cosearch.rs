//! Joint agent/accelerator search on a grid environment, followed by
//! fine-tuning the derived child.
//!
//!     cargo run --release --example cosearch -- [env] [steps] [lambda] [seed]

use std::time::Instant;

use coaccel::accel::Menus;
use coaccel::cosearch::{finetune_child, run, CoSearchConfig};
use coaccel::env::EnvKind;

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let env: EnvKind = args.next().map_or(EnvKind::Gridworld, |s| s.parse().expect("environment"));
    let steps: usize = args.next().map_or(30_000, |s| s.parse().expect("steps"));
    let lambda: f64 = args.next().map_or(1e-5, |s| s.parse().expect("lambda"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let cfg = CoSearchConfig { env, seed, lambda, total_steps: steps, trace_interval: 1000, ..CoSearchConfig::default() };
    let menus = Menus::default();
    println!("accelerator design space: {:.3e} choices", menus.design_space_size(cfg.n_cells + 3));

    let t = Instant::now();
    let out = run(&cfg, &menus, None, None)?;
    for p in &out.history {
        println!(
            "step {:>7}  tau {:.3}  path {:?}  mean30 {:>7}  cycles {:>8.0}",
            p.step,
            p.tau,
            p.path,
            p.episode_return_mean30.map_or("-".into(), |r| format!("{r:.3}")),
            p.summed_cycles
        );
    }
    println!("search took {:.1} s", t.elapsed().as_secs_f64());
    println!("derived child: {:?}  MACs {}  params {}", out.child.ops, out.child.total_macs, out.child.total_params);
    println!("accelerator: {} chunks, {} PEs, {} B buffer, {:.0} FPS", out.accel.n_chunks(), out.report.pe_count, out.report.buffer_bytes, out.report.fps);

    let t = Instant::now();
    let tuned = finetune_child(&out.supernet, &out.child_path, &cfg, steps / 2, None)?;
    println!("fine-tuned score {:.3} ({:.1} s)", tuned.score, t.elapsed().as_secs_f64());
    Ok(())
}
