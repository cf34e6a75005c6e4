//! Cost-weight sweep: derived-child MACs, accelerator FPS and fine-tuned
//! score for each λ.
//!
//!     cargo run --release --example pareto_sweep -- [search steps] [finetune steps] [seeds]

use coaccel::accel::Menus;
use coaccel::cosearch::{pareto_sweep, CoSearchConfig};

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(10_000, |s| s.parse().expect("search steps"));
    let finetune: usize = args.next().map_or(5_000, |s| s.parse().expect("finetune steps"));
    let n_seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));

    let lambdas = [0.0, 1e-6, 1e-5, 1e-4];
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let base = CoSearchConfig { total_steps: steps, trace_interval: 0, ..CoSearchConfig::default() };
    let (runs, rows) = pareto_sweep(&base, &Menus::default(), &lambdas, &seeds, finetune, None)?;

    for r in &runs {
        println!("lambda {:<6e} seed {}  MACs {:>7}  FPS {:>8.0}  score {:>6.3}  {:?}", r.lambda, r.seed, r.macs, r.fps, r.score, r.ops);
    }
    println!("\n{:>8} {:>10} {:>10} {:>8}", "lambda", "mean MACs", "mean FPS", "score");
    for r in &rows {
        println!("{:>8e} {:>10.0} {:>10.0} {:>8.3}", r.lambda, r.mean_macs, r.mean_fps, r.mean_score);
    }
    Ok(())
}
