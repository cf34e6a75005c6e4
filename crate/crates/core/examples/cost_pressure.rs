//! Architecture search driven by hardware cost alone: with the task loss
//! switched off and a large cost weight, the derived child should pick the
//! cheapest operator in every cell.
//!
//!     cargo run --release --example cost_pressure -- [iterations] [seeds] [relaxed|indicator]

use coaccel::accel::Menus;
use coaccel::acrl::argmax;
use coaccel::cosearch::{cell_cost_table, run, CoSearchConfig};
use coaccel::supernet::CostGradMode;

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(500, |s| s.parse().expect("iterations"));
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let cost_grad = match args.next().as_deref() {
        None | Some("relaxed") => CostGradMode::GateRelaxed,
        Some("indicator") => CostGradMode::Indicator,
        Some(other) => panic!("unknown cost gradient `{other}`; use relaxed or indicator"),
    };
    let menus = Menus::default();
    let mut exact = 0;
    for seed in 0..seeds {
        let cfg = CoSearchConfig {
            seed,
            lambda: 1e6,
            task_loss: false,
            total_steps: iterations * 5,
            trace_interval: 0,
            cost_grad,
            ..CoSearchConfig::default()
        };
        let out = run(&cfg, &menus, None, None)?;
        let table = cell_cost_table(&cfg, &out.accel)?;
        let cheapest: Vec<usize> = table.iter().map(|row| argmax(&row.iter().map(|c| -c).collect::<Vec<_>>())).collect();
        let ok = cheapest == out.child_path;
        exact += usize::from(ok);
        println!("seed {seed}: derived {:?}  cheapest {:?}  {}", out.child.ops, cheapest, if ok { "match" } else { "MISMATCH" });
        for (l, a) in out.supernet.arch.alpha.iter().enumerate() {
            println!("    cell {l} alpha {:?}", a.data().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        }
    }
    println!("exact matches: {exact}/{seeds}");
    Ok(())
}
