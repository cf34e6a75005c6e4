//! Differentiable accelerator search against exhaustive enumeration on a
//! small menu space.
//!
//!     cargo run --release --example das_vs_bruteforce -- [seeds] [steps] [lr]

use coaccel::accel::{LayerDesc, Menus};
use coaccel::das::{brute_force, search, SearchOptions, BRUTE_FORCE_CAP};
use coaccel::supernet::OperatorKind;

fn main() -> coaccel::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(20, |s| s.parse().expect("seed count"));
    let steps: usize = args.next().map_or(1000, |s| s.parse().expect("step count"));
    let lr: f64 = args.next().map_or(1e-2, |s| s.parse().expect("learning rate"));

    let net = vec![
        LayerDesc::conv("stem", 5, 8, 8, 8, 3),
        LayerDesc::operator("cell0", OperatorKind::ConvK5, 8, 8, 8),
        LayerDesc::dense("fc", 8 * 8 * 8, 64),
    ];
    let menus = Menus::tiny();
    println!("design space: {} configurations", menus.design_space_size(net.len()));

    let oracle = brute_force(&net, &menus, BRUTE_FORCE_CAP)?;
    println!("brute force: {:.0} cycles  {:?}", oracle.cost, oracle.config);

    let mut within = 0;
    for seed in 0..seeds {
        let r = search(&net, &menus, &SearchOptions { steps, seed, lr, ..SearchOptions::default() }, None)?;
        let ratio = r.cost / oracle.cost;
        within += usize::from(ratio <= 1.10);
        println!("seed {seed:2}: {:>9.0} cycles  ratio {ratio:.3}  choices {:?}", r.cost, r.choices);
    }
    println!("within 10% of optimum: {within}/{seeds}");
    Ok(())
}
