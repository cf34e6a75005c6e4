//! Gumbel-Softmax sampling statistics and one architecture-gradient step on
//! a three-cell supernet.
//!
//!     cargo run --release --example gumbel_dnas

use coaccel::acrl::{rollout_with, ActionMode, Betas, EnvRunner, NetConfig};
use coaccel::env::EnvKind;
use coaccel::supernet::{ArchOptimizer, ArchParams, Supernet};
use coaccel::tensorcore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coaccel::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut arch = ArchParams::uniform(&[5], 1.0, 2);
    arch.alpha[0] = Tensor::vector(vec![1.0, 0.5, 0.0, -0.5, -1.0]);
    let draws = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        counts[arch.sample(&mut rng).hard[0]] += 1;
    }
    println!("{:>3} {:>9} {:>9}", "op", "softmax", "sampled");
    for (i, p) in arch.probabilities()[0].iter().enumerate() {
        println!("{i:>3} {p:>9.4} {:>9.4}", counts[i] as f64 / draws as f64);
    }

    let spec = EnvKind::Gridworld.spec();
    let cfg = NetConfig::supernet(spec.obs_shape, spec.num_actions, 3, 8, 32);
    let mut sn = Supernet::new(cfg, 1.0, 2, 0)?;
    let mut runner = EnvRunner::new(EnvKind::Gridworld.make(), 0);
    let mut opt = ArchOptimizer::new(&sn.arch);
    for step in 0..3 {
        let sample = sn.sample(&mut rng);
        let rollout = rollout_with(&mut runner, &sn.net, &sample.hard, 5, ActionMode::Sample, &mut rng)?;
        let grads = sn.task_gradients(&sample, &rollout, 0.99, &Betas::default(), None)?;
        println!("\nstep {step}: path {:?}, top-K {:?}, loss {:.4}", sample.hard, sample.topk, grads.terms.total);
        for (l, g) in grads.alpha.iter().enumerate() {
            let g: Vec<String> = g.iter().map(|v| format!("{v:+.2e}")).collect();
            println!("  cell {l} dL/dalpha [{}]", g.join(", "));
        }
        opt.step(&mut sn.arch, &grads.alpha)?;
    }

    let (child, path) = sn.derive_child_net()?;
    let x = runner.observation().reshape(&[1, spec.obs_shape[0], spec.obs_shape[1], spec.obs_shape[2]])?;
    let a = sn.net.predict(&x, &path)?.0;
    let b = child.predict(&x, &child.default_path())?.0;
    let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("\nderived child {path:?}; supernet vs standalone logits differ by {diff:.1e}");
    Ok(())
}
