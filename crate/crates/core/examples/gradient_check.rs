//! Tape gradients against central differences for a few primitives and the
//! actor-critic losses, over random inputs.
//!
//!     cargo run --release --example gradient_check -- [seeds]

use coaccel::acrl::{loss_actor_distill, loss_entropy, loss_policy, loss_value};
use coaccel::tensorcore::{grad_check, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64, TensorError>>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let seeds: u64 = std::env::args().nth(1).map_or(50, |s| s.parse().expect("seed count"));
    let cases: Vec<(&str, Case)> = vec![
        ("matmul + relu", Box::new(|rng| {
            let w = random(rng, &[4, 3]);
            grad_check(move |t: &mut Tape<'_>, x: Var| {
                let w = t.constant(w.clone());
                let y = t.matmul(x, w)?;
                let y = t.relu(y)?;
                t.sum(y)
            }, &random(rng, &[2, 4]), 1e-6)
        })),
        ("conv2d", Box::new(|rng| {
            let x = random(rng, &[1, 2, 5, 5]);
            grad_check(move |t: &mut Tape<'_>, w: Var| {
                let x = t.constant(x.clone());
                let y = t.conv2d(x, w, None, 1, 1)?;
                let y = t.mul(y, y)?;
                t.mean(y)
            }, &random(rng, &[3, 2, 3, 3]), 1e-6)
        })),
        ("log_softmax", Box::new(|rng| {
            let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
            grad_check(move |t: &mut Tape<'_>, x: Var| {
                let y = t.log_softmax(x, 1)?;
                let y = t.gather(y, &idx)?;
                t.sum(y)
            }, &random(rng, &[3, 4]), 1e-6)
        })),
        ("policy loss", Box::new(|rng| {
            let actions: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
            let deltas: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            grad_check(move |t: &mut Tape<'_>, x: Var| {
                let lp = t.log_softmax(x, 1)?;
                loss_policy(t, lp, &actions, &deltas)
            }, &random(rng, &[5, 4]), 1e-6)
        })),
        ("value loss", Box::new(|rng| {
            let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            grad_check(move |t: &mut Tape<'_>, v: Var| loss_value(t, v, &targets), &random(rng, &[5]), 1e-6)
        })),
        ("entropy", Box::new(|rng| {
            grad_check(|t: &mut Tape<'_>, x: Var| {
                let lp = t.log_softmax(x, 1)?;
                loss_entropy(t, lp)
            }, &random(rng, &[5, 4]), 1e-6)
        })),
        ("actor distillation", Box::new(|rng| {
            let teacher = random(rng, &[5, 4]);
            let mut tape = Tape::new();
            let v = tape.constant(teacher);
            let lp = tape.log_softmax(v, 1)?;
            let teacher = tape.value(lp).clone();
            grad_check(move |t: &mut Tape<'_>, x: Var| {
                let lp = t.log_softmax(x, 1)?;
                loss_actor_distill(t, lp, &teacher)
            }, &random(rng, &[5, 4]), 1e-6)
        })),
    ];
    for (name, case) in &cases {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            worst = worst.max(case(&mut rng).expect("gradient check runs"));
        }
        println!("{name:<20} worst relative error over {seeds} seeds: {worst:.2e}");
    }
}
