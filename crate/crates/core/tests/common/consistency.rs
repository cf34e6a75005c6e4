//! Sampling and supernet consistency checks. Each returns the largest
//! deviation found for one seed.

use coaccel::acrl::{loss_task, rollout_with, ActionMode, Betas, EnvRunner, NetConfig, Route};
use coaccel::env::EnvKind;
use coaccel::supernet::{backward_multi_path, gumbel_softmax, ArchParams, Supernet};
use coaccel::tensorcore::{Tape, Tensor};
use coaccel::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DRAWS: usize = 10_000;

/// Hard-sample frequencies against softmax probabilities for random N=5
/// logits.
pub fn hard_frequency_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arch = ArchParams::uniform(&[5], 1.0, 2);
    arch.alpha[0] = Tensor::vector((0..5).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let mut counts = [0usize; 5];
    for _ in 0..DRAWS {
        counts[arch.sample(&mut rng).hard[0]] += 1;
    }
    counts.iter().zip(&arch.probabilities()[0]).map(|(&c, p)| (c as f64 / DRAWS as f64 - p).abs()).fold(0.0, f64::max)
}

pub fn soft_sum_error(logits: &[f64], tau: f64, seed: u64) -> f64 {
    let soft = gumbel_softmax(logits, tau, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (soft.iter().sum::<f64>() - 1.0).abs()
}

fn supernet(k: usize, seed: u64) -> Result<Supernet> {
    let spec = EnvKind::Gridworld.spec();
    let cfg = NetConfig::supernet(spec.obs_shape, spec.num_actions, 3, 4, 16);
    let mut sn = Supernet::new(cfg, 1.5, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in sn.arch.alpha.iter_mut() {
        *a = Tensor::vector((0..a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    Ok(sn)
}

/// Supernet single-path output against the extracted child network.
pub fn single_path_error(seed: u64) -> Result<f64> {
    let sn = supernet(2, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let mut runner = EnvRunner::new(EnvKind::Keydoor.make(), seed);
    let rollout = rollout_with(&mut runner, &sn.net, &[0, 0, 0], 6, ActionMode::Sample, &mut rng)?;
    let batch = rollout.state_batch()?;
    let (logits, values, sample) = sn.forward_single_path(&batch, &mut rng)?;
    let child = sn.child_net(&sample.hard)?;
    let (cl, cv) = child.predict(&batch, &child.default_path())?;
    let a = logits.data().iter().chain(values.data());
    let b = cl.data().iter().chain(cv.data());
    Ok(a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// With every candidate evaluated, the architecture gradient must equal
/// the gradient of an explicit weighted sum of all candidates taken at the
/// one-hot point, chained through the Gumbel-Softmax Jacobian. Returns the
/// error and the largest gradient entry.
pub fn mixture_gradient_error(seed: u64) -> Result<(f64, f64)> {
    let sn = supernet(5, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let sample = sn.sample(&mut rng);
    assert!(sample.topk.iter().all(|t| t.len() == 5));
    let mut runner = EnvRunner::new(EnvKind::Gridworld.make(), seed);
    let rollout = rollout_with(&mut runner, &sn.net, &sample.hard, 5, ActionMode::Sample, &mut rng)?;
    let betas = Betas::default();
    let got = sn.task_gradients(&sample, &rollout, 0.99, &betas, None)?.alpha;

    let batch = rollout.state_batch()?;
    let mut tape = Tape::new();
    let p = sn.net.params().bind(&mut tape, false);
    let x = tape.leaf_ref(&batch, false);
    let weights: Vec<Vec<_>> = sample
        .hard
        .iter()
        .map(|&h| (0..5).map(|i| tape.leaf(Tensor::vector(vec![f64::from(u8::from(i == h))]), true)).collect())
        .collect();
    let out = sn.net.forward(&mut tape, &p, x, Route::Mixture(&weights))?;
    let (loss, _) = loss_task(&mut tape, &out, &rollout, 0.99, &betas, None)?;
    let g = tape.backward(loss)?;
    let (mut worst, mut scale): (f64, f64) = (0.0, 0.0);
    for (l, w) in weights.iter().enumerate() {
        let gate: Vec<f64> = w.iter().map(|&v| g.get(v).map_or(0.0, |t| t.item())).collect();
        let oracle = backward_multi_path(&gate, &sample.soft[l], sample.tau);
        for (a, b) in got[l].iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
            scale = scale.max(b.abs());
        }
    }
    Ok((worst, scale))
}
