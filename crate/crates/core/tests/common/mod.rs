//! Gradient-check cases shared by the property tests and the acceptance
//! target. Each case draws its inputs from a seed and returns the largest
//! relative disagreement between tape and central-difference gradients.

#![allow(dead_code)]

pub mod consistency;

use coaccel::acrl::{
    loss_actor_distill, loss_critic_distill, loss_entropy, loss_policy, loss_task, loss_value, Betas, NetOut, Rollout,
    TeacherTargets,
};
use coaccel::tensorcore::{grad_check, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

type Check = fn(&mut ChaCha8Rng) -> Result<f64, TensorError>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn rand(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

/// Entries kept at least 0.05 away from zero, clear of the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand(rng, shape).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// `Σ c ⊙ y` with fixed random `c`, so every output entry gets a distinct
/// upstream gradient.
fn project(t: &mut Tape<'_>, y: Var, c: &Tensor) -> Result<Var, TensorError> {
    let c = t.constant(c.clone());
    let p = t.mul(y, c)?;
    t.sum(p)
}

fn weights_like(rng: &mut ChaCha8Rng, t: &Tape<'_>, y: Var) -> Tensor {
    rand(rng, t.value(y).shape())
}

fn log_probs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let x = rand(rng, &[rows, cols]).map(|v| 2.0 * v);
    let mut t = Tape::new();
    let v = t.constant(x);
    let lp = t.log_softmax(v, 1).unwrap();
    t.value(lp).clone()
}

macro_rules! unary {
    ($rng:ident, $x:expr, |$t:ident, $v:ident| $body:expr) => {{
        let x = $x;
        let probe = {
            let mut tape = Tape::new();
            let $v = tape.constant(x.clone());
            let $t = &mut tape;
            let y: Var = $body?;
            weights_like($rng, &tape, y)
        };
        grad_check(
            move |$t: &mut Tape<'_>, $v: Var| {
                let y: Var = $body?;
                project($t, y, &probe)
            },
            &x,
            EPS,
        )
    }};
}

fn matmul_left(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let w = rand(rng, &[4, 3]);
    unary!(rng, rand(rng, &[2, 4]), |t, x| {
        let w = t.constant(w.clone());
        t.matmul(x, w)
    })
}

fn matmul_right(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let a = rand(rng, &[2, 4]);
    unary!(rng, rand(rng, &[4, 3]), |t, w| {
        let a = t.constant(a.clone());
        t.matmul(a, w)
    })
}

fn conv_input(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let w = rand(rng, &[3, 2, 3, 3]);
    let stride = rng.gen_range(1..=2);
    unary!(rng, rand(rng, &[2, 2, 5, 5]), |t, x| {
        let w = t.constant(w.clone());
        t.conv2d(x, w, None, stride, 1)
    })
}

fn conv_weight(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let x = rand(rng, &[2, 2, 5, 5]);
    let b = rand(rng, &[3]);
    unary!(rng, rand(rng, &[3, 2, 3, 3]), |t, w| {
        let x = t.constant(x.clone());
        let b = t.constant(b.clone());
        t.conv2d(x, w, Some(b), 1, 1)
    })
}

fn conv_bias(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let x = rand(rng, &[1, 2, 4, 4]);
    let w = rand(rng, &[3, 2, 3, 3]);
    unary!(rng, rand(rng, &[3]), |t, b| {
        let x = t.constant(x.clone());
        let w = t.constant(w.clone());
        t.conv2d(x, w, Some(b), 1, 1)
    })
}

fn depthwise_input(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let w = rand(rng, &[3, 1, 5, 5]);
    unary!(rng, rand(rng, &[1, 3, 6, 6]), |t, x| {
        let w = t.constant(w.clone());
        t.depthwise_conv2d(x, w, None, 1, 2)
    })
}

fn depthwise_weight(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let x = rand(rng, &[2, 3, 5, 5]);
    let b = rand(rng, &[3]);
    unary!(rng, rand(rng, &[3, 1, 3, 3]), |t, w| {
        let x = t.constant(x.clone());
        let b = t.constant(b.clone());
        t.depthwise_conv2d(x, w, Some(b), 1, 1)
    })
}

fn add_sub(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let c = rand(rng, &[3, 4]);
    unary!(rng, rand(rng, &[3, 4]), |t, x| {
        let c = t.constant(c.clone());
        let a = t.add(x, c)?;
        let s = t.sub(c, x)?;
        t.mul(a, s)
    })
}

fn mul_broadcast(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let s = rand(rng, &[1]);
    unary!(rng, rand(rng, &[2, 3]), |t, x| {
        let s = t.constant(s.clone());
        let y = t.mul(x, s)?;
        t.mul(y, x)
    })
}

fn scalar_gate(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let o = rand(rng, &[2, 3]);
    unary!(rng, rand(rng, &[1]), |t, g| {
        let o = t.constant(o.clone());
        t.mul(o, g)
    })
}

fn scale_bias(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let b = rand(rng, &[3]);
    let c: f64 = rng.gen_range(-2.0..2.0);
    unary!(rng, rand(rng, &[2, 3]), |t, x| {
        let b = t.constant(b.clone());
        let y = t.bias_add(x, b)?;
        t.scale(y, c)
    })
}

fn bias_grad(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let x = rand(rng, &[4, 3]);
    unary!(rng, rand(rng, &[3]), |t, b| {
        let x = t.constant(x.clone());
        t.bias_add(x, b)
    })
}

fn relu(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    unary!(rng, off_kink(rng, &[3, 5]), |t, x| t.relu(x))
}

fn exp_log(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    unary!(rng, uniform(rng, &[2, 4], 0.2, 2.0), |t, x| {
        let e = t.exp(x)?;
        let l = t.log(x)?;
        t.add(e, l)
    })
}

fn sum_mean(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let x = rand(rng, &[3, 4]);
    grad_check(
        |t: &mut Tape<'_>, x: Var| {
            let sq = t.mul(x, x)?;
            let s = t.sum(sq)?;
            let m = t.mean(x)?;
            let m = t.mul(m, m)?;
            t.add(s, m)
        },
        &x,
        EPS,
    )
}

fn softmax(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    unary!(rng, rand(rng, &[3, 5]), |t, x| t.softmax(x, 1))
}

fn log_softmax(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    unary!(rng, rand(rng, &[3, 5]), |t, x| t.log_softmax(x, 1))
}

fn gather(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    unary!(rng, rand(rng, &[4, 3]), |t, x| t.gather(x, &idx))
}

fn mse(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let c = rand(rng, &[6]);
    grad_check(
        move |t: &mut Tape<'_>, x: Var| {
            let c = t.constant(c.clone());
            t.mse(x, c)
        },
        &rand(rng, &[6]),
        EPS,
    )
}

fn kl_both_sides(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let other = rand(rng, &[3, 4]);
    unary!(rng, rand(rng, &[3, 4]), |t, x| {
        let o = t.constant(other.clone());
        let p = t.softmax(x, 1)?;
        let q = t.softmax(o, 1)?;
        let a = t.kl_div(p, q)?;
        let b = t.kl_div(q, p)?;
        t.add(a, b)
    })
}

fn reshape_narrow(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    unary!(rng, rand(rng, &[6, 4]), |t, x| {
        let y = t.narrow(x, 1, 4)?;
        let y = t.reshape(y, &[2, 8])?;
        t.mul(y, y)
    })
}

/// The straight-through forward ignores the gate values, so its gate
/// gradient is checked against central differences of the explicit weighted
/// sum at the one-hot gate vector.
fn select_gates(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let paths: Vec<Tensor> = (0..3).map(|_| rand(rng, &[2, 3])).collect();
    let c = rand(rng, &[2, 3]);
    let selected = rng.gen_range(0..3);
    let gates = Tensor::vector((0..3).map(|k| f64::from(u8::from(k == selected))).collect());
    let mut t = Tape::new();
    let g = t.leaf(gates.clone(), true);
    let ps: Vec<Var> = paths.iter().map(|p| t.constant(p.clone())).collect();
    let y = t.straight_through_select(&ps, g, &[0, 1, 2], selected)?;
    let y = t.relu(y)?;
    let l = project(&mut t, y, &c)?;
    let st = t.backward(l)?.get_or_zeros(g, &gates);
    let numeric = coaccel::tensorcore::central_difference(
        |t: &mut Tape<'_>, g: Var| {
            let mut acc: Option<Var> = None;
            for (k, p) in paths.iter().enumerate() {
                let p = t.constant(p.clone());
                let gk = t.narrow(g, k, 1)?;
                let term = t.mul(p, gk)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => t.add(a, term)?,
                });
            }
            let y = t.relu(acc.expect("three paths"))?;
            project(t, y, &c)
        },
        &gates,
        EPS,
    )?;
    Ok(st.data().iter().zip(numeric.data()).map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8)).fold(0.0, f64::max))
}

fn select_paths(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let other = rand(rng, &[2, 3]);
    let gates = Tensor::vector(vec![0.3, 0.7]);
    unary!(rng, rand(rng, &[2, 3]), |t, x| {
        let o = t.constant(other.clone());
        let g = t.constant(gates.clone());
        t.straight_through_select(&[o, x], g, &[0, 1], 1)
    })
}

fn policy_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let actions: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
    let deltas: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grad_check(
        move |t: &mut Tape<'_>, x: Var| {
            let lp = t.log_softmax(x, 1)?;
            loss_policy(t, lp, &actions, &deltas)
        },
        &rand(rng, &[5, 4]),
        EPS,
    )
}

fn value_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grad_check(move |t: &mut Tape<'_>, v: Var| loss_value(t, v, &targets), &rand(rng, &[5]), EPS)
}

fn entropy_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    grad_check(
        |t: &mut Tape<'_>, x: Var| {
            let lp = t.log_softmax(x, 1)?;
            loss_entropy(t, lp)
        },
        &rand(rng, &[5, 4]),
        EPS,
    )
}

fn actor_distill_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let teacher = log_probs(rng, 5, 4);
    grad_check(
        move |t: &mut Tape<'_>, x: Var| {
            let lp = t.log_softmax(x, 1)?;
            loss_actor_distill(t, lp, &teacher)
        },
        &rand(rng, &[5, 4]),
        EPS,
    )
}

fn critic_distill_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let teacher: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grad_check(move |t: &mut Tape<'_>, v: Var| loss_critic_distill(t, v, &teacher), &rand(rng, &[5]), EPS)
}

/// The combined objective with respect to the logits; values enter the
/// td-error targets as constants, so they are held fixed here.
fn combined_loss(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let steps = 4;
    let rollout = Rollout {
        states: vec![],
        actions: (0..steps).map(|_| rng.gen_range(0..4)).collect(),
        rewards: (0..steps).map(|_| rng.gen_range(-0.1..1.0)).collect(),
        terminal: (0..steps).map(|t| t + 1 == steps && rng.gen_bool(0.5)).collect(),
        last_next_state: Tensor::zeros(&[1]),
        log_probs: vec![0.0; steps],
        values: vec![0.0; steps],
        bootstrap: 0.0,
    };
    let values = rand(rng, &[steps + 1]);
    let teacher = TeacherTargets { log_probs: log_probs(rng, steps, 4), values: (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let betas = Betas { entropy: 0.01, actor_distill: 0.3, critic_distill: 0.2 };
    grad_check(
        move |t: &mut Tape<'_>, logits: Var| {
            let values = t.constant(values.clone());
            let out = NetOut { logits, values, executed: vec![] };
            Ok(loss_task(t, &out, &rollout, 0.99, &betas, Some(&teacher))?.0)
        },
        &rand(rng, &[steps + 1, 4]),
        EPS,
    )
}

pub fn primitive_cases() -> Vec<(&'static str, Check)> {
    vec![
        ("matmul lhs", matmul_left),
        ("matmul rhs", matmul_right),
        ("conv2d input", conv_input),
        ("conv2d weight", conv_weight),
        ("conv2d bias", conv_bias),
        ("depthwise input", depthwise_input),
        ("depthwise weight", depthwise_weight),
        ("add/sub", add_sub),
        ("mul broadcast", mul_broadcast),
        ("scalar gate", scalar_gate),
        ("scale/bias_add", scale_bias),
        ("bias_add bias", bias_grad),
        ("relu", relu),
        ("exp/log", exp_log),
        ("sum/mean", sum_mean),
        ("softmax", softmax),
        ("log_softmax", log_softmax),
        ("gather", gather),
        ("mse", mse),
        ("kl_div", kl_both_sides),
        ("reshape/narrow", reshape_narrow),
        ("select gates", select_gates),
        ("select paths", select_paths),
    ]
}

pub fn loss_cases() -> Vec<(&'static str, Check)> {
    vec![
        ("policy loss", policy_loss),
        ("value loss", value_loss),
        ("entropy", entropy_loss),
        ("actor distillation", actor_distill_loss),
        ("critic distillation", critic_distill_loss),
        ("combined task loss", combined_loss),
    ]
}

pub fn all_cases() -> Vec<(&'static str, Check)> {
    let mut v = primitive_cases();
    v.extend(loss_cases());
    v
}

/// Worst relative error of `check` over seeds `0..seeds`.
pub fn worst_over(check: Check, seeds: u64) -> Result<f64, TensorError> {
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        worst = worst.max(check(&mut ChaCha8Rng::seed_from_u64(s))?);
    }
    Ok(worst)
}
