use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensorcore::{Tensor, TensorError};

/// One draw from Gumbel(0, 1).
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// `softmax((logits + noise) / τ)`
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>, TensorError> {
    if !(tau > 0.0) {
        return Err(TensorError::invalid("gumbel_softmax", format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() || logits.len() != noise.len() {
        return Err(TensorError::shape("gumbel_softmax", &[logits.len()], &[noise.len()]));
    }
    let z: Vec<f64> = logits.iter().zip(noise).map(|(a, g)| (a + g) / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Soft Gumbel-Softmax weights with fresh noise.
pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>, TensorError> {
    let noise: Vec<f64> = logits.iter().map(|_| sample_gumbel(rng)).collect();
    gumbel_softmax_with_noise(logits, &noise, tau)
}

/// `∂GS_k/∂α_i = GS_k (δ_ki − GS_i) / τ`
pub fn gumbel_softmax_jacobian(soft: &[f64], tau: f64) -> Vec<Vec<f64>> {
    soft.iter()
        .enumerate()
        .map(|(k, &sk)| {
            soft.iter()
                .enumerate()
                .map(|(i, &si)| sk * (f64::from(u8::from(k == i)) - si) / tau)
                .collect()
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    crate::acrl::argmax(xs)
}

/// One Gumbel draw for every searchable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub noise: Vec<Vec<f64>>,
    /// Soft weights per layer; each sums to 1.
    pub soft: Vec<Vec<f64>>,
    /// Hard one-hot selection per layer, as an index.
    pub hard: Vec<usize>,
    /// The `K` largest soft weights per layer, descending. Always starts
    /// with the hard selection.
    pub topk: Vec<Vec<usize>>,
    pub tau: f64,
}

/// Architecture logits `α`, one vector per searchable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub alpha: Vec<Tensor>,
    pub tau: f64,
    /// Paths kept for the multi-path backward; clamped to each layer's size.
    pub k: usize,
}

impl ArchParams {
    /// All-zero logits.
    pub fn uniform(candidates: &[usize], tau: f64, k: usize) -> Self {
        ArchParams { alpha: candidates.iter().map(|&n| Tensor::zeros(&[n])).collect(), tau, k }
    }

    pub fn num_layers(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.tau > 0.0) {
            return Err(TensorError::invalid("arch", format!("temperature must be positive, got {}", self.tau)));
        }
        for (l, a) in self.alpha.iter().enumerate() {
            if a.ndim() != 1 || a.is_empty() {
                return Err(TensorError::invalid("arch", format!("layer {l} logits have shape {:?}", a.shape())));
            }
            if !a.is_finite() {
                return Err(TensorError::NonFinite { op: "arch" });
            }
        }
        if self.k < 2 {
            return Err(TensorError::invalid("arch", format!("K must be at least 2, got {}", self.k)));
        }
        Ok(())
    }

    /// `K` for layer `l`, capped at its candidate count.
    pub fn k_for(&self, l: usize) -> usize {
        self.k.min(self.alpha[l].len()).max(1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GumbelSample {
        let noise = self.alpha.iter().map(|a| a.data().iter().map(|_| sample_gumbel(rng)).collect()).collect();
        self.sample_with_noise(noise).expect("validated shapes")
    }

    pub fn sample_with_noise(&self, noise: Vec<Vec<f64>>) -> Result<GumbelSample, TensorError> {
        if noise.len() != self.alpha.len() {
            return Err(TensorError::shape("sample", &[self.alpha.len()], &[noise.len()]));
        }
        let mut soft = Vec::with_capacity(noise.len());
        let mut hard = Vec::with_capacity(noise.len());
        let mut topk = Vec::with_capacity(noise.len());
        for (l, (a, g)) in self.alpha.iter().zip(&noise).enumerate() {
            let s = gumbel_softmax_with_noise(a.data(), g, self.tau)?;
            let mut order: Vec<usize> = (0..s.len()).collect();
            // Rank on the pre-softmax scores so near-equal soft weights that
            // round together still order like the argmax does.
            let z: Vec<f64> = a.data().iter().zip(g).map(|(x, y)| x + y).collect();
            order.sort_by(|&i, &j| z[j].total_cmp(&z[i]).then(i.cmp(&j)));
            order.truncate(self.k_for(l));
            hard.push(order[0]);
            topk.push(order);
            soft.push(s);
        }
        Ok(GumbelSample { noise, soft, hard, topk, tau: self.tau })
    }

    /// Per-layer argmax of `α`.
    pub fn argmax_path(&self) -> Vec<usize> {
        self.alpha.iter().map(|a| argmax(a.data())).collect()
    }

    /// `softmax(α)` per layer.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.alpha
            .iter()
            .map(|a| gumbel_softmax_with_noise(a.data(), &vec![0.0; a.len()], 1.0).expect("non-empty"))
            .collect()
    }
}

/// `τ(step) = initial · factor^⌊step / interval⌋`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub factor: f64,
    pub interval: usize,
}

impl TemperatureSchedule {
    /// Decays 300 times over `total_steps`, the same number of decays as
    /// one every 1e5 of 3e7 steps.
    pub fn for_budget(total_steps: usize) -> Self {
        TemperatureSchedule { initial: 5.0, factor: 0.98, interval: (total_steps / 300).max(1) }
    }

    pub fn at(&self, step: usize) -> f64 {
        self.initial * self.factor.powi((step / self.interval.max(1)) as i32)
    }
}

/// Temperature after `step` steps of `schedule`.
pub fn anneal_temperature(schedule: &TemperatureSchedule, step: usize) -> f64 {
    schedule.at(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_positive_temperature() {
        assert!(gumbel_softmax_with_noise(&[0.0, 1.0], &[0.0, 0.0], 0.0).is_err());
        assert!(gumbel_softmax_with_noise(&[0.0, 1.0], &[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn peaked_logits_almost_always_win() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wins = (0..10_000)
            .filter(|_| argmax(&gumbel_softmax(&[10.0, 0.0, 0.0], 0.1, &mut rng).unwrap()) == 0)
            .count();
        assert!(wins > 9_990);
    }

    #[test]
    fn jacobian_rows_of_columns_sum_to_zero() {
        let s = gumbel_softmax_with_noise(&[0.3, -1.0, 2.0, 0.1], &[0.5, 0.2, -0.3, 1.1], 0.7).unwrap();
        let j = gumbel_softmax_jacobian(&s, 0.7);
        for i in 0..4 {
            let col: f64 = j.iter().map(|row| row[i]).sum();
            assert!(col.abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_examples() {
        let s = TemperatureSchedule { initial: 5.0, factor: 0.98, interval: 100 };
        assert_eq!(s.at(0), 5.0);
        assert_eq!(s.at(99), 5.0);
        assert!((s.at(100) - 4.9).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for step in (0..10_000).step_by(37) {
            assert!(s.at(step) <= prev);
            prev = s.at(step);
        }
    }

    #[test]
    fn topk_is_clamped_and_led_by_hard_choice() {
        let arch = ArchParams::uniform(&[5, 1, 3], 1.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = arch.sample(&mut rng);
        assert_eq!(s.topk.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 1, 3]);
        for l in 0..3 {
            assert_eq!(s.topk[l][0], s.hard[l]);
            assert_eq!(s.hard[l], argmax(&s.soft[l]));
        }
    }
}
