//! Equivariant normalization: split a feature into rotation-invariant
//! standardized norms and a bounded equivariant direction.

use serde::{Deserialize, Serialize};

use crate::equivariant::irreps::{invariant_content, IrrepsFeature};
use crate::scalar::Scalar;

/// Running mean/standard deviation of the invariant content, one per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvNormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EvNormStats {
    pub const MOMENTUM: f64 = 0.99;
    const STD_FLOOR: f64 = 1e-3;

    pub fn new(channels: usize) -> Self {
        EvNormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Folds a batch of observed norms (rows of `channels` values) into the running averages.
    pub fn update(&mut self, observations: &[Vec<f64>]) {
        if observations.is_empty() {
            return;
        }
        let c = self.mean.len();
        let count = observations.len() as f64;
        for k in 0..c {
            let mean = observations.iter().map(|o| o[k]).sum::<f64>() / count;
            let var = observations
                .iter()
                .map(|o| (o[k] - mean).powi(2))
                .sum::<f64>()
                / count;
            let std = var.sqrt().max(Self::STD_FLOOR);
            self.mean[k] = Self::MOMENTUM * self.mean[k] + (1.0 - Self::MOMENTUM) * mean;
            self.std[k] = Self::MOMENTUM * self.std[k] + (1.0 - Self::MOMENTUM) * std;
        }
    }
}

/// Returns `(h_bar, h_hat)`: standardized invariant content per channel and the
/// direction part `h / (||h|| + 1/beta + eps)`.
pub fn evnorm<T: Scalar>(
    h: &IrrepsFeature<T>,
    stats: &EvNormStats,
    beta: &[T],
    eps: T,
) -> (Vec<T>, IrrepsFeature<T>) {
    let norms = invariant_content(&h.spec, &h.data, eps);
    let bar = norms
        .iter()
        .enumerate()
        .map(|(k, nk)| (*nk - T::lit(stats.mean[k])) / T::lit(stats.std[k]))
        .collect();
    let mut hat = h.clone();
    for seg in h.spec.segments() {
        let w = seg.width();
        for n in 0..seg.n {
            let k = seg.channel_offset + n;
            let denom = norms[k] + T::one() / beta[k] + eps;
            for x in &mut hat.data[seg.offset + n * w..seg.offset + (n + 1) * w] {
                *x /= denom;
            }
        }
    }
    (bar, hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::irreps::{rotate_feature, IrrepsSpec};
    use crate::equivariant::wigner::{random_rotation, RotationRep};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(rng: &mut ChaCha8Rng) -> (IrrepsFeature<f64>, EvNormStats, Vec<f64>) {
        let spec = IrrepsSpec::from_counts(&[4, 3, 2, 1, 1], &[2, 2, 1, 1]);
        let h = IrrepsFeature::from_vec(
            &spec,
            (0..spec.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let c = spec.num_channels();
        let stats = EvNormStats {
            mean: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
            std: (0..c).map(|_| rng.gen_range(0.5..2.0)).collect(),
        };
        let beta = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        (h, stats, beta)
    }

    #[test]
    fn zero_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, stats, beta) = fixture(&mut rng);
        let z = IrrepsFeature::zeros(&h.spec);
        let (bar, hat) = evnorm(&z, &stats, &beta, 0.1);
        assert!(hat.data.iter().all(|x| *x == 0.0));
        for k in 0..bar.len() {
            assert!((bar[k] + stats.mean[k] / stats.std[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn scaling_preserves_direction_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, stats, beta) = fixture(&mut rng);
        let mut h2 = h.clone();
        h2.data.iter_mut().for_each(|x| *x *= 3.7);
        let (_, a) = evnorm(&h, &stats, &beta, 0.1);
        let (_, b) = evnorm(&h2, &stats, &beta, 0.1);
        for seg in h.spec.segments() {
            for n in 0..seg.n {
                let (ca, cb) = (a.channel(seg, n), b.channel(seg, n));
                let ratio = cb[0] / ca[0];
                assert!(ratio > 0.0);
                for (x, y) in ca.iter().zip(cb) {
                    assert!((y - ratio * x).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invariant_and_equivariant_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, stats, beta) = fixture(&mut rng);
        let (bar, hat) = evnorm(&h, &stats, &beta, 0.1);
        for _ in 0..100 {
            let rep = RotationRep::new(random_rotation(&mut rng), 4).unwrap();
            let (bar_r, hat_r) = evnorm(&rotate_feature(&h, &rep), &stats, &beta, 0.1);
            let hat_rot = rotate_feature(&hat, &rep);
            for (x, y) in bar.iter().zip(&bar_r) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in hat_rot.data.iter().zip(&hat_r.data) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn running_stats_update() {
        let mut s = EvNormStats::new(2);
        s.update(&[vec![1.0, 2.0], vec![3.0, 2.0]]);
        assert!((s.mean[0] - 0.02).abs() < 1e-15);
        assert!((s.std[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-15);
        assert!((s.std[1] - (0.99 + 0.01 * 1e-3)).abs() < 1e-15);
    }
}
