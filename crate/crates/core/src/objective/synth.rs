use super::{LocalObjective, ObjectiveError, Problem, Result, Shard};
use crate::linalg::{self, SymMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Per-coordinate feature scales, geometric from `sqrt(cond)` down to
/// `1/sqrt(cond)`, so that largest / smallest equals `cond`.
pub fn feature_scales(p: usize, condition_target: f64) -> Vec<f64> {
    if p == 1 {
        return vec![1.0];
    }
    let half = condition_target.sqrt();
    (0..p)
        .map(|k| half * condition_target.powf(-(k as f64) / (p - 1) as f64))
        .collect()
}

/// Synthetic binary classification data split across `n` workers.
#[derive(Debug, Clone)]
pub struct SynthLogistic {
    pub shards: Vec<Shard>,
    pub lambda: f64,
    pub scales: Vec<f64>,
    pub separator: Vec<f64>,
}

impl SynthLogistic {
    pub fn problem(&self) -> Result<Problem> {
        let locals = self
            .shards
            .iter()
            .cloned()
            .map(|s| LocalObjective::logistic(s, self.lambda))
            .collect::<Result<Vec<_>>>()?;
        Problem::new(locals)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Ill-conditioned logistic data: feature `k` is `scale_k · N(0, 1)`, labels
/// are the sign of a noisy margin against a random separator.
///
/// Panics if `n`, `p` or `m_per` is zero.
pub fn synth_logistic(
    seed: u64,
    n: usize,
    p: usize,
    m_per: usize,
    condition_target: f64,
    lambda: f64,
) -> SynthLogistic {
    assert!(n >= 1 && p >= 1 && m_per >= 1, "n, p and m_per must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = feature_scales(p, condition_target);
    // Separator weights are rescaled so every coordinate carries signal.
    let separator: Vec<f64> = scales.iter().map(|s| normal(&mut rng) / s).collect();
    let noise = 0.3 * (p as f64).sqrt();

    let shards = (0..n)
        .map(|_| {
            let mut features = Vec::with_capacity(m_per);
            let mut labels = Vec::with_capacity(m_per);
            for _ in 0..m_per {
                let a: Vec<f64> = scales.iter().map(|s| s * normal(&mut rng)).collect();
                let margin = linalg::dot(&a, &separator) + noise * normal(&mut rng);
                labels.push(if margin >= 0.0 { 1.0 } else { -1.0 });
                features.push(a);
            }
            Shard::new(p, features, labels).expect("generated shard is well formed")
        })
        .collect();

    SynthLogistic {
        shards,
        lambda,
        scales,
        separator,
    }
}

/// Random strongly convex quadratics `½ zᵀA_i z + b_iᵀz` with
/// `A_i = diag(s) + G_i G_iᵀ / p` and `s` spanning `[1, condition_target]`.
pub fn synth_quadratic(seed: u64, n: usize, p: usize, condition_target: f64) -> Problem {
    assert!(n >= 1 && p >= 1, "n and p must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag: Vec<f64> = if p == 1 {
        vec![1.0]
    } else {
        (0..p)
            .map(|k| condition_target.powf(k as f64 / (p - 1) as f64))
            .collect()
    };
    let locals = (0..n)
        .map(|_| {
            let g: Vec<f64> = (0..p * p).map(|_| normal(&mut rng)).collect();
            let mut a = SymMatrix::from_diagonal(&diag);
            for i in 0..p {
                for j in i..p {
                    let v: f64 = (0..p).map(|k| g[i * p + k] * g[j * p + k]).sum::<f64>() / p as f64;
                    a.set(i, j, a.get(i, j) + v);
                }
            }
            let b: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            LocalObjective::quadratic(a, b).expect("diag(s) + GGᵀ is positive definite")
        })
        .collect();
    Problem::new(locals).expect("all locals share the dimension")
}

/// Shuffles the samples with `seed` and cuts `n` equal contiguous pieces.
/// The `m mod n` trailing samples are dropped.
pub fn partition(shard: &Shard, n: usize, seed: u64) -> Result<Vec<Shard>> {
    let m = shard.len();
    if n == 0 || n > m {
        return Err(ObjectiveError::Contract(format!(
            "cannot split {m} samples across {n} workers"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let per = m / n;
    order
        .chunks_exact(per)
        .take(n)
        .map(|idx| {
            let features = idx.iter().map(|&j| shard.features()[j].clone()).collect();
            let labels = idx.iter().map(|&j| shard.labels()[j]).collect();
            Shard::new(shard.dim(), features, labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = synth_logistic(42, 3, 5, 8, 100.0, 0.1);
        let b = synth_logistic(42, 3, 5, 8, 100.0, 0.1);
        assert_eq!(a.shards, b.shards);
        let c = synth_logistic(43, 3, 5, 8, 100.0, 0.1);
        assert_ne!(a.shards, c.shards);
    }

    #[test]
    fn shape_contract() {
        let s = synth_logistic(1, 2, 4, 10, 10.0, 0.1);
        assert_eq!(s.shards.len(), 2);
        for shard in &s.shards {
            assert_eq!(shard.len(), 10);
            assert_eq!(shard.dim(), 4);
        }
    }

    #[test]
    fn scale_ratio_matches_condition_target() {
        let s = feature_scales(7, 1e3);
        let ratio = s.iter().cloned().fold(f64::MIN, f64::max) / s.iter().cloned().fold(f64::MAX, f64::min);
        assert!((ratio - 1e3).abs() < 1e-9);
        assert_eq!(feature_scales(1, 1e3), vec![1.0]);
    }

    #[test]
    fn both_labels_present() {
        let s = synth_logistic(3, 1, 6, 200, 100.0, 0.1);
        let pos = s.shards[0].labels().iter().filter(|b| **b > 0.0).count();
        assert!(pos > 20 && pos < 180, "pos = {pos}");
    }

    fn pooled(m: usize) -> Shard {
        let features = (0..m).map(|j| vec![j as f64]).collect();
        let labels = (0..m).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Shard::new(1, features, labels).unwrap()
    }

    #[test]
    fn partition_even_split() {
        let parts = partition(&pooled(10), 2, 0).unwrap();
        assert_eq!(parts.iter().map(Shard::len).collect::<Vec<_>>(), vec![5, 5]);
        let mut seen: Vec<f64> = parts.iter().flat_map(|s| s.features().iter().map(|a| a[0])).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|j| j as f64).collect::<Vec<_>>());
    }

    #[test]
    fn partition_drops_remainder() {
        let parts = partition(&pooled(11), 2, 0).unwrap();
        assert_eq!(parts.iter().map(Shard::len).collect::<Vec<_>>(), vec![5, 5]);
    }

    #[test]
    fn partition_is_deterministic() {
        assert_eq!(partition(&pooled(30), 4, 9).unwrap(), partition(&pooled(30), 4, 9).unwrap());
    }

    #[test]
    fn partition_rejects_too_many_workers() {
        assert!(matches!(partition(&pooled(3), 4, 0), Err(ObjectiveError::Contract(_))));
    }

    #[test]
    fn quadratics_are_deterministic_and_pd() {
        let a = synth_quadratic(5, 3, 4, 100.0);
        let b = synth_quadratic(5, 3, 4, 100.0);
        for (fa, fb) in a.locals().iter().zip(b.locals()) {
            let x = [0.1, 0.2, 0.3, 0.4];
            assert_eq!(fa.grad(&x).unwrap(), fb.grad(&x).unwrap());
            assert!(linalg::is_positive_definite(&fa.hessian(&x).unwrap()));
        }
    }
}
