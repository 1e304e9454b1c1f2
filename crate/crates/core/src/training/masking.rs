use rand::seq::index;
use rand::Rng;

/// Query tokens (`0..J+V_coarse`) whose inputs are zeroed for one step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted, distinct.
    pub indices: Vec<usize>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn fraction(&self, queries: usize) -> f64 {
        self.indices.len() as f64 / queries as f64
    }
}

/// Ratio `r ~ U[0, ratio_max]`, then `floor(r·queries)` distinct indices.
pub fn sample_mask_plan(ratio_max: f64, queries: usize, rng: &mut impl Rng) -> MaskPlan {
    if ratio_max <= 0.0 || queries == 0 {
        return MaskPlan::default();
    }
    let r = rng.random::<f64>() * ratio_max.min(1.0);
    mask_plan_with_ratio(r, queries, rng)
}

/// Plan with a fixed ratio.
pub fn mask_plan_with_ratio(r: f64, queries: usize, rng: &mut impl Rng) -> MaskPlan {
    let k = ((r.clamp(0.0, 1.0) * queries as f64).floor() as usize).min(queries);
    let mut indices = index::sample(rng, queries, k).into_vec();
    indices.sort_unstable();
    MaskPlan { indices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_ratio_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_mask_plan(0.0, 56, &mut rng).is_empty());
        }
    }

    #[test]
    fn full_ratio_masks_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = mask_plan_with_ratio(1.0, 56, &mut rng);
        assert_eq!(plan.indices, (0..56).collect::<Vec<_>>());
    }

    #[test]
    fn bounded_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let p = sample_mask_plan(0.3, 445, &mut rng);
            assert!(p.indices.len() as f64 <= 0.3 * 445.0);
            assert!(p.indices.windows(2).all(|w| w[0] < w[1]));
            assert!(p.indices.iter().all(|&i| i < 445));
        }
    }
}
