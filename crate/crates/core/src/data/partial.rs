//! Partial-label subsampling under a fixed labeling budget.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};
use crate::geom::FieldPolygon;

/// Fixed field budget spread over images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBudget {
    pub total_fields: usize,
    pub fields_per_image: usize,
}

impl LabelBudget {
    pub fn new(total_fields: usize, fields_per_image: usize) -> Result<Self> {
        let b = Self { total_fields, fields_per_image };
        b.n_images()?;
        Ok(b)
    }

    pub fn n_images(&self) -> Result<usize> {
        if self.fields_per_image < 1 {
            return Err(FieldkitError::InvalidArgument(
                "fields_per_image must be >= 1".to_string(),
            ));
        }
        if self.total_fields % self.fields_per_image != 0 {
            return Err(FieldkitError::InvalidArgument(format!(
                "budget {} not divisible by fields_per_image {}",
                self.total_fields, self.fields_per_image
            )));
        }
        Ok(self.total_fields / self.fields_per_image)
    }
}

/// How fields are picked for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Fields nearest (by centroid) to a uniformly random anchor point.
    AnchorClustered,
    /// Uniformly random fields; the ablation alternative.
    Uniform,
}

/// Draw `budget.n_images()` disjoint subsets of `budget.fields_per_image`
/// fields each from the pool. Deterministic in the seed.
pub fn sample_partial_labels(
    pool: &[FieldPolygon],
    budget: &LabelBudget,
    kind: SamplerKind,
    seed: u64,
) -> Result<Vec<Vec<FieldPolygon>>> {
    let n_images = budget.n_images()?;
    if pool.len() < budget.total_fields {
        return Err(FieldkitError::InvalidArgument(format!(
            "pool has {} fields, budget needs {}",
            pool.len(),
            budget.total_fields
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min_x, min_y, max_x, max_y) = pool_bounds(pool);
    let mut used = vec![false; pool.len()];
    let mut subsets = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let picked: Vec<usize> = match kind {
            SamplerKind::AnchorClustered => {
                let ax = min_x + rng.gen::<f64>() * (max_x - min_x);
                let ay = min_y + rng.gen::<f64>() * (max_y - min_y);
                let mut free: Vec<(usize, f64)> = pool
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !used[*i])
                    .map(|(i, p)| {
                        let (cx, cy) = p.centroid();
                        (i, (cx - ax).powi(2) + (cy - ay).powi(2))
                    })
                    .collect();
                free.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                free.into_iter().take(budget.fields_per_image).map(|(i, _)| i).collect()
            }
            SamplerKind::Uniform => {
                let mut free: Vec<usize> =
                    (0..pool.len()).filter(|&i| !used[i]).collect();
                let mut picked = Vec::with_capacity(budget.fields_per_image);
                for _ in 0..budget.fields_per_image {
                    let j = rng.gen_range(0..free.len());
                    picked.push(free.swap_remove(j));
                }
                picked
            }
        };
        for &i in &picked {
            used[i] = true;
        }
        subsets.push(picked.into_iter().map(|i| pool[i].clone()).collect());
    }
    Ok(subsets)
}

fn pool_bounds(pool: &[FieldPolygon]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pool {
        for &(x, y) in &p.ring {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<FieldPolygon> {
        (0..n)
            .map(|i| {
                let x = (i % 10) as f64 * 5.0;
                let y = (i / 10) as f64 * 5.0;
                FieldPolygon::rect(i as u32 + 1, x, y, x + 4.0, y + 4.0, "m")
            })
            .collect()
    }

    #[test]
    fn budget_arithmetic() {
        let b = LabelBudget::new(10_000, 2).unwrap();
        assert_eq!(b.n_images().unwrap(), 5_000);
        assert!(LabelBudget::new(10, 3).is_err());
        assert!(LabelBudget::new(10, 0).is_err());
    }

    #[test]
    fn saturation_takes_every_field() {
        let fields = pool(12);
        let b = LabelBudget::new(12, 12).unwrap();
        let subsets =
            sample_partial_labels(&fields, &b, SamplerKind::AnchorClustered, 3).unwrap();
        assert_eq!(subsets.len(), 1);
        assert_eq!(subsets[0].len(), 12);
    }

    #[test]
    fn subsets_are_disjoint_and_deterministic() {
        let fields = pool(40);
        let b = LabelBudget::new(24, 4).unwrap();
        for kind in [SamplerKind::AnchorClustered, SamplerKind::Uniform] {
            let a = sample_partial_labels(&fields, &b, kind, 5).unwrap();
            let b2 = sample_partial_labels(&fields, &b, kind, 5).unwrap();
            assert_eq!(a, b2);
            let mut seen = std::collections::BTreeSet::new();
            for subset in &a {
                assert_eq!(subset.len(), 4);
                for p in subset {
                    assert!(seen.insert(p.id), "field {} drawn twice", p.id);
                }
            }
        }
    }

    #[test]
    fn insufficient_pool_is_reported() {
        let fields = pool(5);
        let b = LabelBudget::new(8, 2).unwrap();
        assert!(sample_partial_labels(&fields, &b, SamplerKind::Uniform, 1).is_err());
    }

    #[test]
    fn anchored_subsets_cluster_spatially() {
        let fields = pool(100);
        let b = LabelBudget::new(5, 5).unwrap();
        let subsets =
            sample_partial_labels(&fields, &b, SamplerKind::AnchorClustered, 11).unwrap();
        let subset = &subsets[0];
        // Spread of a clustered pick is far below the pool diameter.
        let cents: Vec<(f64, f64)> = subset.iter().map(|p| p.centroid()).collect();
        let max_pair = cents
            .iter()
            .flat_map(|a| cents.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
            .fold(0.0f64, f64::max);
        assert!(max_pair < 25.0, "cluster spread {max_pair}");
    }

    #[test]
    fn uniform_sampler_is_uniform_in_expectation() {
        // Chi-square over many seeds on a small pool.
        let fields = pool(10);
        let b = LabelBudget::new(2, 2).unwrap();
        let mut counts = vec![0usize; 10];
        let trials = 4000;
        for seed in 0..trials {
            let subsets =
                sample_partial_labels(&fields, &b, SamplerKind::Uniform, seed as u64).unwrap();
            for p in &subsets[0] {
                counts[(p.id - 1) as usize] += 1;
            }
        }
        let expected = (trials * 2) as f64 / 10.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 dof, p=0.001 critical value is 27.88.
        assert!(chi2 < 27.88, "chi2 {chi2}, counts {counts:?}");
    }
}
