//! Multi-temporal input construction: separate per-season samples sharing
//! one label, or a single channel-stacked input.

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// One input per season; the label is replicated across them.
    Separate,
    /// One input with all seasons concatenated channel-wise.
    Stacked,
}

impl std::str::FromStr for TemporalMode {
    type Err = FieldkitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(TemporalMode::Separate),
            "stacked" => Ok(TemporalMode::Stacked),
            other => Err(FieldkitError::InvalidArgument(format!(
                "unknown temporal mode '{other}' (expected separate|stacked)"
            ))),
        }
    }
}

/// Build the model inputs for one scene's seasonal imagery. `shuffle`
/// permutes season order (stacked mode only), deterministic in the seed.
pub fn make_multitemporal_input(
    seasons: &[Array3<f32>],
    mode: TemporalMode,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Array3<f32>>> {
    if seasons.is_empty() {
        return Err(FieldkitError::InvalidArgument("need at least one season".to_string()));
    }
    let dim = seasons[0].dim();
    for (i, s) in seasons.iter().enumerate() {
        if s.dim() != dim {
            return Err(FieldkitError::ShapeMismatch(format!(
                "season {i} is {:?}, season 0 is {dim:?}",
                s.dim()
            )));
        }
    }
    match mode {
        TemporalMode::Separate => Ok(seasons.to_vec()),
        TemporalMode::Stacked => {
            let mut order: Vec<usize> = (0..seasons.len()).collect();
            if shuffle {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                order.shuffle(&mut rng);
            }
            let views: Vec<_> = order.iter().map(|&i| seasons[i].view()).collect();
            let stacked = ndarray::concatenate(Axis(0), &views)
                .map_err(|e| FieldkitError::ShapeMismatch(e.to_string()))?;
            Ok(vec![stacked])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seasons(n: usize) -> Vec<Array3<f32>> {
        (0..n)
            .map(|i| Array3::from_elem((3, 4, 4), i as f32))
            .collect()
    }

    #[test]
    fn separate_triples_dataset_size() {
        let out =
            make_multitemporal_input(&seasons(3), TemporalMode::Separate, false, 0).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].dim(), (3, 4, 4));
    }

    #[test]
    fn stacked_gives_nine_bands() {
        let out = make_multitemporal_input(&seasons(3), TemporalMode::Stacked, false, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].dim(), (9, 4, 4));
        // Unshuffled order: season i occupies bands 3i..3i+3.
        assert_eq!(out[0][(0, 0, 0)], 0.0);
        assert_eq!(out[0][(3, 0, 0)], 1.0);
        assert_eq!(out[0][(6, 0, 0)], 2.0);
    }

    #[test]
    fn single_season_modes_agree() {
        let s = seasons(1);
        let a = make_multitemporal_input(&s, TemporalMode::Separate, false, 0).unwrap();
        let b = make_multitemporal_input(&s, TemporalMode::Stacked, false, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_is_deterministic_and_permutes() {
        let s = seasons(4);
        let a = make_multitemporal_input(&s, TemporalMode::Stacked, true, 9).unwrap();
        let b = make_multitemporal_input(&s, TemporalMode::Stacked, true, 9).unwrap();
        assert_eq!(a, b);
        let mut orders = std::collections::BTreeSet::new();
        for seed in 0..12 {
            let out = make_multitemporal_input(&s, TemporalMode::Stacked, true, seed).unwrap();
            let order: Vec<u8> = (0..4).map(|i| out[0][(3 * i, 0, 0)] as u8).collect();
            orders.insert(order);
        }
        assert!(orders.len() > 1, "shuffling never permuted the stack");
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(make_multitemporal_input(&[], TemporalMode::Separate, false, 0).is_err());
        let mut s = seasons(2);
        s[1] = Array3::zeros((3, 5, 4));
        assert!(make_multitemporal_input(&s, TemporalMode::Stacked, false, 0).is_err());
        assert!("sideways".parse::<TemporalMode>().is_err());
    }
}
