//! Per-field IoU against predicted instances, and their aggregation.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::instance::InstanceMap;

/// How ground-truth fields claim predicted instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    /// Each field independently takes its best-overlap instance (default;
    /// one instance may serve several fields).
    BestOverlap,
    /// Greedy exclusive assignment by descending IoU, for sensitivity
    /// analysis.
    ExclusiveGreedy,
}

/// IoU of one ground-truth field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldIou {
    pub field_id: u32,
    pub iou: f64,
    pub field_area_px: usize,
    pub matched_instance: Option<u32>,
}

/// IoU of a single ground-truth pixel set against the best-overlapping
/// predicted instance. Ties on intersection break toward the larger IoU
/// (smaller instance), then the smaller instance id.
pub fn field_iou(gt_pixels: &[(usize, usize)], inst: &InstanceMap) -> (f64, Option<u32>) {
    assert!(!gt_pixels.is_empty(), "ground-truth field must be non-empty");
    let mut overlap: BTreeMap<u32, usize> = BTreeMap::new();
    for &(r, c) in gt_pixels {
        let id = inst.labels[(r, c)];
        if id > 0 {
            *overlap.entry(id).or_insert(0) += 1;
        }
    }
    let mut inst_area: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in overlap.keys() {
        inst_area.insert(id, 0);
    }
    if !inst_area.is_empty() {
        for &id in inst.labels.iter() {
            if let Some(a) = inst_area.get_mut(&id) {
                *a += 1;
            }
        }
    }
    let gt_area = gt_pixels.len();
    let mut best: Option<(usize, f64, u32)> = None; // (intersection, iou, id)
    for (&id, &inter) in &overlap {
        let union = gt_area + inst_area[&id] - inter;
        let iou = inter as f64 / union as f64;
        let better = match best {
            None => true,
            Some((bi, biou, bid)) => {
                inter > bi || (inter == bi && (iou > biou || (iou == biou && id < bid)))
            }
        };
        if better {
            best = Some((inter, iou, id));
        }
    }
    match best {
        Some((_, iou, id)) => (iou, Some(id)),
        None => (0.0, None),
    }
}

/// Evaluate every ground-truth field of an instance raster against the
/// predictions. `gt` must carry contiguous ids from 1 (0 = background).
pub fn match_fields(gt: &Array2<u32>, pred: &InstanceMap, policy: MatchPolicy) -> Vec<FieldIou> {
    let mut gt_pixels: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for ((r, c), &id) in gt.indexed_iter() {
        if id > 0 {
            gt_pixels.entry(id).or_default().push((r, c));
        }
    }
    match policy {
        MatchPolicy::BestOverlap => gt_pixels
            .iter()
            .map(|(&id, px)| {
                let (iou, matched) = field_iou(px, pred);
                FieldIou { field_id: id, iou, field_area_px: px.len(), matched_instance: matched }
            })
            .collect(),
        MatchPolicy::ExclusiveGreedy => {
            let mut provisional: Vec<FieldIou> = gt_pixels
                .iter()
                .map(|(&id, px)| {
                    let (iou, matched) = field_iou(px, pred);
                    FieldIou {
                        field_id: id,
                        iou,
                        field_area_px: px.len(),
                        matched_instance: matched,
                    }
                })
                .collect();
            // Assign instances by descending IoU (ties: smaller field id);
            // losers rescore against the remaining instances.
            let mut taken: Vec<u32> = Vec::new();
            let mut order: Vec<usize> = (0..provisional.len()).collect();
            order.sort_by(|&a, &b| {
                provisional[b]
                    .iou
                    .partial_cmp(&provisional[a].iou)
                    .unwrap()
                    .then(provisional[a].field_id.cmp(&provisional[b].field_id))
            });
            for i in order {
                let fid = provisional[i].field_id;
                let px = &gt_pixels[&fid];
                let mut masked = pred.clone();
                for l in masked.labels.iter_mut() {
                    if taken.contains(l) {
                        *l = 0;
                    }
                }
                let (iou, matched) = field_iou(px, &masked);
                provisional[i].iou = iou;
                provisional[i].matched_instance = matched;
                if let Some(id) = matched {
                    taken.push(id);
                }
            }
            provisional.sort_by_key(|f| f.field_id);
            provisional
        }
    }
}

/// Median IoU and the IoU_k curve sampled at k = 0, 5, ..., 100 (fraction
/// of fields with IoU strictly greater than k%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouCurve {
    pub median_iou: f64,
    /// (k percent, fraction of fields with IoU > k/100), non-increasing.
    pub points: Vec<(u32, f64)>,
}

pub fn aggregate_instances(per_field: &[FieldIou]) -> IouCurve {
    assert!(!per_field.is_empty(), "aggregate over at least one field");
    let mut ious: Vec<f64> = per_field.iter().map(|f| f.iou).collect();
    ious.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = ious.len();
    let median = if n % 2 == 1 { ious[n / 2] } else { 0.5 * (ious[n / 2 - 1] + ious[n / 2]) };
    let points = (0..=20)
        .map(|i| {
            let k = i * 5;
            let thresh = k as f64 / 100.0;
            let frac = ious.iter().filter(|&&v| v > thresh).count() as f64 / n as f64;
            (k, frac)
        })
        .collect();
    IouCurve { median_iou: median, points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst_from(labels: Array2<u32>) -> InstanceMap {
        let n = labels.iter().copied().max().unwrap_or(0) as usize;
        InstanceMap { labels, n_instances: n }
    }

    #[test]
    fn identical_regions_score_one() {
        let mut labels = Array2::<u32>::zeros((4, 4));
        let px: Vec<_> = (1..3).flat_map(|r| (1..3).map(move |c| (r, c))).collect();
        for &p in &px {
            labels[p] = 1;
        }
        let inst = inst_from(labels);
        let (iou, matched) = field_iou(&px, &inst);
        assert_eq!(iou, 1.0);
        assert_eq!(matched, Some(1));
    }

    #[test]
    fn half_coverage_scores_half() {
        // Prediction covers exactly half the field and nothing else.
        let mut labels = Array2::<u32>::zeros((4, 4));
        labels[(0, 0)] = 1;
        labels[(0, 1)] = 1;
        let gt = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let (iou, matched) = field_iou(&gt, &inst_from(labels));
        assert_eq!(iou, 0.5);
        assert_eq!(matched, Some(1));
    }

    #[test]
    fn disjoint_scores_zero_with_no_match() {
        let mut labels = Array2::<u32>::zeros((4, 4));
        labels[(3, 3)] = 1;
        let gt = vec![(0, 0)];
        let (iou, matched) = field_iou(&gt, &inst_from(labels));
        assert_eq!(iou, 0.0);
        assert_eq!(matched, None);
    }

    #[test]
    fn intersection_ties_prefer_larger_iou_then_smaller_id() {
        // Instances 1 (area 2) and 2 (area 4) both overlap the field by 2.
        let mut labels = Array2::<u32>::zeros((2, 6));
        labels[(0, 0)] = 1;
        labels[(0, 1)] = 1;
        labels[(1, 0)] = 2;
        labels[(1, 1)] = 2;
        labels[(1, 2)] = 2;
        labels[(1, 3)] = 2;
        let gt = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let (iou, matched) = field_iou(&gt, &inst_from(labels));
        assert_eq!(matched, Some(1));
        assert_eq!(iou, 2.0 / 4.0);
    }

    #[test]
    fn aggregate_hand_example() {
        let fi = |iou: f64| FieldIou { field_id: 1, iou, field_area_px: 10, matched_instance: None };
        let curve = aggregate_instances(&[fi(0.2), fi(0.6), fi(1.0)]);
        assert_eq!(curve.median_iou, 0.6);
        let iou50 = curve.points.iter().find(|(k, _)| *k == 50).unwrap().1;
        assert!((iou50 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ious_give_flat_curve_until_100() {
        let fi = FieldIou { field_id: 1, iou: 1.0, field_area_px: 4, matched_instance: Some(1) };
        let curve = aggregate_instances(&[fi, fi, fi]);
        assert_eq!(curve.median_iou, 1.0);
        for &(k, frac) in &curve.points {
            if k < 100 {
                assert_eq!(frac, 1.0, "k={k}");
            } else {
                assert_eq!(frac, 0.0, "IoU is never strictly > 100%");
            }
        }
    }

    #[test]
    fn curve_is_non_increasing() {
        let fi = |iou: f64| FieldIou { field_id: 1, iou, field_area_px: 1, matched_instance: None };
        let curve =
            aggregate_instances(&[fi(0.1), fi(0.33), fi(0.5), fi(0.77), fi(0.9), fi(0.05)]);
        for w in curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn matching_invariant_to_instance_relabeling() {
        let mut labels = Array2::<u32>::zeros((4, 4));
        for c in 0..2 {
            labels[(0, c)] = 1;
            labels[(1, c)] = 1;
        }
        for c in 2..4 {
            labels[(2, c)] = 2;
        }
        let mut gt = Array2::<u32>::zeros((4, 4));
        for c in 0..2 {
            gt[(0, c)] = 1;
        }
        for c in 2..4 {
            gt[(2, c)] = 2;
        }
        let a = match_fields(&gt, &inst_from(labels.clone()), MatchPolicy::BestOverlap);
        // Swap instance ids 1 <-> 2.
        let swapped = labels.mapv(|v| match v {
            1 => 2,
            2 => 1,
            other => other,
        });
        let b = match_fields(&gt, &inst_from(swapped), MatchPolicy::BestOverlap);
        let ious_a: Vec<f64> = a.iter().map(|f| f.iou).collect();
        let ious_b: Vec<f64> = b.iter().map(|f| f.iou).collect();
        assert_eq!(ious_a, ious_b);
    }

    #[test]
    fn exclusive_matching_prevents_double_claims() {
        // One big instance overlapping two fields.
        let mut labels = Array2::<u32>::zeros((2, 4));
        for c in 0..4 {
            labels[(0, c)] = 1;
        }
        let mut gt = Array2::<u32>::zeros((2, 4));
        gt[(0, 0)] = 1;
        gt[(0, 1)] = 1;
        gt[(0, 2)] = 2;
        gt[(0, 3)] = 2;
        let shared = match_fields(&gt, &inst_from(labels.clone()), MatchPolicy::BestOverlap);
        assert!(shared.iter().all(|f| f.matched_instance == Some(1)));
        let exclusive = match_fields(&gt, &inst_from(labels), MatchPolicy::ExclusiveGreedy);
        let claimed: Vec<_> = exclusive.iter().filter_map(|f| f.matched_instance).collect();
        assert_eq!(claimed.len(), 1, "only one field may keep the instance");
    }
}
