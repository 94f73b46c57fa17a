//! Production watershed: heap-based priority flood plus incremental
//! hierarchy bookkeeping.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use ndarray::Array2;

use crate::error::{FieldkitError, Result};

use super::{build_surface, HierarchyCriterion, InstanceMap, WatershedParams, NEIGHBORS4};

/// Extract field instances from the extent/boundary probability maps.
/// All-background predictions yield an empty map, not an error.
pub fn watershed_segment(
    extent: &Array2<f32>,
    boundary: &Array2<f32>,
    params: &WatershedParams,
) -> Result<InstanceMap> {
    params.validate()?;
    if extent.dim() != boundary.dim() {
        return Err(FieldkitError::ShapeMismatch(format!(
            "extent {:?} vs boundary {:?}",
            extent.dim(),
            boundary.dim()
        )));
    }
    for (&e, &b) in extent.iter().zip(boundary.iter()) {
        if !(0.0..=1.0).contains(&e) || !(0.0..=1.0).contains(&b) {
            return Err(FieldkitError::InvalidArgument(
                "probability maps must lie in [0,1]".to_string(),
            ));
        }
    }
    let (rows, cols) = extent.dim();
    let surface = build_surface(extent, boundary, params.surface_mix);

    let (mut labels, n_markers) = label_markers(&surface, params.marker_threshold);
    if n_markers == 0 {
        return Ok(InstanceMap::empty(rows, cols));
    }
    flood(&surface, &mut labels);
    merge_hierarchy(&surface, &mut labels, n_markers, params);
    apply_cutoff(extent, &mut labels, params.extent_cutoff);
    let mut relabeled = split_components(&labels);
    absorb_small_instances(&surface, &mut relabeled, params.min_instance_px);
    Ok(InstanceMap::canonicalize(&relabeled))
}

/// 4-connected components of `{surface < threshold}`, labeled 1..n in scan
/// order of their first pixel.
fn label_markers(surface: &Array2<f64>, threshold: f64) -> (Array2<u32>, u32) {
    let (rows, cols) = surface.dim();
    let mut labels = Array2::<u32>::zeros((rows, cols));
    let mut next = 0u32;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if surface[(r, c)] < threshold && labels[(r, c)] == 0 {
                next += 1;
                labels[(r, c)] = next;
                stack.push((r, c));
                while let Some((pr, pc)) = stack.pop() {
                    for (dr, dc) in NEIGHBORS4 {
                        let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                        if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                            continue;
                        }
                        let (nr, nc) = (nr as usize, nc as usize);
                        if surface[(nr, nc)] < threshold && labels[(nr, nc)] == 0 {
                            labels[(nr, nc)] = next;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
        }
    }
    (labels, next)
}

#[derive(PartialEq)]
struct Entry {
    height: f64,
    step: u32,
    idx: usize,
    label: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the min pops first from a max-heap. Final tie-break
        // by label keeps the order a pure function of the data.
        other
            .height
            .total_cmp(&self.height)
            .then_with(|| other.step.cmp(&self.step))
            .then_with(|| other.idx.cmp(&self.idx))
            .then_with(|| other.label.cmp(&self.label))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Meyer-style flood: expand all markers simultaneously by increasing
/// surface height; first pop claims a pixel.
fn flood(surface: &Array2<f64>, labels: &mut Array2<u32>) {
    let (rows, cols) = surface.dim();
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<Entry>, r: usize, c: usize, step: u32, label: u32| {
        heap.push(Entry { height: surface[(r, c)], step, idx: r * cols + c, label });
    };
    for r in 0..rows {
        for c in 0..cols {
            let label = labels[(r, c)];
            if label == 0 {
                continue;
            }
            for (dr, dc) in NEIGHBORS4 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if labels[(nr, nc)] == 0 {
                    push(&mut heap, nr, nc, 0, label);
                }
            }
        }
    }
    while let Some(entry) = heap.pop() {
        let (r, c) = (entry.idx / cols, entry.idx % cols);
        if labels[(r, c)] != 0 {
            continue;
        }
        labels[(r, c)] = entry.label;
        for (dr, dc) in NEIGHBORS4 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if labels[(nr, nc)] == 0 {
                push(&mut heap, nr, nc, entry.step + 1, entry.label);
            }
        }
    }
}

/// Merge adjacent regions while the criterion stays below `persistence`,
/// smallest criterion first, ties by (min id, max id). Incremental stats.
fn merge_hierarchy(
    surface: &Array2<f64>,
    labels: &mut Array2<u32>,
    n_regions: u32,
    params: &WatershedParams,
) {
    if params.persistence <= 0.0 || n_regions < 2 {
        return;
    }
    let (rows, cols) = surface.dim();
    let n = n_regions as usize;
    let mut min_h = vec![f64::INFINITY; n + 1];
    let mut area = vec![0usize; n + 1];
    for r in 0..rows {
        for c in 0..cols {
            let l = labels[(r, c)] as usize;
            if l == 0 {
                continue;
            }
            min_h[l] = min_h[l].min(surface[(r, c)]);
            area[l] += 1;
        }
    }
    // Pass height between adjacent regions: min over shared edges of the
    // higher of the two pixel heights.
    let mut pass: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = labels[(r, c)];
            if a == 0 {
                continue;
            }
            for (dr, dc) in [(0i64, 1i64), (1, 0)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let b = labels[(nr as usize, nc as usize)];
                if b == 0 || b == a {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                let h = surface[(r, c)].max(surface[(nr as usize, nc as usize)]);
                pass.entry(key).and_modify(|v| *v = v.min(h)).or_insert(h);
            }
        }
    }
    // Union bookkeeping: alias -> canonical surviving id.
    let mut canon: Vec<u32> = (0..=n_regions).collect();
    let resolve = |canon: &Vec<u32>, mut x: u32| -> u32 {
        while canon[x as usize] != x {
            x = canon[x as usize];
        }
        x
    };
    loop {
        let mut best: Option<((u32, u32), f64)> = None;
        for (&(a, b), &p) in pass.iter() {
            let value = match params.hierarchy_criterion {
                HierarchyCriterion::Dynamics => p - min_h[a as usize].max(min_h[b as usize]),
                HierarchyCriterion::Area => area[a as usize].min(area[b as usize]) as f64,
            };
            let better = match best {
                None => true,
                Some((_, bv)) => value < bv,
            };
            if better {
                best = Some(((a, b), value));
            }
        }
        let Some(((a, b), value)) = best else { break };
        if value >= params.persistence {
            break;
        }
        // Merge b into a (a < b by key construction).
        canon[b as usize] = a;
        min_h[a as usize] = min_h[a as usize].min(min_h[b as usize]);
        area[a as usize] += area[b as usize];
        let edges: Vec<((u32, u32), f64)> = pass
            .iter()
            .filter(|(&(x, y), _)| x == b || y == b)
            .map(|(&k, &v)| (k, v))
            .collect();
        for (k, v) in edges {
            pass.remove(&k);
            let other = if k.0 == b { k.1 } else { k.0 };
            if other == a {
                continue;
            }
            let nk = (a.min(other), a.max(other));
            pass.entry(nk).and_modify(|e| *e = e.min(v)).or_insert(v);
        }
    }
    for l in labels.iter_mut() {
        if *l != 0 {
            *l = resolve(&canon, *l);
        }
    }
}

fn apply_cutoff(extent: &Array2<f32>, labels: &mut Array2<u32>, cutoff: f64) {
    for (l, &e) in labels.iter_mut().zip(extent.iter()) {
        if (e as f64) < cutoff {
            *l = 0;
        }
    }
}

/// Split each label into its 4-connected components (cutoff can sever a
/// region); output ids are fresh and scan-ordered.
pub(crate) fn split_components(labels: &Array2<u32>) -> Array2<u32> {
    let (rows, cols) = labels.dim();
    let mut out = Array2::<u32>::zeros((rows, cols));
    let mut next = 0u32;
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if labels[(r, c)] == 0 || out[(r, c)] != 0 {
                continue;
            }
            let id = labels[(r, c)];
            next += 1;
            out[(r, c)] = next;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                for (dr, dc) in NEIGHBORS4 {
                    let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if labels[(nr, nc)] == id && out[(nr, nc)] == 0 {
                        out[(nr, nc)] = next;
                        stack.push((nr, nc));
                    }
                }
            }
        }
    }
    out
}

/// Merge instances below `min_px` into the neighbor across the lowest
/// shared-boundary height, smallest instance first; background when no
/// instance neighbor exists.
pub(crate) fn absorb_small_instances(
    surface: &Array2<f64>,
    labels: &mut Array2<u32>,
    min_px: usize,
) {
    if min_px <= 1 {
        return;
    }
    let (rows, cols) = labels.dim();
    loop {
        let max_id = labels.iter().copied().max().unwrap_or(0) as usize;
        if max_id == 0 {
            return;
        }
        let mut area = vec![0usize; max_id + 1];
        for &l in labels.iter() {
            area[l as usize] += 1;
        }
        area[0] = 0;
        // Smallest undersized instance, ties by id.
        let victim = (1..=max_id)
            .filter(|&i| area[i] > 0 && area[i] < min_px)
            .min_by_key(|&i| (area[i], i));
        let Some(victim) = victim else { return };
        let victim = victim as u32;
        // Lowest shared-boundary height to any instance neighbor.
        let mut best: Option<(f64, u32)> = None;
        for r in 0..rows {
            for c in 0..cols {
                if labels[(r, c)] != victim {
                    continue;
                }
                for (dr, dc) in NEIGHBORS4 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    let other = labels[(nr, nc)];
                    if other == 0 || other == victim {
                        continue;
                    }
                    let h = surface[(r, c)].max(surface[(nr, nc)]);
                    let replace = match best {
                        None => true,
                        Some((bh, bid)) => h < bh || (h == bh && other < bid),
                    };
                    if replace {
                        best = Some((h, other));
                    }
                }
            }
        }
        let target = best.map(|(_, id)| id).unwrap_or(0);
        for l in labels.iter_mut() {
            if *l == victim {
                *l = target;
            }
        }
    }
}
