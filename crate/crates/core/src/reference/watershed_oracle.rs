//! Naive priority-flood watershed, used to verify the heap-based path.
//!
//! Implements the identical extraction contract documented on
//! [`crate::instance`], but with deliberately simple machinery: the flood
//! frontier is a plain vector scanned linearly for its minimum entry, the
//! hierarchy recomputes region statistics and pass heights from the label
//! array at every merge step, and undersized instances are re-measured from
//! scratch each round. Output is canonical, so agreement with the fast path
//! is plain array equality.

use ndarray::Array2;

use crate::instance::{
    build_surface, HierarchyCriterion, InstanceMap, WatershedParams, NEIGHBORS4,
};

pub fn watershed_reference(
    extent: &Array2<f32>,
    boundary: &Array2<f32>,
    params: &WatershedParams,
) -> InstanceMap {
    let (rows, cols) = extent.dim();
    let surface = build_surface(extent, boundary, params.surface_mix);

    // Markers: repeated whole-array flood fills.
    let mut labels = Array2::<u32>::zeros((rows, cols));
    let mut next = 0u32;
    for r in 0..rows {
        for c in 0..cols {
            if surface[(r, c)] < params.marker_threshold && labels[(r, c)] == 0 {
                next += 1;
                fill_equal(&mut labels, &surface, (r, c), next, params.marker_threshold);
            }
        }
    }
    if next == 0 {
        return InstanceMap::empty(rows, cols);
    }

    flood_by_scanning(&surface, &mut labels);
    merge_from_scratch(&surface, &mut labels, params);

    for (l, &e) in labels.iter_mut().zip(extent.iter()) {
        if (e as f64) < params.extent_cutoff {
            *l = 0;
        }
    }
    let mut relabeled = components_naive(&labels);
    absorb_small_naive(&surface, &mut relabeled, params.min_instance_px);
    InstanceMap::canonicalize(&relabeled)
}

fn fill_equal(
    labels: &mut Array2<u32>,
    surface: &Array2<f64>,
    seed: (usize, usize),
    id: u32,
    threshold: f64,
) {
    let (rows, cols) = labels.dim();
    let mut stack = vec![seed];
    labels[seed] = id;
    while let Some((r, c)) = stack.pop() {
        for (dr, dc) in NEIGHBORS4 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if surface[(nr, nc)] < threshold && labels[(nr, nc)] == 0 {
                labels[(nr, nc)] = id;
                stack.push((nr, nc));
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Pending {
    height: f64,
    step: u32,
    idx: usize,
    label: u32,
}

fn key(p: &Pending) -> (f64, u32, usize, u32) {
    (p.height, p.step, p.idx, p.label)
}

/// Same pop order as the fast flood — (height, step, index, label) — found
/// by scanning the frontier for its minimum each iteration.
fn flood_by_scanning(surface: &Array2<f64>, labels: &mut Array2<u32>) {
    let (rows, cols) = surface.dim();
    let mut frontier: Vec<Pending> = Vec::new();
    let queue_neighbors = |frontier: &mut Vec<Pending>,
                               labels: &Array2<u32>,
                               r: usize,
                               c: usize,
                               step: u32,
                               label: u32| {
        for (dr, dc) in NEIGHBORS4 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if labels[(nr, nc)] == 0 {
                frontier.push(Pending {
                    height: surface[(nr, nc)],
                    step,
                    idx: nr * cols + nc,
                    label,
                });
            }
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let l = labels[(r, c)];
            if l != 0 {
                queue_neighbors(&mut frontier, labels, r, c, 0, l);
            }
        }
    }
    while !frontier.is_empty() {
        let mut best = 0usize;
        for i in 1..frontier.len() {
            let (ah, asp, ai, al) = key(&frontier[i]);
            let (bh, bsp, bi, bl) = key(&frontier[best]);
            if (ah, asp, ai, al) < (bh, bsp, bi, bl) {
                best = i;
            }
        }
        let entry = frontier.swap_remove(best);
        let (r, c) = (entry.idx / cols, entry.idx % cols);
        if labels[(r, c)] != 0 {
            continue;
        }
        labels[(r, c)] = entry.label;
        queue_neighbors(&mut frontier, labels, r, c, entry.step + 1, entry.label);
    }
}

/// One merge per iteration, recomputing everything from the labels.
fn merge_from_scratch(surface: &Array2<f64>, labels: &mut Array2<u32>, params: &WatershedParams) {
    if params.persistence <= 0.0 {
        return;
    }
    let (rows, cols) = labels.dim();
    loop {
        let max_id = labels.iter().copied().max().unwrap_or(0) as usize;
        if max_id < 2 {
            return;
        }
        let mut min_h = vec![f64::INFINITY; max_id + 1];
        let mut area = vec![0usize; max_id + 1];
        for r in 0..rows {
            for c in 0..cols {
                let l = labels[(r, c)] as usize;
                if l > 0 {
                    min_h[l] = min_h[l].min(surface[(r, c)]);
                    area[l] += 1;
                }
            }
        }
        let mut best: Option<(f64, u32, u32)> = None; // (value, a, b)
        for a in 1..=max_id as u32 {
            if area[a as usize] == 0 {
                continue;
            }
            for b in (a + 1)..=max_id as u32 {
                if area[b as usize] == 0 {
                    continue;
                }
                let mut pass = f64::INFINITY;
                for r in 0..rows {
                    for c in 0..cols {
                        if labels[(r, c)] != a && labels[(r, c)] != b {
                            continue;
                        }
                        for (dr, dc) in NEIGHBORS4 {
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                                continue;
                            }
                            let (nr, nc) = (nr as usize, nc as usize);
                            let pair = (labels[(r, c)], labels[(nr, nc)]);
                            if pair == (a, b) || pair == (b, a) {
                                pass = pass.min(surface[(r, c)].max(surface[(nr, nc)]));
                            }
                        }
                    }
                }
                if pass.is_infinite() {
                    continue; // not adjacent
                }
                let value = match params.hierarchy_criterion {
                    HierarchyCriterion::Dynamics => {
                        pass - min_h[a as usize].max(min_h[b as usize])
                    }
                    HierarchyCriterion::Area => {
                        area[a as usize].min(area[b as usize]) as f64
                    }
                };
                let better = match best {
                    None => true,
                    Some((bv, _, _)) => value < bv,
                };
                if better {
                    best = Some((value, a, b));
                }
            }
        }
        let Some((value, a, b)) = best else { return };
        if value >= params.persistence {
            return;
        }
        for l in labels.iter_mut() {
            if *l == b {
                *l = a;
            }
        }
    }
}

fn components_naive(labels: &Array2<u32>) -> Array2<u32> {
    let (rows, cols) = labels.dim();
    let mut out = Array2::<u32>::zeros((rows, cols));
    let mut next = 0u32;
    for r in 0..rows {
        for c in 0..cols {
            if labels[(r, c)] == 0 || out[(r, c)] != 0 {
                continue;
            }
            next += 1;
            let id = labels[(r, c)];
            let mut stack = vec![(r, c)];
            out[(r, c)] = next;
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

fn absorb_small_naive(surface: &Array2<f64>, labels: &mut Array2<u32>, min_px: usize) {
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
        let victim = (1..=max_id)
            .filter(|&i| area[i] > 0 && area[i] < min_px)
            .min_by_key(|&i| (area[i], i));
        let Some(victim) = victim else { return };
        let victim = victim as u32;
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
